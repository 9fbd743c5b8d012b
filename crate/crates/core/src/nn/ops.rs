//! Forward and backward kernels. Each output slot is produced by one closure
//! with a fixed `f64` summation order, so parallel runs are bitwise
//! reproducible.

use crate::{par, Error, Result};

use super::{Real, Tensor};

fn expect_ndim<T: Real>(t: &Tensor<T>, n: usize, context: &'static str) -> Result<()> {
    if t.ndim() != n {
        return Err(Error::ShapeMismatch {
            left: t.shape().to_vec(),
            right: vec![n],
            context,
        });
    }
    Ok(())
}

fn mismatch(left: &[usize], right: &[usize], context: &'static str) -> Error {
    Error::ShapeMismatch {
        left: left.to_vec(),
        right: right.to_vec(),
        context,
    }
}

/// `x W + b` for `x: [n, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_ndim(x, 2, "dense input must be [n, d_in]")?;
    expect_ndim(w, 2, "dense weight must be [d_in, d_out]")?;
    let (n, din) = (x.dim(0), x.dim(1));
    let dout = w.dim(1);
    if w.dim(0) != din {
        return Err(mismatch(x.shape(), w.shape(), "dense input vs weight"));
    }
    b.expect_shape(&[dout], "dense bias")?;
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![T::zero(); n * dout];
    par::for_each_chunk_mut(&mut out, dout.max(1), |r, row| {
        let mut acc: Vec<f64> = bd.iter().map(|v| v.as_f64()).collect();
        let xr = &xd[r * din..(r + 1) * din];
        for (k, &xk) in xr.iter().enumerate() {
            let xk = xk.as_f64();
            let wr = &wd[k * dout..(k + 1) * dout];
            for (a, &wv) in acc.iter_mut().zip(wr) {
                *a += xk * wv.as_f64();
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = T::lift(a);
        }
    });
    Tensor::new(&[n, dout], out)?.checked("dense")
}

/// Gradients of [`dense_forward`]: `(d x, d W, d b)`.
pub fn dense_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, din) = (x.dim(0), x.dim(1));
    let dout = w.dim(1);
    gy.expect_shape(&[n, dout], "dense upstream gradient")?;
    let (xd, wd, gd) = (x.data(), w.data(), gy.data());

    let mut gx = vec![T::zero(); n * din];
    par::for_each_chunk_mut(&mut gx, din.max(1), |r, row| {
        let g = &gd[r * dout..(r + 1) * dout];
        for (k, o) in row.iter_mut().enumerate() {
            let wr = &wd[k * dout..(k + 1) * dout];
            let mut acc = 0.0;
            for (gv, wv) in g.iter().zip(wr) {
                acc += gv.as_f64() * wv.as_f64();
            }
            *o = T::lift(acc);
        }
    });

    let mut gw = vec![T::zero(); din * dout];
    par::for_each_chunk_mut(&mut gw, dout.max(1), |k, row| {
        let mut acc = vec![0.0f64; dout];
        for r in 0..n {
            let xk = xd[r * din + k].as_f64();
            if xk == 0.0 {
                continue;
            }
            for (a, gv) in acc.iter_mut().zip(&gd[r * dout..(r + 1) * dout]) {
                *a += xk * gv.as_f64();
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = T::lift(a);
        }
    });

    let mut gb = vec![0.0f64; dout];
    for r in 0..n {
        for (a, gv) in gb.iter_mut().zip(&gd[r * dout..(r + 1) * dout]) {
            *a += gv.as_f64();
        }
    }
    Ok((
        Tensor::new(&[n, din], gx)?,
        Tensor::new(&[din, dout], gw)?,
        Tensor::new(&[dout], gb.into_iter().map(T::lift).collect())?,
    ))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `gy` where the pre-activation `x` was positive.
pub fn relu_backward<T: Real>(x: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>> {
    gy.expect_shape(x.shape(), "relu upstream gradient")?;
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Column-wise maximum over the rows of `[n, d]`, with the winning row per
/// column (lowest row on ties).
pub fn max_pool_points<T: Real>(f: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    expect_ndim(f, 2, "max-pool input must be [n, d]")?;
    let (n, d) = (f.dim(0), f.dim(1));
    if n == 0 {
        return Err(Error::invalid("max-pool over zero points"));
    }
    let fd = f.data();
    let mut best = fd[..d].to_vec();
    let mut arg = vec![0usize; d];
    for r in 1..n {
        for c in 0..d {
            let v = fd[r * d + c];
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    Ok((Tensor::new(&[d], best)?, arg))
}

/// Routes `gy` to the argmax rows.
pub fn max_pool_backward<T: Real>(arg: &[usize], n: usize, gy: &Tensor<T>) -> Result<Tensor<T>> {
    let d = arg.len();
    gy.expect_shape(&[d], "max-pool upstream gradient")?;
    let mut g = Tensor::zeros(&[n, d]);
    let gd = g.data_mut();
    for (c, &r) in arg.iter().enumerate() {
        gd[r * d + c] = gy.data()[c];
    }
    Ok(g)
}

/// Output size of a convolution along one axis.
pub fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || size + 2 * pad < k {
        return Err(Error::invalid(format!(
            "convolution does not fit: size {size}, kernel {k}, stride {stride}, padding {pad}"
        )));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new<T: Real>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        expect_ndim(x, 3, "conv input must be [C, H, W]")?;
        expect_ndim(w, 4, "conv weight must be [C_out, C_in, k, k]")?;
        let k = w.dim(2);
        if w.dim(3) != k || k % 2 == 0 {
            return Err(Error::invalid(format!("conv kernel must be square and odd, got {:?}", w.shape())));
        }
        if w.dim(1) != x.dim(0) {
            return Err(mismatch(x.shape(), w.shape(), "conv input channels vs weight"));
        }
        let (h, wd) = (x.dim(1), x.dim(2));
        Ok(Self {
            cin: x.dim(0),
            h,
            w: wd,
            cout: w.dim(0),
            k,
            stride,
            pad,
            ho: conv_out_size(h, k, stride, pad)?,
            wo: conv_out_size(wd, k, stride, pad)?,
        })
    }

    /// Output indices `i` whose input row `i*stride + ki - pad` is in range.
    fn valid(&self, kk: usize, n_out: usize, n_in: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.pad);
        let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
        // largest i with i*s + kk - p <= n_in - 1
        let hi = if n_in + p > kk { ((n_in + p - kk - 1) / s + 1).min(n_out) } else { 0 };
        lo..hi.max(lo)
    }
}

/// Bias-free cross-correlation with `f64` accumulators, shape `[C_out, H', W']`.
pub fn conv2d_accumulate<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Vec<f64>, [usize; 3])> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    let (xd, wd) = (x.data(), w.data());
    let plane = g.ho * g.wo;
    let mut acc = vec![0.0f64; g.cout * plane];
    par::for_each_chunk_mut(&mut acc, plane.max(1), |o, out| {
        for c in 0..g.cin {
            let xc = &xd[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.k {
                let rows = g.valid(ki, g.ho, g.h);
                for kj in 0..g.k {
                    let wv = wd[((o * g.cin + c) * g.k + ki) * g.k + kj].as_f64();
                    if wv == 0.0 {
                        continue;
                    }
                    let cols = g.valid(kj, g.wo, g.w);
                    for i in rows.clone() {
                        let yy = i * g.stride + ki - g.pad;
                        let xrow = &xc[yy * g.w..(yy + 1) * g.w];
                        let orow = &mut out[i * g.wo..(i + 1) * g.wo];
                        for j in cols.clone() {
                            orow[j] += wv * xrow[j * g.stride + kj - g.pad].as_f64();
                        }
                    }
                }
            }
        }
    });
    Ok((acc, [g.cout, g.ho, g.wo]))
}

/// Standard zero-padded cross-correlation plus bias.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    b.expect_shape(&[w.dim(0)], "conv bias")?;
    let (acc, shape) = conv2d_accumulate(x, w, stride, pad)?;
    let plane = shape[1] * shape[2];
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| T::lift(a + b.data()[i / plane].as_f64()))
        .collect();
    Tensor::new(&shape, data)?.checked("conv2d")
}

/// Gradients of [`conv2d_forward`]: `(d x, d W, d b)`.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::new(x, w, stride, pad)?;
    gy.expect_shape(&[g.cout, g.ho, g.wo], "conv upstream gradient")?;
    let (xd, wd, gd) = (x.data(), w.data(), gy.data());
    let plane = g.ho * g.wo;
    let kk = g.k * g.k;

    let mut gw = vec![T::zero(); g.cout * g.cin * kk];
    par::for_each_chunk_mut(&mut gw, (g.cin * kk).max(1), |o, out| {
        let go = &gd[o * plane..(o + 1) * plane];
        for c in 0..g.cin {
            let xc = &xd[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.k {
                let rows = g.valid(ki, g.ho, g.h);
                for kj in 0..g.k {
                    let cols = g.valid(kj, g.wo, g.w);
                    let mut acc = 0.0;
                    for i in rows.clone() {
                        let yy = i * g.stride + ki - g.pad;
                        for j in cols.clone() {
                            acc += go[i * g.wo + j].as_f64() * xc[yy * g.w + j * g.stride + kj - g.pad].as_f64();
                        }
                    }
                    out[(c * g.k + ki) * g.k + kj] = T::lift(acc);
                }
            }
        }
    });

    let mut gx = vec![T::zero(); g.cin * g.h * g.w];
    par::for_each_chunk_mut(&mut gx, (g.h * g.w).max(1), |c, out| {
        let mut acc = vec![0.0f64; g.h * g.w];
        for o in 0..g.cout {
            let go = &gd[o * plane..(o + 1) * plane];
            for ki in 0..g.k {
                let rows = g.valid(ki, g.ho, g.h);
                for kj in 0..g.k {
                    let wv = wd[((o * g.cin + c) * g.k + ki) * g.k + kj].as_f64();
                    if wv == 0.0 {
                        continue;
                    }
                    let cols = g.valid(kj, g.wo, g.w);
                    for i in rows.clone() {
                        let yy = i * g.stride + ki - g.pad;
                        for j in cols.clone() {
                            acc[yy * g.w + j * g.stride + kj - g.pad] += wv * go[i * g.wo + j].as_f64();
                        }
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(acc) {
            *o = T::lift(a);
        }
    });

    let gb = (0..g.cout)
        .map(|o| {
            let mut acc = 0.0;
            for v in &gd[o * plane..(o + 1) * plane] {
                acc += v.as_f64();
            }
            T::lift(acc)
        })
        .collect();
    Ok((
        Tensor::new(&[g.cin, g.h, g.w], gx)?,
        Tensor::new(&[g.cout, g.cin, g.k, g.k], gw)?,
        Tensor::new(&[g.cout], gb)?,
    ))
}

/// Nearest-neighbor ×2 upsampling of `[C, H, W]`.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    expect_ndim(x, 3, "upsample input must be [C, H, W]")?;
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Vec::with_capacity(c * 4 * h * w);
    for ch in 0..c {
        for i in 0..2 * h {
            for j in 0..2 * w {
                out.push(x.data()[(ch * h + i / 2) * w + j / 2]);
            }
        }
    }
    Tensor::new(&[c, 2 * h, 2 * w], out)
}

/// Gradient of [`upsample2`]: sums each 2×2 block.
pub fn upsample2_backward<T: Real>(gy: &Tensor<T>) -> Result<Tensor<T>> {
    expect_ndim(gy, 3, "upsample gradient must be [C, 2H, 2W]")?;
    let (c, h2, w2) = (gy.dim(0), gy.dim(1), gy.dim(2));
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::invalid("upsample gradient must have even size"));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let g = gy.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let at = |di: usize, dj: usize| g[(ch * h2 + 2 * i + di) * w2 + 2 * j + dj].as_f64();
                out.push(T::lift(at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
    }
    Tensor::new(&[c, h, w], out)
}

/// Stacks `[Ca, H, W]` and `[Cb, H, W]` into `[Ca + Cb, H, W]`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    expect_ndim(a, 3, "concat input must be [C, H, W]")?;
    expect_ndim(b, 3, "concat input must be [C, H, W]")?;
    if a.shape()[1..] != b.shape()[1..] {
        return Err(mismatch(a.shape(), b.shape(), "concat spatial size"));
    }
    let mut data = a.data().to_vec();
    data.extend_from_slice(b.data());
    Tensor::new(&[a.dim(0) + b.dim(0), a.dim(1), a.dim(2)], data)
}

/// Inverse of [`concat_channels`]: splits after the first `ca` channels.
pub fn split_channels<T: Real>(x: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    expect_ndim(x, 3, "split input must be [C, H, W]")?;
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    if ca > c {
        return Err(Error::invalid(format!("cannot split {ca} channels off {c}")));
    }
    let (a, b) = x.data().split_at(ca * h * w);
    Ok((Tensor::new(&[ca, h, w], a.to_vec())?, Tensor::new(&[c - ca, h, w], b.to_vec())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn dense_hand_case() {
        let y = dense_forward(&t(&[1, 2], &[4.0, 5.0]), &t(&[2, 1], &[1.0, 2.0]), &t(&[1], &[3.0])).unwrap();
        assert_eq!(y.data(), &[17.0]);
    }

    #[test]
    fn dense_shape_error_names_shapes() {
        let e = dense_forward(&t(&[1, 3], &[0.0; 3]), &t(&[2, 1], &[0.0; 2]), &t(&[1], &[0.0])).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn max_pool_hand_case_and_ties() {
        let (m, arg) = max_pool_points(&t(&[2, 2], &[1.0, 5.0, 3.0, 2.0])).unwrap();
        assert_eq!(m.data(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);
        let (_, arg) = max_pool_points(&t(&[3, 1], &[2.0, 2.0, 2.0])).unwrap();
        assert_eq!(arg, vec![0]);
        assert!(max_pool_points(&Tensor::<f64>::zeros(&[0, 2])).is_err());
    }

    #[test]
    fn conv_ones_kernel_on_constant() {
        let x = Tensor::<f64>::filled(&[1, 5, 5], 2.0);
        let w = Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, &t(&[1], &[0.0]), 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        assert_eq!(y.data()[2 * 5 + 2], 18.0);
        assert_eq!(y.data()[0], 8.0);
        let y2 = conv2d_forward(&x, &w, &t(&[1], &[0.0]), 2, 1).unwrap();
        assert_eq!(y2.shape(), &[1, 3, 3]);
    }

    #[test]
    fn even_kernel_rejected() {
        let x = Tensor::<f64>::zeros(&[1, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        assert!(conv2d_forward(&x, &w, &t(&[1], &[0.0]), 1, 0).is_err());
    }

    #[test]
    fn upsample_and_concat_round_trip() {
        let x = t(&[1, 1, 2], &[1.0, 2.0]);
        let u = upsample2(&x).unwrap();
        assert_eq!(u.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        assert_eq!(upsample2_backward(&u).unwrap().data(), &[4.0, 8.0]);
        let c = concat_channels(&x, &x).unwrap();
        let (a, b) = split_channels(&c, 1).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
    }
}
