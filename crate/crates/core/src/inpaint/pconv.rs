use rand::Rng;

use crate::mesh::Mask;
use crate::nn::{ops, Activation, Parameterized, Real, Tensor};
use crate::{Error, Result};

/// Center-tap propagation of the background mask through a 3×3 layer of the
/// given stride: identity at stride 1, even-grid subsampling at stride 2.
pub fn propagate_background_mask(mb: &Mask, stride: usize) -> Result<Mask> {
    check_stride(stride)?;
    let (w, h) = (mb.width(), mb.height());
    let (wo, ho) = (w.div_ceil(stride as u32), h.div_ceil(stride as u32));
    let mut data = Vec::with_capacity((wo * ho) as usize);
    for i in 0..ho {
        for j in 0..wo {
            data.push(mb.get(i * stride as u32, j * stride as u32));
        }
    }
    Mask::from_vec(wo, ho, data)
}

fn check_stride(stride: usize) -> Result<()> {
    if stride != 1 && stride != 2 {
        return Err(Error::invalid(format!("stride must be 1 or 2, got {stride}")));
    }
    Ok(())
}

/// Tensor form of [`propagate_background_mask`] for `[H, W]` masks.
pub(crate) fn propagate_fg<T: Real>(mb: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    check_stride(stride)?;
    let (h, w) = (mb.dim(0), mb.dim(1));
    let (ho, wo) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut data = Vec::with_capacity(ho * wo);
    for i in 0..ho {
        for j in 0..wo {
            data.push(mb.data()[i * stride * w + j * stride]);
        }
    }
    Tensor::new(&[ho, wo], data)
}

fn expect_binary<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.data().iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be binary")))
    }
}

/// Output of one partial convolution.
#[derive(Clone, Debug)]
pub struct PconvOutput<T: Real> {
    pub features: Tensor<T>,
    /// Updated per-channel mask `[C_out, H', W']`.
    pub mask: Tensor<T>,
    /// Propagated background mask `[H', W']`.
    pub background: Tensor<T>,
}

#[derive(Clone, Debug)]
struct PconvCache<T: Real> {
    xe: Tensor<T>,
    e: Tensor<T>,
    ratio: Vec<f64>,
    pre: Tensor<T>,
}

/// Partial convolution with a background mask: each output is the
/// convolution of the valid window entries (`M ⊙ M_b`), rescaled by the number
/// of in-image window entries over the number of valid ones, plus bias. Windows
/// without valid entries output zero and stay masked.
#[derive(Clone, Debug)]
pub struct PartialConvLayer<T: Real = f32> {
    /// `[C_out, C_in, k, k]`
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    pub stride: usize,
    pub act: Activation,
    gw: Tensor<T>,
    gb: Tensor<T>,
    cache: Option<PconvCache<T>>,
}

impl<T: Real> PartialConvLayer<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, k: usize, stride: usize, act: Activation, rng: &mut R) -> Result<Self> {
        let gain = if act == Activation::Relu { 2.0 } else { 1.0 };
        let w = Tensor::randn(&[cout, cin, k, k], (gain / (cin * k * k) as f64).sqrt(), rng);
        Self::from_parts(w, Tensor::zeros(&[cout]), stride, act)
    }

    pub fn from_parts(w: Tensor<T>, b: Tensor<T>, stride: usize, act: Activation) -> Result<Self> {
        if w.ndim() != 4 || w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0 {
            return Err(Error::invalid(format!("partial conv kernel must be [C_out, C_in, k, k] with odd k, got {:?}", w.shape())));
        }
        b.expect_shape(&[w.dim(0)], "partial conv bias")?;
        check_stride(stride)?;
        Ok(Self {
            gw: Tensor::zeros(w.shape()),
            gb: Tensor::zeros(b.shape()),
            w,
            b,
            stride,
            act,
            cache: None,
        })
    }

    pub fn cin(&self) -> usize {
        self.w.dim(1)
    }

    pub fn cout(&self) -> usize {
        self.w.dim(0)
    }

    pub fn kernel(&self) -> usize {
        self.w.dim(2)
    }

    pub fn padding(&self) -> usize {
        self.kernel() / 2
    }

    pub fn grads(&self) -> (&Tensor<T>, &Tensor<T>) {
        (&self.gw, &self.gb)
    }

    pub fn cast<U: Real>(&self) -> PartialConvLayer<U> {
        PartialConvLayer::from_parts(self.w.cast(), self.b.cast(), self.stride, self.act).expect("consistent shapes")
    }

    fn run(&self, x: &Tensor<T>, m: &Tensor<T>, mb: &Tensor<T>) -> Result<(PconvOutput<T>, PconvCache<T>)> {
        if x.ndim() != 3 {
            return Err(Error::invalid(format!("partial conv input must be [C, H, W], got {:?}", x.shape())));
        }
        m.expect_shape(x.shape(), "partial conv mask vs input")?;
        mb.expect_shape(&x.shape()[1..], "partial conv background mask vs input")?;
        expect_binary(m, "missing-texture mask")?;
        expect_binary(mb, "background mask")?;
        let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
        let (k, s, p) = (self.kernel(), self.stride, self.padding());
        let plane = h * w;

        let mut e = m.clone();
        for chunk in e.data_mut().chunks_exact_mut(plane) {
            for (v, &f) in chunk.iter_mut().zip(mb.data()) {
                *v = *v * f;
            }
        }
        let mut xe = x.clone();
        for (v, &f) in xe.data_mut().iter_mut().zip(e.data()) {
            *v = *v * f;
        }

        let (acc, [o, ho, wo]) = ops::conv2d_accumulate(&xe, &self.w, s, p)?;
        let ones = Tensor::<T>::filled(&[1, c, k, k], T::one());
        let (valid, _) = ops::conv2d_accumulate(&e, &ones, s, p)?;
        // in-image window entries per output row / column
        let span = |n_in: usize, i: usize| (0..k).filter(|&kk| (i * s + kk).checked_sub(p).is_some_and(|y| y < n_in)).count();
        let rows: Vec<usize> = (0..ho).map(|i| span(h, i)).collect();
        let cols: Vec<usize> = (0..wo).map(|j| span(w, j)).collect();
        let ratio: Vec<f64> = (0..ho * wo)
            .map(|q| {
                let total = (c * rows[q / wo] * cols[q % wo]) as f64;
                if valid[q] > 0.0 {
                    total / valid[q]
                } else {
                    0.0
                }
            })
            .collect();

        let oplane = ho * wo;
        let bias = self.b.data();
        let pre: Vec<T> = acc
            .iter()
            .enumerate()
            .map(|(q, &a)| {
                let r = ratio[q % oplane];
                if r > 0.0 {
                    T::lift(a * r + bias[q / oplane].as_f64())
                } else {
                    T::zero()
                }
            })
            .collect();
        let pre = Tensor::new(&[o, ho, wo], pre)?.checked("partial conv")?;
        let features = match self.act {
            Activation::Relu => ops::relu(&pre),
            Activation::Identity => pre.clone(),
        };
        let mask_plane: Vec<T> = ratio.iter().map(|&r| if r > 0.0 { T::one() } else { T::zero() }).collect();
        let mask = Tensor::new(&[o, ho, wo], mask_plane.repeat(o))?;
        let out = PconvOutput {
            features,
            mask,
            background: propagate_fg(mb, s)?,
        };
        Ok((out, PconvCache { xe, e, ratio, pre }))
    }

    /// Forward pass without recording.
    pub fn infer(&self, x: &Tensor<T>, m: &Tensor<T>, mb: &Tensor<T>) -> Result<PconvOutput<T>> {
        Ok(self.run(x, m, mb)?.0)
    }

    /// Forward pass that records what [`PartialConvLayer::backward`] needs.
    pub fn forward(&mut self, x: &Tensor<T>, m: &Tensor<T>, mb: &Tensor<T>) -> Result<PconvOutput<T>> {
        let (out, cache) = self.run(x, m, mb)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Input gradient; parameter gradients are accumulated when `params`.
    /// Masks are treated as constants.
    pub fn backward(&mut self, gy: &Tensor<T>, params: bool) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::NoForwardRecord("partial conv"))?;
        gy.expect_shape(cache.pre.shape(), "partial conv upstream gradient")?;
        let gpre = match self.act {
            Activation::Relu => ops::relu_backward(&cache.pre, gy)?,
            Activation::Identity => gy.clone(),
        };
        let oplane = cache.ratio.len();
        let gacc: Vec<T> = gpre
            .data()
            .iter()
            .enumerate()
            .map(|(q, &g)| T::lift(g.as_f64() * cache.ratio[q % oplane]))
            .collect();
        let gacc = Tensor::new(gpre.shape(), gacc)?;
        let (gxe, gw, _) = ops::conv2d_backward(&cache.xe, &self.w, &gacc, self.stride, self.padding())?;
        if params {
            self.gw.add_assign(&gw)?;
            let gb: Vec<T> = gpre
                .data()
                .chunks_exact(oplane.max(1))
                .map(|ch| {
                    let mut acc = 0.0;
                    for (g, &r) in ch.iter().zip(&cache.ratio) {
                        if r > 0.0 {
                            acc += g.as_f64();
                        }
                    }
                    T::lift(acc)
                })
                .collect();
            self.gb.add_assign(&Tensor::new(&[self.cout()], gb)?)?;
        }
        let mut gx = gxe;
        for (v, &e) in gx.data_mut().iter_mut().zip(cache.e.data()) {
            *v = *v * e;
        }
        Ok(gx)
    }
}

impl<T: Real> Parameterized<T> for PartialConvLayer<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        vec![
            ("w".into(), &mut self.w, &mut self.gw),
            ("b".into(), &mut self.b, &mut self.gb),
        ]
    }
}

/// Free-function form: `(features, M_updated, M_b_out)`.
pub fn partial_conv_forward<T: Real>(
    x: &Tensor<T>,
    m: &Tensor<T>,
    mb: &Tensor<T>,
    layer: &PartialConvLayer<T>,
) -> Result<PconvOutput<T>> {
    layer.infer(x, m, mb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case_center_masked() {
        let layer = PartialConvLayer::<f64>::from_parts(
            Tensor::filled(&[1, 1, 3, 3], 1.0),
            Tensor::zeros(&[1]),
            1,
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor::filled(&[1, 3, 3], 5.0);
        let mut m = Tensor::filled(&[1, 3, 3], 1.0);
        m.data_mut()[4] = 0.0;
        let mb = Tensor::filled(&[3, 3], 1.0);
        let out = partial_conv_forward(&x, &m, &mb, &layer).unwrap();
        assert_eq!(out.features.data()[4], 45.0);
        assert_eq!(out.mask.data()[4], 1.0);
    }

    #[test]
    fn empty_window_is_zero_and_masked() {
        let layer = PartialConvLayer::<f64>::from_parts(
            Tensor::filled(&[1, 1, 3, 3], 1.0),
            Tensor::filled(&[1], 0.7),
            1,
            Activation::Identity,
        )
        .unwrap();
        let x = Tensor::filled(&[1, 5, 5], 2.0);
        let mut m = Tensor::filled(&[1, 5, 5], 1.0);
        for i in 0..3 {
            for j in 0..3 {
                m.data_mut()[i * 5 + j] = 0.0;
            }
        }
        let out = layer.infer(&x, &m, &Tensor::filled(&[5, 5], 1.0)).unwrap();
        // windows at (0, 0) and (0, 1) see only masked entries; (0, 2) reaches column 3
        for q in [0, 1, 5, 6] {
            assert_eq!(out.features.data()[q], 0.0);
            assert_eq!(out.mask.data()[q], 0.0);
        }
        assert_eq!(out.mask.data()[2], 1.0);
        // (0, 2) sees two valid entries of six in-image ones: 2·2·(6/2) + 0.7
        assert!((out.features.data()[2] - 12.7).abs() < 1e-12);
    }

    #[test]
    fn non_binary_mask_rejected() {
        let layer = PartialConvLayer::<f64>::from_parts(Tensor::zeros(&[1, 1, 3, 3]), Tensor::zeros(&[1]), 1, Activation::Identity).unwrap();
        let x = Tensor::zeros(&[1, 3, 3]);
        let m = Tensor::filled(&[1, 3, 3], 0.5);
        assert!(layer.infer(&x, &m, &Tensor::filled(&[3, 3], 1.0)).is_err());
        assert!(layer.infer(&x, &Tensor::filled(&[1, 3, 3], 1.0), &Tensor::filled(&[3, 3], 2.0)).is_err());
    }

    #[test]
    fn background_propagation() {
        let data: Vec<bool> = (0..16).map(|q| (q / 4 + q % 4) % 2 == 0).collect();
        let mb = Mask::from_vec(4, 4, data).unwrap();
        assert_eq!(propagate_background_mask(&mb, 1).unwrap(), mb);
        let down = propagate_background_mask(&mb, 2).unwrap();
        assert_eq!(down.as_slice(), &[true; 4]);
        assert!(propagate_background_mask(&mb, 3).is_err());
    }

    #[test]
    fn backward_needs_forward() {
        let mut layer = PartialConvLayer::<f64>::from_parts(Tensor::zeros(&[1, 1, 3, 3]), Tensor::zeros(&[1]), 1, Activation::Identity).unwrap();
        assert!(matches!(layer.backward(&Tensor::zeros(&[1, 3, 3]), true), Err(Error::NoForwardRecord(_))));
    }
}
