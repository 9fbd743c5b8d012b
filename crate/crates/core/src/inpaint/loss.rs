use serde::{Deserialize, Serialize};

use crate::mesh::Mask;
use crate::nn::{Real, Tensor};
use crate::{Error, Result};

use super::net::{MaskedImage, StyleExtractor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub hole: f64,
    pub valid: f64,
    pub style: f64,
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            hole: 6.0,
            valid: 1.0,
            style: 120.0,
            tv: 0.1,
        }
    }
}

/// Unweighted loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub hole: f64,
    pub valid: f64,
    pub style: f64,
    pub tv: f64,
}

#[derive(Clone, Debug)]
pub struct LossOutput<T: Real> {
    pub total: f64,
    pub terms: LossTerms,
    /// Gradient of `total` with respect to the prediction.
    pub grad: Tensor<T>,
}

/// `F Fᵀ / (C·P)` of a `[C, H, W]` feature map, row-major `[C, C]`.
pub fn gram<T: Real>(f: &Tensor<T>) -> Vec<f64> {
    let c = f.dim(0);
    let p = f.len() / c.max(1);
    let d = f.data();
    let norm = (c * p) as f64;
    let mut g = vec![0.0; c * c];
    for a in 0..c {
        for b in a..c {
            let mut acc = 0.0;
            for q in 0..p {
                acc += d[a * p + q].as_f64() * d[b * p + q].as_f64();
            }
            g[a * c + b] = acc / norm;
            g[b * c + a] = acc / norm;
        }
    }
    g
}

/// Holes dilated by one texel (8-neighborhood), restricted to the foreground.
pub fn tv_region(known: &Mask, foreground: &Mask) -> Mask {
    let (w, h) = (known.width() as i64, known.height() as i64);
    let hole = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && foreground.get(r as u32, c as u32) && !known.get(r as u32, c as u32);
    let mut out = Mask::filled(w as u32, h as u32, false);
    for r in 0..h {
        for c in 0..w {
            let near = (-1..=1).any(|dr| (-1..=1).any(|dc| hole(r + dr, c + dc)));
            out.set(r as u32, c as u32, near && foreground.get(r as u32, c as u32));
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weighted inpainting loss of a raw prediction against the ground truth.
///
/// The pixel terms are L1 over holes and over known foreground texels, both
/// divided by the element count. The style term compares Gram matrices of the
/// extractor's stage activations between the composited image and the ground
/// truth. The TV term acts on the composited image inside [`tv_region`].
/// Background texels enter no term.
pub fn loss_inpaint<T: Real>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    x: &MaskedImage,
    style: Option<&StyleExtractor<T>>,
    w: &LossWeights,
) -> Result<LossOutput<T>> {
    pred.expect_shape(x.image.shape(), "prediction vs input")?;
    gt.expect_shape(x.image.shape(), "ground truth vs input")?;
    let (c, h, wd) = (x.channels(), x.height(), x.width());
    let plane = h * wd;
    let n = (c * plane) as f64;
    let fg = x.foreground.as_slice();
    let known = x.known.as_slice();
    let is_hole = |t: usize| fg[t] && !known[t];
    let (p, g) = (pred.data(), gt.data());

    let mut terms = LossTerms::default();
    let mut grad = vec![0.0f64; c * plane];
    let mut comp = vec![0.0f64; c * plane];
    for q in 0..c * plane {
        let t = q % plane;
        if !fg[t] {
            continue;
        }
        let d = p[q].as_f64() - g[q].as_f64();
        if is_hole(t) {
            terms.hole += d.abs() / n;
            grad[q] += w.hole * sign(d) / n;
            comp[q] = p[q].as_f64();
        } else {
            terms.valid += d.abs() / n;
            grad[q] += w.valid * sign(d) / n;
            comp[q] = g[q].as_f64();
        }
    }

    // gradient of the terms that see the composited image
    let mut gcomp = vec![0.0f64; c * plane];

    let region = tv_region(&x.known, &x.foreground);
    let r = region.as_slice();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..wd {
                let a = i * wd + j;
                if !r[a] {
                    continue;
                }
                let mut pair = |b: usize| {
                    let d = comp[ch * plane + a] - comp[ch * plane + b];
                    terms.tv += d.abs() / n;
                    gcomp[ch * plane + a] += w.tv * sign(d) / n;
                    gcomp[ch * plane + b] -= w.tv * sign(d) / n;
                };
                if j + 1 < wd && r[a + 1] {
                    pair(a + 1);
                }
                if i + 1 < h && r[a + wd] {
                    pair(a + wd);
                }
            }
        }
    }

    if let Some(ext) = style {
        if w.style != 0.0 {
            let mut ext = ext.clone();
            let mut gt_masked = gt.clone();
            for (q, v) in gt_masked.data_mut().iter_mut().enumerate() {
                if !fg[q % plane] {
                    *v = T::zero();
                }
            }
            let target = ext.features(&gt_masked)?;
            let comp_t = Tensor::new(pred.shape(), comp.iter().map(|&v| T::lift(v)).collect())?;
            let feats = ext.forward(&comp_t)?;
            let mut grads = Vec::with_capacity(feats.len());
            for (f, ft) in feats.iter().zip(&target) {
                let k = f.dim(0);
                let pp = f.len() / k;
                let (gc, gg) = (gram(f), gram(ft));
                let mut s = vec![0.0; k * k];
                for q in 0..k * k {
                    let d = gc[q] - gg[q];
                    terms.style += d.abs() / (k * k) as f64;
                    s[q] = sign(d);
                }
                // dL/dF = (S + Sᵀ) F / (C² · C·P)
                let scale = w.style / ((k * k) as f64 * (k * pp) as f64);
                let fd = f.data();
                let mut gf = vec![0.0f64; f.len()];
                for a in 0..k {
                    for b in 0..k {
                        let coef = (s[a * k + b] + s[b * k + a]) * scale;
                        if coef == 0.0 {
                            continue;
                        }
                        for q in 0..pp {
                            gf[a * pp + q] += coef * fd[b * pp + q].as_f64();
                        }
                    }
                }
                grads.push(Tensor::from_f64(f.shape(), &gf)?);
            }
            let gimg = ext.backward(&grads)?;
            for (gc, v) in gcomp.iter_mut().zip(gimg.data()) {
                *gc += v.as_f64();
            }
        }
    }

    for q in 0..c * plane {
        if is_hole(q % plane) {
            grad[q] += gcomp[q];
        }
    }
    let total = w.hole * terms.hole + w.valid * terms.valid + w.style * terms.style + w.tv * terms.tv;
    if !total.is_finite() {
        return Err(Error::Numerical(format!("inpainting loss became {total}")));
    }
    Ok(LossOutput {
        total,
        terms,
        grad: Tensor::new(pred.shape(), grad.into_iter().map(T::lift).collect())?,
    })
}
