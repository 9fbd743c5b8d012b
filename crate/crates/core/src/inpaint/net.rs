use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mesh::Mask;
use crate::nn::{load_weights, ops, save_weights, Activation, NetworkWeights, Parameterized, Real, Tensor};
use crate::texture::MaskPair;
use crate::{Error, Result, TextureAtlas};

use super::pconv::{PartialConvLayer, PconvOutput};

/// An RGB image in `[0, 1]` with its missing-texture mask (`known`) and
/// background mask (`foreground`).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedImage {
    /// `[3, H, W]`
    pub image: Tensor<f32>,
    pub known: Mask,
    pub foreground: Mask,
}

impl MaskedImage {
    pub fn new(image: Tensor<f32>, known: Mask, foreground: Mask) -> Result<Self> {
        if image.ndim() != 3 {
            return Err(Error::invalid(format!("image must be [C, H, W], got {:?}", image.shape())));
        }
        let hw = [image.dim(1), image.dim(2)];
        for (m, what) in [(&known, "missing-texture mask"), (&foreground, "background mask")] {
            if [m.height() as usize, m.width() as usize] != hw {
                return Err(Error::ShapeMismatch {
                    left: image.shape().to_vec(),
                    right: vec![m.height() as usize, m.width() as usize],
                    context: if what == "background mask" { "image vs background mask" } else { "image vs missing-texture mask" },
                });
            }
        }
        if !image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        Ok(Self { image, known, foreground })
    }

    pub fn from_atlas(atlas: &TextureAtlas, masks: &MaskPair) -> Result<Self> {
        Self::new(atlas_to_tensor(atlas), masks.known.clone(), masks.foreground.clone())
    }

    pub fn channels(&self) -> usize {
        self.image.dim(0)
    }

    pub fn height(&self) -> usize {
        self.image.dim(1)
    }

    pub fn width(&self) -> usize {
        self.image.dim(2)
    }

    /// Foreground texels still to be filled.
    pub fn hole_count(&self) -> usize {
        self.known
            .as_slice()
            .iter()
            .zip(self.foreground.as_slice())
            .filter(|(&k, &f)| f && !k)
            .count()
    }

    pub(crate) fn mask_tensor<T: Real>(&self) -> Tensor<T> {
        let plane: Vec<T> = self.known.as_slice().iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Tensor::new(&[self.channels(), self.height(), self.width()], plane.repeat(self.channels())).expect("mask shape")
    }

    pub(crate) fn fg_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self.foreground.as_slice().iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Tensor::new(&[self.height(), self.width()], data).expect("mask shape")
    }
}

/// `[3, H, W]` in `[0, 1]`.
pub fn atlas_to_tensor(atlas: &TextureAtlas) -> Tensor<f32> {
    let (w, h) = (atlas.width() as usize, atlas.height() as usize);
    let mut data = vec![0.0f32; 3 * w * h];
    for row in 0..h {
        for col in 0..w {
            let c = atlas.get(row as u32, col as u32);
            for k in 0..3 {
                data[(k * h + row) * w + col] = c[k] as f32 / 255.0;
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("atlas shape")
}

/// Quantizes a `[3, H, W]` tensor, clamping to `[0, 1]`.
pub fn tensor_to_atlas<T: Real>(t: &Tensor<T>) -> Result<TextureAtlas> {
    if t.ndim() != 3 || t.dim(0) != 3 {
        return Err(Error::invalid(format!("expected a [3, H, W] image, got {:?}", t.shape())));
    }
    let (h, w) = (t.dim(1), t.dim(2));
    let mut atlas = TextureAtlas::black(w as u32, h as u32)?;
    for row in 0..h {
        for col in 0..w {
            let mut c = [0u8; 3];
            for (k, v) in c.iter_mut().enumerate() {
                *v = (t.data()[(k * h + row) * w + col].as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            atlas.set(row as u32, col as u32, c);
        }
    }
    Ok(atlas)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InpaintArch {
    /// Output channels of each encoder stage; the decoder mirrors them.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub in_channels: usize,
    /// Exclude the background from every window; when off, every texel
    /// counts as foreground inside the network.
    pub use_background_mask: bool,
}

impl InpaintArch {
    pub fn desk() -> Self {
        Self {
            channels: vec![16, 32, 64],
            kernel: 3,
            in_channels: 3,
            use_background_mask: true,
        }
    }

    pub fn full() -> Self {
        Self {
            channels: vec![64, 128, 256, 512, 512, 512, 512],
            ..Self::desk()
        }
    }

    pub fn stages(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) || self.in_channels == 0 {
            return Err(Error::invalid("inpainting network needs at least one stage and non-zero channels"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Level<T: Real> {
    mask: Tensor<T>,
    fg: Tensor<T>,
}

/// UNet of partial convolutions: stride-2 encoder stages, then per stage a
/// nearest ×2 upsampling, skip concatenation (features and masks) and a
/// stride-1 partial convolution. The last layer outputs the image channels
/// without activation.
#[derive(Clone, Debug)]
pub struct InpaintNet<T: Real = f32> {
    pub arch: InpaintArch,
    pub encoder: Vec<PartialConvLayer<T>>,
    /// `decoder[i]` produces level `i`.
    pub decoder: Vec<PartialConvLayer<T>>,
    levels: Option<Vec<Level<T>>>,
}

impl<T: Real> InpaintNet<T> {
    pub fn new(arch: InpaintArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = &arch.channels;
        let s = ch.len();
        let k = arch.kernel;
        let level_ch = |i: usize| if i == 0 { arch.in_channels } else { ch[i - 1] };
        let encoder = (0..s)
            .map(|i| PartialConvLayer::new(level_ch(i), ch[i], k, 2, Activation::Relu, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut decoder = Vec::with_capacity(s);
        for i in 0..s {
            let (out, act) = if i == 0 { (arch.in_channels, Activation::Identity) } else { (ch[i - 1], Activation::Relu) };
            decoder.push(PartialConvLayer::new(ch[i] + level_ch(i), out, k, 1, act, &mut rng)?);
        }
        Ok(Self { arch, encoder, decoder, levels: None })
    }

    pub fn stages(&self) -> usize {
        self.encoder.len()
    }

    pub fn cast<U: Real>(&self) -> InpaintNet<U> {
        InpaintNet {
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(|l| l.cast()).collect(),
            decoder: self.decoder.iter().map(|l| l.cast()).collect(),
            levels: None,
        }
    }

    /// Fails unless height and width are divisible by `2^stages`.
    pub fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let q = 1usize << self.stages();
        if h == 0 || w == 0 || h % q != 0 || w % q != 0 {
            return Err(Error::invalid(format!(
                "image size {h}x{w} must be a positive multiple of {q} for {} stages",
                self.stages()
            )));
        }
        Ok(())
    }

    /// Background mask as seen by the layers.
    pub(crate) fn effective_fg(&self, x: &MaskedImage) -> Tensor<T> {
        if self.arch.use_background_mask {
            x.fg_tensor()
        } else {
            Tensor::filled(&[x.height(), x.width()], T::one())
        }
    }

    fn check_input(&self, x: &MaskedImage) -> Result<()> {
        if x.channels() != self.arch.in_channels {
            return Err(Error::ShapeMismatch {
                left: x.image.shape().to_vec(),
                right: vec![self.arch.in_channels],
                context: "image channels vs network input",
            });
        }
        self.check_size(x.height(), x.width())
    }

    fn pass(&mut self, x: &MaskedImage, record: bool) -> Result<(Tensor<T>, Vec<Level<T>>)> {
        self.check_input(x)?;
        let s = self.stages();
        let mut feats = vec![x.image.cast::<T>()];
        let mut levels = vec![Level {
            mask: x.mask_tensor(),
            fg: self.effective_fg(x),
        }];
        for i in 0..s {
            let l = &levels[i];
            let out = if record {
                self.encoder[i].forward(&feats[i], &l.mask, &l.fg)?
            } else {
                self.encoder[i].infer(&feats[i], &l.mask, &l.fg)?
            };
            let PconvOutput { features, mask, background } = out;
            feats.push(features);
            levels.push(Level { mask, fg: background });
        }
        let mut d = feats[s].clone();
        let mut dm = levels[s].mask.clone();
        for i in (0..s).rev() {
            let cat = ops::concat_channels(&ops::upsample2(&d)?, &feats[i])?;
            let cm = ops::concat_channels(&ops::upsample2(&dm)?, &levels[i].mask)?;
            let out = if record {
                self.decoder[i].forward(&cat, &cm, &levels[i].fg)?
            } else {
                self.decoder[i].infer(&cat, &cm, &levels[i].fg)?
            };
            d = out.features;
            dm = out.mask;
        }
        Ok((d, levels))
    }

    /// Raw network prediction `[3, H, W]`, not clamped.
    pub fn predict(&self, x: &MaskedImage) -> Result<Tensor<T>> {
        let mut me = self.clone();
        Ok(me.pass(x, false)?.0)
    }

    /// Per-level masks of the encoder after a forward pass (level 0 is the
    /// input). For inspecting how holes close.
    pub fn encoder_masks(&self, x: &MaskedImage) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
        let mut me = self.clone();
        let (_, levels) = me.pass(x, false)?;
        Ok(levels.into_iter().map(|l| (l.mask, l.fg)).collect())
    }

    pub fn forward(&mut self, x: &MaskedImage) -> Result<Tensor<T>> {
        let (y, levels) = self.pass(x, true)?;
        self.levels = Some(levels);
        Ok(y)
    }

    /// Accumulates parameter gradients for the upstream gradient of the
    /// prediction and returns the gradient of the input image.
    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>> {
        self.levels.take().ok_or(Error::NoForwardRecord("inpainting network"))?;
        let s = self.stages();
        let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; s];
        let mut g = gy.clone();
        for i in 0..s {
            let up_ch = self.arch.channels[i];
            let gcat = self.decoder[i].backward(&g, true)?;
            let (gu, gskip) = ops::split_channels(&gcat, up_ch)?;
            skip_grads[i] = Some(gskip);
            g = ops::upsample2_backward(&gu)?;
        }
        for i in (0..s).rev() {
            g = self.encoder[i].backward(&g, true)?;
            g.add_assign(skip_grads[i].as_ref().expect("filled above"))?;
        }
        Ok(g)
    }

    /// Copy of the encoder used as the frozen style feature extractor.
    pub fn style_extractor(&self) -> StyleExtractor<T> {
        StyleExtractor {
            stages: self.encoder.clone(),
        }
    }

    fn descriptor(&self) -> Value {
        json!({ "model": "inpaint", "architecture": self.arch })
    }

    pub fn to_weights(&self) -> NetworkWeights {
        let tensors = self.params().into_iter().map(|(n, t)| (n, t.cast::<f32>())).collect();
        NetworkWeights::new(self.descriptor(), tensors)
    }

    pub fn from_weights(w: &NetworkWeights, expected: Option<&InpaintArch>) -> Result<Self> {
        if w.descriptor.get("model") != Some(&json!("inpaint")) {
            return Err(Error::ModelMismatch("weight file does not hold an inpainting model".into()));
        }
        let arch: InpaintArch = serde_json::from_value(w.descriptor["architecture"].clone())
            .map_err(|e| Error::ModelMismatch(format!("architecture: {e}")))?;
        if let Some(e) = expected {
            if e != &arch {
                return Err(Error::ModelMismatch(format!(
                    "stored architecture {} differs from configured {}",
                    serde_json::to_string(&arch)?,
                    serde_json::to_string(e)?
                )));
            }
        }
        let mut net = Self::new(arch, 0)?;
        net.load_params(w)?;
        Ok(net)
    }

    pub(crate) fn load_params(&mut self, w: &NetworkWeights) -> Result<()> {
        for (name, p, _) in self.params_mut() {
            let t = w.get(&name)?;
            if t.shape() != p.shape() {
                return Err(Error::ModelMismatch(format!("{name}: stored {:?}, expected {:?}", t.shape(), p.shape())));
            }
            *p = t.cast();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.to_weights())
    }

    pub fn load(path: &Path, expected: Option<&InpaintArch>) -> Result<Self> {
        Self::from_weights(&load_weights(path, None)?, expected)
    }
}

impl<T: Real> Parameterized<T> for InpaintNet<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, l) in layers.iter().enumerate() {
                out.extend(l.params().into_iter().map(|(n, t)| (format!("{prefix}.{i}.{n}"), t)));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, layers) in [("encoder", &mut self.encoder), ("decoder", &mut self.decoder)] {
            for (i, l) in layers.iter_mut().enumerate() {
                out.extend(l.params_mut().into_iter().map(|(n, t, g)| (format!("{prefix}.{i}.{n}"), t, g)));
            }
        }
        out
    }
}

/// Encoder stages run as plain convolutions (every texel valid), for
/// Gram-matrix features of images whose background is zeroed.
#[derive(Clone, Debug)]
pub struct StyleExtractor<T: Real> {
    stages: Vec<PartialConvLayer<T>>,
}

impl<T: Real> StyleExtractor<T> {

    pub fn stages(&self) -> usize {
        self.stages.len()
    }

    fn run(&mut self, img: &Tensor<T>, record: bool) -> Result<Vec<Tensor<T>>> {
        let mut h = img.clone();
        let mut fg = Tensor::filled(&img.shape()[1..], T::one());
        let mut out = Vec::with_capacity(self.stages.len());
        for l in &mut self.stages {
            let m = Tensor::filled(h.shape(), T::one());
            let o = if record { l.forward(&h, &m, &fg)? } else { l.infer(&h, &m, &fg)? };
            h = o.features;
            fg = o.background;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn features(&self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.clone().run(img, false)
    }

    pub fn forward(&mut self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.run(img, true)
    }

    /// Gradient of the input image given gradients of every stage output.
    pub fn backward(&mut self, grads: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut g: Option<Tensor<T>> = None;
        for (i, l) in self.stages.iter_mut().enumerate().rev() {
            let mut gi = grads[i].clone();
            if let Some(gn) = &g {
                gi.add_assign(gn)?;
            }
            g = Some(l.backward(&gi, false)?);
        }
        g.ok_or(Error::NoForwardRecord("style extractor"))
    }
}

/// Final assembly: known foreground copied from the input, holes taken from
/// the prediction clamped to `[0, 1]`, background black.
pub fn composite<T: Real>(pred: &Tensor<T>, x: &MaskedImage) -> Result<Tensor<f32>> {
    pred.expect_shape(x.image.shape(), "prediction vs input")?;
    let plane = x.height() * x.width();
    let data = x
        .image
        .data()
        .iter()
        .zip(pred.data())
        .enumerate()
        .map(|(q, (&v, &p))| {
            let t = q % plane;
            match (x.foreground.as_slice()[t], x.known.as_slice()[t]) {
                (false, _) => 0.0,
                (true, true) => v,
                (true, false) => p.as_f64().clamp(0.0, 1.0) as f32,
            }
        })
        .collect();
    Tensor::new(x.image.shape(), data)
}

/// Inpaints the holes of `x` and returns the composited atlas.
pub fn unet_inpaint<T: Real>(net: &InpaintNet<T>, x: &MaskedImage) -> Result<TextureAtlas> {
    if x.hole_count() == 0 {
        net.check_input(x)?;
        return tensor_to_atlas(&composite(&x.image, x)?);
    }
    let pred = net.predict(x)?;
    if !pred.all_finite() {
        return Err(Error::Numerical("inpainting prediction is not finite".into()));
    }
    tensor_to_atlas(&composite(&pred, x)?)
}

/// Largest channel value of a texel that still counts as black.
pub const NEAR_BLACK: u8 = 32;

/// Foreground holes of `masks` whose channels in `atlas` are all `<= threshold`.
pub fn residual_black(atlas: &TextureAtlas, masks: &MaskPair, threshold: u8) -> usize {
    let mut n = 0;
    for row in 0..atlas.height() {
        for col in 0..atlas.width() {
            if masks.foreground.get(row, col) && !masks.known.get(row, col) && atlas.get(row, col).iter().all(|&c| c <= threshold) {
                n += 1;
            }
        }
    }
    n
}
