use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mesh::body::{self, BodyResolution};
use crate::metrics::{sample_surface, PointSet};
use crate::nn::{load_weights, ops, save_weights, Activation, Mlp, NetworkWeights, Parameterized, Real, Tensor};
use crate::{Error, Mesh, Result, Vec3};

/// Which fixed-topology template the decoder deforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TemplateSpec {
    Body { resolution: BodyResolution },
}

impl TemplateSpec {
    pub fn build(&self) -> Result<Mesh> {
        match self {
            TemplateSpec::Body { resolution } => body::template(*resolution),
        }
    }
}

/// Layer sizes of the encoder-decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeArch {
    pub n_z: usize,
    /// Shared point MLP, starting at 3.
    pub encoder: Vec<usize>,
    /// Output sizes of the dense layers after pooling; the last one is `n_z`.
    pub head: Vec<usize>,
    /// Point-wise decoder MLP, from `3 + n_z` to 3.
    pub decoder: Vec<usize>,
    /// Decoder predicts an offset added to the template vertex.
    pub residual: bool,
    pub template: TemplateSpec,
}

impl ShapeArch {
    /// Small default that trains in minutes on one core.
    pub fn desk() -> Self {
        Self::with_sizes(128, &[3, 32, 64, 128], &[128], &[128, 64, 32])
    }

    /// Full-size layout: encoder (3, 64, 128, 1024), two dense 1024 layers,
    /// decoder (3 + 1024, 513, 256, 128, 3).
    pub fn full() -> Self {
        Self::with_sizes(1024, &[3, 64, 128, 1024], &[1024], &[513, 256, 128])
    }

    /// `encoder` includes the leading 3; `head_hidden` and `decoder_hidden`
    /// list only hidden widths.
    pub fn with_sizes(n_z: usize, encoder: &[usize], head_hidden: &[usize], decoder_hidden: &[usize]) -> Self {
        let mut head = head_hidden.to_vec();
        head.push(n_z);
        let mut decoder = vec![3 + n_z];
        decoder.extend_from_slice(decoder_hidden);
        decoder.push(3);
        Self {
            n_z,
            encoder: encoder.to_vec(),
            head,
            decoder,
            residual: true,
            template: TemplateSpec::Body {
                resolution: BodyResolution::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.n_z == 0 {
            return bad("n_z must be positive".into());
        }
        if self.encoder.len() < 2 || self.encoder[0] != 3 {
            return bad(format!("encoder sizes {:?} must start at 3", self.encoder));
        }
        if self.head.last() != Some(&self.n_z) {
            return bad(format!("dense sizes {:?} must end at n_z = {}", self.head, self.n_z));
        }
        if self.decoder.len() < 2 || self.decoder[0] != 3 + self.n_z || self.decoder.last() != Some(&3) {
            return bad(format!("decoder sizes {:?} must run from 3 + n_z to 3", self.decoder));
        }
        if self.encoder.iter().chain(&self.head).chain(&self.decoder).any(|&s| s == 0) {
            return bad("layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Summary recorded at the end of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    /// Largest directed Chamfer from a complete training shape to its
    /// reconstruction.
    pub tau_train: f64,
    pub encoder_points: usize,
    pub eval_samples: usize,
}

/// Point-wise decoder whose first layer is split into a vertex part and a
/// latent part, so the latent contribution is computed once per shape.
#[derive(Clone, Debug)]
pub(crate) struct Decoder<T: Real> {
    pub(crate) mlp: Mlp<T>,
    residual: bool,
    cache: Option<DecoderCache<T>>,
}

#[derive(Clone, Debug)]
struct DecoderCache<T: Real> {
    x: Tensor<T>,
    z: Tensor<T>,
    pre: Tensor<T>,
}

impl<T: Real> Decoder<T> {
    fn split_first(&self) -> (Tensor<T>, Tensor<T>) {
        let w = &self.mlp.layers[0].w;
        let h = w.dim(1);
        let (wx, wz) = w.data().split_at(3 * h);
        (
            Tensor::new(&[3, h], wx.to_vec()).expect("vertex rows"),
            Tensor::new(&[w.dim(0) - 3, h], wz.to_vec()).expect("latent rows"),
        )
    }

    fn first_pre(&self, z: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (wx, wz) = self.split_first();
        let c = ops::dense_forward(z, &wz, &self.mlp.layers[0].b)?;
        let c = c.reshape(&[wx.dim(1)])?;
        ops::dense_forward(x, &wx, &c)
    }

    fn first_act(&self, pre: &Tensor<T>) -> Tensor<T> {
        match self.mlp.layers[0].act {
            Activation::Relu => ops::relu(pre),
            Activation::Identity => pre.clone(),
        }
    }

    fn finish(&self, mut out: Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.residual {
            out.add_assign(x)?;
        }
        Ok(out)
    }

    /// `z: [1, n_z]`, `x: [V, 3]` → positions `[V, 3]`.
    pub(crate) fn infer(&self, z: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.first_act(&self.first_pre(z, x)?);
        for l in &self.mlp.layers[1..] {
            h = l.infer(&h)?;
        }
        self.finish(h, x)
    }

    pub(crate) fn forward(&mut self, z: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pre = self.first_pre(z, x)?;
        let mut h = self.first_act(&pre);
        for l in &mut self.mlp.layers[1..] {
            h = l.forward(&h)?;
        }
        self.cache = Some(DecoderCache {
            x: x.clone(),
            z: z.clone(),
            pre,
        });
        self.finish(h, x)
    }

    /// Gradient with respect to `z`; with `params`, also accumulates
    /// parameter gradients.
    pub(crate) fn backward(&mut self, gy: &Tensor<T>, params: bool) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::NoForwardRecord("decoder"))?;
        let mut g = gy.clone();
        for l in self.mlp.layers[1..].iter_mut().rev() {
            g = if params { l.backward(&g)? } else { l.backward_input(&g)? };
        }
        let gpre = match self.mlp.layers[0].act {
            Activation::Relu => ops::relu_backward(&cache.pre, &g)?,
            Activation::Identity => g,
        };
        let h = gpre.dim(1);
        let mut gsum = vec![0.0f64; h];
        for row in gpre.data().chunks_exact(h) {
            for (a, v) in gsum.iter_mut().zip(row) {
                *a += v.as_f64();
            }
        }
        let (wx, wz) = self.split_first();
        let nz = wz.dim(0);
        let gz: Vec<T> = (0..nz)
            .map(|k| {
                let row = &wz.data()[k * h..(k + 1) * h];
                let mut acc = 0.0;
                for (w, s) in row.iter().zip(&gsum) {
                    acc += w.as_f64() * s;
                }
                T::lift(acc)
            })
            .collect();
        if params {
            let (_, gwx, gb) = ops::dense_backward(&cache.x, &wx, &gpre)?;
            let mut gw = gwx.into_data();
            for k in 0..nz {
                let zk = cache.z.data()[k].as_f64();
                gw.extend(gsum.iter().map(|s| T::lift(zk * s)));
            }
            let gw = Tensor::new(&[3 + nz, h], gw)?;
            let layer = &mut self.mlp.layers[0];
            for (name, _, grad) in layer.params_mut() {
                grad.add_assign(if name == "w" { &gw } else { &gb })?;
            }
        }
        Tensor::new(&[1, nz], gz)
    }
}

/// Encoder-decoder plus its template.
#[derive(Clone, Debug)]
pub struct ShapeModel<T: Real = f32> {
    pub arch: ShapeArch,
    pub(crate) encoder: Mlp<T>,
    pub(crate) head: Mlp<T>,
    pub(crate) decoder: Decoder<T>,
    template: Mesh,
    pub training: Option<TrainingSummary>,
    enc_cache: Option<(usize, Vec<usize>)>,
}

fn vertices_tensor<T: Real>(v: &[Vec3]) -> Tensor<T> {
    let data = v.iter().flat_map(|p| [T::lift(p.x), T::lift(p.y), T::lift(p.z)]).collect();
    Tensor::new(&[v.len(), 3], data).expect("n x 3")
}

fn tensor_vertices<T: Real>(t: &Tensor<T>) -> Vec<Vec3> {
    t.data()
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0].as_f64(), c[1].as_f64(), c[2].as_f64()))
        .collect()
}

impl<T: Real> ShapeModel<T> {
    /// Randomly initialized model.
    pub fn new(arch: ShapeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Mlp::new(&arch.encoder, Activation::Relu, &mut rng)?;
        let mut head_sizes = vec![*arch.encoder.last().unwrap()];
        head_sizes.extend_from_slice(&arch.head);
        let head = Mlp::new(&head_sizes, Activation::Identity, &mut rng)?;
        let mut dec = Mlp::new(&arch.decoder, Activation::Identity, &mut rng)?;
        if arch.residual {
            // start from the undeformed template
            let last = dec.layers.last_mut().unwrap();
            last.w = last.w.map(|v| v * T::lift(0.1));
        }
        Self::assemble(arch, encoder, head, dec)
    }

    fn assemble(arch: ShapeArch, encoder: Mlp<T>, head: Mlp<T>, dec: Mlp<T>) -> Result<Self> {
        let template = arch.template.build()?;
        Ok(Self {
            decoder: Decoder {
                mlp: dec,
                residual: arch.residual,
                cache: None,
            },
            arch,
            encoder,
            head,
            template,
            training: None,
            enc_cache: None,
        })
    }

    pub fn n_z(&self) -> usize {
        self.arch.n_z
    }

    pub fn template(&self) -> &Mesh {
        &self.template
    }

    /// Midpoint subdivision of the template, same chart layout.
    pub fn hires_template(&self) -> Mesh {
        self.template.subdivide()
    }

    pub fn cast<U: Real>(&self) -> ShapeModel<U> {
        ShapeModel {
            arch: self.arch.clone(),
            encoder: self.encoder.cast(),
            head: self.head.cast(),
            decoder: Decoder {
                mlp: self.decoder.mlp.cast(),
                residual: self.decoder.residual,
                cache: None,
            },
            template: self.template.clone(),
            training: self.training.clone(),
            enc_cache: None,
        }
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.n_z() {
            return Err(Error::ShapeMismatch {
                left: vec![z.len()],
                right: vec![self.n_z()],
                context: "latent code length vs n_z",
            });
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("latent code is not finite".into()));
        }
        Ok(())
    }

    /// Latent code of a point set; invariant to point order.
    pub fn encode(&self, points: &PointSet) -> Result<Vec<f64>> {
        let h = self.encoder.infer(&vertices_tensor(points.points()))?;
        let (pooled, _) = ops::max_pool_points(&h)?;
        let z = self.head.infer(&pooled.reshape(&[1, h.dim(1)])?)?;
        Ok(z.to_f64_vec())
    }

    /// Deformed positions of arbitrary template-space vertices.
    pub fn decode_vertices(&self, z: &[f64], vertices: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check_z(z)?;
        let zt = Tensor::from_f64(&[1, z.len()], z)?;
        let out = self.decoder.infer(&zt, &vertices_tensor(vertices))?;
        let v = tensor_vertices(&out);
        if !v.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical("decoder produced non-finite vertices".into()));
        }
        Ok(v)
    }

    /// Template with every vertex moved by the decoder; faces and UVs unchanged.
    pub fn decode(&self, z: &[f64]) -> Result<Mesh> {
        self.decode_on(z, &self.template)
    }

    /// Like [`ShapeModel::decode`] on another mesh in template space (e.g. a subdivided template).
    pub fn decode_on(&self, z: &[f64], template: &Mesh) -> Result<Mesh> {
        template.with_vertices(self.decode_vertices(z, &template.vertices)?)
    }

    /// Recording encode for training; returns `z` as `[1, n_z]`.
    pub fn encode_forward(&mut self, points: &[Vec3]) -> Result<Tensor<T>> {
        let h = self.encoder.forward(&vertices_tensor(points))?;
        let (pooled, arg) = ops::max_pool_points(&h)?;
        self.enc_cache = Some((points.len(), arg));
        self.head.forward(&pooled.reshape(&[1, h.dim(1)])?)
    }

    /// Accumulates parameter gradients from `d z`.
    pub fn encode_backward(&mut self, gz: &Tensor<T>) -> Result<()> {
        let (n, arg) = self.enc_cache.take().ok_or(Error::NoForwardRecord("encoder"))?;
        let gp = self.head.backward(gz)?;
        let gp = gp.reshape(&[arg.len()])?;
        let gh = ops::max_pool_backward(&arg, n, &gp)?;
        self.encoder.backward(&gh)?;
        Ok(())
    }

    /// Recording decode of `vertices`; returns positions `[V, 3]`.
    pub fn decode_forward(&mut self, z: &Tensor<T>, vertices: &[Vec3]) -> Result<Tensor<T>> {
        self.decoder.forward(z, &vertices_tensor(vertices))
    }

    /// Gradient with respect to `z`; with `params`, also accumulates
    /// parameter gradients.
    pub fn decode_backward(&mut self, gy: &Tensor<T>, params: bool) -> Result<Tensor<T>> {
        self.decoder.backward(gy, params)
    }

    fn descriptor(&self) -> Value {
        json!({
            "model": "shape",
            "architecture": self.arch,
            "training": self.training,
        })
    }

    pub fn to_weights(&self) -> NetworkWeights {
        let tensors = self
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.cast::<f32>()))
            .collect();
        NetworkWeights::new(self.descriptor(), tensors)
    }

    /// Rebuilds a model from stored weights. With `expected`, the stored
    /// architecture must match it.
    pub fn from_weights(w: &NetworkWeights, expected: Option<&ShapeArch>) -> Result<Self> {
        if w.descriptor.get("model") != Some(&json!("shape")) {
            return Err(Error::ModelMismatch("weight file does not hold a shape model".into()));
        }
        let arch: ShapeArch = serde_json::from_value(w.descriptor["architecture"].clone())
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
        let training = serde_json::from_value(w.descriptor["training"].clone())
            .map_err(|e| Error::ModelMismatch(format!("training summary: {e}")))?;
        let mut model = Self::new(arch, 0)?;
        model.training = training;
        model.load_params(w)?;
        Ok(model)
    }

    pub(crate) fn load_params(&mut self, w: &NetworkWeights) -> Result<()> {
        for (name, p, _) in self.params_mut() {
            let t = w.get(&name)?;
            if t.shape() != p.shape() {
                return Err(Error::ModelMismatch(format!(
                    "{name}: stored {:?}, expected {:?}",
                    t.shape(),
                    p.shape()
                )));
            }
            *p = t.cast();
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_weights(path, &self.to_weights())
    }

    pub fn load(path: &Path, expected: Option<&ShapeArch>) -> Result<Self> {
        Self::from_weights(&load_weights(path, None)?, expected)
    }
}

impl<T: Real> Parameterized<T> for ShapeModel<T> {
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, m) in [("encoder", &self.encoder), ("head", &self.head), ("decoder", &self.decoder.mlp)] {
            out.extend(m.params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, m) in [
            ("encoder", &mut self.encoder),
            ("head", &mut self.head),
            ("decoder", &mut self.decoder.mlp),
        ] {
            out.extend(
                m.params_mut()
                    .into_iter()
                    .map(|(n, t, g)| (format!("{prefix}.{n}"), t, g)),
            );
        }
        out
    }
}

/// First estimate of the complete shape: encode `n_points` surface samples of
/// the partial mesh and decode the template. Returns the mesh and its code.
pub fn complete_shape<T: Real>(
    model: &ShapeModel<T>,
    partial: &Mesh,
    n_points: usize,
    seed: u64,
) -> Result<(Mesh, Vec<f64>)> {
    let pts = sample_surface(partial, n_points, seed)?;
    let z = model.encode(&pts)?;
    Ok((model.decode(&z)?, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ShapeArch {
        let mut a = ShapeArch::with_sizes(6, &[3, 8, 8], &[8], &[8]);
        a.template = TemplateSpec::Body {
            resolution: BodyResolution {
                torso: (4, 5),
                head: (3, 4),
                limb: (3, 4),
            },
        };
        a
    }

    #[test]
    fn factorized_first_layer_equals_concat() {
        let m = ShapeModel::<f64>::new(tiny(), 3).unwrap();
        let z: Vec<f64> = (0..6).map(|i| 0.1 * i as f64 - 0.2).collect();
        let verts = &m.template().vertices;
        let fast = m.decode_vertices(&z, verts).unwrap();
        let mut rows = Vec::new();
        for v in verts {
            rows.extend_from_slice(&[v.x, v.y, v.z]);
            rows.extend_from_slice(&z);
        }
        let x = Tensor::from_f64(&[verts.len(), 9], &rows).unwrap();
        let naive = m.decoder.mlp.infer(&x).unwrap();
        for (i, v) in verts.iter().enumerate() {
            for k in 0..3 {
                let expect = naive.data()[i * 3 + k] + v[k];
                assert!((fast[i][k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn arch_validation() {
        assert!(ShapeArch::desk().validate().is_ok());
        assert!(ShapeArch::full().validate().is_ok());
        assert_eq!(ShapeArch::full().decoder, vec![1027, 513, 256, 128, 3]);
        let mut a = ShapeArch::desk();
        a.head = vec![128, 64];
        assert!(a.validate().is_err());
    }

    #[test]
    fn wrong_code_length() {
        let m = ShapeModel::<f32>::new(tiny(), 0).unwrap();
        assert!(matches!(m.decode(&[0.0; 5]), Err(Error::ShapeMismatch { .. })));
    }
}
