use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::body::{body_texture, template, BodyResolution};
use crate::mesh::{cut_holes, rasterize_background_mask, HoleSpec, Mask};
use crate::nn::Tensor;
use crate::texture::{derive_masks, transfer_texture, TransferConfig};
use crate::{Error, Result, TexturedMesh};

use super::net::{atlas_to_tensor, MaskedImage};

/// How the missing region of a training sample is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HoleSource {
    /// Balls cut from the body surface, then the texture transferred from the
    /// partial mesh; missing texels are read off the result.
    MeshCut { count: (usize, usize), radius: (f64, f64) },
    /// Random discs in image space; radii are fractions of the shorter side.
    Blobs { count: (usize, usize), radius: (f64, f64) },
}

impl HoleSource {
    fn validate(&self) -> Result<()> {
        let (HoleSource::MeshCut { count, radius } | HoleSource::Blobs { count, radius }) = self;
        if count.0 > count.1 || !(radius.0 > 0.0 && radius.0 <= radius.1) {
            return Err(Error::invalid(format!("bad hole ranges: count {count:?}, radius {radius:?}")));
        }
        Ok(())
    }
}

/// Image-space disc holes: `known` is false inside any disc.
pub fn random_blob_mask(width: u32, height: u32, count: (usize, usize), radius: (f64, f64), seed: u64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(count.0..=count.1);
    let side = width.min(height) as f64;
    let discs: Vec<(f64, f64, f64)> = (0..n)
        .map(|_| {
            let r = rng.gen_range(radius.0..=radius.1) * side;
            (rng.gen_range(0.0..height as f64), rng.gen_range(0.0..width as f64), r)
        })
        .collect();
    let mut m = Mask::filled(width, height, true);
    for i in 0..height {
        for j in 0..width {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            if discs.iter().any(|&(cy, cx, r)| (y - cy).powi(2) + (x - cx).powi(2) < r * r) {
                m.set(i, j, false);
            }
        }
    }
    m
}

/// Procedural multi-color image `[3, H, W]`: a two-color gradient with
/// random rectangles and discs on top. Values lie in `[0.1, 1]`.
pub fn generic_image(width: u32, height: u32, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as usize, height as usize);
    let mut color = || [rng.gen_range(0.1f32..1.0), rng.gen_range(0.1f32..1.0), rng.gen_range(0.1f32..1.0)];
    let (c0, c1) = (color(), color());
    let mut data = vec![0.0f32; 3 * w * h];
    for i in 0..h {
        for j in 0..w {
            let t = (i + j) as f32 / (h + w).max(1) as f32;
            for k in 0..3 {
                data[(k * h + i) * w + j] = c0[k] * (1.0 - t) + c1[k] * t;
            }
        }
    }
    let shapes = rng.gen_range(3..=8);
    for _ in 0..shapes {
        let c = [rng.gen_range(0.1f32..1.0), rng.gen_range(0.1f32..1.0), rng.gen_range(0.1f32..1.0)];
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let (ry, rx) = (rng.gen_range(0.05..0.35) * h as f64, rng.gen_range(0.05..0.35) * w as f64);
        let disc = rng.gen_bool(0.5);
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = ((i as f64 + 0.5 - cy) / ry, (j as f64 + 0.5 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx < 1.0 } else { dy.abs() < 1.0 && dx.abs() < 1.0 };
                if inside {
                    for k in 0..3 {
                        data[(k * h + i) * w + j] = c[k];
                    }
                }
            }
        }
    }
    Tensor::new(&[3, h, w], data).expect("image shape")
}

/// Synthetic body atlases in the template chart layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AtlasCorpus {
    pub width: u32,
    pub height: u32,
    pub resolution: BodyResolution,
    pub holes: HoleSource,
    /// Texels with every channel at or below this are missing.
    pub black_threshold: u8,
}

impl Default for AtlasCorpus {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            resolution: BodyResolution::default(),
            holes: HoleSource::MeshCut {
                count: (1, 4),
                radius: (0.08, 0.2),
            },
            black_threshold: 0,
        }
    }
}

/// One training or evaluation example: the masked input and the complete
/// ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSample {
    pub input: MaskedImage,
    pub target: Tensor<f32>,
}

impl AtlasCorpus {
    pub fn sample(&self, seed: u64) -> Result<CorpusSample> {
        self.holes.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = body_texture(self.resolution, self.width, self.height, rng.gen())?;
        let mesh = template(self.resolution)?;
        let foreground = rasterize_background_mask(&mesh, self.width, self.height)?;
        let target = atlas_to_tensor(&gt);
        let input = match &self.holes {
            HoleSource::MeshCut { count, radius } => {
                let spec = HoleSpec {
                    seed: rng.gen(),
                    count: rng.gen_range(count.0..=count.1),
                    radius_range: *radius,
                };
                let partial = cut_holes(&mesh, &spec)?.mesh;
                let source = TexturedMesh::new(partial, gt.clone())?;
                let cfg = TransferConfig {
                    width: self.width,
                    height: self.height,
                    ..TransferConfig::default()
                };
                let moved = transfer_texture(&source, &mesh.compute_vertex_normals()?, &cfg)?;
                let masks = derive_masks(&moved, &foreground, self.black_threshold)?;
                MaskedImage::from_atlas(&moved, &masks)?
            }
            HoleSource::Blobs { count, radius } => {
                let blobs = random_blob_mask(self.width, self.height, *count, *radius, rng.gen());
                let known: Vec<bool> = blobs
                    .as_slice()
                    .iter()
                    .zip(foreground.as_slice())
                    .map(|(&k, &f)| k || !f)
                    .collect();
                let known = Mask::from_vec(self.width, self.height, known)?;
                let mut image = target.clone();
                blank(&mut image, &known);
                MaskedImage::new(image, known, foreground)?
            }
        };
        Ok(CorpusSample { input, target })
    }
}

fn blank(image: &mut Tensor<f32>, known: &Mask) {
    let plane = known.as_slice().len();
    for (q, v) in image.data_mut().iter_mut().enumerate() {
        if !known.as_slice()[q % plane] {
            *v = 0.0;
        }
    }
}

/// Source of training images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Corpus {
    /// Procedural images without background, with blob holes.
    Generic { width: u32, height: u32, holes: HoleSource },
    Atlas(AtlasCorpus),
}

impl Corpus {
    pub fn generic(width: u32, height: u32) -> Self {
        Corpus::Generic {
            width,
            height,
            holes: HoleSource::Blobs {
                count: (1, 4),
                radius: (0.05, 0.2),
            },
        }
    }

    pub fn size(&self) -> (u32, u32) {
        match self {
            Corpus::Generic { width, height, .. } => (*width, *height),
            Corpus::Atlas(a) => (a.width, a.height),
        }
    }

    pub fn sample(&self, seed: u64) -> Result<CorpusSample> {
        match self {
            Corpus::Atlas(a) => a.sample(seed),
            Corpus::Generic { width, height, holes } => {
                holes.validate()?;
                let HoleSource::Blobs { count, radius } = holes else {
                    return Err(Error::invalid("generic images only support blob holes"));
                };
                let target = generic_image(*width, *height, seed);
                let known = random_blob_mask(*width, *height, *count, *radius, seed ^ 0xB10B);
                let mut image = target.clone();
                blank(&mut image, &known);
                let input = MaskedImage::new(image, known, Mask::filled(*width, *height, true))?;
                Ok(CorpusSample { input, target })
            }
        }
    }
}
