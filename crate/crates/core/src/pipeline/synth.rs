use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::mesh::body::{body_texture, generate_synthetic_body, template, BodyParams, BodyResolution};
use crate::mesh::{cut_holes, HoleSpec};
use crate::{Error, Result};

use super::{Artifact, Outputs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    /// Partial scans only, without ground truth.
    pub eval: usize,
    pub atlas_size: u32,
    pub resolution: BodyResolution,
    pub hole_count: usize,
    /// Ball radius range in meters.
    pub hole_radius: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            train: 8,
            val: 2,
            eval: 4,
            atlas_size: 256,
            resolution: BodyResolution::default(),
            hole_count: 3,
            hole_radius: (0.1, 0.2),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.resolution.validate()?;
        if self.atlas_size == 0 {
            return Err(Error::invalid("atlas_size must be positive"));
        }
        HoleSpec {
            seed: 0,
            count: self.hole_count,
            radius_range: self.hole_radius,
        }
        .validate()
    }
}

/// Writes `train/`, `val/` and `eval/` case directories plus `manifest.json`.
/// Every case holds `partial.obj` (with its texture); train and val cases
/// also hold the ground truth `complete.obj` and `params.json`.
pub fn cmd_synth(out: &Path, cfg: &super::Config) -> Result<Value> {
    cfg.validate()?;
    let s = &cfg.synth;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut outputs = Outputs::default();
    let mut splits = serde_json::Map::new();
    for (split, n, with_gt) in [("train", s.train, true), ("val", s.val, true), ("eval", s.eval, false)] {
        let mut cases = Vec::with_capacity(n);
        for i in 0..n {
            let params = BodyParams::sample(&mut rng, s.resolution);
            let (tex_seed, hole_seed): (u64, u64) = (rng.gen(), rng.gen());
            let body = generate_synthetic_body(&params)?;
            let atlas = body_texture(s.resolution, s.atlas_size, s.atlas_size, tex_seed)?;
            let cut = cut_holes(
                &body,
                &HoleSpec {
                    seed: hole_seed,
                    count: s.hole_count,
                    radius_range: s.hole_radius,
                },
            )?;
            let dir = format!("{split}/{i:04}");
            outputs.push(format!("{dir}/partial.obj"), Artifact::Obj(cut.mesh, Some(atlas.clone())));
            let mut case = json!({
                "id": format!("{split}-{i:04}"),
                "partial": format!("{dir}/partial.obj"),
                "removed_area_fraction": cut.removed_area_fraction,
            });
            if with_gt {
                outputs.push(format!("{dir}/complete.obj"), Artifact::Obj(body, Some(atlas)));
                outputs.push(format!("{dir}/params.json"), Artifact::Json(serde_json::to_value(&params)?));
                case["complete"] = json!(format!("{dir}/complete.obj"));
                case["params"] = json!(format!("{dir}/params.json"));
            }
            cases.push(case);
        }
        splits.insert(split.into(), Value::Array(cases));
    }
    let manifest = json!({
        "seed": s.seed,
        "template_vertices": template(s.resolution)?.n_vertices(),
        "atlas_size": s.atlas_size,
        "splits": splits,
    });
    outputs.push("manifest.json", Artifact::Json(manifest.clone()));
    outputs.write(out)?;
    Ok(json!({ "train": s.train, "val": s.val, "eval": s.eval }))
}
