#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use meshboost::inpaint::{InpaintArch, InpaintNet};
use meshboost::mesh::body::{body_texture, generate_synthetic_body, BodyParams, BodyResolution};
use meshboost::mesh::{cut_holes, save_obj, HoleSpec};
use meshboost::pipeline::Config;
use meshboost::shape::{ShapeArch, ShapeModel};
use meshboost::TexturedMesh;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Every file below `dir`, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Textured body with holes cut into it.
pub fn partial_scan(seed: u64, atlas_size: u32) -> TexturedMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = BodyResolution::default();
    let body = generate_synthetic_body(&BodyParams::sample(&mut rng, res)).unwrap();
    let atlas = body_texture(res, atlas_size, atlas_size, seed).unwrap();
    let spec = HoleSpec {
        seed,
        count: 3,
        radius_range: (0.1, 0.2),
    };
    TexturedMesh::new(cut_holes(&body, &spec).unwrap().mesh, atlas).unwrap()
}

pub fn write_scan(dir: &Path, scan: &TexturedMesh) -> PathBuf {
    let p = dir.join("partial.obj");
    save_obj(&p, &scan.mesh, Some(&scan.atlas)).unwrap();
    p
}

/// Untrained small models saved under `dir` and a config that runs the whole
/// pipeline in well under a second at 64x64.
pub fn tiny_setup(dir: &Path) -> Config {
    let shape = ShapeModel::<f32>::new(ShapeArch::with_sizes(16, &[3, 16, 32], &[32], &[32]), 1).unwrap();
    let shape_path = dir.join("shape.w3b");
    shape.save(&shape_path).unwrap();
    let net = InpaintNet::<f32>::new(InpaintArch::desk(), 2).unwrap();
    let net_path = dir.join("inpaint.w3b");
    net.save(&net_path).unwrap();

    let mut cfg = Config::default();
    cfg.models.shape = Some(shape_path);
    cfg.models.inpaint = Some(net_path);
    cfg.encoder_points = Some(256);
    cfg.refine.iterations = 5;
    cfg.refine.partial_samples = 256;
    cfg.refine.estimate_samples = 256;
    cfg.transfer.width = 64;
    cfg.transfer.height = 64;
    cfg.seed = 3;
    cfg.resolved()
}
