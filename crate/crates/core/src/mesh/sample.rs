use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::{Mesh, Vec3};

/// A point on a mesh given by face and barycentric weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceSite {
    pub face: u32,
    pub bary: [f64; 3],
}

impl SurfaceSite {
    pub fn position(&self, mesh: &Mesh) -> Vec3 {
        self.position_in(&mesh.faces, &mesh.vertices)
    }

    pub fn position_in(&self, faces: &[[u32; 3]], vertices: &[Vec3]) -> Vec3 {
        let f = faces[self.face as usize];
        vertices[f[0] as usize] * self.bary[0]
            + vertices[f[1] as usize] * self.bary[1]
            + vertices[f[2] as usize] * self.bary[2]
    }
}

/// Area-uniform surface sites: face chosen proportionally to area, then a
/// uniform point inside it. Deterministic per seed.
pub fn sample_sites(mesh: &Mesh, n: usize, seed: u64) -> Result<Vec<SurfaceSite>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut cum = Vec::with_capacity(mesh.n_faces());
    let mut total = 0.0;
    for f in 0..mesh.n_faces() {
        total += mesh.face_area(f);
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has no face with positive area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = cum.len() - 1;
    Ok((0..n)
        .map(|_| {
            let r = rng.gen::<f64>() * total;
            let face = cum.partition_point(|&c| c <= r).min(last);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            SurfaceSite {
                face: face as u32,
                bary: [1.0 - s, s * (1.0 - r2), s * r2],
            }
        })
        .collect())
}
