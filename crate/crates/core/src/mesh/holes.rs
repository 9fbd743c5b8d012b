use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{sample::sample_sites, Mesh, TexturedMesh, Vec3};

/// Synthetic partiality: `count` balls centered on the surface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec {
    pub seed: u64,
    pub count: usize,
    /// Min and max ball radius in meters.
    pub radius_range: (f64, f64),
}

impl HoleSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius_range;
        if !(lo > 0.0 && hi > 0.0 && lo <= hi) {
            return Err(Error::invalid(format!(
                "hole radius range ({lo}, {hi}) must satisfy 0 < min <= max"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CutReport {
    pub mesh: Mesh,
    /// Ball centers and radii.
    pub balls: Vec<(Vec3, f64)>,
    /// Original indices of the surviving faces, ascending.
    pub kept_faces: Vec<u32>,
    /// Original indices of the surviving vertices, ascending.
    pub kept_vertices: Vec<u32>,
    pub removed_area_fraction: f64,
}

/// Removes every face whose centroid lies inside one of the balls, then
/// re-indexes the remaining vertices compactly (original order preserved).
pub fn cut_holes(mesh: &Mesh, spec: &HoleSpec) -> Result<CutReport> {
    spec.validate()?;
    mesh.validate()?;
    let mut balls = Vec::with_capacity(spec.count);
    if spec.count > 0 {
        let centers = sample_sites(mesh, spec.count, spec.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9E37_79B9_7F4A_7C15);
        let (lo, hi) = spec.radius_range;
        for c in centers {
            let r = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
            balls.push((c.position(mesh), r));
        }
    }
    let inside = |p: &Vec3| balls.iter().any(|(c, r)| (p - c).norm_squared() <= r * r);

    let total_area = mesh.total_area();
    let mut removed_area = 0.0;
    let mut kept_faces = Vec::new();
    for f in 0..mesh.n_faces() {
        if inside(&mesh.face_centroid(f)) {
            removed_area += mesh.face_area(f);
        } else {
            kept_faces.push(f as u32);
        }
    }
    if kept_faces.is_empty() {
        return Err(Error::EmptyResult("hole cutting removed every face".into()));
    }

    let mut remap = vec![u32::MAX; mesh.n_vertices()];
    for &f in &kept_faces {
        for &v in &mesh.faces[f as usize] {
            remap[v as usize] = 0;
        }
    }
    let mut kept_vertices = Vec::new();
    for (v, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = kept_vertices.len() as u32;
            kept_vertices.push(v as u32);
        }
    }
    let out = Mesh {
        vertices: kept_vertices.iter().map(|&v| mesh.vertices[v as usize]).collect(),
        faces: kept_faces
            .iter()
            .map(|&f| mesh.faces[f as usize].map(|v| remap[v as usize]))
            .collect(),
        corner_uvs: mesh
            .corner_uvs
            .as_ref()
            .map(|uv| kept_faces.iter().map(|&f| uv[f as usize]).collect()),
        vertex_normals: mesh
            .vertex_normals
            .as_ref()
            .map(|n| kept_vertices.iter().map(|&v| n[v as usize]).collect()),
    };
    Ok(CutReport {
        mesh: out,
        balls,
        kept_faces,
        kept_vertices,
        removed_area_fraction: if total_area > 0.0 { removed_area / total_area } else { 0.0 },
    })
}

impl TexturedMesh {
    /// Partial copy with holes cut; the atlas is kept as is.
    pub fn with_holes(&self, spec: &HoleSpec) -> Result<TexturedMesh> {
        let cut = cut_holes(&self.mesh, spec)?;
        TexturedMesh::new(cut.mesh, self.atlas.clone())
    }
}
