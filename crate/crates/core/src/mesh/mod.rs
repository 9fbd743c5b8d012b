//! Mesh and texture-atlas data model.

mod atlas;
pub mod body;
mod holes;
mod sample;
pub mod obj;
pub mod raster;

use std::collections::HashMap;

pub use atlas::{Mask, TextureAtlas};
pub use holes::{cut_holes, CutReport, HoleSpec};
pub use obj::{load_obj, save_obj, LoadedObj};
pub use sample::{sample_sites, SurfaceSite};
pub use raster::{rasterize_background_mask, rasterize_faces, texel_center_uv, FaceMap, TexelHit};

use crate::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Uv = [f64; 2];

/// Triangle mesh with optional per-corner UVs and per-vertex normals.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// One UV per face corner, origin bottom-left.
    pub corner_uvs: Option<Vec<[Uv; 3]>>,
    pub vertex_normals: Option<Vec<Vec3>>,
}

/// A mesh with UVs and the texture its UVs point into.
#[derive(Clone, Debug, PartialEq)]
pub struct TexturedMesh {
    pub mesh: Mesh,
    pub atlas: TextureAtlas,
}

impl TexturedMesh {
    pub fn new(mesh: Mesh, atlas: TextureAtlas) -> Result<Self> {
        if mesh.corner_uvs.is_none() {
            return Err(Error::invalid("textured mesh requires per-corner UVs"));
        }
        mesh.validate()?;
        Ok(Self { mesh, atlas })
    }
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let m = Self {
            vertices,
            faces,
            corner_uvs: None,
            vertex_normals: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_uvs(mut self, uvs: Vec<[Uv; 3]>) -> Result<Self> {
        self.corner_uvs = Some(uvs);
        self.validate()?;
        Ok(self)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!("vertex {i} is not finite")));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= nv) {
                return Err(Error::invalid(format!(
                    "face {fi} references a vertex outside 0..{nv}"
                )));
            }
        }
        if let Some(uvs) = &self.corner_uvs {
            if uvs.len() != self.faces.len() {
                return Err(Error::invalid("corner UV count differs from face count"));
            }
            for (fi, c) in uvs.iter().enumerate() {
                for uv in c {
                    if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                        return Err(Error::invalid(format!(
                            "face {fi} has a UV outside the unit square"
                        )));
                    }
                }
            }
        }
        if let Some(ns) = &self.vertex_normals {
            if ns.len() != nv {
                return Err(Error::invalid("normal count differs from vertex count"));
            }
            for (i, n) in ns.iter().enumerate() {
                let len = n.norm();
                // zero normals mark isolated vertices
                if len != 0.0 && (len - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!("normal {i} is not unit length")));
                }
            }
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Cross product of the two edges at corner 0 (twice the area, along the normal).
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * self.face_cross(face).norm()
    }

    pub fn face_centroid(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (a + b + c) / 3.0
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Vertices not referenced by any face.
    pub fn isolated_vertices(&self) -> Vec<u32> {
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i as usize] = true;
            }
        }
        (0..self.vertices.len() as u32)
            .filter(|&i| !used[i as usize])
            .collect()
    }

    /// Area-weighted vertex normals. Isolated vertices get a zero normal;
    /// zero-area faces contribute nothing.
    pub fn compute_vertex_normals(&self) -> Result<Mesh> {
        if self.faces.is_empty() {
            return Err(Error::invalid("normals need at least one face"));
        }
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_cross(fi);
            for &i in f {
                acc[i as usize] += n;
            }
        }
        let normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::zeros()
                }
            })
            .collect();
        let mut out = self.clone();
        out.vertex_normals = Some(normals);
        Ok(out)
    }

    /// Same faces and UVs, new vertex positions. Normals are dropped.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Mesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::ShapeMismatch {
                left: vec![vertices.len()],
                right: vec![self.vertices.len()],
                context: "vertex count",
            });
        }
        let out = Mesh {
            vertices,
            faces: self.faces.clone(),
            corner_uvs: self.corner_uvs.clone(),
            vertex_normals: None,
        };
        out.validate()?;
        Ok(out)
    }

    /// One-to-four midpoint subdivision. Original vertices keep their indices;
    /// UVs are interpolated per corner.
    pub fn subdivide(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut mids: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                vertices.push((vertices[a as usize] + vertices[b as usize]) * 0.5);
                (vertices.len() - 1) as u32
            })
        };
        let mut faces = Vec::with_capacity(self.faces.len() * 4);
        let mut uvs = self
            .corner_uvs
            .as_ref()
            .map(|_| Vec::with_capacity(self.faces.len() * 4));
        for (fi, &[a, b, c]) in self.faces.iter().enumerate() {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            faces.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
            if let (Some(out), Some(src)) = (uvs.as_mut(), self.corner_uvs.as_ref()) {
                let [ua, ub, uc] = src[fi];
                let m = |p: Uv, q: Uv| [(p[0] + q[0]) * 0.5, (p[1] + q[1]) * 0.5];
                let (uab, ubc, uca) = (m(ua, ub), m(ub, uc), m(uc, ua));
                out.extend_from_slice(&[
                    [ua, uab, uca],
                    [uab, ub, ubc],
                    [uca, ubc, uc],
                    [uab, ubc, uca],
                ]);
            }
        }
        Mesh {
            vertices,
            faces,
            corner_uvs: uvs,
            vertex_normals: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> Mesh {
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    fn icosahedron() -> Mesh {
        let t = (1.0 + 5f64.sqrt()) / 2.0;
        let v = [
            [-1.0, t, 0.0],
            [1.0, t, 0.0],
            [-1.0, -t, 0.0],
            [1.0, -t, 0.0],
            [0.0, -1.0, t],
            [0.0, 1.0, t],
            [0.0, -1.0, -t],
            [0.0, 1.0, -t],
            [t, 0.0, -1.0],
            [t, 0.0, 1.0],
            [-t, 0.0, -1.0],
            [-t, 0.0, 1.0],
        ];
        let f = [
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        Mesh::new(
            v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect(),
            f.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn planar_quad_normals() {
        let m = quad().compute_vertex_normals().unwrap();
        for n in m.vertex_normals.unwrap() {
            assert_eq!(n, Vec3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn icosahedron_normals_are_radial() {
        let m = icosahedron().compute_vertex_normals().unwrap();
        for (v, n) in m.vertices.iter().zip(m.vertex_normals.unwrap()) {
            let d = v.normalize() - n;
            assert!(d.norm() < 1e-6, "{v:?} {n:?}");
        }
    }

    #[test]
    fn isolated_vertex_gets_zero_normal() {
        let mut m = quad();
        m.vertices.push(Vec3::new(5.0, 5.0, 5.0));
        let m = m.compute_vertex_normals().unwrap();
        assert_eq!(m.isolated_vertices(), vec![4]);
        assert_eq!(m.vertex_normals.as_ref().unwrap()[4], Vec3::zeros());
        m.validate().unwrap();
    }

    #[test]
    fn degenerate_face_contributes_nothing() {
        let mut m = quad();
        m.vertices.push(Vec3::new(2.0, 0.0, 0.0));
        m.faces.push([1, 4, 1]);
        let n = m.compute_vertex_normals().unwrap().vertex_normals.unwrap();
        assert_eq!(n[1], Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn rejects_bad_index_and_uv() {
        assert!(Mesh::new(vec![Vec3::zeros()], vec![[0, 0, 1]]).is_err());
        let m = quad();
        assert!(m
            .clone()
            .with_uvs(vec![[[0.0, 0.0], [1.0, 0.0], [1.5, 0.0]]; 2])
            .is_err());
        assert!(Mesh::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)], vec![]).is_err());
    }

    #[test]
    fn subdivision_keeps_area_and_originals() {
        let m = icosahedron();
        let s = m.subdivide();
        assert_eq!(s.n_faces(), 4 * m.n_faces());
        assert_eq!(s.n_vertices(), m.n_vertices() + 30);
        assert_eq!(&s.vertices[..12], &m.vertices[..]);
        // planar pieces: total area is preserved exactly up to rounding
        assert!((s.total_area() - m.total_area()).abs() < 1e-9);
    }
}
