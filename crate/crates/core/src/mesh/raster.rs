//! Rasterization of UV charts into texel space.
//!
//! A texel belongs to a UV triangle when its center lies inside the triangle
//! or on its boundary. When several triangles claim a texel, the one with the
//! lowest face index owns it. Zero-area UV triangles are skipped.

use crate::{par, Error, Result};

use super::{Mask, Mesh, Uv};

/// UV coordinate of the center of texel `(row, col)`.
pub fn texel_center_uv(row: u32, col: u32, width: u32, height: u32) -> Uv {
    [
        (col as f64 + 0.5) / width as f64,
        1.0 - (row as f64 + 0.5) / height as f64,
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexelHit {
    pub face: u32,
    /// Barycentric weights of the texel center w.r.t. the face's corners.
    pub bary: [f64; 3],
}

/// Owner face and barycentrics for every texel.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceMap {
    pub width: u32,
    pub height: u32,
    pub texels: Vec<Option<TexelHit>>,
}

impl FaceMap {
    pub fn get(&self, row: u32, col: u32) -> Option<TexelHit> {
        self.texels[(row * self.width + col) as usize]
    }

    pub fn to_mask(&self) -> Mask {
        Mask::from_vec(
            self.width,
            self.height,
            self.texels.iter().map(Option::is_some).collect(),
        )
        .expect("dimensions agree by construction")
    }
}

fn orient(a: Uv, b: Uv, p: Uv) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Barycentrics of `p` in triangle `t` when inside or on the boundary.
pub(crate) fn uv_barycentric(t: &[Uv; 3], p: Uv) -> Option<[f64; 3]> {
    let area = orient(t[0], t[1], t[2]);
    if area == 0.0 {
        return None;
    }
    let s = area.signum();
    let w0 = orient(t[1], t[2], p) * s;
    let w1 = orient(t[2], t[0], p) * s;
    let w2 = orient(t[0], t[1], p) * s;
    if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
        let a = area.abs();
        Some([w0 / a, w1 / a, w2 / a])
    } else {
        None
    }
}

pub fn rasterize_faces(mesh: &Mesh, width: u32, height: u32) -> Result<FaceMap> {
    let uvs = mesh
        .corner_uvs
        .as_ref()
        .ok_or_else(|| Error::invalid("rasterization needs per-corner UVs"))?;
    if width == 0 || height == 0 {
        return Err(Error::invalid("raster dimensions must be at least 1"));
    }
    let (w, h) = (width as f64, height as f64);
    // bin faces by the rows their UV bounding box may touch
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); height as usize];
    for (fi, t) in uvs.iter().enumerate() {
        if orient(t[0], t[1], t[2]) == 0.0 {
            continue;
        }
        let vmin = t.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let vmax = t.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        let r0 = (((1.0 - vmax) * h - 0.5).floor() as i64 - 1).max(0);
        let r1 = (((1.0 - vmin) * h - 0.5).ceil() as i64 + 1).min(height as i64 - 1);
        for r in r0..=r1 {
            rows[r as usize].push(fi as u32);
        }
    }
    let row_hits = par::map_range(height as usize, |r| {
        let mut out: Vec<Option<TexelHit>> = vec![None; width as usize];
        for &fi in &rows[r] {
            let t = &uvs[fi as usize];
            let umin = t.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let umax = t.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let c0 = ((umin * w - 0.5).floor() as i64 - 1).max(0);
            let c1 = ((umax * w - 0.5).ceil() as i64 + 1).min(width as i64 - 1);
            for c in c0..=c1 {
                let slot = &mut out[c as usize];
                if slot.is_some() {
                    continue;
                }
                let p = texel_center_uv(r as u32, c as u32, width, height);
                if let Some(bary) = uv_barycentric(t, p) {
                    *slot = Some(TexelHit { face: fi, bary });
                }
            }
        }
        out
    });
    Ok(FaceMap {
        width,
        height,
        texels: row_hits.into_iter().flatten().collect(),
    })
}

/// Foreground (true) where a texel center falls inside some UV triangle.
pub fn rasterize_background_mask(mesh: &Mesh, width: u32, height: u32) -> Result<Mask> {
    Ok(rasterize_faces(mesh, width, height)?.to_mask())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Vec3;

    fn tri_mesh(uv: [Uv; 3]) -> Mesh {
        Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .with_uvs(vec![uv])
        .unwrap()
    }

    #[test]
    fn lower_left_half_at_4x4() {
        let m = tri_mesh([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let mask = rasterize_background_mask(&m, 4, 4).unwrap();
        assert_eq!(mask.count_ones(), 10);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(mask.get(r, c), c <= r);
            }
        }
    }

    #[test]
    fn no_uv_triangles_means_empty() {
        let m = Mesh::new(vec![Vec3::zeros()], vec![]).unwrap().with_uvs(vec![]).unwrap();
        assert_eq!(rasterize_background_mask(&m, 8, 8).unwrap().count_ones(), 0);
        let d = tri_mesh([[0.1, 0.1], [0.5, 0.5], [0.9, 0.9]]);
        assert_eq!(rasterize_background_mask(&d, 8, 8).unwrap().count_ones(), 0);
    }

    #[test]
    fn barycentrics_reproduce_the_center() {
        let t = [[0.1, 0.2], [0.9, 0.3], [0.4, 0.95]];
        let fm = rasterize_faces(&tri_mesh(t), 16, 16).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                if let Some(hit) = fm.get(r, c) {
                    let p = texel_center_uv(r, c, 16, 16);
                    let b = hit.bary;
                    assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    for k in 0..2 {
                        let q = b[0] * t[0][k] + b[1] * t[1][k] + b[2] * t[2][k];
                        assert!((q - p[k]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn requires_uvs() {
        let m = Mesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
        assert!(rasterize_background_mask(&m, 4, 4).is_err());
    }
}
