//! Texture transfer from a partial scan onto the completed mesh, and the
//! missing-texture and background masks of the resulting atlas.

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::mesh::{rasterize_faces, Mask, TextureAtlas, TexturedMesh};
use crate::spatial::TriangleIndex;
use crate::{par, Error, Mesh, Result, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    /// Longest distance a texel looks for the source surface, meters.
    pub max_ray_distance: f64,
    /// Also cast against the normal.
    pub bidirectional: bool,
    pub width: u32,
    pub height: u32,
    /// Rays start this far behind the surface point so a coincident source
    /// surface is still hit.
    pub origin_offset: f64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            max_ray_distance: 0.05,
            bidirectional: true,
            width: 512,
            height: 512,
            origin_offset: 1e-6,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_ray_distance > 0.0) || !self.max_ray_distance.is_finite() {
            return Err(Error::invalid("max_ray_distance must be positive"));
        }
        if !(self.origin_offset >= 0.0) {
            return Err(Error::invalid("origin_offset must be non-negative"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("atlas size must be positive"));
        }
        Ok(())
    }
}

/// Where a texel's ray met the source surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferHit {
    pub face: u32,
    pub bary: [f64; 3],
    /// Unsigned distance from the texel's surface point.
    pub distance: f64,
}

/// Nearest source hit along `+n` (and `-n` when bidirectional) within the
/// configured distance.
pub fn cast_texel(index: &TriangleIndex, p: &Vec3, n: &Vec3, cfg: &TransferConfig) -> Option<TransferHit> {
    let eta = cfg.origin_offset;
    let reach = cfg.max_ray_distance + eta;
    let mut best: Option<TransferHit> = None;
    let mut dirs = vec![*n];
    if cfg.bidirectional {
        dirs.push(-n);
    }
    for d in dirs {
        let origin = p - d * eta;
        if let Some(h) = index.ray_cast(&origin, &d, reach) {
            let distance = (h.t - eta).abs();
            if distance <= cfg.max_ray_distance && best.is_none_or(|b| distance < b.distance) {
                best = Some(TransferHit {
                    face: h.face,
                    bary: h.bary,
                    distance,
                });
            }
        }
    }
    best
}

/// Colors every foreground texel of the target atlas layout from the source
/// texture, found by casting along the interpolated target normal. Texels
/// without a hit and background texels stay black.
pub fn transfer_texture(source: &TexturedMesh, target: &Mesh, cfg: &TransferConfig) -> Result<TextureAtlas> {
    cfg.validate()?;
    let normals = target
        .vertex_normals
        .as_ref()
        .ok_or_else(|| Error::invalid("target mesh needs per-vertex normals"))?;
    if target.corner_uvs.is_none() {
        return Err(Error::invalid("target mesh needs texture coordinates"));
    }
    let src_uvs = source
        .mesh
        .corner_uvs
        .as_ref()
        .ok_or_else(|| Error::invalid("source mesh needs texture coordinates"))?;
    let index = TriangleIndex::build(&source.mesh)?;
    let map = rasterize_faces(target, cfg.width, cfg.height)?;
    let (w, h) = (cfg.width, cfg.height);

    let rows: Vec<Vec<[u8; 3]>> = par::map_range(h as usize, |row| {
        (0..w)
            .map(|col| {
                let Some(texel) = map.get(row as u32, col) else {
                    return [0, 0, 0];
                };
                let f = target.faces[texel.face as usize];
                let mut p = Vec3::zeros();
                let mut n = Vec3::zeros();
                for k in 0..3 {
                    p += target.vertices[f[k] as usize] * texel.bary[k];
                    n += normals[f[k] as usize] * texel.bary[k];
                }
                let len = n.norm();
                if !(len > 0.0) {
                    return [0, 0, 0];
                }
                let Some(hit) = cast_texel(&index, &p, &(n / len), cfg) else {
                    return [0, 0, 0];
                };
                let uv = src_uvs[hit.face as usize];
                let mut st = [0.0; 2];
                for k in 0..3 {
                    st[0] += uv[k][0] * hit.bary[k];
                    st[1] += uv[k][1] * hit.bary[k];
                }
                let c = source.atlas.sample_bilinear(st);
                [c[0].round() as u8, c[1].round() as u8, c[2].round() as u8]
            })
            .collect()
    });

    let mut atlas = TextureAtlas::black(w, h)?;
    for (row, cols) in rows.into_iter().enumerate() {
        for (col, rgb) in cols.into_iter().enumerate() {
            atlas.set(row as u32, col as u32, rgb);
        }
    }
    Ok(atlas)
}

/// Missing-texture mask `known` (false = missing) and background mask
/// `foreground` (false = background). Background texels are stored as known.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub known: Mask,
    pub foreground: Mask,
}

impl MaskPair {
    /// Number of foreground texels with missing texture.
    pub fn missing_count(&self) -> usize {
        self.known.as_slice().iter().filter(|&&k| !k).count()
    }
}

/// A texel is missing when it is foreground and every channel is at most
/// `black_threshold`.
pub fn derive_masks(atlas: &TextureAtlas, foreground: &Mask, black_threshold: u8) -> Result<MaskPair> {
    if (atlas.width(), atlas.height()) != (foreground.width(), foreground.height()) {
        return Err(Error::ShapeMismatch {
            left: vec![atlas.height() as usize, atlas.width() as usize],
            right: vec![foreground.height() as usize, foreground.width() as usize],
            context: "atlas vs background mask",
        });
    }
    let (w, h) = (atlas.width(), atlas.height());
    let mut known = Vec::with_capacity((w * h) as usize);
    for row in 0..h {
        for col in 0..w {
            let black = atlas.get(row, col).iter().all(|&c| c <= black_threshold);
            known.push(!(foreground.get(row, col) && black));
        }
    }
    Ok(MaskPair {
        known: Mask::from_vec(w, h, known)?,
        foreground: foreground.clone(),
    })
}

pub const BACKGROUND_GRAY: [u8; 3] = [128, 128, 128];
pub const MISSING_WHITE: [u8; 3] = [255, 255, 255];

/// Diagnostic image: background gray, missing texels white, known texels as is.
pub fn apply_masks_to_image(atlas: &TextureAtlas, masks: &MaskPair) -> Result<RgbImage> {
    let (w, h) = (atlas.width(), atlas.height());
    if (masks.known.width(), masks.known.height()) != (w, h) || (masks.foreground.width(), masks.foreground.height()) != (w, h) {
        return Err(Error::invalid("mask and atlas sizes differ"));
    }
    Ok(RgbImage::from_fn(w, h, |col, row| {
        if !masks.foreground.get(row, col) {
            Rgb(BACKGROUND_GRAY)
        } else if !masks.known.get(row, col) {
            Rgb(MISSING_WHITE)
        } else {
            Rgb(atlas.get(row, col))
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atlas_from(pixels: &[[u8; 3]], w: u32, h: u32) -> TextureAtlas {
        let img = RgbImage::from_fn(w, h, |c, r| Rgb(pixels[(r * w + c) as usize]));
        TextureAtlas::from_image(img).unwrap()
    }

    #[test]
    fn masks_follow_blackness_rule() {
        let atlas = atlas_from(&[[0, 0, 0], [0, 0, 0], [2, 1, 0], [9, 0, 0]], 2, 2);
        let fg = Mask::from_vec(2, 2, vec![true, false, true, true]).unwrap();
        let m = derive_masks(&atlas, &fg, 0).unwrap();
        assert_eq!(m.known.as_slice(), &[false, true, true, true]);
        let m = derive_masks(&atlas, &fg, 2).unwrap();
        assert_eq!(m.known.as_slice(), &[false, true, false, true]);
        assert_eq!(m.missing_count(), 2);
    }

    #[test]
    fn diagnostic_colors() {
        let atlas = atlas_from(&[[0, 0, 0], [5, 6, 7], [1, 2, 3], [0, 0, 0]], 2, 2);
        let fg = Mask::from_vec(2, 2, vec![true, true, true, false]).unwrap();
        let m = derive_masks(&atlas, &fg, 0).unwrap();
        let img = apply_masks_to_image(&atlas, &m).unwrap();
        assert_eq!(img.get_pixel(0, 0).0, MISSING_WHITE);
        assert_eq!(img.get_pixel(1, 0).0, [5, 6, 7]);
        assert_eq!(img.get_pixel(0, 1).0, [1, 2, 3]);
        assert_eq!(img.get_pixel(1, 1).0, BACKGROUND_GRAY);
    }

    #[test]
    fn size_mismatch() {
        let atlas = TextureAtlas::black(2, 2).unwrap();
        assert!(derive_masks(&atlas, &Mask::filled(3, 2, true), 0).is_err());
    }
}
