use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::{Error, Mesh, Result, TextureAtlas, Vec3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Camera {
    /// Looking down -z.
    #[default]
    Front,
    Back,
    /// Looking down +x.
    Left,
    Right,
}

impl Camera {
    pub const ALL: [Camera; 4] = [Camera::Front, Camera::Back, Camera::Left, Camera::Right];

    /// `(right, up, forward)` of the view.
    fn basis(self) -> (Vec3, Vec3, Vec3) {
        let up = Vec3::y();
        let forward = match self {
            Camera::Front => -Vec3::z(),
            Camera::Back => Vec3::z(),
            Camera::Left => Vec3::x(),
            Camera::Right => -Vec3::x(),
        };
        (forward.cross(&up), up, forward)
    }
}

impl std::str::FromStr for Camera {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" => Ok(Camera::Front),
            "back" => Ok(Camera::Back),
            "left" => Ok(Camera::Left),
            "right" => Ok(Camera::Right),
            _ => Err(Error::invalid(format!("unknown camera `{s}` (expected front, back, left or right)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub size: u32,
    pub camera: Camera,
    pub background: [u8; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            size: 256,
            camera: Camera::Front,
            background: [255, 255, 255],
        }
    }
}

const UNTEXTURED_GRAY: f64 = 200.0;

/// Orthographic z-buffered render with flat two-sided shading `|n · view|`.
/// Textured meshes look up the nearest texel at the interpolated UV; the mesh
/// is scaled to fill 90% of the image.
pub fn render(mesh: &Mesh, atlas: Option<&TextureAtlas>, cfg: &RenderConfig) -> Result<RgbImage> {
    mesh.validate()?;
    if cfg.size == 0 {
        return Err(Error::invalid("render size must be positive"));
    }
    if atlas.is_some() && mesh.corner_uvs.is_none() {
        return Err(Error::invalid("a textured render needs per-corner UVs"));
    }
    let (right, up, forward) = cfg.camera.basis();
    let proj: Vec<(f64, f64, f64)> = mesh.vertices.iter().map(|p| (p.dot(&right), p.dot(&up), p.dot(&forward))).collect();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for &(u, v, _) in &proj {
        lo = [lo[0].min(u), lo[1].min(v)];
        hi = [hi[0].max(u), hi[1].max(v)];
    }
    let n = cfg.size as usize;
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let scale = if extent > 0.0 { 0.9 * n as f64 / extent } else { 1.0 };
    let (cu, cv) = ((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0);
    let to_px = |u: f64, v: f64| ((u - cu) * scale + n as f64 / 2.0, n as f64 / 2.0 - (v - cv) * scale);

    let mut depth = vec![f64::INFINITY; n * n];
    let mut color = vec![cfg.background; n * n];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let normal = mesh.face_cross(fi);
        let len = normal.norm();
        if !(len > 0.0) {
            continue;
        }
        let shade = (normal / len).dot(&forward).abs();
        let s: Vec<(f64, f64)> = f.iter().map(|&i| to_px(proj[i as usize].0, proj[i as usize].1)).collect();
        let area = (s[1].0 - s[0].0) * (s[2].1 - s[0].1) - (s[2].0 - s[0].0) * (s[1].1 - s[0].1);
        if area == 0.0 {
            continue;
        }
        let x0 = s.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let x1 = (s.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(n);
        let y0 = s.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let y1 = (s.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(n);
        for i in y0..y1 {
            for j in x0..x1 {
                let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
                let edge = |a: (f64, f64), b: (f64, f64)| ((b.0 - a.0) * (py - a.1) - (px - a.0) * (b.1 - a.1)) / area;
                let bary = [edge(s[1], s[2]), edge(s[2], s[0]), edge(s[0], s[1])];
                if bary.iter().any(|&b| b < 0.0) {
                    continue;
                }
                let d: f64 = (0..3).map(|k| bary[k] * proj[f[k] as usize].2).sum();
                let q = i * n + j;
                if d >= depth[q] {
                    continue;
                }
                depth[q] = d;
                color[q] = match (atlas, &mesh.corner_uvs) {
                    (Some(atlas), Some(uvs)) => {
                        let t = uvs[fi];
                        let uv = [
                            (0..3).map(|k| bary[k] * t[k][0]).sum(),
                            (0..3).map(|k| bary[k] * t[k][1]).sum(),
                        ];
                        let c = atlas.sample_nearest(uv);
                        [0, 1, 2].map(|k| (c[k] as f64 * shade).round() as u8)
                    }
                    _ => {
                        let g = (UNTEXTURED_GRAY * shade).round() as u8;
                        [g, g, g]
                    }
                };
            }
        }
    }
    Ok(RgbImage::from_fn(cfg.size, cfg.size, |x, y| Rgb(color[y as usize * n + x as usize])))
}
