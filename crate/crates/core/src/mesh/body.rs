//! Procedural articulated humanoid used as the deformable template and as the
//! synthetic training family.
//!
//! The body is ten closed surfaces (ellipsoid torso and head, capsule limbs)
//! with fixed topology and a fixed UV chart per part. Pose parameters are joint
//! angles in radians; shape parameters are relative scale offsets
//! (`scale = 1 + s`).

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{raster::rasterize_faces, Mesh, TextureAtlas, Uv, Vec3};

pub const POSE_DIM: usize = 8;
pub const SHAPE_DIM: usize = 4;
/// Sampling range for joint angles.
pub const POSE_SAMPLE_RANGE: f64 = PI / 3.0;
/// Sampling range for scale offsets (scales in `[0.8, 1.2]`).
pub const SHAPE_SAMPLE_RANGE: f64 = 0.2;
const POSE_LIMIT: f64 = PI;
const SHAPE_LIMIT: f64 = 0.5;

/// Joint angle slots of [`BodyParams::pose`].
pub mod joint {
    pub const LEFT_SHOULDER: usize = 0;
    pub const RIGHT_SHOULDER: usize = 1;
    pub const LEFT_ELBOW: usize = 2;
    pub const RIGHT_ELBOW: usize = 3;
    pub const LEFT_HIP: usize = 4;
    pub const RIGHT_HIP: usize = 5;
    pub const LEFT_KNEE: usize = 6;
    pub const RIGHT_KNEE: usize = 7;
}

/// Scale slots of [`BodyParams::shape`].
pub mod scale {
    pub const ARM_LENGTH: usize = 0;
    pub const LEG_LENGTH: usize = 1;
    pub const LIMB_GIRTH: usize = 2;
    pub const TORSO_GIRTH: usize = 3;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BodyPart {
    Torso,
    Head,
    LeftUpperArm,
    LeftForearm,
    RightUpperArm,
    RightForearm,
    LeftThigh,
    LeftShin,
    RightThigh,
    RightShin,
}

impl BodyPart {
    pub const ALL: [BodyPart; 10] = [
        BodyPart::Torso,
        BodyPart::Head,
        BodyPart::LeftUpperArm,
        BodyPart::LeftForearm,
        BodyPart::RightUpperArm,
        BodyPart::RightForearm,
        BodyPart::LeftThigh,
        BodyPart::LeftShin,
        BodyPart::RightThigh,
        BodyPart::RightShin,
    ];

    /// Chart rectangle `[u0, v0, u1, v1]` in the atlas.
    pub fn chart(self) -> [f64; 4] {
        const MARGIN: f64 = 0.03;
        let idx = BodyPart::ALL.iter().position(|&p| p == self).unwrap();
        let (col, row) = (idx % 4, idx / 4);
        let (w, h) = (0.25, 1.0 / 3.0);
        let u0 = col as f64 * w;
        let v1 = 1.0 - row as f64 * h;
        [u0 + MARGIN, v1 - h + MARGIN, u0 + w - MARGIN, v1 - MARGIN]
    }
}

/// Tessellation: `(rings, segments)` per part kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BodyResolution {
    pub torso: (usize, usize),
    pub head: (usize, usize),
    pub limb: (usize, usize),
}

impl Default for BodyResolution {
    fn default() -> Self {
        Self {
            torso: (10, 12),
            head: (7, 10),
            limb: (6, 8),
        }
    }
}

impl BodyResolution {
    fn for_part(&self, part: BodyPart) -> (usize, usize) {
        match part {
            BodyPart::Torso => self.torso,
            BodyPart::Head => self.head,
            _ => self.limb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (r, s) in [self.torso, self.head, self.limb] {
            if r < 3 || s < 3 {
                return Err(Error::invalid("body resolution needs >= 3 rings and segments"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub pose: [f64; POSE_DIM],
    pub shape: [f64; SHAPE_DIM],
    #[serde(default)]
    pub resolution: BodyResolution,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            pose: [0.0; POSE_DIM],
            shape: [0.0; SHAPE_DIM],
            resolution: BodyResolution::default(),
        }
    }
}

impl BodyParams {
    /// Joint angles uniform in `[-pi/3, pi/3]`, scales uniform in `[0.8, 1.2]`.
    pub fn sample<R: Rng>(rng: &mut R, resolution: BodyResolution) -> Self {
        let mut p = Self {
            resolution,
            ..Self::default()
        };
        for a in p.pose.iter_mut() {
            *a = rng.gen_range(-POSE_SAMPLE_RANGE..=POSE_SAMPLE_RANGE);
        }
        for s in p.shape.iter_mut() {
            *s = rng.gen_range(-SHAPE_SAMPLE_RANGE..=SHAPE_SAMPLE_RANGE);
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.resolution.validate()?;
        for (i, a) in self.pose.iter().enumerate() {
            if !a.is_finite() || a.abs() > POSE_LIMIT {
                return Err(Error::invalid(format!("pose[{i}] = {a} outside [-pi, pi]")));
            }
        }
        for (i, s) in self.shape.iter().enumerate() {
            if !s.is_finite() || s.abs() > SHAPE_LIMIT {
                return Err(Error::invalid(format!("shape[{i}] = {s} outside [-0.5, 0.5]")));
            }
        }
        Ok(())
    }
}

/// Surface of revolution around `axis`, from pole 0 at `origin` to pole 1.
struct Tube {
    origin: Vec3,
    axis: Vec3,
    e1: Vec3,
    /// `(distance along axis, radial factor)` per ring, poles included.
    profile: Vec<(f64, f64)>,
    /// Radii along `e1` and `axis x e1`.
    cross: (f64, f64),
    segs: usize,
}

struct Builder {
    mesh: Mesh,
    uvs: Vec<[Uv; 3]>,
    vertex_parts: Vec<BodyPart>,
    face_parts: Vec<BodyPart>,
}

impl Builder {
    fn add(&mut self, part: BodyPart, tube: &Tube, rotation: &Rotation3<f64>, pivot: Vec3) {
        let rings = tube.profile.len() - 1;
        let segs = tube.segs;
        let e2 = tube.axis.cross(&tube.e1);
        let base = self.mesh.vertices.len() as u32;
        let place = |p: Vec3| pivot + rotation * (p - pivot);
        for (k, &(h, rho)) in tube.profile.iter().enumerate() {
            let center = tube.origin + tube.axis * h;
            if k == 0 || k == rings {
                self.mesh.vertices.push(place(center));
                self.vertex_parts.push(part);
                continue;
            }
            for j in 0..segs {
                let t = 2.0 * PI * j as f64 / segs as f64;
                let p = center
                    + tube.e1 * (rho * tube.cross.0 * t.cos())
                    + e2 * (rho * tube.cross.1 * t.sin());
                self.mesh.vertices.push(place(p));
                self.vertex_parts.push(part);
            }
        }
        let ring = |k: usize, j: usize| base + 1 + ((k - 1) * segs + j % segs) as u32;
        let pole0 = base;
        let pole1 = base + 1 + ((rings - 1) * segs) as u32;
        let [u0, v0, u1, v1] = part.chart();
        let uv = |k: f64, j: f64| [u0 + (u1 - u0) * j / segs as f64, v1 - (v1 - v0) * k / rings as f64];
        let mut push = |f: [u32; 3], t: [Uv; 3]| {
            self.mesh.faces.push(f);
            self.uvs.push(t);
            self.face_parts.push(part);
        };
        for j in 0..segs {
            let jf = j as f64;
            push(
                [pole0, ring(1, j + 1), ring(1, j)],
                [uv(0.0, jf + 0.5), uv(1.0, jf + 1.0), uv(1.0, jf)],
            );
        }
        for k in 1..rings - 1 {
            let kf = k as f64;
            for j in 0..segs {
                let jf = j as f64;
                let (a, b) = (ring(k, j), ring(k, j + 1));
                let (c, d) = (ring(k + 1, j + 1), ring(k + 1, j));
                let (ua, ub) = (uv(kf, jf), uv(kf, jf + 1.0));
                let (uc, ud) = (uv(kf + 1.0, jf + 1.0), uv(kf + 1.0, jf));
                push([a, b, d], [ua, ub, ud]);
                push([b, c, d], [ub, uc, ud]);
            }
        }
        let last = (rings - 1) as f64;
        for j in 0..segs {
            let jf = j as f64;
            push(
                [pole1, ring(rings - 1, j), ring(rings - 1, j + 1)],
                [uv(rings as f64, jf + 0.5), uv(last, jf), uv(last, jf + 1.0)],
            );
        }
    }
}

fn ellipsoid_profile(rings: usize, half_height: f64) -> Vec<(f64, f64)> {
    (0..=rings)
        .map(|k| {
            let phi = PI * k as f64 / rings as f64;
            let (h, r) = if k == 0 {
                (0.0, 0.0)
            } else if k == rings {
                (2.0 * half_height, 0.0)
            } else {
                (half_height * (1.0 - phi.cos()), phi.sin())
            };
            (h, r)
        })
        .collect()
}

/// Capsule of segment length `len` and radius `radius`, parametrized by arc
/// length; the segment starts at distance `radius` from pole 0.
fn capsule_profile(rings: usize, len: f64, radius: f64) -> Vec<(f64, f64)> {
    let quarter = 0.5 * PI * radius;
    let total = 2.0 * quarter + len;
    (0..=rings)
        .map(|k| {
            if k == 0 {
                return (0.0, 0.0);
            }
            if k == rings {
                return (len + 2.0 * radius, 0.0);
            }
            let a = total * k as f64 / rings as f64;
            if a < quarter {
                let phi = a / radius;
                (radius * (1.0 - phi.cos()), phi.sin())
            } else if a <= quarter + len {
                (radius + (a - quarter), 1.0)
            } else {
                let phi = (a - quarter - len) / radius;
                (radius + len + radius * phi.sin(), phi.cos())
            }
        })
        .collect()
}

struct Limb {
    part: BodyPart,
    len: f64,
    radius: f64,
}

struct Assembled {
    mesh: Mesh,
    vertex_parts: Vec<BodyPart>,
    face_parts: Vec<BodyPart>,
}

fn assemble(params: &BodyParams) -> Result<Assembled> {
    params.validate()?;
    let res = params.resolution;
    let sc = |i: usize| 1.0 + params.shape[i];
    let (arm, leg) = (sc(scale::ARM_LENGTH), sc(scale::LEG_LENGTH));
    let (girth, torso_girth) = (sc(scale::LIMB_GIRTH), sc(scale::TORSO_GIRTH));

    let mut b = Builder {
        mesh: Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            corner_uvs: None,
            vertex_normals: None,
        },
        uvs: Vec::new(),
        vertex_parts: Vec::new(),
        face_parts: Vec::new(),
    };
    let id = Rotation3::identity();
    let (x, y, z) = (Vec3::x(), Vec3::y(), Vec3::z());

    let torso_center = Vec3::new(0.0, 1.15, 0.0);
    let torso_half = 0.32;
    let (rings, segs) = res.for_part(BodyPart::Torso);
    b.add(
        BodyPart::Torso,
        &Tube {
            origin: torso_center + y * torso_half,
            axis: -y,
            e1: x,
            profile: ellipsoid_profile(rings, torso_half),
            cross: (0.17 * torso_girth, 0.11 * torso_girth),
            segs,
        },
        &id,
        Vec3::zeros(),
    );
    let head_half = 0.12;
    let (rings, segs) = res.for_part(BodyPart::Head);
    b.add(
        BodyPart::Head,
        &Tube {
            origin: Vec3::new(0.0, 1.6 + head_half, 0.0),
            axis: -y,
            e1: x,
            profile: ellipsoid_profile(rings, head_half),
            cross: (0.1, 0.11),
            segs,
        },
        &id,
        Vec3::zeros(),
    );

    let (rings, segs) = res.limb;
    let chain = |b: &mut Builder,
                     root: Vec3,
                     rest_dir: Vec3,
                     e1: Vec3,
                     rot_root: Rotation3<f64>,
                     rot_mid: Rotation3<f64>,
                     upper: Limb,
                     lower: Limb| {
        let tube = |start: Vec3, l: &Limb| Tube {
            origin: start - rest_dir * l.radius,
            axis: rest_dir,
            e1,
            profile: capsule_profile(rings, l.len, l.radius),
            cross: (l.radius, l.radius),
            segs,
        };
        // parts are built in the rest pose, then rotated about their joints
        b.add(upper.part, &tube(root, &upper), &rot_root, root);
        let mid_rest = root + rest_dir * upper.len;
        let mid_world = root + rot_root * (mid_rest - root);
        let rot_lower = rot_root * rot_mid;
        let start = b.mesh.vertices.len();
        b.add(lower.part, &tube(mid_rest, &lower), &rot_lower, mid_rest);
        let shift = mid_world - mid_rest;
        for v in &mut b.mesh.vertices[start..] {
            *v += shift;
        }
    };

    let p = &params.pose;
    let axis = |v: Vec3| nalgebra::Unit::new_normalize(Vector3::new(v.x, v.y, v.z));
    let shoulder_x = 0.16 * torso_girth;
    chain(
        &mut b,
        Vec3::new(shoulder_x, 1.38, 0.0),
        x,
        y,
        Rotation3::from_axis_angle(&axis(z), -p[joint::LEFT_SHOULDER]),
        Rotation3::from_axis_angle(&axis(y), -p[joint::LEFT_ELBOW]),
        Limb { part: BodyPart::LeftUpperArm, len: 0.28 * arm, radius: 0.045 * girth },
        Limb { part: BodyPart::LeftForearm, len: 0.25 * arm, radius: 0.037 * girth },
    );
    chain(
        &mut b,
        Vec3::new(-shoulder_x, 1.38, 0.0),
        -x,
        y,
        Rotation3::from_axis_angle(&axis(z), p[joint::RIGHT_SHOULDER]),
        Rotation3::from_axis_angle(&axis(y), p[joint::RIGHT_ELBOW]),
        Limb { part: BodyPart::RightUpperArm, len: 0.28 * arm, radius: 0.045 * girth },
        Limb { part: BodyPart::RightForearm, len: 0.25 * arm, radius: 0.037 * girth },
    );
    let hip_x = 0.09 * torso_girth;
    for (sign, hip, knee, upper, lower) in [
        (1.0, joint::LEFT_HIP, joint::LEFT_KNEE, BodyPart::LeftThigh, BodyPart::LeftShin),
        (-1.0, joint::RIGHT_HIP, joint::RIGHT_KNEE, BodyPart::RightThigh, BodyPart::RightShin),
    ] {
        chain(
            &mut b,
            Vec3::new(sign * hip_x, 0.9, 0.0),
            -y,
            x,
            Rotation3::from_axis_angle(&axis(x), -p[hip]),
            Rotation3::from_axis_angle(&axis(x), p[knee]),
            Limb { part: upper, len: 0.42 * leg, radius: 0.065 * girth },
            Limb { part: lower, len: 0.42 * leg, radius: 0.05 * girth },
        );
    }

    b.mesh.corner_uvs = Some(b.uvs);
    b.mesh.validate()?;
    Ok(Assembled {
        mesh: b.mesh,
        vertex_parts: b.vertex_parts,
        face_parts: b.face_parts,
    })
}

/// Builds the body mesh (with template UVs) for the given parameters.
pub fn generate_synthetic_body(params: &BodyParams) -> Result<Mesh> {
    Ok(assemble(params)?.mesh)
}

/// Canonical T-pose template at the given resolution.
pub fn template(resolution: BodyResolution) -> Result<Mesh> {
    generate_synthetic_body(&BodyParams {
        resolution,
        ..BodyParams::default()
    })
}

/// Part label of every template vertex.
pub fn vertex_parts(resolution: BodyResolution) -> Result<Vec<BodyPart>> {
    Ok(assemble(&BodyParams { resolution, ..BodyParams::default() })?.vertex_parts)
}

/// Part label of every template face.
pub fn face_parts(resolution: BodyResolution) -> Result<Vec<BodyPart>> {
    Ok(assemble(&BodyParams { resolution, ..BodyParams::default() })?.face_parts)
}

/// Procedural texture in the template chart layout: each chart gets a seeded
/// base color with stripes and a gradient; the background stays black.
/// Foreground channels are kept in `[48, 250]`, so no chart texel is black.
pub fn body_texture(resolution: BodyResolution, width: u32, height: u32, seed: u64) -> Result<TextureAtlas> {
    use rand::SeedableRng;
    let mesh = template(resolution)?;
    let parts = face_parts(resolution)?;
    let map = rasterize_faces(&mesh, width, height)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let palette: Vec<([f64; 3], [f64; 3], f64)> = BodyPart::ALL
        .iter()
        .map(|_| {
            let mut c = || [rng.gen_range(0.3..0.95), rng.gen_range(0.3..0.95), rng.gen_range(0.3..0.95)];
            (c(), c(), rng.gen_range(3.0..9.0))
        })
        .collect();
    let mut atlas = TextureAtlas::black(width, height)?;
    for row in 0..height {
        for col in 0..width {
            let Some(hit) = map.get(row, col) else { continue };
            let part = parts[hit.face as usize];
            let idx = BodyPart::ALL.iter().position(|&p| p == part).unwrap();
            let (a, bcol, freq) = palette[idx];
            let [u0, v0, u1, v1] = part.chart();
            let uv = super::raster::texel_center_uv(row, col, width, height);
            let s = ((uv[1] - v0) / (v1 - v0)).clamp(0.0, 1.0);
            let t = ((uv[0] - u0) / (u1 - u0)).clamp(0.0, 1.0);
            let stripe = if ((s * freq).floor() as i64) % 2 == 0 { 1.0 } else { 0.0 };
            let mut rgb = [0u8; 3];
            for k in 0..3 {
                let base = a[k] * stripe + bcol[k] * (1.0 - stripe);
                let g = base * (0.85 + 0.15 * t);
                rgb[k] = (g * 255.0).round().clamp(48.0, 250.0) as u8;
            }
            atlas.set(row, col, rgb);
        }
    }
    Ok(atlas)
}
