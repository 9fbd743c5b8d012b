//! Chamfer distances between point sets.

use serde::{Deserialize, Serialize};

use crate::mesh::{sample_sites, Mesh};
use crate::spatial::PointIndex;
use crate::{par, Error, Result, Vec3};

/// A non-empty set of finite 3D points (meters).
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    points: Vec<Vec3>,
}

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point set is empty"));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point set has non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Vec3> {
        self.points
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// How per-point nearest distances are turned into one number.
/// The default (squared distances, mean) is what every other module uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChamferOptions {
    pub squared: bool,
    pub reduction: Reduction,
}

impl Default for ChamferOptions {
    fn default() -> Self {
        Self {
            squared: true,
            reduction: Reduction::Mean,
        }
    }
}

/// Mean squared distance from each point of `from` to its nearest point in `to`.
pub fn directed_chamfer(from: &PointSet, to: &PointSet) -> Result<f64> {
    directed_chamfer_with(from, to, ChamferOptions::default())
}

pub fn directed_chamfer_with(from: &PointSet, to: &PointSet, opts: ChamferOptions) -> Result<f64> {
    let index = PointIndex::build(to.points())?;
    Ok(directed_to_index(from.points(), &index, opts))
}

/// Directed Chamfer against a prebuilt index over the target set.
pub fn directed_to_index(from: &[Vec3], index: &PointIndex, opts: ChamferOptions) -> f64 {
    let d: Vec<f64> = par::map_slice(from, |p| {
        let d2 = index.nearest(p).1;
        if opts.squared {
            d2
        } else {
            d2.sqrt()
        }
    });
    reduce(&d, opts.reduction)
}

/// `directed(a, b) + directed(b, a)`.
pub fn symmetric_chamfer(a: &PointSet, b: &PointSet) -> Result<f64> {
    symmetric_chamfer_with(a, b, ChamferOptions::default())
}

pub fn symmetric_chamfer_with(a: &PointSet, b: &PointSet, opts: ChamferOptions) -> Result<f64> {
    Ok(directed_chamfer_with(a, b, opts)? + directed_chamfer_with(b, a, opts)?)
}

fn reduce(d: &[f64], reduction: Reduction) -> f64 {
    let s = par::pairwise_sum(d);
    match reduction {
        Reduction::Mean => s / d.len() as f64,
        Reduction::Sum => s,
    }
}

/// `n` area-uniform surface samples, deterministic per seed.
pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointSet> {
    let sites = sample_sites(mesh, n, seed)?;
    PointSet::new(sites.iter().map(|s| s.position(mesh)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[[f64; 3]]) -> PointSet {
        PointSet::new(v.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn hand_example() {
        let a = set(&[[0.0, 0.0, 0.0]]);
        let b = set(&[[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        assert_eq!(directed_chamfer(&a, &b).unwrap(), 1.0);
        // back direction: (1 + 4) / 2
        assert_eq!(directed_chamfer(&b, &a).unwrap(), 2.5);
        assert_eq!(symmetric_chamfer(&a, &b).unwrap(), 3.5);
    }

    #[test]
    fn options() {
        let a = set(&[[0.0, 0.0, 0.0], [0.0, 0.0, 3.0]]);
        let b = set(&[[0.0, 0.0, 1.0]]);
        let o = ChamferOptions { squared: false, reduction: Reduction::Sum };
        assert_eq!(directed_chamfer_with(&a, &b, o).unwrap(), 3.0);
        assert_eq!(directed_chamfer(&a, &b).unwrap(), 2.5);
    }

    #[test]
    fn empty_rejected() {
        assert!(PointSet::new(vec![]).is_err());
        assert!(PointSet::new(vec![Vec3::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn surface_samples_lie_on_mesh() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let s = sample_surface(&m, 500, 9).unwrap();
        assert_eq!(s, sample_surface(&m, 500, 9).unwrap());
        assert!(s.points().iter().all(|p| p.z == 0.0 && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y)));
    }
}
