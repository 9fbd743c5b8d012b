//! Acceleration structures: a k-d tree for nearest-neighbor queries and a
//! bounding volume hierarchy for ray casting. Both are immutable after build
//! and can be queried from many threads at once.

mod bvh;
mod kdtree;

pub use bvh::{ray_triangle, RayHit, TriangleIndex, DET_EPSILON, T_MIN};
pub use kdtree::PointIndex;

use crate::Vec3;

/// `dx² + dy² + dz²`, evaluated in that order.
#[inline]
pub fn squared_distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}
