use crate::{mesh::Mesh, Error, Result, Vec3};

/// Rays are rejected when `|det|` falls below this value (parallel to the plane).
pub const DET_EPSILON: f64 = 1e-9;
/// Hits at `t <= T_MIN` are ignored so rays leaving a surface do not hit it.
pub const T_MIN: f64 = 1e-9;
// slack on barycentric bounds so shared edges never leak
const BARY_SLACK: f64 = 1e-12;
const LEAF_SIZE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub face: u32,
    /// Weights of the three corners; they sum to 1.
    pub bary: [f64; 3],
    pub t: f64,
}

/// Möller–Trumbore intersection. Returns `(t, bary)` for `t` in `(T_MIN, max_t]`.
pub fn ray_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3], max_t: f64) -> Option<(f64, [f64; 3])> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < DET_EPSILON {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-BARY_SLACK..=1.0 + BARY_SLACK).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -BARY_SLACK || u + v > 1.0 + BARY_SLACK {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if !(t > T_MIN && t <= max_t) {
        return None;
    }
    let (u, v) = (u.max(0.0), v.max(0.0));
    let s = u + v;
    let (u, v) = if s > 1.0 { (u / s, v / s) } else { (u, v) };
    Some((t, [1.0 - u - v, u, v]))
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.lo[k] && p[k] <= self.hi[k])
    }

    /// Entry distance of the ray into the box, if it enters before `max_t`.
    fn entry(&self, origin: &Vec3, inv_dir: &Vec3, max_t: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = max_t;
        for k in 0..3 {
            if inv_dir[k].is_infinite() {
                // ray parallel to this slab
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (near, far) = if a <= b { (a, b) } else { (b, a) };
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf when `count > 0` (triangles `order[start..start + count]`), otherwise inner with `left`/`right`.
    start: u32,
    count: u32,
    left: u32,
    right: u32,
}

/// Bounding volume hierarchy over a mesh's triangles (median split on the
/// widest centroid axis, leaves of up to 4 triangles).
#[derive(Clone, Debug)]
pub struct TriangleIndex {
    tris: Vec<[Vec3; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

impl TriangleIndex {
    pub fn build(mesh: &Mesh) -> Result<Self> {
        if mesh.faces.is_empty() {
            return Err(Error::invalid("cannot index a mesh without faces"));
        }
        let tris: Vec<[Vec3; 3]> = (0..mesh.n_faces()).map(|f| mesh.triangle(f)).collect();
        let mut idx = Self {
            order: (0..tris.len() as u32).collect(),
            tris,
            nodes: Vec::new(),
        };
        let centroids: Vec<Vec3> = idx.tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let n = idx.order.len();
        idx.build_node(&centroids, 0, n);
        Ok(idx)
    }

    fn build_node(&mut self, centroids: &[Vec3], start: usize, end: usize) -> u32 {
        let mut bounds = Aabb::empty();
        let mut cb = Aabb::empty();
        for &i in &self.order[start..end] {
            for p in &self.tris[i as usize] {
                bounds.grow(p);
            }
            cb.grow(&centroids[i as usize]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node { bounds, start: start as u32, count: (end - start) as u32, left: 0, right: 0 });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let ext = cb.hi - cb.lo;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(centroids, start, start + mid);
        let right = self.build_node(centroids, start + mid, end);
        let node = &mut self.nodes[id as usize];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.tris.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    /// Checks that every node box contains all triangles below it.
    pub fn validate(&self) -> Result<()> {
        let mut stack = vec![(0u32, Vec::<u32>::new())];
        while let Some((n, ancestors)) = stack.pop() {
            let node = &self.nodes[n as usize];
            let mut chain = ancestors.clone();
            chain.push(n);
            if node.count > 0 {
                for &t in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    for &a in &chain {
                        let b = &self.nodes[a as usize].bounds;
                        if !self.tris[t as usize].iter().all(|p| b.contains(p)) {
                            return Err(Error::invalid(format!("triangle {t} escapes node {a}")));
                        }
                    }
                }
            } else {
                stack.push((node.left, chain.clone()));
                stack.push((node.right, chain));
            }
        }
        Ok(())
    }

    /// Nearest hit with `t` in `(T_MIN, max_dist]`; equal distances resolve to
    /// the smallest face id.
    pub fn ray_cast(&self, origin: &Vec3, dir: &Vec3, max_dist: f64) -> Option<RayHit> {
        if !(max_dist > 0.0) {
            return None;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut best_t = max_dist;
        let mut stack: Vec<(u32, f64)> = Vec::with_capacity(64);
        if let Some(t0) = self.nodes[0].bounds.entry(origin, &inv, max_dist) {
            stack.push((0, t0));
        }
        while let Some((n, t_enter)) = stack.pop() {
            if t_enter > best_t {
                continue;
            }
            let node = &self.nodes[n as usize];
            if node.count > 0 {
                for &f in &self.order[node.start as usize..(node.start + node.count) as usize] {
                    if let Some((t, bary)) = ray_triangle(origin, dir, &self.tris[f as usize], best_t) {
                        let better = match best {
                            None => true,
                            Some(b) => t < b.t || (t == b.t && f < b.face),
                        };
                        if better {
                            best = Some(RayHit { face: f, bary, t });
                            best_t = t;
                        }
                    }
                }
                continue;
            }
            let l = self.nodes[node.left as usize].bounds.entry(origin, &inv, best_t);
            let r = self.nodes[node.right as usize].bounds.entry(origin, &inv, best_t);
            match (l, r) {
                (Some(a), Some(b)) => {
                    // visit the nearer child first
                    if a <= b {
                        stack.push((node.right, b));
                        stack.push((node.left, a));
                    } else {
                        stack.push((node.left, a));
                        stack.push((node.right, b));
                    }
                }
                (Some(a), None) => stack.push((node.left, a)),
                (None, Some(b)) => stack.push((node.right, b)),
                (None, None) => {}
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_tri() -> Mesh {
        Mesh::new(
            vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn axis_aligned_hit() {
        let idx = TriangleIndex::build(&unit_tri()).unwrap();
        let hit = idx
            .ray_cast(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.0, 0.0, -1.0), 10.0)
            .unwrap();
        assert_eq!(hit.face, 0);
        assert_eq!(hit.t, 1.0);
        assert_eq!(hit.bary, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn parallel_ray_misses() {
        let idx = TriangleIndex::build(&unit_tri()).unwrap();
        assert!(idx
            .ray_cast(&Vec3::new(-1.0, 0.2, 0.0), &Vec3::new(1.0, 0.0, 0.0), 10.0)
            .is_none());
    }

    #[test]
    fn max_dist_and_self_hits() {
        let idx = TriangleIndex::build(&unit_tri()).unwrap();
        let o = Vec3::new(0.2, 0.2, 1.0);
        let d = Vec3::new(0.0, 0.0, -1.0);
        assert!(idx.ray_cast(&o, &d, 0.5).is_none());
        assert!(idx.ray_cast(&o, &d, 1.0).is_some());
        // origin on the surface: the t = 0 hit is rejected
        assert!(idx.ray_cast(&Vec3::new(0.2, 0.2, 0.0), &d, 1.0).is_none());
    }

    #[test]
    fn shared_edge_does_not_leak() {
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
        let idx = TriangleIndex::build(&m).unwrap();
        for k in 1..100 {
            let s = k as f64 / 100.0;
            let hit = idx.ray_cast(&Vec3::new(s, s, 1.0), &Vec3::new(0.0, 0.0, -1.0), 2.0);
            let hit = hit.expect("diagonal must be hit");
            assert_eq!(hit.face, 0, "smallest id wins on the shared edge");
            assert!((hit.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mesh_is_error() {
        let m = Mesh::new(vec![Vec3::zeros()], vec![]).unwrap();
        assert!(TriangleIndex::build(&m).is_err());
    }
}
