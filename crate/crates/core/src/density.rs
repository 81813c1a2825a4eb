//! k-nearest-neighbour smoothing lengths and densities.

use rayon::prelude::*;

use crate::geom::{Aabb, Vec3};
use crate::snapshot::ParticleTable;

pub const DEFAULT_NEIGHBORS: usize = 32;

const LEAF_SIZE: usize = 16;

/// Static kd-tree over a point set for exact k-NN queries.
pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<u32>,
    /// `points` permuted into `order`, so leaves are contiguous in memory.
    sorted: Vec<Vec3>,
    nodes: Vec<KdNode>,
}

enum KdNode {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vec3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len() as u32).collect(),
            sorted: Vec::new(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree.sorted = tree.order.iter().map(|&i| points[i as usize]).collect();
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf {
                start: start as u32,
                end: end as u32,
            });
            return id;
        }
        let pts = self.points;
        let slice = &mut self.order[start..end];
        let bounds = Aabb::from_points(slice.iter().map(|&i| pts[i as usize])).expect("non-empty");
        let e = bounds.extent();
        let axis = if e.x >= e.y && e.x >= e.z {
            0
        } else if e.y >= e.z {
            1
        } else {
            2
        };
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            pts[a as usize]
                .get(axis)
                .total_cmp(&pts[b as usize].get(axis))
                .then(a.cmp(&b))
        });
        let value = pts[slice[mid] as usize].get(axis);
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id as usize] = KdNode::Split {
            axis: axis as u8,
            value,
            left,
            right,
        };
        id
    }

    /// Squared distance to the `k`-th nearest point other than `skip`.
    /// Returns `None` when fewer than `k` other points exist.
    pub fn kth_neighbor_dist2(&self, q: Vec3, k: usize, skip: Option<usize>) -> Option<f64> {
        if k == 0 {
            return Some(0.0);
        }
        let mut best = Vec::with_capacity(k + 1);
        if !self.nodes.is_empty() {
            self.search(0, q, k, skip, &mut best);
        }
        (best.len() == k).then(|| best[k - 1])
    }

    /// Squared k-th neighbour distance of every point, excluding itself.
    /// Queries run in tree order for locality.
    pub fn all_kth_neighbor_dist2(&self, k: usize) -> Option<Vec<f64>> {
        if self.points.len() <= k {
            return None;
        }
        let by_leaf: Vec<f64> = (0..self.sorted.len())
            .into_par_iter()
            .map(|j| {
                self.kth_neighbor_dist2(self.sorted[j], k, Some(self.order[j] as usize))
                    .expect("more than k points")
            })
            .collect();
        let mut out = vec![0.0; by_leaf.len()];
        for (&i, d2) in self.order.iter().zip(by_leaf) {
            out[i as usize] = d2;
        }
        Some(out)
    }

    fn search(&self, node: u32, q: Vec3, k: usize, skip: Option<usize>, best: &mut Vec<f64>) {
        match self.nodes[node as usize] {
            KdNode::Leaf { start, end } => {
                let (start, end) = (start as usize, end as usize);
                for (&i, &p) in self.order[start..end].iter().zip(&self.sorted[start..end]) {
                    if Some(i as usize) == skip {
                        continue;
                    }
                    let d = p - q;
                    let d2 = d.dot(d);
                    if best.len() == k && d2 >= best[k - 1] {
                        continue;
                    }
                    let at = best.partition_point(|&b| b <= d2);
                    best.insert(at, d2);
                    best.truncate(k);
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q.get(axis as usize) - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, skip, best);
                if best.len() < k || delta * delta < best[k - 1] {
                    self.search(far, q, k, skip, best);
                }
            }
        }
    }
}

/// Density of a particle of `mass` whose k-th neighbour lies at `size`.
pub fn knn_density(k: usize, mass: f64, size: f64) -> f64 {
    k as f64 * mass / (4.0 / 3.0 * std::f64::consts::PI * size.powi(3))
}

/// Fills `size` (distance to the k-th nearest neighbour) and `density`
/// (`k * mass / (4/3 pi size^3)`) for every particle.
///
/// With `count <= k` every particle's size falls back to the largest
/// pairwise distance, or to the diagonal of `domain` for a lone particle.
pub fn estimate_density(table: &mut ParticleTable, k: usize, domain: &Aabb) {
    assert!(k >= 1, "neighbour count must be positive");
    let n = table.len();
    if n == 0 {
        return;
    }
    let floor = domain.diagonal().max(1.0) * 1e-12;
    let sizes: Vec<f64> = if n <= k {
        let s = if n == 1 {
            domain.diagonal()
        } else {
            let mut max2 = 0.0f64;
            for i in 0..n {
                for j in i + 1..n {
                    let d = table.pos[i] - table.pos[j];
                    max2 = max2.max(d.dot(d));
                }
            }
            max2.sqrt()
        };
        vec![s; n]
    } else {
        let tree = KdTree::new(&table.pos);
        let d2 = tree.all_kth_neighbor_dist2(k).expect("n > k");
        d2.into_iter().map(f64::sqrt).collect()
    };
    for (i, s) in sizes.into_iter().enumerate() {
        // Coincident points would give a zero size; keep sizes positive.
        table.size[i] = s.max(floor) as f32;
        table.density[i] = knn_density(k, f64::from(table.mass[i]), f64::from(table.size[i])) as f32;
    }
}
