//! Budgeted view-dependent cut selection over a [`TreeIndex`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Visibility};
use crate::error::{Error, Result};
use crate::geom::{child_aabb, Aabb, NodePath};
use crate::index::{IndexEntry, TreeIndex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutEntry {
    pub path: NodePath,
    pub interval: u32,
    pub count: u32,
    /// Screen-space error in pixels; infinite when the camera is inside.
    pub sse: f64,
    /// Encoded block size.
    pub bytes: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cut {
    /// Ordered by descending sse, ties by ascending path.
    pub entries: Vec<CutEntry>,
    pub total_points: u64,
    /// The budget was smaller than the root block; the root is drawn anyway.
    pub budget_exceeded: bool,
}

/// Wire form of one cut entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDescriptor {
    pub path: u64,
    pub count: u32,
    /// `null` encodes an infinite error.
    pub sse: Option<f64>,
    pub bytes: u32,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub budget_exceeded: bool,
}

impl Cut {
    pub fn descriptors(&self) -> Vec<BlockDescriptor> {
        self.entries
            .iter()
            .map(|e| BlockDescriptor {
                path: e.path.code(),
                count: e.count,
                sse: e.sse.is_finite().then_some(e.sse),
                bytes: e.bytes,
                budget_exceeded: self.budget_exceeded,
            })
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(&self.descriptors()).expect("descriptors serialize")
    }
}

/// True when no path is an ancestor of another.
pub fn is_antichain(paths: &[NodePath]) -> bool {
    let set: HashSet<NodePath> = paths.iter().copied().collect();
    set.len() == paths.len()
        && paths
            .iter()
            .all(|p| std::iter::successors(p.parent().ok(), |a| a.parent().ok()).all(|a| !set.contains(&a)))
}

struct Candidate {
    sse: f64,
    entry: IndexEntry,
    bounds: Aabb,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Candidate {
    // Max-heap: larger sse first, then smaller path.
    fn cmp(&self, o: &Self) -> Ordering {
        self.sse
            .total_cmp(&o.sse)
            .then_with(|| o.entry.path.cmp(&self.entry.path))
    }
}

/// Greedy refinement from the root: the node with the largest screen-space
/// error is replaced by its frustum-visible children while its error exceeds
/// `tau` and the replacement fits in `budget` points. Nodes outside the
/// frustum are dropped.
pub fn select_cut(
    index: &TreeIndex,
    root_box: &Aabb,
    interval: u32,
    cam: &Camera,
    tau: f64,
    budget: u64,
) -> Result<Cut> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
    }
    let view = cam.view()?;
    let root = *index.root();
    let mut cut = Cut::default();
    if view.classify(root_box) == Visibility::Outside {
        return Ok(cut);
    }
    let entry = |e: &IndexEntry, sse: f64| CutEntry {
        path: e.path,
        interval,
        count: e.count,
        sse,
        bytes: e.length,
    };
    let root_sse = view.screen_space_error(root_box);
    if budget < u64::from(root.count) {
        cut.entries.push(entry(&root, root_sse));
        cut.total_points = u64::from(root.count);
        cut.budget_exceeded = true;
        return Ok(cut);
    }

    let mut total = u64::from(root.count);
    let mut heap = BinaryHeap::new();
    heap.push(Candidate {
        sse: root_sse,
        entry: root,
        bounds: *root_box,
    });
    while let Some(node) = heap.pop() {
        if node.sse <= tau || node.entry.is_leaf() {
            cut.entries.push(entry(&node.entry, node.sse));
            continue;
        }
        let children: Vec<Candidate> = index
            .children(&node.entry)
            .filter_map(|c| {
                let octant = c.path.octant().expect("child has an octant");
                let bounds = child_aabb(&node.bounds, octant);
                (view.classify(&bounds) != Visibility::Outside).then(|| Candidate {
                    sse: view.screen_space_error(&bounds),
                    entry: *c,
                    bounds,
                })
            })
            .collect();
        let cost: u64 = children.iter().map(|c| u64::from(c.entry.count)).sum();
        let next = total - u64::from(node.entry.count) + cost;
        if next <= budget {
            total = next;
            heap.extend(children);
        } else {
            cut.entries.push(entry(&node.entry, node.sse));
        }
    }
    cut.entries.sort_by(|a, b| b.sse.total_cmp(&a.sse).then(a.path.cmp(&b.path)));
    cut.total_points = total;
    debug_assert_eq!(total, cut.entries.iter().map(|e| u64::from(e.count)).sum::<u64>());
    Ok(cut)
}
