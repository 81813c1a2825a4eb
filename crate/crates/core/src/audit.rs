//! Checks a built dataset against the raw snapshots it was built from.

use std::collections::HashMap;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geom::{morton_key, quantization_bound, NodePath, Vec3};
use crate::snapshot::ParticleTable;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IntervalAudit {
    pub interval: usize,
    pub blocks: usize,
    pub leaves: usize,
    pub max_block_points: u32,
    /// Blocks above the capacity that are not at maximum depth.
    pub over_capacity: Vec<u64>,
    /// Leaf ids, sorted, equal the start snapshot's ids.
    pub leaf_ids_match: bool,
    /// Internal nodes holding an id that none of their children hold.
    pub parent_not_subset: Vec<u64>,
    /// Worst |Σ block weight − Σ raw mass in the node cell| / Σ raw mass.
    pub max_conservation_error: f64,
    /// Worst per-axis reconstruction error divided by its bound, over start
    /// and end positions.
    pub max_quantization_ratio: f64,
    pub max_quantization_error: f64,
}

impl IntervalAudit {
    pub fn passes(&self, conservation_tol: f64) -> bool {
        self.over_capacity.is_empty()
            && self.leaf_ids_match
            && self.parent_not_subset.is_empty()
            && self.max_conservation_error <= conservation_tol
            && self.max_quantization_ratio <= 1.0 + 1e-9
    }
}

/// Raw mass per node computed from max-depth cell keys: the particles of a
/// node are one contiguous key range.
struct MassByCell {
    keys: Vec<u64>,
    prefix: Vec<f64>,
    max_depth: u32,
}

impl MassByCell {
    fn new(table: &ParticleTable, ds: &Dataset) -> Result<Self> {
        let meta = ds.meta();
        let mut keyed: Vec<(u64, f64)> = table
            .pos
            .iter()
            .zip(&table.mass)
            .map(|(&p, &m)| Ok((morton_key(p, &meta.root, meta.max_depth)?, f64::from(m))))
            .collect::<Result<_>>()?;
        keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let mut prefix = Vec::with_capacity(keyed.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &(_, m) in &keyed {
            acc += m;
            prefix.push(acc);
        }
        Ok(MassByCell {
            keys: keyed.into_iter().map(|k| k.0).collect(),
            prefix,
            max_depth: meta.max_depth,
        })
    }

    fn mass(&self, path: NodePath) -> f64 {
        let shift = 3 * (self.max_depth - path.depth());
        let lo = path.code() << shift;
        let hi = (path.code() + 1) << shift;
        let a = self.keys.partition_point(|&k| k < lo);
        let b = self.keys.partition_point(|&k| k < hi);
        self.prefix[b] - self.prefix[a]
    }
}

fn axis_ratio(got: Vec3, want: Vec3, bound: Vec3) -> (f64, f64) {
    let mut ratio: f64 = 0.0;
    let mut err: f64 = 0.0;
    for axis in 0..3 {
        let e = (got.get(axis) - want.get(axis)).abs();
        err = err.max(e);
        let b = bound.get(axis);
        ratio = ratio.max(if b > 0.0 { e / b } else if e > 0.0 { f64::INFINITY } else { 0.0 });
    }
    (ratio, err)
}

/// Audits interval `s` given its start and end snapshots.
pub fn audit_interval(ds: &Dataset, s: usize, start: &ParticleTable, end: &ParticleTable) -> Result<IntervalAudit> {
    let index = ds
        .index(s)
        .ok_or_else(|| Error::Invalid(format!("no interval {s}")))?;
    let meta = ds.meta();
    let cells = MassByCell::new(start, ds)?;
    let start_row: HashMap<u64, usize> = start.id.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let end_row: HashMap<u64, usize> = end.id.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut report = IntervalAudit {
        interval: s,
        blocks: index.len(),
        ..Default::default()
    };
    let mut leaf_ids = Vec::with_capacity(start.len());
    let mut ids_of: HashMap<NodePath, Vec<u64>> = HashMap::new();
    for e in index.entries() {
        let block = ds.block(s, e.path)?.expect("indexed block");
        report.max_block_points = report.max_block_points.max(e.count);
        if e.count as usize > meta.node_capacity && e.path.depth() < meta.max_depth {
            report.over_capacity.push(e.path.code());
        }

        let raw = cells.mass(e.path);
        let stored: f64 = block.weight_start.iter().map(|&w| f64::from(w)).sum();
        let rel = (stored - raw).abs() / raw.max(f64::MIN_POSITIVE);
        report.max_conservation_error = report.max_conservation_error.max(rel);

        let bs = quantization_bound(&block.box_start);
        let be = quantization_bound(&block.box_end);
        for i in 0..block.len() {
            let id = block.id[i];
            let row = *start_row
                .get(&id)
                .ok_or_else(|| Error::Invalid(format!("block {} holds unknown id {id}", e.path)))?;
            let (r, err) = axis_ratio(block.start_position(i), start.pos[row], bs);
            report.max_quantization_ratio = report.max_quantization_ratio.max(r);
            report.max_quantization_error = report.max_quantization_error.max(err);
            let want_end = end_row.get(&id).map_or(start.pos[row], |&j| end.pos[j]);
            let (r, err) = axis_ratio(block.end_position(i), want_end, be);
            report.max_quantization_ratio = report.max_quantization_ratio.max(r);
            report.max_quantization_error = report.max_quantization_error.max(err);
        }

        if e.is_leaf() {
            report.leaves += 1;
            leaf_ids.extend_from_slice(&block.id);
        }
        ids_of.insert(e.path, block.id);
    }

    leaf_ids.sort_unstable();
    let mut want = start.id.clone();
    want.sort_unstable();
    report.leaf_ids_match = leaf_ids == want;

    for e in index.entries().iter().filter(|e| !e.is_leaf()) {
        let mut below: Vec<u64> = index
            .children(e)
            .flat_map(|c| ids_of[&c.path].iter().copied())
            .collect();
        below.sort_unstable();
        if ids_of[&e.path].iter().any(|id| below.binary_search(id).is_err()) {
            report.parent_not_subset.push(e.path.code());
        }
    }
    Ok(report)
}
