//! Dataset construction: Morton sort, capacity-driven leaf partition,
//! bottom-up weighted subselection, timestep pairing, quantization and
//! block/index serialization.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{write_block, Block};
use crate::dataset::{blocks_file, index_file, DatasetMeta, DATASET_FORMAT, META_FILE};
use crate::error::{Error, Result};
use crate::geom::{child_aabb, morton_key, quantize, Aabb, NodePath, Vec3, MAX_DEPTH};
use crate::index::{IndexEntry, TreeIndex};
use crate::snapshot::{read_table_file, ParticleTable};
use crate::subsample::{conserve_total, select_weighted};

pub const DEFAULT_NODE_CAPACITY: usize = 16000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub node_capacity: usize,
    /// Exponent on density in the sampling weight `mass * density^alpha`.
    pub density_exponent: f64,
    pub seed: u64,
    pub max_depth: u32,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            node_capacity: DEFAULT_NODE_CAPACITY,
            density_exponent: 1.0,
            seed: 0,
            max_depth: MAX_DEPTH,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.node_capacity == 0 {
            return Err(Error::Config("node capacity must be at least 1".into()));
        }
        if !(1..=MAX_DEPTH).contains(&self.max_depth) {
            return Err(Error::Config(format!("max depth must be in 1..={MAX_DEPTH}")));
        }
        if !self.density_exponent.is_finite() {
            return Err(Error::Config("density exponent must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct BuildCounters {
    /// Positions moved by clamping during quantization.
    pub clamped: AtomicU64,
    /// Nodes at maximum depth that kept more than the capacity.
    pub overfull_nodes: AtomicU64,
    /// Points whose id was missing from the next snapshot.
    pub missing_pairs: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub intervals: usize,
    pub node_count: u64,
    pub leaf_count: u64,
    /// Node count per depth, summed over intervals.
    pub depth_histogram: Vec<u64>,
    pub clamped: u64,
    pub overfull_nodes: u64,
    pub missing_pairs: u64,
    pub bytes_written: u64,
}

/// Id lookup into the snapshot that ends an interval.
pub struct EndLookup<'a> {
    table: &'a ParticleTable,
    by_id: Option<HashMap<u64, u32>>,
}

impl<'a> EndLookup<'a> {
    pub fn new(table: &'a ParticleTable) -> Self {
        EndLookup { table, by_id: Some(table.id.iter().enumerate().map(|(i, &id)| (id, i as u32)).collect()) }
    }

    /// Lookup that skips hashing when both snapshots list ids in the same order.
    pub fn aligned_with(start: &ParticleTable, table: &'a ParticleTable) -> Self {
        if start.id == table.id {
            EndLookup { table, by_id: None }
        } else {
            EndLookup::new(table)
        }
    }

    fn find(&self, id: u64, start_index: usize) -> Option<usize> {
        match &self.by_id {
            None => Some(start_index),
            Some(m) => m.get(&id).map(|&i| i as usize),
        }
    }
}

/// Start state of a node's representatives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodePoints {
    pub id: Vec<u64>,
    /// Row of each point in the start snapshot.
    pub row: Vec<usize>,
    pub pos: Vec<Vec3>,
    pub size: Vec<f32>,
    pub mass: Vec<f32>,
    pub weight: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedEnds {
    pub pos: Vec<Vec3>,
    pub size: Vec<f32>,
    pub weight: Vec<f64>,
    /// Tight box over `pos`; `None` when the node is empty.
    pub bounds: Option<Aabb>,
    pub missing: u64,
}

/// End state of every representative: the same id's state in the next
/// snapshot, or its start state if the id is absent there.
pub fn pair_timesteps(points: &NodePoints, lookup: &EndLookup<'_>) -> PairedEnds {
    let m = points.id.len();
    let mut ends = PairedEnds {
        pos: Vec::with_capacity(m),
        size: Vec::with_capacity(m),
        weight: Vec::with_capacity(m),
        bounds: None,
        missing: 0,
    };
    for i in 0..m {
        match lookup.find(points.id[i], points.row[i]) {
            Some(j) => {
                let t = lookup.table;
                ends.pos.push(t.pos[j]);
                ends.size.push(t.size[j]);
                ends.weight
                    .push(points.weight[i] * f64::from(t.mass[j]) / f64::from(points.mass[i]));
            }
            None => {
                ends.pos.push(points.pos[i]);
                ends.size.push(points.size[i]);
                ends.weight.push(points.weight[i]);
                ends.missing += 1;
            }
        }
    }
    ends.bounds = Aabb::from_points(ends.pos.iter().copied());
    ends
}

/// Quantizes a node's representatives into a block. Returns the block and
/// the number of clamped coordinates.
///
/// End positions share the node cell as their box when it holds all of
/// them, so points that do not move keep identical codes; otherwise the end
/// box is the tight box of the end positions.
pub fn make_block(
    path: NodePath,
    interval: u32,
    node_box: Aabb,
    points: &NodePoints,
    ends: &PairedEnds,
) -> Result<(Block, u64)> {
    let mut block = Block::empty(path, interval, node_box);
    block.box_end = match ends.bounds {
        Some(b) if !node_box.contains_box(&b) => b,
        _ => node_box,
    };
    let mut clamped = 0;
    for i in 0..points.id.len() {
        let (qs, cs) = quantize(points.pos[i], &block.box_start)?;
        let (qe, ce) = quantize(ends.pos[i], &block.box_end)?;
        clamped += u64::from(cs) + u64::from(ce);
        block.qpos_start.push(qs);
        block.qpos_end.push(qe);
        block.size_start.push(points.size[i]);
        block.size_end.push(ends.size[i]);
        block.weight_start.push(points.weight[i] as f32);
        block.weight_end.push(ends.weight[i] as f32);
        block.id.push(points.id[i]);
    }
    Ok((block, clamped))
}

/// Encoded node produced by the builder.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub path: NodePath,
    pub child_mask: u8,
    pub count: u32,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy)]
struct Rep {
    row: u32,
    weight: f64,
}

struct IntervalBuilder<'a> {
    start: &'a ParticleTable,
    lookup: EndLookup<'a>,
    cfg: &'a BuildConfig,
    interval: u32,
    /// Rows of `start` sorted by (Morton key, id).
    order: Vec<u32>,
    keys: Vec<u64>,
    counters: &'a BuildCounters,
}

impl IntervalBuilder<'_> {
    fn digit(&self, key: u64, depth: u32) -> u8 {
        // Octant chosen at `depth` when descending to depth + 1.
        ((key >> (3 * (self.cfg.max_depth - depth - 1))) & 7) as u8
    }

    fn node(&self, path: NodePath, node_box: Aabb, lo: usize, hi: usize) -> Result<(Vec<Rep>, Vec<NodeRecord>)> {
        let depth = path.depth();
        let n = self.cfg.node_capacity;
        let (reps, mut records, child_mask) = if hi - lo <= n || depth >= self.cfg.max_depth {
            if hi - lo > n {
                self.counters.overfull_nodes.fetch_add(1, Ordering::Relaxed);
                warn!("node {path} at max depth keeps {} points", hi - lo);
            }
            let reps: Vec<Rep> = self.order[lo..hi]
                .iter()
                .map(|&row| Rep {
                    row,
                    weight: f64::from(self.start.mass[row as usize]),
                })
                .collect();
            (reps, Vec::new(), 0u8)
        } else {
            let mut ranges = Vec::with_capacity(8);
            let mut at = lo;
            for octant in 0..8u8 {
                let end = at + self.keys[at..hi].partition_point(|&k| self.digit(k, depth) <= octant);
                if end > at {
                    ranges.push((octant, at, end));
                }
                at = end;
            }
            let children: Vec<(Vec<Rep>, Vec<NodeRecord>)> = ranges
                .par_iter()
                .map(|&(o, a, b)| self.node(path.child(o)?, child_aabb(&node_box, o), a, b))
                .collect::<Result<_>>()?;
            let child_mask = ranges.iter().fold(0u8, |m, &(o, _, _)| m | (1 << o));
            let mut pool = Vec::new();
            let mut records = Vec::new();
            for (r, rec) in children {
                pool.extend(r);
                records.extend(rec);
            }
            (self.subsample(&pool), records, child_mask)
        };

        let points = self.node_points(&reps);
        let ends = pair_timesteps(&points, &self.lookup);
        self.counters.missing_pairs.fetch_add(ends.missing, Ordering::Relaxed);
        let (block, clamped) = make_block(path, self.interval, node_box, &points, &ends)?;
        self.counters.clamped.fetch_add(clamped, Ordering::Relaxed);
        records.push(NodeRecord {
            path,
            child_mask,
            count: block.len() as u32,
            bytes: write_block(&block),
        });
        Ok((reps, records))
    }

    fn subsample(&self, pool: &[Rep]) -> Vec<Rep> {
        let ids: Vec<u64> = pool.iter().map(|r| self.start.id[r.row as usize]).collect();
        let carried: Vec<f64> = pool.iter().map(|r| r.weight).collect();
        let alpha = self.cfg.density_exponent;
        let sampling: Vec<f64> = pool
            .iter()
            .map(|r| r.weight * f64::from(self.start.density[r.row as usize]).powf(alpha))
            .collect();
        let selected = select_weighted(&ids, &sampling, self.cfg.node_capacity, self.cfg.seed);
        let weights = conserve_total(&carried, &selected);
        selected
            .iter()
            .zip(weights)
            .map(|(&i, weight)| Rep { row: pool[i].row, weight })
            .collect()
    }

    fn node_points(&self, reps: &[Rep]) -> NodePoints {
        let t = self.start;
        let mut p = NodePoints::default();
        for r in reps {
            let row = r.row as usize;
            p.id.push(t.id[row]);
            p.row.push(row);
            p.pos.push(t.pos[row]);
            p.size.push(t.size[row]);
            p.mass.push(t.mass[row]);
            p.weight.push(r.weight);
        }
        p
    }
}

/// Builds the node records of one interval, sorted by path.
pub fn build_interval(
    start: &ParticleTable,
    end: &ParticleTable,
    root: &Aabb,
    interval: u32,
    cfg: &BuildConfig,
    counters: &BuildCounters,
) -> Result<Vec<NodeRecord>> {
    cfg.validate()?;
    let keys_unsorted: Vec<u64> = start
        .pos
        .par_iter()
        .map(|&p| morton_key(p, root, cfg.max_depth))
        .collect::<Result<_>>()?;
    let mut order: Vec<u32> = (0..start.len() as u32).collect();
    order.par_sort_unstable_by_key(|&i| (keys_unsorted[i as usize], start.id[i as usize]));
    let keys: Vec<u64> = order.iter().map(|&i| keys_unsorted[i as usize]).collect();
    drop(keys_unsorted);

    let builder = IntervalBuilder {
        start,
        lookup: EndLookup::aligned_with(start, end),
        cfg,
        interval,
        order,
        keys,
        counters,
    };
    let (_, mut records) = builder.node(NodePath::ROOT, *root, 0, start.len())?;
    records.sort_unstable_by_key(|r| r.path);
    Ok(records)
}

/// Root box of the dataset: a cube anchored at the minimum corner of the
/// tight box over all snapshots.
pub fn dataset_root(bounds: &[Aabb]) -> Aabb {
    bounds
        .iter()
        .copied()
        .reduce(|a, b| Aabb::new(a.min.min(b.min), a.max.max(b.max)))
        .unwrap_or_else(Aabb::unit)
        .cubed()
}

/// Writes one interval's blocks and index; returns (index, bytes written).
pub fn write_interval(out_dir: &Path, interval: usize, records: &[NodeRecord]) -> Result<(TreeIndex, u64)> {
    let mut blob = Vec::with_capacity(records.iter().map(|r| r.bytes.len()).sum());
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        entries.push(IndexEntry {
            path: r.path,
            child_mask: r.child_mask,
            count: r.count,
            offset: blob.len() as u64,
            length: u32::try_from(r.bytes.len())
                .map_err(|_| Error::Invalid(format!("block {} too large", r.path)))?,
        });
        blob.extend_from_slice(&r.bytes);
    }
    let index = TreeIndex::new(entries)?;
    let bp = blocks_file(out_dir, interval);
    fs::write(&bp, &blob).map_err(|e| Error::from(e).in_file(&bp))?;
    let ibytes = index.to_bytes();
    let ip = index_file(out_dir, interval);
    fs::write(&ip, &ibytes).map_err(|e| Error::from(e).in_file(&ip))?;
    Ok((index, (blob.len() + ibytes.len()) as u64))
}

/// Builds a dataset directory from snapshot files in time order.
///
/// Only two snapshots are held in memory at a time.
pub fn build(inputs: &[PathBuf], cfg: &BuildConfig, out_dir: &Path) -> Result<DatasetSummary> {
    cfg.validate()?;
    if inputs.len() < 2 {
        return Err(Error::Config("at least two snapshots are required".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::from(e).in_file(out_dir))?;

    let mut bounds = Vec::with_capacity(inputs.len());
    let mut times = Vec::with_capacity(inputs.len());
    let mut raw_counts = Vec::with_capacity(inputs.len());
    for path in inputs {
        let t = read_table_file(path)?;
        t.validate().map_err(|e| e.in_file(path))?;
        bounds.extend(t.bounds());
        times.push(t.snapshot_time);
        raw_counts.push(t.len() as u64);
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(format!("snapshot times must increase strictly: {times:?}")));
    }
    let root = dataset_root(&bounds);
    info!("root box {root:?}");

    let counters = BuildCounters::default();
    let mut summary = DatasetSummary {
        intervals: inputs.len() - 1,
        node_count: 0,
        leaf_count: 0,
        depth_histogram: Vec::new(),
        clamped: 0,
        overfull_nodes: 0,
        missing_pairs: 0,
        bytes_written: 0,
    };
    let mut node_counts = Vec::with_capacity(inputs.len() - 1);
    let mut start = read_table_file(&inputs[0])?;
    for s in 0..inputs.len() - 1 {
        let end = read_table_file(&inputs[s + 1])?;
        let records = build_interval(&start, &end, &root, s as u32, cfg, &counters)
            .map_err(|e| e.in_file(&inputs[s]))?;
        let (index, bytes) = write_interval(out_dir, s, &records)?;
        info!("interval {s}: {} nodes, {bytes} bytes", index.len());
        for e in index.entries() {
            let d = e.path.depth() as usize;
            if summary.depth_histogram.len() <= d {
                summary.depth_histogram.resize(d + 1, 0);
            }
            summary.depth_histogram[d] += 1;
        }
        summary.node_count += index.len() as u64;
        summary.leaf_count += index.leaves().count() as u64;
        summary.bytes_written += bytes;
        node_counts.push(index.len() as u64);
        start = end;
    }

    let meta = DatasetMeta {
        format: DATASET_FORMAT.into(),
        root,
        node_capacity: cfg.node_capacity,
        alpha: cfg.density_exponent,
        seed: cfg.seed,
        max_depth: cfg.max_depth,
        snapshot_times: times,
        raw_counts,
        node_counts,
    };
    let mut meta_bytes = serde_json::to_vec_pretty(&meta)?;
    meta_bytes.push(b'\n');
    let mp = out_dir.join(META_FILE);
    fs::write(&mp, &meta_bytes).map_err(|e| Error::from(e).in_file(&mp))?;
    summary.bytes_written += meta_bytes.len() as u64;
    summary.clamped = counters.clamped.into_inner();
    summary.overfull_nodes = counters.overfull_nodes.into_inner();
    summary.missing_pairs = counters.missing_pairs.into_inner();
    Ok(summary)
}

/// Runs `f` on a dedicated pool of `threads` workers (or the global pool).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::read_block;
    use crate::geom::dequantize;
    use crate::snapshot::Particle;

    fn table(t: f64, pts: &[(u64, Vec3)]) -> ParticleTable {
        let ps: Vec<Particle> = pts
            .iter()
            .map(|&(id, pos)| Particle {
                id,
                pos,
                mass: 1.0,
                density: 1.0,
                size: 0.1,
            })
            .collect();
        ParticleTable::from_particles(t, &ps)
    }

    fn points(n: u64) -> Vec<(u64, Vec3)> {
        (0..n)
            .map(|i| {
                let u = |a| crate::hash::uniform(&[5, i, a]);
                (i, Vec3::new(u(0), u(1), u(2)))
            })
            .collect()
    }

    #[test]
    fn under_capacity_is_single_leaf() {
        let a = table(0.0, &points(1000));
        let root = Aabb::unit();
        let c = BuildCounters::default();
        let recs = build_interval(&a, &a, &root, 0, &BuildConfig::default(), &c).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].count, 1000);
        assert_eq!(recs[0].child_mask, 0);
    }

    #[test]
    fn single_octant_forces_one_child() {
        // Everything in the root's octant 0 (lower corner).
        let pts: Vec<_> = points(20_000).into_iter().map(|(i, p)| (i, p * 0.49)).collect();
        let a = table(0.0, &pts);
        let cfg = BuildConfig::default();
        let c = BuildCounters::default();
        let recs = build_interval(&a, &a, &Aabb::unit(), 0, &cfg, &c).unwrap();
        let root = &recs[0];
        assert_eq!(root.path, NodePath::ROOT);
        assert_eq!(root.child_mask, 0b0000_0001);
        assert_eq!(root.count, 16_000);
        assert!(recs.iter().all(|r| r.count <= 16_000));
    }

    #[test]
    fn coincident_points_stop_at_max_depth() {
        let pts: Vec<_> = (0..50).map(|i| (i, Vec3::splat(0.3))).collect();
        let a = table(0.0, &pts);
        let cfg = BuildConfig {
            node_capacity: 10,
            max_depth: 4,
            ..Default::default()
        };
        let c = BuildCounters::default();
        let recs = build_interval(&a, &a, &Aabb::unit(), 0, &cfg, &c).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(c.overfull_nodes.load(Ordering::Relaxed), 1);
        let leaf = recs.iter().find(|r| r.child_mask == 0).unwrap();
        assert_eq!(leaf.path.depth(), 4);
        assert_eq!(leaf.count, 50);
    }

    #[test]
    fn static_pairing_repeats_start() {
        let a = table(0.0, &points(300));
        let lookup = EndLookup::new(&a);
        let p = NodePoints {
            id: a.id.clone(),
            row: (0..a.len()).collect(),
            pos: a.pos.clone(),
            size: a.size.clone(),
            mass: a.mass.clone(),
            weight: vec![1.0; a.len()],
        };
        let ends = pair_timesteps(&p, &lookup);
        assert_eq!(ends.pos, a.pos);
        assert_eq!(ends.missing, 0);
        let cell = Aabb::new(Vec3::splat(-10.0), Vec3::splat(10.0));
        let (block, _) = make_block(NodePath::ROOT, 0, cell, &p, &ends).unwrap();
        assert_eq!(block.qpos_start, block.qpos_end);
        assert_eq!(block.box_start, block.box_end);
    }

    #[test]
    fn moved_particle_end_position() {
        let mut pts = points(50);
        let a = table(0.0, &pts);
        pts[7].1.x += 1.0;
        let b = table(1.0, &pts);
        let c = BuildCounters::default();
        let root = Aabb::new(Vec3::ZERO, Vec3::splat(2.0));
        let recs = build_interval(&a, &b, &root, 0, &BuildConfig::default(), &c).unwrap();
        let blk = read_block(&recs[0].bytes, None).unwrap();
        let i = blk.id.iter().position(|&id| id == 7).unwrap();
        let s = dequantize(blk.qpos_start[i], &blk.box_start);
        let e = dequantize(blk.qpos_end[i], &blk.box_end);
        let tol = crate::geom::quantization_bound(&blk.box_end).x + crate::geom::quantization_bound(&blk.box_start).x;
        assert!((e.x - s.x - 1.0).abs() <= tol, "{} vs {}", e.x - s.x, tol);
    }

    #[test]
    fn missing_id_falls_back_to_start() {
        let pts = points(10);
        let a = table(0.0, &pts);
        let b = table(1.0, &pts[1..]);
        let c = BuildCounters::default();
        let recs = build_interval(&a, &b, &Aabb::unit(), 0, &BuildConfig::default(), &c).unwrap();
        assert_eq!(c.missing_pairs.load(Ordering::Relaxed), 1);
        let blk = read_block(&recs[0].bytes, None).unwrap();
        let i = blk.id.iter().position(|&id| id == 0).unwrap();
        let s = blk.start_position(i);
        let e = blk.end_position(i);
        assert!((s - e).length() < 1e-4);
    }

    #[test]
    fn parent_reps_come_from_children() {
        let a = table(0.0, &points(5000));
        let cfg = BuildConfig {
            node_capacity: 200,
            ..Default::default()
        };
        let c = BuildCounters::default();
        let recs = build_interval(&a, &a, &Aabb::unit(), 0, &cfg, &c).unwrap();
        let blocks: HashMap<NodePath, Block> = recs
            .iter()
            .map(|r| (r.path, read_block(&r.bytes, Some(200)).unwrap()))
            .collect();
        for (path, b) in &blocks {
            let wsum: f64 = b.weight_start.iter().map(|&w| f64::from(w)).sum();
            let rec = recs.iter().find(|r| r.path == *path).unwrap();
            if rec.child_mask == 0 {
                continue;
            }
            let mut child_ids = std::collections::HashSet::new();
            let mut child_w = 0.0;
            for o in 0..8 {
                if let Some(cb) = blocks.get(&path.child(o).unwrap()) {
                    child_ids.extend(cb.id.iter().copied());
                    child_w += cb.weight_start.iter().map(|&w| f64::from(w)).sum::<f64>();
                }
            }
            assert!(b.id.iter().all(|id| child_ids.contains(id)));
            assert!(((wsum - child_w) / child_w).abs() < 1e-6);
        }
    }
}
