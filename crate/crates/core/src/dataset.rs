//! On-disk dataset directory: `meta.json`, plus `blocks_{s}.bin` and
//! `index_{s}.bin` for every interval `s`.

use std::fs::{self, File};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::block::{read_block, Block};
use crate::error::{Error, Result};
use crate::geom::{Aabb, NodePath};
use crate::index::{IndexEntry, TreeIndex};

pub const META_FILE: &str = "meta.json";
pub const DATASET_FORMAT: &str = "cosmolod-dataset/1";

pub fn blocks_file(dir: &Path, interval: usize) -> PathBuf {
    dir.join(format!("blocks_{interval}.bin"))
}

pub fn index_file(dir: &Path, interval: usize) -> PathBuf {
    dir.join(format!("index_{interval}.bin"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format: String,
    pub root: Aabb,
    pub node_capacity: usize,
    pub alpha: f64,
    pub seed: u64,
    pub max_depth: u32,
    pub snapshot_times: Vec<f64>,
    /// Raw particle count of every snapshot.
    pub raw_counts: Vec<u64>,
    /// Node count of every interval's tree.
    pub node_counts: Vec<u64>,
}

impl DatasetMeta {
    pub fn intervals(&self) -> usize {
        self.snapshot_times.len().saturating_sub(1)
    }

    pub fn time_span(&self) -> (f64, f64) {
        (
            self.snapshot_times[0],
            *self.snapshot_times.last().expect("at least two snapshots"),
        )
    }

    /// Interval containing `t` and the interpolation fraction within it.
    /// Intervals are right-open except the last, which is closed.
    pub fn locate_time(&self, t: f64) -> Result<(usize, f64)> {
        crate::render::locate(&self.snapshot_times, t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != DATASET_FORMAT {
            return Err(Error::Invalid(format!("unknown dataset format {:?}", self.format)));
        }
        if self.snapshot_times.len() < 2 {
            return Err(Error::Invalid("dataset needs at least two snapshots".into()));
        }
        if self.snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("snapshot times must increase strictly".into()));
        }
        if !self.root.is_valid() {
            return Err(Error::Invalid("invalid root box".into()));
        }
        Ok(())
    }
}

/// A dataset opened read-only: parsed metadata, validated indexes and open
/// block files. Safe to share between threads.
#[derive(Debug)]
pub struct Dataset {
    dir: PathBuf,
    meta: DatasetMeta,
    meta_bytes: Vec<u8>,
    indexes: Vec<TreeIndex>,
    blocks: Vec<File>,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let meta_path = dir.join(META_FILE);
        let meta_bytes = fs::read(&meta_path).map_err(|e| Error::from(e).in_file(&meta_path))?;
        let meta: DatasetMeta =
            serde_json::from_slice(&meta_bytes).map_err(|e| Error::from(e).in_file(&meta_path))?;
        meta.validate().map_err(|e| e.in_file(&meta_path))?;
        let mut indexes = Vec::with_capacity(meta.intervals());
        let mut blocks = Vec::with_capacity(meta.intervals());
        for s in 0..meta.intervals() {
            let ip = index_file(&dir, s);
            let bytes = fs::read(&ip).map_err(|e| Error::from(e).in_file(&ip))?;
            indexes.push(TreeIndex::from_bytes(&bytes).map_err(|e| e.in_file(&ip))?);
            let bp = blocks_file(&dir, s);
            blocks.push(File::open(&bp).map_err(|e| Error::from(e).in_file(&bp))?);
        }
        Ok(Dataset {
            dir,
            meta,
            meta_bytes,
            indexes,
            blocks,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// `meta.json` exactly as stored.
    pub fn meta_bytes(&self) -> &[u8] {
        &self.meta_bytes
    }

    pub fn intervals(&self) -> usize {
        self.indexes.len()
    }

    pub fn index(&self, interval: usize) -> Option<&TreeIndex> {
        self.indexes.get(interval)
    }

    pub fn node_box(&self, path: NodePath) -> Aabb {
        path.aabb(&self.meta.root)
    }

    pub fn entry(&self, interval: usize, path: NodePath) -> Option<&IndexEntry> {
        self.index(interval)?.get(path)
    }

    /// Raw bytes of one block record, or `None` if the node does not exist.
    pub fn block_bytes(&self, interval: usize, path: NodePath) -> Result<Option<Vec<u8>>> {
        let Some(entry) = self.entry(interval, path) else {
            return Ok(None);
        };
        let mut buf = vec![0u8; entry.length as usize];
        self.blocks[interval]
            .read_exact_at(&mut buf, entry.offset)
            .map_err(|e| Error::from(e).in_file(blocks_file(&self.dir, interval)))?;
        Ok(Some(buf))
    }

    pub fn block(&self, interval: usize, path: NodePath) -> Result<Option<Block>> {
        let Some(bytes) = self.block_bytes(interval, path)? else {
            return Ok(None);
        };
        let entry = self.entry(interval, path).expect("present");
        let block = read_block(&bytes, Some(entry.count as usize))?;
        if block.path != path || block.interval as usize != interval || block.len() != entry.count as usize {
            return Err(Error::InvalidIndex(format!(
                "block at {path} (interval {interval}) does not match its index entry"
            )));
        }
        Ok(Some(block))
    }

    /// Reads every block of `interval` in index order.
    pub fn blocks(&self, interval: usize) -> Result<Vec<Block>> {
        let index = self
            .index(interval)
            .ok_or_else(|| Error::Invalid(format!("no interval {interval}")))?;
        index
            .entries()
            .iter()
            .map(|e| Ok(self.block(interval, e.path)?.expect("indexed")))
            .collect()
    }
}
