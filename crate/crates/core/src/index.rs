//! Per-interval octree index: one fixed-size record per node, sorted by
//! locational code.
//!
//! Record layout (32 bytes, little-endian): path `u64`, child mask `u8`,
//! 3 zero bytes, count `u32`, byte offset `u64`, byte length `u32`,
//! 4 zero bytes.

use std::io::{Read, Write};

use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::geom::NodePath;

pub const INDEX_RECORD_BYTES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub path: NodePath,
    pub child_mask: u8,
    pub count: u32,
    pub offset: u64,
    pub length: u32,
}

impl IndexEntry {
    pub fn is_leaf(&self) -> bool {
        self.child_mask == 0
    }

    pub fn has_child(&self, octant: u8) -> bool {
        self.child_mask & (1 << octant) != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeIndex {
    entries: Vec<IndexEntry>,
}

impl TreeIndex {
    /// Wraps `entries`, which must already satisfy [`TreeIndex::validate`].
    pub fn new(entries: Vec<IndexEntry>) -> Result<Self> {
        let idx = TreeIndex { entries };
        idx.validate()?;
        Ok(idx)
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn root(&self) -> &IndexEntry {
        &self.entries[0]
    }

    pub fn get(&self, path: NodePath) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by_key(&path, |e| e.path)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn children(&self, entry: &IndexEntry) -> impl Iterator<Item = &IndexEntry> + '_ {
        let e = *entry;
        (0..8u8)
            .filter(move |&o| e.has_child(o))
            .filter_map(move |o| e.path.child(o).ok().and_then(|p| self.get(p)))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(|e| e.is_leaf())
    }

    /// Checks ordering, root presence, parent closure, child masks and that
    /// byte ranges do not overlap.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .entries
            .first()
            .ok_or_else(|| Error::InvalidIndex("index has no entries".into()))?;
        if first.path != NodePath::ROOT {
            return Err(Error::InvalidIndex("first entry is not the root".into()));
        }
        for w in self.entries.windows(2) {
            if w[0].path >= w[1].path {
                return Err(Error::InvalidIndex(format!(
                    "entries not strictly sorted: {} then {}",
                    w[0].path, w[1].path
                )));
            }
        }
        for e in &self.entries {
            let mut expected = 0u8;
            if e.path.depth() < crate::geom::MAX_DEPTH {
                for o in 0..8u8 {
                    if self.get(e.path.child(o)?).is_some() {
                        expected |= 1 << o;
                    }
                }
            }
            if expected != e.child_mask {
                return Err(Error::InvalidIndex(format!(
                    "node {} has child mask {:#04x} but children {:#04x}",
                    e.path, e.child_mask, expected
                )));
            }
            if e.path != NodePath::ROOT {
                let parent = e.path.parent()?;
                if self.get(parent).is_none() {
                    return Err(Error::InvalidIndex(format!(
                        "orphan node {}: parent {} missing",
                        e.path, parent
                    )));
                }
            }
        }
        let mut ranges: Vec<(u64, u64)> = self
            .entries
            .iter()
            .map(|e| (e.offset, e.offset + u64::from(e.length)))
            .collect();
        ranges.sort_unstable();
        for w in ranges.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::InvalidIndex(format!(
                    "byte ranges overlap at offset {}",
                    w[1].0
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * INDEX_RECORD_BYTES);
        for e in &self.entries {
            out.extend_from_slice(&e.path.code().to_le_bytes());
            out.push(e.child_mask);
            out.extend_from_slice(&[0; 3]);
            out.extend_from_slice(&e.count.to_le_bytes());
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.length.to_le_bytes());
            out.extend_from_slice(&[0; 4]);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if !buf.len().is_multiple_of(INDEX_RECORD_BYTES) {
            return Err(Error::Truncated {
                what: "index",
                needed: buf.len().next_multiple_of(INDEX_RECORD_BYTES),
                available: buf.len(),
            });
        }
        let mut r = Reader::new(buf, "index");
        let mut entries = Vec::with_capacity(buf.len() / INDEX_RECORD_BYTES);
        while r.position() < buf.len() {
            let path = NodePath::from_code(r.u64()?)?;
            let child_mask = r.u8()?;
            r.take(3)?;
            let count = r.u32()?;
            let offset = r.u64()?;
            let length = r.u32()?;
            r.take(4)?;
            entries.push(IndexEntry {
                path,
                child_mask,
                count,
                offset,
                length,
            });
        }
        TreeIndex::new(entries)
    }
}

pub fn write_index<W: Write>(index: &TreeIndex, mut out: W) -> Result<usize> {
    let bytes = index.to_bytes();
    out.write_all(&bytes)?;
    Ok(bytes.len())
}

pub fn read_index<R: Read>(mut src: R) -> Result<TreeIndex> {
    let mut buf = Vec::new();
    src.read_to_end(&mut buf)?;
    TreeIndex::from_bytes(&buf)
}
