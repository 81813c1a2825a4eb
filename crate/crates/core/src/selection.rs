//! Sets of highlighted particle ids and per-block membership bitmasks.

use crate::error::{Error, Result};

/// Largest accepted selection (2^20 ids).
pub const MAX_SELECTION: usize = 1 << 20;

/// Sorted, deduplicated id set of at most [`MAX_SELECTION`] ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SelectionSet {
    ids: Vec<u64>,
}

impl SelectionSet {
    /// Builds a set from a raw list; the cap applies to the list as given.
    pub fn new(mut ids: Vec<u64>) -> Result<Self> {
        if ids.len() > MAX_SELECTION {
            return Err(Error::SelectionTooLarge {
                len: ids.len(),
                cap: MAX_SELECTION,
            });
        }
        ids.sort_unstable();
        ids.dedup();
        Ok(SelectionSet { ids })
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.binary_search(&id).is_ok()
    }
}

/// Bit `i` (LSB-first within each byte) is set iff `block_ids[i]` is selected.
pub fn selection_flags(block_ids: &[u64], sel: &SelectionSet) -> Vec<u8> {
    let mut mask = vec![0u8; block_ids.len().div_ceil(8)];
    for (i, &id) in block_ids.iter().enumerate() {
        if sel.contains(id) {
            mask[i / 8] |= 1 << (i % 8);
        }
    }
    mask
}
