//! Byte-bounded least-recently-touched residency cache.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CacheState<K> {
    capacity: u64,
    used: u64,
    clock: u64,
    resident: HashMap<K, (u64, u64)>,
    by_touch: BTreeMap<u64, K>,
}

impl<K: Clone + Eq + Hash> CacheState<K> {
    pub fn new(capacity_bytes: u64) -> Self {
        CacheState {
            capacity: capacity_bytes,
            used: 0,
            clock: 0,
            resident: HashMap::new(),
            by_touch: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used_bytes(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.resident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resident.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.resident.contains_key(key)
    }

    /// Marks `key` resident with `bytes` and a fresh stamp, then evicts the
    /// least recently touched other keys until the total fits. Returns the
    /// evicted keys, oldest first.
    pub fn touch(&mut self, key: K, bytes: u64) -> Result<Vec<K>> {
        if bytes > self.capacity {
            return Err(Error::CacheItemTooLarge {
                bytes,
                capacity: self.capacity,
            });
        }
        self.clock += 1;
        if let Some((old_bytes, old_stamp)) = self.resident.remove(&key) {
            self.by_touch.remove(&old_stamp);
            self.used -= old_bytes;
        }
        self.resident.insert(key.clone(), (bytes, self.clock));
        self.by_touch.insert(self.clock, key);
        self.used += bytes;

        let mut evicted = Vec::new();
        while self.used > self.capacity {
            let (&stamp, _) = self.by_touch.iter().next().expect("over capacity implies entries");
            let victim = self.by_touch.remove(&stamp).expect("present");
            let (b, _) = self.resident.remove(&victim).expect("resident");
            self.used -= b;
            evicted.push(victim);
        }
        Ok(evicted)
    }
}
