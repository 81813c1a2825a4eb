use std::collections::HashMap;
use std::sync::Arc;
use std::time::SystemTime;

use cosmolod_core::hash::splitmix64;
use cosmolod_core::selection::SelectionSet;

/// Live selection tokens kept by the server.
pub const MAX_LIVE_TOKENS: usize = 16;

#[derive(Debug)]
pub struct Registered {
    pub set: Arc<SelectionSet>,
    pub created: SystemTime,
    last_used: u64,
}

/// Token table with least-recently-used eviction beyond
/// [`MAX_LIVE_TOKENS`]. Tokens are a bijective mix of a per-table counter,
/// so they never repeat within one server lifetime.
#[derive(Debug)]
pub struct SelectionTable {
    salt: u64,
    next: u64,
    clock: u64,
    live: HashMap<u64, Registered>,
}

impl SelectionTable {
    pub fn new(salt: u64) -> Self {
        SelectionTable {
            salt,
            next: 0,
            clock: 0,
            live: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn register(&mut self, set: SelectionSet) -> u64 {
        // splitmix64 is a bijection, and the counter never repeats.
        let token = splitmix64(self.next.wrapping_add(self.salt));
        self.next += 1;
        self.clock += 1;
        self.live.insert(
            token,
            Registered {
                set: Arc::new(set),
                created: SystemTime::now(),
                last_used: self.clock,
            },
        );
        while self.live.len() > MAX_LIVE_TOKENS {
            let oldest = self
                .live
                .iter()
                .min_by_key(|(_, r)| r.last_used)
                .map(|(&t, _)| t)
                .expect("non-empty");
            self.live.remove(&oldest);
        }
        token
    }

    pub fn get(&mut self, token: u64) -> Option<Arc<SelectionSet>> {
        self.clock += 1;
        let clock = self.clock;
        self.live.get_mut(&token).map(|r| {
            r.last_used = clock;
            Arc::clone(&r.set)
        })
    }
}

pub fn format_token(token: u64) -> String {
    format!("{token:016x}")
}

pub fn parse_token(s: &str) -> Option<u64> {
    (s.len() == 16)
        .then(|| u64::from_str_radix(s, 16).ok())
        .flatten()
}
