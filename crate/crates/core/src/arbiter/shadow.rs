//! Bounded FIFO of recently evicted key hashes.

use std::collections::{HashMap, VecDeque};

use fnv::FnvBuildHasher;

use crate::types::KeyHash;

pub const DEFAULT_SHADOW_QUEUE_BYTES: u64 = 10 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ShadowQueue {
    /// Insertion order; entries whose id no longer matches `live` are stale.
    order: VecDeque<(u64, KeyHash, u32)>,
    live: HashMap<KeyHash, (u64, u32), FnvBuildHasher>,
    represented: u64,
    capacity: u64,
    next_id: u64,
}

impl ShadowQueue {
    pub fn new(capacity_bytes: u64) -> Self {
        ShadowQueue {
            order: VecDeque::new(),
            live: HashMap::default(),
            represented: 0,
            capacity: capacity_bytes,
            next_id: 0,
        }
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity
    }

    /// Sum of item lengths currently represented.
    pub fn represented_bytes(&self) -> u64 {
        self.represented
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn contains(&self, hash: KeyHash) -> bool {
        self.live.contains_key(&hash)
    }

    /// Records an evicted item, dropping the oldest entries past capacity.
    pub fn push(&mut self, hash: KeyHash, length: u32) {
        if let Some((_, old_len)) = self.live.remove(&hash) {
            self.represented -= old_len as u64;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.order.push_back((id, hash, length));
        self.live.insert(hash, (id, length));
        self.represented += length as u64;
        while self.represented > self.capacity {
            self.pop_oldest();
        }
        if self.order.len() > 2 * self.live.len() + 64 {
            let live = &self.live;
            self.order
                .retain(|(id, h, _)| live.get(h).is_some_and(|(lid, _)| lid == id));
        }
    }

    fn pop_oldest(&mut self) {
        while let Some((id, hash, len)) = self.order.pop_front() {
            if self.live.get(&hash).is_some_and(|(lid, _)| *lid == id) {
                self.live.remove(&hash);
                self.represented -= len as u64;
                return;
            }
        }
    }

    /// Removes `hash` if present. A hit means the key was evicted recently
    /// enough that a slightly larger allocation would have kept it.
    pub fn take(&mut self, hash: KeyHash) -> bool {
        match self.live.remove(&hash) {
            Some((_, len)) => {
                self.represented -= len as u64;
                true
            }
            None => false,
        }
    }
}
