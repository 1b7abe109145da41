//! Sharded hash index from `(app, key)` to the record's log location.
//!
//! Each shard has its own lock. Access metadata (last access time and access
//! count) lives in the entry so that reads never write to segment memory.

use std::collections::HashMap;

use fnv::FnvBuildHasher;
use parking_lot::Mutex;

use crate::types::{key_hash, AppId, Timestamp};

use super::segment::SegmentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LogLocation {
    pub segment: SegmentId,
    pub offset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub location: LogLocation,
    /// Total record size in bytes, header included.
    pub size: u32,
    pub last_access: Timestamp,
    pub frequency: u32,
    /// Global access sequence number; breaks ties between equal timestamps.
    pub seq: u64,
}

type Shard = HashMap<AppId, HashMap<Box<[u8]>, IndexEntry, FnvBuildHasher>, FnvBuildHasher>;

pub struct HashIndex {
    shards: Box<[Mutex<Shard>]>,
}

impl HashIndex {
    pub fn new(buckets: usize) -> Self {
        let buckets = buckets.max(1).next_power_of_two();
        HashIndex {
            shards: (0..buckets).map(|_| Mutex::new(Shard::default())).collect(),
        }
    }

    pub fn bucket_count(&self) -> usize {
        self.shards.len()
    }

    fn shard(&self, app: AppId, key: &[u8]) -> &Mutex<Shard> {
        let h = key_hash(key) ^ (app.0 as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        &self.shards[(h as usize) & (self.shards.len() - 1)]
    }

    pub fn get(&self, app: AppId, key: &[u8]) -> Option<IndexEntry> {
        self.shard(app, key)
            .lock()
            .get(&app)
            .and_then(|m| m.get(key))
            .copied()
    }

    /// Records an access and returns the entry as it was before.
    pub fn touch(&self, app: AppId, key: &[u8], now: Timestamp, seq: u64) -> Option<IndexEntry> {
        let mut shard = self.shard(app, key).lock();
        let entry = shard.get_mut(&app)?.get_mut(key)?;
        let before = *entry;
        entry.last_access = entry.last_access.max(now);
        entry.frequency = entry.frequency.saturating_add(1);
        entry.seq = entry.seq.max(seq);
        Some(before)
    }

    /// Inserts or replaces, returning the displaced entry.
    pub fn insert(&self, app: AppId, key: &[u8], entry: IndexEntry) -> Option<IndexEntry> {
        let mut shard = self.shard(app, key).lock();
        let per_app = shard.entry(app).or_default();
        match per_app.get_mut(key) {
            Some(slot) => Some(std::mem::replace(slot, entry)),
            None => {
                per_app.insert(key.into(), entry);
                None
            }
        }
    }

    pub fn remove(&self, app: AppId, key: &[u8]) -> Option<IndexEntry> {
        let mut shard = self.shard(app, key).lock();
        let per_app = shard.get_mut(&app)?;
        let removed = per_app.remove(key);
        if per_app.is_empty() {
            shard.remove(&app);
        }
        removed
    }

    /// Removes the entry only if it still points at `at`.
    pub fn remove_if_at(&self, app: AppId, key: &[u8], at: LogLocation) -> Option<IndexEntry> {
        let mut shard = self.shard(app, key).lock();
        let per_app = shard.get_mut(&app)?;
        if per_app.get(key)?.location != at {
            return None;
        }
        let removed = per_app.remove(key);
        if per_app.is_empty() {
            shard.remove(&app);
        }
        removed
    }

    /// Repoints the entry from `from` to `to`; fails if it moved or vanished.
    pub fn relocate_if_at(
        &self,
        app: AppId,
        key: &[u8],
        from: LogLocation,
        to: LogLocation,
    ) -> bool {
        let mut shard = self.shard(app, key).lock();
        match shard.get_mut(&app).and_then(|m| m.get_mut(key)) {
            Some(entry) if entry.location == from => {
                entry.location = to;
                true
            }
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.shards
            .iter()
            .map(|s| s.lock().values().map(HashMap::len).sum::<usize>())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copies out every entry. Shards are visited one at a time, so the
    /// result is only a consistent snapshot when the index is quiescent.
    pub fn snapshot(&self) -> Vec<(AppId, Box<[u8]>, IndexEntry)> {
        let mut out = Vec::new();
        for shard in self.shards.iter() {
            let shard = shard.lock();
            for (app, entries) in shard.iter() {
                for (key, entry) in entries {
                    out.push((*app, key.clone(), *entry));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(segment: u32, offset: u32) -> LogLocation {
        LogLocation {
            segment: SegmentId(segment),
            offset,
        }
    }

    fn entry(at: LogLocation) -> IndexEntry {
        IndexEntry {
            location: at,
            size: 10,
            last_access: 0,
            frequency: 1,
            seq: 0,
        }
    }

    #[test]
    fn apps_have_separate_namespaces() {
        let index = HashIndex::new(8);
        index.insert(AppId(1), b"k", entry(loc(0, 0)));
        index.insert(AppId(2), b"k", entry(loc(0, 64)));
        assert_eq!(index.get(AppId(1), b"k").unwrap().location, loc(0, 0));
        assert_eq!(index.get(AppId(2), b"k").unwrap().location, loc(0, 64));
        assert_eq!(index.len(), 2);
    }

    #[test]
    fn conditional_updates_check_location() {
        let index = HashIndex::new(8);
        index.insert(AppId(1), b"k", entry(loc(0, 0)));
        assert!(!index.relocate_if_at(AppId(1), b"k", loc(0, 8), loc(1, 0)));
        assert!(index.relocate_if_at(AppId(1), b"k", loc(0, 0), loc(1, 0)));
        assert!(index.remove_if_at(AppId(1), b"k", loc(0, 0)).is_none());
        assert!(index.remove_if_at(AppId(1), b"k", loc(1, 0)).is_some());
        assert!(index.is_empty());
    }

    #[test]
    fn touch_is_monotone() {
        let index = HashIndex::new(1);
        index.insert(AppId(1), b"k", entry(loc(0, 0)));
        index.touch(AppId(1), b"k", 50, 3);
        let before = index.touch(AppId(1), b"k", 20, 1).unwrap();
        assert_eq!(before.last_access, 50);
        let now = index.get(AppId(1), b"k").unwrap();
        assert_eq!(now.last_access, 50);
        assert_eq!(now.frequency, 3);
        assert_eq!(now.seq, 3);
    }
}
