//! Slab allocator with power-of-two chunk classes and LRU eviction.
//!
//! Memory is carved into fixed-size slabs. A slab is assigned to one chunk
//! class the first time that class needs room and is never reassigned.
//! Items live in the smallest class whose chunk holds header, key and value.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::RECORD_HEADER_LEN;
use crate::types::AppId;

/// Per-item overhead, identical to the log record header.
pub const SLAB_ITEM_HEADER: usize = RECORD_HEADER_LEN;
pub const MIN_CHUNK_SIZE: usize = 64;
pub const DEFAULT_SLAB_SIZE: usize = 1 << 20;

/// Chunk size of the smallest class `64 * 2^i` that holds `item_bytes`
/// (header included). Chunks never exceed the slab size.
pub fn class_for_size(item_bytes: usize, slab_size: usize) -> Result<usize> {
    if item_bytes > slab_size {
        return Err(Error::OversizeObject {
            size: item_bytes,
            limit: slab_size,
        });
    }
    let chunk = item_bytes
        .max(MIN_CHUNK_SIZE)
        .next_power_of_two()
        .max(MIN_CHUNK_SIZE);
    Ok(chunk.min(slab_size))
}

fn class_index(chunk: usize) -> usize {
    (chunk / MIN_CHUNK_SIZE).trailing_zeros() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlabMode {
    /// Each application owns whole slabs up to its cap and evicts only its
    /// own items.
    Partitioned { caps: BTreeMap<AppId, usize> },
    /// One LRU per class shared by every application.
    GreedyShared { apps: Vec<AppId> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    /// Sum of stored item sizes.
    pub live_bytes: u64,
    /// Sum of chunk sizes over occupied chunks.
    pub allocated_bytes: u64,
    /// Bytes of slabs handed to any class.
    pub slab_bytes: u64,
    pub fragmentation: f64,
}

impl UtilizationReport {
    pub fn utilization(&self) -> f64 {
        1.0 - self.fragmentation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlabSet {
    Stored,
    /// No chunk of the item's class could be obtained.
    NotStored,
}

const NIL: usize = usize::MAX;

#[derive(Debug)]
struct Node {
    app: AppId,
    key: Box<[u8]>,
    value: Box<[u8]>,
    size: usize,
    pool: usize,
    prev: usize,
    next: usize,
}

/// Chunks of one class available to one eviction domain.
#[derive(Debug, Default, Clone)]
struct Pool {
    chunk: usize,
    owner: Option<AppId>,
    chunks: usize,
    used: usize,
    head: usize,
    tail: usize,
}

pub struct SlabCache {
    slab_size: usize,
    total_slabs: usize,
    allocated_slabs: usize,
    mode: SlabMode,
    slabs_by_app: BTreeMap<AppId, usize>,
    class_slabs: Vec<usize>,
    pools: Vec<Pool>,
    pool_ids: HashMap<(Option<AppId>, usize), usize>,
    nodes: Vec<Node>,
    free_nodes: Vec<usize>,
    items: HashMap<AppId, HashMap<Box<[u8]>, usize>>,
    item_count: usize,
    live_bytes: u64,
    chunk_bytes: u64,
    evictions: u64,
}

impl SlabCache {
    pub fn new(total_memory: usize, slab_size: usize, mode: SlabMode) -> Result<Self> {
        if slab_size < MIN_CHUNK_SIZE {
            return Err(Error::Config(format!(
                "slab size must be at least {MIN_CHUNK_SIZE} bytes"
            )));
        }
        let total_slabs = total_memory / slab_size;
        if let SlabMode::Partitioned { caps } = &mode {
            let sum: usize = caps.values().sum();
            if sum > total_slabs {
                return Err(Error::Config(format!(
                    "partition caps of {sum} slabs exceed the {total_slabs} available"
                )));
            }
        }
        let classes = class_index(slab_size) + 1;
        Ok(SlabCache {
            slab_size,
            total_slabs,
            allocated_slabs: 0,
            mode,
            slabs_by_app: BTreeMap::new(),
            class_slabs: vec![0; classes],
            pools: Vec::new(),
            pool_ids: HashMap::new(),
            nodes: Vec::new(),
            free_nodes: Vec::new(),
            items: HashMap::new(),
            item_count: 0,
            live_bytes: 0,
            chunk_bytes: 0,
            evictions: 0,
        })
    }

    /// Splits `total_memory` into whole-slab caps proportional to `shares`.
    pub fn partition_caps(
        total_memory: usize,
        slab_size: usize,
        shares: &[(AppId, f64)],
    ) -> BTreeMap<AppId, usize> {
        let slabs = (total_memory / slab_size) as f64;
        let sum: f64 = shares.iter().map(|(_, s)| s).sum();
        shares
            .iter()
            .map(|(a, s)| {
                (
                    *a,
                    if sum > 0.0 {
                        (slabs * s / sum).floor() as usize
                    } else {
                        0
                    },
                )
            })
            .collect()
    }

    pub fn mode(&self) -> &SlabMode {
        &self.mode
    }

    pub fn slab_size(&self) -> usize {
        self.slab_size
    }

    pub fn total_bytes(&self) -> usize {
        self.total_slabs * self.slab_size
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn len(&self) -> usize {
        self.item_count
    }

    pub fn is_empty(&self) -> bool {
        self.item_count == 0
    }

    fn find(&self, app: AppId, key: &[u8]) -> Option<usize> {
        self.items.get(&app).and_then(|m| m.get(key)).copied()
    }

    fn check_app(&self, app: AppId) -> Result<()> {
        let known = match &self.mode {
            SlabMode::Partitioned { caps } => caps.contains_key(&app),
            SlabMode::GreedyShared { apps } => apps.contains(&app),
        };
        if known {
            Ok(())
        } else {
            Err(Error::UnknownApp(app))
        }
    }

    pub fn get(&mut self, app: AppId, key: &[u8]) -> Result<Option<&[u8]>> {
        self.check_app(app)?;
        let Some(id) = self.find(app, key) else {
            return Ok(None);
        };
        let pool = self.nodes[id].pool;
        self.unlink(pool, id);
        self.push_front(pool, id);
        Ok(Some(&self.nodes[id].value))
    }

    pub fn set(&mut self, app: AppId, key: &[u8], value: &[u8]) -> Result<SlabSet> {
        self.check_app(app)?;
        let size = SLAB_ITEM_HEADER + key.len() + value.len();
        let chunk = class_for_size(size, self.slab_size)?;
        self.delete(app, key)?;

        let owner = match self.mode {
            SlabMode::Partitioned { .. } => Some(app),
            SlabMode::GreedyShared { .. } => None,
        };
        let pool = self.pool(owner, chunk);
        if self.pools[pool].used == self.pools[pool].chunks && !self.grow(pool, app) {
            let victim = self.pools[pool].tail;
            if victim == NIL {
                return Ok(SlabSet::NotStored);
            }
            self.remove_node(victim);
            self.evictions += 1;
        }

        let node = Node {
            app,
            key: key.into(),
            value: value.into(),
            size,
            pool,
            prev: NIL,
            next: NIL,
        };
        let id = match self.free_nodes.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        self.items.entry(app).or_default().insert(key.into(), id);
        self.item_count += 1;
        self.pools[pool].used += 1;
        self.push_front(pool, id);
        self.live_bytes += size as u64;
        self.chunk_bytes += chunk as u64;
        Ok(SlabSet::Stored)
    }

    pub fn delete(&mut self, app: AppId, key: &[u8]) -> Result<bool> {
        self.check_app(app)?;
        match self.find(app, key) {
            Some(id) => {
                self.remove_node(id);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn utilization_report(&self) -> UtilizationReport {
        UtilizationReport {
            live_bytes: self.live_bytes,
            allocated_bytes: self.chunk_bytes,
            slab_bytes: (self.allocated_slabs * self.slab_size) as u64,
            fragmentation: if self.chunk_bytes == 0 {
                0.0
            } else {
                1.0 - self.live_bytes as f64 / self.chunk_bytes as f64
            },
        }
    }

    /// Slab bytes assigned to each chunk class, keyed by chunk size.
    pub fn class_allocation(&self) -> BTreeMap<usize, usize> {
        self.class_slabs
            .iter()
            .enumerate()
            .filter(|(_, n)| **n > 0)
            .map(|(i, n)| (MIN_CHUNK_SIZE << i, n * self.slab_size))
            .collect()
    }

    /// Item bytes stored per application.
    pub fn live_bytes_by_app(&self) -> BTreeMap<AppId, u64> {
        self.items
            .iter()
            .map(|(app, m)| (*app, m.values().map(|&id| self.nodes[id].size as u64).sum()))
            .collect()
    }

    pub fn slabs_by_app(&self) -> &BTreeMap<AppId, usize> {
        &self.slabs_by_app
    }

    fn pool(&mut self, owner: Option<AppId>, chunk: usize) -> usize {
        *self.pool_ids.entry((owner, chunk)).or_insert_with(|| {
            self.pools.push(Pool {
                chunk,
                owner,
                head: NIL,
                tail: NIL,
                ..Default::default()
            });
            self.pools.len() - 1
        })
    }

    /// Assigns a fresh slab to `pool` if memory and the owner's cap allow.
    fn grow(&mut self, pool: usize, app: AppId) -> bool {
        if self.allocated_slabs >= self.total_slabs {
            return false;
        }
        if let (SlabMode::Partitioned { caps }, Some(owner)) = (&self.mode, self.pools[pool].owner)
        {
            let owned = self.slabs_by_app.get(&owner).copied().unwrap_or(0);
            if owned >= caps.get(&owner).copied().unwrap_or(0) {
                return false;
            }
        }
        let chunk = self.pools[pool].chunk;
        self.allocated_slabs += 1;
        *self
            .slabs_by_app
            .entry(self.pools[pool].owner.unwrap_or(app))
            .or_insert(0) += 1;
        self.class_slabs[class_index(chunk)] += 1;
        self.pools[pool].chunks += self.slab_size / chunk;
        true
    }

    fn remove_node(&mut self, id: usize) {
        let pool = self.nodes[id].pool;
        self.unlink(pool, id);
        let node = &mut self.nodes[id];
        let key = std::mem::take(&mut node.key);
        node.value = Box::default();
        if let Some(m) = self.items.get_mut(&node.app) {
            m.remove(&key);
        }
        self.item_count -= 1;
        self.live_bytes -= node.size as u64;
        self.chunk_bytes -= self.pools[pool].chunk as u64;
        self.pools[pool].used -= 1;
        self.free_nodes.push(id);
    }

    fn unlink(&mut self, pool: usize, id: usize) {
        let (prev, next) = (self.nodes[id].prev, self.nodes[id].next);
        if prev == NIL {
            self.pools[pool].head = next;
        } else {
            self.nodes[prev].next = next;
        }
        if next == NIL {
            self.pools[pool].tail = prev;
        } else {
            self.nodes[next].prev = prev;
        }
        self.nodes[id].prev = NIL;
        self.nodes[id].next = NIL;
    }

    fn push_front(&mut self, pool: usize, id: usize) {
        let head = self.pools[pool].head;
        self.nodes[id].prev = NIL;
        self.nodes[id].next = head;
        if head == NIL {
            self.pools[pool].tail = id;
        } else {
            self.nodes[head].prev = id;
        }
        self.pools[pool].head = id;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KIB: usize = 1024;

    fn value_for(total: usize, key: &[u8]) -> Vec<u8> {
        vec![7u8; total - SLAB_ITEM_HEADER - key.len()]
    }

    #[test]
    fn class_ladder() {
        assert_eq!(class_for_size(56, 1 << 20).unwrap(), 64);
        assert_eq!(class_for_size(576, 1 << 20).unwrap(), 1024);
        assert_eq!(class_for_size(64, 1 << 20).unwrap(), 64);
        assert_eq!(class_for_size(65, 1 << 20).unwrap(), 128);
        assert_eq!(class_for_size(1, 1 << 20).unwrap(), 64);
        assert_eq!(class_for_size(1 << 20, 1 << 20).unwrap(), 1 << 20);
        assert!(matches!(
            class_for_size((1 << 20) + 1, 1 << 20),
            Err(Error::OversizeObject { .. })
        ));
    }

    #[test]
    fn free_chunks_mean_no_eviction() {
        let mut c = SlabCache::new(
            4 * KIB,
            KIB,
            SlabMode::GreedyShared {
                apps: vec![AppId(1)],
            },
        )
        .unwrap();
        for i in 0..16u8 {
            let key = [i];
            assert_eq!(
                c.set(AppId(1), &key, &value_for(64, &key)).unwrap(),
                SlabSet::Stored
            );
        }
        assert_eq!(c.evictions(), 0);
        assert_eq!(c.len(), 16);
    }

    #[test]
    fn greedy_evicts_other_apps_tail() {
        let apps = vec![AppId(1), AppId(2)];
        let mut c = SlabCache::new(KIB, KIB, SlabMode::GreedyShared { apps }).unwrap();
        for i in 0..16u8 {
            let key = [i];
            c.set(AppId(2), &key, &value_for(64, &key)).unwrap();
        }
        c.set(AppId(1), b"a", &value_for(64, b"a")).unwrap();
        assert!(c.get(AppId(2), &[0]).unwrap().is_none());
        assert!(c.get(AppId(1), b"a").unwrap().is_some());
        assert_eq!(c.evictions(), 1);
    }

    #[test]
    fn partitioned_evicts_own_tail() {
        let caps = BTreeMap::from([(AppId(1), 1), (AppId(2), 1)]);
        let mut c = SlabCache::new(2 * KIB, KIB, SlabMode::Partitioned { caps }).unwrap();
        for i in 0..16u8 {
            c.set(AppId(2), &[i], &value_for(64, &[i])).unwrap();
            c.set(AppId(1), &[i], &value_for(64, &[i])).unwrap();
        }
        // Touch app 1's oldest so its second-oldest becomes the tail.
        assert!(c.get(AppId(1), &[0]).unwrap().is_some());
        c.set(AppId(1), b"new", &value_for(64, b"new")).unwrap();
        assert!(c.get(AppId(1), &[1]).unwrap().is_none());
        assert!(c.get(AppId(1), &[0]).unwrap().is_some());
        for i in 0..16u8 {
            assert!(c.get(AppId(2), &[i]).unwrap().is_some());
        }
    }

    #[test]
    fn class_without_slab_at_cap_is_not_stored() {
        let caps = BTreeMap::from([(AppId(1), 1)]);
        let mut c = SlabCache::new(2 * KIB, KIB, SlabMode::Partitioned { caps }).unwrap();
        c.set(AppId(1), b"s", &value_for(64, b"s")).unwrap();
        assert_eq!(
            c.set(AppId(1), b"b", &value_for(200, b"b")).unwrap(),
            SlabSet::NotStored
        );
    }

    #[test]
    fn fragmentation_of_56_byte_items() {
        let mut c = SlabCache::new(
            4 * KIB,
            KIB,
            SlabMode::GreedyShared {
                apps: vec![AppId(1)],
            },
        )
        .unwrap();
        for i in 0..10u8 {
            c.set(AppId(1), &[i], &value_for(56, &[i])).unwrap();
        }
        let r = c.utilization_report();
        assert_eq!(r.live_bytes, 560);
        assert_eq!(r.allocated_bytes, 640);
        assert!((r.fragmentation - 0.125).abs() < 1e-12);
    }

    #[test]
    fn exact_fit_has_no_fragmentation() {
        let mut c = SlabCache::new(
            4 * KIB,
            KIB,
            SlabMode::GreedyShared {
                apps: vec![AppId(1)],
            },
        )
        .unwrap();
        for i in 0..4u8 {
            c.set(AppId(1), &[i], &value_for(128, &[i])).unwrap();
        }
        assert_eq!(c.utilization_report().fragmentation, 0.0);
    }

    #[test]
    fn overwrite_and_delete() {
        let mut c = SlabCache::new(
            4 * KIB,
            KIB,
            SlabMode::GreedyShared {
                apps: vec![AppId(1)],
            },
        )
        .unwrap();
        c.set(AppId(1), b"k", b"one").unwrap();
        c.set(AppId(1), b"k", b"two").unwrap();
        assert_eq!(c.get(AppId(1), b"k").unwrap().unwrap(), b"two");
        assert_eq!(c.len(), 1);
        assert!(c.delete(AppId(1), b"k").unwrap());
        assert!(!c.delete(AppId(1), b"k").unwrap());
        assert_eq!(c.utilization_report().live_bytes, 0);
        assert!(matches!(c.get(AppId(9), b"k"), Err(Error::UnknownApp(_))));
    }

    #[test]
    fn partition_caps_floor_to_whole_slabs() {
        let caps = SlabCache::partition_caps(10 * KIB, KIB, &[(AppId(1), 1.0), (AppId(2), 2.0)]);
        assert_eq!(caps[&AppId(1)], 3);
        assert_eq!(caps[&AppId(2)], 6);
    }
}
