//! Segmented in-memory log.
//!
//! Records from every application are appended contiguously to a single head
//! segment. A hash index maps `(app, key)` to the newest record; older copies
//! become dead in place and are reclaimed by the cleaner. Segments that a
//! cleaning pass emptied are only handed out again once the epoch rule in
//! [`epoch`] allows it.

pub mod epoch;
pub mod index;
pub mod record;
pub mod segment;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AppId, Timestamp};

pub use epoch::{EpochGuard, EpochManager};
pub use index::{HashIndex, IndexEntry, LogLocation};
pub use record::{record_size, RecordView, RECORD_HEADER_LEN};
pub use segment::{SegmentId, SegmentInfo, SegmentState};

use record::{encode_record, patch_access, RecordIter};
use segment::Segment;

pub const DEFAULT_SEGMENT_SIZE: usize = 1 << 20;
pub const DEFAULT_FREE_POOL_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogConfig {
    pub segment_size_bytes: usize,
    pub total_memory_bytes: usize,
    pub free_pool_target_fraction: f64,
    pub index_buckets: usize,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig {
            segment_size_bytes: DEFAULT_SEGMENT_SIZE,
            total_memory_bytes: 64 * DEFAULT_SEGMENT_SIZE,
            free_pool_target_fraction: DEFAULT_FREE_POOL_FRACTION,
            index_buckets: 256,
        }
    }
}

impl LogConfig {
    pub fn segment_count(&self) -> usize {
        self.total_memory_bytes / self.segment_size_bytes.max(1)
    }

    /// Free segments the store tries to keep: `max(2, ceil(fraction * total))`.
    pub fn free_pool_target(&self) -> usize {
        let frac = (self.free_pool_target_fraction * self.segment_count() as f64).ceil() as usize;
        frac.max(2)
    }

    /// Segments that never hold steady-state data: the free pool plus the head.
    pub fn reserved_segments(&self) -> usize {
        self.free_pool_target() + 1
    }

    /// Bytes available for live data once the reserve is set aside.
    pub fn managed_bytes(&self) -> usize {
        self.segment_count()
            .saturating_sub(self.reserved_segments())
            * self.segment_size_bytes
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_size_bytes <= RECORD_HEADER_LEN {
            return Err(Error::Config(format!(
                "segment_size_bytes must exceed the {RECORD_HEADER_LEN}-byte record header"
            )));
        }
        if self.segment_size_bytes > u32::MAX as usize {
            return Err(Error::Config(
                "segment_size_bytes must fit in 32 bits".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.free_pool_target_fraction) {
            return Err(Error::Config(
                "free_pool_target_fraction must be within [0, 1]".into(),
            ));
        }
        if self.segment_count() < self.reserved_segments() + 2 {
            return Err(Error::Config(format!(
                "{} segments leave no room beyond the {}-segment reserve",
                self.segment_count(),
                self.reserved_segments()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendOutcome {
    pub location: LogLocation,
    pub size: usize,
    /// The record this append made dead, if the key already existed.
    pub replaced: Option<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    pub value: Vec<u8>,
    pub size: usize,
    /// Last-access time before this lookup.
    pub previous_access: Timestamp,
}

/// A record found live in a segment being cleaned, with a copy of its bytes.
#[derive(Debug, Clone)]
pub struct LiveRecord {
    pub app: AppId,
    pub key: Box<[u8]>,
    pub location: LogLocation,
    pub size: usize,
    pub last_access: Timestamp,
    pub frequency: u32,
    pub seq: u64,
    pub bytes: Box<[u8]>,
}

/// Result of a full consistency scan.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Audit {
    /// Segments whose recorded live bytes disagree with a scan.
    pub live_mismatches: Vec<(SegmentId, usize, usize)>,
    /// Index entries pointing outside resident segments or at wrong records.
    pub dangling_entries: usize,
    pub live_by_app: BTreeMap<AppId, usize>,
    pub total_live: usize,
    pub head_count: usize,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.live_mismatches.is_empty() && self.dangling_entries == 0 && self.head_count == 1
    }
}

#[derive(Debug, Default)]
struct SegmentLists {
    free: VecDeque<SegmentId>,
    sealed: BTreeSet<SegmentId>,
    retired: Vec<(SegmentId, u64)>,
}

pub struct LogStore {
    config: LogConfig,
    segments: Box<[Segment]>,
    head: Mutex<SegmentId>,
    lists: Mutex<SegmentLists>,
    index: HashIndex,
    epochs: EpochManager,
    access_seq: AtomicU64,
}

impl LogStore {
    pub fn new(config: LogConfig) -> Result<Self> {
        config.validate()?;
        let count = config.segment_count();
        let segments: Box<[Segment]> = (0..count)
            .map(|i| Segment::new(SegmentId(i as u32), config.segment_size_bytes))
            .collect();
        let head = SegmentId(0);
        segments[0].meta.lock().reset(SegmentState::Head);
        let lists = SegmentLists {
            free: (1..count).map(|i| SegmentId(i as u32)).collect(),
            ..Default::default()
        };
        Ok(LogStore {
            index: HashIndex::new(config.index_buckets),
            config,
            segments,
            head: Mutex::new(head),
            lists: Mutex::new(lists),
            epochs: EpochManager::default(),
            access_seq: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &LogConfig {
        &self.config
    }

    pub fn segment_size(&self) -> usize {
        self.config.segment_size_bytes
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn free_target(&self) -> usize {
        self.config.free_pool_target()
    }

    pub fn free_count(&self) -> usize {
        self.lists.lock().free.len()
    }

    pub fn needs_cleaning(&self) -> bool {
        self.free_count() < self.free_target()
    }

    pub fn index(&self) -> &HashIndex {
        &self.index
    }

    pub fn epochs(&self) -> &EpochManager {
        &self.epochs
    }

    pub fn pin(&self) -> EpochGuard<'_> {
        self.epochs.pin()
    }

    fn segment(&self, id: SegmentId) -> &Segment {
        &self.segments[id.0 as usize]
    }

    fn next_seq(&self) -> u64 {
        self.access_seq.fetch_add(1, Ordering::Relaxed) + 1
    }

    /// Appends a new version of `key`. The first write counts as the first
    /// access (`f = 1`, `t = now`).
    pub fn append(
        &self,
        app: AppId,
        key: &[u8],
        value: &[u8],
        now: Timestamp,
    ) -> Result<AppendOutcome> {
        let size = record_size(key.len(), value.len());
        if size > self.segment_size() || key.len() > record::MAX_KEY_LEN {
            return Err(Error::OversizeObject {
                size,
                limit: self.segment_size(),
            });
        }
        let location = {
            let mut head = self.head.lock();
            let fits = self.segment(*head).meta.lock().write_offset + size <= self.segment_size();
            if !fits {
                *head = self.swap_head(*head)?;
            }
            let seg = self.segment(*head);
            let mut meta = seg.meta.lock();
            let offset = meta.write_offset;
            {
                let mut data = seg.data.write();
                encode_record(&mut data[offset..offset + size], app, key, value, now, 1);
            }
            meta.write_offset += size;
            meta.record_count += 1;
            meta.add_live(app, size);
            LogLocation {
                segment: *head,
                offset: offset as u32,
            }
        };
        let entry = IndexEntry {
            location,
            size: size as u32,
            last_access: now,
            frequency: 1,
            seq: self.next_seq(),
        };
        let replaced = self.index.insert(app, key, entry);
        if let Some(old) = replaced {
            self.kill(old.location, app, old.size as usize);
        }
        Ok(AppendOutcome {
            location,
            size,
            replaced,
        })
    }

    /// Seals `old` and installs a free segment as head. Called with the head
    /// lock held.
    fn swap_head(&self, old: SegmentId) -> Result<SegmentId> {
        let mut lists = self.lists.lock();
        if lists.free.is_empty() {
            self.reclaim_locked(&mut lists);
        }
        let next = lists.free.pop_front().ok_or(Error::OutOfMemory)?;
        self.segment(old).meta.lock().state = SegmentState::Sealed;
        lists.sealed.insert(old);
        self.segment(next).meta.lock().reset(SegmentState::Head);
        Ok(next)
    }

    /// Seals the current head even if it has room left. Empty heads are kept.
    pub fn seal_head(&self) -> Result<()> {
        let mut head = self.head.lock();
        if self.segment(*head).meta.lock().write_offset == 0 {
            return Ok(());
        }
        *head = self.swap_head(*head)?;
        Ok(())
    }

    pub fn head_segment(&self) -> SegmentId {
        *self.head.lock()
    }

    fn kill(&self, at: LogLocation, app: AppId, size: usize) {
        let mut meta = self.segment(at.segment).meta.lock();
        if meta.is_resident() {
            meta.sub_live(app, size);
        }
    }

    /// Returns the value and bumps the record's access metadata.
    pub fn lookup(&self, app: AppId, key: &[u8], now: Timestamp) -> Result<Option<Hit>> {
        let Some(before) = self.index.touch(app, key, now, self.next_seq()) else {
            return Ok(None);
        };
        let value = self.read_value(before.location, app, key)?;
        Ok(Some(Hit {
            value,
            size: before.size as usize,
            previous_access: before.last_access,
        }))
    }

    /// Index entry for `key` without recording an access.
    pub fn locate(&self, app: AppId, key: &[u8]) -> Option<IndexEntry> {
        self.index.get(app, key)
    }

    /// Reads the value stored at `at`, checking that the record there really
    /// belongs to `(app, key)`.
    pub fn read_value(&self, at: LogLocation, app: AppId, key: &[u8]) -> Result<Vec<u8>> {
        let seg = self.segment(at.segment);
        let data = seg.data.read();
        let view = RecordView::decode(&data[at.offset as usize..]).ok_or(Error::StaleLocation)?;
        if view.header.app != app || view.key != key {
            return Err(Error::StaleLocation);
        }
        Ok(view.value.to_vec())
    }

    pub fn remove(&self, app: AppId, key: &[u8]) -> Option<IndexEntry> {
        let removed = self.index.remove(app, key)?;
        self.kill(removed.location, app, removed.size as usize);
        Some(removed)
    }

    pub fn segment_info(&self, id: SegmentId) -> SegmentInfo {
        let meta = self.segment(id).meta.lock().clone();
        SegmentInfo {
            id,
            state: meta.state,
            capacity: self.segment_size(),
            write_offset: meta.write_offset,
            live_bytes: meta.live_bytes,
            record_count: meta.record_count,
            app_live: meta.app_live,
        }
    }

    pub fn segments_info(&self) -> Vec<SegmentInfo> {
        self.segments
            .iter()
            .map(|s| self.segment_info(s.id))
            .collect()
    }

    pub fn sealed_segments(&self) -> Vec<SegmentId> {
        self.lists.lock().sealed.iter().copied().collect()
    }

    pub fn retired_count(&self) -> usize {
        self.lists.lock().retired.len()
    }

    /// Live bytes summed over resident segments.
    pub fn total_live_bytes(&self) -> usize {
        self.segments
            .iter()
            .map(|s| {
                let meta = s.meta.lock();
                if meta.is_resident() {
                    meta.live_bytes
                } else {
                    0
                }
            })
            .sum()
    }

    pub fn live_bytes_by_app(&self) -> BTreeMap<AppId, usize> {
        let mut out = BTreeMap::new();
        for s in self.segments.iter() {
            let meta = s.meta.lock();
            if meta.is_resident() {
                for &(app, bytes) in &meta.app_live {
                    *out.entry(app).or_insert(0) += bytes;
                }
            }
        }
        out
    }

    // ---- cleaning support ----

    /// Moves sealed segments into the `Cleaning` state so no other pass
    /// picks them.
    pub fn begin_cleaning(&self, inputs: &[SegmentId]) -> Result<()> {
        let mut lists = self.lists.lock();
        if let Some(bad) = inputs.iter().find(|id| !lists.sealed.contains(id)) {
            return Err(Error::Config(format!("{bad} is not sealed")));
        }
        for id in inputs {
            lists.sealed.remove(id);
            self.segment(*id).meta.lock().state = SegmentState::Cleaning;
        }
        Ok(())
    }

    /// Copies out every record in `id` that the index still points at.
    pub fn scan_live(&self, id: SegmentId) -> Vec<LiveRecord> {
        let seg = self.segment(id);
        let end = seg.meta.lock().write_offset;
        let data = seg.data.read();
        let mut out = Vec::new();
        for (offset, view) in RecordIter::new(&data[..end]) {
            let location = LogLocation {
                segment: id,
                offset: offset as u32,
            };
            let Some(entry) = self.index.get(view.header.app, view.key) else {
                continue;
            };
            if entry.location != location {
                continue;
            }
            let size = view.header.total_size();
            out.push(LiveRecord {
                app: view.header.app,
                key: view.key.into(),
                location,
                size,
                last_access: entry.last_access,
                frequency: entry.frequency,
                seq: entry.seq,
                bytes: data[offset..offset + size].into(),
            });
        }
        out
    }

    /// Takes up to `count` free segments for use as pass outputs. They are
    /// not counted in the free pool while the pass runs.
    pub fn take_outputs(&self, count: usize) -> Vec<SegmentId> {
        let mut lists = self.lists.lock();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if lists.free.is_empty() && self.reclaim_locked(&mut lists) == 0 {
                break;
            }
            let Some(id) = lists.free.pop_front() else {
                break;
            };
            self.segment(id).meta.lock().reset(SegmentState::Cleaning);
            out.push(id);
        }
        out
    }

    /// Copies a live record to `out` at `offset` and repoints the index if
    /// the key still refers to the original copy. Returns whether the copy
    /// became the live version.
    pub fn write_relocated(&self, out: SegmentId, offset: usize, rec: &LiveRecord) -> bool {
        let seg = self.segment(out);
        {
            let mut data = seg.data.write();
            let dst = &mut data[offset..offset + rec.size];
            dst.copy_from_slice(&rec.bytes);
            patch_access(dst, rec.last_access, rec.frequency);
        }
        {
            let mut meta = seg.meta.lock();
            meta.write_offset = meta.write_offset.max(offset + rec.size);
            meta.record_count += 1;
            meta.add_live(rec.app, rec.size);
        }
        let to = LogLocation {
            segment: out,
            offset: offset as u32,
        };
        if self
            .index
            .relocate_if_at(rec.app, &rec.key, rec.location, to)
        {
            true
        } else {
            seg.meta.lock().sub_live(rec.app, rec.size);
            false
        }
    }

    /// Drops the index entry for `rec` if it still points at the cleaned copy.
    pub fn evict(&self, rec: &LiveRecord) -> Option<IndexEntry> {
        self.index.remove_if_at(rec.app, &rec.key, rec.location)
    }

    /// Marks pass outputs as ordinary sealed segments; empty ones go back to
    /// the free pool.
    pub fn finish_outputs(&self, outputs: &[SegmentId]) {
        let mut lists = self.lists.lock();
        for id in outputs {
            let mut meta = self.segment(*id).meta.lock();
            if meta.write_offset == 0 {
                meta.reset(SegmentState::Free);
                lists.free.push_back(*id);
            } else {
                meta.state = SegmentState::Sealed;
                lists.sealed.insert(*id);
            }
        }
    }

    /// Tags cleaned inputs with the current epoch, then advances it. The
    /// caller must already have removed every index reference into them.
    pub fn retire(&self, inputs: &[SegmentId]) -> u64 {
        let mut lists = self.lists.lock();
        let epoch = self.epochs.current();
        for id in inputs {
            self.segment(*id)
                .meta
                .lock()
                .reset(SegmentState::Retired(epoch));
            lists.retired.push((*id, epoch));
        }
        self.epochs.advance();
        epoch
    }

    /// Returns retired segments to the free pool where the epoch rule allows.
    pub fn reclaim(&self) -> usize {
        let mut lists = self.lists.lock();
        self.reclaim_locked(&mut lists)
    }

    /// Attempts to reclaim one specific retired segment.
    pub fn try_reclaim(&self, id: SegmentId) -> bool {
        let mut lists = self.lists.lock();
        let Some(pos) = lists.retired.iter().position(|(s, _)| *s == id) else {
            return false;
        };
        if !self.epochs.can_reclaim(lists.retired[pos].1) {
            return false;
        }
        lists.retired.remove(pos);
        self.segment(id).meta.lock().reset(SegmentState::Free);
        lists.free.push_back(id);
        true
    }

    fn reclaim_locked(&self, lists: &mut SegmentLists) -> usize {
        if lists.retired.is_empty() {
            return 0;
        }
        let oldest = self.epochs.min_active();
        let mut freed = 0;
        let mut keep = Vec::with_capacity(lists.retired.len());
        for (id, epoch) in lists.retired.drain(..) {
            if oldest.is_none_or(|o| o > epoch) {
                self.segment(id).meta.lock().reset(SegmentState::Free);
                lists.free.push_back(id);
                freed += 1;
            } else {
                keep.push((id, epoch));
            }
        }
        lists.retired = keep;
        freed
    }

    /// Full scan comparing segment bookkeeping against the index. Only
    /// meaningful when no requests are in flight.
    pub fn audit(&self) -> Audit {
        let mut audit = Audit::default();
        let entries = self.index.snapshot();
        let mut per_segment: BTreeMap<SegmentId, usize> = BTreeMap::new();
        for (app, key, entry) in &entries {
            let seg = self.segment(entry.location.segment);
            let meta = seg.meta.lock();
            let end = meta.write_offset;
            let resident = meta.is_resident();
            drop(meta);
            let data = seg.data.read();
            let ok = resident
                && (entry.location.offset as usize) < end
                && RecordView::decode(&data[entry.location.offset as usize..end]).is_some_and(
                    |v| {
                        v.header.app == *app
                            && v.key == &key[..]
                            && v.header.total_size() == entry.size as usize
                    },
                );
            if !ok {
                audit.dangling_entries += 1;
                continue;
            }
            *per_segment.entry(entry.location.segment).or_insert(0) += entry.size as usize;
            *audit.live_by_app.entry(*app).or_insert(0) += entry.size as usize;
            audit.total_live += entry.size as usize;
        }
        for seg in self.segments.iter() {
            let meta = seg.meta.lock();
            if meta.state == SegmentState::Head {
                audit.head_count += 1;
            }
            let scanned = per_segment.get(&seg.id).copied().unwrap_or(0);
            let recorded = if meta.is_resident() {
                meta.live_bytes
            } else {
                0
            };
            if scanned != recorded
                || meta.write_offset > self.segment_size()
                || meta.live_bytes > meta.write_offset
            {
                audit.live_mismatches.push((seg.id, recorded, scanned));
            }
        }
        audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_store(segments: usize) -> LogStore {
        LogStore::new(LogConfig {
            segment_size_bytes: 4096,
            total_memory_bytes: 4096 * segments,
            free_pool_target_fraction: 0.0,
            index_buckets: 16,
        })
        .unwrap()
    }

    const A: AppId = AppId(1);

    #[test]
    fn first_append_lands_at_head_offset_zero() {
        let store = small_store(8);
        let value = vec![7u8; 100 - 1];
        let out = store.append(A, b"k", &value, 1).unwrap();
        assert_eq!(
            out.location,
            LogLocation {
                segment: SegmentId(0),
                offset: 0
            }
        );
        assert_eq!(out.size, 100 + RECORD_HEADER_LEN);
        assert_eq!(
            store.segment_info(SegmentId(0)).write_offset,
            100 + RECORD_HEADER_LEN
        );
    }

    #[test]
    fn overflowing_append_seals_head() {
        let store = small_store(8);
        let big = vec![0u8; 3000];
        store.append(A, b"a", &big, 1).unwrap();
        let out = store.append(A, b"b", &big, 2).unwrap();
        assert_eq!(out.location.offset, 0);
        assert_ne!(out.location.segment, SegmentId(0));
        assert_eq!(store.segment_info(SegmentId(0)).state, SegmentState::Sealed);
        assert_eq!(
            store.segment_info(out.location.segment).state,
            SegmentState::Head
        );
        assert_eq!(store.sealed_segments(), vec![SegmentId(0)]);
    }

    #[test]
    fn oversize_rejected() {
        let store = small_store(8);
        let err = store.append(A, b"k", &vec![0u8; 4096], 1).unwrap_err();
        assert!(matches!(err, Error::OversizeObject { .. }));
    }

    #[test]
    fn lookup_returns_value_and_counts_access() {
        let store = small_store(8);
        store.append(A, b"k", b"v", 10).unwrap();
        let hit = store.lookup(A, b"k", 20).unwrap().unwrap();
        assert_eq!(hit.value, b"v");
        assert_eq!(hit.previous_access, 10);
        let entry = store.locate(A, b"k").unwrap();
        assert_eq!(entry.frequency, 2);
        assert_eq!(entry.last_access, 20);
        assert!(store.lookup(A, b"nope", 20).unwrap().is_none());
        assert!(store.lookup(AppId(2), b"k", 20).unwrap().is_none());
    }

    #[test]
    fn overwrite_kills_old_copy() {
        let store = small_store(8);
        store.append(A, b"k", b"one", 1).unwrap();
        let out = store.append(A, b"k", b"three", 2).unwrap();
        assert!(out.replaced.is_some());
        assert_eq!(store.lookup(A, b"k", 3).unwrap().unwrap().value, b"three");
        assert_eq!(store.total_live_bytes(), record_size(1, 5));
        assert!(store.audit().is_clean());
    }

    #[test]
    fn remove_then_miss() {
        let store = small_store(8);
        store.append(A, b"k", b"v", 1).unwrap();
        assert!(store.remove(A, b"k").is_some());
        assert!(store.remove(A, b"k").is_none());
        assert!(store.lookup(A, b"k", 2).unwrap().is_none());
        assert_eq!(store.total_live_bytes(), 0);
    }

    #[test]
    fn exhausted_pool_reports_out_of_memory() {
        let store = small_store(5);
        let big = vec![0u8; 3000];
        for i in 0..5u8 {
            store.append(A, &[i], &big, 1).unwrap();
        }
        assert!(matches!(
            store.append(A, b"x", &big, 1),
            Err(Error::OutOfMemory)
        ));
    }

    #[test]
    fn retired_segment_waits_for_pinned_reader() {
        let store = small_store(8);
        store.append(A, b"k", &vec![0u8; 3000], 1).unwrap();
        store.seal_head().unwrap();
        let seg = store.sealed_segments()[0];
        store.begin_cleaning(&[seg]).unwrap();
        for rec in store.scan_live(seg) {
            store.evict(&rec);
        }
        let guard = store.pin();
        store.retire(&[seg]);
        assert!(!store.try_reclaim(seg));
        drop(guard);
        assert!(store.try_reclaim(seg));
        assert_eq!(store.segment_info(seg).state, SegmentState::Free);
    }

    #[test]
    fn config_reserve_math() {
        let cfg = LogConfig {
            segment_size_bytes: 1 << 20,
            total_memory_bytes: 1000 << 20,
            free_pool_target_fraction: 0.01,
            index_buckets: 1,
        };
        assert_eq!(cfg.segment_count(), 1000);
        assert_eq!(cfg.free_pool_target(), 10);
        assert_eq!(cfg.managed_bytes(), 989 << 20);
        let tiny = LogConfig {
            total_memory_bytes: 50 << 20,
            ..cfg
        };
        assert_eq!(tiny.free_pool_target(), 2);
    }
}
