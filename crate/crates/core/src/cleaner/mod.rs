//! Segment cleaning.
//!
//! A pass takes `n` sealed segments, rewrites the survivors chosen by
//! [`plan::plan_relocation`] into at most `n - 1` output segments, and evicts
//! everything else. Two drivers share the planning step:
//!
//! * [`PassMode::Exclusive`] is for a single owner with no concurrent
//!   readers. Inputs are retired and recycled before survivors are written,
//!   so a pass can cover every sealed segment even when the free pool is
//!   small.
//! * [`PassMode::Concurrent`] takes its outputs from the free pool first,
//!   relocates before retiring, and leaves reclamation to the epoch rule.

pub mod plan;
pub mod select;

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arbiter::{Arbiter, Eviction, Need, RankPolicy};
use crate::error::{Error, Result};
use crate::log::{LiveRecord, LogStore, SegmentId, SegmentState};
use crate::types::{key_hash, AppId, KeyHash, Timestamp, MICROS_PER_SEC};

pub use plan::{
    drop_underutilized_tail, plan_relocation, AppBudget, Candidate, PassPlan, Placement,
};
pub use select::{segment_score, select_segments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleanerConfig {
    pub segments_per_pass: usize,
    pub need_fraction: f64,
    /// Fill fraction below which the last output segment is dropped; 0
    /// disables the drop.
    pub tail_drop_threshold: f64,
    pub max_parallel_passes: usize,
    /// Halve `segments_per_pass` (down to 2) when a pass leaves the free
    /// pool below target.
    pub adaptive: bool,
    pub seed: u64,
}

impl Default for CleanerConfig {
    fn default() -> Self {
        CleanerConfig {
            segments_per_pass: 100,
            need_fraction: 0.5,
            tail_drop_threshold: 0.5,
            max_parallel_passes: 1,
            adaptive: false,
            seed: 0,
        }
    }
}

impl CleanerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segments_per_pass == 0 {
            return Err(Error::Config("segments_per_pass must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.need_fraction) {
            return Err(Error::Config("need_fraction must be within [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.tail_drop_threshold) {
            return Err(Error::Config(
                "tail_drop_threshold must be within [0, 1]".into(),
            ));
        }
        if self.max_parallel_passes == 0 {
            return Err(Error::Config(
                "max_parallel_passes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassMode {
    Exclusive,
    Concurrent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictedItem {
    pub app: AppId,
    pub key: Box<[u8]>,
    pub key_hash: KeyHash,
    pub size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassReport {
    pub epoch: u64,
    pub inputs: Vec<SegmentId>,
    pub outputs: Vec<SegmentId>,
    pub candidates: usize,
    pub relocated_records: usize,
    pub relocated_bytes: usize,
    pub evicted: Vec<EvictedItem>,
    pub dropped_tail: bool,
    pub segments_freed: usize,
}

impl PassReport {
    pub fn evicted_bytes(&self) -> usize {
        self.evicted.iter().map(|e| e.size).sum()
    }
}

/// Running totals across all passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanerTotals {
    pub passes: u64,
    pub relocated_bytes: u64,
    pub relocated_records: u64,
    pub evicted_records: u64,
    pub evicted_bytes: u64,
    pub segments_freed: u64,
    pub dropped_tails: u64,
}

impl CleanerTotals {
    pub fn relocated_per_freed_segment(&self) -> f64 {
        if self.segments_freed == 0 {
            0.0
        } else {
            self.relocated_bytes as f64 / self.segments_freed as f64
        }
    }
}

pub struct Cleaner {
    config: CleanerConfig,
    n: AtomicUsize,
    /// Held across selection and `begin_cleaning` so parallel passes pick
    /// disjoint inputs.
    selection: Mutex<ChaCha8Rng>,
    bandwidth: Mutex<VecDeque<(Timestamp, u64)>>,
    totals: Mutex<CleanerTotals>,
}

impl Cleaner {
    pub fn new(config: CleanerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Cleaner {
            n: AtomicUsize::new(config.segments_per_pass),
            selection: Mutex::new(ChaCha8Rng::seed_from_u64(config.seed)),
            bandwidth: Mutex::new(VecDeque::new()),
            totals: Mutex::new(CleanerTotals::default()),
            config,
        })
    }

    pub fn config(&self) -> &CleanerConfig {
        &self.config
    }

    pub fn segments_per_pass(&self) -> usize {
        self.n.load(Ordering::Relaxed)
    }

    pub fn set_segments_per_pass(&self, n: usize) {
        self.n.store(n.max(1), Ordering::Relaxed);
    }

    pub fn totals(&self) -> CleanerTotals {
        *self.totals.lock()
    }

    /// Memory traffic of relocation over the trailing `window`: every
    /// relocated byte is read once and written once.
    pub fn cleaner_bandwidth(&self, window: u64, now: Timestamp) -> f64 {
        if window == 0 {
            return 0.0;
        }
        let from = now.saturating_sub(window);
        let bytes: u64 = self
            .bandwidth
            .lock()
            .iter()
            .filter(|(t, _)| *t > from && *t <= now)
            .map(|(_, b)| *b)
            .sum();
        2.0 * bytes as f64 / (window as f64 / MICROS_PER_SEC as f64)
    }

    /// Selects inputs and runs one pass.
    pub fn run_pass(
        &self,
        store: &LogStore,
        arbiter: &Arbiter,
        mode: PassMode,
        now: Timestamp,
    ) -> Result<PassReport> {
        let below_target = store.needs_cleaning();
        let n = self.segments_per_pass();
        let report = match mode {
            PassMode::Exclusive => {
                let inputs = self.select_and_claim(store, arbiter, n)?;
                self.execute(store, arbiter, inputs, None, now)
            }
            PassMode::Concurrent => {
                let outputs = store.take_outputs(n.saturating_sub(1));
                let inputs = match self.select_and_claim(store, arbiter, outputs.len() + 1) {
                    Ok(inputs) => inputs,
                    Err(e) => {
                        store.finish_outputs(&outputs);
                        return Err(e);
                    }
                };
                self.execute(store, arbiter, inputs, Some(outputs), now)
            }
        }?;
        if self.config.adaptive && below_target && store.needs_cleaning() {
            self.set_segments_per_pass((n / 2).max(2).min(n));
        }
        Ok(report)
    }

    /// Runs a pass over caller-chosen sealed segments.
    pub fn clean_segments(
        &self,
        store: &LogStore,
        arbiter: &Arbiter,
        inputs: &[SegmentId],
        mode: PassMode,
        now: Timestamp,
    ) -> Result<PassReport> {
        if inputs.is_empty() {
            return Err(Error::NotEnoughSegments(0));
        }
        store.begin_cleaning(inputs)?;
        let outputs = match mode {
            PassMode::Exclusive => None,
            PassMode::Concurrent => Some(store.take_outputs(inputs.len() - 1)),
        };
        self.execute(store, arbiter, inputs.to_vec(), outputs, now)
    }

    fn select_and_claim(
        &self,
        store: &LogStore,
        arbiter: &Arbiter,
        n: usize,
    ) -> Result<Vec<SegmentId>> {
        let mut rng = self.selection.lock();
        let sealed: Vec<_> = store
            .sealed_segments()
            .into_iter()
            .map(|id| store.segment_info(id))
            .filter(|s| s.state == SegmentState::Sealed)
            .collect();
        let needs: BTreeMap<AppId, Need> = arbiter
            .targets_and_actuals()
            .into_iter()
            .map(|(a, t, act)| (a, Need::compute(t, act)))
            .collect();
        let need = |a: AppId| needs.get(&a).copied().unwrap_or(Need::SATISFIED);
        let inputs = select_segments(&sealed, n, self.config.need_fraction, need, &mut *rng)?;
        store.begin_cleaning(&inputs)?;
        Ok(inputs)
    }

    fn execute(
        &self,
        store: &LogStore,
        arbiter: &Arbiter,
        inputs: Vec<SegmentId>,
        outputs: Option<Vec<SegmentId>>,
        now: Timestamp,
    ) -> Result<PassReport> {
        let live: Vec<LiveRecord> = inputs.iter().flat_map(|id| store.scan_live(*id)).collect();

        let mut ranks: BTreeMap<AppId, RankPolicy> = BTreeMap::new();
        let mut candidates = Vec::with_capacity(live.len());
        let mut in_pass: BTreeMap<AppId, u64> = BTreeMap::new();
        for rec in &live {
            let policy = ranks
                .entry(rec.app)
                .or_insert_with(|| arbiter.rank_policy(rec.app).unwrap_or_default());
            candidates.push(Candidate {
                app: rec.app,
                size: rec.size,
                rank: policy.rank(rec.last_access, rec.frequency),
                last_access: rec.last_access,
                seq: rec.seq,
            });
            *in_pass.entry(rec.app).or_insert(0) += rec.size as u64;
        }
        let budgets: BTreeMap<AppId, AppBudget> = arbiter
            .targets_and_actuals()
            .into_iter()
            .map(|(a, target, actual)| {
                let outside = actual.saturating_sub(in_pass.get(&a).copied().unwrap_or(0));
                (
                    a,
                    AppBudget {
                        target,
                        actual_outside: outside,
                    },
                )
            })
            .collect();

        let bins = match &outputs {
            None => inputs.len() - 1,
            Some(o) => o.len().min(inputs.len() - 1),
        };
        let capacity = store.segment_size();
        let mut plan = plan_relocation(&candidates, &budgets, bins, capacity);
        let dropped_tail =
            drop_underutilized_tail(&mut plan, capacity, self.config.tail_drop_threshold);

        let mut report = PassReport {
            inputs: inputs.clone(),
            candidates: candidates.len(),
            dropped_tail,
            ..Default::default()
        };
        let mut evicted: Vec<usize> = Vec::with_capacity(plan.evicted.len());
        let evict = |idx: usize, evicted: &mut Vec<usize>| {
            if store.evict(&live[idx]).is_some() {
                evicted.push(idx);
            }
        };

        let outputs = match outputs {
            None => {
                for &idx in &plan.evicted {
                    evict(idx, &mut evicted);
                }
                report.epoch = store.retire(&inputs);
                store.reclaim();
                let outs = store.take_outputs(plan.bins_used());
                self.write_placements(store, &live, &plan, &outs, &mut report, &mut evicted);
                outs
            }
            Some(outs) => {
                self.write_placements(store, &live, &plan, &outs, &mut report, &mut evicted);
                for &idx in &plan.evicted {
                    evict(idx, &mut evicted);
                }
                report.epoch = store.retire(&inputs);
                outs
            }
        };
        store.finish_outputs(&outputs);
        report.outputs = outputs.into_iter().take(plan.bins_used()).collect();
        report.segments_freed = inputs.len() - report.outputs.len();

        let mut batches: BTreeMap<AppId, Vec<Eviction>> = BTreeMap::new();
        evicted.sort_unstable();
        for idx in evicted {
            let rec = &live[idx];
            let hash = key_hash(&rec.key);
            batches.entry(rec.app).or_default().push(Eviction {
                key_hash: hash,
                size: rec.size as u64,
                last_access: rec.last_access,
            });
            report.evicted.push(EvictedItem {
                app: rec.app,
                key: rec.key.clone(),
                key_hash: hash,
                size: rec.size,
            });
        }
        for (app, batch) in &batches {
            // Records of applications unknown to the arbiter carry no accounting.
            let _ = arbiter.apply_evictions(*app, batch);
        }

        self.bandwidth
            .lock()
            .push_back((now, report.relocated_bytes as u64));
        let mut totals = self.totals.lock();
        totals.passes += 1;
        totals.relocated_bytes += report.relocated_bytes as u64;
        totals.relocated_records += report.relocated_records as u64;
        totals.evicted_records += report.evicted.len() as u64;
        totals.evicted_bytes += report.evicted_bytes() as u64;
        totals.segments_freed += report.segments_freed as u64;
        totals.dropped_tails += u64::from(dropped_tail);
        Ok(report)
    }

    fn write_placements(
        &self,
        store: &LogStore,
        live: &[LiveRecord],
        plan: &PassPlan,
        outputs: &[SegmentId],
        report: &mut PassReport,
        evicted: &mut Vec<usize>,
    ) {
        for p in &plan.placements {
            let rec = &live[p.candidate];
            match outputs.get(p.bin) {
                Some(out) => {
                    if store.write_relocated(*out, p.offset, rec) {
                        report.relocated_records += 1;
                        report.relocated_bytes += rec.size;
                    }
                }
                None => {
                    if store.evict(rec).is_some() {
                        evicted.push(p.candidate);
                    }
                }
            }
        }
    }

    /// Drops bandwidth samples older than `horizon` before `now`.
    pub fn prune_bandwidth(&self, horizon: u64, now: Timestamp) {
        let from = now.saturating_sub(horizon);
        let mut log = self.bandwidth.lock();
        while log.front().is_some_and(|(t, _)| *t <= from) {
            log.pop_front();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arbiter::{AppSpec, SharingPolicy};
    use crate::log::LogConfig;

    const SEG: usize = 4096;

    fn store(segments: usize) -> LogStore {
        LogStore::new(LogConfig {
            segment_size_bytes: SEG,
            total_memory_bytes: segments * SEG,
            free_pool_target_fraction: 0.0,
            index_buckets: 16,
        })
        .unwrap()
    }

    fn arbiter(apps: &[(u32, u64)]) -> Arbiter {
        let specs = apps
            .iter()
            .map(|&(a, p)| AppSpec::new(AppId(a), p))
            .collect();
        Arbiter::new(SharingPolicy::Partitioned, 0, specs, 1).unwrap()
    }

    fn cleaner(n: usize, tail: f64) -> Cleaner {
        Cleaner::new(CleanerConfig {
            segments_per_pass: n,
            tail_drop_threshold: tail,
            ..Default::default()
        })
        .unwrap()
    }

    fn put(s: &LogStore, a: &Arbiter, app: u32, key: &str, len: usize, now: u64) {
        let out = s
            .append(AppId(app), key.as_bytes(), &vec![b'x'; len], now)
            .unwrap();
        a.record_insert(AppId(app), out.size as u64, now).unwrap();
        if let Some(old) = out.replaced {
            a.record_remove(AppId(app), old.size as u64, old.last_access)
                .unwrap();
        }
    }

    #[test]
    fn five_record_pass_evicts_two_oldest() {
        let s = store(8);
        let a = arbiter(&[(1, 1 << 20)]);
        // Record totals 1000..1400 bytes; only the newest three fit one output.
        for i in 0..5u64 {
            put(
                &s,
                &a,
                1,
                &format!("r{}", i + 1),
                1000 + 100 * i as usize - 24 - 2,
                i + 1,
            );
            s.seal_head().unwrap();
        }
        let inputs = s.sealed_segments();
        assert_eq!(inputs.len(), 5);
        let c = cleaner(5, 0.0);
        let pass = c
            .clean_segments(&s, &a, &inputs[..2], PassMode::Exclusive, 10)
            .unwrap();
        // Two inputs, one output: r1 (1000) and r2 (1100) fit together.
        assert_eq!(pass.relocated_records, 2);
        assert!(pass.evicted.is_empty());

        let s = store(8);
        let a = arbiter(&[(1, 1 << 20)]);
        for i in 0..5u64 {
            put(
                &s,
                &a,
                1,
                &format!("r{}", i + 1),
                1000 + 100 * i as usize - 24 - 2,
                i + 1,
            );
        }
        s.seal_head().unwrap();
        let sealed = s.sealed_segments();
        assert_eq!(sealed.len(), 2);
        let pass = c
            .clean_segments(&s, &a, &sealed, PassMode::Exclusive, 10)
            .unwrap();
        let mut keys: Vec<_> = pass
            .evicted
            .iter()
            .map(|e| String::from_utf8(e.key.to_vec()).unwrap())
            .collect();
        keys.sort();
        assert_eq!(keys, vec!["r1", "r2"]);
        assert!(s.audit().is_clean());
        for k in ["r3", "r4", "r5"] {
            assert!(s.lookup(AppId(1), k.as_bytes(), 20).unwrap().is_some());
        }
        assert_eq!(a.snapshot(AppId(1)).unwrap().actual_mem, 1200 + 1300 + 1400);
    }

    #[test]
    fn dead_only_inputs_free_everything() {
        let s = store(8);
        let a = arbiter(&[(1, 1 << 20)]);
        for i in 0..6 {
            put(&s, &a, 1, &format!("k{i}"), 1500, 1);
        }
        s.seal_head().unwrap();
        for i in 0..6 {
            let e = s.remove(AppId(1), format!("k{i}").as_bytes()).unwrap();
            a.record_remove(AppId(1), e.size as u64, e.last_access)
                .unwrap();
        }
        let sealed = s.sealed_segments();
        let free_before = s.free_count();
        let pass = cleaner(10, 0.5)
            .run_pass(&s, &a, PassMode::Exclusive, 5)
            .unwrap();
        assert_eq!(pass.inputs.len(), sealed.len());
        assert_eq!(pass.relocated_records, 0);
        assert!(pass.evicted.is_empty());
        assert_eq!(pass.segments_freed, sealed.len());
        assert_eq!(s.free_count(), free_before + sealed.len());
    }

    #[test]
    fn higher_need_app_keeps_its_record() {
        let s = store(8);
        // Before the pass A has need 2.0 and B 0.5; one output fits one record.
        let a = arbiter(&[(1, 5000), (2, 2500)]);
        put(&s, &a, 1, "a", 2500 - 25, 1);
        s.seal_head().unwrap();
        put(&s, &a, 2, "b1", 2500 - 26, 2);
        s.seal_head().unwrap();
        put(&s, &a, 2, "b2", 2500 - 26, 3);
        assert_eq!(a.need(AppId(1)).unwrap().value(), 2.0);
        assert_eq!(a.need(AppId(2)).unwrap().value(), 0.5);
        let sealed = s.sealed_segments();
        let pass = cleaner(2, 0.0)
            .clean_segments(&s, &a, &sealed, PassMode::Exclusive, 9)
            .unwrap();
        assert_eq!(pass.relocated_records, 1);
        assert!(s.locate(AppId(1), b"a").is_some());
        assert_eq!(pass.evicted.len(), 1);
        assert_eq!(&*pass.evicted[0].key, b"b1");
    }

    #[test]
    fn single_segment_pass_is_pure_eviction() {
        let s = store(8);
        let a = arbiter(&[(1, 1 << 20)]);
        for i in 0..3 {
            put(&s, &a, 1, &format!("k{i}"), 1000, i);
        }
        s.seal_head().unwrap();
        let pass = cleaner(1, 0.5)
            .run_pass(&s, &a, PassMode::Concurrent, 1)
            .unwrap();
        assert_eq!(pass.relocated_bytes, 0);
        assert_eq!(pass.evicted.len(), 3);
        assert_eq!(pass.segments_freed, 1);
        assert_eq!(a.snapshot(AppId(1)).unwrap().actual_mem, 0);
        assert_eq!(a.snapshot(AppId(1)).unwrap().shadow_entries, 3);
    }

    #[test]
    fn concurrent_pass_relocates_before_retiring() {
        let s = store(10);
        let a = arbiter(&[(1, 1 << 20)]);
        for i in 0..8 {
            put(&s, &a, 1, &format!("k{i}"), 900, i);
        }
        s.seal_head().unwrap();
        for i in 0..4 {
            let e = s.remove(AppId(1), format!("k{i}").as_bytes()).unwrap();
            a.record_remove(AppId(1), e.size as u64, e.last_access)
                .unwrap();
        }
        let c = cleaner(3, 0.0);
        let pass = c.run_pass(&s, &a, PassMode::Concurrent, 2).unwrap();
        assert!(pass.segments_freed >= 1);
        assert_eq!(pass.evicted.len(), 0);
        assert!(s.audit().is_clean());
        for i in 4..8 {
            let hit = s
                .lookup(AppId(1), format!("k{i}").as_bytes(), 3)
                .unwrap()
                .unwrap();
            assert_eq!(hit.value, vec![b'x'; 900]);
        }
    }

    #[test]
    fn tail_drop_counts_as_eviction() {
        let s = store(8);
        let a = arbiter(&[(1, 1 << 20)]);
        // 3300 live bytes leave the single output about 80% full.
        put(&s, &a, 1, "k0", 1100 - 26, 0);
        put(&s, &a, 1, "k1", 1100 - 26, 1);
        s.seal_head().unwrap();
        put(&s, &a, 1, "k2", 1100 - 26, 2);
        s.seal_head().unwrap();
        let sealed = s.sealed_segments();
        let kept = cleaner(2, 0.5)
            .clean_segments(&s, &a, &sealed, PassMode::Exclusive, 1)
            .unwrap();
        assert!(!kept.dropped_tail);
        assert_eq!(kept.relocated_records, 3);

        put(&s, &a, 1, "k3", 10, 3);
        s.seal_head().unwrap();
        let sealed_now = s.sealed_segments();
        assert_eq!(sealed_now.len(), 2);
        let pass = cleaner(2, 0.9)
            .clean_segments(&s, &a, &sealed_now, PassMode::Exclusive, 2)
            .unwrap();
        assert!(pass.dropped_tail);
        assert_eq!(pass.evicted.len(), 4);
        assert_eq!(pass.segments_freed, sealed_now.len());
    }

    #[test]
    fn bandwidth_window() {
        let c = cleaner(2, 0.0);
        assert_eq!(c.cleaner_bandwidth(MICROS_PER_SEC, 5 * MICROS_PER_SEC), 0.0);
        c.bandwidth.lock().push_back((5 * MICROS_PER_SEC, 3 << 20));
        assert_eq!(
            c.cleaner_bandwidth(MICROS_PER_SEC, 5 * MICROS_PER_SEC),
            (6 << 20) as f64
        );
        assert_eq!(c.cleaner_bandwidth(MICROS_PER_SEC, 7 * MICROS_PER_SEC), 0.0);
    }

    #[test]
    fn adaptive_halves_under_pressure() {
        let s = LogStore::new(LogConfig {
            segment_size_bytes: SEG,
            total_memory_bytes: 8 * SEG,
            free_pool_target_fraction: 0.5,
            index_buckets: 16,
        })
        .unwrap();
        let a = arbiter(&[(1, 1 << 20)]);
        let c = Cleaner::new(CleanerConfig {
            segments_per_pass: 8,
            tail_drop_threshold: 0.0,
            adaptive: true,
            ..Default::default()
        })
        .unwrap();
        for i in 0..7 {
            put(&s, &a, 1, &format!("k{i}"), 4000, i);
        }
        // Everything live: the pass frees one segment and the pool stays low.
        assert!(s.needs_cleaning());
        c.run_pass(&s, &a, PassMode::Exclusive, 1).unwrap();
        assert_eq!(c.segments_per_pass(), 4);
    }
}
