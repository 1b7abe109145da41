//! Cache facade: GET/SET/DELETE/STATS over the log, arbiter and cleaner.
//!
//! [`EngineCore`] holds the shared state and takes `&self` everywhere.
//! [`Engine`] drives it from a single owner and cleans inline before writes;
//! [`ConcurrentEngine`] runs cleaning on background threads.

mod config;
mod server;
mod slab_engine;
mod stats;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::arbiter::Arbiter;
use crate::cleaner::{Cleaner, PassMode, PassReport};
use crate::error::{Error, Result};
use crate::log::LogStore;
use crate::types::{key_hash, AppId, Timestamp};

pub use config::{AppConfig, EngineConfig, EngineKind, PolicyKind};
pub use server::ConcurrentEngine;
pub use slab_engine::SlabEngine;
pub use stats::{miss_reduction, ratio, AppCounters, AppStats, StatsSnapshot};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GetResult {
    Hit(Vec<u8>),
    Miss { shadow_hit: bool },
}

impl GetResult {
    pub fn is_hit(&self) -> bool {
        matches!(self, GetResult::Hit(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetResult {
    Stored,
    NotStored,
}

/// Single-owner cache interface shared by every engine the harness can
/// replay against. `now` is in microseconds.
pub trait CacheEngine {
    fn name(&self) -> String;
    fn get(&mut self, app: AppId, key: &[u8], now: Timestamp) -> Result<GetResult>;
    fn set(&mut self, app: AppId, key: &[u8], value: &[u8], now: Timestamp) -> Result<SetResult>;
    fn delete(&mut self, app: AppId, key: &[u8], now: Timestamp) -> Result<bool>;
    fn tick(&mut self, now: Timestamp);
    fn stats(&self, now: Timestamp) -> StatsSnapshot;
}

/// Builds the engine selected by `config.engine`.
pub fn build_engine(config: &EngineConfig) -> Result<Box<dyn CacheEngine + Send>> {
    Ok(match config.engine {
        EngineKind::Memshare => Box::new(Engine::new(config.clone())?),
        EngineKind::SlabPartitioned | EngineKind::SlabGreedy => {
            Box::new(SlabEngine::new(config.clone())?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoPrivateReport {
    pub private_mem: BTreeMap<AppId, u64>,
    pub tax_rate: f64,
    pub idle_time: u64,
}

pub struct EngineCore {
    config: EngineConfig,
    store: LogStore,
    arbiter: Arbiter,
    cleaner: Cleaner,
    counters: BTreeMap<AppId, AppCounters>,
    next_tick: AtomicU64,
}

impl EngineCore {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let store = LogStore::new(config.log_config())?;
        let arbiter = Arbiter::new(
            config.sharing_policy(),
            config.shared_pool(),
            config.app_specs(),
            config.seed,
        )?;
        let cleaner = Cleaner::new(config.cleaner.clone())?;
        let counters = config
            .app_ids()
            .into_iter()
            .map(|a| (a, AppCounters::default()))
            .collect();
        Ok(EngineCore {
            config,
            store,
            arbiter,
            cleaner,
            counters,
            next_tick: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &LogStore {
        &self.store
    }

    pub fn arbiter(&self) -> &Arbiter {
        &self.arbiter
    }

    pub fn cleaner(&self) -> &Cleaner {
        &self.cleaner
    }

    fn counters(&self, app: AppId) -> Result<&AppCounters> {
        self.counters.get(&app).ok_or(Error::UnknownApp(app))
    }

    pub fn get(&self, app: AppId, key: &[u8], now: Timestamp) -> Result<GetResult> {
        let counters = self.counters(app)?;
        let hit = {
            let _pin = self.store.pin();
            self.store.lookup(app, key, now)?
        };
        match hit {
            Some(hit) => {
                self.arbiter
                    .record_access(app, hit.size as u64, hit.previous_access, now)?;
                counters.record_hit();
                Ok(GetResult::Hit(hit.value))
            }
            None => {
                let outcome = self.arbiter.on_miss(app, key_hash(key))?;
                counters.record_miss(outcome.shadow_hit, outcome.transfer.is_some());
                Ok(GetResult::Miss {
                    shadow_hit: outcome.shadow_hit,
                })
            }
        }
    }

    /// Appends without cleaning; fails with `OutOfMemory` when no free
    /// segment is available.
    pub fn set(&self, app: AppId, key: &[u8], value: &[u8], now: Timestamp) -> Result<()> {
        let counters = self.counters(app)?;
        let out = {
            let _pin = self.store.pin();
            self.store.append(app, key, value, now)?
        };
        self.arbiter.record_insert(app, out.size as u64, now)?;
        if let Some(old) = out.replaced {
            self.arbiter
                .record_remove(app, old.size as u64, old.last_access)?;
        }
        counters.record_set(true);
        Ok(())
    }

    pub fn delete(&self, app: AppId, key: &[u8]) -> Result<bool> {
        let counters = self.counters(app)?;
        let removed = {
            let _pin = self.store.pin();
            self.store.remove(app, key)
        };
        counters.record_delete();
        match removed {
            Some(entry) => {
                self.arbiter
                    .record_remove(app, entry.size as u64, entry.last_access)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn tick(&self, now: Timestamp) {
        self.arbiter.tick(now);
        self.cleaner
            .prune_bandwidth(self.config.metrics_window().saturating_mul(2), now);
    }

    /// Ticks once per elapsed tick interval. Returns whether a tick ran.
    pub fn maybe_tick(&self, now: Timestamp) -> bool {
        let due = self.next_tick.load(Ordering::Acquire);
        if now < due {
            return false;
        }
        let next = now + self.config.tick_interval();
        if self
            .next_tick
            .compare_exchange(due, next, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return false;
        }
        self.tick(now);
        true
    }

    pub fn clean(&self, mode: PassMode, now: Timestamp) -> Result<PassReport> {
        self.cleaner.run_pass(&self.store, &self.arbiter, mode, now)
    }

    /// Derives private memory from the recent average targets and switches
    /// to the idle-tax policy.
    pub fn run_auto_private(&self, window: u64, now: Timestamp) -> Result<AutoPrivateReport> {
        let private_mem = self.arbiter.auto_private_memory(window, now)?;
        let (tax_rate, idle_time) = (self.config.tax_rate, self.config.idle_time());
        self.arbiter
            .switch_to_idle_tax(&private_mem, tax_rate, idle_time)?;
        Ok(AutoPrivateReport {
            private_mem,
            tax_rate,
            idle_time,
        })
    }

    pub fn stats(&self, now: Timestamp) -> StatsSnapshot {
        let mut apps = Vec::with_capacity(self.counters.len());
        for snap in self.arbiter.snapshots() {
            let mut row = AppStats {
                app: snap.app,
                actual_mem: snap.actual_mem,
                target_mem: snap.target_mem,
                private_mem: snap.private_mem,
                shared_mem: snap.shared_mem,
                ..Default::default()
            };
            if let Some(c) = self.counters.get(&snap.app) {
                c.fill(&mut row);
            }
            apps.push(row);
        }
        let totals = self.cleaner.totals();
        let mut out = StatsSnapshot {
            engine: EngineKind::Memshare.name().into(),
            policy: self.arbiter.policy().name().into(),
            now,
            apps,
            cleaner_bandwidth: self
                .cleaner
                .cleaner_bandwidth(self.config.metrics_window(), now),
            cleaner_passes: totals.passes,
            relocated_bytes: totals.relocated_bytes,
            evicted_items: totals.evicted_records,
            live_bytes: self.store.total_live_bytes() as u64,
            capacity_bytes: self.store.config().managed_bytes() as u64,
            free_segments: self.store.free_count(),
            ..Default::default()
        };
        out.finish();
        out
    }
}

/// Single-owner engine. Cleaning runs inline whenever a write finds the free
/// pool below target, which keeps every run deterministic.
pub struct Engine {
    core: EngineCore,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        Ok(Engine {
            core: EngineCore::new(config)?,
        })
    }

    pub fn core(&self) -> &EngineCore {
        &self.core
    }

    fn ensure_free(&self, now: Timestamp) -> Result<()> {
        while self.core.store.needs_cleaning() {
            match self.core.clean(PassMode::Exclusive, now) {
                Ok(report) if report.segments_freed > 0 => {}
                Ok(_) | Err(Error::NotEnoughSegments(_)) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    pub fn run_auto_private(&mut self, window: u64, now: Timestamp) -> Result<AutoPrivateReport> {
        self.core.run_auto_private(window, now)
    }
}

impl CacheEngine for Engine {
    fn name(&self) -> String {
        format!("memshare-{}", self.core.arbiter.policy().name())
    }

    fn get(&mut self, app: AppId, key: &[u8], now: Timestamp) -> Result<GetResult> {
        self.core.maybe_tick(now);
        self.core.get(app, key, now)
    }

    fn set(&mut self, app: AppId, key: &[u8], value: &[u8], now: Timestamp) -> Result<SetResult> {
        self.core.maybe_tick(now);
        self.core.counters(app)?;
        self.ensure_free(now)?;
        match self.core.set(app, key, value, now) {
            Err(Error::OutOfMemory) => {
                self.core.clean(PassMode::Exclusive, now)?;
                self.core.set(app, key, value, now)?;
            }
            other => other?,
        }
        Ok(SetResult::Stored)
    }

    fn delete(&mut self, app: AppId, key: &[u8], now: Timestamp) -> Result<bool> {
        self.core.maybe_tick(now);
        self.core.delete(app, key)
    }

    fn tick(&mut self, now: Timestamp) {
        self.core.tick(now);
    }

    fn stats(&self, now: Timestamp) -> StatsSnapshot {
        self.core.stats(now)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::MICROS_PER_SEC;

    fn config(policy: PolicyKind) -> EngineConfig {
        EngineConfig {
            total_memory_bytes: 16 * 64 * 1024,
            segment_size_bytes: 64 * 1024,
            policy,
            cleaner: crate::cleaner::CleanerConfig {
                segments_per_pass: 4,
                ..Default::default()
            },
            apps: vec![
                AppConfig {
                    credit_size_bytes: 4096,
                    shadow_queue_bytes: 256 * 1024,
                    ..AppConfig::new(1)
                },
                AppConfig {
                    credit_size_bytes: 4096,
                    shadow_queue_bytes: 256 * 1024,
                    ..AppConfig::new(2)
                },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn get_after_set() {
        let mut e = Engine::new(config(PolicyKind::Shared)).unwrap();
        e.set(AppId(1), b"k", b"v", 1).unwrap();
        assert_eq!(
            e.get(AppId(1), b"k", 2).unwrap(),
            GetResult::Hit(b"v".to_vec())
        );
        assert_eq!(
            e.get(AppId(2), b"k", 3).unwrap(),
            GetResult::Miss { shadow_hit: false }
        );
        assert!(matches!(
            e.get(AppId(9), b"k", 3),
            Err(Error::UnknownApp(_))
        ));
        assert!(matches!(
            e.set(AppId(9), b"k", b"v", 3),
            Err(Error::UnknownApp(_))
        ));
    }

    #[test]
    fn delete_reduces_actual_mem() {
        let mut e = Engine::new(config(PolicyKind::Shared)).unwrap();
        e.set(AppId(1), b"k", &[0; 100], 1).unwrap();
        let before = e.stats(1).app(AppId(1)).unwrap().actual_mem;
        assert_eq!(before, 24 + 1 + 100);
        assert!(e.delete(AppId(1), b"k", 2).unwrap());
        assert!(!e.delete(AppId(1), b"k", 2).unwrap());
        assert_eq!(e.stats(2).app(AppId(1)).unwrap().actual_mem, 0);
    }

    fn fill(e: &mut Engine, app: u32, keys: std::ops::Range<u32>, now: &mut u64) {
        for k in keys {
            *now += 10;
            e.set(AppId(app), format!("key{k}").as_bytes(), &[1; 1000], *now)
                .unwrap();
        }
    }

    fn newest_evicted(e: &Engine, app: u32, keys: u32) -> Vec<u8> {
        (0..keys)
            .rev()
            .map(|k| format!("key{k}").into_bytes())
            .find(|k| e.core().store().locate(AppId(app), k).is_none())
            .expect("some key was evicted")
    }

    #[test]
    fn evicted_key_misses_with_shadow_hit_and_moves_credit() {
        let mut e = Engine::new(config(PolicyKind::Shared)).unwrap();
        let mut now = 0;
        fill(&mut e, 1, 0..2000, &mut now);
        let shared_before = e.stats(now).app(AppId(1)).unwrap().shared_mem;
        let key = newest_evicted(&e, 1, 2000);
        now += 10;
        assert_eq!(
            e.get(AppId(1), &key, now).unwrap(),
            GetResult::Miss { shadow_hit: true }
        );
        let s = e.stats(now);
        assert_eq!(s.app(AppId(1)).unwrap().shadow_hits, 1);
        assert_eq!(s.app(AppId(1)).unwrap().shared_mem, shared_before + 4096);
        assert_eq!(
            s.app(AppId(2)).unwrap().shared_mem + s.app(AppId(1)).unwrap().shared_mem,
            e.core().config().shared_pool()
        );
    }

    #[test]
    fn partitioned_shadow_hit_moves_nothing() {
        let mut e = Engine::new(config(PolicyKind::Partitioned)).unwrap();
        let mut now = 0;
        fill(&mut e, 1, 0..2000, &mut now);
        let before = e.stats(now).app(AppId(1)).unwrap().target_mem;
        let key = newest_evicted(&e, 1, 2000);
        assert_eq!(
            e.get(AppId(1), &key, now + 1).unwrap(),
            GetResult::Miss { shadow_hit: true }
        );
        assert_eq!(e.stats(now + 1).app(AppId(1)).unwrap().target_mem, before);
    }

    #[test]
    fn writer_over_target_still_succeeds_and_is_cleaned_first() {
        let mut e = Engine::new(config(PolicyKind::Partitioned)).unwrap();
        let mut now = 0;
        fill(&mut e, 2, 0..300, &mut now);
        fill(&mut e, 1, 0..3000, &mut now);
        let s = e.stats(now);
        let a1 = s.app(AppId(1)).unwrap();
        let a2 = s.app(AppId(2)).unwrap();
        // App 2 stays under its target and keeps its data; app 1 absorbed
        // every eviction while using the memory app 2 leaves idle.
        assert!(a2.actual_mem >= 300 * 1029 * 95 / 100, "{a2:?}");
        assert!(a1.actual_mem > a1.target_mem, "{a1:?}");
    }

    #[test]
    fn stats_match_store_at_quiescence() {
        let mut e = Engine::new(config(PolicyKind::Shared)).unwrap();
        let mut now = 0;
        fill(&mut e, 1, 0..1500, &mut now);
        fill(&mut e, 2, 0..1500, &mut now);
        for k in 0..500u32 {
            e.get(AppId(1), format!("key{k}").as_bytes(), now).unwrap();
        }
        let s = e.stats(now);
        let sum: u64 = s.apps.iter().map(|a| a.actual_mem).sum();
        assert_eq!(sum, s.live_bytes);
        assert_eq!(s.apps[0].hits + s.apps[0].misses, 500);
        assert!(e.core().store().audit().is_clean());
    }

    #[test]
    fn idle_tax_tick_recomputes_targets() {
        let mut c = config(PolicyKind::IdleTax);
        c.idle_time_secs = 1.0;
        c.tax_rate = 1.0;
        let mut e = Engine::new(c).unwrap();
        e.set(AppId(1), b"k", &[0; 1000], 0).unwrap();
        let private = e.stats(0).app(AppId(1)).unwrap().private_mem;
        e.tick(10 * MICROS_PER_SEC);
        // Everything is idle and fully taxed.
        assert_eq!(e.stats(0).app(AppId(1)).unwrap().target_mem, 0);
        assert!(private > 0);
    }

    #[test]
    fn partitioned_targets_are_constant() {
        let mut e = Engine::new(config(PolicyKind::Partitioned)).unwrap();
        let before: Vec<_> = e.stats(0).apps.iter().map(|a| a.target_mem).collect();
        let mut now = 0;
        fill(&mut e, 1, 0..2000, &mut now);
        for k in 0..200u32 {
            e.get(AppId(1), format!("key{k}").as_bytes(), now).unwrap();
        }
        let after: Vec<_> = e.stats(now).apps.iter().map(|a| a.target_mem).collect();
        assert_eq!(before, after);
    }
}
