use std::collections::BTreeMap;

use crate::baselines::{SlabCache, SlabMode, SlabSet, UtilizationReport};
use crate::error::{Error, Result};
use crate::types::{AppId, Timestamp};

use super::{
    AppCounters, AppStats, CacheEngine, EngineConfig, EngineKind, GetResult, SetResult,
    StatsSnapshot,
};

/// Slab baseline behind the engine interface.
pub struct SlabEngine {
    kind: EngineKind,
    cache: SlabCache,
    counters: BTreeMap<AppId, AppCounters>,
    caps: BTreeMap<AppId, usize>,
}

impl SlabEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let (mode, caps) = match config.engine {
            EngineKind::SlabPartitioned => {
                let caps = SlabCache::partition_caps(
                    config.total_memory_bytes,
                    config.slab_size_bytes,
                    &config.shares(),
                );
                (SlabMode::Partitioned { caps: caps.clone() }, caps)
            }
            EngineKind::SlabGreedy => (
                SlabMode::GreedyShared {
                    apps: config.app_ids(),
                },
                BTreeMap::new(),
            ),
            EngineKind::Memshare => return Err(Error::Config("not a slab engine".into())),
        };
        Ok(SlabEngine {
            kind: config.engine,
            cache: SlabCache::new(config.total_memory_bytes, config.slab_size_bytes, mode)?,
            counters: config
                .app_ids()
                .into_iter()
                .map(|a| (a, AppCounters::default()))
                .collect(),
            caps,
        })
    }

    pub fn cache(&self) -> &SlabCache {
        &self.cache
    }

    pub fn utilization_report(&self) -> UtilizationReport {
        self.cache.utilization_report()
    }

    fn counters(&self, app: AppId) -> Result<&AppCounters> {
        self.counters.get(&app).ok_or(Error::UnknownApp(app))
    }
}

impl CacheEngine for SlabEngine {
    fn name(&self) -> String {
        self.kind.name().into()
    }

    fn get(&mut self, app: AppId, key: &[u8], _now: Timestamp) -> Result<GetResult> {
        self.counters(app)?;
        let out = match self.cache.get(app, key)? {
            Some(v) => GetResult::Hit(v.to_vec()),
            None => GetResult::Miss { shadow_hit: false },
        };
        let c = self.counters(app)?;
        if out.is_hit() {
            c.record_hit();
        } else {
            c.record_miss(false, false);
        }
        Ok(out)
    }

    fn set(&mut self, app: AppId, key: &[u8], value: &[u8], _now: Timestamp) -> Result<SetResult> {
        self.counters(app)?;
        let stored = self.cache.set(app, key, value)? == SlabSet::Stored;
        self.counters(app)?.record_set(stored);
        Ok(if stored {
            SetResult::Stored
        } else {
            SetResult::NotStored
        })
    }

    fn delete(&mut self, app: AppId, key: &[u8], _now: Timestamp) -> Result<bool> {
        self.counters(app)?.record_delete();
        self.cache.delete(app, key)
    }

    fn tick(&mut self, _now: Timestamp) {}

    fn stats(&self, now: Timestamp) -> StatsSnapshot {
        let live = self.cache.live_bytes_by_app();
        let slab = self.cache.slab_size() as u64;
        let apps = self
            .counters
            .iter()
            .map(|(app, c)| {
                let cap = self.caps.get(app).map_or(0, |n| *n as u64 * slab);
                let mut row = AppStats {
                    app: *app,
                    actual_mem: live.get(app).copied().unwrap_or(0),
                    target_mem: cap,
                    private_mem: cap,
                    ..Default::default()
                };
                c.fill(&mut row);
                row
            })
            .collect();
        let mut out = StatsSnapshot {
            engine: self.kind.name().into(),
            policy: match self.kind {
                EngineKind::SlabPartitioned => "partitioned".into(),
                _ => "greedy".into(),
            },
            now,
            apps,
            evicted_items: self.cache.evictions(),
            live_bytes: self.cache.utilization_report().live_bytes,
            capacity_bytes: self.cache.total_bytes() as u64,
            ..Default::default()
        };
        out.finish();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::AppConfig;

    fn config(kind: EngineKind) -> EngineConfig {
        EngineConfig {
            engine: kind,
            total_memory_bytes: 8 << 10,
            slab_size_bytes: 1 << 10,
            apps: vec![AppConfig::new(1), AppConfig::new(2)],
            ..Default::default()
        }
    }

    #[test]
    fn partitioned_isolation_from_noisy_neighbor() {
        let run = |noisy: bool| {
            let mut e = SlabEngine::new(config(EngineKind::SlabPartitioned)).unwrap();
            let mut hits = Vec::new();
            for i in 0..400u32 {
                let k = format!("{}", i % 70);
                if !e.get(AppId(1), k.as_bytes(), 0).unwrap().is_hit() {
                    e.set(AppId(1), k.as_bytes(), &[0; 30], 0).unwrap();
                }
                hits.push(e.stats(0).apps[0].hits);
                if noisy {
                    e.set(AppId(2), format!("n{i}").as_bytes(), &[0; 30], 0)
                        .unwrap();
                }
            }
            hits
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn stats_hit_rate() {
        let mut e = SlabEngine::new(config(EngineKind::SlabGreedy)).unwrap();
        e.set(AppId(1), b"a", b"x", 0).unwrap();
        for _ in 0..4 {
            e.get(AppId(1), b"a", 0).unwrap();
        }
        e.get(AppId(1), b"b", 0).unwrap();
        let s = e.stats(0);
        assert_eq!(s.apps[0].hit_rate, 0.8);
        assert_eq!(s.combined_hit_rate, 0.8);
        assert!(matches!(
            e.get(AppId(5), b"a", 0),
            Err(Error::UnknownApp(_))
        ));
    }
}
