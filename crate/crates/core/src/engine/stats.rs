use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::types::{AppId, Timestamp};

/// Request counters for one application.
#[derive(Debug, Default)]
pub struct AppCounters {
    gets: AtomicU64,
    hits: AtomicU64,
    shadow_hits: AtomicU64,
    credits_gained: AtomicU64,
    sets: AtomicU64,
    not_stored: AtomicU64,
    deletes: AtomicU64,
}

impl AppCounters {
    pub fn record_hit(&self) {
        self.gets.fetch_add(1, Ordering::Relaxed);
        self.hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_miss(&self, shadow_hit: bool, credit: bool) {
        self.gets.fetch_add(1, Ordering::Relaxed);
        if shadow_hit {
            self.shadow_hits.fetch_add(1, Ordering::Relaxed);
        }
        if credit {
            self.credits_gained.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn record_set(&self, stored: bool) {
        self.sets.fetch_add(1, Ordering::Relaxed);
        if !stored {
            self.not_stored.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn record_delete(&self) {
        self.deletes.fetch_add(1, Ordering::Relaxed);
    }

    /// Fills the request fields of `stats`.
    pub fn fill(&self, stats: &mut AppStats) {
        stats.gets = self.gets.load(Ordering::Relaxed);
        stats.hits = self.hits.load(Ordering::Relaxed).min(stats.gets);
        stats.misses = stats.gets - stats.hits;
        stats.hit_rate = ratio(stats.hits, stats.gets);
        stats.shadow_hits = self.shadow_hits.load(Ordering::Relaxed);
        stats.credits_gained = self.credits_gained.load(Ordering::Relaxed);
        stats.sets = self.sets.load(Ordering::Relaxed);
        stats.not_stored = self.not_stored.load(Ordering::Relaxed);
        stats.deletes = self.deletes.load(Ordering::Relaxed);
    }
}

pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `1 - miss_rate(candidate) / miss_rate(baseline)`; 0 when the baseline
/// never missed.
pub fn miss_reduction(candidate_miss_rate: f64, baseline_miss_rate: f64) -> f64 {
    if baseline_miss_rate <= 0.0 {
        0.0
    } else {
        1.0 - candidate_miss_rate / baseline_miss_rate
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppStats {
    pub app: AppId,
    pub gets: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub shadow_hits: u64,
    pub credits_gained: u64,
    pub sets: u64,
    pub not_stored: u64,
    pub deletes: u64,
    pub actual_mem: u64,
    pub target_mem: u64,
    pub private_mem: u64,
    pub shared_mem: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub engine: String,
    pub policy: String,
    pub now: Timestamp,
    pub apps: Vec<AppStats>,
    pub gets: u64,
    pub hits: u64,
    pub combined_hit_rate: f64,
    /// Bytes per second over the metrics window.
    pub cleaner_bandwidth: f64,
    pub cleaner_passes: u64,
    pub relocated_bytes: u64,
    pub evicted_items: u64,
    pub live_bytes: u64,
    /// Bytes available to data: non-reserved segments or all slab memory.
    pub capacity_bytes: u64,
    pub utilization: f64,
    pub free_segments: usize,
}

impl StatsSnapshot {
    /// Fills the combined fields from the per-app rows.
    pub fn finish(&mut self) {
        self.gets = self.apps.iter().map(|a| a.gets).sum();
        self.hits = self.apps.iter().map(|a| a.hits).sum();
        self.combined_hit_rate = ratio(self.hits, self.gets);
        self.utilization = ratio(self.live_bytes, self.capacity_bytes);
    }

    pub fn miss_rate(&self) -> f64 {
        if self.gets == 0 {
            0.0
        } else {
            1.0 - self.combined_hit_rate
        }
    }

    pub fn app(&self, app: AppId) -> Option<&AppStats> {
        self.apps.iter().find(|a| a.app == app)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_twenty() {
        let c = AppCounters::default();
        for _ in 0..80 {
            c.record_hit();
        }
        for i in 0..20 {
            c.record_miss(i % 2 == 0, false);
        }
        let mut s = AppStats::default();
        c.fill(&mut s);
        assert_eq!((s.gets, s.hits, s.misses, s.shadow_hits), (100, 80, 20, 10));
        assert_eq!(s.hit_rate, 0.8);
    }

    #[test]
    fn combined_rate_is_pooled() {
        let mut snap = StatsSnapshot {
            apps: vec![
                AppStats {
                    gets: 10,
                    hits: 9,
                    ..Default::default()
                },
                AppStats {
                    gets: 90,
                    hits: 45,
                    ..Default::default()
                },
            ],
            ..Default::default()
        };
        snap.finish();
        assert_eq!(snap.combined_hit_rate, 0.54);
    }

    #[test]
    fn miss_reduction_definition() {
        assert_eq!(miss_reduction(0.2, 0.2), 0.0);
        assert!((miss_reduction(0.1, 0.2) - 0.5).abs() < 1e-12);
        assert_eq!(miss_reduction(0.1, 0.0), 0.0);
    }
}
