//! Bundled workloads and engine configurations with fixed seeds.
//!
//! The three-app corpus pairs a stable app with a high hit rate, a mid app,
//! and a bursty app whose hit rate is low no matter how much memory it
//! gets. All item sizes are 56 or 576 bytes.

use crate::cleaner::CleanerConfig;
use crate::engine::{AppConfig, EngineConfig, EngineKind, PolicyKind};

use super::workload::{AppWorkload, Burst, Popularity, SizeDist, WorkloadSpec};

pub const CORPUS_SEED: u64 = 20_160_622;

pub const SMALL_ITEM: u32 = 56;
pub const LARGE_ITEM: u32 = 576;

fn mixed(p_small: f64) -> SizeDist {
    SizeDist::TwoPoint {
        small: SMALL_ITEM,
        large: LARGE_ITEM,
        p_small,
    }
}

pub fn bundled_workload() -> WorkloadSpec {
    WorkloadSpec {
        duration_secs: 240.0,
        apps: vec![
            AppWorkload {
                app: 1,
                key_space: 40_000,
                rate: 1500.0,
                get_fraction: 1.0,
                popularity: Popularity::Zipf { theta: 0.99 },
                sizes: mixed(0.8),
                bursts: vec![],
            },
            AppWorkload {
                app: 2,
                key_space: 80_000,
                rate: 1000.0,
                get_fraction: 1.0,
                popularity: Popularity::Zipf { theta: 0.8 },
                sizes: mixed(0.8),
                bursts: vec![],
            },
            AppWorkload {
                app: 3,
                key_space: 400_000,
                rate: 400.0,
                get_fraction: 1.0,
                popularity: Popularity::Zipf { theta: 0.5 },
                sizes: mixed(0.8),
                bursts: vec![
                    Burst {
                        start_secs: 60.0,
                        duration_secs: 30.0,
                        multiplier: 8.0,
                    },
                    Burst {
                        start_secs: 160.0,
                        duration_secs: 30.0,
                        multiplier: 8.0,
                    },
                ],
            },
        ],
    }
}

pub const BUNDLED_MEMORY: usize = 8 << 20;

/// Engine configuration for the three-app corpus.
pub fn bundled_config(engine: EngineKind, policy: PolicyKind) -> EngineConfig {
    EngineConfig {
        engine,
        total_memory_bytes: BUNDLED_MEMORY,
        segment_size_bytes: 64 << 10,
        slab_size_bytes: 128 << 10,
        policy,
        idle_time_secs: 20.0,
        metrics_window_secs: 10.0,
        seed: CORPUS_SEED,
        cleaner: CleanerConfig {
            segments_per_pass: 16,
            seed: CORPUS_SEED,
            ..Default::default()
        },
        apps: (1..=3)
            .map(|id| AppConfig {
                credit_size_bytes: 4 << 10,
                shadow_queue_bytes: 256 << 10,
                ..AppConfig::new(id)
            })
            .collect(),
        ..Default::default()
    }
}

/// Shared policy with an explicit private fraction.
pub fn bundled_shared(private_fraction: f64) -> EngineConfig {
    EngineConfig {
        private_fraction: Some(private_fraction),
        ..bundled_config(EngineKind::Memshare, PolicyKind::Shared)
    }
}

/// One app over a key space far larger than memory, 95% small items.
pub fn fragmentation_workload() -> WorkloadSpec {
    WorkloadSpec {
        duration_secs: 60.0,
        apps: vec![AppWorkload {
            app: 1,
            key_space: 1_000_000,
            rate: 3000.0,
            get_fraction: 1.0,
            popularity: Popularity::Uniform,
            sizes: mixed(0.95),
            bursts: vec![],
        }],
    }
}

pub fn fragmentation_config(engine: EngineKind) -> EngineConfig {
    EngineConfig {
        engine,
        total_memory_bytes: 4 << 20,
        segment_size_bytes: 64 << 10,
        slab_size_bytes: 64 << 10,
        policy: PolicyKind::Partitioned,
        seed: CORPUS_SEED,
        cleaner: CleanerConfig {
            segments_per_pass: 16,
            seed: CORPUS_SEED,
            ..Default::default()
        },
        apps: vec![AppConfig::new(1)],
        ..Default::default()
    }
}

/// Write-heavy single-app workload for comparing pass sizes.
pub fn write_heavy_workload() -> WorkloadSpec {
    WorkloadSpec {
        duration_secs: 30.0,
        apps: vec![AppWorkload {
            app: 1,
            key_space: 60_000,
            rate: 5000.0,
            get_fraction: 0.0,
            popularity: Popularity::Zipf { theta: 0.9 },
            sizes: SizeDist::Constant { bytes: 200 },
            bursts: vec![],
        }],
    }
}

pub fn write_heavy_config(segments_per_pass: usize) -> EngineConfig {
    EngineConfig {
        engine: EngineKind::Memshare,
        total_memory_bytes: 4 << 20,
        segment_size_bytes: 64 << 10,
        policy: PolicyKind::Partitioned,
        seed: CORPUS_SEED,
        cleaner: CleanerConfig {
            segments_per_pass,
            seed: CORPUS_SEED,
            ..Default::default()
        },
        apps: vec![AppConfig::new(1)],
        ..Default::default()
    }
}
