//! Fixtures shared by the benchmarks.

use memshare::engine::{AppConfig, CacheEngine, Engine, EngineConfig, PolicyKind};
use memshare::AppId;

pub const APP: AppId = AppId(1);
pub const VALUE_LEN: usize = 100;

pub fn key(i: u64) -> Vec<u8> {
    format!("bench-{i:08}").into_bytes()
}

/// One partitioned app in `segments` segments of 64 KiB.
pub fn config(segments: usize, segments_per_pass: usize) -> EngineConfig {
    let mut config = EngineConfig {
        total_memory_bytes: segments * 65536,
        segment_size_bytes: 65536,
        policy: PolicyKind::Partitioned,
        apps: vec![AppConfig::new(APP.0)],
        ..Default::default()
    };
    config.cleaner.segments_per_pass = segments_per_pass;
    config
}

/// A core holding `keys` items, each written `rounds` times so that older
/// versions leave dead records for the cleaner.
pub fn filled(config: EngineConfig, keys: u64, rounds: u64) -> Engine {
    let mut engine = Engine::new(config).expect("valid bench config");
    let value = vec![7u8; VALUE_LEN];
    let mut now = 0;
    for _ in 0..rounds {
        for i in 0..keys {
            now += 1;
            engine.set(APP, &key(i), &value, now).expect("set");
        }
    }
    engine
}
