//! Slow reader against a writer that forces cleaning.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use memshare::cleaner::{CleanerConfig, PassMode};
use memshare::engine::{AppConfig, EngineConfig, EngineCore, PolicyKind};
use memshare::log::SegmentState;
use memshare::{AppId, Error};

const APP: AppId = AppId(1);
const KEYS: u32 = 64;

fn key(k: u32) -> Vec<u8> {
    format!("stress-{k}").into_bytes()
}

fn value(k: u32, version: u32) -> Vec<u8> {
    let len = 40 + (version as usize * 13 + k as usize) % 200;
    let mut v = Vec::with_capacity(len);
    v.extend_from_slice(&k.to_le_bytes());
    v.extend_from_slice(&version.to_le_bytes());
    v.extend((8..len).map(|i| (k ^ version ^ i as u32) as u8));
    v
}

fn check_value(k: u32, v: &[u8]) -> Result<(), String> {
    if v.len() < 8 {
        return Err(format!("short value for key {k}"));
    }
    let owner = u32::from_le_bytes(v[..4].try_into().unwrap());
    let version = u32::from_le_bytes(v[4..8].try_into().unwrap());
    if owner != k || v != value(k, version).as_slice() {
        return Err(format!(
            "torn value for key {k} (owner {owner}, version {version})"
        ));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct StressReport {
    pub iterations: usize,
    pub passes: u64,
    pub reclaimed: u64,
    pub violations: Vec<String>,
}

/// Runs `iterations` located slow reads while another thread overwrites keys and
/// cleans continuously.
pub fn run(iterations: usize) -> StressReport {
    let config = EngineConfig {
        total_memory_bytes: 12 * 4096,
        segment_size_bytes: 4096,
        policy: PolicyKind::Partitioned,
        cleaner: CleanerConfig {
            segments_per_pass: 3,
            tail_drop_threshold: 0.0,
            ..Default::default()
        },
        apps: vec![AppConfig::new(APP.0)],
        ..Default::default()
    };
    let core = Arc::new(EngineCore::new(config).unwrap());
    for k in 0..KEYS {
        core.set(APP, &key(k), &value(k, 0), 0).unwrap();
    }
    let stop = Arc::new(AtomicBool::new(false));
    let passes = Arc::new(AtomicU64::new(0));
    let reclaimed = Arc::new(AtomicU64::new(0));
    let writer = {
        let (core, stop, passes, reclaimed) = (
            core.clone(),
            stop.clone(),
            passes.clone(),
            reclaimed.clone(),
        );
        std::thread::spawn(move || {
            let mut version = 1u32;
            while !stop.load(Ordering::Acquire) {
                let store = core.store();
                reclaimed.fetch_add(store.reclaim() as u64, Ordering::Relaxed);
                // Clean on every round so passes overlap the reader.
                match core.clean(PassMode::Concurrent, version as u64) {
                    Ok(_) => {
                        passes.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(Error::NotEnoughSegments(_)) => {}
                    Err(e) => panic!("pass failed: {e}"),
                }
                for _ in 0..4 {
                    let k = version % KEYS;
                    match core.set(APP, &key(k), &value(k, version), version as u64) {
                        Ok(()) | Err(Error::OutOfMemory) => {}
                        Err(e) => panic!("set failed: {e}"),
                    }
                    version = version.wrapping_add(1);
                }
            }
        })
    };

    let mut report = StressReport::default();
    let store = core.store();
    let mut i = 0usize;
    while report.iterations < iterations && i < iterations * 50 {
        i += 1;
        let k = (i as u32 * 7) % KEYS;
        let pin = store.pin();
        let Some(entry) = store.locate(APP, &key(k)) else {
            continue;
        };
        let seg = entry.location.segment;
        let before = store.segment_info(seg).state;
        for _ in 0..i % 4 {
            std::thread::yield_now();
        }
        match store.read_value(entry.location, APP, &key(k)) {
            Ok(v) => {
                if let Err(e) = check_value(k, &v) {
                    report.violations.push(format!("iteration {i}: {e}"));
                }
            }
            Err(e) => report
                .violations
                .push(format!("iteration {i}: read failed: {e}")),
        }
        let after = store.segment_info(seg).state;
        let reused = matches!(after, SegmentState::Free)
            || (after == SegmentState::Head && before != SegmentState::Head);
        if reused {
            report.violations.push(format!(
                "iteration {i}: segment {seg:?} reused under pin {} ({before:?} -> {after:?})",
                pin.epoch()
            ));
        }
        drop(pin);
        report.iterations += 1;
    }
    stop.store(true, Ordering::Release);
    writer.join().unwrap();
    report.passes = passes.load(Ordering::Relaxed);
    report.reclaimed = reclaimed.load(Ordering::Relaxed);
    let audit = store.audit();
    if !audit.is_clean() {
        report.violations.push(format!("audit: {audit:?}"));
    }
    report
}
