//! Brute-force LRU oracle for single-app cleaning passes.
//!
//! The oracle tracks recency from the request stream alone. At each pass it
//! takes the live keys held in sealed segments, walks them from most to
//! least recent and packs them into `n - 1` segments in order, moving to the
//! next segment when one is full. Whatever is left after the first record
//! that fits nowhere is the expected eviction set.

use std::collections::{BTreeMap, BTreeSet};

use memshare::cleaner::{CleanerConfig, PassMode};
use memshare::engine::{AppConfig, EngineConfig, EngineCore, GetResult, PolicyKind};
use memshare::log::{SegmentState, RECORD_HEADER_LEN};
use memshare::{AppId, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEGMENT: usize = 4096;
const APP: AppId = AppId(1);

#[derive(Debug, Clone)]
pub enum Op {
    Set(u32, usize),
    Get(u32),
    Del(u32),
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub segments: usize,
    pub ops: Vec<Op>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = rng.random_range(6..=16);
    let keys = rng.random_range(20..200u32);
    let max_value = rng.random_range(16..600usize);
    let count = rng.random_range(100..=1000);
    let ops = (0..count)
        .map(|_| {
            let key = rng.random_range(0..keys);
            match rng.random_range(0..100) {
                0..=54 => Op::Set(key, rng.random_range(1..=max_value)),
                55..=94 => Op::Get(key),
                _ => Op::Del(key),
            }
        })
        .collect();
    Instance { segments, ops }
}

fn key(k: u32) -> Vec<u8> {
    format!("key{k}").into_bytes()
}

#[derive(Default)]
struct Oracle {
    /// key -> (total size, last touch)
    live: BTreeMap<u32, (usize, u64)>,
}

impl Oracle {
    fn expected_evictions(&self, candidates: &BTreeSet<u32>, bins: usize) -> BTreeSet<u32> {
        let mut order: Vec<(u64, u32, usize)> = candidates
            .iter()
            .map(|k| (self.live[k].1, *k, self.live[k].0))
            .collect();
        order.sort_by_key(|e| std::cmp::Reverse(e.0));
        let mut used_bins = 0;
        let mut fill = 0;
        let mut kept = 0;
        for &(_, _, size) in &order {
            if used_bins > 0 && fill + size <= SEGMENT {
                fill += size;
            } else if used_bins < bins {
                used_bins += 1;
                fill = size;
            } else {
                break;
            }
            kept += 1;
        }
        order[kept..].iter().map(|(_, k, _)| *k).collect()
    }
}

pub fn config(segments: usize) -> EngineConfig {
    EngineConfig {
        total_memory_bytes: segments * SEGMENT,
        segment_size_bytes: SEGMENT,
        policy: PolicyKind::Partitioned,
        cleaner: CleanerConfig {
            segments_per_pass: segments,
            need_fraction: 1.0,
            tail_drop_threshold: 0.0,
            ..Default::default()
        },
        apps: vec![AppConfig::new(APP.0)],
        ..Default::default()
    }
}

/// Replays the instance and checks every pass against the oracle. Returns
/// the number of passes checked.
pub fn check_instance(inst: &Instance) -> Result<usize, String> {
    let core = EngineCore::new(config(inst.segments)).map_err(|e| e.to_string())?;
    let store = core.store();
    let mut oracle = Oracle::default();
    let mut passes = 0;
    for (i, op) in inst.ops.iter().enumerate() {
        let now = i as u64 + 1;
        match *op {
            Op::Set(k, len) => {
                while store.needs_cleaning() {
                    let sealed: Vec<_> = store
                        .sealed_segments()
                        .into_iter()
                        .filter(|s| store.segment_info(*s).state == SegmentState::Sealed)
                        .collect();
                    if sealed.len() < 2 {
                        break;
                    }
                    let candidates: BTreeSet<u32> = oracle
                        .live
                        .keys()
                        .copied()
                        .filter(|k| {
                            let e = store.locate(APP, &key(*k)).expect("oracle key is indexed");
                            sealed.contains(&e.location.segment)
                        })
                        .collect();
                    let expected = oracle.expected_evictions(&candidates, sealed.len() - 1);
                    let report = core
                        .clean(PassMode::Exclusive, now)
                        .map_err(|e| format!("op {i}: {e}"))?;
                    passes += 1;
                    let got: BTreeSet<u32> = report
                        .evicted
                        .iter()
                        .map(|e| std::str::from_utf8(&e.key).unwrap()[3..].parse().unwrap())
                        .collect();
                    if got.len() != report.evicted.len() || got != expected {
                        return Err(format!(
                            "op {i}: pass evicted {got:?}, oracle expected {expected:?}"
                        ));
                    }
                    for k in &got {
                        oracle.live.remove(k);
                    }
                    if report.segments_freed == 0 {
                        break;
                    }
                }
                let value = vec![b'v'; len];
                match core.set(APP, &key(k), &value, now) {
                    Ok(()) => {}
                    Err(Error::OutOfMemory) => return Err(format!("op {i}: out of memory")),
                    Err(e) => return Err(format!("op {i}: {e}")),
                }
                let size = RECORD_HEADER_LEN + key(k).len() + len;
                oracle.live.insert(k, (size, now));
            }
            Op::Get(k) => {
                let hit = core.get(APP, &key(k), now).map_err(|e| e.to_string())?;
                match (oracle.live.get_mut(&k), hit) {
                    (Some(entry), GetResult::Hit(_)) => entry.1 = now,
                    (None, GetResult::Miss { .. }) => {}
                    (o, h) => {
                        return Err(format!("op {i}: oracle {o:?}, engine hit={}", h.is_hit()))
                    }
                }
            }
            Op::Del(k) => {
                let removed = core.delete(APP, &key(k)).map_err(|e| e.to_string())?;
                if removed != oracle.live.remove(&k).is_some() {
                    return Err(format!("op {i}: delete disagreement"));
                }
            }
        }
    }
    Ok(passes)
}
