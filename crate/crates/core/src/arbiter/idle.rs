//! Idle-memory tracking and the idle-tax target formula.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::types::Timestamp;

pub const IDLE_BUCKETS: usize = 32;
/// Buckets per `idle_time`; the histogram spans twice the idle threshold.
pub const BUCKETS_PER_IDLE_TIME: u64 = 16;

/// Live bytes bucketed by last-access time. Bucket width is
/// `idle_time / 16`; anything older than the oldest bucket is folded into it.
#[derive(Debug, Clone)]
pub struct IdleHistogram {
    width: u64,
    newest_slot: u64,
    /// `buckets[i]` holds slot `newest_slot - (len - 1) + i`.
    buckets: VecDeque<u64>,
}

impl IdleHistogram {
    pub fn new(idle_time: u64) -> Self {
        IdleHistogram {
            width: (idle_time / BUCKETS_PER_IDLE_TIME).max(1),
            newest_slot: IDLE_BUCKETS as u64 - 1,
            buckets: std::iter::repeat_n(0, IDLE_BUCKETS).collect(),
        }
    }

    pub fn bucket_width(&self) -> u64 {
        self.width
    }

    fn oldest_slot(&self) -> u64 {
        self.newest_slot + 1 - IDLE_BUCKETS as u64
    }

    fn advance_to(&mut self, slot: u64) {
        let steps = slot.saturating_sub(self.newest_slot);
        if steps >= IDLE_BUCKETS as u64 {
            let total: u64 = self.buckets.iter().sum();
            self.buckets.iter_mut().for_each(|b| *b = 0);
            self.buckets[0] = total;
        } else {
            for _ in 0..steps {
                let dropped = self.buckets.pop_front().unwrap_or(0);
                self.buckets[0] += dropped;
                self.buckets.push_back(0);
            }
        }
        self.newest_slot = self.newest_slot.max(slot);
    }

    fn index_of(&self, t: Timestamp) -> usize {
        let slot = (t / self.width).clamp(self.oldest_slot(), self.newest_slot);
        (slot - self.oldest_slot()) as usize
    }

    pub fn add(&mut self, t: Timestamp, bytes: u64) {
        self.advance_to(t / self.width);
        let i = self.index_of(t);
        self.buckets[i] += bytes;
    }

    pub fn remove(&mut self, t: Timestamp, bytes: u64) {
        let i = self.index_of(t);
        self.buckets[i] = self.buckets[i].saturating_sub(bytes);
    }

    pub fn total(&self) -> u64 {
        self.buckets.iter().sum()
    }

    /// Bytes whose last access is before `now - idle_time`, counting only
    /// buckets that lie entirely before the cutoff.
    pub fn idle_bytes(&self, now: Timestamp, idle_time: u64) -> u64 {
        let Some(cutoff) = now.checked_sub(idle_time) else {
            return 0;
        };
        let oldest = self.oldest_slot();
        self.buckets
            .iter()
            .enumerate()
            .filter(|(i, _)| (oldest + *i as u64 + 1) * self.width <= cutoff)
            .map(|(_, b)| *b)
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdleTaxReport {
    pub idle_mem: u64,
    pub active_fraction: f64,
    pub tau: f64,
    pub target_mem: u64,
}

/// `1 - idle/actual`, or 1 for an empty application.
pub fn active_fraction(idle_mem: u64, actual_mem: u64) -> f64 {
    if actual_mem == 0 {
        1.0
    } else {
        1.0 - (idle_mem.min(actual_mem) as f64 / actual_mem as f64)
    }
}

/// Taxed target: `private / tau` with `tau = (1 - active*rate) / (1 - rate)`,
/// evaluated as `private * (1 - rate) / (1 - active*rate)` so that a full tax
/// on fully idle memory yields zero. A full tax on fully active memory leaves
/// the target at `private`.
pub fn idle_tax_target(private_mem: u64, tax_rate: f64, active_fraction: f64) -> IdleTaxReport {
    let denom = 1.0 - active_fraction * tax_rate;
    let (tau, target) = if denom <= f64::EPSILON {
        (1.0, private_mem as f64)
    } else {
        let tau = if tax_rate >= 1.0 {
            f64::INFINITY
        } else {
            denom / (1.0 - tax_rate)
        };
        (tau, private_mem as f64 * (1.0 - tax_rate) / denom)
    };
    IdleTaxReport {
        idle_mem: 0,
        active_fraction,
        tau,
        target_mem: target.round().clamp(0.0, private_mem as f64) as u64,
    }
}
