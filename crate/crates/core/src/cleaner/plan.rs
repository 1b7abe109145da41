//! Survivor selection for one cleaning pass.
//!
//! Repeatedly take the application with the highest need, relocate its
//! highest-ranked remaining candidate into the output segments, and credit
//! the bytes back to it. The first candidate that no longer fits ends the
//! pass; it and everything still unplaced are evicted.

use std::cmp::Reverse;
use std::collections::BTreeMap;

use crate::arbiter::{Need, RankValue};
use crate::types::{AppId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Candidate {
    pub app: AppId,
    pub size: usize,
    pub rank: RankValue,
    pub last_access: Timestamp,
    pub seq: u64,
}

impl Candidate {
    fn priority(&self) -> (RankValue, Timestamp, u64) {
        (self.rank, self.last_access, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub candidate: usize,
    pub bin: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassPlan {
    /// In relocation order, which is descending (need, rank) priority.
    pub placements: Vec<Placement>,
    pub evicted: Vec<usize>,
    /// Bytes written into each used output bin.
    pub bin_fill: Vec<usize>,
}

impl PassPlan {
    pub fn bins_used(&self) -> usize {
        self.bin_fill.len()
    }

    pub fn relocated_bytes(&self) -> usize {
        self.bin_fill.iter().sum()
    }
}

/// Accounting the planner needs for one application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppBudget {
    pub target: u64,
    /// Live bytes outside the pass inputs.
    pub actual_outside: u64,
}

pub fn plan_relocation(
    candidates: &[Candidate],
    budgets: &BTreeMap<AppId, AppBudget>,
    bins: usize,
    bin_capacity: usize,
) -> PassPlan {
    let mut queues: BTreeMap<AppId, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        queues.entry(c.app).or_default().push(i);
    }
    // Lowest priority first so the best candidate pops off the end.
    for q in queues.values_mut() {
        q.sort_by_key(|&i| (candidates[i].priority(), Reverse(i)));
    }
    let mut actual: BTreeMap<AppId, u64> = queues
        .keys()
        .map(|a| (*a, budgets.get(a).map_or(0, |b| b.actual_outside)))
        .collect();

    let mut plan = PassPlan::default();
    // argmax need; BTreeMap order makes the smaller id win ties.
    while let Some(app) = queues
        .iter()
        .filter(|(_, q)| !q.is_empty())
        .map(|(a, _)| {
            let target = budgets.get(a).map_or(0, |b| b.target);
            (*a, Need::compute(target, actual[a]))
        })
        .fold(None::<(AppId, Need)>, |best, (a, n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((a, n)),
        })
        .map(|(a, _)| a)
    {
        let idx = queues
            .get_mut(&app)
            .and_then(Vec::pop)
            .expect("non-empty queue");
        let size = candidates[idx].size;
        let fill = plan.bin_fill.last().copied();
        let (bin, offset) = match fill {
            Some(f) if f + size <= bin_capacity => (plan.bin_fill.len() - 1, f),
            _ if plan.bin_fill.len() < bins && size <= bin_capacity => {
                plan.bin_fill.push(0);
                (plan.bin_fill.len() - 1, 0)
            }
            _ => {
                plan.evicted.push(idx);
                break;
            }
        };
        plan.bin_fill[bin] += size;
        plan.placements.push(Placement {
            candidate: idx,
            bin,
            offset,
        });
        *actual.get_mut(&app).expect("tracked app") += size as u64;
    }
    for q in queues.values() {
        plan.evicted.extend(q.iter().copied());
    }
    plan
}

/// Evicts the contents of the last output bin when it is filled below
/// `threshold` of capacity. Returns whether a bin was dropped.
pub fn drop_underutilized_tail(plan: &mut PassPlan, bin_capacity: usize, threshold: f64) -> bool {
    let Some(&fill) = plan.bin_fill.last() else {
        return false;
    };
    if threshold <= 0.0 || (fill as f64) >= threshold * bin_capacity as f64 {
        return false;
    }
    let last = plan.bin_fill.len() - 1;
    let (dropped, kept): (Vec<_>, Vec<_>) = plan.placements.iter().partition(|p| p.bin == last);
    plan.placements = kept;
    plan.evicted.extend(dropped.iter().map(|p| p.candidate));
    plan.bin_fill.pop();
    true
}
