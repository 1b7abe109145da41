//! Per-application memory accounting and target policies.
//!
//! The arbiter decides how many bytes each application should hold
//! (`target_mem`) and tracks how many it does hold (`actual_mem`). The
//! cleaner turns the ratio of the two into eviction priority.

pub mod idle;
pub mod need;
pub mod rank;
pub mod shadow;

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AppId, KeyHash, Timestamp, MICROS_PER_SEC};

pub use idle::{active_fraction, idle_tax_target, IdleHistogram, IdleTaxReport};
pub use need::Need;
pub use rank::{RankPolicy, RankValue};
pub use shadow::{ShadowQueue, DEFAULT_SHADOW_QUEUE_BYTES};

pub const DEFAULT_CREDIT_SIZE: u64 = 64 * 1024;
pub const DEFAULT_IDLE_TIME: u64 = 5 * 3600 * MICROS_PER_SEC;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SharingPolicy {
    /// `target = private`, constant.
    Partitioned,
    /// `target = private + shared`; shadow-queue hits move credits.
    Shared,
    /// `target <= private`, reduced for memory idle longer than `idle_time`.
    IdleTax { tax_rate: f64, idle_time: u64 },
}

impl SharingPolicy {
    pub fn validate(&self) -> Result<()> {
        if let SharingPolicy::IdleTax { tax_rate, .. } = self {
            if !(0.0..=1.0).contains(tax_rate) {
                return Err(Error::Config(format!("tax_rate {tax_rate} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SharingPolicy::Partitioned => "partitioned",
            SharingPolicy::Shared => "shared",
            SharingPolicy::IdleTax { .. } => "idle_tax",
        }
    }
}

/// Registration parameters for one application.
#[derive(Debug, Clone)]
pub struct AppSpec {
    pub id: AppId,
    pub private_mem: u64,
    pub credit_size: u64,
    pub rank: RankPolicy,
    pub shadow_queue_bytes: u64,
}

impl AppSpec {
    pub fn new(id: AppId, private_mem: u64) -> Self {
        AppSpec {
            id,
            private_mem,
            credit_size: DEFAULT_CREDIT_SIZE,
            rank: RankPolicy::Lru,
            shadow_queue_bytes: DEFAULT_SHADOW_QUEUE_BYTES,
        }
    }
}

#[derive(Debug, Clone)]
struct Accounting {
    private_mem: u64,
    shared_mem: u64,
    target_mem: u64,
    actual_mem: u64,
    credit_size: u64,
    idle: IdleHistogram,
    last_idle_report: Option<IdleTaxReport>,
}

struct AppSlot {
    id: AppId,
    rank: RankPolicy,
    accounting: Mutex<Accounting>,
    shadow: Mutex<ShadowQueue>,
}

/// Copy of one application's accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSnapshot {
    pub app: AppId,
    pub private_mem: u64,
    pub shared_mem: u64,
    pub target_mem: u64,
    pub actual_mem: u64,
    pub credit_size: u64,
    pub need: f64,
    pub shadow_entries: usize,
    pub shadow_bytes: u64,
    pub idle_tax: Option<IdleTaxReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CreditTransfer {
    pub gainer: AppId,
    pub donor: AppId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MissOutcome {
    pub shadow_hit: bool,
    /// The shadow queue was busy and the check was skipped.
    pub skipped: bool,
    pub transfer: Option<CreditTransfer>,
}

/// One item the cleaner evicted, as reported to the arbiter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub key_hash: KeyHash,
    pub size: u64,
    pub last_access: Timestamp,
}

#[derive(Debug, Default)]
struct TargetHistory {
    samples: VecDeque<(Timestamp, Vec<(AppId, u64)>)>,
}

pub struct Arbiter {
    apps: RwLock<Vec<Arc<AppSlot>>>,
    policy: RwLock<SharingPolicy>,
    /// Serializes credit transfers so shared totals never tear.
    transfers: Mutex<ChaCha8Rng>,
    history: Mutex<TargetHistory>,
    idle_time_hint: u64,
}

impl Arbiter {
    /// Creates an arbiter whose initial applications split `shared_pool`
    /// equally (any remainder goes to the lowest ids, one byte each).
    pub fn new(
        policy: SharingPolicy,
        shared_pool: u64,
        specs: Vec<AppSpec>,
        seed: u64,
    ) -> Result<Self> {
        policy.validate()?;
        let idle_time_hint = match policy {
            SharingPolicy::IdleTax { idle_time, .. } => idle_time,
            _ => DEFAULT_IDLE_TIME,
        };
        let arbiter = Arbiter {
            apps: RwLock::new(Vec::new()),
            policy: RwLock::new(policy),
            transfers: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            history: Mutex::new(TargetHistory::default()),
            idle_time_hint,
        };
        let mut specs = specs;
        specs.sort_by_key(|s| s.id);
        let n = specs.len() as u64;
        let uses_pool = matches!(policy, SharingPolicy::Shared);
        for (i, spec) in specs.into_iter().enumerate() {
            let shared = if uses_pool && n > 0 {
                shared_pool / n + u64::from((i as u64) < shared_pool % n)
            } else {
                0
            };
            arbiter.insert(spec, shared)?;
        }
        Ok(arbiter)
    }

    fn insert(&self, spec: AppSpec, shared_mem: u64) -> Result<()> {
        let mut apps = self.apps.write();
        let pos = match apps.binary_search_by_key(&spec.id, |a| a.id) {
            Ok(_) => return Err(Error::DuplicateApp(spec.id)),
            Err(pos) => pos,
        };
        let policy = *self.policy.read();
        let target_mem = match policy {
            SharingPolicy::Shared => spec.private_mem + shared_mem,
            _ => spec.private_mem,
        };
        apps.insert(
            pos,
            Arc::new(AppSlot {
                id: spec.id,
                rank: spec.rank,
                accounting: Mutex::new(Accounting {
                    private_mem: spec.private_mem,
                    shared_mem,
                    target_mem,
                    actual_mem: 0,
                    credit_size: spec.credit_size,
                    idle: IdleHistogram::new(self.idle_time_hint),
                    last_idle_report: None,
                }),
                shadow: Mutex::new(ShadowQueue::new(spec.shadow_queue_bytes)),
            }),
        );
        Ok(())
    }

    /// Registers an application after startup; it owns no shared memory
    /// until it wins credits.
    pub fn register(&self, spec: AppSpec) -> Result<()> {
        self.insert(spec, 0)
    }

    fn slot(&self, app: AppId) -> Result<Arc<AppSlot>> {
        let apps = self.apps.read();
        apps.binary_search_by_key(&app, |a| a.id)
            .map(|i| apps[i].clone())
            .map_err(|_| Error::UnknownApp(app))
    }

    pub fn contains(&self, app: AppId) -> bool {
        self.slot(app).is_ok()
    }

    pub fn app_ids(&self) -> Vec<AppId> {
        self.apps.read().iter().map(|a| a.id).collect()
    }

    pub fn policy(&self) -> SharingPolicy {
        *self.policy.read()
    }

    pub fn rank_policy(&self, app: AppId) -> Result<RankPolicy> {
        Ok(self.slot(app)?.rank.clone())
    }

    pub fn need(&self, app: AppId) -> Result<Need> {
        let slot = self.slot(app)?;
        let acc = slot.accounting.lock();
        Ok(Need::compute(acc.target_mem, acc.actual_mem))
    }

    pub fn snapshot(&self, app: AppId) -> Result<AppSnapshot> {
        let slot = self.slot(app)?;
        let acc = slot.accounting.lock().clone();
        let shadow = slot.shadow.lock();
        Ok(AppSnapshot {
            app,
            private_mem: acc.private_mem,
            shared_mem: acc.shared_mem,
            target_mem: acc.target_mem,
            actual_mem: acc.actual_mem,
            credit_size: acc.credit_size,
            need: Need::compute(acc.target_mem, acc.actual_mem).value(),
            shadow_entries: shadow.len(),
            shadow_bytes: shadow.represented_bytes(),
            idle_tax: acc.last_idle_report,
        })
    }

    pub fn snapshots(&self) -> Vec<AppSnapshot> {
        self.app_ids()
            .into_iter()
            .filter_map(|a| self.snapshot(a).ok())
            .collect()
    }

    /// `(target, actual)` per application, in id order.
    pub fn targets_and_actuals(&self) -> Vec<(AppId, u64, u64)> {
        self.apps
            .read()
            .iter()
            .map(|a| {
                let acc = a.accounting.lock();
                (a.id, acc.target_mem, acc.actual_mem)
            })
            .collect()
    }

    pub fn total_shared(&self) -> u64 {
        self.apps
            .read()
            .iter()
            .map(|a| a.accounting.lock().shared_mem)
            .sum()
    }

    pub fn total_actual(&self) -> u64 {
        self.apps
            .read()
            .iter()
            .map(|a| a.accounting.lock().actual_mem)
            .sum()
    }

    // ---- accounting hooks ----

    pub fn record_insert(&self, app: AppId, bytes: u64, now: Timestamp) -> Result<()> {
        let slot = self.slot(app)?;
        let mut acc = slot.accounting.lock();
        acc.actual_mem += bytes;
        acc.idle.add(now, bytes);
        Ok(())
    }

    /// A record stopped being live without being evicted (overwrite or
    /// delete). Nothing enters the shadow queue.
    pub fn record_remove(&self, app: AppId, bytes: u64, last_access: Timestamp) -> Result<()> {
        let slot = self.slot(app)?;
        let mut acc = slot.accounting.lock();
        acc.actual_mem = acc.actual_mem.saturating_sub(bytes);
        acc.idle.remove(last_access, bytes);
        Ok(())
    }

    pub fn record_access(
        &self,
        app: AppId,
        bytes: u64,
        previous: Timestamp,
        now: Timestamp,
    ) -> Result<()> {
        let slot = self.slot(app)?;
        let mut acc = slot.accounting.lock();
        acc.idle.remove(previous, bytes);
        acc.idle.add(now, bytes);
        Ok(())
    }

    /// Single-item form of [`Arbiter::apply_evictions`].
    pub fn record_eviction(
        &self,
        app: AppId,
        key_hash: KeyHash,
        bytes: u64,
        last_access: Timestamp,
    ) -> Result<()> {
        self.apply_evictions(
            app,
            &[Eviction {
                key_hash,
                size: bytes,
                last_access,
            }],
        )
    }

    /// Applies a batch of cleaner evictions with one acquisition of each of
    /// the application's locks.
    pub fn apply_evictions(&self, app: AppId, evicted: &[Eviction]) -> Result<()> {
        if evicted.is_empty() {
            return Ok(());
        }
        let slot = self.slot(app)?;
        {
            let mut acc = slot.accounting.lock();
            for e in evicted {
                acc.actual_mem = acc.actual_mem.saturating_sub(e.size);
                acc.idle.remove(e.last_access, e.size);
            }
        }
        let mut shadow = slot.shadow.lock();
        for e in evicted {
            shadow.push(e.key_hash, e.size as u32);
        }
        Ok(())
    }

    /// Handles a GET miss: consults the shadow queue without blocking and,
    /// under the shared policy, moves one credit on a shadow hit.
    pub fn on_miss(&self, app: AppId, key_hash: KeyHash) -> Result<MissOutcome> {
        let slot = self.slot(app)?;
        let shadow_hit = match slot.shadow.try_lock() {
            Some(mut shadow) => shadow.take(key_hash),
            None => {
                return Ok(MissOutcome {
                    skipped: true,
                    ..Default::default()
                })
            }
        };
        let transfer = if shadow_hit && self.policy() == SharingPolicy::Shared {
            self.transfer_credit(app)?
        } else {
            None
        };
        Ok(MissOutcome {
            shadow_hit,
            skipped: false,
            transfer,
        })
    }

    /// Moves one of `gainer`'s credits from a random other application that
    /// holds at least that much shared memory, then recomputes every target.
    pub fn transfer_credit(&self, gainer: AppId) -> Result<Option<CreditTransfer>> {
        let gainer_slot = self.slot(gainer)?;
        let mut rng = self.transfers.lock();
        let apps = self.apps.read().clone();
        let credit = gainer_slot.accounting.lock().credit_size;
        let donors: Vec<&Arc<AppSlot>> = apps
            .iter()
            .filter(|a| a.id != gainer && a.accounting.lock().shared_mem >= credit)
            .collect();
        let transfer = if donors.is_empty() || credit == 0 {
            None
        } else {
            let donor = donors[rng.random_range(0..donors.len())];
            donor.accounting.lock().shared_mem -= credit;
            gainer_slot.accounting.lock().shared_mem += credit;
            Some(CreditTransfer {
                gainer,
                donor: donor.id,
                bytes: credit,
            })
        };
        for a in &apps {
            let mut acc = a.accounting.lock();
            acc.target_mem = acc.private_mem + acc.shared_mem;
        }
        Ok(transfer)
    }

    /// Recomputes one application's target under the idle tax.
    pub fn set_target_idle_tax(
        &self,
        app: AppId,
        tax_rate: f64,
        idle_time: u64,
        now: Timestamp,
    ) -> Result<IdleTaxReport> {
        if !(0.0..=1.0).contains(&tax_rate) {
            return Err(Error::Config(format!("tax_rate {tax_rate} outside [0, 1]")));
        }
        let slot = self.slot(app)?;
        let mut acc = slot.accounting.lock();
        let idle_mem = acc.idle.idle_bytes(now, idle_time).min(acc.actual_mem);
        let active = active_fraction(idle_mem, acc.actual_mem);
        let mut report = idle_tax_target(acc.private_mem, tax_rate, active);
        report.idle_mem = idle_mem;
        acc.target_mem = report.target_mem;
        acc.last_idle_report = Some(report);
        Ok(report)
    }

    /// Periodic policy work: idle-tax targets and the target history used to
    /// derive private memory automatically.
    pub fn tick(&self, now: Timestamp) {
        if let SharingPolicy::IdleTax {
            tax_rate,
            idle_time,
        } = self.policy()
        {
            for app in self.app_ids() {
                let _ = self.set_target_idle_tax(app, tax_rate, idle_time, now);
            }
        }
        let sample = self
            .targets_and_actuals()
            .into_iter()
            .map(|(a, t, _)| (a, t))
            .collect();
        let mut history = self.history.lock();
        history.samples.push_back((now, sample));
        // Bounded: keep the most recent day at one-second ticks.
        while history.samples.len() > 86_400 {
            history.samples.pop_front();
        }
    }

    /// Mean target per application over the trailing `window`.
    pub fn auto_private_memory(&self, window: u64, now: Timestamp) -> Result<BTreeMap<AppId, u64>> {
        let history = self.history.lock();
        let first = history.samples.front().map(|(t, _)| *t);
        let available = first.map_or(0, |t| now.saturating_sub(t));
        if first.is_none() || window > available {
            return Err(Error::InsufficientHistory { window, available });
        }
        let from = now - window;
        let mut sums: BTreeMap<AppId, (u128, u64)> = BTreeMap::new();
        for (t, sample) in history
            .samples
            .iter()
            .filter(|(t, _)| *t >= from && *t <= now)
        {
            let _ = t;
            for (app, target) in sample {
                let e = sums.entry(*app).or_default();
                e.0 += *target as u128;
                e.1 += 1;
            }
        }
        Ok(sums
            .into_iter()
            .map(|(app, (sum, n))| (app, (sum as f64 / n as f64).round() as u64))
            .collect())
    }

    /// Switches to the idle-tax policy with the given private allocations.
    pub fn switch_to_idle_tax(
        &self,
        private: &BTreeMap<AppId, u64>,
        tax_rate: f64,
        idle_time: u64,
    ) -> Result<()> {
        let policy = SharingPolicy::IdleTax {
            tax_rate,
            idle_time,
        };
        policy.validate()?;
        let _rng = self.transfers.lock();
        *self.policy.write() = policy;
        for slot in self.apps.read().iter() {
            let mut acc = slot.accounting.lock();
            if let Some(p) = private.get(&slot.id) {
                acc.private_mem = *p;
            }
            acc.shared_mem = 0;
            acc.target_mem = acc.private_mem;
            if acc.idle.bucket_width() != (idle_time / idle::BUCKETS_PER_IDLE_TIME).max(1) {
                // Bytes cannot be re-bucketed without their timestamps; treat
                // everything resident as freshly accessed.
                let total = acc.actual_mem;
                acc.idle = IdleHistogram::new(idle_time);
                let newest = self.history.lock().samples.back().map_or(0, |(t, _)| *t);
                acc.idle.add(newest, total);
            }
        }
        Ok(())
    }
}

/// Splits `pool` bytes among contenders in proportion to their targets.
pub fn proportional_share(targets: &[(AppId, u64)], pool: u64) -> Vec<(AppId, f64)> {
    let total: u64 = targets.iter().map(|(_, t)| *t).sum();
    targets
        .iter()
        .map(|(a, t)| {
            let share = if total == 0 {
                pool as f64 / targets.len() as f64
            } else {
                pool as f64 * *t as f64 / total as f64
            };
            (*a, share)
        })
        .collect()
}
