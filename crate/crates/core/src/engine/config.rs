use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arbiter::{
    AppSpec, RankPolicy, SharingPolicy, DEFAULT_CREDIT_SIZE, DEFAULT_SHADOW_QUEUE_BYTES,
};
use crate::baselines::DEFAULT_SLAB_SIZE;
use crate::cleaner::CleanerConfig;
use crate::error::{Error, Result};
use crate::log::{LogConfig, DEFAULT_FREE_POOL_FRACTION, DEFAULT_SEGMENT_SIZE};
use crate::types::{AppId, MICROS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Memshare,
    SlabPartitioned,
    SlabGreedy,
}

impl EngineKind {
    pub fn name(&self) -> &'static str {
        match self {
            EngineKind::Memshare => "memshare",
            EngineKind::SlabPartitioned => "slab_partitioned",
            EngineKind::SlabGreedy => "slab_greedy",
        }
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memshare" => Ok(EngineKind::Memshare),
            "slab_partitioned" => Ok(EngineKind::SlabPartitioned),
            "slab_greedy" => Ok(EngineKind::SlabGreedy),
            other => Err(Error::Config(format!("unknown engine `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Partitioned,
    Shared,
    IdleTax,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partitioned" => Ok(PolicyKind::Partitioned),
            "shared" => Ok(PolicyKind::Shared),
            "idle_tax" => Ok(PolicyKind::IdleTax),
            other => Err(Error::Config(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub id: u32,
    /// Relative weight for splitting private memory and slab partitions.
    #[serde(default = "default_share")]
    pub share: f64,
    /// Absolute private memory; overrides the share-based split.
    #[serde(default)]
    pub private_mem_bytes: Option<u64>,
    #[serde(default = "default_credit")]
    pub credit_size_bytes: u64,
    #[serde(default)]
    pub rank: RankPolicy,
    #[serde(default = "default_shadow")]
    pub shadow_queue_bytes: u64,
}

impl AppConfig {
    pub fn new(id: u32) -> Self {
        AppConfig {
            id,
            share: 1.0,
            private_mem_bytes: None,
            credit_size_bytes: DEFAULT_CREDIT_SIZE,
            rank: RankPolicy::Lru,
            shadow_queue_bytes: DEFAULT_SHADOW_QUEUE_BYTES,
        }
    }
}

fn default_share() -> f64 {
    1.0
}
fn default_credit() -> u64 {
    DEFAULT_CREDIT_SIZE
}
fn default_shadow() -> u64 {
    DEFAULT_SHADOW_QUEUE_BYTES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub engine: EngineKind,
    pub total_memory_bytes: usize,
    pub segment_size_bytes: usize,
    pub free_pool_target_fraction: f64,
    pub index_buckets: usize,
    pub slab_size_bytes: usize,
    pub policy: PolicyKind,
    /// Fraction of managed memory reserved as private memory. Defaults to 1
    /// for the partitioned and idle-tax policies and 0.5 for shared.
    pub private_fraction: Option<f64>,
    pub tax_rate: f64,
    pub idle_time_secs: f64,
    pub tick_interval_secs: f64,
    pub metrics_window_secs: f64,
    pub seed: u64,
    pub cleaner: CleanerConfig,
    pub apps: Vec<AppConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            engine: EngineKind::Memshare,
            total_memory_bytes: 64 * DEFAULT_SEGMENT_SIZE,
            segment_size_bytes: DEFAULT_SEGMENT_SIZE,
            free_pool_target_fraction: DEFAULT_FREE_POOL_FRACTION,
            index_buckets: 256,
            slab_size_bytes: DEFAULT_SLAB_SIZE,
            policy: PolicyKind::Shared,
            private_fraction: None,
            tax_rate: 0.5,
            idle_time_secs: 5.0 * 3600.0,
            tick_interval_secs: 1.0,
            metrics_window_secs: 60.0,
            seed: 0,
            cleaner: CleanerConfig::default(),
            apps: Vec::new(),
        }
    }
}

fn secs_to_micros(s: f64) -> u64 {
    (s * MICROS_PER_SEC as f64).round() as u64
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: EngineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn log_config(&self) -> LogConfig {
        LogConfig {
            segment_size_bytes: self.segment_size_bytes,
            total_memory_bytes: self.total_memory_bytes,
            free_pool_target_fraction: self.free_pool_target_fraction,
            index_buckets: self.index_buckets,
        }
    }

    pub fn effective_private_fraction(&self) -> f64 {
        self.private_fraction.unwrap_or(match self.policy {
            PolicyKind::Shared => 0.5,
            _ => 1.0,
        })
    }

    pub fn idle_time(&self) -> u64 {
        secs_to_micros(self.idle_time_secs)
    }

    pub fn tick_interval(&self) -> u64 {
        secs_to_micros(self.tick_interval_secs)
    }

    pub fn metrics_window(&self) -> u64 {
        secs_to_micros(self.metrics_window_secs)
    }

    pub fn sharing_policy(&self) -> SharingPolicy {
        match self.policy {
            PolicyKind::Partitioned => SharingPolicy::Partitioned,
            PolicyKind::Shared => SharingPolicy::Shared,
            PolicyKind::IdleTax => SharingPolicy::IdleTax {
                tax_rate: self.tax_rate,
                idle_time: self.idle_time(),
            },
        }
    }

    pub fn app_ids(&self) -> Vec<AppId> {
        self.apps.iter().map(|a| AppId(a.id)).collect()
    }

    pub fn shares(&self) -> Vec<(AppId, f64)> {
        self.apps.iter().map(|a| (AppId(a.id), a.share)).collect()
    }

    /// Private memory per application: explicit values where given, the
    /// remaining private budget split by share otherwise.
    pub fn private_allocations(&self) -> Vec<(AppId, u64)> {
        let managed = self.log_config().managed_bytes() as f64;
        let explicit: u64 = self.apps.iter().filter_map(|a| a.private_mem_bytes).sum();
        let budget = (managed * self.effective_private_fraction() - explicit as f64).max(0.0);
        let implicit_share: f64 = self
            .apps
            .iter()
            .filter(|a| a.private_mem_bytes.is_none())
            .map(|a| a.share)
            .sum();
        self.apps
            .iter()
            .map(|a| {
                let bytes = a.private_mem_bytes.unwrap_or_else(|| {
                    if implicit_share > 0.0 {
                        (budget * a.share / implicit_share).floor() as u64
                    } else {
                        0
                    }
                });
                (AppId(a.id), bytes)
            })
            .collect()
    }

    /// Managed bytes not reserved as private memory.
    pub fn shared_pool(&self) -> u64 {
        let private: u64 = self.private_allocations().iter().map(|(_, b)| b).sum();
        (self.log_config().managed_bytes() as u64).saturating_sub(private)
    }

    pub fn app_specs(&self) -> Vec<AppSpec> {
        let private = self.private_allocations();
        self.apps
            .iter()
            .zip(private)
            .map(|(a, (id, bytes))| AppSpec {
                id,
                private_mem: bytes,
                credit_size: a.credit_size_bytes,
                rank: a.rank.clone(),
                shadow_queue_bytes: a.shadow_queue_bytes,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.engine == EngineKind::Memshare {
            self.log_config().validate()?;
        } else if self.total_memory_bytes < self.slab_size_bytes {
            return Err(Error::Config(
                "total memory is smaller than one slab".into(),
            ));
        }
        self.cleaner.validate()?;
        self.sharing_policy().validate()?;
        if let Some(f) = self.private_fraction {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!(
                    "private_fraction {f} outside [0, 1]"
                )));
            }
        }
        if self.apps.is_empty() {
            return Err(Error::Config("at least one app is required".into()));
        }
        let mut ids = self.app_ids();
        ids.sort();
        ids.dedup();
        if ids.len() != self.apps.len() {
            return Err(Error::Config("app ids must be unique".into()));
        }
        if self
            .apps
            .iter()
            .any(|a| !(a.share.is_finite() && a.share >= 0.0))
        {
            return Err(Error::Config(
                "app shares must be finite and nonnegative".into(),
            ));
        }
        if self.idle_time_secs <= 0.0
            || self.tick_interval_secs <= 0.0
            || self.metrics_window_secs <= 0.0
        {
            return Err(Error::Config("time intervals must be positive".into()));
        }
        if self.engine == EngineKind::Memshare {
            let private: u64 = self.private_allocations().iter().map(|(_, b)| b).sum();
            let managed = self.log_config().managed_bytes() as u64;
            if private > managed {
                return Err(Error::Config(format!(
                    "private memory of {private} bytes exceeds the {managed} managed bytes"
                )));
            }
        }
        Ok(())
    }
}
