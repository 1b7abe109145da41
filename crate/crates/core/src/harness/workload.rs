//! Synthetic multi-application workloads.
//!
//! Each application is an independent Poisson arrival process whose rate
//! may be multiplied during burst windows. Key popularity is Zipfian
//! (rejection-inversion sampling from `rand_distr`) or uniform. Every key
//! has a fixed size derived from a hash of `(seed, app, key)`, so a key
//! refilled after a miss keeps its size. All randomness comes from ChaCha8
//! with one stream per application, so output depends only on the workload and
//! the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::log::RECORD_HEADER_LEN;
use crate::types::{AppId, MICROS_PER_SEC};

use super::trace::{Op, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Popularity {
    Zipf { theta: f64 },
    Uniform,
}

/// Distribution of total item sizes: header, key and value together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SizeDist {
    Constant {
        bytes: u32,
    },
    Uniform {
        min: u32,
        max: u32,
    },
    TwoPoint {
        small: u32,
        large: u32,
        p_small: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Burst {
    pub start_secs: f64,
    pub duration_secs: f64,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppWorkload {
    pub app: u32,
    pub key_space: u64,
    /// Requests per second outside bursts.
    pub rate: f64,
    #[serde(default = "default_get_fraction")]
    pub get_fraction: f64,
    pub popularity: Popularity,
    pub sizes: SizeDist,
    #[serde(default)]
    pub bursts: Vec<Burst>,
}

fn default_get_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub duration_secs: f64,
    pub apps: Vec<AppWorkload>,
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: WorkloadSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("workload serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return bad("duration_secs must be positive".into());
        }
        if self.apps.is_empty() {
            return bad("no apps".into());
        }
        for a in &self.apps {
            if a.key_space == 0 {
                return bad(format!("app {}: key_space must be positive", a.app));
            }
            if !(a.rate > 0.0 && a.rate.is_finite()) {
                return bad(format!("app {}: rate must be positive", a.app));
            }
            if !(0.0..=1.0).contains(&a.get_fraction) {
                return bad(format!("app {}: get_fraction outside [0, 1]", a.app));
            }
            if let Popularity::Zipf { theta } = a.popularity {
                if !(theta >= 0.0 && theta.is_finite()) {
                    return bad(format!("app {}: zipf theta must be nonnegative", a.app));
                }
            }
            match a.sizes {
                SizeDist::Constant { bytes: 0 } => return bad(format!("app {}: zero size", a.app)),
                SizeDist::Uniform { min, max } if min == 0 || min > max => {
                    return bad(format!("app {}: bad uniform size range", a.app))
                }
                SizeDist::TwoPoint {
                    small,
                    large,
                    p_small,
                } if small == 0 || large == 0 || !(0.0..=1.0).contains(&p_small) => {
                    return bad(format!("app {}: bad two-point sizes", a.app))
                }
                _ => {}
            }
            for b in &a.bursts {
                if b.duration_secs < 0.0 || !(b.multiplier > 0.0 && b.multiplier.is_finite()) {
                    return bad(format!("app {}: bad burst", a.app));
                }
            }
        }
        let mut ids: Vec<_> = self.apps.iter().map(|a| a.app).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.apps.len() {
            return bad("duplicate app ids".into());
        }
        Ok(())
    }
}

impl AppWorkload {
    fn rate_at(&self, t: f64) -> f64 {
        let m = self
            .bursts
            .iter()
            .filter(|b| t >= b.start_secs && t < b.start_secs + b.duration_secs)
            .map(|b| b.multiplier)
            .fold(1.0, f64::max);
        self.rate * m
    }

    fn max_rate(&self) -> f64 {
        self.bursts.iter().map(|b| b.multiplier).fold(1.0, f64::max) * self.rate
    }
}

pub fn key_name(app: u32, index: u64) -> String {
    format!("a{app}-{index}")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Total item size of one key, fixed for a given seed.
pub fn item_size(dist: &SizeDist, seed: u64, app: u32, index: u64) -> u32 {
    let h = splitmix64(seed ^ splitmix64((app as u64) << 40 ^ index));
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    match *dist {
        SizeDist::Constant { bytes } => bytes,
        SizeDist::Uniform { min, max } => min + ((max - min + 1) as f64 * u) as u32,
        SizeDist::TwoPoint {
            small,
            large,
            p_small,
        } => {
            if u < p_small {
                small
            } else {
                large
            }
        }
    }
}

/// Value length that makes the stored item `item` bytes long.
pub fn value_len(item: u32, key: &str) -> u32 {
    item.saturating_sub((RECORD_HEADER_LEN + key.len()) as u32)
        .max(1)
}

/// Generates the merged request stream, ordered by time then app.
pub fn generate(spec: &WorkloadSpec, seed: u64) -> Result<Vec<TraceRecord>> {
    spec.validate()?;
    let mut all = Vec::new();
    for (i, app) in spec.apps.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let zipf = match app.popularity {
            Popularity::Zipf { theta } => Some(
                Zipf::new(app.key_space as f64, theta)
                    .map_err(|e| Error::InvalidSpec(format!("app {}: {e}", app.app)))?,
            ),
            Popularity::Uniform => None,
        };
        let max_rate = app.max_rate();
        let gaps = Exp::new(max_rate).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        let mut t = 0.0;
        loop {
            t += gaps.sample(&mut rng);
            if t >= spec.duration_secs {
                break;
            }
            if rng.random::<f64>() * max_rate >= app.rate_at(t) {
                continue;
            }
            let op = if rng.random::<f64>() < app.get_fraction {
                Op::Get
            } else {
                Op::Set
            };
            let index = match &zipf {
                Some(z) => (z.sample(&mut rng) as u64).clamp(1, app.key_space) - 1,
                None => rng.random_range(0..app.key_space),
            };
            let key = key_name(app.app, index);
            let size = value_len(item_size(&app.sizes, seed, app.app, index), &key);
            all.push(TraceRecord {
                ts: (t * MICROS_PER_SEC as f64) as u64,
                op,
                app: AppId(app.app),
                key,
                size,
            });
        }
    }
    all.sort_by_key(|r| (r.ts, r.app));
    Ok(all)
}
