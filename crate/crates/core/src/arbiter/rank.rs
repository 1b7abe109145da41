//! Per-application ranking functions over last-access time `t` and access
//! count `f`. Higher rank means more valuable: kept longer by the cleaner.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::types::Timestamp;

pub type RankFn = dyn Fn(Timestamp, u32) -> u64 + Send + Sync;

#[derive(Clone, Default)]
pub enum RankPolicy {
    #[default]
    Lru,
    Lfu,
    /// Records accessed at least `threshold` times form a protected tier that
    /// outranks the probationary tier; LRU within each tier.
    SegmentedLru {
        threshold: u32,
    },
    Custom(Arc<RankFn>),
}

impl fmt::Debug for RankPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankPolicy::Custom(_) => f.write_str("Custom(..)"),
            other => write!(f, "{other}"),
        }
    }
}

impl fmt::Display for RankPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankPolicy::Lru => f.write_str("lru"),
            RankPolicy::Lfu => f.write_str("lfu"),
            RankPolicy::SegmentedLru { threshold } => write!(f, "slru:{threshold}"),
            RankPolicy::Custom(_) => f.write_str("custom"),
        }
    }
}

impl FromStr for RankPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lru" => Ok(RankPolicy::Lru),
            "lfu" => Ok(RankPolicy::Lfu),
            _ => {
                let threshold = s
                    .strip_prefix("slru:")
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| {
                        format!("unknown rank policy {s:?} (expected lru, lfu or slru:<n>)")
                    })?;
                Ok(RankPolicy::SegmentedLru { threshold })
            }
        }
    }
}

impl PartialEq for RankPolicy {
    /// Custom functions compare by identity.
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (RankPolicy::Lru, RankPolicy::Lru) | (RankPolicy::Lfu, RankPolicy::Lfu) => true,
            (
                RankPolicy::SegmentedLru { threshold: a },
                RankPolicy::SegmentedLru { threshold: b },
            ) => a == b,
            (RankPolicy::Custom(a), RankPolicy::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl Serialize for RankPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RankPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lexicographically ordered rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RankValue {
    pub tier: u64,
    pub value: u64,
}

impl RankPolicy {
    pub fn rank(&self, last_access: Timestamp, frequency: u32) -> RankValue {
        match self {
            RankPolicy::Lru => RankValue {
                tier: 0,
                value: last_access,
            },
            RankPolicy::Lfu => RankValue {
                tier: 0,
                value: frequency as u64,
            },
            RankPolicy::SegmentedLru { threshold } => RankValue {
                tier: (frequency >= *threshold) as u64,
                value: last_access,
            },
            RankPolicy::Custom(f) => RankValue {
                tier: 0,
                value: f(last_access, frequency),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_prefers_recent() {
        let p = RankPolicy::Lru;
        assert!(p.rank(9, 1) > p.rank(5, 100));
    }

    #[test]
    fn lfu_prefers_frequent_regardless_of_time() {
        let p = RankPolicy::Lfu;
        assert!(p.rank(0, 3) > p.rank(1_000_000, 1));
    }

    #[test]
    fn slru_protected_tier_wins() {
        let p = RankPolicy::SegmentedLru { threshold: 2 };
        assert!(p.rank(1, 2) > p.rank(100, 1));
        assert!(p.rank(100, 1) > p.rank(50, 1));
    }

    #[test]
    fn custom_rank() {
        let p = RankPolicy::Custom(Arc::new(|t, f| t / 10 + f as u64));
        assert_eq!(p.rank(100, 5).value, 15);
    }

    #[test]
    fn parse_round_trip() {
        for s in ["lru", "lfu", "slru:4"] {
            assert_eq!(s.parse::<RankPolicy>().unwrap().to_string(), s);
        }
        assert!("mru".parse::<RankPolicy>().is_err());
        assert!("slru:x".parse::<RankPolicy>().is_err());
    }
}
