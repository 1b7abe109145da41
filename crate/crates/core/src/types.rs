//! Small shared domain types.

use std::fmt;
use std::hash::Hasher;

use serde::{Deserialize, Serialize};

/// Identifies a tenant application.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct AppId(pub u32);

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Microseconds of trace time (simulator) or of wall time since engine start
/// (server). Only differences and ordering matter.
pub type Timestamp = u64;

/// 64-bit key digest kept in shadow queues.
pub type KeyHash = u64;

/// Stable FNV-1a digest of a key. Shadow queues and the index shard selector
/// both use it, so it must not vary between runs.
pub fn key_hash(key: &[u8]) -> KeyHash {
    let mut hasher = fnv::FnvHasher::default();
    hasher.write(key);
    hasher.finish()
}

pub const MICROS_PER_SEC: u64 = 1_000_000;
