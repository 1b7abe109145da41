//! Multi-tenant log-structured key-value cache.
//!
//! * [`log`]: segmented log, hash index and epoch-based segment reuse.
//! * [`arbiter`]: per-application targets, need, shadow queues and sharing
//!   policies.
//! * [`cleaner`]: segment selection and need-ordered relocation.
//! * [`engine`]: request facade, simulator and concurrent drivers.
//! * [`baselines`]: slab allocator caches for comparison.
//! * [`harness`]: traces, synthetic workloads and experiment reports.
//! * [`wire`]: memcached text protocol front end.

pub mod arbiter;
pub mod baselines;
pub mod cleaner;
pub mod engine;
pub mod error;
pub mod harness;
pub mod log;
pub mod types;
pub mod wire;

pub use error::{Error, Result};
pub use types::{key_hash, AppId, KeyHash, Timestamp, MICROS_PER_SEC};
