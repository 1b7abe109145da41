//! memcached text protocol front end over [`ConcurrentEngine`].
//!
//! Each connection picks its application with `tenant <id> <token>` or is
//! bound to the listener's default tenant. Flags are stored with the value;
//! expiration times are parsed and ignored.
//!
//! [`ConcurrentEngine`]: crate::engine::ConcurrentEngine

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{parse, Command, Parsed, ProtocolError};
pub use server::{Server, ServerConfig, TenantConfig};
pub use session::{Flow, Session, TenantTable};
