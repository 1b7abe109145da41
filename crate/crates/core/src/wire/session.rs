use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use crate::engine::{ConcurrentEngine, GetResult};
use crate::error::Error;
use crate::types::AppId;

use super::protocol::{parse, Command, Parsed, ProtocolError};

/// Which tenants a listener accepts and how they authenticate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TenantTable {
    /// Token per app; an empty token accepts any.
    pub tokens: BTreeMap<AppId, String>,
    /// Tenant bound to every new session on this listener.
    pub default_app: Option<AppId>,
}

impl TenantTable {
    pub fn open(apps: impl IntoIterator<Item = AppId>) -> Self {
        TenantTable {
            tokens: apps.into_iter().map(|a| (a, String::new())).collect(),
            default_app: None,
        }
    }

    fn admit(&self, app: AppId, token: &str) -> bool {
        matches!(self.tokens.get(&app), Some(t) if t.is_empty() || t == token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Close,
}

/// Per-connection protocol state.
pub struct Session {
    pub id: u64,
    app: Option<AppId>,
    /// Epoch observed when the current request started.
    epoch: u64,
    input: Vec<u8>,
    engine: Arc<ConcurrentEngine>,
    tenants: Arc<TenantTable>,
}

const FLAGS_LEN: usize = 4;

impl Session {
    pub fn new(id: u64, engine: Arc<ConcurrentEngine>, tenants: Arc<TenantTable>) -> Self {
        Session {
            id,
            app: tenants.default_app,
            epoch: 0,
            input: Vec::new(),
            engine,
            tenants,
        }
    }

    pub fn app(&self) -> Option<AppId> {
        self.app
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Buffers `bytes`, runs every complete command and appends the
    /// responses to `out`.
    pub fn feed(&mut self, bytes: &[u8], out: &mut Vec<u8>) -> Flow {
        self.input.extend_from_slice(bytes);
        let mut start = 0;
        let mut flow = Flow::Continue;
        while start < self.input.len() {
            match parse(&self.input[start..]) {
                Parsed::Incomplete => break,
                Parsed::Error { error, consumed } => {
                    start += consumed;
                    out.extend_from_slice(error.response());
                    if error == ProtocolError::LineTooLong {
                        flow = Flow::Close;
                        break;
                    }
                }
                Parsed::Command { command, consumed } => {
                    start += consumed;
                    if self.execute(command, out) == Flow::Close {
                        flow = Flow::Close;
                        break;
                    }
                }
            }
        }
        self.input.drain(..start);
        flow
    }

    pub fn execute(&mut self, command: Command, out: &mut Vec<u8>) -> Flow {
        self.epoch = self.engine.core().store().epochs().current();
        match command {
            Command::Quit => return Flow::Close,
            Command::Tenant { app, token } => {
                let app = AppId(app);
                if self.tenants.admit(app, &token) {
                    self.app = Some(app);
                    out.extend_from_slice(b"OK\r\n");
                } else {
                    out.extend_from_slice(b"SERVER_ERROR unknown tenant\r\n");
                }
            }
            Command::Get { keys } => {
                let Some(app) = self.tenant(out) else {
                    return Flow::Continue;
                };
                for key in keys {
                    match self.engine.get(app, &key) {
                        Ok(GetResult::Hit(v)) if v.len() >= FLAGS_LEN => {
                            let flags =
                                u32::from_be_bytes(v[..FLAGS_LEN].try_into().expect("flag bytes"));
                            let data = &v[FLAGS_LEN..];
                            out.extend_from_slice(b"VALUE ");
                            out.extend_from_slice(&key);
                            let _ = write!(out, " {} {}\r\n", flags, data.len());
                            out.extend_from_slice(data);
                            out.extend_from_slice(b"\r\n");
                        }
                        Ok(_) => {}
                        Err(e) => return self.server_error(e, out),
                    }
                }
                out.extend_from_slice(b"END\r\n");
            }
            Command::Set {
                key,
                flags,
                data,
                noreply,
                ..
            } => {
                let Some(app) = self.tenant(out) else {
                    return Flow::Continue;
                };
                let mut value = Vec::with_capacity(FLAGS_LEN + data.len());
                value.extend_from_slice(&flags.to_be_bytes());
                value.extend_from_slice(&data);
                match self.engine.set(app, &key, &value) {
                    Ok(()) => {
                        if !noreply {
                            out.extend_from_slice(b"STORED\r\n");
                        }
                    }
                    Err(Error::OversizeObject { .. }) => {
                        out.extend_from_slice(b"SERVER_ERROR object too large for cache\r\n")
                    }
                    Err(Error::OutOfMemory) => {
                        out.extend_from_slice(b"SERVER_ERROR out of memory storing object\r\n")
                    }
                    Err(e) => return self.server_error(e, out),
                }
            }
            Command::Delete { key, noreply } => {
                let Some(app) = self.tenant(out) else {
                    return Flow::Continue;
                };
                match self.engine.delete(app, &key) {
                    Ok(found) => {
                        if !noreply {
                            out.extend_from_slice(if found {
                                b"DELETED\r\n"
                            } else {
                                b"NOT_FOUND\r\n"
                            });
                        }
                    }
                    Err(e) => return self.server_error(e, out),
                }
            }
            Command::Stats => {
                let Some(app) = self.tenant(out) else {
                    return Flow::Continue;
                };
                self.write_stats(app, out);
            }
        }
        Flow::Continue
    }

    fn tenant(&self, out: &mut Vec<u8>) -> Option<AppId> {
        if self.app.is_none() {
            out.extend_from_slice(b"SERVER_ERROR unknown tenant\r\n");
        }
        self.app
    }

    fn server_error(&self, e: Error, out: &mut Vec<u8>) -> Flow {
        match e {
            Error::UnknownApp(_) => out.extend_from_slice(b"SERVER_ERROR unknown tenant\r\n"),
            other => {
                let _ = write!(out, "SERVER_ERROR {other}\r\n");
            }
        }
        Flow::Continue
    }

    fn write_stats(&self, app: AppId, out: &mut Vec<u8>) {
        let s = self.engine.stats();
        let a = s.app(app).cloned().unwrap_or_default();
        let mut stat = |name: &str, value: String| {
            let _ = write!(out, "STAT {name} {value}\r\n");
        };
        stat("hit_rate", format!("{:.6}", a.hit_rate));
        stat("cmd_get", a.gets.to_string());
        stat("get_hits", a.hits.to_string());
        stat("get_misses", a.misses.to_string());
        stat("cmd_set", a.sets.to_string());
        stat("memshare_app", app.0.to_string());
        stat("memshare_actual_mem", a.actual_mem.to_string());
        stat("memshare_target_mem", a.target_mem.to_string());
        stat("memshare_private_mem", a.private_mem.to_string());
        stat("memshare_shared_mem", a.shared_mem.to_string());
        stat("memshare_shadow_hits", a.shadow_hits.to_string());
        stat("memshare_credits_gained", a.credits_gained.to_string());
        stat("memshare_policy", s.policy.clone());
        stat(
            "memshare_combined_hit_rate",
            format!("{:.6}", s.combined_hit_rate),
        );
        stat("memshare_live_bytes", s.live_bytes.to_string());
        stat("memshare_capacity_bytes", s.capacity_bytes.to_string());
        stat("memshare_free_segments", s.free_segments.to_string());
        stat("memshare_cleaner_passes", s.cleaner_passes.to_string());
        stat(
            "memshare_cleaner_bandwidth",
            format!("{:.1}", s.cleaner_bandwidth),
        );
        out.extend_from_slice(b"END\r\n");
    }
}
