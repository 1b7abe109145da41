use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{ConcurrentEngine, EngineConfig};
use crate::error::{Error, Result};
use crate::types::AppId;

use super::session::{Flow, Session, TenantTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenantConfig {
    pub id: u32,
    #[serde(default)]
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Accepted tenants; every configured app with no token when empty.
    #[serde(default)]
    pub tenants: Vec<TenantConfig>,
    /// Tenant bound to new connections without a `tenant` command.
    #[serde(default)]
    pub default_tenant: Option<u32>,
    pub engine: EngineConfig,
}

fn default_listen() -> String {
    "127.0.0.1:11211".into()
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ServerConfig = toml::from_str(text)?;
        config.engine.validate()?;
        config.tenant_table()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn tenant_table(&self) -> Result<TenantTable> {
        let known = self.engine.app_ids();
        let mut table = if self.tenants.is_empty() {
            TenantTable::open(known.iter().copied())
        } else {
            let mut t = TenantTable::default();
            for tenant in &self.tenants {
                let app = AppId(tenant.id);
                if !known.contains(&app) {
                    return Err(Error::Config(format!(
                        "tenant {app} is not a configured app"
                    )));
                }
                t.tokens.insert(app, tenant.token.clone());
            }
            t
        };
        if let Some(id) = self.default_tenant {
            if !table.tokens.contains_key(&AppId(id)) {
                return Err(Error::Config(format!(
                    "default tenant {id} is not accepted"
                )));
            }
            table.default_app = Some(AppId(id));
        }
        Ok(table)
    }
}

const POLL: Duration = Duration::from_millis(50);

/// TCP listener with one thread per connection.
pub struct Server {
    addr: SocketAddr,
    engine: Arc<ConcurrentEngine>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl Server {
    pub fn start(config: &ServerConfig) -> Result<Self> {
        let tenants = Arc::new(config.tenant_table()?);
        let engine = Arc::new(ConcurrentEngine::new(config.engine.clone())?);
        let listener = TcpListener::bind(&config.listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let engine = engine.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("accept".into())
                .spawn(move || accept_loop(listener, engine, tenants, stop))?
        };
        ::log::info!("listening on {addr}");
        Ok(Server {
            addr,
            engine,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn engine(&self) -> &Arc<ConcurrentEngine> {
        &self.engine
    }

    /// Blocks until `shutdown` is called from another thread.
    pub fn wait(&mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        self.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    engine: Arc<ConcurrentEngine>,
    tenants: Arc<TenantTable>,
    stop: Arc<AtomicBool>,
) {
    let ids = AtomicU64::new(1);
    let mut handlers = Vec::new();
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = ids.fetch_add(1, Ordering::Relaxed);
                let session = Session::new(id, engine.clone(), tenants.clone());
                let stop = stop.clone();
                ::log::debug!("connection {id} from {peer}");
                handlers.push(std::thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, session, &stop) {
                        ::log::debug!("connection {id}: {e}");
                    }
                }));
                handlers.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(POLL / 5),
            Err(e) => {
                ::log::warn!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
    for h in handlers {
        let _ = h.join();
    }
}

fn serve_connection(
    mut stream: TcpStream,
    mut session: Session,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut buf = vec![0u8; 16 * 1024];
    let mut out = Vec::new();
    while !stop.load(Ordering::Acquire) {
        let n = match stream.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => n,
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                continue
            }
            Err(e) => return Err(e),
        };
        out.clear();
        let flow = session.feed(&buf[..n], &mut out);
        stream.write_all(&out)?;
        if flow == Flow::Close {
            return Ok(());
        }
    }
    Ok(())
}
