#![allow(dead_code)]

pub mod lru;
pub mod stress;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use memshare::engine::{AppConfig, ConcurrentEngine, EngineConfig};
use memshare::wire::{Flow, ServerConfig, Session, TenantConfig};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_cases() -> Vec<(String, Vec<u8>, Vec<u8>)> {
    let mut names: Vec<String> = std::fs::read_dir(golden_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "in").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let input = std::fs::read(golden_dir().join(format!("{n}.in"))).unwrap();
            let output = std::fs::read(golden_dir().join(format!("{n}.out"))).unwrap();
            (n, input, output)
        })
        .collect()
}

pub fn server_config() -> ServerConfig {
    ServerConfig {
        listen: "127.0.0.1:0".into(),
        tenants: vec![
            TenantConfig {
                id: 1,
                token: String::new(),
            },
            TenantConfig {
                id: 2,
                token: String::new(),
            },
            TenantConfig {
                id: 3,
                token: "s3cret".into(),
            },
        ],
        default_tenant: None,
        engine: EngineConfig {
            total_memory_bytes: 16 * 64 * 1024,
            segment_size_bytes: 64 * 1024,
            apps: (1..=3).map(AppConfig::new).collect(),
            ..Default::default()
        },
    }
}

/// Runs a transcript through a fresh in-process session, delivering the
/// input in chunks of `chunk` bytes.
pub fn run_session(input: &[u8], chunk: usize) -> Vec<u8> {
    let config = server_config();
    let engine = Arc::new(ConcurrentEngine::new(config.engine.clone()).unwrap());
    let mut session = Session::new(1, engine, Arc::new(config.tenant_table().unwrap()));
    let mut out = Vec::new();
    for piece in input.chunks(chunk.max(1)) {
        if session.feed(piece, &mut out) == Flow::Close {
            break;
        }
    }
    out
}

/// Sends a transcript over TCP and reads until the server stops answering.
pub fn run_tcp(addr: std::net::SocketAddr, input: &[u8], expected_len: usize) -> Vec<u8> {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream
        .set_read_timeout(Some(Duration::from_millis(200)))
        .unwrap();
    stream.write_all(input).unwrap();
    let mut out = Vec::new();
    let mut buf = [0u8; 4096];
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    while out.len() < expected_len && std::time::Instant::now() < deadline {
        match stream.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => out.extend_from_slice(&buf[..n]),
            Err(_) => {}
        }
    }
    out
}

pub fn show(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).replace("\r\n", "\\r\\n\n")
}
