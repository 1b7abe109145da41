//! Text trace format: one `ts,op,app,key,size` record per line, `#` starts
//! a comment. Timestamps are microseconds and must not decrease.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{AppId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Get,
    Set,
    Del,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Get => "GET",
            Op::Set => "SET",
            Op::Del => "DEL",
        })
    }
}

impl FromStr for Op {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(Op::Get),
            "SET" => Ok(Op::Set),
            "DEL" | "DELETE" => Ok(Op::Del),
            _ => Err(format!("unknown op `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub ts: Timestamp,
    pub op: Op,
    pub app: AppId,
    pub key: String,
    /// Value bytes for SET, and for GET when misses are filled.
    pub size: u32,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.ts, self.op, self.app.0, self.key, self.size
        )
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<TraceRecord> {
    let bad = |reason: String| Error::MalformedLine {
        line: lineno,
        reason,
    };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(bad(format!("expected 5 fields, found {}", fields.len())));
    }
    let ts = fields[0]
        .parse()
        .map_err(|_| bad(format!("bad timestamp `{}`", fields[0])))?;
    let op = fields[1].parse().map_err(bad)?;
    let app = fields[2]
        .parse()
        .map_err(|_| bad(format!("bad app id `{}`", fields[2])))?;
    let key = fields[3];
    if key.is_empty()
        || key.len() > 250
        || key
            .bytes()
            .any(|b| b.is_ascii_whitespace() || b.is_ascii_control())
    {
        return Err(bad(format!("bad key `{key}`")));
    }
    let size = fields[4]
        .parse()
        .map_err(|_| bad(format!("bad size `{}`", fields[4])))?;
    Ok(TraceRecord {
        ts,
        op,
        app: AppId(app),
        key: key.to_string(),
        size,
    })
}

/// Streaming parser over any reader.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    lineno: usize,
    last_ts: Option<Timestamp>,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R) -> Self {
        TraceReader {
            lines: reader.lines(),
            lineno: 0,
            last_ts: None,
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.lineno += 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let rec = match parse_line(content, self.lineno) {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            if let Some(prev) = self.last_ts {
                if rec.ts < prev {
                    return Some(Err(Error::NonMonotonicTimestamp {
                        line: self.lineno,
                        ts: rec.ts,
                        previous: prev,
                    }));
                }
            }
            self.last_ts = Some(rec.ts);
            return Some(Ok(rec));
        }
    }
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceRecord>> {
    TraceReader::new(text.as_bytes()).collect()
}

pub fn parse_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    TraceReader::new(BufReader::new(std::fs::File::open(path)?)).collect()
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    writeln!(out, "# ts,op,app,key,size")?;
    for r in records {
        writeln!(out, "{r}")?;
    }
    out.flush()?;
    Ok(())
}
