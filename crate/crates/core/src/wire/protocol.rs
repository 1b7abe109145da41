//! Parser for the memcached ASCII subset: `get`, `set`, `delete`, `stats`,
//! `quit`, plus `tenant <id> <token>` to pick the application.

use std::fmt;

pub const MAX_KEY_LEN: usize = 250;
/// Longest command line accepted before the connection is dropped.
pub const MAX_LINE_LEN: usize = 2048;
pub const MAX_VALUE_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Get {
        keys: Vec<Vec<u8>>,
    },
    Set {
        key: Vec<u8>,
        flags: u32,
        exptime: i64,
        data: Vec<u8>,
        noreply: bool,
    },
    Delete {
        key: Vec<u8>,
        noreply: bool,
    },
    Stats,
    Quit,
    Tenant {
        app: u32,
        token: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolError {
    /// Unknown verb or malformed command line.
    BadCommand,
    /// Data block does not match the declared length.
    BadDataChunk,
    /// No line terminator within `MAX_LINE_LEN` bytes.
    LineTooLong,
}

impl ProtocolError {
    pub fn response(&self) -> &'static [u8] {
        match self {
            ProtocolError::BadCommand => b"ERROR\r\n",
            ProtocolError::BadDataChunk => b"CLIENT_ERROR bad data chunk\r\n",
            ProtocolError::LineTooLong => b"CLIENT_ERROR line too long\r\n",
        }
    }
}

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.response();
        f.write_str(std::str::from_utf8(&r[..r.len() - 2]).unwrap_or("error"))
    }
}

/// Result of parsing the front of an input buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    /// More bytes are needed.
    Incomplete,
    Command {
        command: Command,
        consumed: usize,
    },
    Error {
        error: ProtocolError,
        consumed: usize,
    },
}

fn find_line(buf: &[u8], from: usize) -> Option<usize> {
    buf[from..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| from + i)
}

pub fn valid_key(key: &[u8]) -> bool {
    !key.is_empty() && key.len() <= MAX_KEY_LEN && key.iter().all(|b| b.is_ascii_graphic())
}

fn parse_num<T: std::str::FromStr>(tok: &[u8]) -> Option<T> {
    std::str::from_utf8(tok).ok()?.parse().ok()
}

/// Parses one command from the front of `buf`.
pub fn parse(buf: &[u8]) -> Parsed {
    let Some(nl) = find_line(buf, 0) else {
        return if buf.len() > MAX_LINE_LEN {
            Parsed::Error {
                error: ProtocolError::LineTooLong,
                consumed: buf.len(),
            }
        } else {
            Parsed::Incomplete
        };
    };
    let line_end = if nl > 0 && buf[nl - 1] == b'\r' {
        nl - 1
    } else {
        nl
    };
    let consumed = nl + 1;
    let bad = Parsed::Error {
        error: ProtocolError::BadCommand,
        consumed,
    };
    let tokens: Vec<&[u8]> = buf[..line_end]
        .split(|&b| b == b' ')
        .filter(|t| !t.is_empty())
        .collect();
    let Some((&verb, args)) = tokens.split_first() else {
        return bad;
    };
    let command = match verb {
        b"get" | b"gets" => {
            if args.is_empty() || !args.iter().all(|k| valid_key(k)) {
                return bad;
            }
            Command::Get {
                keys: args.iter().map(|k| k.to_vec()).collect(),
            }
        }
        b"set" => return parse_set(buf, args, consumed),
        b"delete" => {
            let noreply = args.last() == Some(&&b"noreply"[..]);
            let rest = if noreply {
                &args[..args.len() - 1]
            } else {
                args
            };
            // Legacy form `delete <key> 0` is accepted.
            let ok = match rest {
                [k] => valid_key(k),
                [k, t] => valid_key(k) && *t == b"0",
                _ => false,
            };
            if !ok {
                return bad;
            }
            Command::Delete {
                key: rest[0].to_vec(),
                noreply,
            }
        }
        b"stats" if args.is_empty() => Command::Stats,
        b"quit" if args.is_empty() => Command::Quit,
        b"tenant" => match args {
            [id, token] => match (parse_num(id), std::str::from_utf8(token)) {
                (Some(app), Ok(token)) => Command::Tenant {
                    app,
                    token: token.to_string(),
                },
                _ => return bad,
            },
            [id] => match parse_num(id) {
                Some(app) => Command::Tenant {
                    app,
                    token: String::new(),
                },
                None => return bad,
            },
            _ => return bad,
        },
        _ => return bad,
    };
    Parsed::Command { command, consumed }
}

fn parse_set(buf: &[u8], args: &[&[u8]], header: usize) -> Parsed {
    let bad = Parsed::Error {
        error: ProtocolError::BadCommand,
        consumed: header,
    };
    let (fields, noreply) = match args {
        [k, f, e, b] => ([*k, *f, *e, *b], false),
        [k, f, e, b, n] if *n == b"noreply" => ([*k, *f, *e, *b], true),
        _ => return bad,
    };
    let (Some(flags), Some(exptime), Some(bytes)) = (
        parse_num::<u32>(fields[1]),
        parse_num::<i64>(fields[2]),
        parse_num::<usize>(fields[3]),
    ) else {
        return bad;
    };
    if !valid_key(fields[0]) || bytes > MAX_VALUE_LEN {
        return bad;
    }
    let data_end = header + bytes;
    if buf.len() < data_end + 2 {
        // A mismatched block can still be reported once a line ends past it.
        if buf.len() > data_end {
            if let Some(nl) = find_line(buf, data_end) {
                return Parsed::Error {
                    error: ProtocolError::BadDataChunk,
                    consumed: nl + 1,
                };
            }
        }
        return Parsed::Incomplete;
    }
    if &buf[data_end..data_end + 2] != b"\r\n" {
        return match find_line(buf, data_end) {
            Some(nl) => Parsed::Error {
                error: ProtocolError::BadDataChunk,
                consumed: nl + 1,
            },
            None => Parsed::Incomplete,
        };
    }
    Parsed::Command {
        command: Command::Set {
            key: fields[0].to_vec(),
            flags,
            exptime,
            data: buf[header..data_end].to_vec(),
            noreply,
        },
        consumed: data_end + 2,
    }
}
