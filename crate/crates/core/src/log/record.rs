//! Self-describing on-segment record layout.
//!
//! ```text
//! 0        4        6        8        12       16               24
//! | app id | keylen | unused | vallen | freq   | last access    | key | value |
//! ```
//!
//! All integers are little-endian. A segment can be walked front to back
//! using only the lengths in each header.

use crate::types::{AppId, Timestamp};

pub const RECORD_HEADER_LEN: usize = 24;
pub const MAX_KEY_LEN: usize = u16::MAX as usize;

pub fn record_size(key_len: usize, value_len: usize) -> usize {
    RECORD_HEADER_LEN + key_len + value_len
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub app: AppId,
    pub key_len: usize,
    pub value_len: usize,
    pub frequency: u32,
    pub last_access: Timestamp,
}

impl RecordHeader {
    pub fn total_size(&self) -> usize {
        record_size(self.key_len, self.value_len)
    }

    pub fn decode(buf: &[u8]) -> Option<RecordHeader> {
        if buf.len() < RECORD_HEADER_LEN {
            return None;
        }
        let app = u32::from_le_bytes(buf[0..4].try_into().ok()?);
        let key_len = u16::from_le_bytes(buf[4..6].try_into().ok()?) as usize;
        let value_len = u32::from_le_bytes(buf[8..12].try_into().ok()?) as usize;
        let frequency = u32::from_le_bytes(buf[12..16].try_into().ok()?);
        let last_access = u64::from_le_bytes(buf[16..24].try_into().ok()?);
        let header = RecordHeader {
            app: AppId(app),
            key_len,
            value_len,
            frequency,
            last_access,
        };
        (buf.len() >= header.total_size()).then_some(header)
    }

    fn encode(&self, buf: &mut [u8]) {
        buf[0..4].copy_from_slice(&self.app.0.to_le_bytes());
        buf[4..6].copy_from_slice(&(self.key_len as u16).to_le_bytes());
        buf[6..8].copy_from_slice(&[0, 0]);
        buf[8..12].copy_from_slice(&(self.value_len as u32).to_le_bytes());
        buf[12..16].copy_from_slice(&self.frequency.to_le_bytes());
        buf[16..24].copy_from_slice(&self.last_access.to_le_bytes());
    }
}

/// Writes a complete record into `buf`, which must be exactly
/// `record_size(key.len(), value.len())` bytes long.
pub fn encode_record(
    buf: &mut [u8],
    app: AppId,
    key: &[u8],
    value: &[u8],
    last_access: Timestamp,
    frequency: u32,
) {
    debug_assert_eq!(buf.len(), record_size(key.len(), value.len()));
    let header = RecordHeader {
        app,
        key_len: key.len(),
        value_len: value.len(),
        frequency,
        last_access,
    };
    header.encode(buf);
    let key_end = RECORD_HEADER_LEN + key.len();
    buf[RECORD_HEADER_LEN..key_end].copy_from_slice(key);
    buf[key_end..].copy_from_slice(value);
}

/// Overwrites the access metadata of an encoded record in place.
pub fn patch_access(buf: &mut [u8], last_access: Timestamp, frequency: u32) {
    buf[12..16].copy_from_slice(&frequency.to_le_bytes());
    buf[16..24].copy_from_slice(&last_access.to_le_bytes());
}

/// Borrowed view of a decoded record.
#[derive(Debug, Clone, Copy)]
pub struct RecordView<'a> {
    pub header: RecordHeader,
    pub key: &'a [u8],
    pub value: &'a [u8],
}

impl<'a> RecordView<'a> {
    pub fn decode(buf: &'a [u8]) -> Option<RecordView<'a>> {
        let header = RecordHeader::decode(buf)?;
        let key_end = RECORD_HEADER_LEN + header.key_len;
        Some(RecordView {
            header,
            key: &buf[RECORD_HEADER_LEN..key_end],
            value: &buf[key_end..key_end + header.value_len],
        })
    }
}

/// Iterates `(offset, record)` pairs over the written prefix of a segment.
pub struct RecordIter<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl<'a> RecordIter<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        RecordIter { buf, offset: 0 }
    }
}

impl<'a> Iterator for RecordIter<'a> {
    type Item = (usize, RecordView<'a>);

    fn next(&mut self) -> Option<Self::Item> {
        let view = RecordView::decode(&self.buf[self.offset..])?;
        let at = self.offset;
        self.offset += view.header.total_size();
        Some((at, view))
    }
}
