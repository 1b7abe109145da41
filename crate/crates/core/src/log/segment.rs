use std::fmt;

use parking_lot::{Mutex, RwLock};

use crate::types::AppId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegmentId(pub u32);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seg{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentState {
    Free,
    Head,
    Sealed,
    /// Input or output of an in-progress cleaning pass.
    Cleaning,
    /// Emptied by a pass at the given epoch; awaiting safe reuse.
    Retired(u64),
}

#[derive(Debug, Clone)]
pub(crate) struct SegmentMeta {
    pub state: SegmentState,
    pub write_offset: usize,
    pub live_bytes: usize,
    pub record_count: usize,
    /// Live bytes per application, kept small (one slot per resident app).
    pub app_live: Vec<(AppId, usize)>,
}

impl SegmentMeta {
    fn empty() -> Self {
        SegmentMeta {
            state: SegmentState::Free,
            write_offset: 0,
            live_bytes: 0,
            record_count: 0,
            app_live: Vec::new(),
        }
    }

    pub fn reset(&mut self, state: SegmentState) {
        *self = SegmentMeta {
            state,
            ..Self::empty()
        };
    }

    pub fn add_live(&mut self, app: AppId, bytes: usize) {
        self.live_bytes += bytes;
        match self.app_live.iter_mut().find(|(a, _)| *a == app) {
            Some((_, b)) => *b += bytes,
            None => self.app_live.push((app, bytes)),
        }
    }

    pub fn sub_live(&mut self, app: AppId, bytes: usize) {
        debug_assert!(self.live_bytes >= bytes);
        self.live_bytes = self.live_bytes.saturating_sub(bytes);
        if let Some(pos) = self.app_live.iter().position(|(a, _)| *a == app) {
            let b = &mut self.app_live[pos].1;
            *b = b.saturating_sub(bytes);
            if *b == 0 {
                self.app_live.swap_remove(pos);
            }
        }
    }

    /// Whether records in this segment may still be referenced by the index.
    pub fn is_resident(&self) -> bool {
        matches!(
            self.state,
            SegmentState::Head | SegmentState::Sealed | SegmentState::Cleaning
        )
    }
}

pub(crate) struct Segment {
    pub id: SegmentId,
    pub data: RwLock<Box<[u8]>>,
    pub meta: Mutex<SegmentMeta>,
}

impl Segment {
    pub fn new(id: SegmentId, capacity: usize) -> Self {
        Segment {
            id,
            data: RwLock::new(vec![0u8; capacity].into_boxed_slice()),
            meta: Mutex::new(SegmentMeta::empty()),
        }
    }
}

/// Point-in-time view of one segment's bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentInfo {
    pub id: SegmentId,
    pub state: SegmentState,
    pub capacity: usize,
    pub write_offset: usize,
    pub live_bytes: usize,
    pub record_count: usize,
    pub app_live: Vec<(AppId, usize)>,
}
