//! Epoch tagging for safe segment reuse.
//!
//! Every request pins the global epoch for its duration. A cleaning pass
//! first removes all index references into its input segments, then tags the
//! inputs with the current epoch and advances it. A segment tagged `e` may be
//! reused once every pinned request started in an epoch strictly greater
//! than `e`.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

const IDLE: u64 = u64::MAX;
const DEFAULT_SLOTS: usize = 1024;

pub struct EpochManager {
    global: AtomicU64,
    slots: Box<[AtomicU64]>,
    hint: AtomicUsize,
}

impl Default for EpochManager {
    fn default() -> Self {
        Self::with_slots(DEFAULT_SLOTS)
    }
}

impl EpochManager {
    pub fn with_slots(slots: usize) -> Self {
        EpochManager {
            global: AtomicU64::new(0),
            slots: (0..slots.max(1)).map(|_| AtomicU64::new(IDLE)).collect(),
            hint: AtomicUsize::new(0),
        }
    }

    pub fn current(&self) -> u64 {
        self.global.load(Ordering::SeqCst)
    }

    /// Advances the global epoch and returns the epoch that was current.
    pub fn advance(&self) -> u64 {
        self.global.fetch_add(1, Ordering::SeqCst)
    }

    /// Registers an in-flight request at the current epoch.
    pub fn pin(&self) -> EpochGuard<'_> {
        let n = self.slots.len();
        let start = self.hint.fetch_add(1, Ordering::Relaxed);
        loop {
            for i in 0..n {
                let slot = (start + i) % n;
                let epoch = self.current();
                if self.slots[slot]
                    .compare_exchange(IDLE, epoch, Ordering::SeqCst, Ordering::SeqCst)
                    .is_ok()
                {
                    return EpochGuard {
                        manager: self,
                        slot,
                        epoch,
                    };
                }
            }
            std::thread::yield_now();
        }
    }

    /// Oldest epoch among in-flight requests, or `None` when idle.
    pub fn min_active(&self) -> Option<u64> {
        self.slots
            .iter()
            .map(|s| s.load(Ordering::SeqCst))
            .filter(|&e| e != IDLE)
            .min()
    }

    pub fn active_count(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.load(Ordering::SeqCst) != IDLE)
            .count()
    }

    /// True iff a segment retired at `retired_at` may be reused now.
    pub fn can_reclaim(&self, retired_at: u64) -> bool {
        match self.min_active() {
            None => true,
            Some(oldest) => oldest > retired_at,
        }
    }
}

/// In-flight request marker. Dropping it releases the pin.
pub struct EpochGuard<'a> {
    manager: &'a EpochManager,
    slot: usize,
    epoch: u64,
}

impl EpochGuard<'_> {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Drop for EpochGuard<'_> {
    fn drop(&mut self) {
        self.manager.slots[self.slot].store(IDLE, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idle_manager_reclaims_immediately() {
        let m = EpochManager::default();
        let e = m.advance();
        assert!(m.can_reclaim(e));
    }

    #[test]
    fn pinned_request_blocks_reclaim_of_same_epoch() {
        let m = EpochManager::default();
        let guard = m.pin();
        let retired = m.advance();
        assert_eq!(guard.epoch(), retired);
        assert!(!m.can_reclaim(retired));
        drop(guard);
        assert!(m.can_reclaim(retired));
    }

    #[test]
    fn only_older_retirement_reclaims() {
        // Enumerate where the in-flight request starts relative to two
        // retirements at e and e+1.
        for pin_after in 0..=2 {
            let m = EpochManager::default();
            let mut guard = None;
            if pin_after == 0 {
                guard = Some(m.pin());
            }
            let first = m.advance();
            if pin_after == 1 {
                guard = Some(m.pin());
            }
            let second = m.advance();
            if pin_after == 2 {
                guard = Some(m.pin());
            }
            let pinned = guard.as_ref().unwrap().epoch();
            assert_eq!(pinned, pin_after as u64);
            assert_eq!(
                m.can_reclaim(first),
                pinned > first,
                "pin_after={pin_after}"
            );
            assert_eq!(
                m.can_reclaim(second),
                pinned > second,
                "pin_after={pin_after}"
            );
        }
    }

    #[test]
    fn concurrent_pins_are_tracked() {
        let m = EpochManager::with_slots(4);
        let guards: Vec<_> = (0..4).map(|_| m.pin()).collect();
        assert_eq!(m.active_count(), 4);
        drop(guards);
        assert_eq!(m.active_count(), 0);
    }
}
