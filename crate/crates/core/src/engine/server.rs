use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::cleaner::PassMode;
use crate::error::{Error, Result};
use crate::types::{AppId, Timestamp};

use super::{AutoPrivateReport, EngineConfig, EngineCore, GetResult, StatsSnapshot};

const IDLE_WAIT: Duration = Duration::from_millis(5);
const WRITE_STALL_LIMIT: Duration = Duration::from_secs(5);

struct Shared {
    core: EngineCore,
    start: Instant,
    stop: AtomicBool,
    wake: (Mutex<()>, Condvar),
    freed: (Mutex<()>, Condvar),
}

impl Shared {
    fn now(&self) -> Timestamp {
        self.start.elapsed().as_micros() as Timestamp
    }

    fn wake_cleaner(&self) {
        let _g = self.wake.0.lock();
        self.wake.1.notify_all();
    }

    fn notify_freed(&self) {
        let _g = self.freed.0.lock();
        self.freed.1.notify_all();
    }

    fn short_of_space(&self) -> bool {
        let store = self.core.store();
        store.reclaim();
        store.free_count() < store.free_target()
    }

    fn cleaner_loop(&self) {
        while !self.stop.load(Ordering::Acquire) {
            let now = self.now();
            self.core.maybe_tick(now);
            if self.short_of_space() {
                match self.core.clean(PassMode::Concurrent, now) {
                    Ok(_) => {}
                    Err(Error::NotEnoughSegments(_)) => self.idle(),
                    Err(e) => {
                        ::log::warn!("cleaning pass failed: {e}");
                        self.idle();
                    }
                }
                self.core.store().reclaim();
                self.notify_freed();
            } else {
                self.notify_freed();
                self.idle();
            }
        }
    }

    fn idle(&self) {
        let mut g = self.wake.0.lock();
        if !self.stop.load(Ordering::Acquire) {
            self.wake.1.wait_for(&mut g, IDLE_WAIT);
        }
    }
}

/// Thread-safe engine with background cleaner workers. Time is measured
/// from construction.
pub struct ConcurrentEngine {
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
}

impl ConcurrentEngine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        let workers = config.cleaner.max_parallel_passes;
        let shared = Arc::new(Shared {
            core: EngineCore::new(config)?,
            start: Instant::now(),
            stop: AtomicBool::new(false),
            wake: (Mutex::new(()), Condvar::new()),
            freed: (Mutex::new(()), Condvar::new()),
        });
        let workers = (0..workers)
            .map(|i| {
                let s = shared.clone();
                std::thread::Builder::new()
                    .name(format!("cleaner-{i}"))
                    .spawn(move || s.cleaner_loop())
                    .expect("spawn cleaner thread")
            })
            .collect();
        Ok(ConcurrentEngine { shared, workers })
    }

    pub fn core(&self) -> &EngineCore {
        &self.shared.core
    }

    pub fn now(&self) -> Timestamp {
        self.shared.now()
    }

    pub fn get(&self, app: AppId, key: &[u8]) -> Result<GetResult> {
        self.shared.core.get(app, key, self.now())
    }

    /// Stores `value`, waiting for the cleaner when the free pool is empty.
    pub fn set(&self, app: AppId, key: &[u8], value: &[u8]) -> Result<()> {
        let deadline = Instant::now() + WRITE_STALL_LIMIT;
        loop {
            match self.shared.core.set(app, key, value, self.now()) {
                Err(Error::OutOfMemory) if Instant::now() < deadline => {
                    let mut g = self.shared.freed.0.lock();
                    self.shared.wake_cleaner();
                    self.shared.freed.1.wait_for(&mut g, IDLE_WAIT);
                }
                other => {
                    if self.shared.core.store().needs_cleaning() {
                        self.shared.wake_cleaner();
                    }
                    return other;
                }
            }
        }
    }

    pub fn delete(&self, app: AppId, key: &[u8]) -> Result<bool> {
        self.shared.core.delete(app, key)
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.core.stats(self.now())
    }

    pub fn run_auto_private(&self, window: u64) -> Result<AutoPrivateReport> {
        self.shared.core.run_auto_private(window, self.now())
    }

    pub fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.wake_cleaner();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ConcurrentEngine {
    fn drop(&mut self) {
        self.shutdown();
    }
}
