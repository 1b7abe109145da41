use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{
    build_engine, miss_reduction, ratio, CacheEngine, EngineConfig, GetResult, StatsSnapshot,
};
use crate::error::Result;
use crate::types::{AppId, Timestamp, MICROS_PER_SEC};

use super::trace::{Op, TraceRecord};

/// Miss rate of a previous run to compare against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRef {
    pub label: String,
    pub miss_rate: f64,
}

impl BaselineRef {
    pub fn of(result: &ExperimentResult) -> Self {
        BaselineRef {
            label: result.label.clone(),
            miss_rate: result.final_stats.miss_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    /// A GET miss is followed by a SET of the traced size.
    pub fill_on_miss: bool,
    /// Window length in microseconds; the engine's metrics window when `None`.
    pub window: Option<u64>,
    pub baseline: Option<BaselineRef>,
    /// Run name; the engine name when `None`.
    pub label: Option<String>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            fill_on_miss: true,
            window: None,
            baseline: None,
            label: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppWindow {
    pub app: AppId,
    pub gets: u64,
    pub hits: u64,
    pub hit_rate: f64,
    pub shadow_hits: u64,
    /// Shadow hits per miss.
    pub shadow_hit_rate: f64,
    /// Live bytes at the end of the window.
    pub occupancy: u64,
    /// Live bytes averaged over samples taken every tick interval, both
    /// window edges included.
    pub mean_occupancy: f64,
    pub target: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub index: usize,
    pub start: Timestamp,
    pub end: Timestamp,
    pub gets: u64,
    pub hits: u64,
    pub hit_rate: f64,
    pub relocated_bytes: u64,
    /// Bytes read plus bytes written by the cleaner per second.
    pub cleaner_bandwidth: f64,
    pub apps: Vec<AppWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub engine: String,
    pub seed: u64,
    pub fill_on_miss: bool,
    pub window: u64,
    pub requests: u64,
    pub windows: Vec<WindowSample>,
    pub final_stats: StatsSnapshot,
    pub baseline: Option<String>,
    pub miss_reduction: Option<f64>,
}

impl ExperimentResult {
    pub fn combined_hit_rate(&self) -> f64 {
        self.final_stats.combined_hit_rate
    }

    pub fn app_hit_rate(&self, app: AppId) -> Option<f64> {
        self.final_stats.app(app).map(|a| a.hit_rate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

struct Sampler {
    window: u64,
    step: u64,
    next_sample: Timestamp,
    index: usize,
    prev: StatsSnapshot,
    occupancy: BTreeMap<AppId, (u128, u64)>,
    out: Vec<WindowSample>,
}

impl Sampler {
    fn new(window: u64, step: u64, first: StatsSnapshot) -> Self {
        Sampler {
            window,
            step,
            next_sample: 0,
            index: 0,
            prev: first,
            occupancy: BTreeMap::new(),
            out: Vec::new(),
        }
    }

    fn boundary(&self) -> Timestamp {
        (self.index as u64 + 1) * self.window
    }

    fn observe(&mut self, stats: &StatsSnapshot) {
        for a in &stats.apps {
            let e = self.occupancy.entry(a.app).or_default();
            e.0 += a.actual_mem as u128;
            e.1 += 1;
        }
    }

    /// Advances the engine to `until`, taking occupancy samples and closing
    /// every window that ends at or before it.
    fn advance(&mut self, engine: &mut dyn CacheEngine, until: Timestamp) {
        loop {
            let b = self.boundary();
            if self.next_sample < b && self.next_sample <= until {
                let t = self.next_sample;
                self.observe(&engine.stats(t));
                self.next_sample = t + self.step;
            } else if b <= until {
                engine.tick(b);
                self.close(engine.stats(b));
            } else {
                break;
            }
        }
    }

    fn close(&mut self, stats: StatsSnapshot) {
        self.observe(&stats);
        let start = self.index as u64 * self.window;
        let end = start + self.window;
        let apps = stats
            .apps
            .iter()
            .map(|a| {
                let p = self.prev.app(a.app).cloned().unwrap_or_default();
                let gets = a.gets - p.gets;
                let hits = a.hits - p.hits;
                let shadow_hits = a.shadow_hits - p.shadow_hits;
                AppWindow {
                    app: a.app,
                    gets,
                    hits,
                    hit_rate: ratio(hits, gets),
                    shadow_hits,
                    shadow_hit_rate: ratio(shadow_hits, gets - hits),
                    occupancy: a.actual_mem,
                    mean_occupancy: self
                        .occupancy
                        .get(&a.app)
                        .map_or(0.0, |&(sum, n)| sum as f64 / n as f64),
                    target: a.target_mem,
                }
            })
            .collect();
        let gets = stats.gets - self.prev.gets;
        let hits = stats.hits - self.prev.hits;
        let relocated_bytes = stats.relocated_bytes - self.prev.relocated_bytes;
        self.out.push(WindowSample {
            index: self.index,
            start,
            end,
            gets,
            hits,
            hit_rate: ratio(hits, gets),
            relocated_bytes,
            cleaner_bandwidth: 2.0 * relocated_bytes as f64 * MICROS_PER_SEC as f64
                / self.window as f64,
            apps,
        });
        self.prev = stats;
        self.index += 1;
        self.occupancy.clear();
        self.next_sample = self.next_sample.max(end);
    }
}

/// Replays `trace` through a fresh engine built from `config`.
pub fn run_experiment(
    config: &EngineConfig,
    trace: &[TraceRecord],
    options: &ExperimentOptions,
) -> Result<ExperimentResult> {
    let mut engine = build_engine(config)?;
    let window = options
        .window
        .unwrap_or_else(|| config.metrics_window())
        .max(1);
    let step = config.tick_interval().clamp(1, window);
    let mut sampler = Sampler::new(window, step, engine.stats(0));
    let mut value = Vec::new();
    for rec in trace {
        sampler.advance(engine.as_mut(), rec.ts);
        let key = rec.key.as_bytes();
        match rec.op {
            Op::Get => {
                if let GetResult::Miss { .. } = engine.get(rec.app, key, rec.ts)? {
                    if options.fill_on_miss {
                        fill(&mut value, rec.size as usize);
                        engine.set(rec.app, key, &value, rec.ts)?;
                    }
                }
            }
            Op::Set => {
                fill(&mut value, rec.size as usize);
                engine.set(rec.app, key, &value, rec.ts)?;
            }
            Op::Del => {
                engine.delete(rec.app, key, rec.ts)?;
            }
        }
    }
    if !trace.is_empty() {
        let b = sampler.boundary();
        sampler.advance(engine.as_mut(), b);
    }
    let final_stats = engine.stats(sampler.out.last().map_or(0, |w| w.end));
    let miss_reduction = options
        .baseline
        .as_ref()
        .map(|b| miss_reduction(final_stats.miss_rate(), b.miss_rate));
    Ok(ExperimentResult {
        label: options.label.clone().unwrap_or_else(|| engine.name()),
        engine: engine.name(),
        seed: config.seed,
        fill_on_miss: options.fill_on_miss,
        window,
        requests: trace.len() as u64,
        windows: sampler.out,
        final_stats,
        baseline: options.baseline.as_ref().map(|b| b.label.clone()),
        miss_reduction,
    })
}

fn fill(buf: &mut Vec<u8>, len: usize) {
    buf.clear();
    buf.extend((0..len).map(|i| (i % 251) as u8));
}

/// Replays `trace` once per config, in parallel threads.
pub fn run_many(
    configs: &[(EngineConfig, ExperimentOptions)],
    trace: &[TraceRecord],
) -> Result<Vec<ExperimentResult>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|(c, o)| s.spawn(move || run_experiment(c, trace, o)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("experiment thread panicked"))
            .collect()
    })
}
