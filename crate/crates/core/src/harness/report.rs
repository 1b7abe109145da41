//! CSV and JSON output for experiment runs.
//!
//! `summary.csv` has one row per app plus a `combined` row for each run.
//! `timeseries.csv` is long format: one `(run, window, app, metric, value)`
//! row per measurement, ready for plotting tools.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::engine::miss_reduction;
use crate::error::{Error, Result};

use super::experiment::ExperimentResult;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TIMESERIES_FILE: &str = "timeseries.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub run: String,
    pub engine: String,
    pub app: String,
    pub gets: u64,
    pub hits: u64,
    pub hit_rate: f64,
    pub miss_reduction: Option<f64>,
}

fn miss_rate(gets: u64, hits: u64) -> f64 {
    if gets == 0 {
        0.0
    } else {
        1.0 - hits as f64 / gets as f64
    }
}

/// Summary table; miss reduction is filled against `results[baseline]`.
pub fn summary_rows(
    results: &[ExperimentResult],
    baseline: Option<usize>,
) -> Result<Vec<SummaryRow>> {
    if results.is_empty() {
        return Err(Error::Usage("no results to report".into()));
    }
    let base = match baseline {
        Some(i) => Some(
            results
                .get(i)
                .ok_or_else(|| Error::Usage(format!("baseline index {i} out of range")))?,
        ),
        None => None,
    };
    let mut rows = Vec::new();
    for r in results {
        let s = &r.final_stats;
        for a in &s.apps {
            let reduction = base
                .and_then(|b| b.final_stats.app(a.app))
                .map(|b| miss_reduction(miss_rate(a.gets, a.hits), miss_rate(b.gets, b.hits)));
            rows.push(SummaryRow {
                run: r.label.clone(),
                engine: r.engine.clone(),
                app: a.app.0.to_string(),
                gets: a.gets,
                hits: a.hits,
                hit_rate: a.hit_rate,
                miss_reduction: reduction,
            });
        }
        rows.push(SummaryRow {
            run: r.label.clone(),
            engine: r.engine.clone(),
            app: "combined".into(),
            gets: s.gets,
            hits: s.hits,
            hit_rate: s.combined_hit_rate,
            miss_reduction: base.map(|b| miss_reduction(s.miss_rate(), b.final_stats.miss_rate())),
        });
    }
    Ok(rows)
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run",
        "engine",
        "app",
        "gets",
        "hits",
        "hit_rate",
        "miss_rate",
        "miss_reduction",
    ])?;
    for r in rows {
        w.write_record([
            r.run.clone(),
            r.engine.clone(),
            r.app.clone(),
            r.gets.to_string(),
            r.hits.to_string(),
            format!("{:.6}", r.hit_rate),
            format!("{:.6}", miss_rate(r.gets, r.hits)),
            r.miss_reduction
                .map(|m| format!("{m:.6}"))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timeseries<W: Write>(out: W, results: &[ExperimentResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "window", "start_secs", "app", "metric", "value"])?;
    for r in results {
        for win in &r.windows {
            let start = format!(
                "{:.3}",
                win.start as f64 / crate::types::MICROS_PER_SEC as f64
            );
            let mut row = |app: &str, metric: &str, value: String| {
                w.write_record([
                    r.label.as_str(),
                    &win.index.to_string(),
                    &start,
                    app,
                    metric,
                    &value,
                ])
            };
            row("combined", "gets", win.gets.to_string())?;
            row("combined", "hit_rate", format!("{:.6}", win.hit_rate))?;
            row(
                "combined",
                "cleaner_bandwidth",
                format!("{:.1}", win.cleaner_bandwidth),
            )?;
            for a in &win.apps {
                let id = a.app.0.to_string();
                row(&id, "gets", a.gets.to_string())?;
                row(&id, "hit_rate", format!("{:.6}", a.hit_rate))?;
                row(&id, "shadow_hit_rate", format!("{:.6}", a.shadow_hit_rate))?;
                row(&id, "occupancy", a.occupancy.to_string())?;
                row(&id, "mean_occupancy", format!("{:.1}", a.mean_occupancy))?;
                row(&id, "target", a.target.to_string())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn file_stem(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the summary, the time series and one JSON file per run into
/// `dir`. Returns the paths written.
pub fn write_report(
    dir: &Path,
    results: &[ExperimentResult],
    baseline: Option<usize>,
) -> Result<Vec<PathBuf>> {
    let rows = summary_rows(results, baseline)?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let summary = dir.join(SUMMARY_FILE);
    write_summary(fs::File::create(&summary)?, &rows)?;
    written.push(summary);
    let series = dir.join(TIMESERIES_FILE);
    write_timeseries(fs::File::create(&series)?, results)?;
    written.push(series);
    for r in results {
        let path = dir.join(format!("{}.json", file_stem(&r.label)));
        fs::write(&path, r.to_json())?;
        written.push(path);
    }
    Ok(written)
}
