use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memshare::engine::{CacheEngine, Engine, EngineConfig, EngineKind, PolicyKind};
use memshare::harness::corpus::{self, CORPUS_SEED};
use memshare::harness::{
    generate, parse_trace, run_experiment, summary_rows, write_report, write_trace,
    ExperimentOptions, ExperimentResult, Op, TraceRecord, WorkloadSpec,
};
use memshare::wire::{Server, ServerConfig};
use memshare::Error;

#[derive(Parser)]
#[command(
    name = "memshare",
    version,
    about = "Multi-tenant log-structured cache toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace through one engine and write a report.
    Replay {
        /// memshare, memshare-shared, memshare-partitioned, memshare-idle-tax,
        /// slab-partitioned or slab-greedy.
        #[arg(long)]
        engine: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Follow each GET miss with a SET of the traced size.
        #[arg(long)]
        fill_on_miss: bool,
        #[arg(long)]
        label: Option<String>,
    },
    /// Generate a synthetic trace from a workload file.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = CORPUS_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report a candidate run against a baseline run.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cleaner cost per freed segment for several segments-per-pass values.
    BenchClean {
        #[arg(long, value_delimiter = ',', default_value = "1,2,10,20")]
        n_list: Vec<usize>,
        /// Engine config; the bundled write-heavy config when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace to replay; the bundled write-heavy workload when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = CORPUS_SEED)]
        seed: u64,
    },
    /// Serve the memcached text protocol.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Replay {
            engine,
            config,
            trace,
            out,
            seed,
            fill_on_miss,
            label,
        } => replay(&engine, &config, &trace, &out, seed, fill_on_miss, label),
        Command::Gen { spec, seed, out } => {
            let records = generate(&WorkloadSpec::load(&spec)?, seed)?;
            write_trace(
                std::io::BufWriter::new(std::fs::File::create(&out)?),
                &records,
            )?;
            println!("wrote {} records to {}", records.len(), out.display());
            Ok(())
        }
        Command::Compare {
            baseline,
            candidate,
            out,
        } => {
            let results = [
                ExperimentResult::load(&baseline)?,
                ExperimentResult::load(&candidate)?,
            ];
            print_summary(&results, Some(0))?;
            written(write_report(&out, &results, Some(0))?);
            Ok(())
        }
        Command::BenchClean {
            n_list,
            config,
            trace,
            seed,
        } => bench_clean(&n_list, config.as_deref(), trace.as_deref(), seed),
        Command::Serve { config, listen } => {
            let mut config = ServerConfig::load(&config)?;
            if let Some(listen) = listen {
                config.listen = listen;
            }
            let mut server = Server::start(&config)?;
            println!("listening on {}", server.local_addr());
            server.wait();
            Ok(())
        }
    }
}

fn parse_engine(name: &str) -> Result<(EngineKind, Option<PolicyKind>), Error> {
    let name = name.replace('_', "-");
    Ok(match name.as_str() {
        "memshare" => (EngineKind::Memshare, None),
        "memshare-shared" => (EngineKind::Memshare, Some(PolicyKind::Shared)),
        "memshare-partitioned" => (EngineKind::Memshare, Some(PolicyKind::Partitioned)),
        "memshare-idle-tax" => (EngineKind::Memshare, Some(PolicyKind::IdleTax)),
        "slab-partitioned" => (EngineKind::SlabPartitioned, None),
        "slab-greedy" => (EngineKind::SlabGreedy, None),
        other => return Err(Error::Usage(format!("unknown engine `{other}`"))),
    })
}

fn replay(
    engine: &str,
    config: &Path,
    trace: &Path,
    out: &Path,
    seed: Option<u64>,
    fill_on_miss: bool,
    label: Option<String>,
) -> Result<(), Error> {
    let (kind, policy) = parse_engine(engine)?;
    let mut config = EngineConfig::load(config)?;
    config.engine = kind;
    if let Some(policy) = policy {
        config.policy = policy;
    }
    if let Some(seed) = seed {
        config.seed = seed;
        config.cleaner.seed = seed;
    }
    config.validate()?;
    let records = parse_trace(trace)?;
    let options = ExperimentOptions {
        fill_on_miss,
        window: None,
        baseline: None,
        label: Some(label.unwrap_or_else(|| engine.to_string())),
    };
    let result = run_experiment(&config, &records, &options)?;
    let results = [result];
    print_summary(&results, None)?;
    written(write_report(out, &results, None)?);
    Ok(())
}

fn print_summary(results: &[ExperimentResult], baseline: Option<usize>) -> Result<(), Error> {
    for row in summary_rows(results, baseline)? {
        let reduction = row
            .miss_reduction
            .map(|r| format!("  miss reduction {:+.2}%", r * 100.0))
            .unwrap_or_default();
        println!(
            "{:<24} {:<9} hit rate {:.4} ({} gets){reduction}",
            row.run, row.app, row.hit_rate, row.gets
        );
    }
    Ok(())
}

fn written(paths: Vec<PathBuf>) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn bench_clean(
    n_list: &[usize],
    config: Option<&Path>,
    trace: Option<&Path>,
    seed: u64,
) -> Result<(), Error> {
    if n_list.is_empty() || n_list.contains(&0) {
        return Err(Error::Usage("--n-list needs positive values".into()));
    }
    let base = config.map(EngineConfig::load).transpose()?;
    let records: Vec<TraceRecord> = match trace {
        Some(path) => parse_trace(path)?,
        None => generate(&corpus::write_heavy_workload(), seed)?,
    };
    println!("segments_per_pass,passes,segments_freed,relocated_bytes,relocated_per_freed_segment");
    for &n in n_list {
        let mut config = base
            .clone()
            .unwrap_or_else(|| corpus::write_heavy_config(n));
        config.cleaner.segments_per_pass = n;
        config.validate()?;
        let mut engine = Engine::new(config)?;
        for r in &records {
            let value = vec![0u8; r.size as usize];
            match r.op {
                Op::Set => {
                    engine.set(r.app, r.key.as_bytes(), &value, r.ts)?;
                }
                Op::Get => {
                    engine.get(r.app, r.key.as_bytes(), r.ts)?;
                }
                Op::Del => {
                    engine.delete(r.app, r.key.as_bytes(), r.ts)?;
                }
            }
        }
        let t = engine.core().cleaner().totals();
        println!(
            "{n},{},{},{},{:.1}",
            t.passes,
            t.segments_freed,
            t.relocated_bytes,
            t.relocated_per_freed_segment()
        );
    }
    Ok(())
}
