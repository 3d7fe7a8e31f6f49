use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use backscatter::experiment::{load_config, run_scenario};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Collision resolution probability per number of colliding tags.
    SlotProb,
    /// Inventory duration with single- and multi-tag readers.
    QCompare,
    /// Decode one synthesized or dumped slot record.
    Trace,
}

impl Command {
    fn scenario(self) -> &'static str {
        match self {
            Command::SlotProb => "slot_probability",
            Command::QCompare => "q_protocol",
            Command::Trace => "single_trace",
        }
    }
}

/// Collided backscatter decoding simulator.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Result file; defaults to the `output` key, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 uses all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    verbose: bool,
    /// Receiver noise power in dBm, or `none`.
    #[arg(long, allow_hyphen_values = true)]
    noise_dbm: Option<String>,
    /// Overrides any configuration key, e.g. `--set runs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn run(args: Args) -> anyhow::Result<()> {
    let mut overrides = vec![("scenario".to_string(), args.command.scenario().to_string())];
    for kv in &args.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(n) = &args.noise_dbm {
        overrides.push(("noise_dbm".into(), n.clone()));
    }
    if let Some(out) = &args.out {
        overrides.push(("output".into(), out.display().to_string()));
    }
    let cfg = load_config(args.config.as_deref(), &overrides).context("reading configuration")?;
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .context("starting worker pool")?;
    }
    if args.verbose {
        eprintln!("{}", cfg.header_comment()?.trim_end());
    }
    let start = Instant::now();
    let csv = run_scenario(&cfg)?;
    match &cfg.output {
        Some(path) => std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    if args.verbose {
        eprintln!("done in {:.2} s", start.elapsed().as_secs_f64());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
