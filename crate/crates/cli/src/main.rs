use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cellfree::harness::experiments::StageTiming;
use cellfree::harness::output::{
    write_mse_cdf, write_quantizer_table, write_throughput, write_validation, RunManifest,
};
use cellfree::harness::{
    parse_power_range, run_mse_cdf, run_quantizer_table, run_throughput_sweep, validate, SimulationConfig,
    ValidationOptions,
};
use cellfree::Levels;

#[derive(Parser, Debug)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO uplink with quantized fronthaul")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analytic and empirical channel-estimation MSE distributions.
    MseCdf(Common),
    /// Per-user throughput against transmit power.
    ThroughputSweep(Common),
    /// Optimal step, Bussgang factors and SDNR per quantization level.
    QuantizerTable(Common),
    /// Run every Monte-Carlo oracle against its closed form.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Scale applied to the closed-form Bussgang gain (fault injection).
        #[arg(long, default_value_t = 1.0)]
        alpha_scale: f64,
        /// Reduced sample counts for smoke runs.
        #[arg(long)]
        quick: bool,
        /// Exit with status 1 if any check fails.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the reduced desk-scale setup (M=100, K=10).
    #[arg(long)]
    desk_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated levels, e.g. 2,4,8,32,inf.
    #[arg(long)]
    levels: Option<String>,
    /// Power grid in dBW: start:step:stop or a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    powers_dbw: Option<String>,
    #[arg(long)]
    trials_geo: Option<usize>,
    #[arg(long)]
    trials_fading: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Record the exact ZF SINR next to the approximation.
    #[arg(long)]
    exact_sinr: bool,
}

fn parse_levels(s: &str) -> Result<Vec<Levels>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<Levels>().with_context(|| format!("bad level `{t}`")))
        .collect()
}

impl Common {
    fn config(&self) -> Result<SimulationConfig> {
        let mut cfg = match (&self.config, self.desk_scale) {
            (Some(_), true) => bail!("--config and --desk-scale are mutually exclusive"),
            (Some(p), false) => SimulationConfig::from_path(p)?,
            (None, true) => SimulationConfig::desk_scale(),
            (None, false) => SimulationConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(l) = &self.levels {
            cfg.sweep.levels = parse_levels(l)?;
        }
        if let Some(p) = &self.powers_dbw {
            cfg.sweep.powers_dbw.0 = parse_power_range(p)?;
        }
        if let Some(n) = self.trials_geo {
            cfg.trials.geometry = n;
        }
        if let Some(n) = self.trials_fading {
            cfg.trials.fading = n;
        }
        if self.exact_sinr {
            cfg.output.exact_sinr = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn finish(command: &str, cfg: &SimulationConfig, timings: &[StageTiming], outputs: &[PathBuf], dir: &Path) -> Result<()> {
    let manifest = RunManifest::new(command, cfg, timings, outputs).write(dir)?;
    for p in outputs.iter().chain(std::iter::once(&manifest)) {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::MseCdf(c) => {
            let cfg = c.config()?;
            let res = run_mse_cdf(&cfg)?;
            for curve in &res.curves {
                println!("{} L={} ks={:.4}", curve.scheme, curve.levels, curve.ks_distance);
            }
            let files = write_mse_cdf(&res, cfg.output.cdf_points, &c.out)?;
            finish("mse-cdf", &cfg, &res.timings, &files, &c.out)?;
        }
        Command::ThroughputSweep(c) => {
            let cfg = c.config()?;
            let res = run_throughput_sweep(&cfg)?;
            if res.rank_deficient_events > 0 {
                eprintln!("warning: {} rank-deficient channel estimates skipped", res.rank_deficient_events);
            }
            let files = write_throughput(&res, &c.out)?;
            finish("throughput-sweep", &cfg, &res.timings, &files, &c.out)?;
        }
        Command::QuantizerTable(c) => {
            let cfg = c.config()?;
            let t = Instant::now();
            let rows = run_quantizer_table(&cfg.levels())?;
            let timings = [StageTiming { stage: "quantizer_table".into(), seconds: t.elapsed().as_secs_f64() }];
            for r in &rows {
                println!("L={} alpha={:.6} lambda={:.6} sdnr_db={:.4}", r.levels, r.alpha, r.lambda, r.sdnr_db);
            }
            let files = write_quantizer_table(&rows, &c.out)?;
            finish("quantizer-table", &cfg, &timings, &files, &c.out)?;
        }
        Command::Validate { common: c, alpha_scale, quick, strict } => {
            let cfg = c.config()?;
            let mut opts = ValidationOptions { alpha_scale, ..ValidationOptions::default() };
            if quick {
                opts.bussgang_samples = 200_000;
                opts.moment_draws = 20_000;
            }
            let t = Instant::now();
            let report = validate(&cfg, &opts);
            let timings = [StageTiming { stage: "validate".into(), seconds: t.elapsed().as_secs_f64() }];
            for chk in &report.checks {
                println!(
                    "{} {} measured={:.6e} tolerance={:.3e}",
                    if chk.passed { "PASS" } else { "FAIL" },
                    chk.name,
                    chk.measured,
                    chk.tolerance
                );
            }
            println!("{} passed, {} failed", report.passed, report.failed);
            let files = write_validation(&report, &c.out)?;
            finish("validate", &cfg, &timings, &files, &c.out)?;
            return Ok(!strict || report.all_passed());
        }
    }
    Ok(true)
}

fn threads_of(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::MseCdf(c) | Command::ThroughputSweep(c) | Command::QuantizerTable(c) => c.threads,
        Command::Validate { common, .. } => common.threads,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_of(&cli.command) {
        pool = pool.num_threads(n);
    }
    let result = pool
        .build()
        .context("building thread pool")
        .and_then(|p| p.install(|| run(cli.command)));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
