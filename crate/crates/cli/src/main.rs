use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mec_core::experiments::{self, ExperimentConfig, Scheme};
use mec_core::queue_sim::{self, SimConfig};
use mec_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mec",
    version,
    about = "Priority-priced edge offloading experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected schemes on one placement and write CSV results.
    Run(CommonArgs),
    /// Run only the price-learning loop and write its trace.
    Learn(CommonArgs),
    /// Simulate the two-class preemptive queue at fixed arrival rates.
    Simulate(SimArgs),
    /// Check model and solver invariants on the configured placement.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// key = value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Placement seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scheme to run; repeat for several. Defaults to all.
    #[arg(long = "scheme")]
    schemes: Vec<Scheme>,
    /// Override a config key, e.g. `--set n_users=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// High-priority arrival rate (jobs/s).
    #[arg(long)]
    rate_h: f64,
    /// Low-priority arrival rate (jobs/s).
    #[arg(long)]
    rate_l: f64,
    /// Service rate; defaults to the edge rate of the default parameters.
    #[arg(long)]
    service_rate: Option<f64>,
    /// Jobs to complete after warm-up.
    #[arg(long, default_value_t = 200_000)]
    horizon: u64,
    /// Directory for `sim.csv`; without it the report is only printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            cfg.placement_seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if !self.schemes.is_empty() {
            cfg.schemes = self.schemes.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_summaries(suite: &experiments::SuiteResult) {
    println!(
        "{:<17} {:>8} {:>10} {:>10} {:>12} {:>11} {:>11}  status",
        "scheme", "mean_x", "cost_pct", "agg_pct", "welfare", "p_H", "p_L"
    );
    for s in &suite.summaries {
        println!(
            "{:<17} {:>8.4} {:>10.2} {:>10.2} {:>12.6} {:>11.4e} {:>11.4e}  {}",
            s.scheme,
            s.mean_x,
            s.mean_cost_pct,
            s.aggregate_cost_pct,
            s.welfare,
            s.p_h,
            s.p_l,
            s.status
        );
    }
}

fn run(args: &CommonArgs, learn_only: bool) -> Result<bool> {
    let mut cfg = args.load()?;
    if learn_only {
        cfg.schemes = vec![Scheme::PriorityLearned];
    }
    let suite = experiments::run_suite(&cfg)?;
    experiments::export_suite(&cfg.out_dir, &suite)?;
    print_summaries(&suite);
    if let Some(trace) = &suite.trace {
        println!("learning steps: {}", trace.len());
    }
    println!("wrote {}", cfg.out_dir.display());
    Ok(suite.summaries.iter().all(|s| s.status == "ok"))
}

fn simulate(args: &SimArgs) -> Result<bool> {
    let mu = args
        .service_rate
        .unwrap_or_else(|| mec_core::SystemParams::table2().mu_b());
    let cfg = SimConfig::new(args.seed, args.horizon, args.rate_h, args.rate_l, mu);
    let report = queue_sim::simulate(&cfg)?;
    println!(
        "H: {:.6} s (se {:.2e}), L: {:.6} s (se {:.2e}), utilization {:.4}, rng {}",
        report.mean_sojourn_h,
        report.se_h,
        report.mean_sojourn_l,
        report.se_l,
        report.utilization,
        report.rng
    );
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        let path = dir.join("sim.csv");
        experiments::write_sim_report(&path, &cfg, &report)?;
        println!("wrote {}", path.display());
    }
    Ok(true)
}

fn validate(args: &CommonArgs) -> Result<bool> {
    let cfg = args.load()?;
    let checks = experiments::validate_invariants(&cfg)?;
    for c in &checks {
        println!(
            "{} {:<26} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => run(a, false),
        Command::Learn(a) => run(a, true),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
