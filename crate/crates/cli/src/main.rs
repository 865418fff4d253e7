//! `rprecode`: design, verification, simulation and Monte Carlo sweeps.

mod problem;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_precoding::design::{certify, solve_power_min_with, DesignOptions, CERT_SLACK};
use robust_precoding::experiments::{
    maxdelta_csv, minimax_csv, run_maxdelta, run_minimax, sweep_delta, sweep_sinr, ExperimentConfig,
};
use robust_precoding::reformulation::{IntersectionMode, DEFAULT_EXACT_BUDGET};
use robust_precoding::thp::{simulate, ConstellationSpec};
use robust_precoding::ComplexMatrix;

use problem::{DesignFile, ProblemFile};

#[derive(Parser)]
#[command(name = "rprecode", version, about = "Robust linear and Tomlinson-Harashima downlink precoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimum-power robust design for a problem file.
    Design(DesignArgs),
    /// Worst-case MSE certificates of a stored design.
    Verify(VerifyArgs),
    /// Feasibility and average power against the SINR target.
    SweepSinr(ExperimentArgs),
    /// Feasibility and average power against the uncertainty radius.
    SweepDelta(ExperimentArgs),
    /// Largest tolerable uncertainty radius per trial.
    Maxdelta(ExperimentArgs),
    /// Smallest common worst-case MSE per trial and power cap.
    Minimax(ExperimentArgs),
    /// Symbol-level simulation of a stored design.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Intersection {
    Exact,
    Conservative,
    Auto,
}

impl From<Intersection> for IntersectionMode {
    fn from(i: Intersection) -> Self {
        match i {
            Intersection::Exact => IntersectionMode::Exact,
            Intersection::Conservative => IntersectionMode::Conservative,
            Intersection::Auto => IntersectionMode::Auto {
                budget: DEFAULT_EXACT_BUDGET,
            },
        }
    }
}

#[derive(Args)]
struct DesignArgs {
    /// Problem file (JSON).
    #[arg(long)]
    problem: String,
    #[arg(long, value_enum, default_value = "auto")]
    intersection: Intersection,
    /// Samples of the worst-case oracle; 0 skips certification.
    #[arg(long, default_value_t = 10_000)]
    oracle_samples: usize,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    problem: String,
    /// Design file written by `design`.
    #[arg(long)]
    design: String,
    #[arg(long, default_value_t = 10_000)]
    oracle_samples: usize,
    #[arg(long, default_value_t = 0x5eed)]
    oracle_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelChoice {
    /// The estimates themselves.
    Estimate,
    /// One admissible channel per user drawn from its region.
    Sample,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    problem: String,
    #[arg(long)]
    design: String,
    #[arg(long, default_value_t = 100_000)]
    symbols: usize,
    /// QAM order (a square of an even power of two).
    #[arg(long, default_value_t = 64)]
    qam: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value = "estimate")]
    channel: ChannelChoice,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Flags mirror the keys of the plain-text config file and override it.
#[derive(Args)]
struct ExperimentArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    antennas: Option<String>,
    #[arg(long)]
    users: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Comma-separated radius grid.
    #[arg(long)]
    deltas: Option<String>,
    /// Comma-separated target grid in dB.
    #[arg(long)]
    targets_db: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    target_db: Option<String>,
    #[arg(long)]
    power_caps: Option<String>,
    /// Comma-separated subset of linear-robust, thp-robust-order1, thp-robust-order2, perfect-csi.
    #[arg(long)]
    methods: Option<String>,
    /// sphere or interval.
    #[arg(long)]
    uncertainty: Option<String>,
    /// Worker threads, 0 for all cores.
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    common_target_cap_db: Option<String>,
    #[arg(long)]
    common_delta_cap: Option<String>,
    #[arg(long)]
    oracle_samples: Option<String>,
    /// Record wall time per solve. Outputs are then no longer reproducible.
    #[arg(long)]
    timing: bool,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            c.apply(&text).with_context(|| format!("in {path}"))?;
        }
        let flags = [
            ("antennas", &self.antennas),
            ("users", &self.users),
            ("trials", &self.trials),
            ("deltas", &self.deltas),
            ("targets_db", &self.targets_db),
            ("delta", &self.delta),
            ("target_db", &self.target_db),
            ("power_caps", &self.power_caps),
            ("methods", &self.methods),
            ("uncertainty", &self.uncertainty),
            ("workers", &self.workers),
            ("sigma", &self.sigma),
            ("common_target_cap_db", &self.common_target_cap_db),
            ("common_delta_cap", &self.common_delta_cap),
            ("oracle_samples", &self.oracle_samples),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, v)?;
            }
        }
        c.seed = Some(self.seed);
        if self.timing {
            c.timing = true;
        }
        c.validate()?;
        Ok(c)
    }
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn emit(out: &Option<PathBuf>, json: String) -> Result<()> {
    match out {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn design(a: &DesignArgs) -> Result<ExitCode> {
    let data = ProblemFile::read(&a.problem)?.to_data()?;
    let mut opts = DesignOptions {
        intersection: a.intersection.into(),
        certify: a.oracle_samples > 0,
        ..DesignOptions::default()
    };
    if a.oracle_samples > 0 {
        opts.oracle.samples = a.oracle_samples;
    }
    let outcome = solve_power_min_with(&data, &opts)?;
    let file = DesignFile::from_outcome(&outcome);
    eprintln!("status {}, power {:?}", file.status, file.power);
    emit(&a.out, serde_json::to_string_pretty(&file)?)?;
    Ok(if outcome.design.is_some() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn verify(a: &VerifyArgs) -> Result<ExitCode> {
    let file = DesignFile::read(&a.design)?;
    let data = ProblemFile::read(&a.problem)?.to_data()?.with_ordering(file.ordering.clone())?;
    let d = file.design()?;
    if d.users() != data.users() || d.antennas() != data.antennas() {
        bail!("design and problem dimensions differ");
    }
    let mut oracle = DesignOptions::default().oracle;
    oracle.samples = a.oracle_samples;
    oracle.seed = a.oracle_seed;
    let certs = certify(&d, &data, &oracle);
    println!("user,zeta,worst_case_mse,pass");
    let mut ok = true;
    for (u, (c, z)) in certs.iter().zip(data.targets().zeta()).enumerate() {
        let pass = *c <= z + CERT_SLACK;
        ok &= pass;
        println!("{u},{z},{c},{pass}");
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn run_simulation(a: &SimulateArgs) -> Result<ExitCode> {
    let file = DesignFile::read(&a.design)?;
    let data = ProblemFile::read(&a.problem)?.to_data()?.with_ordering(file.ordering.clone())?;
    let d = file.design()?;
    // Rows in precoding order, as the design expects.
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let rows: Vec<_> = data
        .ordering()
        .iter()
        .flat_map(|&u| match a.channel {
            ChannelChoice::Estimate => data.estimates().row(u),
            ChannelChoice::Sample => data.regions()[u].sample(1, &mut rng, 0.0)[0].to_complex(),
        })
        .collect();
    let h = ComplexMatrix::from_row_slice(data.users(), data.antennas(), &rows)?;
    let sigma: Vec<f64> = data.ordering().iter().map(|&u| data.sigma()[u]).collect();
    let report = simulate(&d, &h, &sigma, a.symbols, ConstellationSpec::qam(a.qam)?, a.seed)?;
    emit(&a.out, serde_json::to_string_pretty(&report)?)?;
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Design(a) => design(&a),
        Command::Verify(a) => verify(&a),
        Command::Simulate(a) => run_simulation(&a),
        Command::SweepSinr(a) => {
            let r = sweep_sinr(&a.config()?)?;
            write_out(&a.out, "sweep_sinr_records.csv", &r.records_csv())?;
            write_out(&a.out, "sweep_sinr_summary.csv", &r.summary_csv())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepDelta(a) => {
            let r = sweep_delta(&a.config()?)?;
            write_out(&a.out, "sweep_delta_records.csv", &r.records_csv())?;
            write_out(&a.out, "sweep_delta_summary.csv", &r.summary_csv())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Maxdelta(a) => {
            let r = run_maxdelta(&a.config()?)?;
            write_out(&a.out, "maxdelta.csv", &maxdelta_csv(&r))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Minimax(a) => {
            let r = run_minimax(&a.config()?)?;
            write_out(&a.out, "minimax.csv", &minimax_csv(&r))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
