//! Rayleigh Monte Carlo harness.
//!
//! Trial `t` draws its `K x N_t` estimate matrix from a ChaCha8 stream `t`
//! under the configured seed, so results depend only on `(config, seed)`
//! and are emitted in trial order regardless of scheduling.
//!
//! Per-trial CSV columns:
//!
//! ```text
//! trial,method,delta,target_db,verdict,power,max_cert_mse,wall_ms
//! ```
//!
//! `power` and `max_cert_mse` are empty unless a design was recovered.
//! `wall_ms` is 0 unless timing is enabled, which keeps outputs
//! byte-identical across runs.
//!
//! Summary CSV columns (one row per method and grid point):
//!
//! ```text
//! method,delta,target_db,trials,feasible,feasible_fraction,avg_power,common_trials
//! ```
//!
//! `avg_power` averages over the common trials: those feasible for every
//! method at every grid point up to the configured cap. It is `inf` when a
//! common trial is infeasible at that point and `nan` when there are none.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::design::{
    order_blast, order_weighted, solve_max_delta_with, solve_minimax_with, solve_power_min_with, minimax_bracket,
    DesignOptions, DesignOutcome, DesignStatus,
};
use crate::embed::{embed_row, ComplexMatrix};
use crate::error::{Error, Result};
use crate::mse::{db_to_linear, QosTargets};
use crate::reformulation::{IntersectionMode, PrecodingMode, ProblemData};
use crate::uncertainty::UncertaintyRegion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    LinearRobust,
    /// THP with the BLAST ordering.
    ThpRobustOrder1,
    /// THP with the weighted-SINR ordering.
    ThpRobustOrder2,
    /// Linear design that trusts the estimates.
    PerfectCsi,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::LinearRobust,
        Method::ThpRobustOrder1,
        Method::ThpRobustOrder2,
        Method::PerfectCsi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LinearRobust => "linear-robust",
            Method::ThpRobustOrder1 => "thp-robust-order1",
            Method::ThpRobustOrder2 => "thp-robust-order2",
            Method::PerfectCsi => "perfect-csi",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UncertaintyKind {
    Sphere,
    /// Box with halfwidth `delta` on every real coordinate.
    Interval,
}

impl FromStr for UncertaintyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(UncertaintyKind::Sphere),
            "interval" => Ok(UncertaintyKind::Interval),
            _ => Err(Error::InvalidArgument(format!("unknown uncertainty kind {s:?}"))),
        }
    }
}

impl fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UncertaintyKind::Sphere => "sphere",
            UncertaintyKind::Interval => "interval",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub antennas: usize,
    pub users: usize,
    pub trials: usize,
    pub seed: Option<u64>,
    /// Grid of the delta sweep.
    pub deltas: Vec<f64>,
    /// Grid of the SINR sweep, in dB.
    pub targets_db: Vec<f64>,
    /// Radius used by the SINR sweep and the minimax study.
    pub delta: f64,
    /// Target used by the delta sweep and the max-delta study.
    pub target_db: f64,
    /// Power caps of the minimax study.
    pub power_caps: Vec<f64>,
    pub methods: Vec<Method>,
    pub uncertainty: UncertaintyKind,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub sigma: f64,
    /// Largest target included in the common-trial set of the SINR sweep.
    pub common_target_cap_db: f64,
    /// Largest radius included in the common-trial set of the delta sweep.
    pub common_delta_cap: f64,
    pub oracle_samples: usize,
    /// Record wall-clock time per solve (breaks byte-determinism).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            antennas: 3,
            users: 3,
            trials: 200,
            seed: None,
            deltas: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.08, 0.1],
            targets_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0],
            delta: 0.05,
            target_db: 10.0,
            power_caps: vec![1.0, 10.0, 100.0],
            methods: Method::ALL.to_vec(),
            uncertainty: UncertaintyKind::Sphere,
            workers: 0,
            sigma: 1.0,
            common_target_cap_db: 6.0,
            common_delta_cap: 0.015,
            oracle_samples: 10_000,
            timing: false,
        }
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| e.to_string()))
        .collect()
}

fn one<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    v.trim().parse::<T>().map_err(|e| e.to_string())
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Keys match the field names;
    /// lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let r: std::result::Result<(), String> = (|| {
            match key {
                "antennas" => self.antennas = one(value)?,
                "users" => self.users = one(value)?,
                "trials" => self.trials = one(value)?,
                "seed" => self.seed = Some(one(value)?),
                "deltas" => self.deltas = list(value)?,
                "targets_db" => self.targets_db = list(value)?,
                "delta" => self.delta = one(value)?,
                "target_db" => self.target_db = one(value)?,
                "power_caps" => self.power_caps = list(value)?,
                "methods" => self.methods = list(value)?,
                "uncertainty" => self.uncertainty = one(value)?,
                "workers" => self.workers = one(value)?,
                "sigma" => self.sigma = one(value)?,
                "common_target_cap_db" => self.common_target_cap_db = one(value)?,
                "common_delta_cap" => self.common_delta_cap = one(value)?,
                "oracle_samples" => self.oracle_samples = one(value)?,
                "timing" => self.timing = one(value)?,
                _ => return Err(format!("unknown key {key:?}")),
            }
            Ok(())
        })();
        r.map_err(|m| Error::InvalidArgument(format!("{key}: {m}")))
    }

    /// Parses the plain-text format: one `key = value` per line, `#` starts
    /// a comment, blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply(text)?;
        Ok(c)
    }

    /// Applies every setting in `text` on top of `self`.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.antennas == 0 || self.users == 0 {
            return bad("antennas and users must be positive");
        }
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if self.deltas.is_empty() || self.targets_db.is_empty() || self.power_caps.is_empty() {
            return bad("grids must be nonempty");
        }
        if self.methods.is_empty() {
            return bad("method set must be nonempty");
        }
        if self.deltas.iter().chain([&self.delta]).any(|d| !(d.is_finite() && *d >= 0.0)) {
            return bad("radii must be finite and >= 0");
        }
        if self.targets_db.iter().chain([&self.target_db]).any(|t| !t.is_finite()) {
            return bad("targets must be finite");
        }
        if self.power_caps.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad("power caps must be positive");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive");
        }
        if self.oracle_samples == 0 {
            return bad("oracle_samples must be >= 1");
        }
        Ok(())
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidArgument("a seed is required".into()))
    }

    fn options(&self) -> DesignOptions {
        let mut o = DesignOptions::default();
        o.oracle.samples = self.oracle_samples;
        o
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))
    }
}

/// Circularly symmetric unit-variance Gaussian matrix.
pub fn rayleigh_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> ComplexMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let e: Vec<Complex64> = (0..rows * cols)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(re * s, im * s)
        })
        .collect();
    ComplexMatrix::from_row_slice(rows, cols, &e).expect("finite Gaussian draws")
}

/// Estimate matrix of trial `trial`.
pub fn trial_estimates(seed: u64, trial: usize, users: usize, antennas: usize) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rayleigh_matrix(&mut rng, users, antennas)
}

pub fn generate_trials(config: &ExperimentConfig) -> Result<Vec<ComplexMatrix>> {
    config.validate()?;
    let seed = config.seed()?;
    Ok((0..config.trials)
        .map(|t| trial_estimates(seed, t, config.users, config.antennas))
        .collect())
}

/// Problem data for one method at radius `delta` and a common SINR target.
pub fn method_data(
    estimates: &ComplexMatrix,
    method: Method,
    kind: UncertaintyKind,
    delta: f64,
    target_db: f64,
    sigma: f64,
) -> Result<ProblemData> {
    let k = estimates.nrows();
    let targets = QosTargets::uniform_sinr_db(target_db, k)?;
    let sigmas = vec![sigma; k];
    let delta = if method == Method::PerfectCsi { 0.0 } else { delta };
    let regions = (0..k)
        .map(|u| {
            let c = embed_row(&estimates.row(u));
            match kind {
                UncertaintyKind::Sphere => UncertaintyRegion::spherical(c, delta),
                UncertaintyKind::Interval => UncertaintyRegion::interval(c, &vec![delta; 2 * estimates.ncols()]),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mode = match method {
        Method::LinearRobust | Method::PerfectCsi => PrecodingMode::Linear,
        Method::ThpRobustOrder1 | Method::ThpRobustOrder2 => PrecodingMode::Thp,
    };
    let data = ProblemData::new(estimates.clone(), sigmas.clone(), targets, regions, mode)?;
    match method {
        Method::ThpRobustOrder1 => data.with_ordering(order_blast(estimates).order),
        Method::ThpRobustOrder2 => {
            let gamma = vec![db_to_linear(target_db); k];
            let order = order_weighted(estimates, &gamma, &sigmas)?;
            data.with_ordering(order)
        }
        _ => Ok(data),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    Infeasible,
    /// Solved, but the worst-case oracle found a violation.
    Uncertified,
    Failed,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Feasible => "feasible",
            Verdict::Infeasible => "infeasible",
            Verdict::Uncertified => "uncertified",
            Verdict::Failed => "failed",
        }
    }
}

impl From<DesignStatus> for Verdict {
    fn from(s: DesignStatus) -> Self {
        match s {
            DesignStatus::Optimal => Verdict::Feasible,
            DesignStatus::Infeasible => Verdict::Infeasible,
            DesignStatus::Uncertified => Verdict::Uncertified,
            DesignStatus::Inaccurate | DesignStatus::Failed => Verdict::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub method: Method,
    pub delta: f64,
    pub target_db: f64,
    pub verdict: Verdict,
    pub power: Option<f64>,
    pub max_cert_mse: Option<f64>,
    pub wall_ms: u64,
}

pub const RECORD_HEADER: &str = "trial,method,delta,target_db,verdict,power,max_cert_mse,wall_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrialRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.trial,
            self.method,
            self.delta,
            self.target_db,
            self.verdict.name(),
            opt(self.power),
            opt(self.max_cert_mse),
            self.wall_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub delta: f64,
    pub target_db: f64,
    pub trials: usize,
    pub feasible: usize,
    /// `None` when the average diverges or there are no common trials.
    pub avg_power: Option<f64>,
    pub common_trials: usize,
}

impl SummaryRow {
    pub fn fraction(&self) -> f64 {
        self.feasible as f64 / self.trials as f64
    }

    /// Some common trial has no feasible design at this point.
    pub fn diverged(&self) -> bool {
        self.common_trials > 0 && self.avg_power.is_none()
    }
}

pub const SUMMARY_HEADER: &str = "method,delta,target_db,trials,feasible,feasible_fraction,avg_power,common_trials";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SweepResult {
    pub fn records_csv(&self) -> String {
        let mut s = format!("{RECORD_HEADER}\n");
        for r in &self.records {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = format!("{SUMMARY_HEADER}\n");
        for r in &self.summary {
            let avg = match (r.common_trials, r.avg_power) {
                (0, _) => "nan".to_string(),
                (_, None) => "inf".to_string(),
                (_, Some(p)) => p.to_string(),
            };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.delta,
                r.target_db,
                r.trials,
                r.feasible,
                r.fraction(),
                avg,
                r.common_trials
            );
        }
        s
    }

    /// Summary rows of one method in grid order.
    pub fn curve(&self, method: Method) -> Vec<&SummaryRow> {
        self.summary.iter().filter(|r| r.method == method).collect()
    }
}

/// Solves one method on one trial at one grid point.
pub fn run_one(
    estimates: &ComplexMatrix,
    method: Method,
    config: &ExperimentConfig,
    delta: f64,
    target_db: f64,
    opts: &DesignOptions,
) -> Result<DesignOutcome> {
    let data = method_data(estimates, method, config.uncertainty, delta, target_db, config.sigma)?;
    solve_power_min_with(&data, opts)
}

fn sweep(config: &ExperimentConfig, points: &[(f64, f64)], in_common: &[bool]) -> Result<SweepResult> {
    config.validate()?;
    let seed = config.seed()?;
    let opts = config.options();
    let per_trial: Vec<Vec<TrialRecord>> = config.pool()?.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let est = trial_estimates(seed, t, config.users, config.antennas);
                let mut out = Vec::with_capacity(points.len() * config.methods.len());
                for &method in &config.methods {
                    for &(delta, target_db) in points {
                        let start = Instant::now();
                        let outcome = run_one(&est, method, config, delta, target_db, &opts);
                        let wall_ms = if config.timing {
                            start.elapsed().as_millis() as u64
                        } else {
                            0
                        };
                        let (verdict, power, cert) = match outcome {
                            Ok(o) => (Verdict::from(o.status), o.power, o.max_certificate()),
                            Err(e) => {
                                warn!("trial {t} {method} delta={delta} target={target_db}: {e}");
                                (Verdict::Failed, None, None)
                            }
                        };
                        if matches!(verdict, Verdict::Failed | Verdict::Uncertified) {
                            warn!("trial {t} {method} delta={delta} target={target_db}: {}", verdict.name());
                        }
                        out.push(TrialRecord {
                            trial: t,
                            method,
                            delta,
                            target_db,
                            verdict,
                            power,
                            max_cert_mse: cert,
                            wall_ms,
                        });
                    }
                }
                out
            })
            .collect()
    });

    let common: Vec<usize> = per_trial
        .iter()
        .enumerate()
        .filter(|(_, recs)| {
            recs.iter().all(|r| {
                let idx = points.iter().position(|p| *p == (r.delta, r.target_db)).expect("grid point");
                !in_common[idx] || r.verdict == Verdict::Feasible
            })
        })
        .map(|(t, _)| t)
        .collect();

    let mut summary = Vec::new();
    for &method in &config.methods {
        for &(delta, target_db) in points {
            let pick = |recs: &Vec<TrialRecord>| -> TrialRecord {
                recs.iter()
                    .find(|r| r.method == method && r.delta == delta && r.target_db == target_db)
                    .expect("record per point")
                    .clone()
            };
            let feasible = per_trial
                .iter()
                .filter(|recs| pick(recs).verdict == Verdict::Feasible)
                .count();
            let mut total = 0.0;
            let mut diverged = false;
            for &t in &common {
                match pick(&per_trial[t]) {
                    TrialRecord {
                        verdict: Verdict::Feasible,
                        power: Some(p),
                        ..
                    } => total += p,
                    _ => diverged = true,
                }
            }
            summary.push(SummaryRow {
                method,
                delta,
                target_db,
                trials: config.trials,
                feasible,
                avg_power: (!diverged && !common.is_empty()).then(|| total / common.len() as f64),
                common_trials: common.len(),
            });
        }
    }
    Ok(SweepResult {
        records: per_trial.into_iter().flatten().collect(),
        summary,
    })
}

/// Feasibility and average power against the SINR target at radius `config.delta`.
pub fn sweep_sinr(config: &ExperimentConfig) -> Result<SweepResult> {
    let points: Vec<(f64, f64)> = config.targets_db.iter().map(|&t| (config.delta, t)).collect();
    let common: Vec<bool> = config.targets_db.iter().map(|&t| t <= config.common_target_cap_db).collect();
    sweep(config, &points, &common)
}

/// Feasibility and average power against the radius at target `config.target_db`.
pub fn sweep_delta(config: &ExperimentConfig) -> Result<SweepResult> {
    let points: Vec<(f64, f64)> = config.deltas.iter().map(|&d| (d, config.target_db)).collect();
    let common: Vec<bool> = config.deltas.iter().map(|&d| d <= config.common_delta_cap).collect();
    sweep(config, &points, &common)
}

pub const MAXDELTA_HEADER: &str = "trial,method,target_db,delta_max,bracket_low,bracket_high,probes,capped,converged";

#[derive(Debug, Clone, PartialEq)]
pub struct MaxDeltaRecord {
    pub trial: usize,
    pub method: Method,
    pub target_db: f64,
    pub delta_max: f64,
    pub bracket: (f64, f64),
    pub probes: usize,
    pub capped: bool,
    pub converged: bool,
}

/// Per-trial largest radius for every robust method in the config.
pub fn run_maxdelta(config: &ExperimentConfig) -> Result<Vec<MaxDeltaRecord>> {
    config.validate()?;
    let seed = config.seed()?;
    let opts = DesignOptions {
        intersection: IntersectionMode::Conservative,
        certify: false,
        ..config.options()
    };
    let methods: Vec<Method> = config.methods.iter().copied().filter(|m| *m != Method::PerfectCsi).collect();
    let rows: Vec<Vec<Result<MaxDeltaRecord>>> = config.pool()?.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let est = trial_estimates(seed, t, config.users, config.antennas);
                methods
                    .iter()
                    .map(|&method| {
                        let data = method_data(&est, method, config.uncertainty, 0.0, config.target_db, config.sigma)?;
                        let o = solve_max_delta_with(&data, 1e-4, &opts)?;
                        if o.capped {
                            warn!("trial {t} {method}: bracket cap reached");
                        }
                        Ok(MaxDeltaRecord {
                            trial: t,
                            method,
                            target_db: config.target_db,
                            delta_max: o.delta_max,
                            bracket: (o.bracket.feasible, o.bracket.infeasible),
                            probes: o.bracket.probes.len(),
                            capped: o.capped,
                            converged: o.bracket.converged,
                        })
                    })
                    .collect()
            })
            .collect()
    });
    rows.into_iter().flatten().collect()
}

pub fn maxdelta_csv(records: &[MaxDeltaRecord]) -> String {
    let mut s = format!("{MAXDELTA_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.trial, r.method, r.target_db, r.delta_max, r.bracket.0, r.bracket.1, r.probes, r.capped, r.converged
        );
    }
    s
}

pub const MINIMAX_HEADER: &str =
    "trial,method,delta,p_total,zeta0,max_cert_mse,bracket_low,bracket_high,probes,converged";

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxRecord {
    pub trial: usize,
    pub method: Method,
    pub delta: f64,
    pub p_total: f64,
    pub zeta0: Option<f64>,
    pub max_cert_mse: Option<f64>,
    /// Bracket on `sqrt(zeta0)`.
    pub bracket: (f64, f64),
    pub probes: usize,
    pub converged: bool,
}

/// Per-trial minimax MSE level for every method and power cap.
pub fn run_minimax(config: &ExperimentConfig) -> Result<Vec<MinimaxRecord>> {
    config.validate()?;
    let seed = config.seed()?;
    let opts = config.options();
    let rows: Vec<Vec<MinimaxRecord>> = config.pool()?.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let est = trial_estimates(seed, t, config.users, config.antennas);
                let mut out = Vec::new();
                for &method in &config.methods {
                    for &p_total in &config.power_caps {
                        let result = method_data(&est, method, config.uncertainty, config.delta, 0.0, config.sigma)
                            .and_then(|d| solve_minimax_with(&d, p_total, &minimax_bracket(), &opts));
                        let delta = if method == Method::PerfectCsi { 0.0 } else { config.delta };
                        out.push(match result {
                            Ok(o) => MinimaxRecord {
                                trial: t,
                                method,
                                delta,
                                p_total,
                                zeta0: Some(o.zeta0),
                                max_cert_mse: o.certificates.iter().copied().reduce(f64::max),
                                bracket: (o.bracket.infeasible, o.bracket.feasible),
                                probes: o.bracket.probes.len(),
                                converged: o.bracket.converged,
                            },
                            Err(e) => {
                                warn!("trial {t} {method} p_total={p_total}: {e}");
                                MinimaxRecord {
                                    trial: t,
                                    method,
                                    delta,
                                    p_total,
                                    zeta0: None,
                                    max_cert_mse: None,
                                    bracket: (f64::NAN, f64::NAN),
                                    probes: 0,
                                    converged: false,
                                }
                            }
                        });
                    }
                }
                out
            })
            .collect()
    });
    Ok(rows.into_iter().flatten().collect())
}

pub fn minimax_csv(records: &[MinimaxRecord]) -> String {
    let mut s = format!("{MINIMAX_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.trial,
            r.method,
            r.delta,
            r.p_total,
            opt(r.zeta0),
            opt(r.max_cert_mse),
            r.bracket.0,
            r.bracket.1,
            r.probes,
            r.converged
        );
    }
    s
}
