//! End-to-end design algorithms.
//!
//! [`solve_power_min`] builds the appropriate program, solves it, recovers
//! the complex design and certifies it with the worst-case oracle.
//! [`solve_minimax`] and [`solve_max_delta`] bisect on feasibility probes.
//! [`order_blast`] and [`order_weighted`] pick THP precoding orders.
//!
//! Designs are returned in position space: stream `i` serves user
//! `ordering[i]`. Certificates are indexed by user.

use itertools::Itertools;
use log::debug;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::conic::{solve, SolveStatus, Tolerances};
use crate::embed::ComplexMatrix;
use crate::error::{Error, Result};
use crate::mse::Design;
use crate::reformulation::{
    build_feasibility_fixed, build_perfect_csi, build_robust, FixedParameter, Formulation, IntersectionMode,
    ProblemData,
};
use crate::uncertainty::{OracleConfig, WorstCaseOracle};

/// Slack on certificates: `worst_case_mse <= zeta + CERT_SLACK`.
pub const CERT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOptions {
    pub intersection: IntersectionMode,
    pub tolerances: Tolerances,
    pub oracle: OracleConfig,
    /// Run the worst-case oracle on every recovered design.
    pub certify: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            intersection: IntersectionMode::default(),
            tolerances: Tolerances::default(),
            oracle: OracleConfig::default(),
            certify: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignStatus {
    /// Solved and, when certification ran, every certificate passed.
    Optimal,
    /// Solved but some certificate exceeded its target.
    Uncertified,
    Infeasible,
    /// The solver could not reach the requested accuracy.
    Inaccurate,
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignOutcome {
    pub status: DesignStatus,
    pub design: Option<Design>,
    /// `tr(P^H P)`.
    pub power: Option<f64>,
    /// Worst-case MSE found by the oracle, per user. Empty when not certified.
    pub certificates: Vec<f64>,
    pub ordering: Vec<usize>,
    pub intersection: IntersectionMode,
}

impl DesignOutcome {
    pub fn is_optimal(&self) -> bool {
        self.status == DesignStatus::Optimal
    }

    pub fn max_certificate(&self) -> Option<f64> {
        self.certificates.iter().copied().reduce(f64::max)
    }
}

/// Worst-case MSE of each user for a position-space design.
pub fn certify(design: &Design, data: &ProblemData, oracle: &OracleConfig) -> Vec<f64> {
    let o = WorstCaseOracle::new(*oracle);
    let mut out = vec![0.0; data.users()];
    for (pos, &u) in data.ordering().iter().enumerate() {
        out[u] = o.evaluate(design, pos, &data.regions()[u], data.sigma()[u]).mse;
    }
    out
}

fn passes(certs: &[f64], zeta: &[f64]) -> bool {
    certs.iter().zip(zeta).all(|(c, z)| *c <= z + CERT_SLACK)
}

/// Solves with one retry at tighter tolerances when the first attempt is inaccurate.
fn solve_retrying(f: &Formulation, tol: &Tolerances) -> (SolveStatus, Vec<f64>) {
    let r = solve(&f.program, tol);
    if r.status != SolveStatus::Inaccurate {
        return (r.status, r.point);
    }
    debug!("inaccurate solve ({}), retrying tighter", r.diagnostics.raw_status);
    let r = solve(&f.program, &tol.tightened());
    (r.status, r.point)
}

/// Minimum-power design under the robust MSE constraints of `data`.
pub fn solve_power_min(data: &ProblemData) -> Result<DesignOutcome> {
    solve_power_min_with(data, &DesignOptions::default())
}

pub fn solve_power_min_with(data: &ProblemData, opts: &DesignOptions) -> Result<DesignOutcome> {
    let nominal = data.regions().iter().all(|r| r.radius() == 0.0);
    let f = if nominal {
        build_perfect_csi(data)?
    } else {
        build_robust(data, opts.intersection)?
    };
    let (status, point) = solve_retrying(&f, &opts.tolerances);
    let mut out = DesignOutcome {
        status: match status {
            SolveStatus::Optimal => DesignStatus::Optimal,
            SolveStatus::Infeasible => DesignStatus::Infeasible,
            SolveStatus::Inaccurate => DesignStatus::Inaccurate,
            SolveStatus::Unbounded | SolveStatus::Failed => DesignStatus::Failed,
        },
        design: None,
        power: None,
        certificates: Vec::new(),
        ordering: data.ordering().to_vec(),
        intersection: f.intersection,
    };
    if status != SolveStatus::Optimal {
        return Ok(out);
    }
    let design = match f.layout.recover(&point) {
        Ok(d) => d,
        Err(e) => {
            debug!("recovery failed: {e}");
            out.status = DesignStatus::Failed;
            return Ok(out);
        }
    };
    out.power = Some(design.power());
    if opts.certify {
        out.certificates = certify(&design, data, &opts.oracle);
        if !passes(&out.certificates, data.targets().zeta()) {
            out.status = DesignStatus::Uncertified;
        }
    }
    out.design = Some(design);
    Ok(out)
}

/// Bracket and stopping rule of a bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionConfig {
    pub lower: f64,
    pub upper: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl BisectionConfig {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let c = Self {
            lower,
            upper,
            tolerance: 1e-4,
            max_iter: 60,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        self.tolerance = tolerance;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::InvalidArgument(format!(
                "bisection bracket [{}, {}] is empty",
                self.lower, self.upper
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("bisection tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// One feasibility probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    pub feasible: bool,
}

/// Feasible/infeasible bracket left by a bisection.
#[derive(Debug, Clone, PartialEq)]
pub struct Bracket {
    pub feasible: f64,
    pub infeasible: f64,
    pub probes: Vec<Probe>,
    pub converged: bool,
}

struct Prober<'a> {
    data: &'a ProblemData,
    opts: &'a DesignOptions,
    probes: Vec<Probe>,
}

impl Prober<'_> {
    fn run(&mut self, fixed: FixedParameter, value: f64) -> Result<Option<Design>> {
        let f = build_feasibility_fixed(self.data, fixed, self.opts.intersection)?;
        let (status, point) = solve_retrying(&f, &self.opts.tolerances);
        // Anything short of a verified optimum counts as infeasible.
        let design = if status == SolveStatus::Optimal {
            f.layout.recover(&point).ok()
        } else {
            None
        };
        debug!("probe {value:.6}: {status:?}");
        self.probes.push(Probe {
            value,
            feasible: design.is_some(),
        });
        Ok(design)
    }
}

/// Bisects between `feasible` and `infeasible` (either may be the larger).
fn bisect(
    mut feasible: (f64, Design),
    mut infeasible: f64,
    cfg: &BisectionConfig,
    mut probe: impl FnMut(f64) -> Result<Option<Design>>,
) -> Result<(f64, Design, f64, bool)> {
    for _ in 0..cfg.max_iter {
        if (feasible.0 - infeasible).abs() <= cfg.tolerance {
            return Ok((feasible.0, feasible.1, infeasible, true));
        }
        let mid = 0.5 * (feasible.0 + infeasible);
        match probe(mid)? {
            Some(d) => feasible = (mid, d),
            None => infeasible = mid,
        }
    }
    let converged = (feasible.0 - infeasible).abs() <= cfg.tolerance;
    Ok((feasible.0, feasible.1, infeasible, converged))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxOutcome {
    /// Smallest feasible common MSE level found.
    pub zeta0: f64,
    pub design: Design,
    pub certificates: Vec<f64>,
    pub bracket: Bracket,
    pub ordering: Vec<usize>,
}

/// Default bracket on `sqrt(zeta0)`.
pub fn minimax_bracket() -> BisectionConfig {
    BisectionConfig::new(1e-6, 1.0).expect("static bracket is valid")
}

/// Minimises the largest worst-case MSE subject to `tr(P^H P) <= p_total`,
/// by bisection on `sqrt(zeta0)`.
pub fn solve_minimax(data: &ProblemData, p_total: f64) -> Result<MinimaxOutcome> {
    solve_minimax_with(data, p_total, &minimax_bracket(), &DesignOptions::default())
}

pub fn solve_minimax_with(
    data: &ProblemData,
    p_total: f64,
    cfg: &BisectionConfig,
    opts: &DesignOptions,
) -> Result<MinimaxOutcome> {
    if !(p_total.is_finite() && p_total > 0.0) {
        return Err(Error::InvalidArgument(format!("power cap must be positive, got {p_total}")));
    }
    let mut prober = Prober {
        data,
        opts,
        probes: Vec::new(),
    };
    let mut probe = |s: f64| {
        prober.run(
            FixedParameter::Minimax {
                sqrt_zeta0: s,
                p_total,
            },
            s,
        )
    };
    let top = probe(cfg.upper)?.ok_or_else(|| {
        Error::Solver(format!("minimax probe infeasible at sqrt(zeta0) = {}", cfg.upper))
    })?;
    let (s, design, infeasible, converged) = match probe(cfg.lower)? {
        Some(d) => (cfg.lower, d, cfg.lower, true),
        None => bisect((cfg.upper, top), cfg.lower, cfg, &mut probe)?,
    };
    let zeta0 = s * s;
    let certificates = if opts.certify {
        certify(&design, data, &opts.oracle)
    } else {
        Vec::new()
    };
    Ok(MinimaxOutcome {
        zeta0,
        design,
        certificates,
        bracket: Bracket {
            feasible: s,
            infeasible,
            probes: prober.probes,
            converged,
        },
        ordering: data.ordering().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxDeltaOutcome {
    /// Largest common radius found feasible (a lower bound for intersections).
    pub delta_max: f64,
    pub design: Option<Design>,
    pub bracket: Bracket,
    /// The upper bracket reached its cap while still feasible.
    pub capped: bool,
}

/// Cap on the doubled upper bracket of [`solve_max_delta`].
pub const MAX_DELTA_CAP: f64 = 1024.0;

/// Largest common uncertainty radius with a finite-power design.
pub fn solve_max_delta(data: &ProblemData) -> Result<MaxDeltaOutcome> {
    let opts = DesignOptions {
        intersection: IntersectionMode::Conservative,
        ..DesignOptions::default()
    };
    solve_max_delta_with(data, 1e-4, &opts)
}

pub fn solve_max_delta_with(data: &ProblemData, tolerance: f64, opts: &DesignOptions) -> Result<MaxDeltaOutcome> {
    let mut prober = Prober {
        data,
        opts,
        probes: Vec::new(),
    };
    let mut probe = |rho: f64| prober.run(FixedParameter::Radius(rho), rho);
    let Some(d0) = probe(0.0)? else {
        return Ok(MaxDeltaOutcome {
            delta_max: 0.0,
            design: None,
            bracket: Bracket {
                feasible: 0.0,
                infeasible: 0.0,
                probes: prober.probes,
                converged: true,
            },
            capped: false,
        });
    };
    let mut feasible = (0.0, d0);
    let mut hi = 1.0;
    loop {
        match probe(hi)? {
            Some(d) if hi >= MAX_DELTA_CAP => {
                return Ok(MaxDeltaOutcome {
                    delta_max: hi,
                    design: Some(d),
                    bracket: Bracket {
                        feasible: hi,
                        infeasible: f64::INFINITY,
                        probes: prober.probes,
                        converged: false,
                    },
                    capped: true,
                });
            }
            Some(d) => {
                feasible = (hi, d);
                hi *= 2.0;
            }
            None => break,
        }
    }
    let cfg = BisectionConfig::new(feasible.0, hi)?.with_tolerance(tolerance)?;
    let (delta, design, infeasible, converged) = bisect(feasible, hi, &cfg, &mut probe)?;
    Ok(MaxDeltaOutcome {
        delta_max: delta,
        design: Some(design),
        bracket: Bracket {
            feasible: delta,
            infeasible,
            probes: prober.probes,
            converged,
        },
        capped: false,
    })
}

/// A precoding order and whether it came from a fallback rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    /// `order[i]` is the user precoded in position `i`.
    pub order: Vec<usize>,
    /// The estimate matrix was rank deficient; users were ordered by row norm.
    pub rank_deficient: bool,
}

/// Successive pseudo-inverse selection: positions are filled from the last
/// to the first, each time with the remaining user whose pseudo-inverse
/// column has the smallest norm.
pub fn order_blast(h: &ComplexMatrix) -> Ordering {
    let k = h.nrows();
    let full = h.as_dmatrix();
    let sv = full.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let rank_deficient = k > h.ncols() || sv.iter().any(|s| *s <= 1e-10 * smax.max(f64::MIN_POSITIVE));
    if rank_deficient {
        // Weakest first, strongest last, index order on ties.
        let norms: Vec<f64> = (0..k).map(|u| full.row(u).norm_squared()).collect();
        let order = (0..k)
            .sorted_by(|a, b| norms[*a].total_cmp(&norms[*b]).then(a.cmp(b)))
            .collect();
        return Ordering {
            order,
            rank_deficient,
        };
    }
    let mut remaining: Vec<usize> = (0..k).collect();
    let mut order = vec![0; k];
    for pos in (0..k).rev() {
        let sub = select_rows(h, &remaining);
        let pinv = sub
            .pseudo_inverse(1e-12)
            .expect("pseudo-inverse of a full-rank matrix");
        let (idx, _) = (0..remaining.len())
            .map(|c| (c, pinv.column(c).norm_squared()))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        order[pos] = remaining.remove(idx);
    }
    Ordering {
        order,
        rank_deficient: false,
    }
}

/// Sum of `gamma_u / SINR_pos` for `order` with `P = I`, where interference
/// from earlier positions is pre-subtracted.
pub fn weighted_order_cost(h: &ComplexMatrix, gamma: &[f64], sigma: &[f64], order: &[usize]) -> f64 {
    let nt = h.ncols();
    let entry = |u: usize, j: usize| if j < nt { h.get(u, j).norm_sqr() } else { 0.0 };
    order
        .iter()
        .enumerate()
        .map(|(pos, &u)| {
            let interference: f64 = (pos + 1..order.len()).map(|j| entry(u, j)).sum();
            let sinr = entry(u, pos) / (interference + sigma[u] * sigma[u]);
            if sinr > 0.0 {
                gamma[u] / sinr
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Largest user count accepted by [`order_weighted`].
pub const MAX_WEIGHTED_USERS: usize = 8;

/// Exhaustive minimiser of [`weighted_order_cost`]; the lexicographically
/// first ordering wins ties.
pub fn order_weighted(h: &ComplexMatrix, gamma: &[f64], sigma: &[f64]) -> Result<Vec<usize>> {
    let k = h.nrows();
    if k > MAX_WEIGHTED_USERS {
        return Err(Error::InvalidArgument(format!(
            "exhaustive ordering supports at most {MAX_WEIGHTED_USERS} users, got {k}"
        )));
    }
    if gamma.len() != k || sigma.len() != k {
        return Err(Error::Dimension("one requirement and noise level per user".into()));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..k).permutations(k) {
        let cost = weighted_order_cost(h, gamma, sigma, &perm);
        let better = match &best {
            None => true,
            Some((b, _)) => cost < *b && (b - cost) > 1e-12 * b.abs(),
        };
        if better {
            best = Some((cost, perm));
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_default())
}

fn select_rows(h: &ComplexMatrix, rows: &[usize]) -> DMatrix<Complex64> {
    let m = h.as_dmatrix();
    DMatrix::from_fn(rows.len(), h.ncols(), |r, c| m[(rows[r], c)])
}
