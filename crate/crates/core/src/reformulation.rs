//! Conic programs for the precoder design problems.
//!
//! Every user constraint is written in the `f = 1/g` parametrisation. With
//! `b~_k = b_k / g_k` the MSE constraint `MSE_k <= zeta_k` becomes the SOC
//!
//! ```text
//! || [ h_k P - f_k m_k - b~_k ,  sigma_k ] || <= sqrt(zeta_k) f_k
//! ```
//!
//! over the real embedding, which is affine in `(P, b~, f)` for a fixed
//! channel. Robust versions replace the channel by an ellipsoid (or an
//! intersection of ellipsoids) around the estimate and use the S-lemma LMI
//! of [`robust_soc_lmi`].
//!
//! THP orderings are handled by permuting users up front: programs and
//! recovered designs live in *position* space, where stream `i` serves user
//! `ordering[i]` and the feedback matrix is strictly lower in that order.

use nalgebra::DMatrix;

use crate::conic::{AffineExpr, ConeBlock, ConicProgram, PsdBlock, VarId};
use crate::embed::{embed_row, ComplexMatrix};
use crate::error::{Error, Result};
use crate::mse::{Design, QosTargets};
use crate::uncertainty::UncertaintyRegion;
use num_complex::Complex64;

/// Lower bound on `f_k = 1/g_k`.
pub const F_FLOOR: f64 = 1e-6;
/// Margin added to `sqrt(zeta)` in feasibility probes.
pub const FEASIBILITY_SLACK: f64 = 1e-7;
/// Default number of exact robust blocks before `Auto` turns conservative.
pub const DEFAULT_EXACT_BUDGET: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecodingMode {
    Linear,
    Thp,
}

/// How intersections of several ellipsoids are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntersectionMode {
    /// Exact robust counterpart. Box intersections are enforced at every
    /// vertex; other intersections are rejected.
    Exact,
    /// One LMI per user with summed multipliers. Never less conservative
    /// than `Exact`.
    Conservative,
    /// `Exact` when the number of exact robust blocks fits the budget and
    /// the intersection is supported, else `Conservative`.
    Auto { budget: usize },
}

impl Default for IntersectionMode {
    fn default() -> Self {
        IntersectionMode::Auto {
            budget: DEFAULT_EXACT_BUDGET,
        }
    }
}

/// Inputs shared by every design problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemData {
    estimates: ComplexMatrix,
    sigma: Vec<f64>,
    targets: QosTargets,
    regions: Vec<UncertaintyRegion>,
    mode: PrecodingMode,
    ordering: Vec<usize>,
}

impl ProblemData {
    /// `estimates` is `K x N_t`; region `k` must be centred on row `k`.
    pub fn new(
        estimates: ComplexMatrix,
        sigma: Vec<f64>,
        targets: QosTargets,
        regions: Vec<UncertaintyRegion>,
        mode: PrecodingMode,
    ) -> Result<Self> {
        let k = estimates.nrows();
        let nt = estimates.ncols();
        if sigma.len() != k || targets.len() != k || regions.len() != k {
            return Err(Error::Dimension(format!(
                "{k} users but {} noise levels, {} targets, {} regions",
                sigma.len(),
                targets.len(),
                regions.len()
            )));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("noise levels must be positive".into()));
        }
        for (u, r) in regions.iter().enumerate() {
            if r.antennas() != nt {
                return Err(Error::Dimension(format!("region {u} has {} antennas, expected {nt}", r.antennas())));
            }
            let c = embed_row(&estimates.row(u));
            if (c.as_vector() - r.center().as_vector()).amax() > 1e-12 {
                return Err(Error::InvalidRegion(format!("region {u} is not centred on its estimate")));
            }
        }
        Ok(Self {
            estimates,
            sigma,
            targets,
            regions,
            mode,
            ordering: (0..k).collect(),
        })
    }

    /// Spheres of a common radius around every estimate.
    pub fn spherical(
        estimates: ComplexMatrix,
        sigma: Vec<f64>,
        targets: QosTargets,
        delta: f64,
        mode: PrecodingMode,
    ) -> Result<Self> {
        let regions = (0..estimates.nrows())
            .map(|u| UncertaintyRegion::spherical(embed_row(&estimates.row(u)), delta))
            .collect::<Result<Vec<_>>>()?;
        Self::new(estimates, sigma, targets, regions, mode)
    }

    /// Boxes with the same halfwidth on every real coordinate.
    pub fn interval(
        estimates: ComplexMatrix,
        sigma: Vec<f64>,
        targets: QosTargets,
        halfwidth: f64,
        mode: PrecodingMode,
    ) -> Result<Self> {
        let n = 2 * estimates.ncols();
        let regions = (0..estimates.nrows())
            .map(|u| UncertaintyRegion::interval(embed_row(&estimates.row(u)), &vec![halfwidth; n]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(estimates, sigma, targets, regions, mode)
    }

    /// Sets the THP precoding order: `ordering[i]` is the user in position `i`.
    pub fn with_ordering(mut self, ordering: Vec<usize>) -> Result<Self> {
        let k = self.users();
        let mut seen = vec![false; k];
        if ordering.len() != k || ordering.iter().any(|&u| u >= k || std::mem::replace(&mut seen[u], true)) {
            return Err(Error::InvalidArgument(format!("{ordering:?} is not a permutation of 0..{k}")));
        }
        self.ordering = ordering;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: PrecodingMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_targets(mut self, targets: QosTargets) -> Result<Self> {
        if targets.len() != self.users() {
            return Err(Error::Dimension("target count mismatch".into()));
        }
        self.targets = targets;
        Ok(self)
    }

    /// Every region rescaled to the common radius `radius`.
    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        self.regions = self
            .regions
            .iter()
            .map(|r| r.with_radius(radius))
            .collect::<Result<Vec<_>>>()?;
        Ok(self)
    }

    pub fn users(&self) -> usize {
        self.estimates.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.estimates.ncols()
    }

    pub fn estimates(&self) -> &ComplexMatrix {
        &self.estimates
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn targets(&self) -> &QosTargets {
        &self.targets
    }

    pub fn regions(&self) -> &[UncertaintyRegion] {
        &self.regions
    }

    pub fn mode(&self) -> PrecodingMode {
        self.mode
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// The same problem with users relabelled so the ordering is the identity.
    pub fn ordered(&self) -> ProblemData {
        let o = &self.ordering;
        ProblemData {
            estimates: self.estimates.permute_rows(o),
            sigma: o.iter().map(|&u| self.sigma[u]).collect(),
            targets: self.targets.permuted(o),
            regions: o.iter().map(|&u| self.regions[u].clone()).collect(),
            mode: self.mode,
            ordering: (0..o.len()).collect(),
        }
    }

    fn has_uncertainty(&self) -> bool {
        self.regions.iter().any(|r| r.radius() > 0.0)
    }
}

/// Conic variables of a design program.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    nt: usize,
    k: usize,
    /// Epigraph of `||vec P||` (power minimisation only).
    pub t: Option<VarId>,
    p_re: Vec<VarId>,
    p_im: Vec<VarId>,
    /// Per position `k`, `(Re, Im)` of `b~_{k,j}` for `j < k`; empty in linear mode.
    b: Vec<Vec<(VarId, VarId)>>,
    f: Vec<VarId>,
    /// Multipliers per position.
    pub mu: Vec<Vec<VarId>>,
}

impl VariableLayout {
    fn declare(program: &mut ConicProgram, nt: usize, k: usize, mode: PrecodingMode) -> Self {
        let mut p_re = Vec::with_capacity(nt * k);
        let mut p_im = Vec::with_capacity(nt * k);
        for i in 0..nt {
            for j in 0..k {
                p_re.push(program.add_var(format!("P_re[{i},{j}]")));
                p_im.push(program.add_var(format!("P_im[{i},{j}]")));
            }
        }
        let b = (0..k)
            .map(|row| match mode {
                PrecodingMode::Linear => Vec::new(),
                PrecodingMode::Thp => (0..row)
                    .map(|j| {
                        (
                            program.add_var(format!("b_re[{row},{j}]")),
                            program.add_var(format!("b_im[{row},{j}]")),
                        )
                    })
                    .collect(),
            })
            .collect();
        let f = (0..k).map(|u| program.add_var(format!("f[{u}]"))).collect();
        Self {
            nt,
            k,
            t: None,
            p_re,
            p_im,
            b,
            f,
            mu: vec![Vec::new(); k],
        }
    }

    pub fn f(&self, k: usize) -> VarId {
        self.f[k]
    }

    /// Every design variable: `P`, `b~` and `f`, in declaration order.
    pub fn design_vars(&self) -> Vec<VarId> {
        let mut v: Vec<VarId> = self.p_re.iter().zip(&self.p_im).flat_map(|(a, b)| [*a, *b]).collect();
        v.extend(self.b.iter().flatten().flat_map(|(a, b)| [*a, *b]));
        v.extend(&self.f);
        v
    }

    pub fn p_re(&self, i: usize, j: usize) -> VarId {
        self.p_re[i * self.k + j]
    }

    pub fn p_im(&self, i: usize, j: usize) -> VarId {
        self.p_im[i * self.k + j]
    }

    /// Entry `(r, c)` of the `2N_t x 2K` embedded precoder. Tied blocks share variables.
    pub fn embedded_p(&self, r: usize, c: usize) -> AffineExpr {
        let (nt, k) = (self.nt, self.k);
        match (r < nt, c < k) {
            (true, true) => AffineExpr::var(self.p_re(r, c)),
            (true, false) => AffineExpr::var(self.p_im(r, c - k)),
            (false, true) => -AffineExpr::var(self.p_im(r - nt, c)),
            (false, false) => AffineExpr::var(self.p_re(r - nt, c - k)),
        }
    }

    /// `x P` for a real row `x` of length `2 N_t`.
    pub fn row_times_p(&self, x: &[f64]) -> Vec<AffineExpr> {
        (0..2 * self.k)
            .map(|c| {
                let mut e = AffineExpr::zero();
                for (r, &xr) in x.iter().enumerate() {
                    if xr != 0.0 {
                        e += &(self.embedded_p(r, c) * xr);
                    }
                }
                e
            })
            .collect()
    }

    /// `[h P - f_k m_k - b~_k, sigma]`: the nominal SOC argument of position `k`.
    fn error_row(&self, k: usize, h: &[f64], sigma: f64) -> Vec<AffineExpr> {
        let mut row = self.row_times_p(h);
        row[k] = row[k].clone() - AffineExpr::var(self.f[k]);
        for (j, &(re, im)) in self.b[k].iter().enumerate() {
            row[j] = row[j].clone() - AffineExpr::var(re);
            row[self.k + j] = row[self.k + j].clone() - AffineExpr::var(im);
        }
        row.push(AffineExpr::constant(sigma));
        row
    }

    /// `||vec P||` argument with the factor `sqrt(2)` for the tied copies.
    fn power_entries(&self) -> Vec<AffineExpr> {
        let s = std::f64::consts::SQRT_2;
        self.p_re
            .iter()
            .chain(&self.p_im)
            .map(|&v| AffineExpr::term(v, s))
            .collect()
    }

    /// `tr(P^H P)` at `point`.
    pub fn power(&self, point: &[f64]) -> f64 {
        self.p_re.iter().chain(&self.p_im).map(|v| point[v.0].powi(2)).sum()
    }

    /// Design in position space: `g = 1/f`, `b = g b~`.
    pub fn recover(&self, point: &[f64]) -> Result<Design> {
        let (nt, k) = (self.nt, self.k);
        let mut p = Vec::with_capacity(nt * k);
        for i in 0..nt {
            for j in 0..k {
                p.push(Complex64::new(point[self.p_re(i, j).0], point[self.p_im(i, j).0]));
            }
        }
        let precoder = ComplexMatrix::from_row_slice(nt, k, &p)?;
        let gains: Vec<f64> = self.f.iter().map(|v| 1.0 / point[v.0]).collect();
        if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidDesign("recovered receiver gain is not positive".into()));
        }
        let mut fb = vec![Complex64::new(0.0, 0.0); k * k];
        for (row, entries) in self.b.iter().enumerate() {
            for (j, &(re, im)) in entries.iter().enumerate() {
                fb[row * k + j] = Complex64::new(point[re.0], point[im.0]) * gains[row];
            }
        }
        Design::new(precoder, ComplexMatrix::from_row_slice(k, k, &fb)?, gains)
    }
}

/// A program together with the meaning of its variables.
#[derive(Debug, Clone)]
pub struct Formulation {
    pub program: ConicProgram,
    pub layout: VariableLayout,
    /// Intersection handling actually used.
    pub intersection: IntersectionMode,
}

/// A SOC `||nominal + sum_j w_j directions[j]|| <= bound + sum_j w_j bound_directions[j]`
/// that must hold for every admissible coordinate vector `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainSoc {
    pub bound: AffineExpr,
    pub nominal: Vec<AffineExpr>,
    pub directions: Vec<Vec<AffineExpr>>,
    /// Perturbation of the bound; only the zero perturbation is supported.
    pub bound_directions: Vec<AffineExpr>,
}

/// How multipliers combine when the region has several members.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierMode {
    /// One LMI, `y - sum mu^l` and `sum mu^l Q^l`. Exact for one member,
    /// a safe restriction for intersections.
    Summed,
    /// One LMI per member, each with its own multiplier. This makes the SOC
    /// hold on every member separately, i.e. on their union.
    PerMember,
}

/// Adds the S-lemma LMI(s) enforcing `soc` for every `w` with
/// `w^T Q^l w <= radius^2` for all `l`. Returns the multipliers.
///
/// Block layout (order `1 + J + n`):
///
/// ```text
/// [ y - sum mu     0                a0^T      ]
/// [ 0              sum mu Q         radius D  ]
/// [ a0             radius D^T       y I       ]
/// ```
///
/// where `D` stacks the direction rows.
pub fn robust_soc_lmi(
    program: &mut ConicProgram,
    soc: &UncertainSoc,
    shapes: &[DMatrix<f64>],
    radius: f64,
    mode: MultiplierMode,
    label: &str,
) -> Result<Vec<VarId>> {
    if soc.bound_directions.iter().any(|e| *e != AffineExpr::zero()) {
        return Err(Error::UncertainBound);
    }
    let j = soc.directions.len();
    let n = soc.nominal.len();
    if shapes.is_empty() || shapes.iter().any(|q| q.nrows() != j || q.ncols() != j) {
        return Err(Error::Dimension(format!("shape matrices must be {j}x{j}")));
    }
    if soc.directions.iter().any(|d| d.len() != n) {
        return Err(Error::Dimension("direction rows must match the nominal length".into()));
    }
    let mut mus = Vec::with_capacity(shapes.len());
    let groups: Vec<Vec<usize>> = match mode {
        MultiplierMode::Summed => vec![(0..shapes.len()).collect()],
        MultiplierMode::PerMember => (0..shapes.len()).map(|l| vec![l]).collect(),
    };
    for group in groups {
        let ids: Vec<VarId> = group
            .iter()
            .map(|l| program.add_var(format!("mu[{label},{l}]")))
            .collect();
        let mut m = PsdBlock::new(1 + j + n);
        let mut corner = soc.bound.clone();
        for &v in &ids {
            corner = corner - AffineExpr::var(v);
        }
        m.set(0, 0, corner);
        for a in 0..j {
            for b in 0..=a {
                let mut e = AffineExpr::zero();
                for (&l, &v) in group.iter().zip(&ids) {
                    e.add_term(v, shapes[l][(a, b)]);
                }
                m.set(1 + a, 1 + b, e);
            }
        }
        for i in 0..n {
            m.set(1 + j + i, 0, soc.nominal[i].clone());
            for a in 0..j {
                m.set(1 + j + i, 1 + a, soc.directions[a][i].clone() * radius);
            }
            m.set(1 + j + i, 1 + j + i, soc.bound.clone());
        }
        program.add_block(ConeBlock::Psd(m))?;
        program.add_block(ConeBlock::Nonnegative(ids.iter().map(|&v| AffineExpr::var(v)).collect()))?;
        mus.extend(ids);
    }
    Ok(mus)
}

/// Enforces `soc` at every vertex of the box `|w_j| <= halfwidths[j]`.
fn vertex_socs(program: &mut ConicProgram, soc: &UncertainSoc, halfwidths: &[f64]) -> Result<()> {
    let j = halfwidths.len();
    for mask in 0u64..(1u64 << j) {
        let mut arg = soc.nominal.clone();
        for (a, c) in halfwidths.iter().enumerate() {
            let w = if mask >> a & 1 == 1 { *c } else { -*c };
            for (e, d) in arg.iter_mut().zip(&soc.directions[a]) {
                *e += &(d.clone() * w);
            }
        }
        let mut cone = vec![soc.bound.clone()];
        cone.extend(arg);
        program.add_block(ConeBlock::SecondOrder(cone))?;
    }
    Ok(())
}

/// Largest number of box coordinates expanded into vertices.
const MAX_VERTEX_DIRECTIONS: usize = 20;

fn exact_blocks(region: &UncertaintyRegion) -> Option<usize> {
    if region.radius() == 0.0 || region.members() == 1 {
        return Some(1);
    }
    let j = region.box_halfwidths()?.len();
    (j <= MAX_VERTEX_DIRECTIONS).then(|| 1usize << j)
}

/// Parameter held fixed in a feasibility probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedParameter {
    /// Common uncertainty radius.
    Radius(f64),
    /// Common MSE level `zeta0 = sqrt_zeta0^2` under a power cap.
    Minimax { sqrt_zeta0: f64, p_total: f64 },
}

enum Objective {
    Power,
    Feasibility { power_cap: Option<f64> },
}

enum Robustness {
    Nominal,
    Robust(IntersectionMode),
    Union,
}

fn build(
    data: &ProblemData,
    sqrt_zeta: &[f64],
    objective: Objective,
    robustness: Robustness,
) -> Result<Formulation> {
    let data = data.ordered();
    let (nt, k) = (data.antennas(), data.users());
    let mut program = ConicProgram::new();
    let mut layout = VariableLayout::declare(&mut program, nt, k, data.mode);

    let mut used = match robustness {
        Robustness::Robust(mode) => mode,
        _ => IntersectionMode::Exact,
    };
    if let Robustness::Robust(IntersectionMode::Auto { budget }) = robustness {
        let exact: Option<usize> = data
            .regions
            .iter()
            .map(exact_blocks)
            .try_fold(0usize, |acc, b| b.map(|b| acc.saturating_add(b)));
        used = match exact {
            Some(n) if n <= budget => IntersectionMode::Exact,
            _ => IntersectionMode::Conservative,
        };
    }

    match objective {
        Objective::Power => {
            let t = program.add_var("t");
            layout.t = Some(t);
            program.set_objective(AffineExpr::var(t))?;
            let mut cone = vec![AffineExpr::var(t)];
            cone.extend(layout.power_entries());
            program.add_block(ConeBlock::SecondOrder(cone))?;
        }
        Objective::Feasibility { power_cap } => {
            if let Some(cap) = power_cap {
                let mut cone = vec![AffineExpr::constant((2.0 * cap).sqrt())];
                cone.extend(layout.power_entries());
                program.add_block(ConeBlock::SecondOrder(cone))?;
            }
        }
    }
    program.add_block(ConeBlock::Nonnegative(
        layout.f.iter().map(|&v| AffineExpr::var(v) - F_FLOOR.into()).collect(),
    ))?;

    for u in 0..k {
        let region = &data.regions[u];
        let bound = AffineExpr::term(layout.f[u], sqrt_zeta[u]);
        let nominal = layout.error_row(u, region.center().as_slice(), data.sigma[u]);
        let certain = matches!(robustness, Robustness::Nominal) || region.radius() == 0.0;
        if certain {
            let mut cone = vec![bound];
            cone.extend(nominal);
            program.add_block(ConeBlock::SecondOrder(cone))?;
            continue;
        }
        let basis = region.basis();
        let directions: Vec<Vec<AffineExpr>> = (0..basis.nrows())
            .map(|a| {
                let phi: Vec<f64> = basis.row(a).iter().copied().collect();
                let mut d = layout.row_times_p(&phi);
                d.push(AffineExpr::zero());
                d
            })
            .collect();
        let soc = UncertainSoc {
            bound,
            nominal,
            bound_directions: Vec::new(),
            directions,
        };
        let shapes: Vec<DMatrix<f64>> = region.sets().iter().map(|e| e.shape.clone()).collect();
        let label = format!("{u}");
        match robustness {
            Robustness::Union => {
                layout.mu[u] = robust_soc_lmi(
                    &mut program,
                    &soc,
                    &shapes,
                    region.radius(),
                    MultiplierMode::PerMember,
                    &label,
                )?;
            }
            _ if region.members() == 1 || used == IntersectionMode::Conservative => {
                layout.mu[u] = robust_soc_lmi(
                    &mut program,
                    &soc,
                    &shapes,
                    region.radius(),
                    MultiplierMode::Summed,
                    &label,
                )?;
            }
            _ => {
                let halfwidths = region.box_halfwidths().ok_or_else(|| {
                    Error::ExactUnsupported(format!(
                        "user {u}: exact robust counterpart is only available for boxes"
                    ))
                })?;
                if halfwidths.len() > MAX_VERTEX_DIRECTIONS {
                    return Err(Error::ExactUnsupported(format!(
                        "user {u}: {} box directions exceed the vertex limit",
                        halfwidths.len()
                    )));
                }
                vertex_socs(&mut program, &soc, &halfwidths)?;
            }
        }
    }
    Ok(Formulation {
        program,
        layout,
        intersection: used,
    })
}

fn sqrt_targets(data: &ProblemData) -> Vec<f64> {
    data.ordered().targets.zeta().iter().map(|z| z.sqrt()).collect()
}

/// Power minimisation with the estimates taken as exact.
pub fn build_perfect_csi(data: &ProblemData) -> Result<Formulation> {
    build(data, &sqrt_targets(data), Objective::Power, Robustness::Nominal)
}

/// Power minimisation robust to every channel in each region.
pub fn build_robust(data: &ProblemData, intersection: IntersectionMode) -> Result<Formulation> {
    build(data, &sqrt_targets(data), Objective::Power, Robustness::Robust(intersection))
}

/// Exact robust counterpart (S-lemma LMI for one ellipsoid, vertex SOCs for boxes).
pub fn build_robust_exact(data: &ProblemData) -> Result<Formulation> {
    build_robust(data, IntersectionMode::Exact)
}

/// Summed-multiplier LMI per user.
pub fn build_robust_conservative(data: &ProblemData) -> Result<Formulation> {
    build_robust(data, IntersectionMode::Conservative)
}

/// One LMI per member set and user, each with its own multiplier.
///
/// Robust over the union of the members rather than their intersection,
/// so it is at least as restrictive as [`build_robust_conservative`].
pub fn build_robust_per_member(data: &ProblemData) -> Result<Formulation> {
    build(data, &sqrt_targets(data), Objective::Power, Robustness::Union)
}

/// Zero-objective probe with `fixed` substituted. Targets are relaxed by
/// [`FEASIBILITY_SLACK`] on `sqrt(zeta)`.
pub fn build_feasibility_fixed(
    data: &ProblemData,
    fixed: FixedParameter,
    intersection: IntersectionMode,
) -> Result<Formulation> {
    match fixed {
        FixedParameter::Radius(rho) => {
            if !(rho.is_finite() && rho >= 0.0) {
                return Err(Error::InvalidArgument(format!("radius must be >= 0, got {rho}")));
            }
            let probe = data.clone().with_radius(rho)?;
            let sz: Vec<f64> = sqrt_targets(&probe).iter().map(|s| s + FEASIBILITY_SLACK).collect();
            let robustness = if probe.has_uncertainty() {
                Robustness::Robust(intersection)
            } else {
                Robustness::Nominal
            };
            build(&probe, &sz, Objective::Feasibility { power_cap: None }, robustness)
        }
        FixedParameter::Minimax { sqrt_zeta0, p_total } => {
            if !(sqrt_zeta0.is_finite() && sqrt_zeta0 >= 0.0 && p_total.is_finite() && p_total >= 0.0) {
                return Err(Error::InvalidArgument("minimax parameters must be >= 0".into()));
            }
            let sz = vec![sqrt_zeta0 + FEASIBILITY_SLACK; data.users()];
            build(
                data,
                &sz,
                Objective::Feasibility {
                    power_cap: Some(p_total),
                },
                Robustness::Robust(intersection),
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{check_solution, solve, ConeKind, SolveStatus, Tolerances};
    use crate::mse::mse;
    use crate::uncertainty::OracleConfig;
    use crate::uncertainty::WorstCaseOracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn scalar_data(h: f64, sigma: f64, zeta: f64, delta: f64) -> ProblemData {
        let est = ComplexMatrix::from_row_slice(1, 1, &[Complex64::new(h, 0.0)]).unwrap();
        ProblemData::spherical(
            est,
            vec![sigma],
            QosTargets::from_mse(vec![zeta]).unwrap(),
            delta,
            PrecodingMode::Linear,
        )
        .unwrap()
    }

    fn rayleigh(rng: &mut ChaCha8Rng, k: usize, nt: usize) -> ComplexMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e: Vec<Complex64> = (0..k * nt)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * s, im * s)
            })
            .collect();
        ComplexMatrix::from_row_slice(k, nt, &e).unwrap()
    }

    fn instance(seed: u64, delta: f64, gamma_db: f64, mode: PrecodingMode) -> ProblemData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = rayleigh(&mut rng, 3, 3);
        ProblemData::spherical(est, vec![1.0; 3], QosTargets::uniform_sinr_db(gamma_db, 3).unwrap(), delta, mode)
            .unwrap()
    }

    fn power_of(f: &Formulation) -> Option<f64> {
        let r = solve(&f.program, &Tolerances::default());
        (r.status == SolveStatus::Optimal).then(|| f.layout.power(&r.point))
    }

    /// Scalar MMSE: min p^2 s.t. min_g (g p - 1)^2 + g^2 <= zeta.
    fn scalar_grid_power(zeta: f64) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=4000 {
            let p = i as f64 * 1e-3;
            // MSE minimised over g at g = p / (p^2 + 1).
            let m = 1.0 / (1.0 + p * p);
            if m <= zeta + 1e-12 {
                best = best.min(p * p);
            }
        }
        best
    }

    #[test]
    fn scalar_perfect_csi_matches_grid() {
        let f = build_perfect_csi(&scalar_data(1.0, 1.0, 0.5, 0.0)).unwrap();
        let r = solve(&f.program, &Tolerances::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        let power = f.layout.power(&r.point);
        assert!((power - scalar_grid_power(0.5)).abs() < 2e-3, "{power}");
        assert!((power - 1.0).abs() < 1e-6);
        let d = f.layout.recover(&r.point).unwrap();
        let m = mse(&d, 0, &[Complex64::new(1.0, 0.0)], 1.0);
        assert!((m - 0.5).abs() < 1e-6, "{m}");
        // Power bookkeeping: t^2 / 2.
        let t = r.value(f.layout.t.unwrap());
        assert!((t * t / 2.0 - power).abs() < 1e-6);
    }

    #[test]
    fn vacuous_targets_need_no_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = rayleigh(&mut rng, 2, 2);
        let data = ProblemData::spherical(
            est,
            vec![1.0; 2],
            QosTargets::from_mse(vec![1.0; 2]).unwrap(),
            0.0,
            PrecodingMode::Linear,
        )
        .unwrap();
        let f = build_perfect_csi(&data).unwrap();
        let r = solve(&f.program, &Tolerances::default());
        assert!(matches!(r.status, SolveStatus::Optimal | SolveStatus::Inaccurate));
        assert!(f.layout.power(&r.point) <= 1e-6);
    }

    #[test]
    fn spherical_lmi_order() {
        let f = build_robust_exact(&instance(2, 0.05, 6.0, PrecodingMode::Linear)).unwrap();
        let orders: Vec<usize> = f
            .program
            .blocks()
            .iter()
            .filter_map(|b| match b {
                ConeBlock::Psd(p) => Some(p.order()),
                _ => None,
            })
            .collect();
        assert_eq!(orders, vec![14; 3]);
    }

    #[test]
    fn embedded_precoder_ties_share_variables() {
        let mut p = ConicProgram::new();
        let l = VariableLayout::declare(&mut p, 2, 3, PrecodingMode::Thp);
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(l.embedded_p(r, c), l.embedded_p(r + 2, c + 3));
                assert_eq!(l.embedded_p(r, c + 3), -l.embedded_p(r + 2, c));
            }
        }
        assert_eq!(l.b.iter().map(Vec::len).collect::<Vec<_>>(), vec![0, 1, 2]);
        let mut q = ConicProgram::new();
        let lin = VariableLayout::declare(&mut q, 2, 3, PrecodingMode::Linear);
        assert!(lin.b.iter().all(Vec::is_empty));
    }

    #[test]
    fn zero_radius_lmi_agrees_with_nominal_soc() {
        // Explicit LMI at radius 0 against the perfect-CSI verdict.
        for seed in 0..20 {
            let gamma = if seed % 2 == 0 { 6.0 } else { 25.0 };
            let data = instance(seed, 0.0, gamma, PrecodingMode::Linear);
            let nominal = build_perfect_csi(&data).unwrap();
            let mut lmi = nominal.clone();
            // Rebuild user constraints as LMIs with zero radius.
            let mut p = ConicProgram::new();
            let mut layout = VariableLayout::declare(&mut p, 3, 3, PrecodingMode::Linear);
            let t = p.add_var("t");
            layout.t = Some(t);
            p.set_objective(AffineExpr::var(t)).unwrap();
            let mut cone = vec![AffineExpr::var(t)];
            cone.extend(layout.power_entries());
            p.add_block(ConeBlock::SecondOrder(cone)).unwrap();
            p.add_block(ConeBlock::Nonnegative(
                layout.f.iter().map(|&v| AffineExpr::var(v) - F_FLOOR.into()).collect(),
            ))
            .unwrap();
            for u in 0..3 {
                let region = &data.regions()[u];
                let soc = UncertainSoc {
                    bound: AffineExpr::term(layout.f[u], data.targets().zeta()[u].sqrt()),
                    nominal: layout.error_row(u, region.center().as_slice(), 1.0),
                    directions: (0..6)
                        .map(|a| {
                            let mut e = vec![0.0; 6];
                            e[a] = 1.0;
                            let mut d = layout.row_times_p(&e);
                            d.push(AffineExpr::zero());
                            d
                        })
                        .collect(),
                    bound_directions: Vec::new(),
                };
                robust_soc_lmi(&mut p, &soc, &[DMatrix::identity(6, 6)], 0.0, MultiplierMode::Summed, "u")
                    .unwrap();
            }
            lmi.program = p;
            lmi.layout = layout;
            let a = solve(&nominal.program, &Tolerances::default());
            let b = solve(&lmi.program, &Tolerances::default());
            assert_eq!(a.status == SolveStatus::Optimal, b.status == SolveStatus::Optimal, "seed {seed}");
            if a.status == SolveStatus::Optimal {
                assert!((a.objective - b.objective).abs() <= 1e-5 * a.objective.max(1e-3));
            }
        }
    }

    #[test]
    fn uncertain_bound_is_rejected() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        let soc = UncertainSoc {
            bound: AffineExpr::var(x),
            nominal: vec![AffineExpr::constant(1.0)],
            directions: vec![vec![AffineExpr::constant(1.0)]],
            bound_directions: vec![AffineExpr::constant(0.5)],
        };
        let err = robust_soc_lmi(&mut p, &soc, &[DMatrix::identity(1, 1)], 1.0, MultiplierMode::Summed, "x");
        assert_eq!(err, Err(Error::UncertainBound));
    }

    #[test]
    fn region_containing_zero_channel_is_infeasible() {
        let data = scalar_data(1.0, 1.0, 0.9, 1.0);
        let r = solve(&build_robust_exact(&data).unwrap().program, &Tolerances::default());
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn zero_radius_robust_matches_perfect_csi() {
        let data = instance(5, 0.0, 6.0, PrecodingMode::Linear);
        let a = power_of(&build_perfect_csi(&data).unwrap()).unwrap();
        let b = power_of(&build_robust_exact(&data).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-5 * a);
    }

    #[test]
    fn robust_design_passes_oracle() {
        let data = instance(7, 0.05, 6.0, PrecodingMode::Thp);
        let f = build_robust_exact(&data).unwrap();
        let r = solve(&f.program, &Tolerances::default());
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(check_solution(&f.program, &r.point).passes(1e-6));
        let d = f.layout.recover(&r.point).unwrap();
        let oracle = WorstCaseOracle::new(OracleConfig::default());
        for u in 0..3 {
            let wc = oracle.evaluate(&d, u, &data.regions()[u], 1.0).mse;
            assert!(wc <= data.targets().zeta()[u] + 1e-6, "user {u}: {wc}");
        }
    }

    #[test]
    fn single_member_conservative_equals_exact() {
        let data = instance(3, 0.05, 6.0, PrecodingMode::Linear);
        let a = build_robust_exact(&data).unwrap();
        let b = build_robust_conservative(&data).unwrap();
        assert_eq!(a.program, b.program);
    }

    fn interval_instance(seed: u64, halfwidth: f64) -> ProblemData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = rayleigh(&mut rng, 2, 2);
        ProblemData::interval(
            est,
            vec![1.0; 2],
            QosTargets::uniform_sinr_db(3.0, 2).unwrap(),
            halfwidth,
            PrecodingMode::Linear,
        )
        .unwrap()
    }

    #[test]
    fn interval_ordering_of_formulations() {
        let data = interval_instance(11, 0.03);
        let perfect = power_of(&build_perfect_csi(&data).unwrap()).unwrap();
        let exact = build_robust_exact(&data).unwrap();
        assert_eq!(exact.program.count(ConeKind::SecondOrder), 1 + 2 * 16);
        let exact = power_of(&exact).unwrap();
        let conservative = power_of(&build_robust_conservative(&data).unwrap()).unwrap();
        assert!(perfect <= exact + 1e-7 && exact <= conservative + 1e-7, "{perfect} {exact} {conservative}");
        // Per-member LMIs protect each slab, which pins P to zero.
        let union = solve(&build_robust_per_member(&data).unwrap().program, &Tolerances::default());
        assert_eq!(union.status, SolveStatus::Infeasible);
    }

    #[test]
    fn auto_mode_respects_budget() {
        let data = interval_instance(4, 0.03);
        let small = build_robust(&data, IntersectionMode::Auto { budget: 31 }).unwrap();
        assert_eq!(small.intersection, IntersectionMode::Conservative);
        let big = build_robust(&data, IntersectionMode::Auto { budget: 32 }).unwrap();
        assert_eq!(big.intersection, IntersectionMode::Exact);
    }

    #[test]
    fn minimax_probe_at_one_is_feasible() {
        let data = instance(9, 0.05, 6.0, PrecodingMode::Linear);
        let fixed = FixedParameter::Minimax {
            sqrt_zeta0: 1.0,
            p_total: 1.0,
        };
        let f = build_feasibility_fixed(&data, fixed, IntersectionMode::default()).unwrap();
        assert_eq!(*f.program.objective(), AffineExpr::zero());
        assert_eq!(solve(&f.program, &Tolerances::default()).status, SolveStatus::Optimal);
    }

    #[test]
    fn radius_probe_nested() {
        let data = instance(12, 0.0, 6.0, PrecodingMode::Thp);
        let mut last = true;
        for i in 0..8 {
            let rho = 0.05 * i as f64;
            let f = build_feasibility_fixed(&data, FixedParameter::Radius(rho), IntersectionMode::default()).unwrap();
            let ok = solve(&f.program, &Tolerances::default()).status == SolveStatus::Optimal;
            assert!(last || !ok, "feasible again at {rho}");
            last = ok;
            if i == 0 {
                assert!(ok);
            }
        }
    }

    #[test]
    fn ordering_is_a_relabelling() {
        let data = instance(13, 0.05, 6.0, PrecodingMode::Thp);
        let perm = vec![2, 0, 1];
        let a = power_of(&build_robust_exact(&data.clone().with_ordering(perm.clone()).unwrap()).unwrap()).unwrap();
        let permuted = ProblemData::spherical(
            data.estimates().permute_rows(&perm),
            vec![1.0; 3],
            data.targets().permuted(&perm),
            0.05,
            PrecodingMode::Thp,
        )
        .unwrap();
        let b = power_of(&build_robust_exact(&permuted).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        assert!(data.clone().with_ordering(vec![0, 0, 1]).is_err());
    }
}
