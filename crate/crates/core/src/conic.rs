//! Solver-agnostic conic programs.
//!
//! A [`ConicProgram`] minimises a linear objective over named scalar
//! variables subject to cone blocks, each an affine map into the zero cone,
//! the nonnegative orthant, a second-order cone or the PSD cone. PSD blocks
//! store only the lower triangle (`row >= col`), so symmetry is structural.
//!
//! [`solve`] dispatches to a [`ConicSolver`]; the default backend is the
//! Clarabel interior-point solver. [`check_solution`] recomputes every cone
//! membership from the program alone and never consults the solver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::Once;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// `constant + sum coef * x[var]`, terms sorted by variable and merged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    constant: f64,
    terms: Vec<(VarId, f64)>,
}

impl AffineExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn var(v: VarId) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: VarId, coef: f64) -> Self {
        let mut e = Self::zero();
        e.add_term(v, coef);
        e
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        if coef == 0.0 {
            return;
        }
        match self.terms.binary_search_by_key(&v, |(id, _)| *id) {
            Ok(i) => {
                self.terms[i].1 += coef;
                if self.terms[i].1 == 0.0 {
                    self.terms.remove(i);
                }
            }
            Err(i) => self.terms.insert(i, (v, coef)),
        }
    }

    pub fn constant_part(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.terms
    }

    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, (v, c)| acc + c * x[v.0])
    }

    /// Replaces every variable found in `values` by its value.
    pub fn substitute(&self, values: &BTreeMap<VarId, f64>) -> AffineExpr {
        let mut out = AffineExpr::constant(self.constant);
        for &(v, c) in &self.terms {
            match values.get(&v) {
                Some(x) => out.constant += c * x,
                None => out.add_term(v, c),
            }
        }
        out
    }
}

impl From<f64> for AffineExpr {
    fn from(c: f64) -> Self {
        Self::constant(c)
    }
}

impl From<VarId> for AffineExpr {
    fn from(v: VarId) -> Self {
        Self::var(v)
    }
}

impl AddAssign<&AffineExpr> for AffineExpr {
    fn add_assign(&mut self, rhs: &AffineExpr) {
        self.constant += rhs.constant;
        for (v, c) in &rhs.terms {
            self.add_term(*v, *c);
        }
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;
    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        self += &rhs;
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;
    fn sub(mut self, rhs: AffineExpr) -> AffineExpr {
        self += &(-rhs);
        self
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;
    fn neg(self) -> AffineExpr {
        self * -1.0
    }
}

impl Mul<f64> for AffineExpr {
    type Output = AffineExpr;
    fn mul(mut self, s: f64) -> AffineExpr {
        if s == 0.0 {
            return AffineExpr::zero();
        }
        self.constant *= s;
        for t in &mut self.terms {
            t.1 *= s;
        }
        self
    }
}

/// Symmetric matrix affine in the variables, stored by `(row, col)` with `row >= col`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdBlock {
    order: usize,
    entries: BTreeMap<(usize, usize), AffineExpr>,
}

impl PsdBlock {
    pub fn new(order: usize) -> Self {
        assert!(order > 0, "PSD block order must be positive");
        Self {
            order,
            entries: BTreeMap::new(),
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Sets entry `(row, col)` and, implicitly, `(col, row)`.
    pub fn set(&mut self, row: usize, col: usize, expr: AffineExpr) {
        assert!(row < self.order && col < self.order, "entry outside block");
        let key = (row.max(col), row.min(col));
        if expr == AffineExpr::zero() {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, expr);
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<&AffineExpr> {
        self.entries.get(&(row.max(col), row.min(col)))
    }

    /// Stored lower-triangle entries.
    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize), &AffineExpr)> {
        self.entries.iter()
    }

    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.order, self.order);
        for (&(r, c), e) in &self.entries {
            let v = e.eval(x);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    Zero,
    Nonnegative,
    SecondOrder,
    Psd,
}

impl ConeKind {
    fn token(self) -> &'static str {
        match self {
            ConeKind::Zero => "zero",
            ConeKind::Nonnegative => "nonneg",
            ConeKind::SecondOrder => "soc",
            ConeKind::Psd => "psd",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "zero" => ConeKind::Zero,
            "nonneg" => ConeKind::Nonnegative,
            "soc" => ConeKind::SecondOrder,
            "psd" => ConeKind::Psd,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConeBlock {
    /// Every expression equals zero.
    Zero(Vec<AffineExpr>),
    /// Every expression is nonnegative.
    Nonnegative(Vec<AffineExpr>),
    /// `e[0] >= || e[1..] ||`.
    SecondOrder(Vec<AffineExpr>),
    Psd(PsdBlock),
}

impl ConeBlock {
    pub fn kind(&self) -> ConeKind {
        match self {
            ConeBlock::Zero(_) => ConeKind::Zero,
            ConeBlock::Nonnegative(_) => ConeKind::Nonnegative,
            ConeBlock::SecondOrder(_) => ConeKind::SecondOrder,
            ConeBlock::Psd(_) => ConeKind::Psd,
        }
    }

    /// Vector length or matrix order.
    pub fn dim(&self) -> usize {
        match self {
            ConeBlock::Zero(v) | ConeBlock::Nonnegative(v) | ConeBlock::SecondOrder(v) => v.len(),
            ConeBlock::Psd(p) => p.order,
        }
    }

    fn expressions(&self) -> Box<dyn Iterator<Item = &AffineExpr> + '_> {
        match self {
            ConeBlock::Zero(v) | ConeBlock::Nonnegative(v) | ConeBlock::SecondOrder(v) => Box::new(v.iter()),
            ConeBlock::Psd(p) => Box::new(p.entries.values()),
        }
    }

    /// Distance-like violation of cone membership at `x` (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            ConeBlock::Zero(v) => v.iter().map(|e| e.eval(x).abs()).fold(0.0, f64::max),
            ConeBlock::Nonnegative(v) => v.iter().map(|e| (-e.eval(x)).max(0.0)).fold(0.0, f64::max),
            ConeBlock::SecondOrder(v) => {
                let t = v[0].eval(x);
                let norm = v[1..].iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
                (norm - t).max(0.0)
            }
            ConeBlock::Psd(p) => {
                let m = p.eval(x);
                let min = SymmetricEigen::new(m).eigenvalues.min();
                (-min).max(0.0)
            }
        }
    }
}

/// Linear-objective conic program over named scalar variables.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    names: Vec<String>,
    objective: AffineExpr,
    blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> VarId {
        let mut name = name.into();
        name.retain(|c| !c.is_whitespace());
        self.names.push(name);
        VarId(self.names.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.names[v.0]
    }

    pub fn var_names(&self) -> &[String] {
        &self.names
    }

    pub fn find_var(&self, name: &str) -> Option<VarId> {
        self.names.iter().position(|n| n == name).map(VarId)
    }

    pub fn set_objective(&mut self, objective: AffineExpr) -> Result<()> {
        self.check_refs(std::iter::once(&objective))?;
        self.objective = objective;
        Ok(())
    }

    pub fn objective(&self) -> &AffineExpr {
        &self.objective
    }

    pub fn add_block(&mut self, block: ConeBlock) -> Result<usize> {
        if block.dim() == 0 {
            return Err(Error::Program("empty cone block".into()));
        }
        self.check_refs(block.expressions())?;
        self.blocks.push(block);
        Ok(self.blocks.len() - 1)
    }

    pub fn blocks(&self) -> &[ConeBlock] {
        &self.blocks
    }

    /// Copy with the given variables replaced by constants. They stay
    /// declared but no longer appear in the objective or any block.
    pub fn with_fixed(&self, values: &[(VarId, f64)]) -> Result<ConicProgram> {
        let map: BTreeMap<VarId, f64> = values.iter().copied().collect();
        if let Some((v, x)) = values.iter().find(|(v, x)| v.0 >= self.num_vars() || !x.is_finite()) {
            return Err(Error::Program(format!("cannot fix variable {} to {x}", v.0)));
        }
        let sub = |v: &[AffineExpr]| v.iter().map(|e| e.substitute(&map)).collect();
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                ConeBlock::Zero(v) => ConeBlock::Zero(sub(v)),
                ConeBlock::Nonnegative(v) => ConeBlock::Nonnegative(sub(v)),
                ConeBlock::SecondOrder(v) => ConeBlock::SecondOrder(sub(v)),
                ConeBlock::Psd(p) => {
                    let mut q = PsdBlock::new(p.order);
                    for (&(r, c), e) in &p.entries {
                        q.set(r, c, e.substitute(&map));
                    }
                    ConeBlock::Psd(q)
                }
            })
            .collect();
        Ok(ConicProgram {
            names: self.names.clone(),
            objective: self.objective.substitute(&map),
            blocks,
        })
    }

    pub fn count(&self, kind: ConeKind) -> usize {
        self.blocks.iter().filter(|b| b.kind() == kind).count()
    }

    fn check_refs<'a>(&self, exprs: impl Iterator<Item = &'a AffineExpr>) -> Result<()> {
        let n = self.names.len();
        for e in exprs {
            if e.terms.iter().any(|(v, _)| v.0 >= n) {
                return Err(Error::Program("expression references an undeclared variable".into()));
            }
            if !e.constant.is_finite() || e.terms.iter().any(|(_, c)| !c.is_finite()) {
                return Err(Error::NonFinite("affine expression"));
            }
        }
        Ok(())
    }

    /// Plain-text sparse dump for cross-solver differential testing.
    ///
    /// ```text
    /// conic-program v1
    /// var <id> <name>                       ids start at 1
    /// obj <var> <coef>                      var 0 is the constant
    /// block <id> <cone> <dim>               cone: zero | nonneg | soc | psd
    /// entry <id> <cone> <row> <col> <var> <coef>
    /// ```
    ///
    /// Vector cones use `col = 0`; PSD entries list the lower triangle.
    pub fn to_text(&self) -> String {
        let mut out = String::from("conic-program v1\n");
        for (i, n) in self.names.iter().enumerate() {
            let _ = writeln!(out, "var {} {}", i + 1, n);
        }
        write_expr(&mut out, "obj", &self.objective);
        for (b, block) in self.blocks.iter().enumerate() {
            let cone = block.kind().token();
            let _ = writeln!(out, "block {b} {cone} {}", block.dim());
            let mut emit = |row: usize, col: usize, e: &AffineExpr| {
                if e.constant != 0.0 {
                    let _ = writeln!(out, "entry {b} {cone} {row} {col} 0 {:e}", e.constant);
                }
                for (v, c) in &e.terms {
                    let _ = writeln!(out, "entry {b} {cone} {row} {col} {} {c:e}", v.0 + 1);
                }
            };
            match block {
                ConeBlock::Zero(v) | ConeBlock::Nonnegative(v) | ConeBlock::SecondOrder(v) => {
                    for (row, e) in v.iter().enumerate() {
                        emit(row, 0, e);
                    }
                }
                ConeBlock::Psd(p) => {
                    for (&(r, c), e) in &p.entries {
                        emit(r, c, e);
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = ConicProgram::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == "conic-program v1" => {}
            _ => return Err(parse_err(1, "missing header")),
        }
        for (i, line) in lines {
            let ln = i + 1;
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(ln, "bad integer"));
            let real = |s: &str| s.parse::<f64>().map_err(|_| parse_err(ln, "bad number"));
            match f.as_slice() {
                ["var", id, name] => {
                    if num(id)? != p.names.len() + 1 {
                        return Err(parse_err(ln, "variable ids must be consecutive"));
                    }
                    p.add_var(*name);
                }
                ["obj", var, coef] => {
                    let (v, c) = (num(var)?, real(coef)?);
                    add_to(&mut p.objective, v, c, p.names.len()).map_err(|m| parse_err(ln, m))?;
                }
                ["block", id, cone, dim] => {
                    if num(id)? != p.blocks.len() {
                        return Err(parse_err(ln, "block ids must be consecutive"));
                    }
                    let dim = num(dim)?;
                    if dim == 0 {
                        return Err(parse_err(ln, "empty block"));
                    }
                    let kind = ConeKind::parse(cone).ok_or_else(|| parse_err(ln, "unknown cone"))?;
                    p.blocks.push(match kind {
                        ConeKind::Zero => ConeBlock::Zero(vec![AffineExpr::zero(); dim]),
                        ConeKind::Nonnegative => ConeBlock::Nonnegative(vec![AffineExpr::zero(); dim]),
                        ConeKind::SecondOrder => ConeBlock::SecondOrder(vec![AffineExpr::zero(); dim]),
                        ConeKind::Psd => ConeBlock::Psd(PsdBlock::new(dim)),
                    });
                }
                ["entry", id, cone, row, col, var, coef] => {
                    let (b, row, col, v, c) = (num(id)?, num(row)?, num(col)?, num(var)?, real(coef)?);
                    let nvars = p.names.len();
                    let block = p.blocks.get_mut(b).ok_or_else(|| parse_err(ln, "unknown block"))?;
                    if ConeKind::parse(cone) != Some(block.kind()) {
                        return Err(parse_err(ln, "cone type does not match block"));
                    }
                    let target = match block {
                        ConeBlock::Zero(e) | ConeBlock::Nonnegative(e) | ConeBlock::SecondOrder(e) => {
                            if col != 0 {
                                return Err(parse_err(ln, "vector cone entries use col 0"));
                            }
                            e.get_mut(row).ok_or_else(|| parse_err(ln, "row out of range"))?
                        }
                        ConeBlock::Psd(m) => {
                            if row >= m.order || col > row {
                                return Err(parse_err(ln, "PSD entries must lie in the lower triangle"));
                            }
                            m.entries.entry((row, col)).or_default()
                        }
                    };
                    add_to(target, v, c, nvars).map_err(|m| parse_err(ln, m))?;
                }
                _ => return Err(parse_err(ln, "unrecognised line")),
            }
        }
        Ok(p)
    }
}

fn write_expr(out: &mut String, tag: &str, e: &AffineExpr) {
    if e.constant != 0.0 {
        let _ = writeln!(out, "{tag} 0 {:e}", e.constant);
    }
    for (v, c) in &e.terms {
        let _ = writeln!(out, "{tag} {} {c:e}", v.0 + 1);
    }
}

fn add_to(e: &mut AffineExpr, var: usize, coef: f64, nvars: usize) -> std::result::Result<(), &'static str> {
    if var == 0 {
        e.constant += coef;
    } else if var <= nvars {
        e.add_term(VarId(var - 1), coef);
    } else {
        return Err("entry references an undeclared variable");
    }
    Ok(())
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

/// Solver tolerances. `accept` is the largest cone violation, measured by
/// [`check_solution`], tolerated on a point reported as optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap: f64,
    pub max_iter: u32,
    pub accept: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            gap: 1e-8,
            max_iter: 200,
            accept: 1e-6,
        }
    }
}

impl Tolerances {
    /// Ten times tighter feasibility and gap tolerances.
    pub fn tightened(&self) -> Self {
        Self {
            feasibility: self.feasibility * 0.1,
            gap: self.gap * 0.1,
            max_iter: self.max_iter * 2,
            accept: self.accept,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    Inaccurate,
    Failed,
}

/// Independent cone-membership report for a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Violation of each block, in program order.
    pub blocks: Vec<f64>,
    pub max_violation: f64,
    pub objective: f64,
}

impl ResidualReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_violation <= tol
    }
}

/// Residuals as reported by the backend.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverDiagnostics {
    pub backend: &'static str,
    pub raw_status: String,
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub point: Vec<f64>,
    pub objective: f64,
    pub residuals: ResidualReport,
    pub diagnostics: SolverDiagnostics,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.point[v.0]
    }
}

/// Recomputes every cone membership at `point` without solver input.
pub fn check_solution(program: &ConicProgram, point: &[f64]) -> ResidualReport {
    assert_eq!(point.len(), program.num_vars(), "point must assign every variable");
    let blocks: Vec<f64> = program
        .blocks
        .iter()
        .map(|b| {
            let v = b.violation(point);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        })
        .collect();
    ResidualReport {
        max_violation: blocks.iter().copied().fold(0.0, f64::max),
        blocks,
        objective: program.objective.eval(point),
    }
}

/// Backend contract: any conic solver honouring the status semantics.
pub trait ConicSolver: Send + Sync {
    fn solve(&self, program: &ConicProgram, tol: &Tolerances) -> SolveResult;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelSolver;

extern "C" {
    fn openblas_set_num_threads(n: std::os::raw::c_int);
}

static SINGLE_THREAD_BLAS: Once = Once::new();

impl ConicSolver for ClarabelSolver {
    fn solve(&self, program: &ConicProgram, tol: &Tolerances) -> SolveResult {
        // Parallelism lives at the trial level; BLAS threads only contend.
        SINGLE_THREAD_BLAS.call_once(|| unsafe { openblas_set_num_threads(1) });

        let n = program.num_vars();
        let (a, b, cones) = lower(program);
        let p = CscMatrix::<f64>::zeros((n, n));
        let mut q = vec![0.0; n];
        for (v, c) in program.objective.terms() {
            q[v.0] = *c;
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(tol.feasibility)
            .tol_gap_abs(tol.gap)
            .tol_gap_rel(tol.gap)
            .max_iter(tol.max_iter)
            .build()
            .expect("static solver settings are valid");
        let failed = |msg: String| SolveResult {
            status: SolveStatus::Failed,
            point: vec![0.0; n],
            objective: f64::NAN,
            residuals: check_solution(program, &vec![0.0; n]),
            diagnostics: SolverDiagnostics {
                backend: "clarabel",
                raw_status: msg,
                ..Default::default()
            },
        };
        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => return failed(format!("setup: {e:?}")),
        };
        solver.solve();
        let sol = &solver.solution;
        let mut status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible => SolveStatus::Unbounded,
            SolverStatus::AlmostSolved
            | SolverStatus::AlmostPrimalInfeasible
            | SolverStatus::AlmostDualInfeasible
            | SolverStatus::MaxIterations
            | SolverStatus::MaxTime
            | SolverStatus::InsufficientProgress => SolveStatus::Inaccurate,
            _ => SolveStatus::Failed,
        };
        let point = sol.x.clone();
        let residuals = if point.iter().all(|v| v.is_finite()) {
            check_solution(program, &point)
        } else {
            status = SolveStatus::Failed;
            check_solution(program, &vec![0.0; n])
        };
        if status == SolveStatus::Optimal && !residuals.passes(tol.accept) {
            status = SolveStatus::Inaccurate;
        }
        if sol.status == SolverStatus::AlmostPrimalInfeasible && farkas_holds(&a, &b, &cones, &sol.z, tol.accept) {
            status = SolveStatus::Infeasible;
        }
        // Near-degenerate cones stall just short of the solver's own thresholds.
        // Keep such points when the cones check out and the duality gap is small.
        let gap = sol.obj_val - sol.obj_val_dual;
        if sol.status == SolverStatus::AlmostSolved
            && residuals.passes(tol.accept)
            && gap.abs() <= tol.accept * (1.0 + sol.obj_val.abs())
        {
            status = SolveStatus::Optimal;
        }
        SolveResult {
            status,
            objective: residuals.objective,
            point,
            residuals,
            diagnostics: SolverDiagnostics {
                backend: "clarabel",
                raw_status: format!("{:?}", sol.status),
                iterations: sol.iterations,
                primal_residual: sol.r_prim,
                dual_residual: sol.r_dual,
                gap,
                solve_time: sol.solve_time,
            },
        }
    }
}

/// Solves with the default backend.
pub fn solve(program: &ConicProgram, tol: &Tolerances) -> SolveResult {
    ClarabelSolver.solve(program, tol)
}

/// Lowers the program to `A x + s = b, s in K`.
fn lower(program: &ConicProgram) -> (CscMatrix<f64>, Vec<f64>, Vec<SupportedConeT<f64>>) {
    let n = program.num_vars();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut cones = Vec::with_capacity(program.blocks.len());
    let push = |e: Option<&AffineExpr>, scale: f64, triplets: &mut Vec<(usize, usize, f64)>, b: &mut Vec<f64>| {
        let row = b.len();
        match e {
            Some(e) => {
                b.push(scale * e.constant);
                for (v, c) in &e.terms {
                    triplets.push((row, v.0, -scale * c));
                }
            }
            None => b.push(0.0),
        }
    };
    for block in &program.blocks {
        match block {
            ConeBlock::Zero(v) | ConeBlock::Nonnegative(v) | ConeBlock::SecondOrder(v) => {
                for e in v {
                    push(Some(e), 1.0, &mut triplets, &mut b);
                }
                cones.push(match block.kind() {
                    ConeKind::Zero => SupportedConeT::ZeroConeT(v.len()),
                    ConeKind::Nonnegative => SupportedConeT::NonnegativeConeT(v.len()),
                    _ => SupportedConeT::SecondOrderConeT(v.len()),
                });
            }
            ConeBlock::Psd(p) => {
                // Upper triangle, column-major, off-diagonals scaled by sqrt(2).
                for col in 0..p.order {
                    for row in 0..=col {
                        let scale = if row == col { 1.0 } else { std::f64::consts::SQRT_2 };
                        push(p.get(row, col), scale, &mut triplets, &mut b);
                    }
                }
                cones.push(SupportedConeT::PSDTriangleConeT(p.order));
            }
        }
    }
    let m = b.len();
    triplets.sort_by_key(|&(r, c, _)| (c, r));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in triplets {
        if last == Some((r, c)) {
            *nzval.last_mut().expect("duplicate follows an entry") += v;
            continue;
        }
        last = Some((r, c));
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    (CscMatrix::new(m, n, colptr, rowval, nzval), b, cones)
}

/// Checks `z` as a Farkas certificate of `A x + s = b, s in K`: after
/// scaling to `b^T z = -1`, `A^T z ~ 0` and `z` in the dual cone, both up to
/// `tol * (1 + ||z||_inf)`.
fn farkas_holds(a: &CscMatrix<f64>, b: &[f64], cones: &[SupportedConeT<f64>], z: &[f64], tol: f64) -> bool {
    let bz: f64 = b.iter().zip(z).map(|(x, y)| x * y).sum();
    if bz.is_nan() || bz >= 0.0 {
        return false;
    }
    let z: Vec<f64> = z.iter().map(|v| v / -bz).collect();
    // Residuals are judged relative to the certificate's own size.
    let tol = tol * (1.0 + z.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    for c in 0..a.n {
        let atz: f64 = (a.colptr[c]..a.colptr[c + 1]).map(|i| a.nzval[i] * z[a.rowval[i]]).sum();
        if atz.abs() > tol {
            return false;
        }
    }
    let mut offset = 0;
    for cone in cones {
        let ok = match *cone {
            SupportedConeT::ZeroConeT(d) => {
                offset += d;
                true
            }
            SupportedConeT::NonnegativeConeT(d) => {
                offset += d;
                z[offset - d..offset].iter().all(|v| *v >= -tol)
            }
            SupportedConeT::SecondOrderConeT(d) => {
                offset += d;
                let w = &z[offset - d..offset];
                w[1..].iter().map(|v| v * v).sum::<f64>().sqrt() - w[0] <= tol
            }
            SupportedConeT::PSDTriangleConeT(order) => {
                let mut m = DMatrix::zeros(order, order);
                for col in 0..order {
                    for row in 0..=col {
                        let v = z[offset];
                        offset += 1;
                        let v = if row == col { v } else { v / std::f64::consts::SQRT_2 };
                        m[(row, col)] = v;
                        m[(col, row)] = v;
                    }
                }
                min_eigenvalue(&m) >= -tol
            }
            _ => false,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Symmetric matrix from a dense evaluation, for callers inspecting blocks.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Evaluates `exprs` at `x`.
pub fn eval_all(exprs: &[AffineExpr], x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(exprs.len(), exprs.iter().map(|e| e.eval(x)))
}
