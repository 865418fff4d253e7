//! Bounded channel uncertainty and the worst-case MSE oracle.
//!
//! A region is an intersection of ellipsoids sharing a centre (the channel
//! estimate, real-embedded), a basis `Phi` (`J x 2N_t`, rows `phi_j`) and a
//! radius `delta`:
//!
//! ```text
//! U^l = { h_hat + w^T Phi  :  w^T Q^l w <= delta^2 }
//! ```
//!
//! A single member with `Phi = I`, `Q = I` is a sphere; `2N_t` members with
//! single-entry `Q^l` form a box (interval constraints per coordinate).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

use crate::embed::{embed_matrix, RealEmbeddedRow};
use crate::error::{Error, Result};
use crate::mse::{mse, Design};

/// Slack on `w^T Q w <= delta^2` in membership tests.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;
const PSD_FLOOR: f64 = -1e-10;

/// One ellipsoidal set `{ center + w^T basis : w^T shape w <= radius^2 }`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: RealEmbeddedRow,
    pub basis: DMatrix<f64>,
    pub shape: DMatrix<f64>,
    pub radius: f64,
}

impl Ellipsoid {
    pub fn new(center: RealEmbeddedRow, basis: DMatrix<f64>, shape: DMatrix<f64>, radius: f64) -> Result<Self> {
        let e = Self {
            center,
            basis,
            shape,
            radius,
        };
        e.validate()?;
        Ok(e)
    }

    /// Number of basis directions `J`.
    pub fn directions(&self) -> usize {
        self.basis.nrows()
    }

    fn validate(&self) -> Result<()> {
        let j = self.basis.nrows();
        if j == 0 {
            return Err(Error::InvalidRegion("basis needs at least one row".into()));
        }
        if self.basis.ncols() != self.center.len() {
            return Err(Error::Dimension(format!(
                "basis has {} columns, centre has length {}",
                self.basis.ncols(),
                self.center.len()
            )));
        }
        if self.shape.nrows() != j || self.shape.ncols() != j {
            return Err(Error::Dimension(format!("shape must be {j}x{j}")));
        }
        if self.basis.iter().chain(self.shape.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ellipsoid"));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::InvalidRegion(format!("radius must be >= 0, got {}", self.radius)));
        }
        let scale = 1.0 + self.shape.amax();
        if (&self.shape - self.shape.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidRegion("shape matrix is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(self.shape.clone()).eigenvalues.min();
        if min_eig < PSD_FLOOR * scale {
            return Err(Error::InvalidRegion(format!(
                "shape matrix is not PSD (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(())
    }
}

/// Intersection of ellipsoids with a common centre, basis and radius.
#[derive(Debug, Clone)]
pub struct UncertaintyRegion {
    sets: Vec<Ellipsoid>,
    /// `(Phi Phi^T)^{-1} Phi`, mapping offsets to coordinates.
    coords: DMatrix<f64>,
}

impl PartialEq for UncertaintyRegion {
    fn eq(&self, other: &Self) -> bool {
        self.sets == other.sets
    }
}

impl UncertaintyRegion {
    pub fn new(sets: Vec<Ellipsoid>) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidRegion("region needs at least one set".into()))?;
        for e in &sets {
            e.validate()?;
            if e.center != first.center {
                return Err(Error::InvalidRegion("members must share the same centre".into()));
            }
            if e.basis != first.basis {
                return Err(Error::InvalidRegion("members must share the same basis".into()));
            }
            if e.radius != first.radius {
                return Err(Error::InvalidRegion("members must share the same radius".into()));
            }
        }
        let basis = &first.basis;
        let j = basis.nrows();
        if j > basis.ncols() {
            return Err(Error::InvalidRegion(format!(
                "{j} basis rows cannot be independent in dimension {}",
                basis.ncols()
            )));
        }
        let gram = basis * basis.transpose();
        let gram_eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        if gram_eig.min() <= 1e-10 * (1.0 + gram_eig.max()) {
            return Err(Error::InvalidRegion("basis rows are linearly dependent".into()));
        }
        let total: DMatrix<f64> = sets
            .iter()
            .fold(DMatrix::zeros(j, j), |acc, e| acc + &e.shape);
        let total_eig = SymmetricEigen::new(total).eigenvalues;
        if total_eig.min() <= 1e-12 * (1.0 + total_eig.max()) {
            return Err(Error::InvalidRegion(
                "intersection is unbounded along some basis direction".into(),
            ));
        }
        let coords = gram
            .try_inverse()
            .ok_or_else(|| Error::InvalidRegion("basis Gram matrix is singular".into()))?
            * basis;
        Ok(Self { sets, coords })
    }

    /// Sphere of radius `delta` around `center`.
    pub fn spherical(center: RealEmbeddedRow, delta: f64) -> Result<Self> {
        let n = center.len();
        let e = Ellipsoid::new(center, DMatrix::identity(n, n), DMatrix::identity(n, n), delta)?;
        Self::new(vec![e])
    }

    /// Box `|h_l - center_l| <= halfwidths_l`, one member per free coordinate.
    ///
    /// Coordinates with zero halfwidth are pinned by leaving them out of the
    /// basis. The common radius is the largest halfwidth and each member's
    /// single shape entry is `(radius / halfwidth)^2`.
    pub fn interval(center: RealEmbeddedRow, halfwidths: &[f64]) -> Result<Self> {
        let n = center.len();
        if halfwidths.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} halfwidths, got {}",
                halfwidths.len()
            )));
        }
        if halfwidths.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidArgument("halfwidths must be finite and >= 0".into()));
        }
        let active: Vec<usize> = (0..n).filter(|&l| halfwidths[l] > 0.0).collect();
        if active.is_empty() {
            // Zero-size box: any bounded member with radius 0 pins every coordinate.
            return Self::spherical(center, 0.0);
        }
        let radius = active.iter().map(|&l| halfwidths[l]).fold(0.0, f64::max);
        let j = active.len();
        let basis = DMatrix::from_fn(j, n, |r, c| if active[r] == c { 1.0 } else { 0.0 });
        let sets = (0..j)
            .map(|r| {
                let q = (radius / halfwidths[active[r]]).powi(2);
                let shape = DMatrix::from_fn(j, j, |a, b| if a == r && b == r { q } else { 0.0 });
                Ellipsoid::new(center.clone(), basis.clone(), shape, radius)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sets)
    }

    pub fn sets(&self) -> &[Ellipsoid] {
        &self.sets
    }

    /// Number of intersected sets `L`.
    pub fn members(&self) -> usize {
        self.sets.len()
    }

    pub fn center(&self) -> &RealEmbeddedRow {
        &self.sets[0].center
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.sets[0].basis
    }

    pub fn radius(&self) -> f64 {
        self.sets[0].radius
    }

    pub fn directions(&self) -> usize {
        self.basis().nrows()
    }

    pub fn antennas(&self) -> usize {
        self.center().antennas()
    }

    /// Same shape with every member's radius replaced by `radius`.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be >= 0, got {radius}")));
        }
        let sets = self
            .sets
            .iter()
            .map(|e| Ellipsoid {
                radius,
                ..e.clone()
            })
            .collect();
        Ok(Self {
            sets,
            coords: self.coords.clone(),
        })
    }

    /// Same region re-centred on `center`.
    pub fn with_center(&self, center: RealEmbeddedRow) -> Result<Self> {
        if center.len() != self.center().len() {
            return Err(Error::Dimension("centre length mismatch".into()));
        }
        let sets = self
            .sets
            .iter()
            .map(|e| Ellipsoid {
                center: center.clone(),
                ..e.clone()
            })
            .collect();
        Ok(Self {
            sets,
            coords: self.coords.clone(),
        })
    }

    /// Halfwidth per basis coordinate when the region is an axis-aligned box
    /// in `w` (every member's shape has a single diagonal entry).
    pub fn box_halfwidths(&self) -> Option<Vec<f64>> {
        let j = self.directions();
        let mut q = vec![0.0_f64; j];
        for e in &self.sets {
            let mut nonzero = e
                .shape
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i % j, i / j, *v));
            let (r, c, v) = nonzero.next()?;
            if nonzero.next().is_some() || r != c {
                return None;
            }
            q[r] = q[r].max(v);
        }
        if q.iter().any(|v| *v <= 0.0) {
            return None;
        }
        Some(q.iter().map(|v| self.radius() / v.sqrt()).collect())
    }

    /// Largest `s >= 0` with `s * d` admissible, for a coordinate direction `d`.
    pub fn max_scale_along(&self, d: &DVector<f64>) -> f64 {
        let delta = self.radius();
        self.sets
            .iter()
            .filter_map(|e| {
                let q = d.dot(&(&e.shape * d));
                (q > 0.0).then(|| delta / q.sqrt())
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn offset_of(&self, w: &DVector<f64>) -> DVector<f64> {
        self.basis().tr_mul(w)
    }

    /// Channel at coordinates `w`.
    pub fn point(&self, w: &DVector<f64>) -> RealEmbeddedRow {
        let h = self.center().as_vector() + self.offset_of(w);
        RealEmbeddedRow::new(h).expect("finite coordinates give a finite channel")
    }

    /// Coordinates of `h`, or `None` if `h - center` is not in the basis row space.
    pub fn coordinates(&self, h: &RealEmbeddedRow) -> Option<DVector<f64>> {
        let e = h.as_vector() - self.center().as_vector();
        let w = &self.coords * &e;
        let residual = (self.offset_of(&w) - &e).amax();
        (residual <= 1e-9 * (1.0 + e.amax())).then_some(w)
    }

    fn admits(&self, w: &DVector<f64>) -> bool {
        // Slack is applied to the norm, not its square, so it stays tiny near radius 0.
        let bound = self.radius() + MEMBERSHIP_SLACK * (1.0 + self.radius());
        self.sets.iter().all(|e| w.dot(&(&e.shape * w)).max(0.0).sqrt() <= bound)
    }

    pub fn contains(&self, h: &RealEmbeddedRow) -> Result<bool> {
        if h.len() != self.center().len() {
            return Err(Error::Dimension(format!(
                "channel has length {}, region expects {}",
                h.len(),
                self.center().len()
            )));
        }
        Ok(self.coordinates(h).is_some_and(|w| self.admits(&w)))
    }

    /// Draws `n` admissible channels. A `boundary_fraction` of them sit on
    /// the boundary of the intersection along a random direction; the rest
    /// are radially uniform along random directions.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, boundary_fraction: f64) -> Vec<RealEmbeddedRow> {
        assert!((0.0..=1.0).contains(&boundary_fraction), "boundary fraction must lie in [0, 1]");
        let on_boundary = (boundary_fraction * n as f64).round() as usize;
        (0..n)
            .map(|i| {
                let w = self.sample_coordinates(rng, i < on_boundary);
                self.point(&w)
            })
            .collect()
    }

    fn sample_coordinates<R: Rng + ?Sized>(&self, rng: &mut R, boundary: bool) -> DVector<f64> {
        let j = self.directions();
        if self.radius() == 0.0 {
            return DVector::zeros(j);
        }
        let d = loop {
            let d = DVector::from_fn(j, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = d.norm();
            if norm > 1e-12 {
                break d / norm;
            }
        };
        let s_max = self.max_scale_along(&d) * (1.0 - 1e-12);
        let s = if boundary {
            s_max
        } else {
            s_max * rng.sample(Uniform::new(0.0, 1.0f64)).powf(1.0 / j as f64)
        };
        d * s
    }

    /// Pulls `w` back onto the region along its ray if it lies outside.
    fn retract(&self, w: &DVector<f64>) -> DVector<f64> {
        let norm = w.norm();
        if norm == 0.0 {
            return w.clone();
        }
        let limit = self.max_scale_along(&(w / norm)) * (1.0 - 1e-12);
        if norm > limit {
            w * (limit / norm)
        } else {
            w.clone()
        }
    }
}

/// Budget of the worst-case MSE oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub samples: usize,
    pub boundary_fraction: f64,
    pub ascent_steps: usize,
    pub ascent_starts: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            boundary_fraction: 0.9,
            ascent_steps: 200,
            ascent_starts: 10,
            seed: 0x5eed,
        }
    }
}

/// Largest MSE found over the region and the channel attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub mse: f64,
    pub channel: RealEmbeddedRow,
}

/// User `k`'s error as an affine function of the coordinates `w`:
/// `r(w) = r0 + M^T w`, `MSE(w) = |r(w)|^2 + g^2 sigma^2`.
struct ErrorModel {
    r0: DVector<f64>,
    m: DMatrix<f64>,
    noise: f64,
}

impl ErrorModel {
    fn new(design: &Design, k: usize, region: &UncertaintyRegion, sigma: f64) -> Self {
        let kk = design.users();
        let g = design.gains()[k];
        let p = embed_matrix(design.precoder());
        let hp = region.center().times(&p);
        let mut r0 = hp * g;
        for j in 0..kk {
            let b = design.feedback().get(k, j);
            r0[j] -= b.re;
            r0[kk + j] -= b.im;
        }
        r0[k] -= 1.0;
        let m = region.basis() * p.as_matrix() * g;
        Self {
            r0,
            m,
            noise: g * g * sigma * sigma,
        }
    }

    fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.r0 + self.m.tr_mul(w)
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        self.residual(w).norm_squared() + self.noise
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.m * self.residual(w) * 2.0
    }
}

/// Sampling plus projected-ascent lower bound on the worst-case MSE.
///
/// Every reported value is the MSE at an admissible channel, so the result
/// never exceeds the true supremum. For a single ellipsoid the maximum of
/// the convex quadratic over the boundary is also found exactly by a 1-D
/// search on the secular equation; for boxes every vertex is evaluated.
pub struct WorstCaseOracle {
    config: OracleConfig,
}

impl WorstCaseOracle {
    pub fn new(config: OracleConfig) -> Self {
        Self { config }
    }

    pub fn evaluate(&self, design: &Design, k: usize, region: &UncertaintyRegion, sigma: f64) -> WorstCase {
        let center_h = region.center().to_complex();
        let at_center = mse(design, k, &center_h, sigma);
        if region.radius() == 0.0 {
            return WorstCase {
                mse: at_center,
                channel: region.center().clone(),
            };
        }
        let model = ErrorModel::new(design, k, region, sigma);
        let j = region.directions();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));

        let mut candidates: Vec<(f64, DVector<f64>)> = Vec::with_capacity(self.config.samples + 1);
        candidates.push((model.value(&DVector::zeros(j)), DVector::zeros(j)));
        let on_boundary = (self.config.boundary_fraction * self.config.samples as f64).round() as usize;
        for i in 0..self.config.samples {
            let w = region.sample_coordinates(&mut rng, i < on_boundary);
            candidates.push((model.value(&w), w));
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(self.config.ascent_starts.max(1));

        let mut best = candidates[0].clone();
        for (v0, w0) in candidates {
            let (v, w) = self.ascend(&model, region, v0, w0);
            if v > best.0 {
                best = (v, w);
            }
        }
        if region.members() == 1 {
            let w = exact_single_ellipsoid(&model, region);
            let w = region.retract(&w);
            let v = model.value(&w);
            if v > best.0 {
                best = (v, w);
            }
        }
        if let Some(half) = region.box_halfwidths() {
            if j <= 16 {
                for mask in 0u32..(1 << j) {
                    let w = DVector::from_fn(j, |i, _| {
                        if mask & (1 << i) != 0 {
                            half[i]
                        } else {
                            -half[i]
                        }
                    });
                    let v = model.value(&w);
                    if v > best.0 {
                        best = (v, w);
                    }
                }
            }
        }

        let channel = region.point(&best.1);
        let value = mse(design, k, &channel.to_complex(), sigma).max(at_center);
        WorstCase { mse: value, channel }
    }

    fn ascend(&self, model: &ErrorModel, region: &UncertaintyRegion, mut v: f64, mut w: DVector<f64>) -> (f64, DVector<f64>) {
        let delta = region.radius();
        for _ in 0..self.config.ascent_steps {
            let grad = model.gradient(&w);
            let gnorm = grad.norm();
            if gnorm == 0.0 {
                break;
            }
            let mut step = 2.0 * delta / gnorm;
            let mut improved = false;
            for _ in 0..40 {
                let cand = region.retract(&(&w + &grad * step));
                let cv = model.value(&cand);
                if cv > v * (1.0 + 1e-15) {
                    v = cv;
                    w = cand;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (v, w)
    }
}

/// Maximiser of `|r0 + M^T w|^2` over `w^T Q w <= delta^2` for one ellipsoid.
fn exact_single_ellipsoid(model: &ErrorModel, region: &UncertaintyRegion) -> DVector<f64> {
    let j = region.directions();
    let q = &region.sets()[0].shape;
    let delta = region.radius();
    let qe = SymmetricEigen::new(q.clone());
    // Q^{-1/2}; Q is positive definite for a single bounded member.
    let inv_sqrt = DMatrix::from_diagonal(&qe.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt()));
    let q_inv_sqrt = &qe.eigenvectors * inv_sqrt * qe.eigenvectors.transpose();
    // w = delta Q^{-1/2} z with |z| <= 1, r = r0 + N z.
    let n = model.m.tr_mul(&q_inv_sqrt) * delta;
    let a = n.tr_mul(&n);
    let c = n.tr_mul(&model.r0);
    let ae = SymmetricEigen::new(a);
    let ct = ae.eigenvectors.tr_mul(&c);
    let a_max = ae.eigenvalues.max();
    let scale = 1.0 + a_max.abs();
    let secular = |lambda: f64| -> f64 {
        (0..j)
            .map(|i| {
                let d = lambda - ae.eigenvalues[i];
                if ct[i] == 0.0 {
                    0.0
                } else {
                    ct[i] * ct[i] / (d * d)
                }
            })
            .sum()
    };
    let top: Vec<usize> = (0..j)
        .filter(|&i| ae.eigenvalues[i] >= a_max - 1e-12 * scale)
        .collect();
    let top_weight: f64 = top.iter().map(|&i| ct[i] * ct[i]).sum();
    let z_tilde = if top_weight <= 1e-24 * (1.0 + c.norm_squared()) {
        // Hard case: saturate along the leading eigenvector.
        let mut z = DVector::from_fn(j, |i, _| {
            if top.contains(&i) {
                0.0
            } else {
                ct[i] / (a_max - ae.eigenvalues[i])
            }
        });
        let rest = z.norm_squared();
        if rest <= 1.0 {
            z[top[0]] = (1.0 - rest).sqrt();
            z
        } else {
            z / rest.sqrt()
        }
    } else {
        let (mut lo, mut hi) = (a_max, a_max + ct.norm() + 1e-300);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if secular(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lambda = hi;
        let z = DVector::from_fn(j, |i, _| ct[i] / (lambda - ae.eigenvalues[i]));
        let norm = z.norm();
        if norm > 0.0 {
            z / norm
        } else {
            z
        }
    };
    let z = &ae.eigenvectors * z_tilde;
    q_inv_sqrt * z * delta
}

/// Worst-case MSE of user `k` over `region` with the default oracle budget.
pub fn worst_case_mse(design: &Design, k: usize, region: &UncertaintyRegion, sigma: f64) -> f64 {
    WorstCaseOracle::new(OracleConfig::default())
        .evaluate(design, k, region, sigma)
        .mse
}
