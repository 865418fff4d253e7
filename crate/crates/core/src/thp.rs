//! Symbol-level Tomlinson-Harashima chain.
//!
//! Transmitter: `v_k = mod(s_k - sum_{j<k} B_kj v_j)`, `x = P v`.
//! Receiver `k`: `u^_k = g_k (h_k x + n_k)`, then `mod` and a nearest-point
//! decision. The pre-decision error is `u^_k - u_k` with `u = (I + B) v`,
//! which is the quantity the closed-form MSE describes.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::embed::ComplexMatrix;
use crate::error::{Error, Result};
use crate::mse::Design;

/// Unit-energy square QAM and its modulo lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstellationSpec {
    pub m: usize,
    /// Half the distance between neighbouring levels.
    pub d: f64,
    /// Side of the Voronoi square.
    pub big_d: f64,
}

impl ConstellationSpec {
    pub fn qam(m: usize) -> Result<Self> {
        if !matches!(m, 4 | 16 | 64 | 256) {
            return Err(Error::InvalidArgument(format!("unsupported QAM order {m}")));
        }
        let d = (3.0 / (2.0 * (m as f64 - 1.0))).sqrt();
        Ok(Self {
            m,
            d,
            big_d: 2.0 * d * (m as f64).sqrt(),
        })
    }

    /// Levels per real dimension.
    pub fn side(&self) -> usize {
        (self.m as f64).sqrt().round() as usize
    }

    pub fn level(&self, i: usize) -> f64 {
        (2.0 * i as f64 - (self.side() as f64 - 1.0)) * self.d
    }

    fn nearest_level(&self, x: f64) -> usize {
        let s = self.side() as f64;
        let i = ((x / self.d + s - 1.0) / 2.0).round();
        i.clamp(0.0, s - 1.0) as usize
    }

    pub fn nearest(&self, z: Complex64) -> Complex64 {
        Complex64::new(self.level(self.nearest_level(z.re)), self.level(self.nearest_level(z.im)))
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        let s = self.side();
        Complex64::new(self.level(rng.gen_range(0..s)), self.level(rng.gen_range(0..s)))
    }

    /// Mean symbol energy; 1 by construction.
    pub fn energy(&self) -> f64 {
        2.0 * self.d * self.d * (self.m as f64 - 1.0) / 3.0
    }
}

fn wrap(x: f64, d: f64) -> f64 {
    x - d * ((x + 0.5 * d) / d).floor()
}

/// Wraps real and imaginary parts into `[-D/2, D/2)`.
pub fn modulo(z: Complex64, big_d: f64) -> Complex64 {
    Complex64::new(wrap(z.re, big_d), wrap(z.im, big_d))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThpOutput {
    pub x: Vec<Complex64>,
    pub v: Vec<Complex64>,
    /// Gaussian integers with `(I + B) v = s + i D`.
    pub i: Vec<Complex64>,
}

/// Successive pre-subtraction with modulo, then linear precoding.
pub fn thp_precode(s: &[Complex64], b: &ComplexMatrix, p: &ComplexMatrix, big_d: f64) -> ThpOutput {
    let k = s.len();
    let mut v = vec![Complex64::new(0.0, 0.0); k];
    let mut i = vec![Complex64::new(0.0, 0.0); k];
    for row in 0..k {
        let mut pre = s[row];
        for j in 0..row {
            pre -= b.get(row, j) * v[j];
        }
        v[row] = modulo(pre, big_d);
        let shift = (v[row] - pre) / big_d;
        i[row] = Complex64::new(shift.re.round(), shift.im.round());
    }
    let x = ComplexMatrix::row_times_col(p, &v);
    ThpOutput { x, v, i }
}

/// Empirical statistics of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub mse: Vec<f64>,
    pub sinr: Vec<f64>,
    pub ser: Vec<f64>,
    pub v_variance: Vec<f64>,
    /// Standard error of each `v_variance` estimate.
    pub v_variance_se: Vec<f64>,
    pub avg_power: f64,
    pub symbols: usize,
    pub seed: u64,
    /// Largest `|(I + B) v - s - i D|` seen.
    pub identity_residual: f64,
    /// Every `v_k` stayed inside `[-D/2, D/2)^2`.
    pub in_voronoi: bool,
}

#[derive(Debug, Clone)]
struct Acc {
    err: Vec<f64>,
    signal: Vec<f64>,
    disturbance: Vec<f64>,
    errors: Vec<usize>,
    v2: Vec<f64>,
    v4: Vec<f64>,
    power: f64,
    n: usize,
    identity: f64,
    in_voronoi: bool,
}

impl Acc {
    fn new(k: usize) -> Self {
        Self {
            err: vec![0.0; k],
            signal: vec![0.0; k],
            disturbance: vec![0.0; k],
            errors: vec![0; k],
            v2: vec![0.0; k],
            v4: vec![0.0; k],
            power: 0.0,
            n: 0,
            identity: 0.0,
            in_voronoi: true,
        }
    }

    fn merge(mut self, o: Acc) -> Acc {
        let add = |a: &mut Vec<f64>, b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.err, &o.err);
        add(&mut self.signal, &o.signal);
        add(&mut self.disturbance, &o.disturbance);
        add(&mut self.v2, &o.v2);
        add(&mut self.v4, &o.v4);
        self.errors.iter_mut().zip(&o.errors).for_each(|(x, y)| *x += y);
        self.power += o.power;
        self.n += o.n;
        self.identity = self.identity.max(o.identity);
        self.in_voronoi &= o.in_voronoi;
        self
    }
}

/// Symbols per independently seeded batch.
pub const BATCH: usize = 8192;

/// Runs `n_symbols` channel uses of the THP chain over the true channels `h`
/// (`K x N_t`, rows in precoding order).
pub fn simulate(
    design: &Design,
    h: &ComplexMatrix,
    sigma: &[f64],
    n_symbols: usize,
    constellation: ConstellationSpec,
    seed: u64,
) -> Result<SimulationReport> {
    let k = design.users();
    if h.nrows() != k || h.ncols() != design.antennas() || sigma.len() != k {
        return Err(Error::Dimension("channels and noise levels must match the design".into()));
    }
    if n_symbols < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 1000 symbols, got {n_symbols}")));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
    }
    let hp = h.mul(design.precoder());
    let batches = n_symbols.div_ceil(BATCH);
    let acc = (0..batches)
        .into_par_iter()
        .map(|batch| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(batch as u64);
            let count = BATCH.min(n_symbols - batch * BATCH);
            run_batch(design, &hp, sigma, constellation, count, &mut rng)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(Acc::new(k), Acc::merge);
    let n = acc.n as f64;
    let v_variance: Vec<f64> = acc.v2.iter().map(|s| s / n).collect();
    let v_variance_se = acc
        .v4
        .iter()
        .zip(&v_variance)
        .map(|(s4, m)| ((s4 / n - m * m).max(0.0) / n).sqrt())
        .collect();
    Ok(SimulationReport {
        mse: acc.err.iter().map(|e| e / n).collect(),
        sinr: acc.signal.iter().zip(&acc.disturbance).map(|(s, d)| s / d).collect(),
        ser: acc.errors.iter().map(|e| *e as f64 / n).collect(),
        v_variance,
        v_variance_se,
        avg_power: acc.power / n,
        symbols: acc.n,
        seed,
        identity_residual: acc.identity,
        in_voronoi: acc.in_voronoi,
    })
}

fn run_batch(
    design: &Design,
    hp: &ComplexMatrix,
    sigma: &[f64],
    c: ConstellationSpec,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Acc {
    let k = design.users();
    let b = design.feedback();
    let g = design.gains();
    let half = 0.5 * c.big_d;
    let mut acc = Acc::new(k);
    let mut s = vec![Complex64::new(0.0, 0.0); k];
    for _ in 0..count {
        for sk in s.iter_mut() {
            *sk = c.draw(rng);
        }
        let out = thp_precode(&s, b, design.precoder(), c.big_d);
        acc.power += out.x.iter().map(|z| z.norm_sqr()).sum::<f64>();
        for row in 0..k {
            let v = out.v[row];
            acc.in_voronoi &= (-half..half).contains(&v.re) && (-half..half).contains(&v.im);
            let n2 = v.norm_sqr();
            acc.v2[row] += n2;
            acc.v4[row] += n2 * n2;

            let mut u = v;
            for j in 0..row {
                u += b.get(row, j) * out.v[j];
            }
            let residual = (u - s[row] - out.i[row] * c.big_d).norm();
            acc.identity = acc.identity.max(residual);

            let noise = Complex64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
                * (sigma[row] * std::f64::consts::FRAC_1_SQRT_2);
            let received: Complex64 = (0..k).map(|j| hp.get(row, j) * out.v[j]).sum::<Complex64>() + noise;
            let u_hat = received * g[row];
            acc.err[row] += (u_hat - u).norm_sqr();

            let desired = hp.get(row, row) * g[row] * v;
            let mut z = u_hat;
            for j in 0..row {
                z -= b.get(row, j) * out.v[j];
            }
            acc.signal[row] += desired.norm_sqr();
            acc.disturbance[row] += (z - desired).norm_sqr();

            if c.nearest(modulo(u_hat, c.big_d)) != s[row] {
                acc.errors[row] += 1;
            }
        }
    }
    acc.n = count;
    acc
}
