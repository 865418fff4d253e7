//! Per-user MSE of the linearized THP chain and the SINR it implies.
//!
//! With precoder `P`, strictly lower feedback `B` and real receiver gains
//! `g`, user `k`'s error on its modified symbol is
//! `(g_k h_k P - m_k - b_k) v + g_k n_k`, so under `E{v v^H} = I`
//!
//! ```text
//! MSE_k = || [ g_k h_k P - m_k - b_k ,  g_k sigma_k ] ||^2
//! ```
//!
//! where `m_k` and `b_k` are the k-th rows of `I` and `B`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::embed::{embed_matrix, embed_row, ComplexMatrix};
use crate::error::{Error, Result};

/// Transceiver triple: precoder, feedback and receiver gains.
///
/// Users are indexed in precoding order: user `k` may have interference
/// from users `j < k` pre-subtracted through row `k` of `feedback`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    precoder: ComplexMatrix,
    feedback: ComplexMatrix,
    gains: Vec<f64>,
}

impl Design {
    pub fn new(precoder: ComplexMatrix, feedback: ComplexMatrix, gains: Vec<f64>) -> Result<Self> {
        let k = precoder.ncols();
        if feedback.nrows() != k || feedback.ncols() != k {
            return Err(Error::Dimension(format!(
                "feedback must be {k}x{k}, got {}x{}",
                feedback.nrows(),
                feedback.ncols()
            )));
        }
        if gains.len() != k {
            return Err(Error::Dimension(format!("expected {k} gains, got {}", gains.len())));
        }
        for i in 0..k {
            for j in i..k {
                if feedback.get(i, j) != Complex64::new(0.0, 0.0) {
                    return Err(Error::InvalidDesign(format!(
                        "feedback entry ({i},{j}) on or above the diagonal is non-zero"
                    )));
                }
            }
        }
        if gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidDesign("receiver gains must be positive".into()));
        }
        Ok(Self {
            precoder,
            feedback,
            gains,
        })
    }

    /// Linear precoding: zero feedback.
    pub fn linear(precoder: ComplexMatrix, gains: Vec<f64>) -> Result<Self> {
        let k = precoder.ncols();
        Self::new(precoder, ComplexMatrix::zeros(k, k), gains)
    }

    pub fn precoder(&self) -> &ComplexMatrix {
        &self.precoder
    }

    pub fn feedback(&self) -> &ComplexMatrix {
        &self.feedback
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn users(&self) -> usize {
        self.precoder.ncols()
    }

    pub fn antennas(&self) -> usize {
        self.precoder.nrows()
    }

    /// Average transmit power `tr(P^H P)` under unit-variance streams.
    pub fn power(&self) -> f64 {
        self.precoder.frobenius_sq()
    }

    pub fn is_linear(&self) -> bool {
        self.feedback.as_dmatrix().iter().all(|z| z.norm_sqr() == 0.0)
    }

    /// Error coefficients `g_k h P - m_k - b_k` on the precoded streams.
    pub fn error_row(&self, k: usize, h: &[Complex64]) -> Vec<Complex64> {
        let g = self.gains[k];
        let hp = ComplexMatrix::row_times(h, &self.precoder);
        hp.iter()
            .enumerate()
            .map(|(j, z)| {
                let m = if j == k { 1.0 } else { 0.0 };
                g * z - m - self.feedback.get(k, j)
            })
            .collect()
    }
}

/// Per-user MSE ceilings `zeta_k`, optionally derived from SINR floors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosTargets {
    zeta: Vec<f64>,
    sinr_floors: Option<Vec<f64>>,
}

impl QosTargets {
    pub fn from_mse(zeta: Vec<f64>) -> Result<Self> {
        if zeta.is_empty() {
            return Err(Error::InvalidArgument("no targets".into()));
        }
        if zeta.iter().any(|z| !(*z > 0.0 && *z <= 1.0)) {
            return Err(Error::InvalidArgument("MSE targets must lie in (0, 1]".into()));
        }
        Ok(Self {
            zeta,
            sinr_floors: None,
        })
    }

    /// `zeta_k = 1 / (1 + gamma_k)` for linear SINR floors `gamma_k >= 0`.
    pub fn from_sinr(gamma: Vec<f64>) -> Result<Self> {
        if gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::InvalidArgument("SINR floors must be finite and non-negative".into()));
        }
        let zeta = gamma.iter().map(|g| 1.0 / (1.0 + g)).collect();
        let mut t = Self::from_mse(zeta)?;
        t.sinr_floors = Some(gamma);
        Ok(t)
    }

    pub fn from_sinr_db(gamma_db: &[f64]) -> Result<Self> {
        Self::from_sinr(gamma_db.iter().map(|d| db_to_linear(*d)).collect())
    }

    /// Same target for each of `k` users.
    pub fn uniform_sinr_db(gamma_db: f64, k: usize) -> Result<Self> {
        Self::from_sinr_db(&vec![gamma_db; k])
    }

    pub fn zeta(&self) -> &[f64] {
        &self.zeta
    }

    pub fn sinr_floors(&self) -> Option<&[f64]> {
        self.sinr_floors.as_deref()
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    /// Targets reordered so entry `p` is the target of user `order[p]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            zeta: order.iter().map(|&i| self.zeta[i]).collect(),
            sinr_floors: self
                .sinr_floors
                .as_ref()
                .map(|g| order.iter().map(|&i| g[i]).collect()),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Closed-form MSE of user `k` on channel `h`.
pub fn mse(design: &Design, k: usize, h: &[Complex64], sigma: f64) -> f64 {
    debug_assert!(sigma >= 0.0);
    let g = design.gains[k];
    let err: f64 = design.error_row(k, h).iter().map(|z| z.norm_sqr()).sum();
    err + g * g * sigma * sigma
}

/// Same quantity evaluated through the real embedding,
/// `g_k^2 || [h P - f_k m_k - b_k / g_k, sigma_k] ||^2`.
pub fn mse_embedded(design: &Design, k: usize, h: &[Complex64], sigma: f64) -> f64 {
    let g = design.gains[k];
    let f = 1.0 / g;
    let kk = design.users();
    let row = embed_row(h).times(&embed_matrix(&design.precoder));
    let mut acc = 0.0;
    for j in 0..kk {
        let b = design.feedback.get(k, j) * f;
        let m = if j == k { f } else { 0.0 };
        let re = row[j] - m - b.re;
        let im = row[kk + j] - b.im;
        acc += re * re + im * im;
    }
    g * g * (acc + sigma * sigma)
}

/// Decision statistic of user `k` written as `a_k v_k + sum_i a_i v_i + a_0 n_k`
/// after the known feedback term has been removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrDecomposition {
    pub user: usize,
    pub desired: Complex64,
    /// `(stream, coefficient)` for every stream other than `user`.
    pub interference: Vec<(usize, Complex64)>,
    pub noise_gain: f64,
}

impl SinrDecomposition {
    /// Full coefficient row `[a_1 .. a_K]`.
    pub fn row(&self) -> Vec<Complex64> {
        let mut row = vec![Complex64::new(0.0, 0.0); self.interference.len() + 1];
        row[self.user] = self.desired;
        for &(i, a) in &self.interference {
            row[i] = a;
        }
        row
    }
}

pub fn decompose(design: &Design, k: usize, h: &[Complex64]) -> SinrDecomposition {
    let g = design.gains[k];
    let hp = ComplexMatrix::row_times(h, &design.precoder);
    let a: Vec<Complex64> = hp
        .iter()
        .enumerate()
        .map(|(j, z)| g * z - design.feedback.get(k, j))
        .collect();
    SinrDecomposition {
        user: k,
        desired: a[k],
        interference: a
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(j, z)| (j, *z))
            .collect(),
        noise_gain: g,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinrFlag {
    Regular,
    /// Desired coefficient is zero; value reported as 0.
    Degenerate,
    /// No interference and no noise; value is `+inf`.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sinr {
    pub value: f64,
    pub flag: SinrFlag,
}

pub fn sinr(design: &Design, k: usize, h: &[Complex64], sigma: f64) -> Sinr {
    let d = decompose(design, k, h);
    let signal = d.desired.norm_sqr();
    let disturbance: f64 = d.interference.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>()
        + d.noise_gain * d.noise_gain * sigma * sigma;
    if signal == 0.0 {
        return Sinr {
            value: 0.0,
            flag: SinrFlag::Degenerate,
        };
    }
    if disturbance == 0.0 {
        return Sinr {
            value: f64::INFINITY,
            flag: SinrFlag::Unbounded,
        };
    }
    Sinr {
        value: signal / disturbance,
        flag: SinrFlag::Regular,
    }
}

/// SINR guaranteed by an MSE ceiling `zeta`: `1/zeta - 1`.
pub fn sinr_floor_from_mse(zeta: f64) -> Result<f64> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "MSE ceiling must lie in (0, 1], got {zeta}"
        )));
    }
    Ok(1.0 / zeta - 1.0)
}
