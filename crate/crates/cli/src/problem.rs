//! JSON problem and design files.
//!
//! A problem file:
//!
//! ```json
//! {
//!   "estimates": { "rows": 2, "cols": 2, "entries": [[1, 0], [0, 0], [0, 0], [1, 0]] },
//!   "sigma": [1.0, 1.0],
//!   "target_db": [6.0, 6.0],
//!   "uncertainty": { "kind": "sphere", "delta": 0.05 },
//!   "mode": "thp",
//!   "ordering": "blast"
//! }
//! ```
//!
//! `sigma` defaults to 1 per user. Give either `target_db` or `zeta`.
//! `ordering` is `"blast"`, `"weighted"` or an explicit permutation and
//! defaults to the identity.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use robust_precoding::design::{order_blast, order_weighted, DesignOutcome};
use robust_precoding::embed::embed_row;
use robust_precoding::experiments::UncertaintyKind;
use robust_precoding::{ComplexMatrix, Design, PrecodingMode, ProblemData, QosTargets, UncertaintyRegion};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UncertaintySpec {
    pub kind: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OrderingSpec {
    Rule(String),
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub estimates: ComplexMatrix,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub target_db: Option<Vec<f64>>,
    #[serde(default)]
    pub zeta: Option<Vec<f64>>,
    pub uncertainty: UncertaintySpec,
    pub mode: PrecodingMode,
    #[serde(default)]
    pub ordering: Option<OrderingSpec>,
}

impl ProblemFile {
    pub fn read(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {path}"))
    }

    pub fn to_data(&self) -> Result<ProblemData> {
        let h = &self.estimates;
        let k = h.nrows();
        let sigma = self.sigma.clone().unwrap_or_else(|| vec![1.0; k]);
        let targets = match (&self.target_db, &self.zeta) {
            (Some(db), None) => QosTargets::from_sinr_db(db)?,
            (None, Some(z)) => QosTargets::from_mse(z.clone())?,
            _ => bail!("give exactly one of target_db and zeta"),
        };
        let kind: UncertaintyKind = self.uncertainty.kind.parse()?;
        let delta = self.uncertainty.delta;
        let regions = (0..k)
            .map(|u| {
                let c = embed_row(&h.row(u));
                match kind {
                    UncertaintyKind::Sphere => UncertaintyRegion::spherical(c, delta),
                    UncertaintyKind::Interval => UncertaintyRegion::interval(c, &vec![delta; 2 * h.ncols()]),
                }
            })
            .collect::<robust_precoding::Result<Vec<_>>>()?;
        let data = ProblemData::new(h.clone(), sigma.clone(), targets, regions, self.mode)?;
        let order = match &self.ordering {
            None => return Ok(data),
            Some(OrderingSpec::Explicit(o)) => o.clone(),
            Some(OrderingSpec::Rule(r)) if r == "blast" => order_blast(h).order,
            Some(OrderingSpec::Rule(r)) if r == "weighted" => {
                let zeta = data.targets().zeta();
                let gamma: Vec<f64> = zeta.iter().map(|z| 1.0 / z - 1.0).collect();
                order_weighted(h, &gamma, &sigma)?
            }
            Some(OrderingSpec::Rule(r)) => return Err(anyhow!("unknown ordering rule {r:?}")),
        };
        Ok(data.with_ordering(order)?)
    }
}

/// Output of `design`, input of `verify` and `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    pub status: String,
    pub power: Option<f64>,
    /// `ordering[i]` is the user served by stream `i`.
    pub ordering: Vec<usize>,
    pub intersection: String,
    pub certificates: Vec<f64>,
    pub design: Option<Design>,
}

impl DesignFile {
    pub fn from_outcome(o: &DesignOutcome) -> Self {
        Self {
            status: format!("{:?}", o.status).to_lowercase(),
            power: o.power,
            ordering: o.ordering.clone(),
            intersection: format!("{:?}", o.intersection).to_lowercase(),
            certificates: o.certificates.clone(),
            design: o.design.clone(),
        }
    }

    pub fn read(path: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {path}"))
    }

    /// The stored design, re-validated.
    pub fn design(&self) -> Result<Design> {
        let d = self.design.as_ref().ok_or_else(|| anyhow!("design file holds no design (status {})", self.status))?;
        Ok(Design::new(d.precoder().clone(), d.feedback().clone(), d.gains().to_vec())?)
    }
}
