//! Domain types shared by the analysis, the LP, the optimizer and the simulator.
//!
//! Every type serializes to JSON with the field names used throughout the
//! project (`f_pd`, `K`, `select_own`, ...). Values are plain data; the
//! `validate` methods check the invariants and the rest of the crate calls
//! them at its entry points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, Violation};

/// Tolerance on `sum(pi) == 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Non-fatal findings reported alongside a successful validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    /// The relay link is not better than the direct link, so cooperation
    /// cannot widen the region.
    DirectLinkNotWorse,
}

impl std::fmt::Display for Warning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Warning::DirectLinkNotWorse => {
                write!(f, "f_pd >= f_sd: relaying through the SU does not help the PU")
            }
        }
    }
}

fn check_probability(field: impl Into<String>, value: f64, out: &mut Vec<Violation>) {
    if !(0.0..=1.0).contains(&value) {
        out.push(Violation::ProbabilityOutOfRange { field: field.into(), value });
    }
}

fn finish(violations: Vec<Violation>) -> Result<(), ValidationError> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationError { violations })
    }
}

/// Link success probabilities: PU to destination, PU to SU, SU to destination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub f_pd: f64,
    pub f_ps: f64,
    pub f_sd: f64,
}

impl ChannelModel {
    pub fn new(f_pd: f64, f_ps: f64, f_sd: f64) -> Result<Self> {
        let c = Self { f_pd, f_ps, f_sd };
        c.validate()?;
        Ok(c)
    }

    /// The channel used for the reference figure: (0.3, 0.4, 0.8).
    pub fn reference() -> Self {
        Self { f_pd: 0.3, f_ps: 0.4, f_sd: 0.8 }
    }

    pub fn validate(&self) -> Result<Vec<Warning>, ValidationError> {
        let mut violations = Vec::new();
        check_probability("f_pd", self.f_pd, &mut violations);
        check_probability("f_ps", self.f_ps, &mut violations);
        check_probability("f_sd", self.f_sd, &mut violations);
        if self.f_pd == 0.0 {
            violations.push(Violation::ZeroDirectLink);
        }
        finish(violations)?;

        let mut warnings = Vec::new();
        if self.f_pd >= self.f_sd {
            warnings.push(Warning::DirectLinkNotWorse);
        }
        Ok(warnings)
    }

    /// Probability that a PU packet misses the destination but reaches the
    /// SU: `(1 - f_pd) * f_ps`.
    pub fn relay_gain(&self) -> f64 {
        (1.0 - self.f_pd) * self.f_ps
    }

    /// Largest achievable PU service rate, reached when every overheard
    /// packet is admitted.
    pub fn max_mu_p(&self) -> f64 {
        self.f_pd + self.relay_gain()
    }
}

/// Cooperation policy indexed by the relay queue occupancy `0..=K`.
///
/// `admit[i]` is the probability of buffering an overheard PU packet when the
/// relay queue holds `i` packets; `select_own[i]` the probability that the SU
/// serves its own queue in an idle slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyProfile {
    #[serde(rename = "K")]
    pub k: usize,
    pub admit: Vec<f64>,
    pub select_own: Vec<f64>,
}

impl PolicyProfile {
    pub fn new(admit: Vec<f64>, select_own: Vec<f64>) -> Result<Self> {
        let k = admit.len().saturating_sub(1);
        let p = Self { k, admit, select_own };
        p.validate()?;
        Ok(p)
    }

    /// The only policy allowed when there is no relay buffer.
    pub fn no_cooperation() -> Self {
        Self { k: 0, admit: vec![0.0], select_own: vec![1.0] }
    }

    /// Admit whenever there is room; always serve the relay queue when it is
    /// non-empty.
    pub fn full_cooperation(k: usize) -> Self {
        let mut admit = vec![1.0; k + 1];
        admit[k] = 0.0;
        let mut select_own = vec![0.0; k + 1];
        select_own[0] = 1.0;
        Self { k, admit, select_own }
    }

    pub fn states(&self) -> usize {
        self.k + 1
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Vec::new();
        let n = self.k + 1;
        if self.admit.len() != n {
            v.push(Violation::WrongLength { field: "admit", expected: n, found: self.admit.len() });
        }
        if self.select_own.len() != n {
            v.push(Violation::WrongLength { field: "select_own", expected: n, found: self.select_own.len() });
        }
        for (i, &a) in self.admit.iter().enumerate() {
            check_probability(format!("admit[{i}]"), a, &mut v);
        }
        for (i, &b) in self.select_own.iter().enumerate() {
            check_probability(format!("select_own[{i}]"), b, &mut v);
        }
        if self.admit.len() == n && self.admit[self.k] != 0.0 {
            v.push(Violation::AdmitWhenFull(self.admit[self.k]));
        }
        if let Some(&b0) = self.select_own.first() {
            if b0 != 1.0 {
                v.push(Violation::SelectOwnWhenEmpty(b0));
            }
        }
        finish(v)
    }
}

/// Stationary probabilities of the relay queue occupancy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
}

impl StationaryDistribution {
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        let d = Self { pi };
        d.validate()?;
        Ok(d)
    }

    /// Point mass on state 0 of a chain with `k + 1` states.
    pub fn empty_queue(k: usize) -> Self {
        let mut pi = vec![0.0; k + 1];
        pi[0] = 1.0;
        Self { pi }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Vec::new();
        for (i, &p) in self.pi.iter().enumerate() {
            if !(p >= 0.0) {
                v.push(Violation::ProbabilityOutOfRange { field: format!("pi[{i}]"), value: p });
            }
        }
        let sum: f64 = self.pi.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            v.push(Violation::NotNormalized(sum));
        }
        finish(v)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Total-variation distance to another distribution over the same
    /// states (missing entries count as zero).
    pub fn total_variation(&self, other: &[f64]) -> f64 {
        let n = self.pi.len().max(other.len());
        let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        0.5 * (0..n).map(|i| (get(&self.pi, i) - get(other, i)).abs()).sum::<f64>()
    }
}

/// A solved operating point: PU load, both service rates, the relay queue
/// distribution, the occupancy vectors and the policy that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub lambda_p: f64,
    pub mu_p: f64,
    pub mu_s: f64,
    pub pi: StationaryDistribution,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub policy: PolicyProfile,
}

impl OperatingPoint {
    /// Checks the structural invariants against `channel`, with `tol` slack on
    /// the floating-point comparisons.
    pub fn check(&self, channel: &ChannelModel, tol: f64) -> Result<()> {
        if !(self.lambda_p < self.mu_p) {
            return Err(Error::UnstablePrimary { lambda_p: self.lambda_p, mu_p: self.mu_p });
        }
        let (lo, hi) = (channel.f_pd, channel.max_mu_p());
        if self.mu_p < lo - tol || self.mu_p > hi + tol {
            return Err(Error::MuPOutOfRange { mu_p: self.mu_p, lambda_p: self.lambda_p, lo, hi });
        }
        for (i, &p) in self.pi.pi.iter().enumerate() {
            for (what, v) in [("x", self.x[i]), ("y", self.y[i])] {
                if v < -tol || v > p + tol {
                    return Err(Error::InconsistentSolution { state: i, what, value: v, pi: p });
                }
            }
        }
        Ok(())
    }
}

/// One boundary sample of the stable throughput region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionPoint {
    pub lambda_p: f64,
    /// Supremum of the SU arrival rates that keep every queue stable; the
    /// region itself is open, so this value is not attained.
    pub lambda_s_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCurve {
    pub points: Vec<RegionPoint>,
    #[serde(rename = "K")]
    pub k: usize,
    pub channel: ChannelModel,
}

impl RegionCurve {
    /// `lambda_p` strictly increasing and `lambda_s_sup` non-increasing
    /// (up to `slack`).
    pub fn is_well_ordered(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| w[1].lambda_p > w[0].lambda_p && w[1].lambda_s_sup <= w[0].lambda_s_sup + slack)
    }

    /// Largest `lambda_p` on the curve.
    pub fn lambda_p_extent(&self) -> Option<f64> {
        self.points.last().map(|p| p.lambda_p)
    }

    pub fn at(&self, lambda_p: f64) -> Option<f64> {
        self.points.iter().find(|p| (p.lambda_p - lambda_p).abs() < 1e-12).map(|p| p.lambda_s_sup)
    }
}
