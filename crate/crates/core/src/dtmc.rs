//! Birth-death model of the relay queue and the policy evaluator.
//!
//! The relay queue moves up when the PU is busy, its packet misses the
//! destination, the SU overhears it and admits it; it moves down when the PU
//! is idle, the SU picks the relay queue and the destination decodes the
//! packet. The PU busy probability `lambda_p / mu_p` depends on `mu_p`, which
//! in turn depends on the stationary distribution, so evaluating a policy
//! means solving a scalar fixed point in `mu_p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError, Violation};
use crate::model::{ChannelModel, OperatingPoint, PolicyProfile, StationaryDistribution};

/// Per-state transition probabilities of the relay queue chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathRates {
    /// Probability of moving from state `i` to `i + 1`.
    pub arrivals: Vec<f64>,
    /// Probability of moving from state `i` to `i - 1`.
    pub services: Vec<f64>,
}

impl BirthDeathRates {
    pub fn new(arrivals: Vec<f64>, services: Vec<f64>) -> Result<Self> {
        let r = Self { arrivals, services };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut v = Vec::new();
        let n = self.arrivals.len();
        if self.services.len() != n {
            v.push(Violation::WrongLength { field: "services", expected: n, found: self.services.len() });
        }
        for (field, vals) in [("arrivals", &self.arrivals), ("services", &self.services)] {
            for (i, &p) in vals.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    v.push(Violation::ProbabilityOutOfRange { field: format!("{field}[{i}]"), value: p });
                }
            }
        }
        // Up and down moves from one state are mutually exclusive events.
        for (i, (l, m)) in self.arrivals.iter().zip(&self.services).enumerate() {
            if l + m > 1.0 + 1e-12 {
                v.push(Violation::ProbabilityOutOfRange {
                    field: format!("arrivals[{i}] + services[{i}]"),
                    value: l + m,
                });
            }
        }
        if let Some(&top) = self.arrivals.last() {
            if top != 0.0 {
                v.push(Violation::AdmitWhenFull(top));
            }
        }
        if let Some(&bottom) = self.services.first() {
            if bottom != 0.0 {
                v.push(Violation::ProbabilityOutOfRange { field: "services[0]".into(), value: bottom });
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: v })
        }
    }
}

/// Transition probabilities of the relay queue for a given policy, PU load
/// and PU service rate.
pub fn policy_rates(
    policy: &PolicyProfile,
    channel: &ChannelModel,
    lambda_p: f64,
    mu_p: f64,
) -> Result<BirthDeathRates> {
    if !(lambda_p < mu_p) || mu_p > 1.0 {
        return Err(Error::UnstablePrimary { lambda_p, mu_p });
    }
    if lambda_p < 0.0 {
        return Err(ValidationError {
            violations: vec![Violation::ProbabilityOutOfRange { field: "lambda_p".into(), value: lambda_p }],
        }
        .into());
    }
    Ok(rates_unchecked(policy, channel, lambda_p / mu_p))
}

fn rates_unchecked(policy: &PolicyProfile, channel: &ChannelModel, busy: f64) -> BirthDeathRates {
    let up = busy * channel.relay_gain();
    let down = (1.0 - busy) * channel.f_sd;
    BirthDeathRates {
        arrivals: policy.admit.iter().map(|a| up * a).collect(),
        services: policy.select_own.iter().map(|b| down * (1.0 - b)).collect(),
    }
}

/// Stationary distribution of the relay queue chain started from the empty
/// state.
///
/// The chain climbs from state 0 until the first state `r` it cannot leave
/// upwards. If some state `m <= r` cannot be left downwards either, the
/// states below `m` are transient and the mass sits on `m..=r`, the highest
/// closed segment. Within the segment the detailed balance
/// `pi[j + 1] * services[j + 1] = pi[j] * arrivals[j]` fixes the shape.
pub fn birth_death_stationary(rates: &BirthDeathRates) -> StationaryDistribution {
    let n = rates.arrivals.len();
    if n == 0 {
        return StationaryDistribution { pi: Vec::new() };
    }
    let top = rates.arrivals.iter().position(|&l| l == 0.0).unwrap_or(n - 1);
    let bottom = (1..=top).rev().find(|&j| rates.services[j] == 0.0).unwrap_or(0);

    let mut pi = vec![0.0; n];
    pi[bottom] = 1.0;
    for j in bottom..top {
        let next = pi[j] * rates.arrivals[j] / rates.services[j + 1];
        pi[j + 1] = next;
        if next > 1e200 {
            for p in &mut pi[bottom..=j + 1] {
                *p *= 1e-200;
            }
        }
    }
    let total: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= total;
    }
    StationaryDistribution { pi }
}

/// Largest violation of the detailed balance equations.
pub fn balance_residual(rates: &BirthDeathRates, pi: &[f64]) -> f64 {
    (0..pi.len().saturating_sub(1))
        .map(|j| (pi[j + 1] * rates.services[j + 1] - pi[j] * rates.arrivals[j]).abs())
        .fold(0.0, f64::max)
}

/// Number of grid points used to bracket fixed-point roots.
pub const ROOT_SCAN_POINTS: usize = 256;
/// Bracket width at which bisection stops.
pub const ROOT_TOL: f64 = 1e-13;
/// Accepted residual of the self-consistency equation.
pub const FIXED_POINT_RESIDUAL_TOL: f64 = 1e-8;
const LOWER_MARGIN: f64 = 1e-6;

/// Result of a policy evaluation, with every self-consistent `mu_p` that was
/// found. `point` uses the largest one.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub point: OperatingPoint,
    pub candidate_roots: Vec<f64>,
}

impl Evaluation {
    pub fn has_multiple_roots(&self) -> bool {
        self.candidate_roots.len() > 1
    }
}

struct FixedPoint<'a> {
    policy: &'a PolicyProfile,
    channel: &'a ChannelModel,
    lambda_p: f64,
}

impl FixedPoint<'_> {
    fn stationary(&self, mu_p: f64) -> StationaryDistribution {
        birth_death_stationary(&rates_unchecked(self.policy, self.channel, self.lambda_p / mu_p))
    }

    fn admitted_mass(&self, pi: &StationaryDistribution) -> f64 {
        self.policy.admit.iter().zip(&pi.pi).map(|(a, p)| a * p).sum()
    }

    /// `mu_p` minus the service rate it induces.
    fn gap(&self, mu_p: f64) -> f64 {
        let pi = self.stationary(mu_p);
        mu_p - (self.channel.f_pd + self.channel.relay_gain() * self.admitted_mass(&pi))
    }

    fn bisect(&self, mut lo: f64, mut hi: f64, mut g_lo: f64) -> f64 {
        for _ in 0..200 {
            if hi - lo <= ROOT_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let g_mid = self.gap(mid);
            if g_mid == 0.0 {
                return mid;
            }
            if (g_mid < 0.0) == (g_lo < 0.0) {
                lo = mid;
                g_lo = g_mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn roots(&self) -> Vec<f64> {
        let hi = self.channel.max_mu_p();
        let lo = self.lambda_p.max(self.channel.f_pd - LOWER_MARGIN);
        if !(lo < hi) {
            return Vec::new();
        }
        let n = ROOT_SCAN_POINTS;
        let grid: Vec<f64> = (0..n)
            .map(|k| {
                if k == 0 && lo == self.lambda_p {
                    lo + (hi - lo) * 1e-9
                } else if k == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (n - 1) as f64
                }
            })
            .collect();
        let gaps: Vec<f64> = grid.iter().map(|&m| self.gap(m)).collect();

        let mut roots = Vec::new();
        for k in 0..n {
            if gaps[k].abs() <= 1e-14 {
                roots.push(grid[k]);
            } else if k + 1 < n && gaps[k + 1].abs() > 1e-14 && (gaps[k] < 0.0) != (gaps[k + 1] < 0.0) {
                roots.push(self.bisect(grid[k], grid[k + 1], gaps[k]));
            }
        }
        roots.retain(|&m| {
            m > self.lambda_p && m >= self.channel.f_pd - ROOT_TOL && self.gap(m).abs() <= FIXED_POINT_RESIDUAL_TOL
        });
        roots
    }
}

/// Evaluates `policy` at PU load `lambda_p`: finds the self-consistent PU
/// service rate and the SU service rate it leaves.
pub fn evaluate_policy(policy: &PolicyProfile, channel: &ChannelModel, lambda_p: f64) -> Result<OperatingPoint> {
    evaluate_policy_detailed(policy, channel, lambda_p).map(|e| e.point)
}

pub fn evaluate_policy_detailed(policy: &PolicyProfile, channel: &ChannelModel, lambda_p: f64) -> Result<Evaluation> {
    channel.validate()?;
    policy.validate()?;
    if !(0.0..1.0).contains(&lambda_p) {
        if lambda_p >= 1.0 {
            return Err(Error::NoStableRoot { lambda_p });
        }
        return Err(ValidationError {
            violations: vec![Violation::ProbabilityOutOfRange { field: "lambda_p".into(), value: lambda_p }],
        }
        .into());
    }

    let fp = FixedPoint { policy, channel, lambda_p };
    let roots = fp.roots();
    let Some(&root) = roots.iter().max_by(|a, b| a.total_cmp(b)) else {
        return Err(Error::NoStableRoot { lambda_p });
    };
    let mu_p = root.clamp(channel.f_pd, channel.max_mu_p());
    if !(lambda_p < mu_p) {
        return Err(Error::NoStableRoot { lambda_p });
    }

    let pi = fp.stationary(mu_p);
    let x: Vec<f64> = policy.admit.iter().zip(&pi.pi).map(|(a, p)| a * p).collect();
    let y: Vec<f64> = policy.select_own.iter().zip(&pi.pi).map(|(b, p)| b * p).collect();
    let mu_s = channel.f_sd * (1.0 - lambda_p / mu_p) * y.iter().sum::<f64>();
    Ok(Evaluation {
        point: OperatingPoint { lambda_p, mu_p, mu_s, pi, x, y, policy: policy.clone() },
        candidate_roots: roots,
    })
}

/// Residual of the self-consistency equation at an operating point.
pub fn fixed_point_residual(point: &OperatingPoint, channel: &ChannelModel) -> f64 {
    let admitted: f64 = point.policy.admit.iter().zip(&point.pi.pi).map(|(a, p)| a * p).sum();
    (point.mu_p - channel.f_pd - channel.relay_gain() * admitted).abs()
}
