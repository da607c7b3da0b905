//! Region sweeps: for each PU load, search the PU service rate, solve the
//! occupancy LP at each candidate and keep the best SU service rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{build_region_lp, recover_policy, simplex_solve, LpSolution, RegionLayout};
use crate::model::{ChannelModel, OperatingPoint, RegionCurve, RegionPoint, StationaryDistribution};

/// PU loads to sweep: an explicit list or an arithmetic range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl LambdaGrid {
    /// Grid values; the range includes `stop` when it lands on the grid
    /// (within a millionth of a step).
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaGrid::List(v) => v.clone(),
            LambdaGrid::Range { start, stop, step } => {
                let count = ((stop - start) / step + 1e-6).floor();
                if !(count >= 0.0) {
                    return Vec::new();
                }
                (0..=count as usize).map(|i| start + i as f64 * step).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_grid_points")]
    pub mu_p_grid_points: usize,
    #[serde(default = "default_refine_rounds")]
    pub refine_rounds: usize,
    #[serde(default = "default_refine_factor")]
    pub refine_factor: usize,
    #[serde(default = "default_lambda_grid")]
    pub lambda_p_grid: LambdaGrid,
}

fn default_grid_points() -> usize {
    400
}
fn default_refine_rounds() -> usize {
    2
}
fn default_refine_factor() -> usize {
    10
}
fn default_lambda_grid() -> LambdaGrid {
    LambdaGrid::Range { start: 0.0, stop: 0.58, step: 0.02 }
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            mu_p_grid_points: default_grid_points(),
            refine_rounds: default_refine_rounds(),
            refine_factor: default_refine_factor(),
            lambda_p_grid: default_lambda_grid(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mu_p_grid_points < 2 {
            return Err(Error::Config("mu_p_grid_points must be at least 2".into()));
        }
        if self.refine_rounds > 0 && self.refine_factor < 1 {
            return Err(Error::Config("refine_factor must be positive".into()));
        }
        match &self.lambda_p_grid {
            LambdaGrid::Range { step, start, stop } => {
                if !(*step > 0.0) {
                    return Err(Error::Config("lambda_p_grid step must be positive".into()));
                }
                if !(start.is_finite() && stop.is_finite()) {
                    return Err(Error::Config("lambda_p_grid bounds must be finite".into()));
                }
            }
            LambdaGrid::List(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config("lambda_p_grid contains a non-finite value".into()));
                }
            }
        }
        Ok(())
    }
}

/// Closed range of admissible PU service rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuPInterval {
    pub lo: f64,
    pub hi: f64,
}

impl MuPInterval {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }
}

/// `[max(lambda_p, f_pd), f_pd + (1 - f_pd) f_ps]`.
pub fn mu_p_interval(channel: &ChannelModel, lambda_p: f64) -> MuPInterval {
    MuPInterval { lo: lambda_p.max(channel.f_pd), hi: channel.max_mu_p() }
}

/// SU service rate left over when the PU is served directly only.
pub fn no_coop_boundary(channel: &ChannelModel, lambda_p: f64) -> f64 {
    if lambda_p >= channel.f_pd {
        return 0.0;
    }
    channel.f_sd * (1.0 - lambda_p / channel.f_pd)
}

struct Candidate {
    mu_p: f64,
    mu_s: f64,
    solution: LpSolution,
}

fn solve_at(channel: &ChannelModel, lambda_p: f64, mu_p: f64, k: usize) -> Option<Candidate> {
    let lp = build_region_lp(channel, lambda_p, mu_p, k).ok()?;
    let solution = simplex_solve(&lp);
    if !solution.is_optimal() {
        return None;
    }
    let mu_s = channel.f_sd * (1.0 - lambda_p / mu_p) * solution.objective_value;
    Some(Candidate { mu_p, mu_s, solution })
}

fn uniform(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![lo];
    }
    (0..points).map(|i| if i + 1 == points { hi } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 }).collect()
}

/// Maximizes the SU service rate at PU load `lambda_p` over the PU service
/// rate, by a uniform grid followed by local refinements around the best
/// point. Ties keep the smallest `mu_p`.
pub fn max_lambda_s(channel: &ChannelModel, lambda_p: f64, k: usize, cfg: &SweepConfig) -> Result<OperatingPoint> {
    channel.validate()?;
    cfg.validate()?;
    let iv = mu_p_interval(channel, lambda_p);
    if iv.is_empty() || !(lambda_p < iv.hi) || lambda_p < 0.0 {
        return Err(Error::Infeasible { lambda_p });
    }

    let stable = |m: &f64| *m > lambda_p;
    let mut best: Option<Candidate> = None;
    let consider = |grid: &[f64], best: &mut Option<Candidate>| {
        for &m in grid.iter().filter(|m| stable(m)) {
            if let Some(c) = solve_at(channel, lambda_p, m, k) {
                if best.as_ref().is_none_or(|b| c.mu_s > b.mu_s) {
                    *best = Some(c);
                }
            }
        }
    };

    let mut grid = uniform(iv.lo, iv.hi, cfg.mu_p_grid_points);
    let mut spacing = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
    consider(&grid, &mut best);
    for _ in 0..cfg.refine_rounds {
        let Some(center) = best.as_ref().map(|b| b.mu_p) else { break };
        if spacing <= 0.0 {
            break;
        }
        let lo = (center - spacing).max(iv.lo);
        let hi = (center + spacing).min(iv.hi);
        let fine = spacing / cfg.refine_factor as f64;
        let points = ((hi - lo) / fine).round() as usize + 1;
        grid = uniform(lo, hi, points.max(2));
        grid.retain(|&m| m != center);
        consider(&grid, &mut best);
        spacing = fine;
    }

    let best = best.ok_or(Error::Infeasible { lambda_p })?;
    operating_point(lambda_p, k, best)
}

fn operating_point(lambda_p: f64, k: usize, c: Candidate) -> Result<OperatingPoint> {
    let policy = recover_policy(&c.solution, k)?;
    let (pi, x, y) = RegionLayout { k }.split(&c.solution.values);
    // Simplex output is feasible to ~1e-9; renormalize so the distribution
    // invariant holds exactly.
    let pi_clean: Vec<f64> = pi.iter().map(|p| p.max(0.0)).collect();
    let total: f64 = pi_clean.iter().sum();
    let pi_clean: Vec<f64> = pi_clean.iter().map(|p| p / total).collect();
    Ok(OperatingPoint {
        lambda_p,
        mu_p: c.mu_p,
        mu_s: c.mu_s.max(0.0),
        pi: StationaryDistribution { pi: pi_clean },
        x: x.iter().map(|v| v.max(0.0)).collect(),
        y: y.iter().map(|v| v.max(0.0)).collect(),
        policy,
    })
}

/// A region curve together with the operating points behind each sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSweep {
    pub curve: RegionCurve,
    pub points: Vec<OperatingPoint>,
    /// PU loads whose LPs were all infeasible.
    pub omitted: Vec<f64>,
}

/// Sweeps `cfg.lambda_p_grid` for buffer size `k`. Grid points run in
/// parallel; the result is in grid order regardless of scheduling.
pub fn region_sweep(channel: &ChannelModel, k: usize, cfg: &SweepConfig) -> Result<RegionSweep> {
    channel.validate()?;
    cfg.validate()?;
    let mut loads = cfg.lambda_p_grid.values();
    loads.sort_by(|a, b| a.total_cmp(b));
    loads.dedup();
    let results: Vec<(f64, Result<OperatingPoint>)> =
        loads.par_iter().map(|&lp| (lp, max_lambda_s(channel, lp, k, cfg))).collect();

    let mut points = Vec::new();
    let mut omitted = Vec::new();
    for (lp, r) in results {
        match r {
            Ok(op) => points.push(op),
            Err(Error::Infeasible { .. }) => omitted.push(lp),
            Err(e) => return Err(e),
        }
    }
    let curve = RegionCurve {
        points: points.iter().map(|op| RegionPoint { lambda_p: op.lambda_p, lambda_s_sup: op.mu_s }).collect(),
        k,
        channel: *channel,
    };
    Ok(RegionSweep { curve, points, omitted })
}

/// Largest relative shortfall `(hi - lo) / hi` of curve `lo` below curve
/// `hi`, over the PU loads sampled by both where `hi` is positive.
pub fn max_relative_gap(lo: &RegionCurve, hi: &RegionCurve) -> Option<f64> {
    hi.points
        .iter()
        .filter(|p| p.lambda_s_sup > 0.0)
        .filter_map(|p| lo.at(p.lambda_p).map(|l| (p.lambda_s_sup - l) / p.lambda_s_sup))
        .reduce(f64::max)
}

pub fn region_curve(channel: &ChannelModel, k: usize, cfg: &SweepConfig) -> Result<RegionCurve> {
    region_sweep(channel, k, cfg).map(|s| s.curve)
}
