//! The fixed-`mu_p` linear program over occupancy variables and its solver.
//!
//! Substituting `x_i = a_i * pi_i` and `y_i = b_i * pi_i` turns the policy
//! search at a fixed PU service rate into an LP over `(pi, x, y)`. Variables
//! are ordered `pi_0..pi_K, x_0..x_K, y_0..y_K`.

mod simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use simplex::{solve, PivotRule, SimplexOptions};

use crate::error::{Error, Result};
use crate::model::{ChannelModel, PolicyProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Eq => "=",
            Relation::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpConstraint {
    pub name: String,
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LpConstraint {
    fn violation(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coefficients.iter().zip(x).map(|(a, v)| a * v).sum();
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A maximization LP with row constraints and per-variable bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInstance {
    pub objective: Vec<f64>,
    pub constraints: Vec<LpConstraint>,
    pub variable_bounds: Vec<(f64, f64)>,
    pub variable_names: Vec<String>,
}

impl LpInstance {
    pub fn new(objective: Vec<f64>, variable_bounds: Vec<(f64, f64)>) -> Self {
        let variable_names = (0..objective.len()).map(|j| format!("v{j}")).collect();
        Self { objective, constraints: Vec::new(), variable_bounds, variable_names }
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, coefficients: Vec<f64>, relation: Relation, rhs: f64) {
        self.constraints.push(LpConstraint { name: name.into(), coefficients, relation, rhs });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objective.len();
        if self.variable_bounds.len() != n || self.variable_names.len() != n {
            return Err(Error::MalformedLp("bounds/names do not match the objective width".into()));
        }
        if let Some(c) = self.constraints.iter().find(|c| c.coefficients.len() != n) {
            return Err(Error::MalformedLp(format!("row {} has width {}, expected {n}", c.name, c.coefficients.len())));
        }
        if let Some(j) = self.variable_bounds.iter().position(|(l, u)| !(l <= u)) {
            return Err(Error::MalformedLp(format!("variable {} has lower > upper", self.variable_names[j])));
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(x)).fold(0.0, f64::max);
        let bounds =
            self.variable_bounds.iter().zip(x).map(|(&(l, u), &v)| (l - v).max(v - u).max(0.0)).fold(0.0, f64::max);
        rows.max(bounds)
    }

    /// Scales the objective by `factor`.
    pub fn scaled_objective(&self, factor: f64) -> Self {
        Self { objective: self.objective.iter().map(|c| c * factor).collect(), ..self.clone() }
    }

    /// Renders the instance in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let term_list = |coef: &[f64]| -> String {
            let mut s = String::new();
            for (a, name) in coef.iter().zip(&self.variable_names) {
                if *a == 0.0 {
                    continue;
                }
                let sign = if *a < 0.0 { '-' } else { '+' };
                let _ = write!(s, " {sign} {} {name}", a.abs());
            }
            if s.is_empty() {
                s.push_str(" 0");
            }
            s
        };
        out.push_str("Maximize\n");
        let _ = writeln!(out, " obj:{}", term_list(&self.objective));
        out.push_str("Subject To\n");
        for c in &self.constraints {
            let _ = writeln!(out, " {}:{} {} {}", c.name, term_list(&c.coefficients), c.relation.symbol(), c.rhs);
        }
        out.push_str("Bounds\n");
        for (name, &(l, u)) in self.variable_names.iter().zip(&self.variable_bounds) {
            let lo = if l.is_finite() { l.to_string() } else { "-inf".to_string() };
            let hi = if u.is_finite() { u.to_string() } else { "+inf".to_string() };
            let _ = writeln!(out, " {lo} <= {name} <= {hi}");
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The solver stalled or its answer failed the post-solve feasibility
    /// check.
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective_value: f64,
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

/// Solves with default tolerances.
pub fn simplex_solve(lp: &LpInstance) -> LpSolution {
    solve(lp, &SimplexOptions::default())
}

/// Index helpers for the `(pi, x, y)` variable layout.
#[derive(Debug, Clone, Copy)]
pub struct RegionLayout {
    pub k: usize,
}

impl RegionLayout {
    pub fn states(self) -> usize {
        self.k + 1
    }
    pub fn width(self) -> usize {
        3 * self.states()
    }
    pub fn pi(self, i: usize) -> usize {
        i
    }
    pub fn x(self, i: usize) -> usize {
        self.states() + i
    }
    pub fn y(self, i: usize) -> usize {
        2 * self.states() + i
    }

    pub fn split(self, values: &[f64]) -> (&[f64], &[f64], &[f64]) {
        let n = self.states();
        (&values[..n], &values[n..2 * n], &values[2 * n..3 * n])
    }
}

/// Builds the occupancy LP at a fixed PU service rate. The objective is
/// `sum(y)`; multiply by `f_sd * (1 - lambda_p / mu_p)` to get `mu_s`.
pub fn build_region_lp(channel: &ChannelModel, lambda_p: f64, mu_p: f64, k: usize) -> Result<LpInstance> {
    channel.validate()?;
    let (lo, hi) = (lambda_p.max(channel.f_pd), channel.max_mu_p());
    if !(mu_p >= lo && mu_p <= hi) {
        return Err(Error::MuPOutOfRange { mu_p, lambda_p, lo, hi });
    }
    if !(lambda_p < mu_p) {
        return Err(Error::UnstablePrimary { lambda_p, mu_p });
    }

    let lay = RegionLayout { k };
    let n = lay.states();
    let w = lay.width();
    let gain = channel.relay_gain();

    let mut objective = vec![0.0; w];
    for i in 0..n {
        objective[lay.y(i)] = 1.0;
    }
    let bounds = vec![(0.0, 1.0); w];
    let mut names = Vec::with_capacity(w);
    names.extend((0..n).map(|i| format!("pi_{i}")));
    names.extend((0..n).map(|i| format!("x_{i}")));
    names.extend((0..n).map(|i| format!("y_{i}")));
    let mut lp = LpInstance { objective, constraints: Vec::new(), variable_bounds: bounds, variable_names: names };

    let row = |entries: &[(usize, f64)]| {
        let mut r = vec![0.0; w];
        for &(j, a) in entries {
            r[j] += a;
        }
        r
    };

    let mut sum_pi = vec![0.0; w];
    sum_pi[..n].fill(1.0);
    lp.add_constraint("normalize", sum_pi, Relation::Eq, 1.0);

    for i in 0..n {
        lp.add_constraint(format!("x_cap_{i}"), row(&[(lay.x(i), 1.0), (lay.pi(i), -1.0)]), Relation::Le, 0.0);
    }
    for i in 0..n {
        lp.add_constraint(format!("y_cap_{i}"), row(&[(lay.y(i), 1.0), (lay.pi(i), -1.0)]), Relation::Le, 0.0);
    }

    let mut sum_x = vec![0.0; w];
    sum_x[n..2 * n].fill(1.0);
    let mut sum_y = vec![0.0; w];
    sum_y[2 * n..].fill(1.0);
    lp.add_constraint("x_total", sum_x.clone(), Relation::Le, 1.0);
    lp.add_constraint("y_total", sum_y, Relation::Le, 1.0);

    lp.add_constraint("no_admit_full", row(&[(lay.x(k), 1.0)]), Relation::Eq, 0.0);
    lp.add_constraint("own_when_empty", row(&[(lay.y(0), 1.0), (lay.pi(0), -1.0)]), Relation::Eq, 0.0);

    lp.add_constraint("pu_service", sum_x, Relation::Eq, (mu_p - channel.f_pd) / gain);

    let idle = mu_p - lambda_p;
    let inflow = lambda_p / channel.f_sd * gain;
    for j in 0..k {
        lp.add_constraint(
            format!("balance_{j}"),
            row(&[(lay.pi(j + 1), idle), (lay.y(j + 1), -idle), (lay.x(j), -inflow)]),
            Relation::Eq,
            0.0,
        );
    }
    Ok(lp)
}

/// Threshold below which a state is treated as unreachable.
pub const UNREACHABLE_PI: f64 = 1e-9;
const CONSISTENCY_TOL: f64 = 1e-7;

/// Turns an optimal `(pi, x, y)` back into admission and selection
/// probabilities. Unreachable states get `a_i = b_i = 0` apart from the
/// forced `a_K = 0` and `b_0 = 1`.
pub fn recover_policy(solution: &LpSolution, k: usize) -> Result<PolicyProfile> {
    if !solution.is_optimal() {
        return Err(Error::NotOptimal(solution.status));
    }
    let lay = RegionLayout { k };
    if solution.values.len() != lay.width() {
        return Err(Error::MalformedLp(format!(
            "solution has {} values, expected {}",
            solution.values.len(),
            lay.width()
        )));
    }
    let (pi, x, y) = lay.split(&solution.values);
    let mut admit = vec![0.0; k + 1];
    let mut select_own = vec![0.0; k + 1];
    for i in 0..=k {
        for (what, v) in [("x", x[i]), ("y", y[i])] {
            if v > pi[i] + CONSISTENCY_TOL {
                return Err(Error::InconsistentSolution { state: i, what, value: v, pi: pi[i] });
            }
        }
        if pi[i] > UNREACHABLE_PI {
            admit[i] = (x[i] / pi[i]).clamp(0.0, 1.0);
            select_own[i] = (y[i] / pi[i]).clamp(0.0, 1.0);
        }
    }
    admit[k] = 0.0;
    select_own[0] = 1.0;
    Ok(PolicyProfile { k, admit, select_own })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(values: Vec<f64>) -> LpSolution {
        LpSolution { status: LpStatus::Optimal, objective_value: 0.0, values, iterations: 0 }
    }

    #[test]
    fn single_variable() {
        let mut lp = LpInstance::new(vec![1.0], vec![(0.0, f64::INFINITY)]);
        lp.add_constraint("c", vec![1.0], Relation::Le, 1.0);
        let s = simplex_solve(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_optimal_face() {
        let mut lp = LpInstance::new(vec![1.0, 1.0], vec![(0.0, f64::INFINITY); 2]);
        lp.add_constraint("c", vec![1.0, 1.0], Relation::Le, 1.0);
        let s = simplex_solve(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-12);
        assert!(s.values.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LpInstance::new(vec![1.0], vec![(0.0, 1.0)]);
        lp.add_constraint("c", vec![1.0], Relation::Ge, 2.0);
        assert_eq!(simplex_solve(&lp).status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LpInstance::new(vec![1.0, 0.0], vec![(0.0, f64::INFINITY); 2]);
        lp.add_constraint("c", vec![1.0, -1.0], Relation::Le, 1.0);
        assert_eq!(simplex_solve(&lp).status, LpStatus::Unbounded);
    }

    #[test]
    fn free_and_upper_only_variables() {
        // max -|v0 - 2| style: max v1 s.t. v1 <= v0 - 2, v1 <= 2 - v0, v0 free, v1 <= 5.
        let mut lp =
            LpInstance::new(vec![0.0, 1.0], vec![(f64::NEG_INFINITY, f64::INFINITY), (f64::NEG_INFINITY, 5.0)]);
        lp.add_constraint("a", vec![-1.0, 1.0], Relation::Le, -2.0);
        lp.add_constraint("b", vec![1.0, 1.0], Relation::Le, 2.0);
        let s = simplex_solve(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 0.0).abs() < 1e-9);
        assert!((s.values[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max 3a + 2b, a + b = 4, a - b >= 1, a <= 3.
        let mut lp = LpInstance::new(vec![3.0, 2.0], vec![(0.0, 3.0), (0.0, f64::INFINITY)]);
        lp.add_constraint("e", vec![1.0, 1.0], Relation::Eq, 4.0);
        lp.add_constraint("g", vec![1.0, -1.0], Relation::Ge, 1.0);
        let s = simplex_solve(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 11.0).abs() < 1e-9);
    }

    #[test]
    fn malformed_instance_rejected() {
        let mut lp = LpInstance::new(vec![1.0, 1.0], vec![(0.0, 1.0); 2]);
        lp.add_constraint("c", vec![1.0], Relation::Le, 1.0);
        assert!(lp.validate().is_err());
        let lp = LpInstance::new(vec![1.0], vec![(2.0, 1.0)]);
        assert!(lp.validate().is_err());
    }

    #[test]
    fn no_buffer_lp() {
        let c = ChannelModel::reference();
        let lp = build_region_lp(&c, 0.1, 0.3, 0).unwrap();
        assert_eq!(lp.num_vars(), 3);
        lp.validate().unwrap();
        let s = simplex_solve(&lp);
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective_value - 1.0).abs() < 1e-12);
        assert_eq!(s.values, vec![1.0, 0.0, 1.0]);

        let lp = build_region_lp(&c, 0.1, 0.35, 0).unwrap();
        assert_eq!(simplex_solve(&lp).status, LpStatus::Infeasible);
    }

    #[test]
    fn idle_primary_lp_serves_own_queue_everywhere() {
        let c = ChannelModel::reference();
        for mu_p in [0.3, 0.45, 0.58] {
            let lp = build_region_lp(&c, 0.0, mu_p, 3).unwrap();
            let balance: Vec<_> = lp.constraints.iter().filter(|r| r.name.starts_with("balance")).collect();
            assert_eq!(balance.len(), 3);
            assert!(balance.iter().all(|r| r.rhs == 0.0));
            let s = simplex_solve(&lp);
            assert_eq!(s.status, LpStatus::Optimal, "mu_p = {mu_p}");
            assert!((s.objective_value - 1.0).abs() < 1e-9);
            let p = recover_policy(&s, 3).unwrap();
            let (pi, _, _) = RegionLayout { k: 3 }.split(&s.values);
            for (i, &mass) in pi.iter().enumerate() {
                if mass > UNREACHABLE_PI {
                    assert!((p.select_own[i] - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pu_service_rhs() {
        let c = ChannelModel::reference();
        let lp = build_region_lp(&c, 0.3, 0.45, 2).unwrap();
        assert_eq!(lp.num_vars(), 9);
        let row = lp.constraints.iter().find(|r| r.name == "pu_service").unwrap();
        assert!((row.rhs - 0.15 / 0.28).abs() < 1e-15);
        assert!((row.rhs - 0.535714).abs() < 1e-6);
    }

    #[test]
    fn mu_p_outside_interval_rejected() {
        let c = ChannelModel::reference();
        assert!(matches!(build_region_lp(&c, 0.1, 0.7, 2), Err(Error::MuPOutOfRange { .. })));
        assert!(matches!(build_region_lp(&c, 0.1, 0.2, 2), Err(Error::MuPOutOfRange { .. })));
        assert!(build_region_lp(&c, 0.4, 0.4, 2).is_err());
    }

    #[test]
    fn recover_direct_division() {
        let p = recover_policy(&optimal(vec![0.8, 0.2, 0.4, 0.0, 0.8, 0.1]), 1).unwrap();
        assert_eq!(p.admit, vec![0.5, 0.0]);
        assert_eq!(p.select_own, vec![1.0, 0.5]);
    }

    #[test]
    fn recover_unreachable_state() {
        let p = recover_policy(&optimal(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), 1).unwrap();
        assert_eq!(p.admit, vec![0.0, 0.0]);
        assert_eq!(p.select_own, vec![1.0, 0.0]);
    }

    #[test]
    fn recover_rejects_inconsistent_solution() {
        let err = recover_policy(&optimal(vec![0.5, 0.5, 0.6, 0.0, 0.5, 0.0]), 1).unwrap_err();
        assert!(matches!(err, Error::InconsistentSolution { state: 0, what: "x", .. }));
        let infeasible = LpSolution { status: LpStatus::Infeasible, ..optimal(vec![0.0; 6]) };
        assert!(matches!(recover_policy(&infeasible, 1), Err(Error::NotOptimal(_))));
    }

    #[test]
    fn lp_text_format() {
        let c = ChannelModel::reference();
        let text = build_region_lp(&c, 0.1, 0.3, 0).unwrap().to_lp_format();
        assert!(text.starts_with("Maximize\n obj: + 1 y_0\n"));
        assert!(text.contains(" normalize: + 1 pi_0 = 1\n"));
        assert!(text.contains(" pu_service: + 1 x_0 = 0\n"));
        assert!(text.contains(" 0 <= y_0 <= 1\n"));
        assert!(text.ends_with("End\n"));
    }
}
