//! Dense-tableau, two-phase primal simplex with bounded variables.
//!
//! Variables are shifted so every internal column lives in `[0, upper]`;
//! nonbasic columns sit at one of their bounds. Phase 1 minimizes the sum of
//! artificials, phase 2 maximizes the user objective.
//!
//! Pricing is Dantzig's largest reduced cost. After a run of degenerate
//! pivots the solver switches to Bland's smallest-index rule until the
//! objective moves again; Bland's rule cannot cycle, so every solve
//! terminates.

use super::{LpInstance, LpSolution, LpStatus, Relation};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Smallest magnitude accepted as a pivot element.
    pub pivot_tol: f64,
    /// Allowed constraint violation of a returned optimum.
    pub feas_tol: f64,
    /// Reduced costs below this are treated as zero.
    pub opt_tol: f64,
    /// Hard cap on pivots plus bound flips across both phases.
    pub max_iterations: usize,
    pub rule: PivotRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Smallest-index entering and leaving columns throughout.
    Bland,
    /// Largest reduced cost; falls back to Bland after `stall` consecutive
    /// degenerate pivots.
    Dantzig { stall: usize },
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-9,
            feas_tol: 1e-7,
            opt_tol: 1e-9,
            max_iterations: 200_000,
            rule: PivotRule::Dantzig { stall: 50 },
        }
    }
}

const DROP_TOL: f64 = 1e-14;
const HARRIS_TOL: f64 = 1e-9;

/// How an original variable maps onto internal columns:
/// `value = offset + sign * col (- col_neg)`.
#[derive(Debug, Clone, Copy)]
struct VarMap {
    offset: f64,
    sign: f64,
    col: usize,
    neg_col: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ColState {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols` body of `B^-1 A`.
    body: Vec<f64>,
    /// Current values of the basic variables.
    beta: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<ColState>,
    upper: Vec<f64>,
    /// Reduced costs of the current phase objective.
    reduced: Vec<f64>,
    /// Columns barred from entering the basis.
    blocked: Vec<bool>,
    iterations: usize,
    degenerate_run: usize,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn set_objective(&mut self, cost: &[f64]) {
        self.reduced.clear();
        self.reduced.extend_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let start = i * self.cols;
                for (d, t) in self.reduced.iter_mut().zip(&self.body[start..start + self.cols]) {
                    *d -= cb * t;
                }
            }
        }
        for &b in &self.basis {
            self.reduced[b] = 0.0;
        }
    }

    fn improving(&self, j: usize, opts: &SimplexOptions) -> bool {
        !self.blocked[j]
            && match self.state[j] {
                ColState::AtLower => self.reduced[j] > opts.opt_tol && self.upper[j] > 0.0,
                ColState::AtUpper => self.reduced[j] < -opts.opt_tol,
                ColState::Basic => false,
            }
    }

    fn use_bland(&self, opts: &SimplexOptions) -> bool {
        match opts.rule {
            PivotRule::Bland => true,
            PivotRule::Dantzig { stall } => self.degenerate_run >= stall,
        }
    }

    fn entering(&self, opts: &SimplexOptions) -> Option<usize> {
        if self.use_bland(opts) {
            return (0..self.cols).find(|&j| self.improving(j, opts));
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if self.improving(j, opts) {
                let score = self.reduced[j].abs();
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((j, score));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Step length at which basic row `i` hits a bound when column `j` moves
    /// in direction `dir`, with `slack` extra room.
    fn row_limit(&self, i: usize, j: usize, dir: f64, slack: f64, opts: &SimplexOptions) -> Option<(f64, f64, bool)> {
        let a = self.body[i * self.cols + j] * dir;
        if a > opts.pivot_tol {
            Some(((self.beta[i] + slack) / a, a, false))
        } else if a < -opts.pivot_tol && self.upper[self.basis[i]].is_finite() {
            Some(((self.upper[self.basis[i]] - self.beta[i] + slack) / -a, -a, true))
        } else {
            None
        }
    }

    /// Textbook minimum ratio; ties go to the smallest basic column index.
    fn ratio_test_bland(&self, j: usize, dir: f64, opts: &SimplexOptions) -> Option<(usize, f64, bool)> {
        let mut best: Option<(usize, f64, bool)> = None;
        for i in 0..self.rows {
            let Some((t, _, to_upper)) = self.row_limit(i, j, dir, 0.0, opts) else { continue };
            let t = t.max(0.0);
            let better = match best {
                None => true,
                Some((r, bt, _)) => t < bt - 1e-12 || (t <= bt + 1e-12 && self.basis[i] < self.basis[r]),
            };
            if better {
                best = Some((i, t, to_upper));
            }
        }
        best
    }

    /// Two-pass Harris test: bound the step with slightly relaxed limits,
    /// then take the largest pivot among rows that block within that bound.
    fn ratio_test_harris(&self, j: usize, dir: f64, opts: &SimplexOptions) -> Option<(usize, f64, bool)> {
        let mut relaxed = f64::INFINITY;
        for i in 0..self.rows {
            if let Some((t, _, _)) = self.row_limit(i, j, dir, HARRIS_TOL, opts) {
                relaxed = relaxed.min(t);
            }
        }
        if relaxed.is_infinite() {
            return None;
        }
        let mut best: Option<(usize, f64, bool, f64)> = None;
        for i in 0..self.rows {
            let Some((t, a, to_upper)) = self.row_limit(i, j, dir, 0.0, opts) else { continue };
            if t <= relaxed && best.is_none_or(|(_, _, _, ba)| a > ba) {
                best = Some((i, t.max(0.0), to_upper, a));
            }
        }
        best.map(|(i, t, u, _)| (i, t, u))
    }

    fn step(&mut self, opts: &SimplexOptions) -> Step {
        let Some(j) = self.entering(opts) else { return Step::Optimal };
        let dir = if self.state[j] == ColState::AtLower { 1.0 } else { -1.0 };

        let best = if self.use_bland(opts) {
            self.ratio_test_bland(j, dir, opts)
        } else {
            self.ratio_test_harris(j, dir, opts)
        };

        let flip_len = self.upper[j];
        let flip = match best {
            None => {
                if flip_len.is_infinite() {
                    return Step::Unbounded;
                }
                true
            }
            Some((_, t, _)) => flip_len <= t,
        };
        self.iterations += 1;

        if flip {
            let t = flip_len;
            for i in 0..self.rows {
                let a = self.body[i * self.cols + j];
                if a != 0.0 {
                    self.beta[i] -= t * dir * a;
                }
            }
            self.state[j] = if dir > 0.0 { ColState::AtUpper } else { ColState::AtLower };
            return Step::Moved;
        }

        let (r, t, to_upper) = best.expect("a limiting row exists when no flip happens");
        if t <= 1e-12 {
            self.degenerate_run += 1;
        } else {
            self.degenerate_run = 0;
        }
        for i in 0..self.rows {
            let a = self.body[i * self.cols + j];
            if a != 0.0 {
                self.beta[i] -= t * dir * a;
            }
        }
        let entering_value = if dir > 0.0 { t } else { self.upper[j] - t };
        let leaving = self.basis[r];
        self.state[leaving] = if to_upper { ColState::AtUpper } else { ColState::AtLower };
        self.pivot(r, j);
        self.beta[r] = entering_value;
        self.basis[r] = j;
        self.state[j] = ColState::Basic;
        Step::Moved
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.body[r * cols + j];
        let inv = 1.0 / p;
        {
            let row = &mut self.body[r * cols..(r + 1) * cols];
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[j] = 1.0;
        }
        let nz: Vec<usize> = (0..cols).filter(|&k| self.body[r * cols + k].abs() > DROP_TOL).collect();
        let pivot_row: Vec<f64> = nz.iter().map(|&k| self.body[r * cols + k]).collect();

        for i in 0..self.rows {
            if i == r {
                continue;
            }
            let f = self.body[i * cols + j];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.body[i * cols..(i + 1) * cols];
            for (&k, &pv) in nz.iter().zip(&pivot_row) {
                let v = row[k] - f * pv;
                row[k] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[j] = 0.0;
        }
        let f = self.reduced[j];
        if f != 0.0 {
            for (&k, &pv) in nz.iter().zip(&pivot_row) {
                self.reduced[k] -= f * pv;
            }
            self.reduced[j] = 0.0;
        }
    }

    fn run(&mut self, opts: &SimplexOptions) -> Option<Step> {
        loop {
            if self.iterations >= opts.max_iterations {
                return None;
            }
            match self.step(opts) {
                Step::Moved => continue,
                done => return Some(done),
            }
        }
    }

    fn column_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.cols)
            .map(|j| match self.state[j] {
                ColState::AtUpper => self.upper[j],
                _ => 0.0,
            })
            .collect();
        for (i, &b) in self.basis.iter().enumerate() {
            v[b] = self.beta[i];
        }
        v
    }
}

/// Solves `lp` (maximization). Never panics on well-formed input; numerical
/// trouble is reported as [`LpStatus::NumericalFailure`].
pub fn solve(lp: &LpInstance, opts: &SimplexOptions) -> LpSolution {
    let n = lp.objective.len();
    let failure = |status: LpStatus, iterations: usize| LpSolution {
        status,
        objective_value: f64::NAN,
        values: vec![f64::NAN; n],
        iterations,
    };

    // Internal structural columns.
    let mut maps = Vec::with_capacity(n);
    let mut col_upper = Vec::new();
    for &(lo, hi) in &lp.variable_bounds {
        if lo > hi {
            return failure(LpStatus::Infeasible, 0);
        }
        let col = col_upper.len();
        if lo.is_finite() {
            maps.push(VarMap { offset: lo, sign: 1.0, col, neg_col: None });
            col_upper.push(hi - lo);
        } else if hi.is_finite() {
            maps.push(VarMap { offset: hi, sign: -1.0, col, neg_col: None });
            col_upper.push(f64::INFINITY);
        } else {
            maps.push(VarMap { offset: 0.0, sign: 1.0, col, neg_col: Some(col + 1) });
            col_upper.push(f64::INFINITY);
            col_upper.push(f64::INFINITY);
        }
    }
    let structural = col_upper.len();

    // Rows in internal coordinates, scaled and with non-negative rhs.
    struct Row {
        coef: Vec<f64>,
        rel: Relation,
        rhs: f64,
    }
    let mut rows: Vec<Row> = Vec::with_capacity(lp.constraints.len());
    for c in &lp.constraints {
        let mut coef = vec![0.0; structural];
        let mut rhs = c.rhs;
        for (a, m) in c.coefficients.iter().zip(&maps) {
            if *a == 0.0 {
                continue;
            }
            rhs -= a * m.offset;
            coef[m.col] += a * m.sign;
            if let Some(nc) = m.neg_col {
                coef[nc] -= a;
            }
        }
        let scale = coef.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if scale == 0.0 {
            let ok = match c.relation {
                Relation::Le => rhs >= -opts.feas_tol,
                Relation::Ge => rhs <= opts.feas_tol,
                Relation::Eq => rhs.abs() <= opts.feas_tol,
            };
            if !ok {
                return failure(LpStatus::Infeasible, 0);
            }
            continue;
        }
        let mut rel = c.relation;
        for v in &mut coef {
            *v /= scale;
        }
        rhs /= scale;
        if rhs < 0.0 || (rhs == 0.0 && rel == Relation::Ge) {
            for v in &mut coef {
                *v = -*v;
            }
            rhs = -rhs;
            rel = match rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
        rows.push(Row { coef, rel, rhs });
    }

    let m = rows.len();
    let slacks = rows.iter().filter(|r| r.rel != Relation::Eq).count();
    let artificials = rows.iter().filter(|r| r.rel != Relation::Le).count();
    let cols = structural + slacks + artificials;

    let mut t = Tableau {
        rows: m,
        cols,
        body: vec![0.0; m * cols],
        beta: vec![0.0; m],
        basis: vec![0; m],
        state: vec![ColState::AtLower; cols],
        upper: col_upper,
        reduced: Vec::with_capacity(cols),
        blocked: vec![false; cols],
        iterations: 0,
        degenerate_run: 0,
    };
    t.upper.resize(cols, f64::INFINITY);

    let mut next_slack = structural;
    let mut next_art = structural + slacks;
    for (i, row) in rows.iter().enumerate() {
        let dst = &mut t.body[i * cols..i * cols + structural];
        dst.copy_from_slice(&row.coef);
        t.beta[i] = row.rhs;
        match row.rel {
            Relation::Le => {
                t.body[i * cols + next_slack] = 1.0;
                t.basis[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                t.body[i * cols + next_slack] = -1.0;
                next_slack += 1;
                t.body[i * cols + next_art] = 1.0;
                t.basis[i] = next_art;
                next_art += 1;
            }
            Relation::Eq => {
                t.body[i * cols + next_art] = 1.0;
                t.basis[i] = next_art;
                next_art += 1;
            }
        }
    }
    for &b in &t.basis {
        t.state[b] = ColState::Basic;
    }
    let art_start = structural + slacks;

    // Phase 1.
    if artificials > 0 {
        let mut cost = vec![0.0; cols];
        for c in &mut cost[art_start..] {
            *c = -1.0;
        }
        t.set_objective(&cost);
        match t.run(opts) {
            None => return failure(LpStatus::NumericalFailure, t.iterations),
            Some(Step::Unbounded) => return failure(LpStatus::NumericalFailure, t.iterations),
            _ => {}
        }
        let infeasibility: f64 =
            t.basis.iter().zip(&t.beta).filter(|(b, _)| **b >= art_start).map(|(_, v)| v.abs()).sum();
        if infeasibility > opts.feas_tol {
            return failure(LpStatus::Infeasible, t.iterations);
        }
        for j in art_start..cols {
            t.upper[j] = 0.0;
            t.blocked[j] = true;
        }
        t.degenerate_run = 0;
    }

    // Phase 2.
    let mut cost = vec![0.0; cols];
    for (c, mp) in lp.objective.iter().zip(&maps) {
        cost[mp.col] += c * mp.sign;
        if let Some(nc) = mp.neg_col {
            cost[nc] -= c;
        }
    }
    t.set_objective(&cost);
    match t.run(opts) {
        None => return failure(LpStatus::NumericalFailure, t.iterations),
        Some(Step::Unbounded) => return failure(LpStatus::Unbounded, t.iterations),
        _ => {}
    }

    let colv = t.column_values();
    let values: Vec<f64> = maps
        .iter()
        .map(|mp| {
            let mut v = mp.offset + mp.sign * colv[mp.col];
            if let Some(nc) = mp.neg_col {
                v -= colv[nc];
            }
            v
        })
        .collect();
    let objective_value = lp.objective.iter().zip(&values).map(|(c, v)| c * v).sum();
    let sol = LpSolution { status: LpStatus::Optimal, objective_value, values, iterations: t.iterations };
    if lp.max_violation(&sol.values) > opts.feas_tol {
        log::debug!("simplex optimum violates constraints by {}", lp.max_violation(&sol.values));
        return LpSolution { status: LpStatus::NumericalFailure, ..sol };
    }
    sol
}
