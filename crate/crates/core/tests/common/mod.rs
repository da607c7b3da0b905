//! Independent oracles shared by the integration tests. None of these reuse
//! the library's solvers: they work from explicit matrices or brute force.

#![allow(dead_code)]

use cogrelay::lp::{LpInstance, Relation};
use cogrelay::model::{ChannelModel, PolicyProfile};

/// Stationary distribution of a row-stochastic matrix by power iteration,
/// lazily damped so periodic chains converge too.
pub fn power_iteration(p: &[Vec<f64>], iters: usize) -> Vec<f64> {
    let n = p.len();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        for (i, row) in p.iter().enumerate() {
            for (j, &pij) in row.iter().enumerate() {
                next[j] += v[i] * pij;
            }
        }
        for j in 0..n {
            next[j] = 0.5 * next[j] + 0.5 * v[j];
        }
        let s: f64 = next.iter().sum();
        v = next.iter().map(|x| x / s).collect();
    }
    v
}

/// Explicit transition matrix of a birth-death chain started from its rates.
pub fn birth_death_matrix(arrivals: &[f64], services: &[f64]) -> Vec<Vec<f64>> {
    let n = arrivals.len();
    let mut p = vec![vec![0.0; n]; n];
    for i in 0..n {
        let up = if i + 1 < n { arrivals[i] } else { 0.0 };
        let down = if i > 0 { services[i] } else { 0.0 };
        if i + 1 < n {
            p[i][i + 1] = up;
        }
        if i > 0 {
            p[i][i - 1] = down;
        }
        p[i][i] = 1.0 - up - down;
    }
    p
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None`
/// when the system is (numerically) singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for (r, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot_row[col];
            for (v, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *v -= f * p;
            }
            b[col + 1 + r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..n {
        if n - i < k - cur.len() {
            break;
        }
        cur.push(i);
        combinations(n, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Optimum of a bounded LP by enumerating every basic solution: each vertex
/// is the unique solution of some `n` tight rows or bounds. Feasibility
/// (equalities included) is checked afterwards, so redundant equality rows
/// are harmless. Returns `None` when no vertex is feasible.
pub fn vertex_enumeration(lp: &LpInstance, tol: f64) -> Option<f64> {
    let n = lp.num_vars();
    let mut tight: Vec<(Vec<f64>, f64)> = lp.constraints.iter().map(|c| (c.coefficients.clone(), c.rhs)).collect();
    for (j, &(lo, hi)) in lp.variable_bounds.iter().enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        tight.push((e.clone(), lo));
        tight.push((e, hi));
    }
    let mut subsets = Vec::new();
    combinations(tight.len(), n, 0, &mut Vec::new(), &mut subsets);
    let mut best: Option<f64> = None;
    for s in subsets {
        let a = s.iter().map(|&i| tight[i].0.clone()).collect();
        let b = s.iter().map(|&i| tight[i].1).collect();
        let Some(x) = gauss_solve(a, b) else { continue };
        if lp.max_violation(&x) > tol {
            continue;
        }
        let obj: f64 = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        best = Some(best.map_or(obj, |b: f64| b.max(obj)));
    }
    best
}

/// Objective of the region LP at a feasible `mu_p`, for any `K`: the balance
/// and service rows together pin `sum y`, so every feasible point attains it.
pub fn region_objective(channel: &ChannelModel, lambda_p: f64, mu_p: f64) -> f64 {
    1.0 - lambda_p * (mu_p - channel.f_pd) / (channel.f_sd * (mu_p - lambda_p))
}

/// Exact stationary law of the joint (Q_p, Q_sp) chain of the simulated
/// protocol, with Q_p truncated at `q_max` (overflow arrivals dropped).
pub struct JointSolution {
    /// P(Q_p > 0) at slot start.
    pub busy: f64,
    /// Marginal law of Q_sp at slot start.
    pub relay: Vec<f64>,
    /// SU departures per slot with a saturated SU queue.
    pub su_throughput: f64,
    /// PU departures per busy slot.
    pub pu_service: f64,
}

pub fn joint_chain(channel: &ChannelModel, policy: &PolicyProfile, lambda_p: f64, q_max: usize) -> JointSolution {
    let k1 = policy.states();
    let n = (q_max + 1) * k1;
    let idx = |q: usize, i: usize| q * k1 + i;
    // Sparse transitions as (from, to, prob).
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let add = |from: usize, q: usize, i: usize, p: f64, edges: &mut Vec<(usize, usize, f64)>| {
        if p <= 0.0 {
            return;
        }
        edges.push((from, idx((q + 1).min(q_max), i), p * lambda_p));
        edges.push((from, idx(q, i), p * (1.0 - lambda_p)));
    };
    let (f_pd, f_ps, f_sd) = (channel.f_pd, channel.f_ps, channel.f_sd);
    for q in 0..=q_max {
        for i in 0..k1 {
            let s = idx(q, i);
            if q > 0 {
                let relay = (1.0 - f_pd) * f_ps * policy.admit[i];
                add(s, q - 1, i, f_pd, &mut edges);
                if relay > 0.0 {
                    add(s, q - 1, i + 1, relay, &mut edges);
                }
                add(s, q, i, 1.0 - f_pd - relay, &mut edges);
            } else {
                let serve = if i > 0 { (1.0 - policy.select_own[i]) * f_sd } else { 0.0 };
                if serve > 0.0 {
                    add(s, q, i - 1, serve, &mut edges);
                }
                add(s, q, i, 1.0 - serve, &mut edges);
            }
        }
    }

    // Gauss-Seidel sweeps on pi = pi P, normalizing after each sweep.
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut stay = vec![0.0; n];
    for &(from, to, p) in &edges {
        if from == to {
            stay[to] += p;
        } else {
            incoming[to].push((from, p));
        }
    }
    let mut pi = vec![1.0 / n as f64; n];
    for _ in 0..20_000 {
        let mut delta = 0.0f64;
        for s in 0..n {
            let inflow: f64 = incoming[s].iter().map(|&(f, p)| pi[f] * p).sum();
            let v = inflow / (1.0 - stay[s]);
            delta = delta.max((v - pi[s]).abs());
            pi[s] = v;
        }
        let total: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|v| *v /= total);
        if delta < 1e-15 {
            break;
        }
    }

    let mut relay = vec![0.0; k1];
    let mut busy = 0.0;
    let mut departures = 0.0;
    let mut su = 0.0;
    for q in 0..=q_max {
        for i in 0..k1 {
            let p = pi[idx(q, i)];
            relay[i] += p;
            if q > 0 {
                busy += p;
                departures += p * (f_pd + (1.0 - f_pd) * f_ps * policy.admit[i]);
            } else {
                su += p * policy.select_own[i] * f_sd;
            }
        }
    }
    JointSolution { busy, relay, su_throughput: su, pu_service: departures / busy }
}

/// Small bounded LP with integer data, built from `seed`. Equality rows are
/// in echelon form, so they never contradict each other outright. Right-hand sides come from a random point in the box, so most instances
/// are feasible; `perturb` shifts some of them to create infeasible ones.
pub fn random_lp(seed: u64) -> LpInstance {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6usize);
    let m = rng.random_range(1..=8usize);
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let lo = -(rng.random_range(0..=2) as f64);
            (lo, lo + rng.random_range(1..=5) as f64)
        })
        .collect();
    let objective = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
    let x0: Vec<f64> = bounds.iter().map(|&(l, u)| rng.random_range(l..=u)).collect();
    let perturb = rng.random_bool(0.2);
    let mut lp = LpInstance::new(objective, bounds);
    let mut eqs = 0;
    for r in 0..m {
        let eq = eqs + 1 < n && rng.random_bool(0.2);
        let mut coef: Vec<f64> = (0..n).map(|_| rng.random_range(-5..=5) as f64).collect();
        if eq {
            coef[..eqs].iter_mut().for_each(|c| *c = 0.0);
            coef[eqs] = rng.random_range(1..=5) as f64;
            eqs += 1;
        }
        let ax: f64 = coef.iter().zip(&x0).map(|(a, x)| a * x).sum();
        let shift = if perturb { rng.random_range(-6..=6) as f64 } else { 0.0 };
        let (rel, rhs) = if eq {
            (Relation::Eq, (ax + shift).round())
        } else if rng.random_bool(0.5) {
            (Relation::Le, (ax + shift).ceil() + rng.random_range(0..=2) as f64)
        } else {
            (Relation::Ge, (ax + shift).floor() - rng.random_range(0..=2) as f64)
        };
        lp.add_constraint(format!("r{r}"), coef, rel, rhs);
    }
    lp
}
