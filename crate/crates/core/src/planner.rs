//! Exact tabular planning: value iteration, linear-solve policy evaluation,
//! successor features and GPI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{dot, FeatureMap, RewardTable, TabularMcp, TaskWeight};

/// Values within this distance of the maximum count as tied; ties go to the
/// lowest index.
pub const TIE_TOL: f64 = 1e-9;

/// Default sup-norm tolerance for value iteration.
pub const VI_TOL: f64 = 1e-10;

/// Above this many states policy evaluation switches from a dense LU solve
/// to Gauss-Seidel sweeps run to machine precision.
pub const DENSE_SOLVE_LIMIT: usize = 1500;

/// Deterministic stationary policy, one action per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    #[inline]
    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }
}

/// Index of the first entry within [`TIE_TOL`] of the maximum.
pub fn argmax_lowest(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values.iter().position(|&v| v >= max - TIE_TOL).map(|i| (i, max))
}

/// Action values `q[s * n_actions + a]` together with state values.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_actions: usize,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub v_mu: f64,
}

impl QTable {
    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult {
    pub q_star: QTable,
    pub policy: Policy,
    pub v_mu: f64,
}

/// Solves `(I - γ P_π) x = b` for every column of `rhs` (one value per state).
fn solve_policy_system(mcp: &TabularMcp, policy: &Policy, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = mcp.n_states();
    let gamma = mcp.discount();
    if n <= DENSE_SOLVE_LIMIT {
        let mut m = DMatrix::<f64>::identity(n, n);
        for s in 0..n {
            for (_, s2, p) in mcp.successors(s, policy.action(s)) {
                m[(s, s2)] -= gamma * p;
            }
        }
        let lu = m.lu();
        rhs.iter()
            .map(|b| {
                lu.solve(&DVector::from_column_slice(b))
                    .map(|x| x.as_slice().to_vec())
                    .filter(|x| x.iter().all(|v| v.is_finite()))
                    .ok_or(Error::Singular)
            })
            .collect()
    } else {
        rhs.iter().map(|b| gauss_seidel(mcp, policy, b)).collect()
    }
}

fn gauss_seidel(mcp: &TabularMcp, policy: &Policy, b: &[f64]) -> Result<Vec<f64>> {
    let gamma = mcp.discount();
    let mut x = b.to_vec();
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0) / (1.0 - gamma);
    for _ in 0..1_000_000 {
        let mut delta = 0.0f64;
        for s in 0..x.len() {
            let a = policy.action(s);
            let mut self_p = 0.0;
            let mut acc = b[s];
            for (_, s2, p) in mcp.successors(s, a) {
                if s2 == s {
                    self_p += p;
                } else {
                    acc += gamma * p * x[s2];
                }
            }
            let new = acc / (1.0 - gamma * self_p);
            delta = delta.max((new - x[s]).abs());
            x[s] = new;
        }
        if delta <= 1e-15 * scale {
            return Ok(x);
        }
    }
    Err(Error::Singular)
}

fn check_reward(mcp: &TabularMcp, reward: &RewardTable) -> Result<()> {
    if reward.values().len() != mcp.n_edges() {
        return Err(Error::DimensionMismatch { expected: mcp.n_edges(), found: reward.values().len() });
    }
    if !reward.is_finite() {
        return Err(Error::NonFinite("reward table".into()));
    }
    Ok(())
}

fn check_policy(mcp: &TabularMcp, policy: &Policy) -> Result<()> {
    if policy.0.len() != mcp.n_states() {
        return Err(Error::DimensionMismatch { expected: mcp.n_states(), found: policy.0.len() });
    }
    if let Some(&a) = policy.0.iter().find(|&&a| a >= mcp.n_actions()) {
        return Err(Error::InvalidModel(format!("policy action {a} out of range")));
    }
    Ok(())
}

/// One-step lookahead `q(s,a) = r̄(s,a) + γ Σ p v(s')` for all pairs.
fn backup(mcp: &TabularMcp, reward: &RewardTable, v: &[f64]) -> Vec<f64> {
    let gamma = mcp.discount();
    let mut q = vec![0.0; mcp.n_states() * mcp.n_actions()];
    for s in 0..mcp.n_states() {
        for a in 0..mcp.n_actions() {
            q[s * mcp.n_actions() + a] =
                mcp.successors(s, a).map(|(e, s2, p)| p * (reward.edge(e) + gamma * v[s2])).sum();
        }
    }
    q
}

/// Exact evaluation of a deterministic policy on an arbitrary reward table.
pub fn evaluate_flat_policy(mcp: &TabularMcp, reward: &RewardTable, policy: &Policy) -> Result<QTable> {
    check_reward(mcp, reward)?;
    check_policy(mcp, policy)?;
    let b: Vec<f64> = (0..mcp.n_states()).map(|s| reward.expected(mcp, s, policy.action(s))).collect();
    let v = solve_policy_system(mcp, policy, &[b])?.pop().expect("one column");
    let q = backup(mcp, reward, &v);
    let v_mu = dot(mcp.initial(), &v);
    Ok(QTable { n_actions: mcp.n_actions(), q, v, v_mu })
}

/// Optimal control on `reward`.
pub fn solve_task(mcp: &TabularMcp, reward: &RewardTable, tol: f64) -> Result<PlanResult> {
    solve_restricted(mcp, reward, tol, |_, _| true)
}

/// Optimal control when only the actions with `allowed(s, a)` may be taken.
/// Every non-terminal state must allow at least one action.
///
/// Value iteration runs to a sup-norm residual below `tol (1 - γ)`; the
/// greedy policy is then polished with exact policy-iteration steps so the
/// returned `q_star` is the exact value of an optimal policy.
pub fn solve_restricted(
    mcp: &TabularMcp,
    reward: &RewardTable,
    tol: f64,
    allowed: impl Fn(usize, usize) -> bool,
) -> Result<PlanResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidModel(format!("tolerance {tol} must be positive")));
    }
    check_reward(mcp, reward)?;
    let n = mcp.n_states();
    let na = mcp.n_actions();
    let mask: Vec<bool> = (0..n * na).map(|i| allowed(i / na, i % na)).collect();
    for s in 0..n {
        if !mask[s * na..(s + 1) * na].iter().any(|&m| m) {
            return Err(Error::InvalidModel(format!("state {s} has no allowed action")));
        }
    }
    let greedy_value = |q: &[f64], s: usize| {
        (0..na).filter(|&a| mask[s * na + a]).map(|a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max)
    };
    let greedy = |q: &[f64]| {
        Policy(
            (0..n)
                .map(|s| {
                    let best = greedy_value(q, s);
                    (0..na).find(|&a| mask[s * na + a] && q[s * na + a] >= best - TIE_TOL).unwrap()
                })
                .collect(),
        )
    };

    let gamma = mcp.discount();
    let mut v = vec![0.0; n];
    let threshold = tol * (1.0 - gamma);
    let mut sweeps = 0usize;
    loop {
        let q = backup(mcp, reward, &v);
        let v_new: Vec<f64> = (0..n).map(|s| greedy_value(&q, s)).collect();
        let residual = v_new.iter().zip(&v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        v = v_new;
        sweeps += 1;
        if residual < threshold || sweeps > 1_000_000 {
            break;
        }
    }

    // policy-iteration polish
    let mut policy = greedy(&backup(mcp, reward, &v));
    let mut table = evaluate_flat_policy(mcp, reward, &policy)?;
    for _ in 0..10_000 {
        let mut changed = false;
        let mut next = policy.clone();
        for s in 0..n {
            let current = table.get(s, policy.action(s));
            let best = greedy_value(&table.q, s);
            if best > current + 1e-12 * (1.0 + current.abs()) {
                next.0[s] = (0..na).find(|&a| mask[s * na + a] && table.get(s, a) >= best).unwrap();
                changed = true;
            }
        }
        if !changed {
            break;
        }
        policy = next;
        table = evaluate_flat_policy(mcp, reward, &policy)?;
    }

    let policy = greedy(&table.q);
    let v: Vec<f64> = (0..n).map(|s| greedy_value(&table.q, s)).collect();
    let v_mu = dot(mcp.initial(), &v);
    let q_star = QTable { n_actions: na, q: table.q, v, v_mu };
    Ok(PlanResult { q_star, policy, v_mu })
}

/// A policy together with its exact successor features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SFRecord {
    pub policy: Policy,
    dim: usize,
    n_actions: usize,
    /// `ψ(s, a)` flattened as `[(s * n_actions + a) * dim + k]`.
    sf_table: Vec<f64>,
    pub sf_vector: Vec<f64>,
    pub source_task: Option<TaskWeight>,
}

impl SFRecord {
    #[inline]
    pub fn psi(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.dim;
        &self.sf_table[i..i + self.dim]
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `q^π_w(s, a) = ψ(s, a) · w`.
    pub fn q(&self, s: usize, a: usize, w: &[f64]) -> f64 {
        dot(self.psi(s, a), w)
    }

    /// `v^π_w = ψ^π · w`.
    pub fn value(&self, w: &[f64]) -> f64 {
        dot(&self.sf_vector, w)
    }

    pub fn with_source(mut self, task: TaskWeight) -> Self {
        self.source_task = Some(task);
        self
    }

    /// Largest per-entry violation of the SF Bellman identity.
    pub fn bellman_residual(&self, mcp: &TabularMcp, phi: &FeatureMap) -> f64 {
        let gamma = mcp.discount();
        let mut worst = 0.0f64;
        for s in 0..mcp.n_states() {
            for a in 0..mcp.n_actions() {
                let mut target = vec![0.0; self.dim];
                for (e, s2, p) in mcp.successors(s, a) {
                    let next = self.psi(s2, self.policy.action(s2));
                    for k in 0..self.dim {
                        target[k] += p * (phi.edge(e)[k] + gamma * next[k]);
                    }
                }
                for (t, x) in target.iter().zip(self.psi(s, a)) {
                    worst = worst.max((t - x).abs());
                }
            }
        }
        worst
    }
}

/// Exact successor features of a deterministic policy.
pub fn policy_successor_features(mcp: &TabularMcp, phi: &FeatureMap, policy: &Policy) -> Result<SFRecord> {
    check_policy(mcp, policy)?;
    let n = mcp.n_states();
    let na = mcp.n_actions();
    let d = phi.dim();
    let gamma = mcp.discount();
    let rhs: Vec<Vec<f64>> = (0..d)
        .map(|k| (0..n).map(|s| phi.expected(mcp, s, policy.action(s))[k]).collect())
        .collect();
    let cols = solve_policy_system(mcp, policy, &rhs)?;
    let mut sf_table = vec![0.0; n * na * d];
    for s in 0..n {
        for a in 0..na {
            let base = (s * na + a) * d;
            for (e, s2, p) in mcp.successors(s, a) {
                let f = phi.edge(e);
                for k in 0..d {
                    sf_table[base + k] += p * (f[k] + gamma * cols[k][s2]);
                }
            }
        }
    }
    let sf_vector = (0..d).map(|k| dot(mcp.initial(), &cols[k])).collect();
    Ok(SFRecord { policy: policy.clone(), dim: d, n_actions: na, sf_table, sf_vector, source_task: None })
}

/// Optimal policy for a linear task together with its successor features.
pub fn new_policy(mcp: &TabularMcp, phi: &FeatureMap, task: &TaskWeight, tol: f64) -> Result<SFRecord> {
    let reward = crate::mdp::task_reward(phi, task.as_slice())?;
    let plan = solve_task(mcp, &reward, tol)?;
    Ok(policy_successor_features(mcp, phi, &plan.policy)?.with_source(task.clone()))
}

/// `argmax_a max_i ψ_i(s, a) · z`; ties go to the lowest record, then the
/// lowest action.
pub fn gpi_action(basis: &[SFRecord], s: usize, z: &[f64]) -> Result<usize> {
    let first = basis.first().ok_or(Error::EmptyBasis)?;
    if z.len() != first.dim {
        return Err(Error::DimensionMismatch { expected: first.dim, found: z.len() });
    }
    Ok(gpi_action_unchecked(basis, s, z))
}

#[inline]
pub(crate) fn gpi_action_unchecked(basis: &[SFRecord], s: usize, z: &[f64]) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0;
    for rec in basis {
        for a in 0..rec.n_actions {
            let v = rec.q(s, a, z);
            if v > best + TIE_TOL {
                best = v;
                best_a = a;
            }
        }
    }
    best_a
}

/// The flat policy that applies GPI with a fixed weight in every state.
pub fn gpi_policy(mcp: &TabularMcp, basis: &[SFRecord], z: &[f64]) -> Result<Policy> {
    gpi_action(basis, 0, z)?;
    Ok(Policy((0..mcp.n_states()).map(|s| gpi_action_unchecked(basis, s, z)).collect()))
}

/// `max_{s,a} ||E[φ(s, a, ·)]||₂`.
pub fn phi_max(mcp: &TabularMcp, phi: &FeatureMap) -> f64 {
    let mut m = 0.0f64;
    for s in 0..mcp.n_states() {
        for a in 0..mcp.n_actions() {
            let f = phi.expected(mcp, s, a);
            m = m.max(dot(&f, &f).sqrt());
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapBound {
    /// `max_{s,a} q*_w(s,a) - q^{GPI}_w(s,a)`
    pub lhs: f64,
    /// `2/(1-γ) (φ_max min_i ||w - w_i|| + ε)`
    pub rhs: f64,
}

/// Exact GPI optimality gap on `w` against the transfer bound for GPI over
/// policies optimal for their source tasks.
pub fn gpi_gap_bound(
    mcp: &TabularMcp,
    phi: &FeatureMap,
    basis: &[SFRecord],
    w: &TaskWeight,
    epsilon: f64,
) -> Result<GapBound> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let mut min_dist = f64::INFINITY;
    for (i, rec) in basis.iter().enumerate() {
        let src = rec.source_task.as_ref().ok_or(Error::MissingSourceTask(i))?;
        if src.dim() != w.dim() {
            return Err(Error::DimensionMismatch { expected: w.dim(), found: src.dim() });
        }
        let dist = src.as_slice().iter().zip(w.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        min_dist = min_dist.min(dist);
    }
    let reward = crate::mdp::task_reward(phi, w.as_slice())?;
    let optimal = solve_task(mcp, &reward, VI_TOL)?;
    let gpi = evaluate_flat_policy(mcp, &reward, &gpi_policy(mcp, basis, w.as_slice())?)?;
    let lhs = max_gap(&optimal.q_star, &gpi);
    let rhs = 2.0 / (1.0 - mcp.discount()) * (phi_max(mcp, phi) * min_dist + epsilon);
    if lhs > rhs + 1e-9 {
        return Err(Error::Degenerate(format!("GPI gap {lhs} exceeds bound {rhs}")));
    }
    Ok(GapBound { lhs, rhs })
}

/// `max_{s,a} (reference - other)`.
pub fn max_gap(reference: &QTable, other: &QTable) -> f64 {
    reference.q.iter().zip(&other.q).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max)
}
