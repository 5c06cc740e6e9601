//! Tabular Markov control processes, reward features and tasks.
//!
//! Transitions are stored sparsely: every `(s, a)` pair owns a contiguous run
//! of edges `(s', p)`. Feature maps and reward tables are indexed by the same
//! edge ids, so `φ(s, a, s')` is the feature row of the edge that carries
//! `s -a-> s'`.

mod envs;

pub use envs::{
    build_corridors, build_counterexample, build_item_grid, build_random_mcp, counterexample_task, ItemGrid,
    ItemGridLayout, COUNTEREXAMPLE_FEATURES, MAX_TABULAR_STATES,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability row sums and simplex sums.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMcp {
    n_states: usize,
    n_actions: usize,
    row_start: Vec<usize>,
    next: Vec<usize>,
    prob: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
    terminal: Vec<bool>,
}

impl TabularMcp {
    /// Builds an MCP from per-`(s, a)` successor lists, `rows[s * n_actions + a]`.
    pub fn from_rows(
        n_states: usize,
        n_actions: usize,
        rows: Vec<Vec<(usize, f64)>>,
        initial: Vec<f64>,
        discount: f64,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("need at least one state and one action".into()));
        }
        if rows.len() != n_states * n_actions {
            return Err(Error::DimensionMismatch { expected: n_states * n_actions, found: rows.len() });
        }
        if initial.len() != n_states {
            return Err(Error::DimensionMismatch { expected: n_states, found: initial.len() });
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidModel(format!("discount {discount} outside [0, 1)")));
        }
        let mut terminal = vec![false; n_states];
        for &s in terminal_states {
            if s >= n_states {
                return Err(Error::InvalidModel(format!("terminal state {s} out of range")));
            }
            terminal[s] = true;
        }

        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut next = Vec::new();
        let mut prob = Vec::new();
        row_start.push(0);
        for (idx, row) in rows.into_iter().enumerate() {
            let (s, a) = (idx / n_actions, idx % n_actions);
            if row.is_empty() {
                return Err(Error::InvalidModel(format!("no successors for ({s}, {a})")));
            }
            let mut total = 0.0;
            for (k, &(s2, p)) in row.iter().enumerate() {
                if s2 >= n_states {
                    return Err(Error::InvalidModel(format!("successor {s2} out of range at ({s}, {a})")));
                }
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidModel(format!("bad probability {p} at ({s}, {a})")));
                }
                if row[..k].iter().any(|&(t, _)| t == s2) {
                    return Err(Error::InvalidModel(format!("duplicate successor {s2} at ({s}, {a})")));
                }
                total += p;
            }
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!("row ({s}, {a}) sums to {total}")));
            }
            if terminal[s] && !(row.len() == 1 && row[0].0 == s) {
                return Err(Error::InvalidModel(format!("terminal state {s} is not absorbing")));
            }
            for (s2, p) in row {
                next.push(s2);
                prob.push(p);
            }
            row_start.push(next.len());
        }

        let mass: f64 = initial.iter().sum();
        if initial.iter().any(|&m| !m.is_finite() || m < 0.0) || (mass - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidModel(format!("initial distribution sums to {mass}")));
        }

        Ok(Self { n_states, n_actions, row_start, next, prob, initial, discount, terminal })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_edges(&self) -> usize {
        self.next.len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| self.terminal[s])
    }

    /// Edge id range of `(s, a)`.
    #[inline]
    pub fn edges(&self, s: usize, a: usize) -> std::ops::Range<usize> {
        let row = s * self.n_actions + a;
        self.row_start[row]..self.row_start[row + 1]
    }

    #[inline]
    pub fn edge_next(&self, e: usize) -> usize {
        self.next[e]
    }

    #[inline]
    pub fn edge_prob(&self, e: usize) -> f64 {
        self.prob[e]
    }

    /// `(edge id, s', p)` for every successor of `(s, a)`.
    pub fn successors(&self, s: usize, a: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges(s, a).map(move |e| (e, self.next[e], self.prob[e]))
    }

    /// Dense `P[s][a][s']`; only sensible for small models.
    pub fn dense_transition(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.successors(s, a).filter(|&(_, t, _)| t == s2).map(|(_, _, p)| p).sum()
    }

    /// Same dynamics under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidModel(format!("discount {discount} outside [0, 1)")));
        }
        Ok(Self { discount, ..self.clone() })
    }

    /// Same dynamics started from another initial distribution.
    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        if initial.len() != self.n_states {
            return Err(Error::DimensionMismatch { expected: self.n_states, found: initial.len() });
        }
        let mass: f64 = initial.iter().sum();
        if initial.iter().any(|&m| m < 0.0) || (mass - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidModel(format!("initial distribution sums to {mass}")));
        }
        Ok(Self { initial, ..self.clone() })
    }
}

/// Reward features attached to the edges of a [`TabularMcp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    dim: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    /// `values` holds one row of `dim` features per edge of `mcp`.
    pub fn new(mcp: &TabularMcp, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("feature dimension must be positive".into()));
        }
        if values.len() != mcp.n_edges() * dim {
            return Err(Error::DimensionMismatch { expected: mcp.n_edges() * dim, found: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map".into()));
        }
        for s in mcp.terminal_states() {
            for a in 0..mcp.n_actions() {
                for e in mcp.edges(s, a) {
                    if values[e * dim..(e + 1) * dim].iter().any(|&v| v != 0.0) {
                        return Err(Error::InvalidModel(format!("non-zero features out of terminal state {s}")));
                    }
                }
            }
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn edge(&self, e: usize) -> &[f64] {
        &self.values[e * self.dim..(e + 1) * self.dim]
    }

    /// `φ(s, a, s')`, zero when `s'` is not a successor of `(s, a)`.
    pub fn get(&self, mcp: &TabularMcp, s: usize, a: usize, s2: usize) -> Vec<f64> {
        mcp.successors(s, a)
            .find(|&(_, t, _)| t == s2)
            .map(|(e, _, _)| self.edge(e).to_vec())
            .unwrap_or_else(|| vec![0.0; self.dim])
    }

    /// `E_{s'}[φ(s, a, s')]`.
    pub fn expected(&self, mcp: &TabularMcp, s: usize, a: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (e, _, p) in mcp.successors(s, a) {
            for (o, f) in out.iter_mut().zip(self.edge(e)) {
                *o += p * f;
            }
        }
        out
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Convex,
    Linear,
}

/// A task `w`; the reward is `φ · w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskWeight {
    w: Vec<f64>,
    kind: WeightKind,
}

impl TaskWeight {
    /// A weight on the simplex.
    pub fn convex(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Degenerate("empty weight vector".into()));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&x| !x.is_finite() || x < 0.0) || (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidModel(format!("weight {w:?} is not on the simplex")));
        }
        Ok(Self { w, kind: WeightKind::Convex })
    }

    pub fn linear(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Degenerate("empty weight vector".into()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("task weight".into()));
        }
        Ok(Self { w, kind: WeightKind::Linear })
    }

    /// Uniform weight `[1/d, ..., 1/d]`.
    pub fn uniform(d: usize) -> Self {
        Self { w: vec![1.0 / d as f64; d], kind: WeightKind::Convex }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.w
    }
}

/// Per-edge reward `r(s, a, s')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTable(Vec<f64>);

impl RewardTable {
    pub fn from_edges(mcp: &TabularMcp, values: Vec<f64>) -> Result<Self> {
        if values.len() != mcp.n_edges() {
            return Err(Error::DimensionMismatch { expected: mcp.n_edges(), found: values.len() });
        }
        Ok(Self(values))
    }

    /// Builds a table from a closure over `(s, a, s')`.
    pub fn from_fn(mcp: &TabularMcp, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = vec![0.0; mcp.n_edges()];
        for s in 0..mcp.n_states() {
            for a in 0..mcp.n_actions() {
                for (e, s2, _) in mcp.successors(s, a) {
                    values[e] = f(s, a, s2);
                }
            }
        }
        Self(values)
    }

    pub fn zeros(mcp: &TabularMcp) -> Self {
        Self(vec![0.0; mcp.n_edges()])
    }

    #[inline]
    pub fn edge(&self, e: usize) -> f64 {
        self.0[e]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `r̄(s, a) = Σ_{s'} P(s'|s,a) r(s, a, s')`.
    pub fn expected(&self, mcp: &TabularMcp, s: usize, a: usize) -> f64 {
        mcp.successors(s, a).map(|(e, _, p)| p * self.0[e]).sum()
    }

    pub fn get(&self, mcp: &TabularMcp, s: usize, a: usize, s2: usize) -> f64 {
        mcp.successors(s, a).find(|&(_, t, _)| t == s2).map(|(e, _, _)| self.0[e]).unwrap_or(0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Adds a constant to every non-terminal transition.
    pub fn shifted(&self, mcp: &TabularMcp, c: f64) -> Self {
        let mut values = self.0.clone();
        for s in (0..mcp.n_states()).filter(|&s| !mcp.is_terminal(s)) {
            for a in 0..mcp.n_actions() {
                for e in mcp.edges(s, a) {
                    values[e] += c;
                }
            }
        }
        Self(values)
    }
}

/// A reward table that is not (declared) linear in the features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearReward {
    table: RewardTable,
}

impl NonlinearReward {
    pub fn new(mcp: &TabularMcp, table: RewardTable) -> Result<Self> {
        if table.values().len() != mcp.n_edges() {
            return Err(Error::DimensionMismatch { expected: mcp.n_edges(), found: table.values().len() });
        }
        if !table.is_finite() {
            return Err(Error::NonFinite("non-linear reward".into()));
        }
        for s in mcp.terminal_states() {
            for a in 0..mcp.n_actions() {
                if mcp.edges(s, a).any(|e| table.edge(e) != 0.0) {
                    return Err(Error::InvalidModel(format!("non-zero reward out of terminal state {s}")));
                }
            }
        }
        Ok(Self { table })
    }

    pub fn table(&self) -> &RewardTable {
        &self.table
    }
}

/// `r_w(s, a, s') = φ(s, a, s') · w` for every edge.
pub fn task_reward(phi: &FeatureMap, w: &[f64]) -> Result<RewardTable> {
    if phi.dim() != w.len() {
        return Err(Error::DimensionMismatch { expected: phi.dim(), found: w.len() });
    }
    let n_edges = phi.values.len() / phi.dim;
    Ok(RewardTable((0..n_edges).map(|e| dot(phi.edge(e), w)).collect()))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builder collecting transitions together with their features.
#[derive(Debug)]
pub struct McpBuilder {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    rows: Vec<Vec<(usize, f64, Vec<f64>)>>,
    terminal: Vec<usize>,
}

impl McpBuilder {
    pub fn new(n_states: usize, n_actions: usize, dim: usize) -> Self {
        Self { n_states, n_actions, dim, rows: vec![Vec::new(); n_states * n_actions], terminal: Vec::new() }
    }

    pub fn transition(&mut self, s: usize, a: usize, s2: usize, p: f64, features: &[f64]) -> &mut Self {
        debug_assert_eq!(features.len(), self.dim);
        self.rows[s * self.n_actions + a].push((s2, p, features.to_vec()));
        self
    }

    /// Same deterministic transition for every action.
    pub fn all_actions(&mut self, s: usize, s2: usize, features: &[f64]) -> &mut Self {
        for a in 0..self.n_actions {
            self.transition(s, a, s2, 1.0, features);
        }
        self
    }

    /// Marks `s` terminal: zero-feature self-loops under every action.
    pub fn absorbing(&mut self, s: usize) -> &mut Self {
        let zero = vec![0.0; self.dim];
        for a in 0..self.n_actions {
            self.rows[s * self.n_actions + a].clear();
            self.transition(s, a, s, 1.0, &zero);
        }
        self.terminal.push(s);
        self
    }

    pub fn build(self, initial: Vec<f64>, discount: f64) -> Result<(TabularMcp, FeatureMap)> {
        let mut rows = Vec::with_capacity(self.rows.len());
        let mut values = Vec::new();
        for row in self.rows {
            let mut out = Vec::with_capacity(row.len());
            for (s2, p, f) in row {
                out.push((s2, p));
                values.extend(f);
            }
            rows.push(out);
        }
        let mcp = TabularMcp::from_rows(self.n_states, self.n_actions, rows, initial, discount, &self.terminal)?;
        let phi = FeatureMap::new(&mcp, self.dim, values)?;
        Ok((mcp, phi))
    }
}
