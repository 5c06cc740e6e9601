//! Option keyboards: meta-policies that pick a chord `z` per state and act
//! with GPI on `z` over a basis of base policies.
//!
//! Meta-policies are trained exactly. For a fixed basis and chord set the
//! chord chosen in state `s` only matters through the primitive action
//! `gpi_action(basis, s, z)`, so training is value iteration on the original
//! MCP with the action set of each state restricted to the actions some chord
//! can produce. The greedy chord table is read off the restricted optimum.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{linf, DEDUP_TOL};
use crate::mdp::{dot, task_reward, FeatureMap, NonlinearReward, RewardTable, TabularMcp, TaskWeight};
use crate::planner::{
    evaluate_flat_policy, gpi_action_unchecked, policy_successor_features, solve_restricted, Policy, QTable,
    SFRecord, TIE_TOL,
};

/// Advantages at or below this are treated as numerically zero.
pub const ADVANTAGE_ZERO: f64 = 1e-11;

/// An ordered set of distinct unit vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordSet {
    chords: Vec<Vec<f64>>,
}

impl ChordSet {
    pub fn new(chords: Vec<Vec<f64>>) -> Result<Self> {
        if chords.is_empty() {
            return Err(Error::Degenerate("empty chord set".into()));
        }
        let d = chords[0].len();
        for (i, z) in chords.iter().enumerate() {
            if z.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: z.len() });
            }
            if (dot(z, z).sqrt() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!("chord {i} is not a unit vector")));
            }
            if chords[..i].iter().any(|u| linf(u, z) < DEDUP_TOL) {
                return Err(Error::InvalidModel(format!("chord {i} duplicates an earlier chord")));
            }
        }
        Ok(Self { chords })
    }

    /// [`crate::geometry::chord_grid`] wrapped as a set.
    pub fn grid(d: usize, h: usize, signed: bool) -> Result<Self> {
        Self::new(crate::geometry::chord_grid(d, h, signed))
    }

    pub fn len(&self) -> usize {
        self.chords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.chords[0].len()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.chords[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.chords.iter().map(|z| z.as_slice())
    }
}

/// A task a meta-policy can be trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TaskSpec {
    Linear(TaskWeight),
    Nonlinear(NonlinearReward),
}

impl TaskSpec {
    pub fn reward(&self, phi: &FeatureMap) -> Result<RewardTable> {
        match self {
            TaskSpec::Linear(w) => task_reward(phi, w.as_slice()),
            TaskSpec::Nonlinear(r) => Ok(r.table().clone()),
        }
    }

    pub fn weight(&self) -> Option<&TaskWeight> {
        match self {
            TaskSpec::Linear(w) => Some(w),
            TaskSpec::Nonlinear(_) => None,
        }
    }
}

/// Chord tables `(state, task) → chord index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicy {
    chord_set: ChordSet,
    tasks: Vec<TaskSpec>,
    tables: Vec<Vec<usize>>,
}

impl MetaPolicy {
    pub fn new(chord_set: ChordSet) -> Self {
        Self { chord_set, tasks: Vec::new(), tables: Vec::new() }
    }

    pub fn chord_set(&self) -> &ChordSet {
        &self.chord_set
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, id: usize) -> Result<&TaskSpec> {
        self.tasks.get(id).ok_or(Error::UnknownTask(id))
    }

    pub fn table(&self, id: usize) -> Result<&[usize]> {
        self.tables.get(id).map(|t| t.as_slice()).ok_or(Error::UnknownTask(id))
    }

    /// Task id of a registered linear weight (L∞ match).
    pub fn find_weight(&self, w: &[f64]) -> Option<usize> {
        self.tasks.iter().position(|t| t.weight().is_some_and(|u| u.dim() == w.len() && linf(u.as_slice(), w) < DEDUP_TOL))
    }

    pub fn chord(&self, s: usize, task: usize) -> Result<&[f64]> {
        let table = self.table(task)?;
        Ok(self.chord_set.get(table[s]))
    }

    /// Inserts or replaces the table of a task; returns its id.
    pub fn set(&mut self, task: TaskSpec, table: Vec<usize>) -> usize {
        let existing = match &task {
            TaskSpec::Linear(w) => self.find_weight(w.as_slice()),
            TaskSpec::Nonlinear(_) => self.tasks.iter().position(|t| t == &task),
        };
        match existing {
            Some(id) => {
                self.tables[id] = table;
                id
            }
            None => {
                self.tasks.push(task);
                self.tables.push(table);
                self.tasks.len() - 1
            }
        }
    }

    /// Meta-policy with a constant chord for a task: chord `z / ||z||`
    /// must be in the chord set.
    pub fn constant(chord_set: ChordSet, task: TaskSpec, n_states: usize, z: &[f64]) -> Result<Self> {
        let norm = dot(z, z).sqrt();
        let unit: Vec<f64> = z.iter().map(|x| x / norm).collect();
        let c = chord_set
            .iter()
            .position(|u| linf(u, &unit) < DEDUP_TOL)
            .ok_or_else(|| Error::InvalidModel("chord is not in the chord set".into()))?;
        let mut meta = Self::new(chord_set);
        meta.set(task, vec![c; n_states]);
        Ok(meta)
    }
}

/// A basis, a chord set and the primitive action every chord selects in
/// every state.
#[derive(Debug)]
pub struct OptionKeyboard<'a> {
    pub mcp: &'a TabularMcp,
    pub phi: &'a FeatureMap,
    pub basis: &'a [SFRecord],
    pub chords: &'a ChordSet,
    /// `chord_action[s * |Z| + c]`
    chord_action: Vec<usize>,
}

impl<'a> OptionKeyboard<'a> {
    pub fn new(mcp: &'a TabularMcp, phi: &'a FeatureMap, basis: &'a [SFRecord], chords: &'a ChordSet) -> Result<Self> {
        let first = basis.first().ok_or(Error::EmptyBasis)?;
        if first.dim() != phi.dim() {
            return Err(Error::DimensionMismatch { expected: phi.dim(), found: first.dim() });
        }
        if chords.dim() != phi.dim() {
            return Err(Error::DimensionMismatch { expected: phi.dim(), found: chords.dim() });
        }
        let nz = chords.len();
        let chord_action = (0..mcp.n_states())
            .into_par_iter()
            .flat_map_iter(|s| (0..nz).map(move |c| gpi_action_unchecked(basis, s, chords.get(c))))
            .collect();
        Ok(Self { mcp, phi, basis, chords, chord_action })
    }

    #[inline]
    pub fn action_for_chord(&self, s: usize, c: usize) -> usize {
        self.chord_action[s * self.chords.len() + c]
    }

    /// Primitive actions some chord produces in `s`.
    pub fn expressible(&self, s: usize) -> Vec<bool> {
        let mut out = vec![false; self.mcp.n_actions()];
        for c in 0..self.chords.len() {
            out[self.action_for_chord(s, c)] = true;
        }
        out
    }

    pub fn flat_policy(&self, table: &[usize]) -> Policy {
        Policy((0..self.mcp.n_states()).map(|s| self.action_for_chord(s, table[s])).collect())
    }

    /// Optimal chord table for `reward` among all chord tables.
    pub fn train_table(&self, reward: &RewardTable, tol: f64) -> Result<Vec<usize>> {
        let na = self.mcp.n_actions();
        let allowed: Vec<bool> = (0..self.mcp.n_states())
            .flat_map(|s| {
                if self.mcp.is_terminal(s) {
                    vec![true; na]
                } else {
                    self.expressible(s)
                }
            })
            .collect();
        let plan = solve_restricted(self.mcp, reward, tol, |s, a| allowed[s * na + a])?;
        let table = (0..self.mcp.n_states())
            .map(|s| {
                if self.mcp.is_terminal(s) {
                    return 0;
                }
                let best = plan.q_star.v[s];
                (0..self.chords.len())
                    .find(|&c| plan.q_star.get(s, self.action_for_chord(s, c)) >= best - TIE_TOL)
                    .expect("the optimum is attained by some chord")
            })
            .collect();
        Ok(table)
    }

    /// Trains every task; tasks are independent and solved in parallel.
    pub fn train(&self, meta: &mut MetaPolicy, tasks: &[TaskSpec], tol: f64) -> Result<Vec<usize>> {
        let tables: Vec<Vec<usize>> = tasks
            .par_iter()
            .map(|t| self.train_table(&t.reward(self.phi)?, tol))
            .collect::<Result<_>>()?;
        Ok(tasks.iter().cloned().zip(tables).map(|(t, table)| meta.set(t, table)).collect())
    }

    /// Base-policy index and action selected by GPI on chord `c` in `s`.
    pub fn gpi_choice(&self, s: usize, c: usize) -> (usize, usize) {
        let z = self.chords.get(c);
        let mut best = f64::NEG_INFINITY;
        let mut choice = (0, 0);
        for (i, rec) in self.basis.iter().enumerate() {
            for a in 0..self.mcp.n_actions() {
                let v = rec.q(s, a, z);
                if v > best + TIE_TOL {
                    best = v;
                    choice = (i, a);
                }
            }
        }
        choice
    }
}

/// Trains a meta-policy from scratch on `tasks`.
pub fn train_meta_policy(
    mcp: &TabularMcp,
    phi: &FeatureMap,
    basis: &[SFRecord],
    tasks: &[TaskSpec],
    chords: &ChordSet,
    tol: f64,
) -> Result<MetaPolicy> {
    for t in tasks {
        if let TaskSpec::Linear(w) = t {
            if w.dim() != phi.dim() {
                return Err(Error::DimensionMismatch { expected: phi.dim(), found: w.dim() });
            }
        }
    }
    let kb = OptionKeyboard::new(mcp, phi, basis, chords)?;
    let mut meta = MetaPolicy::new(chords.clone());
    kb.train(&mut meta, tasks, tol)?;
    Ok(meta)
}

/// `gpi_action(basis, s, ω(s, task))`.
pub fn ok_action(basis: &[SFRecord], meta: &MetaPolicy, s: usize, task: usize) -> Result<usize> {
    let z = meta.chord(s, task)?;
    crate::planner::gpi_action(basis, s, z)
}

/// The flat policy `s ↦ ok_action(basis, ω, s, task)`.
pub fn ok_flat_policy(mcp: &TabularMcp, basis: &[SFRecord], meta: &MetaPolicy, task: usize) -> Result<Policy> {
    (0..mcp.n_states()).map(|s| ok_action(basis, meta, s, task)).collect::<Result<Vec<_>>>().map(Policy)
}

/// Exact successor features of the OK policy for a task.
pub fn ok_policy_successor_features(
    mcp: &TabularMcp,
    phi: &FeatureMap,
    basis: &[SFRecord],
    meta: &MetaPolicy,
    task: usize,
) -> Result<SFRecord> {
    let policy = ok_flat_policy(mcp, basis, meta, task)?;
    let rec = policy_successor_features(mcp, phi, &policy)?;
    Ok(match meta.task(task)?.weight() {
        Some(w) => rec.with_source(w.clone()),
        None => rec,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageReport {
    n_actions: usize,
    /// `A[s * n_actions + a]`
    pub advantages: Vec<f64>,
    pub max_positive: f64,
    pub mean_positive: f64,
    pub witnesses: Vec<(usize, usize)>,
    pub tol: f64,
    /// Exact values of the meta-policy on the task.
    pub values: QTable,
}

impl AdvantageReport {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.advantages[s * self.n_actions + a]
    }

    /// Some action beats the meta-policy by more than `tol`: the basis cannot
    /// express an optimal policy for this task.
    pub fn inexpressible(&self) -> bool {
        self.max_positive > self.tol
    }
}

/// Advantage of every primitive action over the meta-policy's own choice,
/// computed from the exact values of the induced flat policy.
pub fn advantage_report(
    mcp: &TabularMcp,
    reward: &RewardTable,
    basis: &[SFRecord],
    meta: &MetaPolicy,
    task: usize,
    tol: f64,
) -> Result<AdvantageReport> {
    let policy = ok_flat_policy(mcp, basis, meta, task)?;
    advantage_of_policy(mcp, reward, &policy, tol)
}

pub(crate) fn advantage_of_policy(mcp: &TabularMcp, reward: &RewardTable, policy: &Policy, tol: f64) -> Result<AdvantageReport> {
    let values = evaluate_flat_policy(mcp, reward, policy)?;
    let na = mcp.n_actions();
    let mut advantages = vec![0.0; mcp.n_states() * na];
    let mut witnesses = Vec::new();
    let (mut sum, mut count, mut max) = (0.0, 0usize, 0.0f64);
    for s in 0..mcp.n_states() {
        let own = values.get(s, policy.action(s));
        for a in 0..na {
            let adv = values.get(s, a) - own;
            advantages[s * na + a] = adv;
            max = max.max(adv);
            if adv > ADVANTAGE_ZERO {
                sum += adv;
                count += 1;
            }
            if adv > tol {
                witnesses.push((s, a));
            }
        }
    }
    let mean_positive = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(AdvantageReport { n_actions: na, advantages, max_positive: max, mean_positive, witnesses, tol, values })
}

/// One step of an OK rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChordStep {
    pub step: usize,
    pub state: usize,
    pub chord: Vec<f64>,
    pub base_policy: usize,
    pub action: usize,
}

/// Rolls out the OK for `task` from `start`, sampling successors with `seed`,
/// until a terminal state or `max_steps`.
pub fn chord_trajectory(
    kb: &OptionKeyboard<'_>,
    meta: &MetaPolicy,
    task: usize,
    start: usize,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<ChordStep>> {
    let table = meta.table(task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = start;
    let mut out = Vec::new();
    for step in 0..max_steps {
        if kb.mcp.is_terminal(s) {
            break;
        }
        let c = table[s];
        let (base_policy, action) = kb.gpi_choice(s, c);
        out.push(ChordStep { step, state: s, chord: kb.chords.get(c).to_vec(), base_policy, action });
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = s;
        for (_, s2, p) in kb.mcp.successors(s, action) {
            acc += p;
            next = s2;
            if u < acc {
                break;
            }
        }
        s = next;
    }
    Ok(out)
}

/// Writes `step,z_0..z_{d-1},base_policy,action` rows.
pub fn write_chord_trajectory_csv(mut out: impl Write, steps: &[ChordStep]) -> Result<()> {
    let d = steps.first().map_or(0, |s| s.chord.len());
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|i| format!("z_{i}")));
    header.push("base_policy".into());
    header.push("action".into());
    writeln!(out, "{}", header.join(","))?;
    for st in steps {
        let mut row = vec![st.step.to_string()];
        row.extend(st.chord.iter().map(|x| x.to_string()));
        row.push(st.base_policy.to_string());
        row.push(st.action.to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
