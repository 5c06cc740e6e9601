//! Behavior-basis construction: OKB with its inner OK-LS loop, and the SFOLS
//! baseline that builds a CCS from base policies alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{corner_weights, linf, remove_dominated, minimal_ccs, scalarized_max, SFSet, DEDUP_TOL, DOMINANCE_TOL};
use crate::mdp::{task_reward, FeatureMap, TabularMcp, TaskWeight};
use crate::ok::{advantage_report, ok_policy_successor_features, ChordSet, MetaPolicy, OptionKeyboard, TaskSpec};
use crate::planner::{new_policy, policy_successor_features, solve_task, Policy, SFRecord, VI_TOL};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Candidate with the largest mean positive advantage.
    #[default]
    Advantage,
    /// Uniform sample from the simplex, ignoring the candidates.
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OkbConfig {
    pub chords: ChordSet,
    /// Expressibility threshold on the max positive advantage.
    pub tol: f64,
    pub vi_tol: f64,
    /// Maximum number of base policies added after the initial one.
    pub max_iters: usize,
    pub okls_iters: usize,
    pub selection: Selection,
    pub seed: u64,
}

impl OkbConfig {
    pub fn new(chords: ChordSet) -> Self {
        Self { chords, tol: 1e-7, vi_tol: VI_TOL, max_iters: 20, okls_iters: 5, selection: Selection::Advantage, seed: 0 }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.chords.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: self.chords.dim() });
        }
        if !(self.tol >= 0.0 && self.vi_tol > 0.0) {
            return Err(Error::Config("tolerances must be non-negative".into()));
        }
        if self.okls_iters == 0 {
            return Err(Error::Config("okls_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the iteration log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub basis_size: usize,
    pub support_size: usize,
    pub selected_w: Option<Vec<f64>>,
    pub candidates: Vec<Vec<f64>>,
    /// Largest `v*_w - v_w` over the checked corner weights, from exact VI.
    pub max_delta: f64,
    pub corner_deltas: Vec<(Vec<f64>, f64)>,
    pub policy_solves: usize,
    pub meta_solves: usize,
}

impl IterationRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisResult {
    pub basis: Vec<SFRecord>,
    pub meta: MetaPolicy,
    pub partial_ccs: SFSet,
    pub weight_support: Vec<TaskWeight>,
    pub log: Vec<IterationRecord>,
    pub truncated: bool,
}

/// A candidate task and the mean positive advantage of the OK trained on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub w: TaskWeight,
    pub mean_positive: f64,
}

/// Picks the next task to learn a base policy for.
pub fn select_candidate(candidates: &[Candidate], d: usize, mode: Selection, rng: &mut ChaCha8Rng) -> Result<TaskWeight> {
    match mode {
        Selection::Advantage => {
            let mut best: Option<&Candidate> = None;
            for c in candidates {
                if best.is_none_or(|b| c.mean_positive > b.mean_positive) {
                    best = Some(c);
                }
            }
            best.map(|c| c.w.clone()).ok_or_else(|| Error::Degenerate("no candidate tasks to select from".into()))
        }
        Selection::Uniform => {
            let x: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = x.iter().sum();
            let mut w: Vec<f64> = x.iter().map(|v| v / total).collect();
            let rest: f64 = w[..d - 1].iter().sum();
            w[d - 1] = (1.0 - rest).max(0.0);
            TaskWeight::convex(w)
        }
    }
}

/// Mutable state shared by OKB and OK-LS.
#[derive(Clone, Debug)]
pub struct OkbState {
    pub basis: Vec<SFRecord>,
    pub meta: MetaPolicy,
    pub partial_ccs: SFSet,
    pub weight_support: Vec<TaskWeight>,
    /// The meta-policy and `partial_ccs` were computed for the current basis.
    fresh: bool,
    pub policy_solves: usize,
    pub meta_solves: usize,
}

impl OkbState {
    pub fn new(basis: Vec<SFRecord>, chords: ChordSet) -> Self {
        Self {
            basis,
            meta: MetaPolicy::new(chords),
            partial_ccs: SFSet::new(),
            weight_support: Vec::new(),
            fresh: true,
            policy_solves: 0,
            meta_solves: 0,
        }
    }

    /// Adds a base policy and prunes dominated ones.
    pub fn add_base_policy(&mut self, rec: SFRecord) -> Result<()> {
        self.basis.push(rec);
        self.basis = prune_policies(std::mem::take(&mut self.basis))?;
        self.fresh = false;
        Ok(())
    }

    fn retrain(&mut self, mcp: &TabularMcp, phi: &FeatureMap, weights: &[TaskWeight], cfg: &OkbConfig) -> Result<()> {
        let kb = OptionKeyboard::new(mcp, phi, &self.basis, &cfg.chords)?;
        let tasks: Vec<TaskSpec> = weights.iter().cloned().map(TaskSpec::Linear).collect();
        let ids = kb.train(&mut self.meta, &tasks, cfg.vi_tol)?;
        self.meta_solves += ids.len();
        let basis = &self.basis;
        let meta = &self.meta;
        let sfs: Vec<SFRecord> =
            ids.par_iter().map(|&id| ok_policy_successor_features(mcp, phi, basis, meta, id)).collect::<Result<_>>()?;
        for (id, rec) in ids.into_iter().zip(sfs) {
            self.partial_ccs.insert(id, rec.sf_vector);
        }
        Ok(())
    }
}

/// Drops base policies whose SF vector is dominated; policies that share an
/// SF vector with a survivor are kept.
fn prune_policies(basis: Vec<SFRecord>) -> Result<Vec<SFRecord>> {
    let set = SFSet::from_vectors(basis.iter().map(|r| r.sf_vector.clone()));
    let kept = remove_dominated(&set, DOMINANCE_TOL)?;
    Ok(basis
        .into_iter()
        .filter(|r| kept.vectors().iter().any(|v| linf(v, &r.sf_vector) < DEDUP_TOL))
        .collect())
}

fn contains_weight(ws: &[TaskWeight], w: &[f64]) -> bool {
    ws.iter().any(|u| linf(u.as_slice(), w) < DEDUP_TOL)
}

/// Outcome of one OK-LS call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OkLsOutcome {
    pub passes: usize,
    pub converged: bool,
}

/// OK-LS: grows the weight support with the corner weights of the partial
/// CCS, retraining the meta-policy, until no new corner appears or
/// `okls_iters` passes have run.
///
/// If the basis changed since the last call, the meta-policy is first
/// retrained on the whole support and the partial CCS rebuilt. An empty
/// partial CCS has the simplex extremes as corners; the uniform task joins
/// them on the first pass.
pub fn ok_ls(mcp: &TabularMcp, phi: &FeatureMap, state: &mut OkbState, cfg: &OkbConfig) -> Result<OkLsOutcome> {
    if state.basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let d = phi.dim();
    if !state.fresh {
        state.partial_ccs = SFSet::new();
        let support = state.weight_support.clone();
        state.retrain(mcp, phi, &support, cfg)?;
        state.partial_ccs = remove_dominated(&state.partial_ccs, DOMINANCE_TOL)?;
        state.fresh = true;
    }
    for pass in 0..cfg.okls_iters {
        let bootstrap = state.partial_ccs.is_empty();
        let mut corners = corner_weights(&state.partial_ccs, d)?.weights;
        if bootstrap {
            corners.push(TaskWeight::uniform(d).into_vec());
        }
        let new: Vec<TaskWeight> = corners
            .into_iter()
            .filter(|w| !contains_weight(&state.weight_support, w))
            .map(TaskWeight::convex)
            .collect::<Result<_>>()?;
        if new.is_empty() {
            return Ok(OkLsOutcome { passes: pass, converged: true });
        }
        state.weight_support.extend(new.iter().cloned());
        state.retrain(mcp, phi, &new, cfg)?;
        state.partial_ccs = remove_dominated(&state.partial_ccs, DOMINANCE_TOL)?;
    }
    Ok(OkLsOutcome { passes: cfg.okls_iters, converged: false })
}

/// Observer called once per iteration with the iteration index, the current
/// basis and the meta-policy trained on it.
pub type Observer<'a> = dyn FnMut(usize, &[SFRecord], &MetaPolicy) -> Result<()> + 'a;

/// OKB with the default no-op observer.
pub fn okb_run(mcp: &TabularMcp, phi: &FeatureMap, cfg: &OkbConfig) -> Result<BasisResult> {
    okb_run_observed(mcp, phi, cfg, &mut |_, _, _| Ok(()))
}

struct CornerCheck {
    w: Vec<f64>,
    max_positive: f64,
    mean_positive: f64,
    delta: f64,
}

pub fn okb_run_observed(mcp: &TabularMcp, phi: &FeatureMap, cfg: &OkbConfig, observe: &mut Observer<'_>) -> Result<BasisResult> {
    let d = phi.dim();
    cfg.validate(d)?;
    // fail on unsupported dimensions before any training
    corner_weights(&SFSet::new(), d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w0 = TaskWeight::uniform(d);
    let first = new_policy(mcp, phi, &w0, cfg.vi_tol)?;
    let mut state = OkbState::new(vec![first], cfg.chords.clone());
    state.policy_solves = 1;
    let mut log = Vec::new();
    let mut truncated = false;

    for k in 0..=cfg.max_iters {
        ok_ls(mcp, phi, &mut state, cfg)?;
        observe(k, &state.basis, &state.meta)?;

        let base_set = SFSet::from_vectors(state.basis.iter().map(|r| r.sf_vector.clone()));
        let mut corners = corner_weights(&base_set, d)?.weights;
        for w in corner_weights(&state.partial_ccs, d)?.weights {
            if !corners.iter().any(|u| linf(u, &w) < DEDUP_TOL) {
                corners.push(w);
            }
        }
        let checks = check_corners(mcp, phi, &state.basis, &corners, cfg)?;
        state.meta_solves += checks.len();

        let candidates: Vec<Candidate> = checks
            .iter()
            .filter(|c| c.max_positive > cfg.tol)
            .map(|c| Ok(Candidate { w: TaskWeight::convex(c.w.clone())?, mean_positive: c.mean_positive }))
            .collect::<Result<_>>()?;
        let mut record = IterationRecord {
            iter: k,
            basis_size: state.basis.len(),
            support_size: state.weight_support.len(),
            selected_w: None,
            candidates: candidates.iter().map(|c| c.w.as_slice().to_vec()).collect(),
            max_delta: checks.iter().map(|c| c.delta).fold(0.0, f64::max),
            corner_deltas: checks.iter().map(|c| (c.w.clone(), c.delta)).collect(),
            policy_solves: state.policy_solves,
            meta_solves: state.meta_solves,
        };
        if candidates.is_empty() {
            log.push(record);
            break;
        }
        if k == cfg.max_iters {
            truncated = true;
            log.push(record);
            break;
        }
        let w = select_candidate(&candidates, d, cfg.selection, &mut rng)?;
        record.selected_w = Some(w.as_slice().to_vec());
        log.push(record);
        let rec = new_policy(mcp, phi, &w, cfg.vi_tol)?;
        state.policy_solves += 1;
        state.add_base_policy(rec)?;
    }

    Ok(BasisResult {
        basis: state.basis,
        meta: state.meta,
        partial_ccs: state.partial_ccs,
        weight_support: state.weight_support,
        log,
        truncated,
    })
}

/// Trains the OK on each corner on its own and runs the advantage test.
/// Tasks are independent, so this matches training on the support plus the
/// candidate.
fn check_corners(
    mcp: &TabularMcp,
    phi: &FeatureMap,
    basis: &[SFRecord],
    corners: &[Vec<f64>],
    cfg: &OkbConfig,
) -> Result<Vec<CornerCheck>> {
    let kb = OptionKeyboard::new(mcp, phi, basis, &cfg.chords)?;
    corners
        .par_iter()
        .map(|w| {
            let task = TaskSpec::Linear(TaskWeight::convex(w.clone())?);
            let reward = task.reward(phi)?;
            let mut meta = MetaPolicy::new(cfg.chords.clone());
            let table = kb.train_table(&reward, cfg.vi_tol)?;
            let id = meta.set(task, table);
            let report = advantage_report(mcp, &reward, basis, &meta, id, cfg.tol)?;
            let optimum = solve_task(mcp, &reward, cfg.vi_tol)?.v_mu;
            Ok(CornerCheck {
                w: w.clone(),
                max_positive: report.max_positive,
                mean_positive: report.mean_positive,
                delta: (optimum - report.values.v_mu).max(0.0),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfolsConfig {
    /// Corners with `Δ(w)` at or below this are considered solved.
    pub tol: f64,
    pub vi_tol: f64,
    pub max_iters: usize,
}

impl Default for SfolsConfig {
    fn default() -> Self {
        Self { tol: 1e-9, vi_tol: VI_TOL, max_iters: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SfolsResult {
    pub policies: Vec<SFRecord>,
    /// SF vectors of `policies`, ids are indices into it.
    pub set: SFSet,
    pub log: Vec<IterationRecord>,
    pub truncated: bool,
}

impl SfolsResult {
    /// The returned set with weakly optimal vectors removed.
    pub fn ccs(&self) -> Result<SFSet> {
        minimal_ccs(&self.set, DOMINANCE_TOL)
    }
}

pub fn sfols_run(mcp: &TabularMcp, phi: &FeatureMap, cfg: &SfolsConfig) -> Result<SfolsResult> {
    sfols_run_observed(mcp, phi, cfg, &mut |_, _| Ok(()))
}

/// Optimistic linear support over base policies: repeatedly solve the corner
/// weight with the largest gap `Δ(w)` exactly.
pub fn sfols_run_observed(
    mcp: &TabularMcp,
    phi: &FeatureMap,
    cfg: &SfolsConfig,
    observe: &mut dyn FnMut(usize, &[SFRecord]) -> Result<()>,
) -> Result<SfolsResult> {
    let d = phi.dim();
    corner_weights(&SFSet::new(), d)?;
    let w0 = TaskWeight::uniform(d);
    let mut policies = vec![new_policy(mcp, phi, &w0, cfg.vi_tol)?];
    let mut solves = 1;
    let mut log = Vec::new();
    let mut truncated = false;
    // corner weights persist across iterations, so their solutions are kept
    let mut cache: Vec<(Vec<f64>, (f64, Policy))> = Vec::new();

    for k in 0..=cfg.max_iters {
        observe(k, &policies)?;
        let set = SFSet::from_vectors(policies.iter().map(|r| r.sf_vector.clone()));
        let corners = corner_weights(&set, d)?;
        let missing: Vec<&Vec<f64>> =
            corners.weights.iter().filter(|w| !cache.iter().any(|(u, _)| linf(u, w) < DEDUP_TOL)).collect();
        let fresh: Vec<(f64, Policy)> = missing
            .par_iter()
            .map(|w| {
                let plan = solve_task(mcp, &task_reward(phi, w)?, cfg.vi_tol)?;
                Ok((plan.v_mu, plan.policy))
            })
            .collect::<Result<_>>()?;
        solves += fresh.len();
        cache.extend(missing.into_iter().cloned().zip(fresh));
        let solved: Vec<&(f64, Policy)> = corners
            .weights
            .iter()
            .map(|w| &cache.iter().find(|(u, _)| linf(u, w) < DEDUP_TOL).expect("solved above").1)
            .collect();
        let deltas: Vec<f64> = solved.iter().zip(&corners.values).map(|((v, _), env)| (v - env).max(0.0)).collect();
        let mut best: Option<usize> = None;
        for (i, &delta) in deltas.iter().enumerate() {
            if delta > cfg.tol && best.is_none_or(|b| delta > deltas[b]) {
                best = Some(i);
            }
        }
        let mut record = IterationRecord {
            iter: k,
            basis_size: policies.len(),
            support_size: corners.len(),
            selected_w: None,
            candidates: corners.weights.iter().zip(&deltas).filter(|(_, &dl)| dl > cfg.tol).map(|(w, _)| w.clone()).collect(),
            max_delta: deltas.iter().copied().fold(0.0, f64::max),
            corner_deltas: corners.weights.iter().cloned().zip(deltas.iter().copied()).collect(),
            policy_solves: solves,
            meta_solves: 0,
        };
        let Some(i) = best else {
            log.push(record);
            break;
        };
        if k == cfg.max_iters {
            truncated = true;
            log.push(record);
            break;
        }
        let w = TaskWeight::convex(corners.weights[i].clone())?;
        record.selected_w = Some(w.as_slice().to_vec());
        log.push(record);
        let rec = policy_successor_features(mcp, phi, &solved[i].1)?.with_source(w);
        policies.push(rec);
        policies = prune_policies(policies)?;
    }
    let set = SFSet::from_vectors(policies.iter().map(|r| r.sf_vector.clone()));
    Ok(SfolsResult { policies, set, log, truncated })
}

/// `max_ψ ψ·w` of the partial CCS at every weight.
pub fn coverage(partial_ccs: &SFSet, weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    weights.iter().map(|w| scalarized_max(partial_ccs, w).map(|(v, _)| v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::simplex_grid;
    use crate::mdp::{build_corridors, build_item_grid, build_random_mcp, McpBuilder};

    fn chords2() -> ChordSet {
        ChordSet::grid(2, 8, true).unwrap()
    }

    #[test]
    fn single_policy_ccs_terminates_immediately() {
        let mut b = McpBuilder::new(2, 2, 2);
        b.all_actions(0, 1, &[1.0, 1.0]).absorbing(1);
        let (mcp, phi) = b.build(vec![1.0, 0.0], 0.9).unwrap();
        let res = okb_run(&mcp, &phi, &OkbConfig::new(chords2())).unwrap();
        assert_eq!(res.basis.len(), 1);
        assert_eq!(res.log.len(), 1);
        assert!(!res.truncated);
        let sf = sfols_run(&mcp, &phi, &SfolsConfig::default()).unwrap();
        assert_eq!(sf.ccs().unwrap().len(), 1);
    }

    #[test]
    fn uniform_selection_is_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = select_candidate(&[], 3, Selection::Uniform, &mut a).unwrap();
            let y = select_candidate(&[], 3, Selection::Uniform, &mut b).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn advantage_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(select_candidate(&[], 2, Selection::Advantage, &mut rng).is_err());
        let a = Candidate { w: TaskWeight::convex(vec![1.0, 0.0]).unwrap(), mean_positive: 0.0 };
        let b = Candidate { w: TaskWeight::convex(vec![0.0, 1.0]).unwrap(), mean_positive: 0.3 };
        assert_eq!(select_candidate(&[a.clone()], 2, Selection::Advantage, &mut rng).unwrap(), a.w);
        assert_eq!(select_candidate(&[a, b.clone()], 2, Selection::Advantage, &mut rng).unwrap(), b.w);
    }

    #[test]
    fn sfols_covers_random_mcp() {
        let (mcp, phi) = build_random_mcp(3, 12, 3, 2, 0.9, 3).unwrap();
        let res = sfols_run(&mcp, &phi, &SfolsConfig::default()).unwrap();
        assert!(!res.truncated);
        for w in simplex_grid(2, 99) {
            let v = solve_task(&mcp, &task_reward(&phi, &w).unwrap(), VI_TOL).unwrap().v_mu;
            let (m, _) = scalarized_max(&res.set, &w).unwrap();
            assert!((v - m).abs() < 1e-6, "{w:?}: {v} vs {m}");
        }
    }

    #[test]
    fn okls_fixed_point_is_unchanged() {
        let (mcp, phi) = build_item_grid(3, 3, 1, true, 0).unwrap();
        let cfg = OkbConfig::new(chords2());
        let res = okb_run(&mcp, &phi, &cfg).unwrap();
        let mut state = OkbState::new(res.basis.clone(), cfg.chords.clone());
        ok_ls(&mcp, &phi, &mut state, &OkbConfig { okls_iters: 100, ..cfg.clone() }).unwrap();
        let before = (state.partial_ccs.clone(), state.weight_support.clone());
        let out = ok_ls(&mcp, &phi, &mut state, &cfg).unwrap();
        assert!(out.converged);
        assert_eq!(out.passes, 0);
        assert_eq!((state.partial_ccs, state.weight_support), before);
    }

    #[test]
    fn support_weights_are_registered() {
        let (mcp, phi) = build_item_grid(3, 3, 1, false, 2).unwrap();
        let res = okb_run(&mcp, &phi, &OkbConfig::new(chords2())).unwrap();
        for w in &res.weight_support {
            assert!(res.meta.find_weight(w.as_slice()).is_some());
        }
        let pruned = remove_dominated(&SFSet::from_vectors(res.basis.iter().map(|r| r.sf_vector.clone())), DOMINANCE_TOL).unwrap();
        assert_eq!(pruned.len(), res.basis.len());
    }

    #[test]
    fn corridors_need_every_ccs_policy() {
        let (mcp, phi) = build_corridors(3, 0.9).unwrap();
        let okb = okb_run(&mcp, &phi, &OkbConfig::new(ChordSet::grid(2, 16, true).unwrap())).unwrap();
        let sf = sfols_run(&mcp, &phi, &SfolsConfig::default()).unwrap();
        assert_eq!(okb.basis.len(), sf.ccs().unwrap().len());
    }

    #[test]
    fn log_serializes_to_json_lines() {
        let (mcp, phi) = build_item_grid(3, 3, 1, true, 1).unwrap();
        let res = okb_run(&mcp, &phi, &OkbConfig::new(chords2())).unwrap();
        for r in &res.log {
            let line = r.to_json_line().unwrap();
            assert!(!line.contains('\n'));
            let back: IterationRecord = serde_json::from_str(&line).unwrap();
            assert_eq!(&back, r);
        }
    }
}
