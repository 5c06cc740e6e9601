//! Experiment runner: configs, seeded runs, zero-shot evaluation, exports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{okb_run_observed, sfols_run_observed, OkbConfig, Selection, SfolsConfig};
use crate::error::{Error, Result};
use crate::geometry::{chord_grid, corner_weights, default_chord_resolution, simplex_grid, SFSet};
use crate::mdp::{
    build_corridors, build_counterexample, build_random_mcp, counterexample_task, dot, task_reward, FeatureMap,
    ItemGridLayout, TabularMcp, TaskWeight, COUNTEREXAMPLE_FEATURES,
};
use crate::ok::{advantage_report, ok_flat_policy, train_meta_policy, ChordSet, MetaPolicy, OptionKeyboard, TaskSpec};
use crate::planner::{evaluate_flat_policy, gpi_policy, policy_successor_features, solve_task, Policy, SFRecord, VI_TOL};

pub const SNAPSHOT_VERSION: &str = "okb-snapshot v1";
pub const THREADS_ENV: &str = "OKB_THREADS";
const BOOTSTRAP_RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x5eed_b007;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Okb,
    OkbUniform,
    Sfols,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Okb => "okb",
            Method::OkbUniform => "okb-uniform",
            Method::Sfols => "sfols",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "okb" => Ok(Method::Okb),
            "okb-uniform" => Ok(Method::OkbUniform),
            "sfols" => Ok(Method::Sfols),
            _ => Err(Error::Config(format!("unknown method `{s}` (expected okb, okb-uniform or sfols)"))),
        }
    }
}

/// Environment name plus parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChordParams {
    /// Lattice resolution, defaults by feature dimension.
    pub resolution: Option<usize>,
    #[serde(default = "yes")]
    pub signed: bool,
}

fn yes() -> bool {
    true
}

impl Default for ChordParams {
    fn default() -> Self {
        Self { resolution: None, signed: true }
    }
}

impl ChordParams {
    pub fn build(&self, d: usize) -> Result<ChordSet> {
        let h = self.resolution.unwrap_or_else(|| default_chord_resolution(d));
        if h == 0 {
            return Err(Error::Config("chord resolution must be positive".into()));
        }
        ChordSet::new(chord_grid(d, h, self.signed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub advantage: f64,
    pub vi: f64,
    pub sfols: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { advantage: 1e-7, vi: VI_TOL, sfols: 1e-9 }
    }
}

fn default_grid() -> usize {
    20
}

fn default_iters() -> usize {
    10
}

fn default_okls() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvSpec,
    pub method: Method,
    pub seeds: Vec<u64>,
    /// Expected feature dimension; checked against the environment.
    pub d: Option<usize>,
    #[serde(default = "default_grid")]
    pub test_grid_h: usize,
    #[serde(default)]
    pub chords: ChordParams,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_okls")]
    pub okls_iters: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; a relative `output_dir` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.test_grid_h == 0 {
            return Err(Error::Config("test_grid_h must be positive".into()));
        }
        if self.okls_iters == 0 {
            return Err(Error::Config("okls_iters must be positive".into()));
        }
        check_env_params(&self.environment)
    }
}

const ENVIRONMENTS: &[(&str, &[&str])] = &[
    ("item-grid", &["width", "height", "items_per_type", "toroidal", "layout_seed", "discount"]),
    ("random-mcp", &["n_states", "n_actions", "d", "discount", "branching", "mcp_seed"]),
    ("corridors", &["length", "discount"]),
    ("counterexample", &[]),
];

fn check_env_params(spec: &EnvSpec) -> Result<()> {
    let (_, keys) = ENVIRONMENTS
        .iter()
        .find(|(n, _)| *n == spec.name)
        .ok_or_else(|| Error::Config(format!("unknown environment `{}`", spec.name)))?;
    for k in spec.params.keys() {
        if !keys.contains(&k.as_str()) {
            return Err(Error::Config(format!("unknown parameter `{k}` for environment `{}`", spec.name)));
        }
    }
    Ok(())
}

fn param_usize(p: &toml::Table, key: &str, default: usize) -> Result<usize> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_integer()
            .and_then(|i| usize::try_from(i).ok())
            .ok_or_else(|| Error::Config(format!("`{key}` must be a non-negative integer"))),
    }
}

fn param_u64(p: &toml::Table, key: &str, default: u64) -> Result<u64> {
    param_usize(p, key, default as usize).map(|v| v as u64)
}

fn param_f64(p: &toml::Table, key: &str, default: f64) -> Result<f64> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_float()
            .or_else(|| v.as_integer().map(|i| i as f64))
            .ok_or_else(|| Error::Config(format!("`{key}` must be a number"))),
    }
}

fn param_bool(p: &toml::Table, key: &str, default: bool) -> Result<bool> {
    match p.get(key) {
        None => Ok(default),
        Some(v) => v.as_bool().ok_or_else(|| Error::Config(format!("`{key}` must be a boolean"))),
    }
}

/// Builds a named environment. Randomized environments use their seed
/// parameter when given and the run seed otherwise.
pub fn build_environment(spec: &EnvSpec, run_seed: u64) -> Result<(TabularMcp, FeatureMap)> {
    check_env_params(spec)?;
    let p = &spec.params;
    match spec.name.as_str() {
        "item-grid" => {
            let layout = ItemGridLayout::random(
                param_usize(p, "width", 3)?,
                param_usize(p, "height", 3)?,
                param_usize(p, "items_per_type", 1)?,
                param_bool(p, "toroidal", true)?,
                param_u64(p, "layout_seed", run_seed)?,
            )?;
            let grid = layout.build(param_f64(p, "discount", 0.95)?)?;
            Ok((grid.mcp, grid.phi))
        }
        "random-mcp" => build_random_mcp(
            param_u64(p, "mcp_seed", run_seed)?,
            param_usize(p, "n_states", 10)?,
            param_usize(p, "n_actions", 3)?,
            param_usize(p, "d", 2)?,
            param_f64(p, "discount", 0.9)?,
            param_usize(p, "branching", 2)?,
        ),
        "corridors" => build_corridors(param_usize(p, "length", 3)?, param_f64(p, "discount", 0.9)?),
        "counterexample" => Ok(build_counterexample()),
        _ => unreachable!("checked above"),
    }
}

/// Runs `f` on a pool sized by `OKB_THREADS` when set.
pub fn with_thread_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalMode {
    /// Meta-policy trained per task.
    Ok,
    /// GPI with the chord fixed to the task weight.
    Gpi,
}

/// Exact returns of the zero-shot policy for each test weight. In OK mode,
/// weights missing from `meta` are registered by training on the basis.
pub fn evaluate_zero_shot(
    mcp: &TabularMcp,
    phi: &FeatureMap,
    basis: &[SFRecord],
    meta: &mut MetaPolicy,
    test_weights: &[Vec<f64>],
    mode: EvalMode,
    vi_tol: f64,
) -> Result<Vec<f64>> {
    match mode {
        EvalMode::Gpi => test_weights
            .par_iter()
            .map(|w| {
                let policy = gpi_policy(mcp, basis, w)?;
                Ok(evaluate_flat_policy(mcp, &task_reward(phi, w)?, &policy)?.v_mu)
            })
            .collect(),
        EvalMode::Ok => {
            let chords = meta.chord_set().clone();
            let missing: Vec<TaskSpec> = test_weights
                .iter()
                .filter(|w| meta.find_weight(w).is_none())
                .map(|w| TaskWeight::linear(w.clone()).map(TaskSpec::Linear))
                .collect::<Result<_>>()?;
            if !missing.is_empty() {
                OptionKeyboard::new(mcp, phi, basis, &chords)?.train(meta, &missing, vi_tol)?;
            }
            let meta = &*meta;
            test_weights
                .par_iter()
                .map(|w| {
                    let id = meta.find_weight(w).expect("registered above");
                    let policy = ok_flat_policy(mcp, basis, meta, id)?;
                    Ok(evaluate_flat_policy(mcp, &task_reward(phi, w)?, &policy)?.v_mu)
                })
                .collect()
        }
    }
}

/// `v*_w` from exact VI for each weight.
pub fn optimal_returns(mcp: &TabularMcp, phi: &FeatureMap, weights: &[Vec<f64>], vi_tol: f64) -> Result<Vec<f64>> {
    weights.par_iter().map(|w| Ok(solve_task(mcp, &task_reward(phi, w)?, vi_tol)?.v_mu)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub w: Vec<f64>,
    pub raw_return: f64,
    pub norm_return: f64,
    pub opt_return: f64,
}

/// Fills `norm_return` per task: `(raw - lo) / (opt - lo)` where `lo` is the
/// lowest return observed for that task (including the optimum), clamped to
/// `[0, 1]`; a task with `opt - lo` below `1e-12` normalizes to 1.
pub fn normalize_rows(rows: &mut [EvalRow]) {
    let mut lows: BTreeMap<(String, u64, Vec<u64>), f64> = BTreeMap::new();
    let key = |r: &EvalRow| (r.method.clone(), r.seed, r.w.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    for r in rows.iter() {
        let lo = lows.entry(key(r)).or_insert(r.opt_return);
        *lo = lo.min(r.raw_return);
    }
    for r in rows.iter_mut() {
        let lo = lows[&key(r)];
        let span = r.opt_return - lo;
        r.norm_return = if span < 1e-12 { 1.0 } else { ((r.raw_return - lo) / span).clamp(0.0, 1.0) };
    }
}

fn csv_header(d: usize) -> Vec<String> {
    let mut h = vec!["method".to_string(), "seed".into(), "iteration".into()];
    h.extend((0..d).map(|i| format!("w_{i}")));
    h.extend(["raw_return", "norm_return", "opt_return"].map(String::from));
    h
}

pub fn write_rows_csv(path: &Path, rows: &[EvalRow], d: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(csv_header(d))?;
    for r in rows {
        let mut rec = vec![r.method.clone(), r.seed.to_string(), r.iteration.to_string()];
        rec.extend(r.w.iter().map(|x| x.to_string()));
        rec.extend([r.raw_return, r.norm_return, r.opt_return].map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let d = header.len().checked_sub(6).ok_or_else(|| Error::Schema(format!("{}: too few columns", path.display())))?;
    if header != csv_header(d) {
        return Err(Error::Schema(format!("{}: unexpected header `{}`", path.display(), header.join(","))));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Schema(format!("{}: bad number `{s}`", path.display())));
    let int = |s: &str| s.parse::<u64>().map_err(|_| Error::Schema(format!("{}: bad integer `{s}`", path.display())));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(EvalRow {
            method: rec[0].to_string(),
            seed: int(&rec[1])?,
            iteration: int(&rec[2])? as usize,
            w: (0..d).map(|i| num(&rec[3 + i])).collect::<Result<_>>()?,
            raw_return: num(&rec[3 + d])?,
            norm_return: num(&rec[4 + d])?,
            opt_return: num(&rec[5 + d])?,
        });
    }
    Ok(rows)
}

/// Everything a finished cell produced.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub method: Method,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    pub log_lines: Vec<String>,
    pub snapshot: Snapshot,
}

/// Runs one `(method, seed)` cell without touching the filesystem.
pub fn run_cell(cfg: &ExperimentConfig, seed: u64) -> Result<CellOutput> {
    let (mcp, phi) = build_environment(&cfg.environment, seed)?;
    let d = phi.dim();
    if let Some(expected) = cfg.d {
        if expected != d {
            return Err(Error::Config(format!("config says d = {expected}, environment has d = {d}")));
        }
    }
    corner_weights(&SFSet::new(), d)?;
    let chords = cfg.chords.build(d)?;
    let test = simplex_grid(d, cfg.test_grid_h);
    let opt = optimal_returns(&mcp, &phi, &test, cfg.tolerances.vi)?;
    let method = cfg.method;
    let mut per_iter: Vec<(usize, Vec<f64>)> = Vec::new();

    let (snapshot, log_lines) = match method {
        Method::Okb | Method::OkbUniform => {
            let okb_cfg = OkbConfig {
                chords: chords.clone(),
                tol: cfg.tolerances.advantage,
                vi_tol: cfg.tolerances.vi,
                max_iters: cfg.max_iters,
                okls_iters: cfg.okls_iters,
                selection: if method == Method::Okb { Selection::Advantage } else { Selection::Uniform },
                seed,
            };
            let res = okb_run_observed(&mcp, &phi, &okb_cfg, &mut |k, basis, meta| {
                let mut meta = meta.clone();
                per_iter.push((k, evaluate_zero_shot(&mcp, &phi, basis, &mut meta, &test, EvalMode::Ok, cfg.tolerances.vi)?));
                Ok(())
            })?;
            let lines = res.log.iter().map(|r| r.to_json_line()).collect::<Result<_>>()?;
            let snap = Snapshot {
                method,
                seed,
                iteration: res.log.last().map_or(0, |r| r.iter),
                environment: cfg.environment.clone(),
                chords: cfg.chords.clone(),
                policies: res.basis.iter().map(|r| (r.policy.clone(), r.sf_vector.clone())).collect(),
                weight_support: res.weight_support.iter().map(|w| w.as_slice().to_vec()).collect(),
                partial_ccs: res.partial_ccs,
                truncated: res.truncated,
            };
            (snap, lines)
        }
        Method::Sfols => {
            let sf_cfg = SfolsConfig { tol: cfg.tolerances.sfols, vi_tol: cfg.tolerances.vi, max_iters: cfg.max_iters };
            let mut scratch = MetaPolicy::new(chords.clone());
            let res = sfols_run_observed(&mcp, &phi, &sf_cfg, &mut |k, policies| {
                per_iter.push((k, evaluate_zero_shot(&mcp, &phi, policies, &mut scratch, &test, EvalMode::Gpi, cfg.tolerances.vi)?));
                Ok(())
            })?;
            let lines = res.log.iter().map(|r| r.to_json_line()).collect::<Result<_>>()?;
            let snap = Snapshot {
                method,
                seed,
                iteration: res.log.last().map_or(0, |r| r.iter),
                environment: cfg.environment.clone(),
                chords: cfg.chords.clone(),
                policies: res.policies.iter().map(|r| (r.policy.clone(), r.sf_vector.clone())).collect(),
                weight_support: Vec::new(),
                partial_ccs: res.set,
                truncated: res.truncated,
            };
            (snap, lines)
        }
    };

    let mut rows = Vec::with_capacity(per_iter.len() * test.len());
    for (k, raws) in per_iter {
        for ((w, raw), o) in test.iter().zip(raws).zip(&opt) {
            rows.push(EvalRow {
                method: method.name().into(),
                seed,
                iteration: k,
                w: w.clone(),
                raw_return: raw,
                norm_return: 0.0,
                opt_return: *o,
            });
        }
    }
    normalize_rows(&mut rows);
    Ok(CellOutput { method, seed, rows, log_lines, snapshot })
}

/// File stem of a cell's outputs.
pub fn cell_stem(method: Method, seed: u64) -> String {
    format!("{}-seed{seed}", method.name())
}

/// Runs every seed and writes `<stem>.csv`, `<stem>.log.jsonl` and
/// `<stem>.snapshot.txt` per seed into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let cells: Vec<CellOutput> = cfg.seeds.par_iter().map(|&s| run_cell(cfg, s)).collect::<Result<_>>()?;
    fs::create_dir_all(&cfg.output_dir)?;
    for cell in &cells {
        let stem = cfg.output_dir.join(cell_stem(cell.method, cell.seed));
        let d = cell.rows.first().map_or(0, |r| r.w.len());
        write_rows_csv(&stem.with_extension("csv"), &cell.rows, d)?;
        let mut log = cell.log_lines.join("\n");
        log.push('\n');
        fs::write(stem.with_extension("log.jsonl"), log)?;
        fs::write(stem.with_extension("snapshot.txt"), cell.snapshot.to_text()?)?;
    }
    Ok(cfg.output_dir.clone())
}

/// A finished run in plain text: base policies as action tables, SF vectors
/// as decimals.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub method: Method,
    pub seed: u64,
    /// Index of the last logged iteration.
    pub iteration: usize,
    pub environment: EnvSpec,
    pub chords: ChordParams,
    pub policies: Vec<(Policy, Vec<f64>)>,
    pub weight_support: Vec<Vec<f64>>,
    pub partial_ccs: SFSet,
    pub truncated: bool,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl Snapshot {
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let mut line = |s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        line(SNAPSHOT_VERSION.into());
        line(format!("method {}", self.method.name()));
        line(format!("seed {}", self.seed));
        line(format!("iteration {}", self.iteration));
        line(format!("environment {}", serde_json::to_string(&self.environment)?));
        line(format!("chords {}", serde_json::to_string(&self.chords)?));
        line(format!("truncated {}", self.truncated));
        line(format!("policies {}", self.policies.len()));
        for (p, sf) in &self.policies {
            line(format!("actions {}", join(&p.0)));
            line(format!("sf {}", join(sf)));
        }
        line(format!("support {}", self.weight_support.len()));
        for w in &self.weight_support {
            line(format!("w {}", join(w)));
        }
        line(format!("ccs {}", self.partial_ccs.len()));
        for (id, v) in self.partial_ccs.iter() {
            line(format!("psi {id} {}", join(v)));
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Schema(format!("snapshot: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(SNAPSHOT_VERSION) {
            return Err(bad("missing or unsupported version line"));
        }
        let mut field = |name: &str| -> Result<String> {
            let l = lines.next().ok_or_else(|| bad(&format!("missing `{name}`")))?;
            l.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' ').or(r.is_empty().then_some("")))
                .map(String::from)
                .ok_or_else(|| bad(&format!("expected `{name}`, found `{l}`")))
        };
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split_whitespace().map(|x| x.parse().map_err(|_| bad(&format!("bad number `{x}`")))).collect()
        };
        let count = |s: String| -> Result<usize> { s.parse().map_err(|_| bad("bad count")) };
        let method: Method = field("method")?.parse().map_err(|_| bad("bad method"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed"))?;
        let iteration: usize = field("iteration")?.parse().map_err(|_| bad("bad iteration"))?;
        let environment: EnvSpec = serde_json::from_str(&field("environment")?)?;
        let chords: ChordParams = serde_json::from_str(&field("chords")?)?;
        let truncated: bool = field("truncated")?.parse().map_err(|_| bad("bad flag"))?;
        let n = count(field("policies")?)?;
        let mut policies = Vec::with_capacity(n);
        for _ in 0..n {
            let actions = field("actions")?
                .split_whitespace()
                .map(|x| x.parse().map_err(|_| bad(&format!("bad action `{x}`"))))
                .collect::<Result<Vec<usize>>>()?;
            policies.push((Policy(actions), floats(&field("sf")?)?));
        }
        let n = count(field("support")?)?;
        let weight_support = (0..n).map(|_| floats(&field("w")?)).collect::<Result<_>>()?;
        let n = count(field("ccs")?)?;
        let mut partial_ccs = SFSet::new();
        for _ in 0..n {
            let l = field("psi")?;
            let (id, rest) = l.split_once(' ').ok_or_else(|| bad("bad psi line"))?;
            partial_ccs.insert(id.parse().map_err(|_| bad("bad id"))?, floats(rest)?);
        }
        Ok(Self { method, seed, iteration, environment, chords, policies, weight_support, partial_ccs, truncated })
    }

    /// Rebuilds the environment and the base policies' successor features,
    /// checking them against the stored SF vectors.
    pub fn restore(&self) -> Result<(TabularMcp, FeatureMap, Vec<SFRecord>)> {
        let (mcp, phi) = build_environment(&self.environment, self.seed)?;
        let mut basis = Vec::with_capacity(self.policies.len());
        for (i, (p, sf)) in self.policies.iter().enumerate() {
            if p.0.len() != mcp.n_states() || p.0.iter().any(|&a| a >= mcp.n_actions()) {
                return Err(Error::Schema(format!("snapshot: policy {i} does not fit the environment")));
            }
            let rec = policy_successor_features(&mcp, &phi, p)?;
            if rec.sf_vector.len() != sf.len() || rec.sf_vector.iter().zip(sf).any(|(a, b)| (a - b).abs() > 1e-9) {
                return Err(Error::Schema(format!("snapshot: SF vector of policy {i} does not match the environment")));
            }
            basis.push(rec);
        }
        Ok((mcp, phi, basis))
    }

    /// Zero-shot rows on `simplex_grid(d, h)`: OK mode for OKB runs, GPI for
    /// SFOLS runs.
    pub fn evaluate(&self, h: usize) -> Result<Vec<EvalRow>> {
        let (mcp, phi, basis) = self.restore()?;
        let d = phi.dim();
        let test = simplex_grid(d, h);
        let mut meta = MetaPolicy::new(self.chords.build(d)?);
        let mode = if self.method == Method::Sfols { EvalMode::Gpi } else { EvalMode::Ok };
        let raw = evaluate_zero_shot(&mcp, &phi, &basis, &mut meta, &test, mode, VI_TOL)?;
        let opt = optimal_returns(&mcp, &phi, &test, VI_TOL)?;
        let mut rows: Vec<EvalRow> = test
            .into_iter()
            .zip(raw)
            .zip(opt)
            .map(|((w, raw_return), opt_return)| EvalRow {
                method: self.method.name().into(),
                seed: self.seed,
                iteration: self.iteration,
                w,
                raw_return,
                norm_return: 0.0,
                opt_return,
            })
            .collect();
        normalize_rows(&mut rows);
        Ok(rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub iteration: usize,
    pub n_seeds: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CompareReport {
    pub rows: Vec<SummaryRow>,
}

/// Mean normalized return per `(method, iteration)` with a bootstrapped 95%
/// CI over seeds. Each seed contributes its mean over test tasks; seeds that
/// stopped early carry their last value forward to the last iteration seen.
pub fn compare_report(paths: &[PathBuf]) -> Result<CompareReport> {
    if paths.is_empty() {
        return Err(Error::Config("compare needs at least one CSV".into()));
    }
    let mut per_seed: BTreeMap<(String, usize), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    let mut dim = None;
    for p in paths {
        for r in read_rows_csv(p)? {
            if *dim.get_or_insert(r.w.len()) != r.w.len() {
                return Err(Error::Schema(format!("{}: feature dimension differs from earlier files", p.display())));
            }
            let e = per_seed.entry((r.method, r.iteration)).or_default().entry(r.seed).or_insert((0.0, 0));
            e.0 += r.norm_return;
            e.1 += 1;
        }
    }
    // a seed that converged early keeps its final value at later iterations
    let last = per_seed.keys().map(|(_, k)| *k).max().unwrap_or(0);
    let methods: Vec<String> = per_seed.keys().map(|(m, _)| m.clone()).collect();
    for m in methods {
        let mut carried: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for k in 0..=last {
            let entry = per_seed.entry((m.clone(), k)).or_default();
            for (seed, v) in &carried {
                entry.entry(*seed).or_insert(*v);
            }
            carried.clone_from(entry);
        }
    }
    let rows = per_seed
        .into_iter()
        .filter(|(_, seeds)| !seeds.is_empty())
        .map(|((method, iteration), seeds)| {
            let xs: Vec<f64> = seeds.values().map(|(s, n)| s / *n as f64).collect();
            let (ci_low, ci_high) = bootstrap_ci(&xs);
            SummaryRow { method, iteration, n_seeds: xs.len(), mean: mean(&xs), ci_low, ci_high }
        })
        .collect();
    Ok(CompareReport { rows })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentile bootstrap with a fixed resample seed.
fn bootstrap_ci(xs: &[f64]) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).sum::<f64>() / xs.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize).min(BOOTSTRAP_RESAMPLES - 1)];
    let (lo, hi) = (at(0.025), at(0.975));
    // resampled means of identical values can differ in the last ulp
    let m = mean(xs);
    if xs.iter().all(|&x| x == xs[0]) {
        (m, m)
    } else {
        (lo, hi)
    }
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,iteration,n_seeds,mean,ci_low,ci_high\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{},{}\n", r.method, r.iteration, r.n_seeds, r.mean, r.ci_low, r.ci_high));
        }
        out
    }

    pub fn get(&self, method: &str, iteration: usize) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.iteration == iteration)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        writeln!(f, "{:<w$}  {:>9}  {:>5}  {:>8}  {:>17}", "method", "iteration", "seeds", "mean", "95% CI")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<w$}  {:>9}  {:>5}  {:>8.4}  [{:>7.4}, {:>7.4}]",
                r.method, r.iteration, r.n_seeds, r.mean, r.ci_low, r.ci_high
            )?;
        }
        Ok(())
    }
}

/// Result of the state-dependent counterexample demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleReport {
    pub chords_checked: usize,
    /// Chords for which the last arm is the GPI action.
    pub arm4_hits: usize,
    pub ok_value: f64,
    pub optimal_value: f64,
    pub witness_advantage: f64,
    pub witness_flagged: bool,
}

impl CounterexampleReport {
    pub fn checks(&self) -> [(&'static str, bool); 3] {
        [
            ("no chord selects a4", self.arm4_hits == 0),
            ("OK value trails v* by at least 0.5", self.optimal_value - self.ok_value >= 0.5),
            ("advantage test flags (s0, a4)", self.witness_flagged && self.witness_advantage > 0.0),
        ]
    }

    pub fn passed(&self) -> bool {
        self.checks().iter().all(|(_, ok)| *ok)
    }
}

impl fmt::Display for CounterexampleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "features at s1..s4: {COUNTEREXAMPLE_FEATURES:?}")?;
        writeln!(f, "chords swept: {}, a4 selected: {}", self.chords_checked, self.arm4_hits)?;
        writeln!(f, "v*(s0) = {:.6}, OK value = {:.6}", self.optimal_value, self.ok_value)?;
        writeln!(f, "A(s0, a4) = {:.6}", self.witness_advantage)?;
        for (name, ok) in self.checks() {
            writeln!(f, "{} {name}", if ok { "PASS" } else { "FAIL" })?;
        }
        Ok(())
    }
}

/// Builds the counterexample with every arm policy as a base policy, sweeps
/// `n_chords` unit chords, trains the meta-policy on the state-dependent task
/// and runs the advantage test.
pub fn counterexample_demo(n_chords: usize) -> Result<CounterexampleReport> {
    let (mcp, phi) = build_counterexample();
    let basis: Vec<SFRecord> = (0..4)
        .map(|a| {
            let mut actions = vec![0; mcp.n_states()];
            actions[0] = a;
            policy_successor_features(&mcp, &phi, &Policy(actions))
        })
        .collect::<Result<_>>()?;
    let mut arm4_hits = 0;
    for k in 0..n_chords {
        let t = std::f64::consts::TAU * k as f64 / n_chords as f64;
        let z = [t.cos(), t.sin()];
        let best = (0..4).map(|a| basis.iter().map(|r| dot(r.psi(0, a), &z)).fold(f64::NEG_INFINITY, f64::max));
        let vals: Vec<f64> = best.collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if vals[3] >= top - crate::planner::TIE_TOL {
            arm4_hits += 1;
        }
    }
    let chords = ChordSet::grid(2, 64, true)?;
    let task = TaskSpec::Nonlinear(counterexample_task(&mcp, &phi));
    let reward = task.reward(&phi)?;
    let meta = train_meta_policy(&mcp, &phi, &basis, &[task], &chords, VI_TOL)?;
    let report = advantage_report(&mcp, &reward, &basis, &meta, 0, 1e-9)?;
    let optimal_value = solve_task(&mcp, &reward, VI_TOL)?.v_mu;
    Ok(CounterexampleReport {
        chords_checked: n_chords,
        arm4_hits,
        ok_value: report.values.v_mu,
        optimal_value,
        witness_advantage: report.get(0, 3),
        witness_flagged: report.witnesses.contains(&(0, 3)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
method = "okb"
seeds = [0, 1]
test_grid_h = 4
max_iters = 3
output_dir = "out"

[environment]
name = "item-grid"
params = { width = 3, height = 3, items_per_type = 1 }
"#;

    #[test]
    fn config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_eq!(cfg.method, Method::Okb);
        assert_eq!(cfg.okls_iters, 5);
        assert!(cfg.chords.signed);
        assert_eq!(cfg.tolerances, Tolerances::default());
    }

    #[test]
    fn config_errors_are_usage_errors() {
        let unknown_env = SMALL.replace("item-grid", "maze");
        let e = ExperimentConfig::from_toml(&unknown_env).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml(&SMALL.replace("\"okb\"", "\"dqn\"")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml(&SMALL.replace("[0, 1]", "[]")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = ExperimentConfig::from_toml(&SMALL.replace("width", "widht")).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn cell_rows_account_for_every_iteration() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let cell = run_cell(&cfg, 0).unwrap();
        let iters = cell.log_lines.len();
        assert_eq!(cell.rows.len(), iters * 5);
        assert!(cell.rows.iter().all(|r| (0.0..=1.0).contains(&r.norm_return)));
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let cell = run_cell(&cfg, 1).unwrap();
        let text = cell.snapshot.to_text().unwrap();
        let back = Snapshot::parse(&text).unwrap();
        assert_eq!(back, cell.snapshot);
        let rows = back.evaluate(4).unwrap();
        let last = cell.rows.iter().map(|r| r.iteration).max().unwrap();
        for (a, b) in rows.iter().zip(cell.rows.iter().filter(|r| r.iteration == last)) {
            assert!((a.raw_return - b.raw_return).abs() < 1e-9);
        }
        assert!(Snapshot::parse("garbage").is_err());
    }

    #[test]
    fn normalization_bounds() {
        let row = |it, raw| EvalRow {
            method: "m".into(),
            seed: 0,
            iteration: it,
            w: vec![0.5, 0.5],
            raw_return: raw,
            norm_return: f64::NAN,
            opt_return: 2.0,
        };
        let mut rows = vec![row(0, 1.0), row(1, 1.5), row(2, 2.0)];
        normalize_rows(&mut rows);
        let n: Vec<f64> = rows.iter().map(|r| r.norm_return).collect();
        assert_eq!(n, vec![0.0, 0.5, 1.0]);
        let mut flat = vec![row(0, 2.0)];
        normalize_rows(&mut flat);
        assert_eq!(flat[0].norm_return, 1.0);
    }

    #[test]
    fn single_seed_ci_collapses() {
        assert_eq!(bootstrap_ci(&[0.7]), (0.7, 0.7));
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0, 0.5, 0.25]);
        assert!(lo <= hi && lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn demo_passes() {
        let r = counterexample_demo(10_000).unwrap();
        assert!(r.passed(), "{r}");
    }
}
