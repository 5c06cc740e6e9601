//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::fs;
use std::time::Instant;

use okb::basis::{okb_run, sfols_run, OkbConfig, SfolsConfig};
use okb::geometry::{chord_grid, corner_weights, linear_to_convex, scalarized_max, simplex_grid, SFSet};
use okb::harness::{
    counterexample_demo, evaluate_zero_shot, optimal_returns, run_experiment, EvalMode, ExperimentConfig,
};
use okb::mdp::{build_corridors, build_item_grid, build_random_mcp, dot, task_reward, ItemGridLayout, TaskWeight};
use okb::ok::{advantage_report, ok_flat_policy, train_meta_policy, ChordSet, OptionKeyboard, TaskSpec};
use okb::planner::{
    evaluate_flat_policy, gpi_gap_bound, gpi_policy, max_gap, new_policy, policy_successor_features, solve_task,
    Policy, QTable, VI_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CCS_TOL: f64 = 1e-6;
const CCS_RUNTIME_SECS: f64 = 60.0;
const CORNER_TOL: f64 = 1e-9;
const OK_VALUE_TOL: f64 = 1e-6;
const ADVANTAGE_TOL: f64 = 1e-6;
const BOUND_TOL: f64 = 1e-9;
const TRANSFORM_REWARD_TOL: f64 = 1e-12;
const ARGMAX_TOL: f64 = 1e-8;
const DOMINANCE_TOL: f64 = 1e-9;
const COUNTEREXAMPLE_GAP: f64 = 0.5;
const SEQUENTIAL_TOL: f64 = 1e-6;

/// 3×3 item grid, one item per type, toroidal, layout seed 0.
fn item_grid() -> (okb::mdp::TabularMcp, okb::mdp::FeatureMap) {
    build_item_grid(3, 3, 1, true, 0).unwrap()
}

fn chords2() -> ChordSet {
    ChordSet::grid(2, 8, true).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let out = f();
    println!(
        "{} criterion {n:>2}: {name} ({}) [{:.2}s]",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail,
        t.elapsed().as_secs_f64()
    );
    out.pass
}

fn ccs_correctness() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut points = 0;
    for seed in 0..20u64 {
        let n_states = 4 + (seed as usize % 7);
        let n_actions = 2 + (seed as usize % 3);
        let d = 2 + (seed as usize % 2);
        let (mcp, phi) = build_random_mcp(seed, n_states, n_actions, d, 0.9, 2).unwrap();
        let res = sfols_run(&mcp, &phi, &SfolsConfig::default()).unwrap();
        // 56 points for d = 2; the nearest grid with at least 56 points for d = 3
        let grid = simplex_grid(d, if d == 2 { 55 } else { 10 });
        for w in &grid {
            let v = solve_task(&mcp, &task_reward(&phi, w).unwrap(), VI_TOL).unwrap().v_mu;
            let (m, _) = scalarized_max(&res.set, w).unwrap();
            worst = worst.max((v - m).abs());
            points += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: worst <= CCS_TOL && secs < CCS_RUNTIME_SECS,
        detail: format!("{points} task checks, max |v* - max ψ·w| = {worst:.2e}, {secs:.1}s"),
    }
}

fn corner_property() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = f64::NEG_INFINITY;
    let mut perm_ok = true;
    for _ in 0..50 {
        let d = rng.random_range(2..=3);
        let n_full = rng.random_range(2..=6);
        let full: Vec<Vec<f64>> = (0..n_full).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
        let k = rng.random_range(1..n_full);
        let partial = SFSet::from_vectors(full[..k].iter().cloned());
        let full = SFSet::from_vectors(full);
        let delta = |w: &[f64]| scalarized_max(&full, w).unwrap().0 - scalarized_max(&partial, w).unwrap().0;
        let corners = corner_weights(&partial, d).unwrap();
        let best_corner = corners.weights.iter().map(|w| delta(w)).fold(f64::NEG_INFINITY, f64::max);
        let grid = simplex_grid(d, if d == 2 { 2000 } else { 150 });
        let best_grid = grid.iter().map(|w| delta(w)).fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best_grid - best_corner);

        let mut shuffled: Vec<Vec<f64>> = partial.vectors().to_vec();
        shuffled.reverse();
        if shuffled.len() > 2 {
            shuffled.swap(0, 1);
        }
        let other = corner_weights(&SFSet::from_vectors(shuffled), d).unwrap();
        perm_ok &= other.len() == corners.len()
            && other
                .weights
                .iter()
                .zip(&corners.weights)
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() < CORNER_TOL));
    }
    Outcome {
        pass: worst <= CORNER_TOL && perm_ok,
        detail: format!("max(grid Δ - corner Δ) = {worst:.2e}, permutation-closed = {perm_ok}"),
    }
}

fn basis_smaller_than_ccs() -> Outcome {
    let (mcp, phi) = item_grid();
    let res = okb_run(&mcp, &phi, &OkbConfig::new(chords2())).unwrap();
    let ccs = sfols_run(&mcp, &phi, &SfolsConfig::default()).unwrap().ccs().unwrap();
    let test = simplex_grid(2, 20);
    let mut meta = res.meta.clone();
    let ok = evaluate_zero_shot(&mcp, &phi, &res.basis, &mut meta, &test, EvalMode::Ok, VI_TOL).unwrap();
    let opt = optimal_returns(&mcp, &phi, &test, VI_TOL).unwrap();
    let gap = ok.iter().zip(&opt).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let (cmcp, cphi) = build_corridors(3, 0.9).unwrap();
    let cres = okb_run(&cmcp, &cphi, &OkbConfig::new(ChordSet::grid(2, 16, true).unwrap())).unwrap();
    let cccs = sfols_run(&cmcp, &cphi, &SfolsConfig::default()).unwrap().ccs().unwrap();
    Outcome {
        pass: res.basis.len() < ccs.len() && gap <= OK_VALUE_TOL && cres.basis.len() == cccs.len(),
        detail: format!(
            "item grid |Π| = {} < |CCS| = {}, max OK gap on {} tasks = {gap:.2e}; corridors |Π| = {} = |CCS| = {}",
            res.basis.len(),
            ccs.len(),
            test.len(),
            cres.basis.len(),
            cccs.len()
        ),
    }
}

fn counterexample() -> Outcome {
    let r = counterexample_demo(10_000).unwrap();
    let pass = r.arm4_hits == 0
        && r.optimal_value - r.ok_value >= COUNTEREXAMPLE_GAP
        && r.witness_flagged
        && r.witness_advantage > 0.0;
    Outcome {
        pass,
        detail: format!(
            "{} chords, a4 chosen {}x; v* - v_OK = {:.3}; A(s0, a4) = {:.3}",
            r.chords_checked,
            r.arm4_hits,
            r.optimal_value - r.ok_value,
            r.witness_advantage
        ),
    }
}

fn no_advantage_on_solved_tasks() -> Outcome {
    let (mcp, phi) = item_grid();
    let res = okb_run(&mcp, &phi, &OkbConfig::new(chords2())).unwrap();
    let mut tasks: Vec<TaskWeight> = res.weight_support.clone();
    tasks.extend(res.basis.iter().filter_map(|r| r.source_task.clone()));
    for rec in &res.log {
        if let Some(w) = &rec.selected_w {
            tasks.push(TaskWeight::convex(w.clone()).unwrap());
        }
    }
    let mut meta = res.meta.clone();
    let missing: Vec<TaskSpec> =
        tasks.iter().filter(|w| meta.find_weight(w.as_slice()).is_none()).cloned().map(TaskSpec::Linear).collect();
    OptionKeyboard::new(&mcp, &phi, &res.basis, &res.meta.chord_set().clone())
        .unwrap()
        .train(&mut meta, &missing, VI_TOL)
        .unwrap();
    let mut worst = 0.0f64;
    for w in &tasks {
        let id = meta.find_weight(w.as_slice()).unwrap();
        let reward = task_reward(&phi, w.as_slice()).unwrap();
        let rep = advantage_report(&mcp, &reward, &res.basis, &meta, id, ADVANTAGE_TOL).unwrap();
        worst = worst.max(rep.max_positive);
    }
    Outcome { pass: worst <= ADVANTAGE_TOL, detail: format!("{} tasks, max positive advantage = {worst:.2e}", tasks.len()) }
}

fn random_convex(rng: &mut ChaCha8Rng, d: usize) -> TaskWeight {
    let x: Vec<f64> = (0..d).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
    let t: f64 = x.iter().sum();
    let mut w: Vec<f64> = x.iter().map(|v| v / t).collect();
    let rest: f64 = w[..d - 1].iter().sum();
    w[d - 1] = (1.0 - rest).max(0.0);
    TaskWeight::convex(w).unwrap()
}

fn transfer_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut ok_worse = 0;
    let mut checks = 0;
    let mut tightest = f64::INFINITY;
    for inst in 0..10u64 {
        let d = 2 + (inst as usize % 2);
        let (mcp, phi) = build_random_mcp(100 + inst, 10, 3, d, 0.9, 2).unwrap();
        let basis: Vec<_> =
            (0..3).map(|_| new_policy(&mcp, &phi, &random_convex(&mut rng, d), VI_TOL).unwrap()).collect();
        let grid = chord_grid(d, 6, true);
        for _ in 0..50 {
            let w = random_convex(&mut rng, d);
            checks += 1;
            let bound = match gpi_gap_bound(&mcp, &phi, &basis, &w, 0.0) {
                Ok(b) => b,
                Err(_) => {
                    violations += 1;
                    continue;
                }
            };
            if bound.lhs > bound.rhs + BOUND_TOL {
                violations += 1;
            }
            tightest = tightest.min(bound.rhs - bound.lhs);
            let norm = dot(w.as_slice(), w.as_slice()).sqrt();
            let mut chords = grid.clone();
            let unit: Vec<f64> = w.as_slice().iter().map(|x| x / norm).collect();
            if !chords.iter().any(|z| z.iter().zip(&unit).all(|(a, b)| (a - b).abs() < 1e-9)) {
                chords.push(unit);
            }
            let chords = ChordSet::new(chords).unwrap();
            let reward = task_reward(&phi, w.as_slice()).unwrap();
            let meta = train_meta_policy(&mcp, &phi, &basis, &[TaskSpec::Linear(w.clone())], &chords, VI_TOL).unwrap();
            let ok_q = evaluate_flat_policy(&mcp, &reward, &ok_flat_policy(&mcp, &basis, &meta, 0).unwrap()).unwrap();
            let star = solve_task(&mcp, &reward, VI_TOL).unwrap().q_star;
            if max_gap(&star, &ok_q) > bound.lhs + BOUND_TOL {
                ok_worse += 1;
            }
        }
    }
    Outcome {
        pass: violations == 0 && ok_worse == 0,
        detail: format!("{checks} tasks, bound violations = {violations}, OK gap > GPI gap = {ok_worse}, min slack = {tightest:.3}"),
    }
}

fn greedy_sets(q: &QTable, scale: f64) -> Vec<BTreeSet<usize>> {
    (0..q.v.len())
        .map(|s| {
            let row = q.row(s);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..row.len()).filter(|&a| (m - row[a]) * scale <= ARGMAX_TOL).collect()
        })
        .collect()
}

fn convex_transform() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_reward = 0.0f64;
    let mut mismatched = 0;
    let mut c_positive = true;
    for i in 0..20u64 {
        let d = 2 + (i as usize % 3);
        let (mcp, phi) = build_random_mcp(200 + i, 12, 3, d, 0.9, 3).unwrap();
        let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        w[0] = w[0].abs();
        w[1] = -w[1].abs();
        let task = TaskWeight::linear(w.clone()).unwrap();
        let (phi2, w2, c) = linear_to_convex(&mcp, &phi, &task).unwrap();
        c_positive &= c > 0.0;
        let r = task_reward(&phi, &w).unwrap();
        let r2 = task_reward(&phi2, w2.as_slice()).unwrap();
        for (a, b) in r.values().iter().zip(r2.values()) {
            worst_reward = worst_reward.max((a / c - b).abs());
        }
        let q = solve_task(&mcp, &r, VI_TOL).unwrap().q_star;
        let q2 = solve_task(&mcp, &r2, VI_TOL).unwrap().q_star;
        if greedy_sets(&q, 1.0) != greedy_sets(&q2, c) {
            mismatched += 1;
        }
    }
    Outcome {
        pass: c_positive && worst_reward <= TRANSFORM_REWARD_TOL && mismatched == 0,
        detail: format!("max |r/c - r̃| = {worst_reward:.1e}, argmax mismatches = {mismatched}, c > 0: {c_positive}"),
    }
}

fn sequential_task() -> Outcome {
    let grid = ItemGridLayout::random(3, 3, 2, true, 1).unwrap().build(0.95).unwrap();
    let (mcp, phi) = (&grid.mcp, &grid.phi);
    let chords = chords2();
    let res = okb_run(mcp, phi, &OkbConfig::new(chords.clone())).unwrap();
    let task = TaskSpec::Nonlinear(grid.sequential_reward());
    let reward = task.reward(phi).unwrap();
    let optimum = solve_task(mcp, &reward, VI_TOL).unwrap().v_mu;
    let meta = train_meta_policy(mcp, phi, &res.basis, &[task], &chords, VI_TOL).unwrap();
    let ok = evaluate_flat_policy(mcp, &reward, &ok_flat_policy(mcp, &res.basis, &meta, 0).unwrap()).unwrap().v_mu;
    let mut best_gpi = f64::NEG_INFINITY;
    for k in 0..720 {
        let t = std::f64::consts::TAU * k as f64 / 720.0;
        let z = [t.cos(), t.sin()];
        let p = gpi_policy(mcp, &res.basis, &z).unwrap();
        best_gpi = best_gpi.max(evaluate_flat_policy(mcp, &reward, &p).unwrap().v_mu);
    }
    let margin = optimum - best_gpi;
    Outcome {
        pass: (optimum - ok).abs() <= SEQUENTIAL_TOL && margin > 0.0,
        detail: format!("v* = {optimum:.6}, OK = {ok:.6}, best fixed-w GPI = {best_gpi:.6} (short by {margin:.4})"),
    }
}

fn gpi_dominance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let d = 2 + (i as usize % 2);
        let n_actions = 2 + (i as usize % 3);
        let (mcp, phi) = build_random_mcp(300 + i, 10, n_actions, d, 0.9, 2).unwrap();
        let k = rng.random_range(1..=4);
        let basis: Vec<_> = (0..k)
            .map(|_| {
                let p = Policy((0..mcp.n_states()).map(|_| rng.random_range(0..n_actions)).collect());
                policy_successor_features(&mcp, &phi, &p).unwrap()
            })
            .collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reward = task_reward(&phi, &w).unwrap();
        let q = evaluate_flat_policy(&mcp, &reward, &gpi_policy(&mcp, &basis, &w).unwrap()).unwrap();
        for s in 0..mcp.n_states() {
            for a in 0..n_actions {
                let base = basis.iter().map(|r| r.q(s, a, &w)).fold(f64::NEG_INFINITY, f64::max);
                worst = worst.max(base - q.get(s, a));
            }
        }
    }
    Outcome { pass: worst <= DOMINANCE_TOL, detail: format!("max(max_i q^πi - q^GPI) = {worst:.2e}") }
}

fn determinism() -> Outcome {
    let mut identical = true;
    let mut files = 0;
    for method in ["okb", "okb-uniform", "sfols"] {
        let text = format!(
            "method = \"{method}\"\nseeds = [0, 3]\ntest_grid_h = 10\nmax_iters = 4\noutput_dir = \"out\"\n\n\
             [environment]\nname = \"item-grid\"\nparams = {{ width = 3, height = 3, items_per_type = 2, toroidal = false }}\n"
        );
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut cfg = ExperimentConfig::from_toml(&text).unwrap();
            cfg.output_dir = dir.path().join("out");
            let out = run_experiment(&cfg).unwrap();
            let mut entries: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
            entries.sort();
            outputs.push(
                entries
                    .iter()
                    .map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap()))
                    .collect::<Vec<_>>(),
            );
        }
        files += outputs[0].len();
        identical &= outputs[0] == outputs[1];
    }
    Outcome { pass: identical, detail: format!("{files} output files compared byte-for-byte across two runs") }
}

fn main() {
    let results = [
        criterion(1, "SFOLS set covers v*_w on random MCPs", ccs_correctness),
        criterion(2, "max Δ is attained at a corner weight", corner_property),
        criterion(3, "OKB basis vs CCS size and zero-shot optimality", basis_smaller_than_ccs),
        criterion(4, "state-dependent counterexample", counterexample),
        criterion(5, "no positive advantage on solved linear tasks", no_advantage_on_solved_tasks),
        criterion(6, "GPI transfer bound and OK ≤ GPI gap", transfer_bound),
        criterion(7, "linear-to-convex transform", convex_transform),
        criterion(8, "sequential task: OK optimal, fixed-w GPI short", sequential_task),
        criterion(9, "GPI dominates every base policy", gpi_dominance),
        criterion(10, "byte-identical outputs across runs", determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
