//! GPI transfer gap against its bound, and the OK gap on the same task.

use okb::mdp::{build_random_mcp, dot, task_reward, TaskWeight};
use okb::ok::{ok_flat_policy, train_meta_policy, ChordSet, TaskSpec};
use okb::planner::{evaluate_flat_policy, gpi_gap_bound, max_gap, new_policy, solve_task, VI_TOL};

fn main() -> okb::Result<()> {
    let (mcp, phi) = build_random_mcp(3, 10, 3, 2, 0.9, 2)?;
    let sources = [vec![0.9, 0.1], vec![0.2, 0.8]];
    let basis = sources
        .iter()
        .map(|w| new_policy(&mcp, &phi, &TaskWeight::convex(w.clone())?, VI_TOL))
        .collect::<okb::Result<Vec<_>>>()?;

    println!("{:>6} {:>10} {:>10} {:>10}", "w_0", "GPI gap", "bound", "OK gap");
    for k in 0..=10 {
        let x = k as f64 / 10.0;
        let w = TaskWeight::convex(vec![x, 1.0 - x])?;
        let bound = gpi_gap_bound(&mcp, &phi, &basis, &w, 0.0)?;

        let norm = dot(w.as_slice(), w.as_slice()).sqrt();
        let mut chords = okb::geometry::chord_grid(2, 8, true);
        let unit: Vec<f64> = w.as_slice().iter().map(|v| v / norm).collect();
        if !chords.iter().any(|z| z.iter().zip(&unit).all(|(a, b)| (a - b).abs() < 1e-9)) {
            chords.push(unit);
        }
        let meta = train_meta_policy(&mcp, &phi, &basis, &[TaskSpec::Linear(w.clone())], &ChordSet::new(chords)?, VI_TOL)?;
        let reward = task_reward(&phi, w.as_slice())?;
        let ok = evaluate_flat_policy(&mcp, &reward, &ok_flat_policy(&mcp, &basis, &meta, 0)?)?;
        let star = solve_task(&mcp, &reward, VI_TOL)?.q_star;
        println!("{x:>6.1} {:>10.4} {:>10.4} {:>10.4}", bound.lhs, bound.rhs, max_gap(&star, &ok));
    }
    Ok(())
}
