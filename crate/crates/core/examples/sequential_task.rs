//! A task that rewards collecting one item type before the other. The
//! keyboard switches chords mid-episode; no single fixed GPI weight matches it.

use okb::basis::{okb_run, OkbConfig};
use okb::mdp::ItemGridLayout;
use okb::ok::{ok_flat_policy, train_meta_policy, ChordSet, TaskSpec};
use okb::planner::{evaluate_flat_policy, gpi_policy, solve_task, VI_TOL};

fn main() -> okb::Result<()> {
    let grid = ItemGridLayout::random(3, 3, 2, true, 1)?.build(0.95)?;
    let (mcp, phi) = (&grid.mcp, &grid.phi);
    let chords = ChordSet::grid(2, 8, true)?;
    let res = okb_run(mcp, phi, &OkbConfig::new(chords.clone()))?;

    let task = TaskSpec::Nonlinear(grid.sequential_reward());
    let reward = task.reward(phi)?;
    let optimum = solve_task(mcp, &reward, VI_TOL)?.v_mu;
    let meta = train_meta_policy(mcp, phi, &res.basis, &[task], &chords, VI_TOL)?;
    let ok = evaluate_flat_policy(mcp, &reward, &ok_flat_policy(mcp, &res.basis, &meta, 0)?)?.v_mu;

    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..360 {
        let t = std::f64::consts::TAU * k as f64 / 360.0;
        let p = gpi_policy(mcp, &res.basis, &[t.cos(), t.sin()])?;
        let v = evaluate_flat_policy(mcp, &reward, &p)?.v_mu;
        if v > best.0 {
            best = (v, t.to_degrees());
        }
    }
    println!("basis size {}", res.basis.len());
    println!("optimal {optimum:.4}, option keyboard {ok:.4}, best fixed GPI chord {:.4} at {:.0}°", best.0, best.1);
    Ok(())
}
