//! Builds a convex coverage set for a random MCP with SFOLS and checks it
//! against value iteration on a weight grid.

use okb::basis::{sfols_run, SfolsConfig};
use okb::geometry::{scalarized_max, simplex_grid};
use okb::mdp::{build_random_mcp, task_reward};
use okb::planner::{solve_task, VI_TOL};

fn main() -> okb::Result<()> {
    let (mcp, phi) = build_random_mcp(7, 8, 3, 3, 0.9, 2)?;
    let res = sfols_run(&mcp, &phi, &SfolsConfig::default())?;
    let ccs = res.ccs()?;
    println!("{} iterations, {} policies kept, minimal CCS size {}", res.log.len(), res.set.len(), ccs.len());
    for rec in &res.log {
        println!("  iter {:>2}: |set| = {:>2}, max Δ = {:.2e}", rec.iter, rec.basis_size, rec.max_delta);
    }

    let mut worst = 0.0f64;
    for w in simplex_grid(3, 12) {
        let v = solve_task(&mcp, &task_reward(&phi, &w)?, VI_TOL)?.v_mu;
        worst = worst.max((v - scalarized_max(&res.set, &w)?.0).abs());
    }
    println!("max |v*_w - max ψ·w| over 91 weights: {worst:.2e}");
    Ok(())
}
