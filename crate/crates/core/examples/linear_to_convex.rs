//! Rewrites a task with negative weights as a convex task over doubled
//! features; the optimal policy is unchanged.

use okb::geometry::linear_to_convex;
use okb::mdp::{build_random_mcp, task_reward, TaskWeight};
use okb::planner::{solve_task, VI_TOL};

fn main() -> okb::Result<()> {
    let (mcp, phi) = build_random_mcp(11, 6, 3, 2, 0.9, 2)?;
    let w = TaskWeight::linear(vec![1.5, -0.5])?;
    let (phi2, w2, c) = linear_to_convex(&mcp, &phi, &w)?;
    println!("w = {:?} -> w̃ = {:?}, c = {c}", w.as_slice(), w2.as_slice());

    let a = solve_task(&mcp, &task_reward(&phi, w.as_slice())?, VI_TOL)?;
    let b = solve_task(&mcp, &task_reward(&phi2, w2.as_slice())?, VI_TOL)?;
    println!("v* = {:.6}, c · ṽ* = {:.6}", a.v_mu, c * b.v_mu);
    println!("same greedy policy: {}", a.policy == b.policy);
    Ok(())
}
