//! Runs OKB on an item-collection grid and compares the basis size with the
//! CCS, then evaluates the keyboard zero-shot on unseen tasks.

use okb::basis::{okb_run, sfols_run, OkbConfig, SfolsConfig};
use okb::geometry::simplex_grid;
use okb::harness::{evaluate_zero_shot, optimal_returns, EvalMode};
use okb::mdp::build_item_grid;
use okb::ok::ChordSet;
use okb::planner::VI_TOL;

fn main() -> okb::Result<()> {
    let (mcp, phi) = build_item_grid(3, 3, 1, true, 0)?;
    println!("{} augmented states, {} actions", mcp.n_states(), mcp.n_actions());

    let res = okb_run(&mcp, &phi, &OkbConfig::new(ChordSet::grid(2, 8, true)?))?;
    for rec in &res.log {
        println!("{}", rec.to_json_line()?);
    }
    let ccs = sfols_run(&mcp, &phi, &SfolsConfig::default())?.ccs()?;
    println!("OKB basis {} policies, CCS {} policies", res.basis.len(), ccs.len());

    let test = simplex_grid(2, 10);
    let mut meta = res.meta.clone();
    let ok = evaluate_zero_shot(&mcp, &phi, &res.basis, &mut meta, &test, EvalMode::Ok, VI_TOL)?;
    let gpi = evaluate_zero_shot(&mcp, &phi, &res.basis, &mut meta, &test, EvalMode::Gpi, VI_TOL)?;
    let opt = optimal_returns(&mcp, &phi, &test, VI_TOL)?;
    println!("{:>12} {:>9} {:>9} {:>9}", "w", "optimal", "OK", "GPI");
    for (i, w) in test.iter().enumerate() {
        println!("[{:.1}, {:.1}] {:>9.4} {:>9.4} {:>9.4}", w[0], w[1], opt[i], ok[i], gpi[i]);
    }
    Ok(())
}
