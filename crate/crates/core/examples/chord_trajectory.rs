//! Rolls out a trained keyboard and prints the chord chosen at each step as
//! CSV.

use okb::basis::{okb_run, OkbConfig};
use okb::mdp::ItemGridLayout;
use okb::ok::{chord_trajectory, train_meta_policy, write_chord_trajectory_csv, ChordSet, OptionKeyboard, TaskSpec};
use okb::planner::VI_TOL;

fn main() -> okb::Result<()> {
    let grid = ItemGridLayout::random(3, 3, 2, true, 1)?.build(0.95)?;
    let chords = ChordSet::grid(2, 8, true)?;
    let res = okb_run(&grid.mcp, &grid.phi, &OkbConfig::new(chords.clone()))?;
    let task = TaskSpec::Nonlinear(grid.sequential_reward());
    let meta = train_meta_policy(&grid.mcp, &grid.phi, &res.basis, &[task], &chords, VI_TOL)?;
    let kb = OptionKeyboard::new(&grid.mcp, &grid.phi, &res.basis, &chords)?;
    let start = grid.mcp.initial().iter().position(|&p| p > 0.0).unwrap_or(0);
    let steps = chord_trajectory(&kb, &meta, 0, start, 30, 0)?;
    write_chord_trajectory_csv(std::io::stdout().lock(), &steps)?;
    Ok(())
}
