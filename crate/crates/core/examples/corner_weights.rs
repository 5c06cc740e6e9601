//! Corner weights of a small SF set, and where the value gap to a larger set
//! peaks.

use okb::geometry::{corner_weights, minimal_ccs, scalarized_max, simplex_grid, SFSet, DOMINANCE_TOL};

fn main() -> okb::Result<()> {
    let full = SFSet::from_vectors([
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.7, 0.7],
        vec![0.9, 0.4],
        vec![0.3, 0.3],
    ]);
    let partial = SFSet::from_vectors(full.vectors()[..2].iter().cloned());

    let corners = corner_weights(&partial, 2)?;
    println!("corners of the partial set:");
    for (w, v) in corners.weights.iter().zip(&corners.values) {
        println!("  w = {w:?}  envelope = {v:.3}");
    }

    let delta = |w: &[f64]| -> okb::Result<f64> {
        Ok(scalarized_max(&full, w)?.0 - scalarized_max(&partial, w)?.0)
    };
    let mut at_corner = f64::NEG_INFINITY;
    for w in &corners.weights {
        at_corner = at_corner.max(delta(w)?);
    }
    let mut on_grid = f64::NEG_INFINITY;
    for w in simplex_grid(2, 1000) {
        on_grid = on_grid.max(delta(&w)?);
    }
    println!("max gap at corners {at_corner:.4}, on a 1001-point grid {on_grid:.4}");

    let ccs = minimal_ccs(&full, DOMINANCE_TOL)?;
    println!("minimal CCS keeps {} of {} vectors: {:?}", ccs.len(), full.len(), ccs.vectors());
    Ok(())
}
