//! A layout where the basis cannot be smaller than the CCS: every exit must
//! be learned directly.

use okb::basis::{okb_run, sfols_run, OkbConfig, SfolsConfig};
use okb::mdp::build_corridors;
use okb::ok::ChordSet;

fn main() -> okb::Result<()> {
    let (mcp, phi) = build_corridors(3, 0.9)?;
    let res = okb_run(&mcp, &phi, &OkbConfig::new(ChordSet::grid(2, 16, true)?))?;
    let ccs = sfols_run(&mcp, &phi, &SfolsConfig::default())?.ccs()?;
    println!("OKB basis: {}", res.basis.len());
    for rec in &res.basis {
        println!("  ψ = {:?} from task {:?}", rec.sf_vector, rec.source_task.as_ref().map(|w| w.as_slice().to_vec()));
    }
    println!("CCS: {}", ccs.len());
    for v in ccs.vectors() {
        println!("  ψ = {v:?}");
    }
    Ok(())
}
