//! A two-feature MCP where no chord sequence reaches the optimal action at
//! the start state, while the advantage test flags it.

fn main() -> okb::Result<()> {
    let report = okb::harness::counterexample_demo(2_000)?;
    println!("{report}");
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
