//! Runs OKB and SFOLS cells from an in-memory config and summarises the
//! learning curves, the same path `okb run` and `okb compare` take.

use okb::harness::{cell_stem, compare_report, run_experiment, ExperimentConfig};

const CONFIG: &str = r#"
method = "okb"
seeds = [0, 1]
test_grid_h = 10
max_iters = 4
output_dir = "PLACEHOLDER"

[environment]
name = "item-grid"
params = { width = 4, height = 4, items_per_type = 2, toroidal = true }

[chords]
resolution = 8
"#;

fn main() -> okb::Result<()> {
    let dir = std::env::temp_dir().join("okb-experiment-example");
    let text = CONFIG.replace("PLACEHOLDER", &dir.display().to_string());
    let mut csvs = Vec::new();
    for method in ["okb", "okb-uniform", "sfols"] {
        let cfg = ExperimentConfig::from_toml(&text.replace("\"okb\"", &format!("\"{method}\"")))?;
        let out = run_experiment(&cfg)?;
        for &seed in &cfg.seeds {
            csvs.push(out.join(format!("{}.csv", cell_stem(cfg.method, seed))));
        }
    }
    println!("outputs in {}", dir.display());
    print!("{}", compare_report(&csvs)?);
    Ok(())
}
