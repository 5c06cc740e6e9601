use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use okb::harness::{compare_report, counterexample_demo, run_experiment, with_thread_pool, ExperimentConfig, Snapshot};
use okb::Result;

/// Option-keyboard basis experiments on tabular MDPs.
#[derive(Parser)]
#[command(name = "okb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config (TOML).
    Run { config: PathBuf },
    /// Zero-shot evaluation of a snapshot on a simplex test grid.
    Eval {
        snapshot: PathBuf,
        #[arg(long, default_value_t = 20)]
        grid: usize,
    },
    /// Mean normalized return with bootstrapped 95% CIs.
    Compare {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write the summary CSV here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Built-in demonstrations.
    Demo {
        #[arg(value_parser = ["counterexample"])]
        name: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match with_thread_pool(|| dispatch(cli.command)).and_then(|r| r) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = run_experiment(&cfg)?;
            println!("wrote {} seed(s) to {}", cfg.seeds.len(), dir.display());
        }
        Command::Eval { snapshot, grid } => {
            let text = std::fs::read_to_string(&snapshot)
                .map_err(|e| okb::Error::Config(format!("{}: {e}", snapshot.display())))?;
            let snap = Snapshot::parse(&text)?;
            let rows = snap.evaluate(grid)?;
            let d = rows.first().map_or(0, |r| r.w.len());
            let mut out = csv::Writer::from_writer(std::io::stdout());
            let mut header = vec!["method".to_string(), "seed".into(), "iteration".into()];
            header.extend((0..d).map(|i| format!("w_{i}")));
            header.extend(["raw_return", "norm_return", "opt_return"].map(String::from));
            out.write_record(&header)?;
            for r in &rows {
                let mut rec = vec![r.method.clone(), r.seed.to_string(), r.iteration.to_string()];
                rec.extend(r.w.iter().map(|x| x.to_string()));
                rec.extend([r.raw_return, r.norm_return, r.opt_return].map(|x| x.to_string()));
                out.write_record(&rec)?;
            }
            out.flush()?;
            let gap = rows.iter().map(|r| r.opt_return - r.raw_return).fold(0.0, f64::max);
            eprintln!("{} tasks, max gap to optimum {gap:.3e}", rows.len());
        }
        Command::Compare { csv, out } => {
            let report = compare_report(&csv)?;
            print!("{report}");
            if let Some(path) = out {
                std::fs::write(path, report.to_csv())?;
            }
        }
        Command::Demo { .. } => {
            let report = counterexample_demo(10_000)?;
            print!("{report}");
            return Ok(if report.passed() { 0 } else { 3 });
        }
    }
    Ok(0)
}
