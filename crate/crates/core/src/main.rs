use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consensus_weights::cli::{
    exit_code, parse_constraints, parse_panel, render_report, run_solve, run_verify, write_results_csv,
    write_trace_csv, CliError, InitialWeights, OutputFormat, ResultDocument, RunConfig, VerifyConfig,
};
use consensus_weights::ScorePanel;

#[derive(Parser)]
#[command(name = "consensus-weights", version, about = "Expert weights from distances to the consensus score point")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for expert weights.
    Solve {
        input: PathBuf,
        #[arg(long = "tol", default_value_t = 1e-12)]
        tolerance: f64,
        #[arg(long = "max-iter", default_value_t = 200)]
        max_iterations: usize,
        /// `uniform` or a comma-separated weight list.
        #[arg(long, default_value = "uniform")]
        init: InitialWeights,
        /// File of extra linear constraints, one per line.
        #[arg(long)]
        constraints: Option<PathBuf>,
        /// Margin applied to strict `>` / `<` constraints.
        #[arg(long, default_value_t = 0.0)]
        margin: f64,
        /// Results file; `.csv` writes a table, anything else JSON.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Convergence trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Cross-check the solver against independent oracles.
    Verify {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Brute-force grid resolution; defaults to the finest within budget.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long = "subgrad-steps", default_value_t = 100_000)]
        subgrad_steps: usize,
    },
    /// Print a summary table for a results JSON file.
    Report { results: PathBuf },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_panel(path: &Path) -> Result<ScorePanel, CliError> {
    parse_panel(&read(path)?).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Solve {
            input,
            tolerance,
            max_iterations,
            init,
            constraints,
            margin,
            out,
            trace,
        } => {
            let panel = load_panel(&input)?;
            let extra_constraints = match constraints {
                Some(path) => parse_constraints(&read(&path)?, panel.experts(), margin)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
                None => Vec::new(),
            };
            let config = RunConfig {
                tolerance,
                max_iterations,
                initial_weights: init,
                extra_constraints,
            };
            let doc = run_solve(&panel, &config)?;
            match out {
                Some(path) => {
                    let body = match OutputFormat::from_path(&path) {
                        OutputFormat::Json => doc.to_json(),
                        OutputFormat::Csv => write_results_csv(&doc),
                    };
                    write(&path, &body)?;
                    print!("{}", render_report(&doc));
                }
                None => println!("{}", doc.to_json()),
            }
            if let Some(path) = trace {
                write(&path, &write_trace_csv(&doc))?;
            }
            for w in &doc.diagnostics.warnings {
                log::warn!("{w}");
            }
            Ok(doc.exit_code())
        }
        Command::Verify {
            input,
            seed,
            grid,
            subgrad_steps,
        } => {
            let panel = load_panel(&input)?;
            let config = VerifyConfig {
                seed,
                grid,
                subgradient_steps: subgrad_steps,
                ..VerifyConfig::default()
            };
            let report = run_verify(&panel, &config)?;
            print!("{}", report.render());
            println!("order consistency: {}", report.order_consistent);
            Ok(if report.all_passed() {
                exit_code::SUCCESS
            } else {
                1
            })
        }
        Command::Report { results } => {
            let doc = ResultDocument::from_json(&read(&results)?)?;
            print!("{}", render_report(&doc));
            Ok(exit_code::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit_code::INPUT_ERROR as u8 } else { 0 });
        }
    };
    match run(args.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
