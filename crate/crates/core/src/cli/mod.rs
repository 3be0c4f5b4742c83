//! Command-line workflows: solve, verify and report.
//!
//! The binary in `main.rs` only parses arguments and maps outcomes to exit
//! codes; everything else lives here so it can be tested directly.

mod input;
mod run;
mod verify;

pub use input::{parse_constraints, parse_panel, write_panel, InputError};
pub use run::{
    render_report, run_solve, write_results_csv, write_trace_csv, CliError, Diagnostics, ExpertDistance,
    ExpertWeight, InitialWeights, OutputFormat, ResultDocument, RunConfig, TraceRow, AlternativeDistances,
};
pub use verify::{run_verify, VerifyConfig, VerifyReport};

/// Process exit codes.
pub mod exit_code {
    pub const SUCCESS: i32 = 0;
    pub const INPUT_ERROR: i32 = 2;
    pub const INFEASIBLE: i32 = 3;
    pub const NO_CONVERGENCE: i32 = 4;
}
