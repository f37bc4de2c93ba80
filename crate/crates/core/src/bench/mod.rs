//! Scenario-driven benchmarks: seeded inputs, every attention variant against
//! exact softmax attention, and CSV/JSON tables of error, counts and energy.

mod inputs;
mod output;
mod run;
mod scenario;
mod selftest;
mod sweep;

pub use inputs::{generate_inputs, read_matrix, two_cluster, Inputs};
pub use output::{
    emit_csv, emit_json, format_sig, render, render_csv, render_json, round_sig, write_output, OutputFormat,
    CSV_COLUMNS,
};
pub use run::{
    compare_hashing, row_errors, run_scenario, run_seed, threads_from_env, HashingComparison, RunOptions, RunRecord,
    THREADS_ENV,
};
pub use scenario::{parse_seeds, InputMode, Scenario, SCENARIO_KEYS};
pub use selftest::{
    max_relative_row_error, optimality_ratio, render_checks, selftest, two_cluster_benchmark, Check,
    REFERENCE_ENERGY_ROWS,
};
pub use sweep::{log_log_slope, parse_values, render_sweep, sweep, ScalingSummary, SweepAxis, SweepOutcome};
