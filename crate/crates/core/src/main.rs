use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ecoattn::attention::Variant;
use ecoattn::bench::{
    parse_seeds, parse_values, render, render_checks, render_sweep, run_scenario, selftest, sweep, write_output,
    OutputFormat, RunOptions, Scenario, SweepAxis,
};
use ecoattn::cost::{verify_counts, CountConfig};
use ecoattn::{Error, Result, SeededRng};

#[derive(Parser)]
#[command(
    name = "ecoattn",
    version,
    about = "Attention-variant benchmarks with exact op and energy accounting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutputArgs {
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file of key=value lines.
    config: PathBuf,
    /// Comma-separated seeds (ranges like 0..20 allowed); replaces the file's seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Override one scenario key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Record wall-clock time per seed (output is then no longer reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and print one record per seed.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run a scenario once per value of one axis and fit the scaling exponent.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// n, bits or features.
        #[arg(long)]
        axis: String,
        /// Comma-separated ascending values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Check instrumented op counts against their closed forms.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant suite.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(args: &ScenarioArgs) -> Result<(Scenario, RunOptions)> {
    let mut s = Scenario::load(&args.config)?;
    if let Some(seeds) = &args.seeds {
        s.seeds = parse_seeds(seeds)?;
    }
    s.apply_overrides(&args.overrides)?;
    Ok((
        s,
        RunOptions {
            timing: args.timing,
            threads: None,
        },
    ))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_output(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn verify_grid() -> Result<String> {
    let mut rng = SeededRng::new(0);
    let mut out = String::from("variant,n,d_p,width,mul,add,shift,exp,div,status\n");
    for variant in Variant::ALL {
        for n in [8, 32, 128] {
            for d_p in [8, 32] {
                for width in [8, 16] {
                    let cfg = CountConfig {
                        n,
                        d_p,
                        width,
                        temperature: 1.0,
                    };
                    let c = verify_counts(variant, cfg, &mut rng)?;
                    let l = c.actual;
                    out.push_str(&format!(
                        "{variant},{n},{d_p},{width},{},{},{},{},{},ok\n",
                        l.mul, l.add, l.shift, l.exp, l.div
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Ok(true) when every check passed.
fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { scenario, output } => {
            let format: OutputFormat = output.format.parse()?;
            let (s, opts) = load(&scenario)?;
            let records = run_scenario(&s, &opts)?;
            emit(output.out.as_deref(), &render(&records, format)?)?;
            Ok(true)
        }
        Command::Sweep {
            scenario,
            axis,
            values,
            output,
        } => {
            let format: OutputFormat = output.format.parse()?;
            let axis: SweepAxis = axis.parse()?;
            let values = parse_values(&values)?;
            let (s, opts) = load(&scenario)?;
            let outcome = sweep(&s, axis, &values, &opts).map_err(|e| match e {
                Error::Parameter { name: "values", reason } => Error::Config {
                    key: "values".into(),
                    reason,
                },
                other => other,
            })?;
            emit(output.out.as_deref(), &render_sweep(&outcome, format)?)?;
            Ok(true)
        }
        Command::Verify { out } => {
            emit(out.as_deref(), &verify_grid()?)?;
            Ok(true)
        }
        Command::Selftest { out } => {
            let checks = selftest()?;
            emit(out.as_deref(), &render_checks(&checks))?;
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
