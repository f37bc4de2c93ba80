use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::run::RunRecord;
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 15] = [
    "scenario",
    "variant",
    "seed",
    "n",
    "d_p",
    "bits",
    "mean_err",
    "max_err",
    "mul",
    "add",
    "shift",
    "exp",
    "div",
    "energy_pj",
    "wall_ms",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::config(
                "format",
                format!("unknown format `{other}` (csv or json)"),
            )),
        }
    }
}

/// Six significant digits: fixed notation for magnitudes in `[1e-4, 1e6)`,
/// scientific otherwise. Zero prints as `0.000000`.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0.000000".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    if (-4..6).contains(&exp) {
        format!("{x:.*}", (5 - exp) as usize)
    } else {
        sci
    }
}

/// `x` rounded to what [`format_sig`] prints.
pub fn round_sig(x: f64) -> f64 {
    format_sig(x).parse().unwrap_or(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig).unwrap_or_default()
}

impl RunRecord {
    /// Copy with every real field rounded to six significant digits.
    pub fn rounded(&self) -> RunRecord {
        RunRecord {
            mean_err: self.mean_err.map(round_sig),
            max_err: self.max_err.map(round_sig),
            energy_pj: round_sig(self.energy_pj),
            wall_ms: round_sig(self.wall_ms),
            ..self.clone()
        }
    }
}

fn nonempty(records: &[RunRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::param("records", "nothing to emit"));
    }
    Ok(())
}

pub fn render_csv(records: &[RunRecord]) -> Result<String> {
    nonempty(records)?;
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.variant,
            r.seed,
            r.n,
            r.d_p,
            r.bits,
            opt(r.mean_err),
            opt(r.max_err),
            r.mul,
            r.add,
            r.shift,
            r.exp,
            r.div,
            format_sig(r.energy_pj),
            format_sig(r.wall_ms),
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn render_json(records: &[RunRecord]) -> Result<String> {
    nonempty(records)?;
    let rounded: Vec<RunRecord> = records.iter().map(RunRecord::rounded).collect();
    let mut out = serde_json::to_string_pretty(&rounded).map_err(|e| Error::Format(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

pub fn render(records: &[RunRecord], format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => render_csv(records),
        OutputFormat::Json => render_json(records),
    }
}

pub fn write_output(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_output(path, &render_csv(records)?)
}

pub fn emit_json(records: &[RunRecord], path: &Path) -> Result<()> {
    write_output(path, &render_json(records)?)
}
