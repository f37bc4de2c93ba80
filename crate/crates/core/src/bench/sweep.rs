use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::output::{format_sig, render_csv, round_sig, OutputFormat};
use super::run::{run_scenario, RunOptions, RunRecord};
use super::scenario::Scenario;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    N,
    Bits,
    Features,
}

impl SweepAxis {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepAxis::N => "n",
            SweepAxis::Bits => "bits",
            SweepAxis::Features => "features",
        }
    }

    fn apply(&self, s: &mut Scenario, value: usize) {
        match self {
            SweepAxis::N => s.n = value,
            SweepAxis::Bits => s.bits = value,
            SweepAxis::Features => s.num_features = value,
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepAxis::N),
            "bits" => Ok(SweepAxis::Bits),
            "features" => Ok(SweepAxis::Features),
            other => Err(Error::config(
                "axis",
                format!("unknown axis `{other}` (n, bits or features)"),
            )),
        }
    }
}

/// Least-squares slope of mean ledger totals against the swept value, in
/// log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub mean_totals: Vec<f64>,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub scaling: ScalingSummary,
}

pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::param("values", "need at least two paired points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::param("values", "log-log fit needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::param("values", "all values are equal"));
    }
    Ok(sxy / sxx)
}

/// Comma-separated positive integers.
pub fn parse_values(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| Error::config("values", format!("`{t}` is not a count")))
        })
        .collect()
}

/// Runs `base` once per value with the axis overridden.
pub fn sweep(base: &Scenario, axis: SweepAxis, values: &[usize], opts: &RunOptions) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::param("values", "no sweep values given"));
    }
    if values.len() < 2 || values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("values", "need at least two strictly ascending values"));
    }
    let mut records = Vec::new();
    let mut mean_totals = Vec::with_capacity(values.len());
    for &value in values {
        let mut s = base.clone();
        axis.apply(&mut s, value);
        s.validate()?;
        let batch = run_scenario(&s, opts)?;
        let total: f64 = batch.iter().map(|r| r.ledger().total() as f64).sum();
        mean_totals.push(total / batch.len() as f64);
        records.extend(batch);
    }
    let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let slope = log_log_slope(&xs, &mean_totals)?;
    Ok(SweepOutcome {
        records,
        scaling: ScalingSummary {
            axis,
            values: values.to_vec(),
            mean_totals,
            slope,
        },
    })
}

/// Records followed by one `#`-prefixed summary line for CSV; an object with
/// `records` and `scaling` for JSON.
pub fn render_sweep(outcome: &SweepOutcome, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Csv => {
            let mut out = render_csv(&outcome.records)?;
            out.push_str(&format!(
                "# scaling axis={} slope={}\n",
                outcome.scaling.axis,
                format_sig(outcome.scaling.slope)
            ));
            Ok(out)
        }
        OutputFormat::Json => {
            let rounded = SweepOutcome {
                records: outcome.records.iter().map(RunRecord::rounded).collect(),
                scaling: ScalingSummary {
                    mean_totals: outcome.scaling.mean_totals.iter().map(|&v| round_sig(v)).collect(),
                    slope: round_sig(outcome.scaling.slope),
                    ..outcome.scaling.clone()
                },
            };
            let mut out = serde_json::to_string_pretty(&rounded).map_err(|e| Error::Format(e.to_string()))?;
            out.push('\n');
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Variant;

    #[test]
    fn slope_of_power_laws() {
        let xs = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((log_log_slope(&xs, &ys).unwrap() - 1.5).abs() < 1e-12);
        assert!(log_log_slope(&[1.0], &[1.0]).is_err());
        assert!(log_log_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let s = Scenario::default();
        let opts = RunOptions::default();
        assert!(matches!(
            sweep(&s, SweepAxis::N, &[], &opts),
            Err(Error::Parameter { name: "values", .. })
        ));
        assert!(sweep(&s, SweepAxis::N, &[64], &opts).is_err());
        assert!(sweep(&s, SweepAxis::N, &[128, 64], &opts).is_err());
        assert!(parse_values("8,x").is_err());
        assert_eq!(parse_values("8, 16,32").unwrap(), vec![8, 16, 32]);
    }

    #[test]
    fn softmax_and_linear_slopes() {
        let base = Scenario {
            d_p: 8,
            seeds: vec![0],
            input_mode: super::super::scenario::InputMode::RandomUnit,
            ..Scenario::default()
        };
        let values = [16, 32, 64, 128];
        let soft = Scenario {
            variant: Variant::Softmax,
            ..base.clone()
        };
        let out = sweep(&soft, SweepAxis::N, &values, &RunOptions::default()).unwrap();
        assert_eq!(out.records.len(), 4);
        assert!(
            (out.scaling.slope - 2.0).abs() < 0.1,
            "softmax slope {}",
            out.scaling.slope
        );
        let lin = Scenario {
            variant: Variant::KernelLinear,
            ..base
        };
        let out = sweep(&lin, SweepAxis::N, &values, &RunOptions::default()).unwrap();
        assert!(
            (out.scaling.slope - 1.0).abs() < 0.1,
            "linear slope {}",
            out.scaling.slope
        );
        let csv = render_sweep(&out, OutputFormat::Csv).unwrap();
        assert!(csv.lines().last().unwrap().starts_with("# scaling axis=n slope="));
    }
}
