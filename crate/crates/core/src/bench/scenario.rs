use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::attention::{bias_exponent, Variant};
use crate::cost::Precision;
use crate::error::{Error, Result};
use crate::hashing::{ConflictRule, HashLearnConfig, SigmaMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    /// Isotropic Gaussian rows projected to the unit sphere.
    RandomUnit,
    /// Two Gaussian blobs at `±separation/2` along a random direction.
    TwoCluster,
    /// Whitespace- or comma-separated rows read from `input_file`.
    File,
}

impl InputMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            InputMode::RandomUnit => "random_unit",
            InputMode::TwoCluster => "two_cluster",
            InputMode::File => "file",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_unit" => Ok(InputMode::RandomUnit),
            "two_cluster" => Ok(InputMode::TwoCluster),
            "file" => Ok(InputMode::File),
            other => Err(Error::config(
                "input_mode",
                format!("unknown mode `{other}` (expected random_unit, two_cluster or file)"),
            )),
        }
    }
}

/// One benchmark configuration. Every key of the text format maps to a field.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub variant: Variant,
    pub n: usize,
    pub d_p: usize,
    pub bits: usize,
    pub m: usize,
    pub l: usize,
    pub num_features: usize,
    pub temperature: f32,
    pub sigma: SigmaMode,
    pub seeds: Vec<u64>,
    pub input_mode: InputMode,
    pub input_file: Option<PathBuf>,
    pub separation: f32,
    pub steps: usize,
    pub lr: f64,
    pub precision: Precision,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            variant: Variant::Hashed,
            n: 64,
            d_p: 16,
            bits: 16,
            m: 25,
            l: 10,
            num_features: 64,
            temperature: 0.5,
            sigma: SigmaMode::Median,
            seeds: (0..20).collect(),
            input_mode: InputMode::TwoCluster,
            input_file: None,
            separation: 2.0,
            steps: 200,
            lr: 0.05,
            precision: Precision::Fp32,
        }
    }
}

pub const SCENARIO_KEYS: [&str; 17] = [
    "name",
    "variant",
    "n",
    "d_p",
    "bits",
    "m",
    "l",
    "num_features",
    "temperature",
    "sigma",
    "seeds",
    "input_mode",
    "input_file",
    "separation",
    "steps",
    "lr",
    "precision",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

/// Comma-separated seeds; `a..b` expands to the half-open range.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = parse_num("seeds", lo.trim())?;
            let hi: u64 = parse_num("seeds", hi.trim())?;
            if hi <= lo {
                return Err(Error::config("seeds", format!("empty range `{part}`")));
            }
            seeds.extend(lo..hi);
        } else {
            seeds.push(parse_num("seeds", part)?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::config("seeds", "no seeds given"));
    }
    Ok(seeds)
}

impl Scenario {
    /// Reads `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Scenario::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected key=value, got `{line}`"),
                )
            })?;
            s.set(key.trim(), value.trim())?;
        }
        s.validate()?;
        Ok(s)
    }

    /// Parses a scenario file; a relative `input_file` is resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Scenario::parse(&text)?;
        if let (Some(file), Some(dir)) = (&s.input_file, path.parent()) {
            if file.is_relative() {
                s.input_file = Some(dir.join(file));
            }
        }
        Ok(s)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "name" => {
                if value.is_empty() || value.contains(',') {
                    return Err(Error::config(key, "must be nonempty and contain no commas"));
                }
                self.name = value.to_string();
            }
            "variant" => {
                self.variant = value
                    .parse()
                    .map_err(|_| Error::config(key, format!("unknown variant `{value}`")))?
            }
            "n" => self.n = parse_num(key, value)?,
            "d_p" => self.d_p = parse_num(key, value)?,
            "bits" => self.bits = parse_num(key, value)?,
            "m" => self.m = parse_num(key, value)?,
            "l" => self.l = parse_num(key, value)?,
            "num_features" => self.num_features = parse_num(key, value)?,
            "temperature" => self.temperature = parse_num(key, value)?,
            "sigma" => {
                self.sigma = if value == "median" {
                    SigmaMode::Median
                } else {
                    SigmaMode::Fixed(parse_num(key, value)?)
                }
            }
            "seeds" => self.seeds = parse_seeds(value)?,
            "input_mode" => self.input_mode = value.parse()?,
            "input_file" => self.input_file = Some(PathBuf::from(value)),
            "separation" => self.separation = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "precision" => {
                self.precision = value
                    .parse()
                    .map_err(|_| Error::config(key, format!("unknown precision `{value}` (fp16 or fp32)")))?
            }
            other => {
                return Err(Error::config(
                    other,
                    format!("unknown key (expected one of {})", SCENARIO_KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must look like key=value"))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: usize| {
            if v == 0 {
                Err(Error::config(key, "must be >= 1"))
            } else {
                Ok(())
            }
        };
        positive("n", self.n)?;
        positive("d_p", self.d_p)?;
        positive("bits", self.bits)?;
        positive("m", self.m)?;
        positive("num_features", self.num_features)?;
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature", "must be finite and > 0"));
        }
        if let SigmaMode::Fixed(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::config("sigma", "must be `median` or a finite value > 0"));
            }
        }
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::config("separation", "must be finite and >= 0"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be finite and > 0"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "no seeds given"));
        }
        if self.input_mode == InputMode::File && self.input_file.is_none() {
            return Err(Error::config("input_file", "required when input_mode = file"));
        }
        if matches!(self.variant, Variant::Hashed | Variant::Binarized) {
            let width = if self.variant == Variant::Hashed {
                self.bits
            } else {
                self.d_p
            };
            bias_exponent(width as u64).map_err(|e| Error::config("bits", e.to_string()))?;
        }
        if self.variant == Variant::Hashed {
            if self.m > self.n {
                return Err(Error::config(
                    "m",
                    format!("{} support samples exceed n = {}", self.m, self.n),
                ));
            }
            if self.l == 0 || 2 * self.l >= self.n {
                return Err(Error::config("l", format!("need 1 <= l and 2l < n = {}", self.n)));
            }
        }
        Ok(())
    }

    pub fn hash_config(&self) -> HashLearnConfig {
        HashLearnConfig {
            m: self.m,
            bits: self.bits,
            l: self.l,
            steps: self.steps,
            lr: self.lr,
            sigma: self.sigma,
            conflict: ConflictRule::PreferSimilar,
        }
    }

    /// Value of the `bits` output column: the code width for the hashed and
    /// binarized variants, the feature count for kernel-linear, 0 for softmax.
    pub fn width(&self) -> usize {
        match self.variant {
            Variant::Softmax => 0,
            Variant::KernelLinear => self.num_features,
            Variant::Binarized => self.d_p,
            Variant::Hashed => self.bits,
        }
    }
}
