//! Operation ledgers and the picojoule energy model.
//!
//! The default energy table is the 45nm CMOS per-operation cost table
//! (16/32-bit floating point add and multiply). Divisions are billed as one
//! multiplication. Exponentials (and the cosines of random features) and
//! power-of-two bit-shifts are counted but billed at 0 pJ, so a report can be
//! re-billed under another convention from its counts alone.
//!
//! # Closed-form counts for the attention core
//!
//! `n` tokens, head dimension `d`, `w` = code bits (hashed), `D_p`
//! (binarized, one bit per dimension) or random features (kernel linear).
//! QKV projection and code generation are outside the core.
//!
//! softmax, `Q Kᵀ` then weights then `P V`:
//! - mul: `n²d` scores + `n²` temperature scaling + `n²d` weighted sum
//! - add: `n²(d-1)` + `n²` max subtraction + `n(n-1)` normalizers + `n(n-1)d`
//! - exp: `n²`; div: `n²` weight normalization + 1 reciprocal temperature
//!
//! kernel linear (`F = w` features). Values carry an appended ones column so
//! the normalizer rides along in the same accumulation; accumulators start
//! at zero and every accumulated term is one addition:
//! - features of Q and K, each: `n·d·F + n·F` mul, `n·d·F + n·F` add, `n·F` cos
//! - `Σ φ(k)⊗[v,1]`: `n·F·d` mul, `n·F·(d+1)` add
//! - per-query contraction: `n·F·(d+1)` mul and add
//! - normalization: `n·(d+1)` div (the last column divides to 1)
//!
//! hashed and binarized (`w` bits): code-times-real products are
//! sign-conditional accumulations:
//! - `Σ H(k)⊗[v,1]`: `n·w·(d+1)` add; `Σ [v,1]`: `n·(d+1)` add
//! - bias `2^c·Σ[v,1]`: `d+1` shifts, independent of `n`
//! - per-query contraction and bias: `n·w·(d+1) + n·(d+1)` add
//! - normalization: `n·(d+1)` div; no multiplications anywhere

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::{
    binarize_sign_scale, hashed_attention, kernel_linear_attention, softmax_attention, BinaryCodeMatrix,
    RandomFeatureMap, Variant,
};
use crate::error::{Error, Result};
use crate::numerics::{row_l2_normalize, RealMatrix, SeededRng, DEFAULT_NORM_EPS};

/// Exact event counts for one or more kernel invocations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpLedger {
    pub mul: u64,
    pub add: u64,
    pub shift: u64,
    pub exp: u64,
    pub div: u64,
}

impl OpLedger {
    pub const FIELDS: [&'static str; 5] = ["mul_count", "add_count", "shift_count", "exp_count", "div_count"];

    pub fn merge(&mut self, other: &OpLedger) {
        self.mul += other.mul;
        self.add += other.add;
        self.shift += other.shift;
        self.exp += other.exp;
        self.div += other.div;
    }

    pub fn merged(mut self, other: &OpLedger) -> OpLedger {
        self.merge(other);
        self
    }

    pub fn total(&self) -> u64 {
        self.mul + self.add + self.shift + self.exp + self.div
    }

    /// Field values in [`OpLedger::FIELDS`] order.
    pub fn values(&self) -> [u64; 5] {
        [self.mul, self.add, self.shift, self.exp, self.div]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp16,
    Fp32,
}

impl Precision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Precision::Fp16 => "fp16",
            Precision::Fp32 => "fp32",
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp16" => Ok(Precision::Fp16),
            "fp32" => Ok(Precision::Fp32),
            other => Err(Error::param("precision", format!("unknown precision `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ArithOp {
    Add,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpCost {
    pub energy_pj: f64,
    /// Informational only.
    pub area_um2: f64,
}

/// Per-operation energy costs keyed by operation and precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTable {
    costs: BTreeMap<(ArithOp, Precision), OpCost>,
}

impl Default for EnergyTable {
    fn default() -> Self {
        let mut t = EnergyTable::empty();
        t.insert(ArithOp::Add, Precision::Fp16, 0.4, 1360.0);
        t.insert(ArithOp::Mul, Precision::Fp16, 1.1, 1640.0);
        t.insert(ArithOp::Add, Precision::Fp32, 0.9, 4184.0);
        t.insert(ArithOp::Mul, Precision::Fp32, 3.7, 7700.0);
        t
    }
}

impl EnergyTable {
    pub fn empty() -> Self {
        EnergyTable { costs: BTreeMap::new() }
    }

    pub fn insert(&mut self, op: ArithOp, precision: Precision, energy_pj: f64, area_um2: f64) {
        self.costs.insert((op, precision), OpCost { energy_pj, area_um2 });
    }

    pub fn cost(&self, op: ArithOp, precision: Precision) -> Option<OpCost> {
        self.costs.get(&(op, precision)).copied()
    }
}

/// Energy in pJ: `mul·c_mul + add·c_add + div·c_mul`; shifts and
/// exponentials cost nothing.
pub fn energy_of(ledger: &OpLedger, table: &EnergyTable, precision: Precision) -> Result<f64> {
    let lookup = |op| {
        table
            .cost(op, precision)
            .map(|c| c.energy_pj)
            .ok_or_else(|| Error::param("precision", format!("{precision} {op:?} missing from energy table")))
    };
    let mul = lookup(ArithOp::Mul)?;
    let add = lookup(ArithOp::Add)?;
    Ok(ledger.mul as f64 * mul + ledger.add as f64 * add + ledger.div as f64 * mul)
}

/// One variant's ledger, its energy and the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub variant: Variant,
    pub n: usize,
    pub d_p: usize,
    pub bits: usize,
    #[serde(skip)]
    pub m: usize,
    #[serde(flatten)]
    pub ledger: OpLedger,
    pub energy_pj: f64,
    pub precision: Precision,
}

impl CostReport {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        variant: Variant,
        n: usize,
        d_p: usize,
        bits: usize,
        m: usize,
        ledger: OpLedger,
        table: &EnergyTable,
        precision: Precision,
    ) -> Result<Self> {
        Ok(CostReport {
            variant,
            n,
            d_p,
            bits,
            m,
            energy_pj: energy_of(&ledger, table, precision)?,
            ledger,
            precision,
        })
    }
}

/// Closed-form ledger for the attention core of `variant`.
///
/// `width` is the code width for `hashed`, the feature count for
/// `kernel_linear`, and ignored by `softmax` and `binarized` (which uses one
/// bit per head dimension).
pub fn analytic_counts(variant: Variant, n: usize, d_p: usize, width: usize) -> OpLedger {
    let (n, d) = (n as u64, d_p as u64);
    match variant {
        Variant::Softmax => OpLedger {
            mul: n * n * d + n * n + n * n * d,
            add: n * n * d.saturating_sub(1) + n * n + n * n.saturating_sub(1) + n * n.saturating_sub(1) * d,
            shift: 0,
            exp: n * n,
            div: n * n + 1,
        },
        Variant::KernelLinear => {
            let f = width as u64;
            let features = OpLedger {
                mul: n * d * f + n * f,
                add: n * d * f + n * f,
                exp: n * f,
                ..OpLedger::default()
            };
            let core = OpLedger {
                mul: n * f * d + n * f * (d + 1),
                add: n * f * (d + 1) + n * f * (d + 1),
                div: n * (d + 1),
                ..OpLedger::default()
            };
            core.merged(&features).merged(&features)
        }
        Variant::Hashed | Variant::Binarized => {
            let w = if variant == Variant::Binarized { d } else { width as u64 };
            OpLedger {
                mul: 0,
                add: 2 * n * w * (d + 1) + 2 * n * (d + 1),
                shift: d + 1,
                exp: 0,
                div: n * (d + 1),
            }
        }
    }
}

/// First field where `actual` departs from `expected`, as a diagnostic error.
pub fn compare_ledgers(variant: Variant, expected: &OpLedger, actual: &OpLedger) -> Result<()> {
    let fields = OpLedger::FIELDS.iter().zip(expected.values()).zip(actual.values());
    for ((&field, e), a) in fields {
        if e != a {
            return Err(Error::CountMismatch {
                variant: variant.to_string(),
                field,
                expected: e,
                actual: a,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountConfig {
    pub n: usize,
    pub d_p: usize,
    /// Code bits or random features; see [`analytic_counts`].
    pub width: usize,
    pub temperature: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountCheck {
    pub variant: Variant,
    pub config: CountConfig,
    pub expected: OpLedger,
    pub actual: OpLedger,
}

/// Runs the instrumented kernel for `variant` on random unit-row inputs and
/// requires its ledger to equal [`analytic_counts`] field by field.
pub fn verify_counts(variant: Variant, cfg: CountConfig, rng: &mut SeededRng) -> Result<CountCheck> {
    if cfg.n == 0 || cfg.d_p == 0 {
        return Err(Error::param("n/d_p", "must be positive"));
    }
    if matches!(variant, Variant::Hashed | Variant::KernelLinear) && cfg.width == 0 {
        return Err(Error::param("width", "must be positive"));
    }
    let x = RealMatrix::random_normal(cfg.n, cfg.d_p, 0.0, 1.0, rng);
    let q = row_l2_normalize(&x, DEFAULT_NORM_EPS)?.matrix;
    let v = RealMatrix::random_normal(cfg.n, cfg.d_p, 0.0, 1.0, rng);

    let mut ledger = OpLedger::default();
    match variant {
        Variant::Softmax => {
            softmax_attention(&q, &q, &v, cfg.temperature, &mut ledger)?;
        }
        Variant::KernelLinear => {
            let map = RandomFeatureMap::new(cfg.d_p, cfg.width, cfg.temperature.sqrt(), rng)?;
            kernel_linear_attention(&q, &q, &v, &map, &mut ledger)?;
        }
        Variant::Binarized => {
            let (codes, _) = binarize_sign_scale(&q)?;
            hashed_attention(&codes, &codes, &v, &mut ledger)?;
        }
        Variant::Hashed => {
            let codes = BinaryCodeMatrix::random(cfg.n, cfg.width, rng);
            hashed_attention(&codes, &codes, &v, &mut ledger)?;
        }
    }
    let expected = analytic_counts(variant, cfg.n, cfg.d_p, cfg.width);
    compare_ledgers(variant, &expected, &ledger)?;
    Ok(CountCheck {
        variant,
        config: cfg,
        expected,
        actual: ledger,
    })
}
