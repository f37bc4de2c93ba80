//! Four attention kernels behind one interface: exact softmax attention,
//! random-feature linear attention, sign-binarized linear attention, and
//! kernelized-hashing attention over ±1 codes.
//!
//! The three linear variants all evaluate in the associative order:
//! key-side aggregates are built once and then contracted with each query,
//! so cost grows linearly with sequence length.

mod codes;
mod features;
mod hashed;
mod softmax;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::OpLedger;
use crate::error::{Error, Result};
use crate::hashing::HashFunctionSet;
use crate::numerics::{matmul, RealMatrix};

pub use codes::{binarize_sign_scale, hamming_affinity, hamming_distance, BinaryCodeMatrix};
pub use features::{apply_random_features, kernel_linear_attention, RandomFeatureMap, DENOMINATOR_FLOOR};
pub use hashed::{bias_exponent, hashed_attention, hashed_attention_quadratic, HashedOutput, MAX_SHIFT_BITS};
pub use softmax::softmax_attention;

/// Tolerance on `| ‖row‖ - 1 |` for kernels that require unit rows.
pub const UNIT_NORM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Softmax,
    KernelLinear,
    Binarized,
    Hashed,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Softmax,
        Variant::KernelLinear,
        Variant::Binarized,
        Variant::Hashed,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Softmax => "softmax",
            Variant::KernelLinear => "kernel_linear",
            Variant::Binarized => "binarized",
            Variant::Hashed => "hashed",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::param("variant", format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub seq_len: usize,
    pub head_dim: usize,
    pub temperature: f32,
    pub num_random_features: usize,
    pub code_bits: usize,
    pub tie_qk: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            seq_len: 64,
            head_dim: 16,
            temperature: 1.0,
            num_random_features: 64,
            code_bits: 16,
            tie_qk: true,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self, variant: Variant) -> Result<()> {
        if self.seq_len == 0 {
            return Err(Error::param("seq_len", "must be >= 1"));
        }
        if self.head_dim == 0 {
            return Err(Error::param("head_dim", "must be >= 1"));
        }
        if self.code_bits == 0 {
            return Err(Error::param("code_bits", "must be >= 1"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::param("temperature", "must be finite and > 0"));
        }
        if variant == Variant::KernelLinear && self.num_random_features == 0 {
            return Err(Error::param("num_random_features", "must be >= 1"));
        }
        if variant == Variant::Hashed && !self.tie_qk {
            return Err(Error::param(
                "tie_qk",
                "hashed attention requires tied queries and keys",
            ));
        }
        Ok(())
    }
}

/// Common interface over the attention variants.
pub trait AttentionKernel {
    fn variant(&self) -> Variant;

    fn attend(&self, q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxKernel {
    pub temperature: f32,
}

impl AttentionKernel for SoftmaxKernel {
    fn variant(&self) -> Variant {
        Variant::Softmax
    }

    fn attend(&self, q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix> {
        softmax_attention(q, k, v, self.temperature, ledger)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelLinearKernel {
    pub map: RandomFeatureMap,
}

impl AttentionKernel for KernelLinearKernel {
    fn variant(&self) -> Variant {
        Variant::KernelLinear
    }

    fn attend(&self, q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix> {
        kernel_linear_attention(q, k, v, &self.map, ledger)
    }
}

/// Sign-binarized queries and keys fed to the hashed-attention core.
///
/// The per-row scales of the sign/scale quantizer are dropped: the linear
/// core operates on ±1 codes and its `2^c` bias only guarantees positive
/// normalizers for unit-magnitude codes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinarizedKernel;

impl AttentionKernel for BinarizedKernel {
    fn variant(&self) -> Variant {
        Variant::Binarized
    }

    fn attend(&self, q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix> {
        ensure_unit_rows(q, "binarized attention (queries)")?;
        ensure_unit_rows(k, "binarized attention (keys)")?;
        let (codes_q, _) = binarize_sign_scale(q)?;
        let (codes_k, _) = binarize_sign_scale(k)?;
        Ok(hashed_attention(&codes_q, &codes_k, v, ledger)?.output)
    }
}

/// Kernelized-hashing attention with learned (or random) hash functions.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedKernel {
    pub functions: HashFunctionSet,
}

impl AttentionKernel for HashedKernel {
    fn variant(&self) -> Variant {
        Variant::Hashed
    }

    fn attend(&self, q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix> {
        if q != k {
            return Err(Error::Data(
                "hashed attention requires tied queries and keys (Q == K)".into(),
            ));
        }
        ensure_unit_rows(q, "hashed attention")?;
        let codes = self.functions.hash(q)?;
        Ok(hashed_attention(&codes, &codes, v, ledger)?.output)
    }
}

/// `Q, K, V = X·W_q, X·W_k, X·W_v`.
pub fn project_qkv(
    x: &RealMatrix,
    w_q: &RealMatrix,
    w_k: &RealMatrix,
    w_v: &RealMatrix,
    ledger: &mut OpLedger,
) -> Result<(RealMatrix, RealMatrix, RealMatrix)> {
    for w in [w_q, w_k, w_v] {
        if w.rows() != x.cols() {
            return Err(Error::shape(
                "project_qkv",
                format!("weights with {} rows", x.cols()),
                format!("{}x{}", w.rows(), w.cols()),
            ));
        }
    }
    Ok((
        matmul(x, w_q, ledger)?,
        matmul(x, w_k, ledger)?,
        matmul(x, w_v, ledger)?,
    ))
}

pub(crate) fn ensure_unit_rows(m: &RealMatrix, op: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE as f64 {
            return Err(Error::Data(format!(
                "{op}: row {i} has L2 norm {norm:.6}, expected unit rows"
            )));
        }
    }
    Ok(())
}
