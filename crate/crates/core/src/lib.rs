//! Attention kernels with exact operation accounting.
//!
//! Four attention variants share one interface: exact softmax attention,
//! random-feature linear attention, sign/scale binarized attention, and
//! attention over learned kernelized hash codes. Every kernel reports the
//! multiplications, additions, shifts, transcendental evaluations and
//! divisions it performs, and [`cost`] turns those counts into energy.

// `!(x > 0.0)` guards deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod bench;
pub mod cost;
pub mod error;
pub mod hashing;
pub mod numerics;

pub use attention::{AttentionConfig, AttentionKernel, BinaryCodeMatrix, Variant};
pub use cost::{energy_of, CostReport, EnergyTable, OpLedger, Precision};
pub use error::{Error, Result};
pub use hashing::{HashFunctionSet, HashLearnConfig};
pub use numerics::{RealMatrix, SeededRng};
