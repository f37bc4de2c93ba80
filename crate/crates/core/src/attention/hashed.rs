use super::codes::{hamming_affinity, BinaryCodeMatrix};
use crate::cost::OpLedger;
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

/// Width of the integer shift that realizes the `2^c` bias.
pub const MAX_SHIFT_BITS: u32 = 31;

/// `c = ⌈log₂(bits + 1)⌉`, the smallest exponent with `2^c > bits`, which
/// keeps every biased affinity `q·k + 2^c` at least 1.
pub fn bias_exponent(bits: u64) -> Result<u32> {
    if bits == 0 {
        return Err(Error::param("bits", "must be >= 1"));
    }
    let c = bits
        .checked_add(1)
        .and_then(u64::checked_next_power_of_two)
        .map(u64::trailing_zeros)
        .unwrap_or(u64::BITS);
    if c > MAX_SHIFT_BITS {
        return Err(Error::param(
            "bits",
            format!("bias 2^{c} for {bits} bits overflows the {MAX_SHIFT_BITS}-bit shift"),
        ));
    }
    Ok(c)
}

/// `x · 2^c` by adding `c` to the binary exponent.
fn shift_left(x: f32, c: u32) -> f32 {
    let bits = x.to_bits();
    let exponent = (bits >> 23) & 0xff;
    if exponent == 0 || exponent + c >= 0xff {
        // zero, subnormal or overflow: no plain exponent bump
        return x * (c as f32).exp2();
    }
    f32::from_bits(bits + (c << 23))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedOutput {
    pub output: RealMatrix,
    /// Smallest per-query normalizer; strictly positive by construction.
    pub min_denominator: f32,
}

impl HashedOutput {
    pub fn denominators_positive(&self) -> bool {
        self.min_denominator > 0.0
    }
}

/// Linear-order attention over ±1 codes with the `2^c` bias:
///
/// `out_t = (H(q_t)ᵀ Σᵢ H(kᵢ)⊗vᵢ + 2^c Σᵢ vᵢ) / (H(q_t)ᵀ Σⱼ H(kⱼ) + 2^c N)`
///
/// Values carry an appended ones column so the normalizer is the last entry
/// of each numerator row. Code-times-real products are sign-conditional
/// additions or subtractions, the bias is a shift, and the final divisions are
/// the only multiplicative work.
pub fn hashed_attention(
    codes_q: &BinaryCodeMatrix,
    codes_k: &BinaryCodeMatrix,
    v: &RealMatrix,
    ledger: &mut OpLedger,
) -> Result<HashedOutput> {
    let bits = codes_q.bits();
    if codes_k.bits() != bits {
        return Err(Error::shape(
            "hashed_attention",
            format!("{bits}-bit key codes"),
            codes_k.bits(),
        ));
    }
    let c = bias_exponent(bits as u64)?;
    if codes_k.n() != v.rows() {
        return Err(Error::shape(
            "hashed_attention",
            format!("V with {} rows", codes_k.n()),
            v.rows(),
        ));
    }
    let dv = v.cols();
    let width = dv + 1;

    let mut kv = vec![0.0f32; bits * width];
    let mut value_sum = vec![0.0f32; width];
    for (i, vrow) in v.row_iter().enumerate() {
        for (r, &code) in codes_k.row(i).iter().enumerate() {
            let acc = &mut kv[r * width..(r + 1) * width];
            if code > 0 {
                for (a, &x) in acc.iter_mut().zip(vrow) {
                    *a += x;
                }
                acc[dv] += 1.0;
            } else {
                for (a, &x) in acc.iter_mut().zip(vrow) {
                    *a -= x;
                }
                acc[dv] -= 1.0;
            }
        }
        for (s, &x) in value_sum.iter_mut().zip(vrow) {
            *s += x;
        }
        value_sum[dv] += 1.0;
    }
    let bias: Vec<f32> = value_sum.iter().map(|&s| shift_left(s, c)).collect();
    let (nk, b64, w64) = (codes_k.n() as u64, bits as u64, width as u64);
    ledger.add += nk * b64 * w64 + nk * w64;
    ledger.shift += w64;

    let mut out = Vec::with_capacity(codes_q.n() * dv);
    let mut num = vec![0.0f32; width];
    let mut min_denominator = f32::INFINITY;
    for t in 0..codes_q.n() {
        num.fill(0.0);
        for (r, &code) in codes_q.row(t).iter().enumerate() {
            let row = &kv[r * width..(r + 1) * width];
            if code > 0 {
                for (a, &x) in num.iter_mut().zip(row) {
                    *a += x;
                }
            } else {
                for (a, &x) in num.iter_mut().zip(row) {
                    *a -= x;
                }
            }
        }
        for (a, &x) in num.iter_mut().zip(&bias) {
            *a += x;
        }
        let den = num[dv];
        if !(den > 0.0) {
            return Err(Error::Degenerate {
                op: "hashed_attention",
                row: t,
                detail: format!("normalizer {den} is not positive"),
            });
        }
        min_denominator = min_denominator.min(den);
        for a in num.iter_mut() {
            *a /= den;
        }
        out.extend_from_slice(&num[..dv]);
    }
    let nq = codes_q.n() as u64;
    ledger.add += nq * b64 * w64 + nq * w64;
    ledger.div += nq * w64;

    let output = RealMatrix::from_raw(codes_q.n(), dv, out);
    output.ensure_finite("hashed_attention")?;
    Ok(HashedOutput {
        output,
        min_denominator,
    })
}

/// Quadratic-order form of [`hashed_attention`]: every weight
/// `H(q_t)·H(k_i) + 2^c` is formed explicitly and each row is normalized by
/// its own sum. Accumulates in f64; used as a reference, not instrumented.
pub fn hashed_attention_quadratic(
    codes_q: &BinaryCodeMatrix,
    codes_k: &BinaryCodeMatrix,
    v: &RealMatrix,
) -> Result<RealMatrix> {
    let bits = codes_q.bits();
    if codes_k.bits() != bits {
        return Err(Error::shape(
            "hashed_attention_quadratic",
            format!("{bits}-bit key codes"),
            codes_k.bits(),
        ));
    }
    if codes_k.n() != v.rows() {
        return Err(Error::shape(
            "hashed_attention_quadratic",
            format!("V with {} rows", codes_k.n()),
            v.rows(),
        ));
    }
    let bias = f64::from(1u32 << bias_exponent(bits as u64)?);
    let dv = v.cols();
    let mut out = Vec::with_capacity(codes_q.n() * dv);
    let mut acc = vec![0.0f64; dv];
    for t in 0..codes_q.n() {
        acc.fill(0.0);
        let mut den = 0.0f64;
        for (i, vrow) in v.row_iter().enumerate() {
            let w = hamming_affinity(codes_q.row(t), codes_k.row(i))? as f64 + bias;
            den += w;
            for (a, &x) in acc.iter_mut().zip(vrow) {
                *a += w * x as f64;
            }
        }
        out.extend(acc.iter().map(|&a| (a / den) as f32));
    }
    Ok(RealMatrix::from_raw(codes_q.n(), dv, out))
}
