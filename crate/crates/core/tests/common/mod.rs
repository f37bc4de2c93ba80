//! Independent reference implementations. Everything here evaluates the
//! defining formulas directly with scalar f64 loops and shares no code paths
//! with the library beyond its data types.
#![allow(dead_code)]

use ecoattn::numerics::{row_l2_normalize, DEFAULT_NORM_EPS};
use ecoattn::{BinaryCodeMatrix, RealMatrix, SeededRng};

pub fn unit_rows(n: usize, d: usize, rng: &mut SeededRng) -> RealMatrix {
    let x = RealMatrix::random_normal(n, d, 0.0, 1.0, rng);
    row_l2_normalize(&x, DEFAULT_NORM_EPS).unwrap().matrix
}

pub fn to_f64(m: &RealMatrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rows normalized by their weights: `out_t = Σᵢ w(t,i) vᵢ / Σᵢ w(t,i)`.
fn weighted_rows(n_q: usize, v: &[Vec<f64>], w: impl Fn(usize, usize) -> f64) -> Vec<Vec<f64>> {
    (0..n_q)
        .map(|t| {
            let weights: Vec<f64> = (0..v.len()).map(|i| w(t, i)).collect();
            let z: f64 = weights.iter().sum();
            (0..v[0].len())
                .map(|d| weights.iter().zip(v).map(|(wi, vi)| wi * vi[d]).sum::<f64>() / z)
                .collect()
        })
        .collect()
}

/// Exact attention with weights `exp(q·k / τ)`.
pub fn softmax_oracle(q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, tau: f64) -> Vec<Vec<f64>> {
    let (q, k, v) = (to_f64(q), to_f64(k), to_f64(v));
    let logits: Vec<Vec<f64>> = q
        .iter()
        .map(|qt| k.iter().map(|ki| dot(qt, ki) / tau).collect())
        .collect();
    let peak: Vec<f64> = logits
        .iter()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    weighted_rows(q.len(), &v, |t, i| (logits[t][i] - peak[t]).exp())
}

/// Feature-space attention in quadratic order: weights `φ(q_t)·φ(k_i)`.
pub fn feature_attention_quadratic(phi_q: &RealMatrix, phi_k: &RealMatrix, v: &RealMatrix) -> Vec<Vec<f64>> {
    let (pq, pk, v) = (to_f64(phi_q), to_f64(phi_k), to_f64(v));
    weighted_rows(pq.len(), &v, |t, i| dot(&pq[t], &pk[i]))
}

/// `c = ⌈log₂(b+1)⌉` by search.
pub fn bias_exponent_oracle(bits: usize) -> u32 {
    (0..64).find(|&c| (1u128 << c) > bits as u128).unwrap()
}

/// Hashed attention in quadratic order: weights `H(q_t)·H(k_i) + 2^c`.
pub fn hashed_quadratic_oracle(
    codes_q: &BinaryCodeMatrix,
    codes_k: &BinaryCodeMatrix,
    v: &RealMatrix,
) -> Vec<Vec<f64>> {
    let bias = (1u64 << bias_exponent_oracle(codes_q.bits())) as f64;
    let v = to_f64(v);
    weighted_rows(codes_q.n(), &v, |t, i| {
        let aff: i64 = (0..codes_q.bits())
            .map(|r| (codes_q.get(t, r) * codes_k.get(i, r)) as i64)
            .sum();
        aff as f64 + bias
    })
}

pub fn max_abs_diff(a: &RealMatrix, b: &[Vec<f64>]) -> f64 {
    a.row_iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(&p, q)| (p as f64 - q).abs()))
        .fold(0.0, f64::max)
}

/// `max_t ‖a_t - b_t‖₂ / ‖b_t‖₂`.
pub fn max_relative_row_diff(a: &RealMatrix, b: &[Vec<f64>]) -> f64 {
    a.row_iter()
        .zip(b)
        .map(|(x, y)| {
            let diff: f64 = x.iter().zip(y).map(|(&p, q)| (p as f64 - q).powi(2)).sum();
            let norm: f64 = y.iter().map(|q| q * q).sum();
            (diff / norm).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Per-operation fp32 costs (3.7 pJ multiply, 0.9 pJ add), applied by hand.
pub fn fp32_energy_oracle(mul: f64, add: f64, div: f64) -> f64 {
    3.7 * mul + 0.9 * add + 3.7 * div
}

/// Reference (mul B, add B, energy B pJ) rows for named model configurations.
pub const ENERGY_ROWS: [(&str, f64, f64, f64); 18] = [
    ("PVTv2-B0 MSA", 2.02, 1.99, 9.25),
    ("PVTv2-B0 hashed", 0.54, 0.56, 2.49),
    ("PVTv2-B1 MSA", 5.02, 5.00, 23.07),
    ("PVTv2-B1 hashed", 2.03, 2.09, 9.39),
    ("PVTv2-B2 MSA", 8.64, 8.60, 39.71),
    ("PVTv2-B2 hashed", 3.85, 3.97, 17.82),
    ("PVTv2-B3 MSA", 11.86, 11.82, 54.56),
    ("PVTv2-B3 hashed", 6.54, 6.72, 30.25),
    ("PVTv2-B4 MSA", 15.97, 15.93, 73.43),
    ("PVTv2-B4 hashed", 9.57, 9.82, 44.25),
    ("Twins-SVT-S MSA", 5.96, 5.91, 27.36),
    ("Twins-SVT-S hashed", 2.72, 2.81, 12.59),
    ("LRA Transformer", 4.63, 4.57, 21.25),
    ("LRA Performer", 0.83, 0.84, 3.83),
    ("LRA Linformer", 0.81, 0.81, 3.74),
    ("LRA Reformer", 0.54, 0.54, 2.49),
    ("LRA Combiner", 0.51, 0.51, 2.34),
    ("LRA hashed", 0.25, 0.29, 1.17),
];

/// Largest `hᵀYh` over all `2^n` sign vectors.
pub fn exhaustive_max_quadratic(y: &RealMatrix) -> f64 {
    let n = y.rows();
    let y = to_f64(y);
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1 << n) {
        let h: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect();
        let val: f64 = (0..n).map(|i| h[i] * dot(&y[i], &h)).sum();
        best = best.max(val);
    }
    best
}

/// `‖HHᵀ - bY‖_F²` by direct summation.
pub fn reconstruction_oracle(codes: &BinaryCodeMatrix, y: impl Fn(usize, usize) -> i8) -> f64 {
    let (n, b) = (codes.n(), codes.bits());
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let aff: i64 = (0..b).map(|r| (codes.get(i, r) * codes.get(j, r)) as i64).sum();
            let diff = (aff - b as i64 * y(i, j) as i64) as f64;
            total += diff * diff;
        }
    }
    total
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    num / den
}
