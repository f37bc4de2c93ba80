use std::f32::consts::TAU;

use super::ensure_unit_rows;
use crate::cost::OpLedger;
use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, SeededRng};

/// Normalizers smaller than this in magnitude are reported as degenerate.
pub const DENOMINATOR_FLOOR: f32 = 1e-9;

/// Random Fourier features for the Gaussian RBF kernel:
/// `φ(x) = sqrt(2/F) · cos(xW + b)` with `W ~ N(0, 1/σ²)` and `b ~ U[0, 2π)`,
/// so that `E[φ(x)ᵀφ(y)] = exp(-‖x-y‖² / 2σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureMap {
    projection: RealMatrix,
    offsets: Vec<f32>,
    sigma: f32,
    scale: f32,
}

impl RandomFeatureMap {
    pub fn new(dim: usize, num_features: usize, sigma: f32, rng: &mut SeededRng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dim", "must be >= 1"));
        }
        if num_features == 0 {
            return Err(Error::param("num_random_features", "must be >= 1"));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        let projection = RealMatrix::random_normal(dim, num_features, 0.0, 1.0 / sigma, rng);
        let offsets = (0..num_features)
            .map(|_| {
                let b = rng.uniform(0.0, TAU);
                if b >= TAU {
                    0.0
                } else {
                    b
                }
            })
            .collect();
        Ok(RandomFeatureMap {
            projection,
            offsets,
            sigma,
            scale: (2.0 / num_features as f32).sqrt(),
        })
    }

    pub fn projection(&self) -> &RealMatrix {
        &self.projection
    }

    pub fn offsets(&self) -> &[f32] {
        &self.offsets
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn num_features(&self) -> usize {
        self.projection.cols()
    }
}

/// `φ(x)` for every row of `x`.
pub fn apply_random_features(x: &RealMatrix, map: &RandomFeatureMap) -> Result<RealMatrix> {
    features_counted(x, map, &mut OpLedger::default())
}

pub(crate) fn features_counted(x: &RealMatrix, map: &RandomFeatureMap, ledger: &mut OpLedger) -> Result<RealMatrix> {
    if x.cols() != map.dim() {
        return Err(Error::shape(
            "apply_random_features",
            format!("{} columns", map.dim()),
            x.cols(),
        ));
    }
    let (n, d, f) = (x.rows(), map.dim(), map.num_features());
    let w = map.projection.data();
    let mut out = vec![0.0f32; n * f];
    for (i, row) in x.row_iter().enumerate() {
        for j in 0..f {
            let mut acc = 0.0f32;
            for (t, &xv) in row.iter().enumerate() {
                acc += xv * w[t * f + j];
            }
            acc += map.offsets[j];
            out[i * f + j] = map.scale * acc.cos();
        }
    }
    let (n, d, f) = (n as u64, d as u64, f as u64);
    ledger.mul += n * d * f + n * f;
    ledger.add += n * d * f + n * f;
    ledger.exp += n * f;
    let out = RealMatrix::from_raw(x.rows(), map.num_features(), out);
    out.ensure_finite("apply_random_features")?;
    Ok(out)
}

/// Random-feature linear attention in the associative order: the key-side
/// aggregates `Σᵢ φ(kᵢ)⊗[vᵢ, 1]` are built once and each query contracts
/// against them, so the trailing column of every numerator row is that
/// row's normalizer `φ(q)ᵀ Σⱼ φ(kⱼ)`.
pub fn kernel_linear_attention(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    map: &RandomFeatureMap,
    ledger: &mut OpLedger,
) -> Result<RealMatrix> {
    if q.cols() != k.cols() || q.cols() != map.dim() {
        return Err(Error::shape(
            "kernel_linear_attention",
            format!("Q, K and the feature map sharing dim {}", map.dim()),
            format!("Q cols {}, K cols {}", q.cols(), k.cols()),
        ));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "kernel_linear_attention",
            format!("V with {} rows", k.rows()),
            v.rows(),
        ));
    }
    ensure_unit_rows(q, "kernel_linear_attention (queries)")?;
    ensure_unit_rows(k, "kernel_linear_attention (keys)")?;

    let phi_k = features_counted(k, map, ledger)?;
    let phi_q = features_counted(q, map, ledger)?;
    let f = map.num_features();
    let dv = v.cols();
    let width = dv + 1;

    let mut kv = vec![0.0f32; f * width];
    for (pk, vrow) in phi_k.row_iter().zip(v.row_iter()) {
        for (j, &p) in pk.iter().enumerate() {
            let acc = &mut kv[j * width..(j + 1) * width];
            for (a, &x) in acc.iter_mut().zip(vrow) {
                *a += p * x;
            }
            acc[dv] += p;
        }
    }
    let (nk, f64_, dv64, w64) = (k.rows() as u64, f as u64, dv as u64, width as u64);
    ledger.mul += nk * f64_ * dv64;
    ledger.add += nk * f64_ * w64;

    let mut out = Vec::with_capacity(q.rows() * dv);
    let mut num = vec![0.0f32; width];
    for (t, pq) in phi_q.row_iter().enumerate() {
        num.fill(0.0);
        for (j, &p) in pq.iter().enumerate() {
            for (a, &x) in num.iter_mut().zip(&kv[j * width..(j + 1) * width]) {
                *a += p * x;
            }
        }
        let den = num[dv];
        if !(den.abs() >= DENOMINATOR_FLOOR) {
            return Err(Error::Degenerate {
                op: "kernel_linear_attention",
                row: t,
                detail: format!("normalizer {den:e} below {DENOMINATOR_FLOOR:e}"),
            });
        }
        for a in num.iter_mut() {
            *a /= den;
        }
        out.extend_from_slice(&num[..dv]);
    }
    let nq = q.rows() as u64;
    ledger.mul += nq * f64_ * w64;
    ledger.add += nq * f64_ * w64;
    ledger.div += nq * w64;

    let out = RealMatrix::from_raw(q.rows(), dv, out);
    out.ensure_finite("kernel_linear_attention")?;
    Ok(out)
}
