//! Kernelized hash functions learned from attention scores.
//!
//! A hash function set anchors a Gaussian RBF embedding on `m` support
//! queries, `g(x)_j = κ(s_j, x) - μ_j`, centered so each column has zero mean
//! over the fitting set. Bit `r` of a code is `sign(g(x)·a_r)`. The weight
//! columns `a_r` are learned one at a time against the residual of a target
//! affinity matrix built from the attention scores themselves.

mod format;
mod labels;
mod learn;

use crate::attention::BinaryCodeMatrix;
use crate::cost::OpLedger;
use crate::error::{Error, Result};
use crate::numerics::{matmul, RealMatrix, SeededRng};

pub use format::{HASH_FILE_MAGIC, HASH_FILE_VERSION};
pub use labels::{build_pairwise_labels, build_pairwise_labels_with, AffinityLabels, ConflictRule};
pub use learn::{
    learn_bit, learn_hash_functions, reconstruction_error, refresh_schedule, surrogate_gradient, surrogate_objective,
    HashLearnConfig, HashLearning, LearnedBit, ResidualTarget, Surrogate,
};

/// Upper bound on rows used by the median bandwidth heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 256;

/// Gaussian RBF kernel `exp(-‖x-y‖² / 2σ²)`.
pub fn rbf_kernel(x: &[f32], y: &[f32], sigma: f32) -> Result<f32> {
    if x.len() != y.len() {
        return Err(Error::shape("rbf_kernel", x.len(), y.len()));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", format!("must be finite and > 0, got {sigma}")));
    }
    Ok(rbf(x, y, sigma))
}

#[inline]
fn rbf(x: &[f32], y: &[f32], sigma: f32) -> f32 {
    let d2: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    let s = sigma as f64;
    (-d2 / (2.0 * s * s)).exp() as f32
}

/// How the kernel bandwidth is chosen at fit time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode {
    /// Median pairwise distance over at most [`MEDIAN_SUBSAMPLE`] rows.
    Median,
    Fixed(f32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashFunctionSet {
    support: RealMatrix,
    mu: Vec<f32>,
    weights: Option<RealMatrix>,
    sigma: f32,
}

impl HashFunctionSet {
    pub fn from_parts(support: RealMatrix, mu: Vec<f32>, weights: Option<RealMatrix>, sigma: f32) -> Result<Self> {
        if support.rows() == 0 || support.cols() == 0 {
            return Err(Error::param("support_samples", "need at least one support row"));
        }
        if mu.len() != support.rows() {
            return Err(Error::shape(
                "HashFunctionSet",
                format!("{} offsets", support.rows()),
                mu.len(),
            ));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        let set = HashFunctionSet {
            support,
            mu,
            weights: None,
            sigma,
        };
        match weights {
            Some(a) => set.with_weights(a),
            None => Ok(set),
        }
    }

    pub fn support_samples(&self) -> &RealMatrix {
        &self.support
    }

    pub fn mu(&self) -> &[f32] {
        &self.mu
    }

    pub fn weights(&self) -> Option<&RealMatrix> {
        self.weights.as_ref()
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    /// Number of support samples.
    pub fn m(&self) -> usize {
        self.support.rows()
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }

    pub fn bits(&self) -> Option<usize> {
        self.weights.as_ref().map(RealMatrix::cols)
    }

    pub fn with_weights(mut self, a: RealMatrix) -> Result<Self> {
        if a.rows() != self.m() || a.cols() == 0 {
            return Err(Error::shape(
                "HashFunctionSet::with_weights",
                format!("{} x b (b >= 1)", self.m()),
                format!("{}x{}", a.rows(), a.cols()),
            ));
        }
        self.weights = Some(a);
        Ok(self)
    }

    /// Random `A ~ N(0, 1/m)` on the learned kernel embedding; the
    /// kernelized-LSH style baseline for learned weights.
    pub fn with_random_weights(self, bits: usize, rng: &mut SeededRng) -> Result<Self> {
        let std = 1.0 / (self.m() as f32).sqrt();
        let a = RealMatrix::random_normal(self.m(), bits, 0.0, std, rng);
        self.with_weights(a)
    }

    /// `g(x)`: one row per input, `κ(s_j, x_i) - μ_j` per column.
    pub fn embed(&self, x: &RealMatrix) -> Result<RealMatrix> {
        if x.cols() != self.dim() {
            return Err(Error::shape("embed", format!("{} columns", self.dim()), x.cols()));
        }
        let m = self.m();
        let mut data = Vec::with_capacity(x.rows() * m);
        for row in x.row_iter() {
            for (j, s) in self.support.row_iter().enumerate() {
                data.push(rbf(s, row, self.sigma) - self.mu[j]);
            }
        }
        Ok(RealMatrix::from_raw(x.rows(), m, data))
    }

    /// `sign(g(x)·A)` with `sign(0) = +1`.
    pub fn hash(&self, x: &RealMatrix) -> Result<BinaryCodeMatrix> {
        let a = self
            .weights
            .as_ref()
            .ok_or_else(|| Error::State("hash weights A are not initialized".into()))?;
        let g = self.embed(x)?;
        let u = matmul(&g, a, &mut OpLedger::default())?;
        Ok(BinaryCodeMatrix::from_signs(&u))
    }
}

/// Samples `m` support queries without replacement, picks the bandwidth and
/// computes the centering offsets over the full query set. Weights are left
/// uninitialized.
pub fn fit_embedding(queries: &RealMatrix, m: usize, sigma: SigmaMode, rng: &mut SeededRng) -> Result<HashFunctionSet> {
    let n = queries.rows();
    if m == 0 {
        return Err(Error::param("m", "must be >= 1"));
    }
    if m > n {
        return Err(Error::param(
            "m",
            format!("{m} support samples requested from {n} queries"),
        ));
    }
    let sigma = match sigma {
        SigmaMode::Fixed(s) => s,
        SigmaMode::Median => median_bandwidth(queries, rng),
    };
    let support = queries.select_rows(&rng.sample_indices(n, m));
    let mu = support
        .row_iter()
        .map(|s| {
            let total: f64 = queries.row_iter().map(|q| rbf(s, q, sigma) as f64).sum();
            (total / n as f64) as f32
        })
        .collect();
    HashFunctionSet::from_parts(support, mu, None, sigma)
}

pub fn embed(functions: &HashFunctionSet, x: &RealMatrix) -> Result<RealMatrix> {
    functions.embed(x)
}

pub fn hash(functions: &HashFunctionSet, x: &RealMatrix) -> Result<BinaryCodeMatrix> {
    functions.hash(x)
}

/// Median pairwise Euclidean distance; falls back to 1 when every sampled
/// row coincides (or there is only one row).
fn median_bandwidth(queries: &RealMatrix, rng: &mut SeededRng) -> f32 {
    let n = queries.rows();
    let rows: Vec<usize> = if n > MEDIAN_SUBSAMPLE {
        let mut idx = rng.sample_indices(n, MEDIAN_SUBSAMPLE);
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let d2: f64 = queries
                .row(i)
                .iter()
                .zip(queries.row(j))
                .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if median > 1e-12 {
        median as f32
    } else {
        1.0
    }
}

/// Random-hyperplane codes `sign(x·R)`, `R ~ N(0, 1)`, on raw features.
pub fn lsh_codes(x: &RealMatrix, bits: usize, rng: &mut SeededRng) -> Result<BinaryCodeMatrix> {
    if bits == 0 {
        return Err(Error::param("bits", "must be >= 1"));
    }
    let r = RealMatrix::random_normal(x.cols(), bits, 0.0, 1.0, rng);
    let u = matmul(x, &r, &mut OpLedger::default())?;
    Ok(BinaryCodeMatrix::from_signs(&u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{row_l2_normalize, DEFAULT_NORM_EPS};

    fn unit_rows(n: usize, d: usize, rng: &mut SeededRng) -> RealMatrix {
        let x = RealMatrix::random_normal(n, d, 0.0, 1.0, rng);
        row_l2_normalize(&x, DEFAULT_NORM_EPS).unwrap().matrix
    }

    #[test]
    fn rbf_examples() {
        let x = [0.3f32, -1.2, 0.7];
        assert_eq!(rbf_kernel(&x, &x, 0.5).unwrap(), 1.0);
        // ‖x-y‖² = 2σ² with σ = 1.5
        let sigma = 1.5f32;
        let y = [0.3f32 + (2.0f32).sqrt() * sigma, -1.2, 0.7];
        let v = rbf_kernel(&x, &y, sigma).unwrap();
        assert!((v as f64 - (-1.0f64).exp()).abs() < 1e-6);
        let far = [100.0f32, 100.0, 100.0];
        assert!(rbf_kernel(&x, &far, 1.0).unwrap() < 1e-6);
        assert!(rbf_kernel(&x, &y, 0.0).is_err());
        assert!(rbf_kernel(&x, &y, -1.0).is_err());
        assert!(rbf_kernel(&x, &[1.0], 1.0).is_err());
    }

    #[test]
    fn full_sampling_is_a_permutation() {
        let mut rng = SeededRng::new(51);
        let q = unit_rows(12, 4, &mut rng);
        let hfs = fit_embedding(&q, 12, SigmaMode::Median, &mut rng).unwrap();
        let mut seen = [false; 12];
        for s in hfs.support_samples().row_iter() {
            let i = q
                .row_iter()
                .position(|r| r == s)
                .expect("support row comes from queries");
            assert!(!seen[i], "row {i} sampled twice");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn constant_queries_embed_to_zero() {
        let q = RealMatrix::from_rows(&[[0.6f32, 0.8]; 9]).unwrap();
        let mut rng = SeededRng::new(52);
        let hfs = fit_embedding(&q, 4, SigmaMode::Median, &mut rng).unwrap();
        assert_eq!(hfs.sigma(), 1.0);
        let g = hfs.embed(&q).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_columns() {
        let mut rng = SeededRng::new(53);
        let q = unit_rows(32, 6, &mut rng);
        let hfs = fit_embedding(&q, 8, SigmaMode::Median, &mut rng).unwrap();
        let g = hfs.embed(&q).unwrap();
        for j in 0..8 {
            // independent recomputation of the column mean
            let mean: f64 = (0..32).map(|i| g.get(i, j) as f64).sum::<f64>() / 32.0;
            assert!(mean.abs() < 1e-6, "column {j} mean {mean}");
            let direct: f64 = (0..32)
                .map(|i| {
                    let d2: f64 = hfs
                        .support_samples()
                        .row(j)
                        .iter()
                        .zip(q.row(i))
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum();
                    (-d2 / (2.0 * (hfs.sigma() as f64).powi(2))).exp()
                })
                .sum::<f64>()
                / 32.0;
            assert!((direct - hfs.mu()[j] as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn support_row_embeds_to_one_minus_mu() {
        let mut rng = SeededRng::new(54);
        let q = unit_rows(10, 3, &mut rng);
        let hfs = fit_embedding(&q, 5, SigmaMode::Fixed(0.8), &mut rng).unwrap();
        let g = hfs.embed(hfs.support_samples()).unwrap();
        for j in 0..5 {
            assert_eq!(g.get(j, j), 1.0 - hfs.mu()[j]);
        }
    }

    #[test]
    fn batch_embed_equals_rowwise() {
        let mut rng = SeededRng::new(55);
        let q = unit_rows(10, 3, &mut rng);
        let hfs = fit_embedding(&q, 4, SigmaMode::Median, &mut rng).unwrap();
        let batch = hfs.embed(&q).unwrap();
        let mut rows = Vec::new();
        for i in 0..10 {
            let single = RealMatrix::from_rows(&[q.row(i)]).unwrap();
            rows.extend_from_slice(hfs.embed(&single).unwrap().data());
        }
        assert_eq!(batch.data(), rows.as_slice());
    }

    #[test]
    fn fit_errors() {
        let mut rng = SeededRng::new(56);
        let q = unit_rows(4, 3, &mut rng);
        assert!(matches!(
            fit_embedding(&q, 5, SigmaMode::Median, &mut rng),
            Err(Error::Parameter { name: "m", .. })
        ));
        assert!(fit_embedding(&q, 0, SigmaMode::Median, &mut rng).is_err());
        assert!(fit_embedding(&q, 2, SigmaMode::Fixed(0.0), &mut rng).is_err());
        let hfs = fit_embedding(&q, 2, SigmaMode::Median, &mut rng).unwrap();
        assert!(hfs.embed(&RealMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn hash_requires_weights() {
        let mut rng = SeededRng::new(57);
        let q = unit_rows(6, 3, &mut rng);
        let hfs = fit_embedding(&q, 3, SigmaMode::Median, &mut rng).unwrap();
        assert!(matches!(hfs.hash(&q), Err(Error::State(_))));
    }

    #[test]
    fn single_bit_positive_weights() {
        let support = RealMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0]]).unwrap();
        let a = RealMatrix::from_rows(&[[0.5f32], [2.0]]).unwrap();
        // μ = 0 keeps every embedding entry positive
        let hfs = HashFunctionSet::from_parts(support, vec![0.0, 0.0], Some(a), 1.0).unwrap();
        let x = RealMatrix::from_rows(&[[0.6f32, 0.8]]).unwrap();
        assert_eq!(hfs.hash(&x).unwrap().row(0), &[1]);
    }

    #[test]
    fn negated_weights_negate_codes() {
        let mut rng = SeededRng::new(58);
        let q = unit_rows(16, 4, &mut rng);
        let hfs = fit_embedding(&q, 4, SigmaMode::Median, &mut rng)
            .unwrap()
            .with_random_weights(8, &mut rng)
            .unwrap();
        let a = hfs.weights().unwrap().clone();
        let neg = RealMatrix::new(a.rows(), a.cols(), a.data().iter().map(|v| -v).collect()).unwrap();
        let flipped = hfs.clone().with_weights(neg).unwrap();
        let c1 = hfs.hash(&q).unwrap();
        let c2 = flipped.hash(&q).unwrap();
        let u = matmul(&hfs.embed(&q).unwrap(), &a, &mut OpLedger::default()).unwrap();
        for (i, (&x, &y)) in c1.codes().iter().zip(c2.codes()).enumerate() {
            if u.data()[i] != 0.0 {
                assert_eq!(x, -y);
            }
        }
    }

    #[test]
    fn hash_matches_scalar_oracle() {
        let mut rng = SeededRng::new(59);
        let q = unit_rows(16, 5, &mut rng);
        let hfs = fit_embedding(&q, 4, SigmaMode::Median, &mut rng)
            .unwrap()
            .with_random_weights(8, &mut rng)
            .unwrap();
        let codes = hfs.hash(&q).unwrap();
        let a = hfs.weights().unwrap();
        let s = hfs.sigma() as f64;
        for i in 0..16 {
            for r in 0..8 {
                let mut acc = 0.0f64;
                for j in 0..4 {
                    let d2: f64 = hfs
                        .support_samples()
                        .row(j)
                        .iter()
                        .zip(q.row(i))
                        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                        .sum();
                    let kappa = (-d2 / (2.0 * s * s)).exp();
                    acc += (kappa - hfs.mu()[j] as f64) * a.get(j, r) as f64;
                }
                let expected = if acc >= 0.0 { 1 } else { -1 };
                if acc.abs() > 1e-5 {
                    assert_eq!(codes.get(i, r), expected, "token {i} bit {r}");
                }
            }
        }
    }

    #[test]
    fn lsh_codes_shape() {
        let mut rng = SeededRng::new(60);
        let q = unit_rows(7, 4, &mut rng);
        let c = lsh_codes(&q, 12, &mut rng).unwrap();
        assert_eq!((c.n(), c.bits()), (7, 12));
        assert!(lsh_codes(&q, 0, &mut rng).is_err());
    }
}
