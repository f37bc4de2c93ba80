use crate::cost::OpLedger;
use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transpose_b, softmax_rows_counted, RealMatrix};

/// Exact attention: each output row is `Σᵢ softmax(q·kᵢ/τ) vᵢ`.
///
/// Quadratic in sequence length; see the cost module for the exact counts.
pub fn softmax_attention(
    q: &RealMatrix,
    k: &RealMatrix,
    v: &RealMatrix,
    temperature: f32,
    ledger: &mut OpLedger,
) -> Result<RealMatrix> {
    if q.cols() != k.cols() {
        return Err(Error::shape(
            "softmax_attention",
            format!("K with {} cols", q.cols()),
            k.cols(),
        ));
    }
    if k.rows() != v.rows() {
        return Err(Error::shape(
            "softmax_attention",
            format!("V with {} rows", k.rows()),
            v.rows(),
        ));
    }
    let scores = matmul_transpose_b(q, k, ledger)?;
    let weights = softmax_rows_counted(&scores, temperature, ledger)?;
    matmul(&weights, v, ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{row_l2_normalize, SeededRng, DEFAULT_NORM_EPS};
    use proptest::prelude::*;

    /// Direct scalar evaluation of the weighted sum, in f64.
    fn oracle(q: &RealMatrix, k: &RealMatrix, v: &RealMatrix, tau: f64) -> Vec<Vec<f64>> {
        (0..q.rows())
            .map(|t| {
                let logits: Vec<f64> = (0..k.rows())
                    .map(|i| {
                        (0..q.cols())
                            .map(|d| q.get(t, d) as f64 * k.get(i, d) as f64)
                            .sum::<f64>()
                            / tau
                    })
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                (0..v.cols())
                    .map(|d| (0..k.rows()).map(|i| logits[i].exp() / z * v.get(i, d) as f64).sum())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_token_returns_its_value() {
        let mut rng = SeededRng::new(11);
        let q = RealMatrix::random_normal(1, 4, 0.0, 3.0, &mut rng);
        let k = RealMatrix::random_normal(1, 4, 0.0, 1.0, &mut rng);
        let v = RealMatrix::random_normal(1, 4, 0.0, 1.0, &mut rng);
        let out = softmax_attention(&q, &k, &v, 0.7, &mut OpLedger::default()).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn identical_keys_average_values() {
        let mut rng = SeededRng::new(12);
        let q = RealMatrix::random_normal(6, 3, 0.0, 1.0, &mut rng);
        let key = [0.2f32, -0.5, 0.9];
        let k = RealMatrix::from_rows(&[key; 6]).unwrap();
        let v = RealMatrix::random_normal(6, 5, 0.0, 1.0, &mut rng);
        let out = softmax_attention(&q, &k, &v, 1.0, &mut OpLedger::default()).unwrap();
        for d in 0..5 {
            let mean = (0..6).map(|i| v.get(i, d)).sum::<f32>() / 6.0;
            for t in 0..6 {
                assert!((out.get(t, d) - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = SeededRng::new(13);
        let q = RealMatrix::random_normal(3, 2, 0.0, 1.0, &mut rng);
        let k = RealMatrix::random_normal(3, 2, 0.0, 1.0, &mut rng);
        let v = RealMatrix::random_normal(3, 2, 0.0, 1.0, &mut rng);
        let out = softmax_attention(&q, &k, &v, 0.8, &mut OpLedger::default()).unwrap();
        let expected = oracle(&q, &k, &v, 0.8);
        for (t, row) in expected.iter().enumerate() {
            for (d, &e) in row.iter().enumerate() {
                assert!((out.get(t, d) as f64 - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let a = RealMatrix::zeros(3, 2);
        let b = RealMatrix::zeros(3, 3);
        let c = RealMatrix::zeros(4, 2);
        assert!(softmax_attention(&a, &b, &a, 1.0, &mut OpLedger::default()).is_err());
        assert!(softmax_attention(&a, &a, &c, 1.0, &mut OpLedger::default()).is_err());
    }

    proptest! {
        #[test]
        fn output_rows_are_convex_combinations(seed in any::<u64>(), n in 1usize..24, tau in 0.05f32..4.0) {
            let mut rng = SeededRng::new(seed);
            let x = RealMatrix::random_normal(n, 4, 0.0, 1.0, &mut rng);
            let q = row_l2_normalize(&x, DEFAULT_NORM_EPS).unwrap().matrix;
            let v = RealMatrix::random_normal(n, 3, 0.0, 2.0, &mut rng);
            let out = softmax_attention(&q, &q, &v, tau, &mut OpLedger::default()).unwrap();
            for d in 0..3 {
                let lo = (0..n).map(|i| v.get(i, d)).fold(f32::INFINITY, f32::min);
                let hi = (0..n).map(|i| v.get(i, d)).fold(f32::NEG_INFINITY, f32::max);
                for t in 0..n {
                    prop_assert!(out.get(t, d) >= lo - 1e-6 && out.get(t, d) <= hi + 1e-6);
                }
            }
        }
    }
}
