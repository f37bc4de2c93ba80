use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, SeededRng};

/// `n × bits` matrix of ±1 codes, one code per row.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryCodeMatrix {
    n: usize,
    bits: usize,
    codes: Vec<i8>,
}

#[inline]
pub(crate) fn sign(x: f32) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

impl BinaryCodeMatrix {
    pub fn new(n: usize, bits: usize, codes: Vec<i8>) -> Result<Self> {
        if codes.len() != n * bits {
            return Err(Error::shape("BinaryCodeMatrix::new", n * bits, codes.len()));
        }
        if let Some(pos) = codes.iter().position(|&c| c != 1 && c != -1) {
            return Err(Error::Data(format!(
                "code entry {pos} is {}, expected -1 or +1",
                codes[pos]
            )));
        }
        Ok(BinaryCodeMatrix { n, bits, codes })
    }

    pub fn from_rows<R: AsRef<[i8]>>(rows: &[R]) -> Result<Self> {
        let bits = rows.first().map_or(0, |r| r.as_ref().len());
        let mut codes = Vec::with_capacity(rows.len() * bits);
        for r in rows {
            if r.as_ref().len() != bits {
                return Err(Error::shape("BinaryCodeMatrix::from_rows", bits, r.as_ref().len()));
            }
            codes.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), bits, codes)
    }

    /// Elementwise sign, with `sign(0) = +1`.
    pub fn from_signs(m: &RealMatrix) -> Self {
        BinaryCodeMatrix {
            n: m.rows(),
            bits: m.cols(),
            codes: m.data().iter().map(|&x| sign(x)).collect(),
        }
    }

    /// Uniform random codes.
    pub fn random(n: usize, bits: usize, rng: &mut SeededRng) -> Self {
        let codes = (0..n * bits).map(|_| if rng.coin() { 1 } else { -1 }).collect();
        BinaryCodeMatrix { n, bits, codes }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn codes(&self) -> &[i8] {
        &self.codes
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[i8] {
        &self.codes[i * self.bits..(i + 1) * self.bits]
    }

    #[inline]
    pub fn get(&self, i: usize, r: usize) -> i8 {
        self.codes[i * self.bits + r]
    }

    /// Bit `r` of every code, as a column.
    pub fn column(&self, r: usize) -> Vec<i8> {
        (0..self.n).map(|i| self.get(i, r)).collect()
    }

    pub fn select_rows(&self, order: &[usize]) -> BinaryCodeMatrix {
        let mut codes = Vec::with_capacity(order.len() * self.bits);
        for &i in order {
            codes.extend_from_slice(self.row(i));
        }
        BinaryCodeMatrix {
            n: order.len(),
            bits: self.bits,
            codes,
        }
    }

    /// Codes whose bit `r` is column `r` of `columns`.
    pub(crate) fn from_columns(n: usize, columns: &[Vec<i8>]) -> Self {
        let bits = columns.len();
        let mut codes = vec![0i8; n * bits];
        for (r, col) in columns.iter().enumerate() {
            for (i, &c) in col.iter().enumerate() {
                codes[i * bits + r] = c;
            }
        }
        BinaryCodeMatrix { n, bits, codes }
    }
}

fn check_widths(op: &'static str, a: &[i8], b: &[i8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(
            op,
            format!("{} bits", a.len()),
            format!("{} bits", b.len()),
        ));
    }
    Ok(())
}

/// Number of positions where two codes disagree.
pub fn hamming_distance(a: &[i8], b: &[i8]) -> Result<u32> {
    check_widths("hamming_distance", a, b)?;
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as u32)
}

/// Inner product of two ±1 codes, computed directly. It always equals
/// `bits - 2 · hamming_distance`.
pub fn hamming_affinity(a: &[i8], b: &[i8]) -> Result<i32> {
    check_widths("hamming_affinity", a, b)?;
    Ok(a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum())
}

/// Per-row sign/scale quantization `u ≈ α·sign(u)` with `α = mean |u|`,
/// the minimizer of `‖u - α û‖` over scales and sign patterns.
pub fn binarize_sign_scale(u: &RealMatrix) -> Result<(BinaryCodeMatrix, Vec<f32>)> {
    if u.rows() == 0 || u.cols() == 0 {
        return Err(Error::param("u", "must be nonempty"));
    }
    let codes = BinaryCodeMatrix::from_signs(u);
    let scales = u
        .row_iter()
        .map(|row| (row.iter().map(|&x| x.abs() as f64).sum::<f64>() / row.len() as f64) as f32)
        .collect();
    Ok((codes, scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let a = [1i8; 16];
        let b = [-1i8; 16];
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0);
        assert_eq!(hamming_distance(&a, &b).unwrap(), 16);
        assert_eq!(hamming_distance(&[1, 1, -1, 1], &[1, -1, -1, 1]).unwrap(), 1);
        assert!(hamming_distance(&[1, 1], &[1]).is_err());
    }

    #[test]
    fn affinity_examples() {
        let a = [1i8; 16];
        assert_eq!(hamming_affinity(&a, &a).unwrap(), 16);
        assert_eq!(hamming_affinity(&[1, 1, -1, 1], &[1, -1, -1, 1]).unwrap(), 2);
        assert!(matches!(hamming_affinity(&[1], &[1, 1]), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_non_binary_entries() {
        assert!(BinaryCodeMatrix::new(1, 3, vec![1, 0, -1]).is_err());
        assert!(BinaryCodeMatrix::new(1, 3, vec![1, 1]).is_err());
        assert!(BinaryCodeMatrix::from_rows(&[vec![1i8, -1], vec![1]]).is_err());
    }

    #[test]
    fn sign_scale_examples() {
        let u = RealMatrix::from_rows(&[[0.5f32, -1.5], [0.0, -0.0]]).unwrap();
        let (codes, scales) = binarize_sign_scale(&u).unwrap();
        assert_eq!(codes.row(0), &[1, -1]);
        assert_eq!(scales[0], 1.0);
        assert_eq!(codes.row(1), &[1, 1]);

        let u = RealMatrix::from_rows(&[[0.75f32, -0.75, -0.75, 0.75]]).unwrap();
        let (codes, scales) = binarize_sign_scale(&u).unwrap();
        let recon: Vec<f32> = codes.row(0).iter().map(|&c| scales[0] * c as f32).collect();
        assert_eq!(recon, u.row(0));

        assert!(binarize_sign_scale(&RealMatrix::zeros(0, 3)).is_err());
    }

    #[test]
    fn sign_scale_is_optimal_over_all_patterns() {
        let mut rng = SeededRng::new(31);
        for _ in 0..20 {
            let u = RealMatrix::random_normal(1, 6, 0.0, 1.0, &mut rng);
            let row: Vec<f64> = u.row(0).iter().map(|&x| x as f64).collect();
            let (codes, scales) = binarize_sign_scale(&u).unwrap();
            let err = |code: &[f64], alpha: f64| -> f64 {
                row.iter().zip(code).map(|(x, c)| (x - alpha * c).powi(2)).sum::<f64>()
            };
            let ours: Vec<f64> = codes.row(0).iter().map(|&c| c as f64).collect();
            let ours_err = err(&ours, scales[0] as f64);
            let mut best = f64::INFINITY;
            for mask in 0u32..64 {
                let code: Vec<f64> = (0..6).map(|b| if mask >> b & 1 == 1 { 1.0 } else { -1.0 }).collect();
                // optimal scale for a fixed pattern, clamped to the nonnegative half-line
                let alpha = (row.iter().zip(&code).map(|(x, c)| x * c).sum::<f64>() / 6.0).max(0.0);
                best = best.min(err(&code, alpha));
            }
            assert!(ours_err <= best + 1e-6, "{ours_err} > {best}");
        }
    }

    proptest! {
        #[test]
        fn affinity_identity_and_parity(seed in any::<u64>(), bits in 1usize..=64) {
            let mut rng = SeededRng::new(seed);
            let c = BinaryCodeMatrix::random(2, bits, &mut rng);
            let aff = hamming_affinity(c.row(0), c.row(1)).unwrap();
            let dist = hamming_distance(c.row(0), c.row(1)).unwrap();
            prop_assert_eq!(aff, bits as i32 - 2 * dist as i32);
            prop_assert!(aff.abs() <= bits as i32);
            prop_assert_eq!((aff - bits as i32).rem_euclid(2), 0);
        }
    }
}
