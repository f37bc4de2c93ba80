//! Dense row-major `f32` matrices, seeded randomness, and the numerically
//! stable primitives shared by every attention kernel.
//!
//! Every arithmetic operation that an attention kernel performs is tallied in
//! an [`OpLedger`] passed in by the caller. Nothing here holds global state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cost::OpLedger;
use crate::error::{Error, Result};

/// Degenerate-row threshold used by [`row_l2_normalize`] when callers have no
/// better value.
pub const DEFAULT_NORM_EPS: f32 = 1e-12;

/// Dense matrix of finite 32-bit reals stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl RealMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "RealMatrix::new",
                format!("{} entries ({rows}x{cols})", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        let m = RealMatrix { rows, cols, data };
        m.ensure_finite("RealMatrix::new")?;
        Ok(m)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        RealMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "RealMatrix::from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Entries drawn i.i.d. from `normal(mean, std)`.
    pub fn random_normal(rows: usize, cols: usize, mean: f32, std: f32, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal(mean, std)).collect();
        RealMatrix { rows, cols, data }
    }

    /// Entries drawn i.i.d. from `uniform[lo, hi)`.
    pub fn random_uniform(rows: usize, cols: usize, lo: f32, hi: f32, rng: &mut SeededRng) -> Self {
        let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
        RealMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> RealMatrix {
        let mut out = RealMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Copies the rows named by `order`, in that order.
    pub fn select_rows(&self, order: &[usize]) -> RealMatrix {
        let mut data = Vec::with_capacity(order.len() * self.cols);
        for &r in order {
            data.extend_from_slice(self.row(r));
        }
        RealMatrix {
            rows: order.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &RealMatrix) -> f32 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        RealMatrix { rows, cols, data }
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }
}

/// Reproducible random stream: ChaCha8 keyed by a 64-bit seed.
///
/// `substream` derives independent, equally reproducible streams from the same
/// seed, so separate pipeline stages never share draws.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn substream(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        SeededRng { seed: self.seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        Self::ALGORITHM
    }

    pub fn normal(&mut self, mean: f32, std: f32) -> f32 {
        // std is validated by callers; a non-positive std degenerates to the mean
        match Normal::new(mean as f64, std as f64) {
            Ok(d) => d.sample(&mut self.inner) as f32,
            Err(_) => mean,
        }
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        let u: f64 = self.inner.random();
        (lo as f64 + (hi as f64 - lo as f64) * u) as f32
    }

    pub fn coin(&mut self) -> bool {
        self.inner.random()
    }

    /// `amount` distinct indices from `0..length`, in draw order.
    pub fn sample_indices(&mut self, length: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, length, amount).into_vec()
    }
}

/// Dense product `a · b`.
///
/// Each output entry is a sequential `f32` dot product: `a.cols`
/// multiplications and `a.cols - 1` additions.
pub fn matmul(a: &RealMatrix, b: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("lhs cols == rhs rows ({})", a.cols),
            format!("{}x{} . {}x{}", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (n, k, p) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0f32; n * p];
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..p {
            let mut acc = 0.0f32;
            for (t, &av) in arow.iter().enumerate() {
                let prod = av * b.data[t * p + j];
                acc = if t == 0 { prod } else { acc + prod };
            }
            out[i * p + j] = acc;
        }
    }
    let k = k as u64;
    ledger.mul += n as u64 * k * p as u64;
    ledger.add += n as u64 * k.saturating_sub(1) * p as u64;
    let out = RealMatrix::from_raw(n, p, out);
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Dense product `a · bᵀ` without materializing the transpose.
pub fn matmul_transpose_b(a: &RealMatrix, b: &RealMatrix, ledger: &mut OpLedger) -> Result<RealMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_transpose_b",
            format!("equal column counts ({})", a.cols),
            format!("{}x{} . ({}x{})^T", a.rows, a.cols, b.rows, b.cols),
        ));
    }
    let (n, k, p) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0f32; n * p];
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..p {
            let brow = b.row(j);
            let mut acc = 0.0f32;
            for t in 0..k {
                let prod = arow[t] * brow[t];
                acc = if t == 0 { prod } else { acc + prod };
            }
            out[i * p + j] = acc;
        }
    }
    let k = k as u64;
    ledger.mul += n as u64 * k * p as u64;
    ledger.add += n as u64 * k.saturating_sub(1) * p as u64;
    let out = RealMatrix::from_raw(n, p, out);
    out.ensure_finite("matmul_transpose_b")?;
    Ok(out)
}

/// Output of [`row_l2_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub matrix: RealMatrix,
    /// Rows whose norm fell below `eps`; these are passed through unchanged.
    pub degenerate_rows: Vec<usize>,
}

pub fn row_l2_normalize(m: &RealMatrix, eps: f32) -> Result<Normalized> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", format!("must be > 0, got {eps}")));
    }
    let mut out = m.clone();
    let mut degenerate_rows = Vec::new();
    let cols = m.cols;
    for r in 0..m.rows {
        let row = &mut out.data[r * cols..(r + 1) * cols];
        let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm < eps as f64 {
            degenerate_rows.push(r);
            continue;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Ok(Normalized {
        matrix: out,
        degenerate_rows,
    })
}

/// Row-wise softmax of `scores / temperature` with per-row max subtraction.
pub fn stable_softmax_rows(scores: &RealMatrix, temperature: f32) -> Result<RealMatrix> {
    let mut scratch = OpLedger::default();
    softmax_rows_counted(scores, temperature, &mut scratch)
}

/// Instrumented softmax shared by [`stable_softmax_rows`] and the attention
/// kernels.
///
/// Per row of length `n`: one reciprocal of the temperature is shared by the
/// whole matrix (1 division), then `n` scaling multiplications, `n` max
/// subtractions, `n` exponentials, `n - 1` additions for the normalizer and `n`
/// divisions.
pub(crate) fn softmax_rows_counted(scores: &RealMatrix, temperature: f32, ledger: &mut OpLedger) -> Result<RealMatrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::param(
            "temperature",
            format!("must be finite and > 0, got {temperature}"),
        ));
    }
    let inv_tau = 1.0 / temperature;
    ledger.div += 1;

    let cols = scores.cols;
    let mut out = scores.clone();
    for r in 0..scores.rows {
        let row = &mut out.data[r * cols..(r + 1) * cols];
        if row.is_empty() {
            continue;
        }
        for v in row.iter_mut() {
            *v *= inv_tau;
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f64;
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - max).exp();
            sum = if i == 0 { *v as f64 } else { sum + *v as f64 };
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / sum) as f32;
        }
        let n = row.len() as u64;
        ledger.mul += n;
        ledger.add += n + (n - 1);
        ledger.exp += n;
        ledger.div += n;
    }
    out.ensure_finite("stable_softmax_rows")?;
    Ok(out)
}
