use super::labels::{build_pairwise_labels_with, AffinityLabels, ConflictRule};
use super::{fit_embedding, HashFunctionSet, SigmaMode};
use crate::attention::BinaryCodeMatrix;
use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, SeededRng};

const SYMMETRY_TOLERANCE: f32 = 1e-5;

/// Remaining affinity target `Ŷ_r = bY - Σ_{t≤r} h_t h_tᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTarget {
    y_hat: RealMatrix,
    bit_index: usize,
}

impl ResidualTarget {
    /// `Ŷ_0 = b·Y`.
    pub fn initial(labels: &AffinityLabels, bits: usize) -> Self {
        let b = bits as f32;
        let data = labels.y().iter().map(|&v| b * v as f32).collect();
        ResidualTarget {
            y_hat: RealMatrix::from_raw(labels.n(), labels.n(), data),
            bit_index: 0,
        }
    }

    pub fn new(y_hat: RealMatrix, bit_index: usize) -> Result<Self> {
        ensure_symmetric(&y_hat)?;
        Ok(ResidualTarget { y_hat, bit_index })
    }

    pub fn y_hat(&self) -> &RealMatrix {
        &self.y_hat
    }

    pub fn bit_index(&self) -> usize {
        self.bit_index
    }

    pub fn n(&self) -> usize {
        self.y_hat.rows()
    }

    /// `hᵀŶh`.
    pub fn objective(&self, h: &[i8]) -> f64 {
        quadratic_form(&self.y_hat, |i| h[i] as f64)
    }

    /// `‖Ŷ‖_F²`, the reconstruction error of the bits learned so far.
    pub fn squared_norm(&self) -> f64 {
        self.y_hat.data().iter().map(|&v| (v as f64).powi(2)).sum()
    }

    /// `Ŷ ← Ŷ - hhᵀ` and advance the bit index.
    pub fn subtract_bit(&mut self, h: &[i8]) {
        let n = self.n();
        let data = self.y_hat.data_mut();
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] -= (h[i] * h[j]) as f32;
            }
        }
        self.bit_index += 1;
    }
}

fn ensure_symmetric(y: &RealMatrix) -> Result<()> {
    if y.rows() != y.cols() {
        return Err(Error::shape(
            "residual target",
            "square matrix",
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    let n = y.rows();
    for i in 0..n {
        for j in i + 1..n {
            let gap = (y.get(i, j) - y.get(j, i)).abs();
            if !(gap <= SYMMETRY_TOLERANCE) {
                return Err(Error::Data(format!(
                    "residual target is not symmetric at ({i}, {j}): gap {gap:e}"
                )));
            }
        }
    }
    Ok(())
}

fn quadratic_form(y: &RealMatrix, s: impl Fn(usize) -> f64) -> f64 {
    let n = y.rows();
    let mut total = 0.0;
    for i in 0..n {
        let si = s(i);
        let row: f64 = y.row(i).iter().enumerate().map(|(j, &v)| v as f64 * s(j)).sum();
        total += si * row;
    }
    total
}

/// Differentiable stand-ins for `sign` when ascending `s(Ga)ᵀŶs(Ga)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// Forward `sign`, backward hard-tanh: gradient passes where `|u| ≤ 1`.
    StraightThrough,
    /// `clip(u, -1, 1)` forward, same window backward. Unlike
    /// [`Surrogate::StraightThrough`] the gradient does not vanish when the
    /// current code is orthogonal to `Ŷ`'s leading direction.
    HardTanh,
    /// `tanh(β·u)` in both directions.
    Relaxed { beta: f64 },
}

fn projections(g: &RealMatrix, a: &[f64]) -> Vec<f64> {
    g.row_iter()
        .map(|row| row.iter().zip(a).map(|(&x, &w)| x as f64 * w).sum())
        .collect()
}

fn activations(u: &[f64], surrogate: Surrogate) -> Vec<f64> {
    match surrogate {
        Surrogate::StraightThrough => u.iter().map(|&x| if x >= 0.0 { 1.0 } else { -1.0 }).collect(),
        Surrogate::HardTanh => u.iter().map(|&x| x.clamp(-1.0, 1.0)).collect(),
        Surrogate::Relaxed { beta } => u.iter().map(|&x| (beta * x).tanh()).collect(),
    }
}

/// `s(Ga)ᵀ Ŷ s(Ga)` under the given surrogate.
pub fn surrogate_objective(g: &RealMatrix, y_hat: &RealMatrix, a: &[f64], surrogate: Surrogate) -> f64 {
    let s = activations(&projections(g, a), surrogate);
    quadratic_form(y_hat, |i| s[i])
}

/// Gradient of [`surrogate_objective`] in `a` for symmetric `Ŷ`:
/// `Gᵀ (s'(Ga) ⊙ 2Ŷs)`.
pub fn surrogate_gradient(g: &RealMatrix, y_hat: &RealMatrix, a: &[f64], surrogate: Surrogate) -> Vec<f64> {
    let u = projections(g, a);
    let s = activations(&u, surrogate);
    let mut grad = vec![0.0f64; g.cols()];
    for (i, grow) in g.row_iter().enumerate() {
        let ds = match surrogate {
            Surrogate::StraightThrough | Surrogate::HardTanh => {
                if u[i].abs() <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Surrogate::Relaxed { beta } => beta * (1.0 - s[i] * s[i]),
        };
        if ds == 0.0 {
            continue;
        }
        let ys: f64 = y_hat.row(i).iter().zip(&s).map(|(&y, &sj)| y as f64 * sj).sum();
        let coeff = 2.0 * ds * ys;
        for (acc, &x) in grad.iter_mut().zip(grow) {
            *acc += coeff * x as f64;
        }
    }
    grad
}

/// `sign(G·a)` evaluated in the same order as the batched hash.
fn hash_column(g: &RealMatrix, a: &[f32]) -> Vec<i8> {
    g.row_iter()
        .map(|row| {
            let mut acc = 0.0f32;
            for (t, (&x, &w)) in row.iter().zip(a).enumerate() {
                let prod = x * w;
                acc = if t == 0 { prod } else { acc + prod };
            }
            if acc >= 0.0 {
                1
            } else {
                -1
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedBit {
    pub a: Vec<f32>,
    pub h: Vec<i8>,
    /// `hᵀŶh` for the returned code.
    pub objective: f64,
    pub initial_objective: f64,
}

/// Fixed-step gradient ascent on `h(a)ᵀŶh(a)`, with gradients taken through
/// the hard-tanh surrogate and codes scored with `sign`. The step size halves
/// at 50% and 75% of the schedule, the gradient is scaled by `1 / max|Ŷ|`, and
/// the best iterate seen is returned, so the result never scores below the
/// initialization.
pub fn learn_bit(
    target: &ResidualTarget,
    g: &RealMatrix,
    rng: &mut SeededRng,
    steps: usize,
    lr: f64,
) -> Result<LearnedBit> {
    ensure_symmetric(&target.y_hat)?;
    let n = target.n();
    if g.rows() != n {
        return Err(Error::shape("learn_bit", format!("embedding with {n} rows"), g.rows()));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::param("lr", format!("must be finite and > 0, got {lr}")));
    }
    let m = g.cols();
    let std = 1.0 / (m as f32).sqrt();
    let init: Vec<f32> = (0..m).map(|_| rng.normal(0.0, std)).collect();
    let h0 = hash_column(g, &init);
    let initial_objective = target.objective(&h0);
    let mut best = LearnedBit {
        a: init.clone(),
        h: h0,
        objective: initial_objective,
        initial_objective,
    };

    let peak = target.y_hat.data().iter().fold(0.0f32, |acc, v| acc.max(v.abs())) as f64;
    if peak == 0.0 {
        return Ok(best);
    }
    let scale = 1.0 / peak;
    let mut a: Vec<f64> = init.iter().map(|&x| x as f64).collect();
    for step in 0..steps {
        let rate = if 4 * step >= 3 * steps {
            lr * 0.25
        } else if 2 * step >= steps {
            lr * 0.5
        } else {
            lr
        };
        let grad = surrogate_gradient(g, &target.y_hat, &a, Surrogate::HardTanh);
        for (w, d) in a.iter_mut().zip(&grad) {
            *w += rate * scale * d;
        }
        let candidate: Vec<f32> = a.iter().map(|&x| x as f32).collect();
        let h = hash_column(g, &candidate);
        let objective = target.objective(&h);
        if objective > best.objective {
            best.a = candidate;
            best.h = h;
            best.objective = objective;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashLearnConfig {
    pub m: usize,
    pub bits: usize,
    pub l: usize,
    pub steps: usize,
    pub lr: f64,
    pub sigma: SigmaMode,
    pub conflict: ConflictRule,
}

impl Default for HashLearnConfig {
    fn default() -> Self {
        HashLearnConfig {
            m: 25,
            bits: 16,
            l: 10,
            steps: 200,
            lr: 0.05,
            sigma: SigmaMode::Median,
            conflict: ConflictRule::PreferSimilar,
        }
    }
}

impl HashLearnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::param("m", "must be >= 1"));
        }
        if self.bits == 0 {
            return Err(Error::param("bits", "must be >= 1"));
        }
        if self.l == 0 {
            return Err(Error::param("l", "must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::param("lr", format!("must be finite and > 0, got {}", self.lr)));
        }
        if let SigmaMode::Fixed(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::param("sigma", format!("must be finite and > 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashLearning {
    pub functions: HashFunctionSet,
    pub labels: AffinityLabels,
    /// Codes of the training queries; identical to `functions.hash(queries)`.
    pub codes: BinaryCodeMatrix,
    pub residual: ResidualTarget,
    /// `‖H Hᵀ - bY‖_F²` after each bit, starting with `‖bY‖_F²`.
    pub errors_by_bit: Vec<f64>,
    pub bit_objectives: Vec<f64>,
}

impl HashLearning {
    pub fn reconstruction_error(&self) -> f64 {
        *self.errors_by_bit.last().expect("at least the initial error")
    }
}

/// Fits the embedding, derives labels from `scores`, and learns the bits in
/// sequence against the running residual.
pub fn learn_hash_functions(
    queries: &RealMatrix,
    scores: &RealMatrix,
    cfg: &HashLearnConfig,
    rng: &mut SeededRng,
) -> Result<HashLearning> {
    cfg.validate()?;
    let n = queries.rows();
    if scores.rows() != n || scores.cols() != n {
        return Err(Error::shape(
            "learn_hash_functions",
            format!("{n}x{n} scores"),
            format!("{}x{}", scores.rows(), scores.cols()),
        ));
    }
    let embedding = fit_embedding(queries, cfg.m, cfg.sigma, rng)?;
    let labels = build_pairwise_labels_with(scores, cfg.l, cfg.conflict)?;
    let g = embedding.embed(queries)?;
    let mut residual = ResidualTarget::initial(&labels, cfg.bits);

    let n2 = (n * n) as f64;
    let mut errors_by_bit = vec![residual.squared_norm()];
    let mut bit_objectives = Vec::with_capacity(cfg.bits);
    let mut weights = vec![0.0f32; cfg.m * cfg.bits];
    let mut columns = Vec::with_capacity(cfg.bits);
    for r in 0..cfg.bits {
        let bit = learn_bit(&residual, &g, rng, cfg.steps, cfg.lr)?;
        residual.subtract_bit(&bit.h);
        let before = errors_by_bit[r];
        let after = residual.squared_norm();
        // ‖Ŷ - hhᵀ‖² = ‖Ŷ‖² - 2hᵀŶh + N²
        if bit.objective >= n2 / 2.0 {
            assert!(after <= before, "bit {r}: error rose from {before} to {after}");
        }
        errors_by_bit.push(after);
        bit_objectives.push(bit.objective);
        for (j, &w) in bit.a.iter().enumerate() {
            weights[j * cfg.bits + r] = w;
        }
        columns.push(bit.h);
    }
    let functions = embedding.with_weights(RealMatrix::from_raw(cfg.m, cfg.bits, weights))?;
    let codes = BinaryCodeMatrix::from_columns(n, &columns);
    Ok(HashLearning {
        functions,
        labels,
        codes,
        residual,
        errors_by_bit,
        bit_objectives,
    })
}

/// `‖H Hᵀ - bY‖_F²` computed from scratch.
pub fn reconstruction_error(codes: &BinaryCodeMatrix, labels: &AffinityLabels) -> Result<f64> {
    let n = labels.n();
    if codes.n() != n {
        return Err(Error::shape("reconstruction_error", format!("{n} codes"), codes.n()));
    }
    let b = codes.bits() as i64;
    let mut total = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let aff: i64 = codes
                .row(i)
                .iter()
                .zip(codes.row(j))
                .map(|(&x, &y)| (x * y) as i64)
                .sum();
            let diff = aff - b * labels.get(i, j) as i64;
            total += (diff * diff) as f64;
        }
    }
    Ok(total)
}

/// Whether hash functions are relearned at `epoch`.
pub fn refresh_schedule(epoch: u64, interval: u64) -> Result<bool> {
    if interval == 0 {
        return Err(Error::param("refresh_interval", "must be >= 1"));
    }
    Ok(epoch.is_multiple_of(interval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::OpLedger;
    use crate::numerics::{matmul_transpose_b, row_l2_normalize, DEFAULT_NORM_EPS};

    fn unit_rows(n: usize, d: usize, rng: &mut SeededRng) -> RealMatrix {
        let x = RealMatrix::random_normal(n, d, 0.0, 1.0, rng);
        row_l2_normalize(&x, DEFAULT_NORM_EPS).unwrap().matrix
    }

    fn centered(n: usize, m: usize, rng: &mut SeededRng) -> RealMatrix {
        let g = RealMatrix::random_normal(n, m, 0.0, 1.0, rng);
        let mut data = g.into_data();
        for j in 0..m {
            let mean = (0..n).map(|i| data[i * m + j]).sum::<f32>() / n as f32;
            for i in 0..n {
                data[i * m + j] -= mean;
            }
        }
        RealMatrix::new(n, m, data).unwrap()
    }

    fn symmetric(n: usize, rng: &mut SeededRng) -> RealMatrix {
        let x = RealMatrix::random_normal(n, n, 0.0, 1.0, rng);
        let mut data = vec![0.0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = x.get(i, j) + x.get(j, i);
            }
        }
        RealMatrix::new(n, n, data).unwrap()
    }

    #[test]
    fn relaxed_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(71);
        for trial in 0..50 {
            let n = 2 + trial % 11;
            let m = 1 + trial % 6;
            let g = centered(n, m, &mut rng);
            let y = symmetric(n, &mut rng);
            let a: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 1.0) as f64).collect();
            let s = Surrogate::Relaxed { beta: 1.0 };
            let grad = surrogate_gradient(&g, &y, &a, s);
            for k in 0..m {
                let h = 1e-5;
                let mut plus = a.clone();
                let mut minus = a.clone();
                plus[k] += h;
                minus[k] -= h;
                let fd = (surrogate_objective(&g, &y, &plus, s) - surrogate_objective(&g, &y, &minus, s)) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / fd.abs().max(1.0);
                assert!(rel < 1e-4, "trial {trial} coord {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn hard_tanh_gradient_matches_finite_differences_inside_window() {
        let mut rng = SeededRng::new(74);
        for trial in 0..20 {
            let (n, m) = (3 + trial % 9, 1 + trial % 5);
            let g = centered(n, m, &mut rng);
            let y = symmetric(n, &mut rng);
            // small weights keep every |u| well inside the clip window
            let a: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 0.05) as f64).collect();
            let grad = surrogate_gradient(&g, &y, &a, Surrogate::HardTanh);
            for k in 0..m {
                let h = 1e-5;
                let (mut plus, mut minus) = (a.clone(), a.clone());
                plus[k] += h;
                minus[k] -= h;
                let fd = (surrogate_objective(&g, &y, &plus, Surrogate::HardTanh)
                    - surrogate_objective(&g, &y, &minus, Surrogate::HardTanh))
                    / (2.0 * h);
                assert!((grad[k] - fd).abs() / fd.abs().max(1.0) < 1e-4);
            }
        }
    }

    #[test]
    fn zero_target_returns_initialization() {
        let mut rng = SeededRng::new(72);
        let g = centered(8, 4, &mut rng);
        let target = ResidualTarget::new(RealMatrix::zeros(8, 8), 0).unwrap();
        let mut init_rng = SeededRng::new(5);
        let expected: Vec<f32> = (0..4).map(|_| init_rng.normal(0.0, 0.5)).collect();
        let bit = learn_bit(&target, &g, &mut SeededRng::new(5), 200, 0.05).unwrap();
        assert_eq!(bit.a, expected);
        assert_eq!(bit.objective, 0.0);
    }

    #[test]
    fn never_worse_than_initialization() {
        let mut rng = SeededRng::new(73);
        for _ in 0..10 {
            let g = centered(12, 5, &mut rng);
            let target = ResidualTarget::new(symmetric(12, &mut rng), 0).unwrap();
            let bit = learn_bit(&target, &g, &mut rng, 50, 0.05).unwrap();
            assert!(bit.objective >= bit.initial_objective);
            assert_eq!(bit.h, hash_column(&g, &bit.a));
            assert_eq!(bit.objective, target.objective(&bit.h));
        }
    }

    #[test]
    fn rejects_asymmetric_target() {
        let y = RealMatrix::from_rows(&[[0.0f32, 1.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(ResidualTarget::new(y, 0), Err(Error::Data(_))));
    }

    #[test]
    fn initial_residual_is_scaled_labels() {
        let mut rng = SeededRng::new(74);
        let q = unit_rows(10, 4, &mut rng);
        let scores = matmul_transpose_b(&q, &q, &mut OpLedger::default()).unwrap();
        let labels = super::super::build_pairwise_labels(&scores, 2).unwrap();
        let target = ResidualTarget::initial(&labels, 16);
        for (t, &y) in target.y_hat().data().iter().zip(labels.y()) {
            assert_eq!(*t, 16.0 * y as f32);
        }
        assert_eq!(target.bit_index(), 0);
    }

    #[test]
    fn tracked_residual_matches_recomputation() {
        let mut rng = SeededRng::new(75);
        let q = unit_rows(32, 8, &mut rng);
        let scores = matmul_transpose_b(&q, &q, &mut OpLedger::default()).unwrap();
        let cfg = HashLearnConfig {
            m: 10,
            bits: 8,
            l: 4,
            steps: 40,
            ..HashLearnConfig::default()
        };
        let learned = learn_hash_functions(&q, &scores, &cfg, &mut rng).unwrap();
        let n = 32;
        for i in 0..n {
            for j in 0..n {
                let aff: i32 = (0..8)
                    .map(|r| (learned.codes.get(i, r) * learned.codes.get(j, r)) as i32)
                    .sum();
                let expected = 8 * learned.labels.get(i, j) as i32 - aff;
                assert!((learned.residual.y_hat().get(i, j) - expected as f32).abs() < 1e-4);
            }
        }
        assert_eq!(learned.residual.bit_index(), 8);
        let scratch = reconstruction_error(&learned.codes, &learned.labels).unwrap();
        assert!((scratch - learned.reconstruction_error()).abs() < 1e-6);
        assert_eq!(learned.functions.hash(&q).unwrap(), learned.codes);
    }

    #[test]
    fn learning_is_reproducible() {
        let mut rng = SeededRng::new(76);
        let q = unit_rows(24, 6, &mut rng);
        let scores = matmul_transpose_b(&q, &q, &mut OpLedger::default()).unwrap();
        let cfg = HashLearnConfig {
            m: 8,
            bits: 4,
            l: 3,
            steps: 30,
            ..HashLearnConfig::default()
        };
        let a = learn_hash_functions(&q, &scores, &cfg, &mut SeededRng::new(9)).unwrap();
        let b = learn_hash_functions(&q, &scores, &cfg, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let bad = HashLearnConfig {
            bits: 0,
            ..HashLearnConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Parameter { name: "bits", .. })));
        assert!(HashLearnConfig::default().validate().is_ok());
    }

    #[test]
    fn refresh_examples() {
        assert!(refresh_schedule(0, 30).unwrap());
        assert!(!refresh_schedule(29, 30).unwrap());
        assert!(refresh_schedule(60, 30).unwrap());
        assert!(refresh_schedule(5, 0).is_err());
    }
}
