//! Deterministic invariant suite behind the `selftest` command. Every check
//! prints one line; nothing depends on timing or thread scheduling.

use std::fmt::Write as _;

use super::output::render_csv;
use super::run::{compare_hashing, run_scenario, RunOptions};
use super::scenario::{InputMode, Scenario};
use super::sweep::log_log_slope;
use crate::attention::{
    apply_random_features, hamming_affinity, hamming_distance, hashed_attention, hashed_attention_quadratic,
    kernel_linear_attention, softmax_attention, BinaryCodeMatrix, RandomFeatureMap, Variant,
};
use crate::cost::{energy_of, verify_counts, CountConfig, EnergyTable, OpLedger, Precision};
use crate::error::Result;
use crate::hashing::{
    build_pairwise_labels, fit_embedding, learn_bit, surrogate_gradient, surrogate_objective, ResidualTarget,
    SigmaMode, Surrogate,
};
use crate::numerics::{matmul_transpose_b, row_l2_normalize, RealMatrix, SeededRng, DEFAULT_NORM_EPS};

/// Reference (multiplications, additions, energy) totals, in billions of
/// operations and billions of pJ at fp32.
pub const REFERENCE_ENERGY_ROWS: [(&str, f64, f64, f64); 18] = [
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

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
        }
    }
}

pub fn render_checks(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{tag} {}: {}", c.name, c.detail).expect("writing to a String");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(out, "{} checks, {} failed", checks.len(), failed).expect("writing to a String");
    out
}

fn unit_rows(n: usize, d: usize, rng: &mut SeededRng) -> RealMatrix {
    let x = RealMatrix::random_normal(n, d, 0.0, 1.0, rng);
    row_l2_normalize(&x, DEFAULT_NORM_EPS).expect("positive eps").matrix
}

fn affinity_identity() -> Result<Check> {
    let mut rng = SeededRng::new(1);
    let mut exceptions = 0;
    let mut pairs = 0;
    for bits in [4, 8, 16, 32, 64] {
        for _ in 0..10_000 {
            let c = BinaryCodeMatrix::random(2, bits, &mut rng);
            let aff = hamming_affinity(c.row(0), c.row(1))?;
            let dist = hamming_distance(c.row(0), c.row(1))?;
            if aff != bits as i32 - 2 * dist as i32 {
                exceptions += 1;
            }
            pairs += 1;
        }
    }
    Ok(Check::new(
        "affinity_identity",
        exceptions == 0,
        format!("{pairs} pairs, {exceptions} exceptions"),
    ))
}

fn energy_rows() -> Result<Vec<Check>> {
    let table = EnergyTable::default();
    REFERENCE_ENERGY_ROWS
        .iter()
        .map(|&(label, mul, add, energy)| {
            let ledger = OpLedger {
                mul: (mul * 1e9).round() as u64,
                add: (add * 1e9).round() as u64,
                ..OpLedger::default()
            };
            let pj = energy_of(&ledger, &table, Precision::Fp32)? / 1e9;
            let rel = (pj - energy) / energy;
            Ok(Check::new(
                format!("energy_reproduction[{label}]"),
                rel.abs() <= 0.01,
                format!("{pj:.4}e9 pJ vs {energy:.2}e9, {:+.3}%", rel * 100.0),
            ))
        })
        .collect()
}

fn association_order() -> Result<Check> {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in [8, 64, 256] {
        for bits in [8, 16] {
            for d in [8, 32] {
                for seed in 0..3 {
                    let mut rng = SeededRng::new(seed * 1000 + n as u64 + bits as u64 + d as u64);
                    let codes = BinaryCodeMatrix::random(n, bits, &mut rng);
                    let v = RealMatrix::random_normal(n, d, 0.0, 1.0, &mut rng);
                    let linear = hashed_attention(&codes, &codes, &v, &mut OpLedger::default())?.output;
                    let quadratic = hashed_attention_quadratic(&codes, &codes, &v)?;
                    worst = worst.max(max_relative_row_error(&linear, &quadratic));
                    cases += 1;
                }
            }
        }
    }
    Ok(Check::new(
        "association_order",
        worst <= 1e-4,
        format!("{cases} cases, worst relative row error {worst:.2e}"),
    ))
}

/// `max_t ‖a_t - b_t‖₂ / ‖b_t‖₂`.
pub fn max_relative_row_error(a: &RealMatrix, b: &RealMatrix) -> f64 {
    a.row_iter()
        .zip(b.row_iter())
        .map(|(x, y)| {
            let diff: f64 = x.iter().zip(y).map(|(&p, &q)| (p as f64 - q as f64).powi(2)).sum();
            let norm: f64 = y.iter().map(|&q| (q as f64).powi(2)).sum();
            (diff / norm.max(1e-300)).sqrt()
        })
        .fold(0.0, f64::max)
}

fn scaling() -> Result<Vec<Check>> {
    let sizes = [64usize, 128, 256, 512];
    let d = 8;
    let mut checks = Vec::new();
    for (variant, target) in [
        (Variant::Softmax, 2.0),
        (Variant::Hashed, 1.0),
        (Variant::KernelLinear, 1.0),
    ] {
        let mut totals = Vec::new();
        for &n in &sizes {
            let mut rng = SeededRng::new(n as u64);
            let q = unit_rows(n, d, &mut rng);
            let v = RealMatrix::random_normal(n, d, 0.0, 1.0, &mut rng);
            let mut ledger = OpLedger::default();
            match variant {
                Variant::Softmax => {
                    softmax_attention(&q, &q, &v, 1.0, &mut ledger)?;
                }
                Variant::KernelLinear => {
                    let map = RandomFeatureMap::new(d, 64, 1.0, &mut rng)?;
                    kernel_linear_attention(&q, &q, &v, &map, &mut ledger)?;
                }
                _ => {
                    let codes = BinaryCodeMatrix::random(n, 16, &mut rng);
                    hashed_attention(&codes, &codes, &v, &mut ledger)?;
                }
            }
            totals.push(ledger.total() as f64);
        }
        let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
        let slope = log_log_slope(&xs, &totals)?;
        checks.push(Check::new(
            format!("scaling[{variant}]"),
            (slope - target).abs() <= 0.1,
            format!("log-log slope {slope:.4}, expected {target:.1} +/- 0.1"),
        ));
    }
    Ok(checks)
}

fn multiplication_free() -> Result<Check> {
    let mut rng = SeededRng::new(5);
    let mut runs = 0;
    for variant in Variant::ALL {
        for n in [8, 32, 128] {
            for d_p in [8, 32] {
                for width in [8, 16] {
                    let check = verify_counts(
                        variant,
                        CountConfig {
                            n,
                            d_p,
                            width,
                            temperature: 1.0,
                        },
                        &mut rng,
                    )?;
                    if variant == Variant::Hashed && (check.actual.mul != 0 || check.actual.div != (n * d_p + n) as u64)
                    {
                        return Ok(Check::new(
                            "multiplication_free",
                            false,
                            format!("hashed n={n} d_p={d_p} b={width}: {:?}", check.actual),
                        ));
                    }
                    runs += 1;
                }
            }
        }
    }
    Ok(Check::new(
        "multiplication_free",
        true,
        format!("{runs} instrumented ledgers equal their closed forms; hashed mul = 0"),
    ))
}

fn random_feature_fidelity() -> Result<Vec<Check>> {
    let (d, sigma, maps) = (8usize, 0.8f32, 200u64);
    let mut rng = SeededRng::new(6);
    let x = unit_rows(1, d, &mut rng);
    let dir = unit_rows(1, d, &mut rng);
    let mut checks = Vec::new();
    for (label, dist) in [("0", 0.0f32), ("sigma", sigma), ("sqrt2_sigma", sigma * 2f32.sqrt())] {
        let y: Vec<f32> = x.row(0).iter().zip(dir.row(0)).map(|(a, b)| a + dist * b).collect();
        let pair = RealMatrix::from_rows(&[x.row(0), y.as_slice()])?;
        let mut total = 0.0f64;
        for seed in 0..maps {
            let map = RandomFeatureMap::new(d, 64, sigma, &mut SeededRng::new(seed))?;
            let phi = apply_random_features(&pair, &map)?;
            total += phi
                .row(0)
                .iter()
                .zip(phi.row(1))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum::<f64>();
        }
        let mean = total / maps as f64;
        let exact = (-(dist as f64).powi(2) / (2.0 * (sigma as f64).powi(2))).exp();
        let rel = (mean - exact).abs() / exact;
        checks.push(Check::new(
            format!("random_feature_fidelity[distance={label}]"),
            rel <= 0.05,
            format!("mean {mean:.4} vs kernel {exact:.4} ({:.2}%)", rel * 100.0),
        ));
    }
    Ok(checks)
}

fn gradient_check() -> Result<Check> {
    let mut rng = SeededRng::new(7);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let n = 2 + trial % 11;
        let m = 1 + trial % 6;
        let g = RealMatrix::random_normal(n, m, 0.0, 1.0, &mut rng);
        let x = RealMatrix::random_normal(n, n, 0.0, 1.0, &mut rng);
        let y = RealMatrix::new(
            n,
            n,
            (0..n * n).map(|p| x.get(p / n, p % n) + x.get(p % n, p / n)).collect(),
        )?;
        let a: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 1.0) as f64).collect();
        let s = Surrogate::Relaxed { beta: 1.0 };
        let grad = surrogate_gradient(&g, &y, &a, s);
        for k in 0..m {
            let h = 1e-5;
            let (mut plus, mut minus) = (a.clone(), a.clone());
            plus[k] += h;
            minus[k] -= h;
            let fd = (surrogate_objective(&g, &y, &plus, s) - surrogate_objective(&g, &y, &minus, s)) / (2.0 * h);
            worst = worst.max((grad[k] - fd).abs() / fd.abs().max(1.0));
        }
    }
    Ok(Check::new(
        "gradient_check",
        worst <= 1e-4,
        format!("50 instances, worst relative error {worst:.2e}"),
    ))
}

/// Learned objective over the best code found by enumerating all `2^n`
/// codes, for one seeded instance with labels from random unit queries.
pub fn optimality_ratio(seed: u64, n: usize, m: usize) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let q = unit_rows(n, 4, &mut rng);
    let scores = matmul_transpose_b(&q, &q, &mut OpLedger::default())?;
    let labels = build_pairwise_labels(&scores, (n - 1) / 4)?;
    let target = ResidualTarget::initial(&labels, 16);
    let g = fit_embedding(&q, m, SigmaMode::Median, &mut rng)?.embed(&q)?;
    let bit = learn_bit(&target, &g, &mut rng, 200, 0.05)?;
    let mut best = f64::NEG_INFINITY;
    let mut h = vec![0i8; n];
    for mask in 0u32..(1 << n) {
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = if mask >> i & 1 == 1 { 1 } else { -1 };
        }
        best = best.max(target.objective(&h));
    }
    Ok(bit.objective / best)
}

fn optimality() -> Result<Check> {
    let ratios = (0..20)
        .map(|seed| optimality_ratio(seed, 8, 8))
        .collect::<Result<Vec<_>>>()?;
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    Ok(Check::new(
        "optimality_ratio",
        mean >= 0.8,
        format!("mean ratio {mean:.4} over 20 seeds at N = 8"),
    ))
}

/// The two-cluster setting shared by the selftest and the benchmarks.
pub fn two_cluster_benchmark() -> Scenario {
    Scenario {
        name: "two_cluster".into(),
        variant: Variant::Hashed,
        n: 64,
        d_p: 16,
        bits: 16,
        m: 25,
        l: 10,
        input_mode: InputMode::TwoCluster,
        seeds: (0..20).collect(),
        ..Scenario::default()
    }
}

fn hashing_vs_baselines() -> Result<Vec<Check>> {
    let s = two_cluster_benchmark();
    let results = s
        .seeds
        .iter()
        .map(|&seed| compare_hashing(&s, seed))
        .collect::<Result<Vec<_>>>()?;
    let total = results.len();
    let beats_binarized = results.iter().filter(|r| r.hashed_err < r.binarized_err).count();
    let beats_random = results
        .iter()
        .filter(|r| r.learned_reconstruction < r.random_reconstruction)
        .count();
    Ok(vec![
        Check::new(
            "hashed_beats_binarized",
            beats_binarized * 5 >= total * 4,
            format!("{beats_binarized}/{total} seeds with lower mean row error"),
        ),
        Check::new(
            "learned_beats_random_codes",
            beats_random * 10 >= total * 9,
            format!("{beats_random}/{total} seeds with lower reconstruction error"),
        ),
    ])
}

fn determinism() -> Result<Check> {
    let s = Scenario {
        seeds: vec![0, 1, 2],
        ..two_cluster_benchmark()
    };
    let first = render_csv(&run_scenario(&s, &RunOptions::default())?)?;
    let second = render_csv(&run_scenario(
        &s,
        &RunOptions {
            timing: false,
            threads: Some(1),
        },
    )?)?;
    Ok(Check::new(
        "determinism",
        first == second,
        format!("{} bytes of CSV compared across thread counts", first.len()),
    ))
}

/// Runs every check in a fixed order.
pub fn selftest() -> Result<Vec<Check>> {
    let mut checks = vec![affinity_identity()?];
    checks.extend(energy_rows()?);
    checks.push(association_order()?);
    checks.extend(scaling()?);
    checks.push(multiplication_free()?);
    checks.extend(random_feature_fidelity()?);
    checks.push(gradient_check()?);
    checks.push(optimality()?);
    checks.extend(hashing_vs_baselines()?);
    checks.push(determinism()?);
    Ok(checks)
}
