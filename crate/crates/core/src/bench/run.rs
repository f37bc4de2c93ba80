use std::env;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inputs::{generate_inputs, Inputs};
use super::scenario::Scenario;
use crate::attention::{
    binarize_sign_scale, hashed_attention, kernel_linear_attention, softmax_attention, RandomFeatureMap, Variant,
};
use crate::cost::{CostReport, EnergyTable, OpLedger, Precision};
use crate::error::{Error, Result};
use crate::hashing::{learn_hash_functions, reconstruction_error, HashLearning};
use crate::numerics::{matmul_transpose_b, RealMatrix, SeededRng};

/// Environment variable capping the number of seeds run in parallel.
pub const THREADS_ENV: &str = "ECOATTN_THREADS";

/// RNG substreams derived from each seed.
const STREAM_INPUTS: u64 = 0;
const STREAM_FEATURES: u64 = 1;
const STREAM_HASHING: u64 = 2;
const STREAM_RANDOM_CODES: u64 = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record wall-clock time; otherwise `wall_ms` is 0 and output is reproducible.
    pub timing: bool,
    /// Worker threads; `None` reads [`THREADS_ENV`], then lets rayon decide.
    pub threads: Option<usize>,
}

/// One seed of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub n: usize,
    pub d_p: usize,
    pub bits: usize,
    pub mean_err: Option<f64>,
    pub max_err: Option<f64>,
    pub mul: u64,
    pub add: u64,
    pub shift: u64,
    pub exp: u64,
    pub div: u64,
    pub energy_pj: f64,
    pub wall_ms: f64,
    pub precision: Precision,
    /// Every attention normalizer was strictly positive.
    pub denominators_positive: bool,
}

impl RunRecord {
    pub fn ledger(&self) -> OpLedger {
        OpLedger {
            mul: self.mul,
            add: self.add,
            shift: self.shift,
            exp: self.exp,
            div: self.div,
        }
    }
}

/// Mean and max over tokens of `‖out_t - ref_t‖₁ / D_p`.
pub fn row_errors(output: &RealMatrix, reference: &RealMatrix) -> Result<(f64, f64)> {
    if output.shape() != reference.shape() {
        return Err(Error::shape(
            "row_errors",
            format!("{}x{}", reference.rows(), reference.cols()),
            format!("{}x{}", output.rows(), output.cols()),
        ));
    }
    let d = output.cols() as f64;
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (a, b) in output.row_iter().zip(reference.row_iter()) {
        let e = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum::<f64>() / d;
        sum += e;
        max = max.max(e);
    }
    Ok((sum / output.rows().max(1) as f64, max))
}

fn scores_of(inputs: &Inputs) -> Result<RealMatrix> {
    matmul_transpose_b(&inputs.q, &inputs.q, &mut OpLedger::default())
}

fn learn(s: &Scenario, inputs: &Inputs, root: &SeededRng) -> Result<HashLearning> {
    let scores = scores_of(inputs)?;
    learn_hash_functions(
        &inputs.q,
        &scores,
        &s.hash_config(),
        &mut root.substream(STREAM_HASHING),
    )
}

/// Runs one variant on one seed's inputs, returning its output, core ledger
/// and whether every normalizer stayed positive.
fn attend(s: &Scenario, inputs: &Inputs, root: &SeededRng) -> Result<(RealMatrix, OpLedger, bool)> {
    let (q, v) = (&inputs.q, &inputs.v);
    let mut ledger = OpLedger::default();
    let (out, positive) = match s.variant {
        Variant::Softmax => (softmax_attention(q, q, v, s.temperature, &mut ledger)?, true),
        Variant::KernelLinear => {
            let map = RandomFeatureMap::new(
                s.d_p,
                s.num_features,
                s.temperature.sqrt(),
                &mut root.substream(STREAM_FEATURES),
            )?;
            (kernel_linear_attention(q, q, v, &map, &mut ledger)?, true)
        }
        Variant::Binarized => {
            let (codes, _) = binarize_sign_scale(q)?;
            let h = hashed_attention(&codes, &codes, v, &mut ledger)?;
            let positive = h.denominators_positive();
            (h.output, positive)
        }
        Variant::Hashed => {
            let learned = learn(s, inputs, root)?;
            let h = hashed_attention(&learned.codes, &learned.codes, v, &mut ledger)?;
            let positive = h.denominators_positive();
            (h.output, positive)
        }
    };
    Ok((out, ledger, positive))
}

/// The full pipeline for one seed: inputs, exact reference, the scenario's
/// variant, errors and cost.
pub fn run_seed(s: &Scenario, seed: u64, opts: &RunOptions) -> Result<RunRecord> {
    let root = SeededRng::new(seed);
    let inputs = generate_inputs(s, &mut root.substream(STREAM_INPUTS))?;
    let reference = softmax_attention(&inputs.q, &inputs.q, &inputs.v, s.temperature, &mut OpLedger::default())?;
    let start = Instant::now();
    let (output, ledger, positive) = attend(s, &inputs, &root)?;
    let wall_ms = if opts.timing {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let (mean_err, max_err) = row_errors(&output, &reference)?;
    let cost = CostReport::new(
        s.variant,
        s.n,
        s.d_p,
        s.width(),
        s.m,
        ledger,
        &EnergyTable::default(),
        s.precision,
    )?;
    Ok(RunRecord {
        scenario: s.name.clone(),
        variant: s.variant,
        seed,
        n: s.n,
        d_p: s.d_p,
        bits: cost.bits,
        mean_err: Some(mean_err),
        max_err: Some(max_err),
        mul: ledger.mul,
        add: ledger.add,
        shift: ledger.shift,
        exp: ledger.exp,
        div: ledger.div,
        energy_pj: cost.energy_pj,
        wall_ms,
        precision: s.precision,
        denominators_positive: positive,
    })
}

/// Thread cap from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::config(THREADS_ENV, format!("expected a positive integer, got `{v}`")))?;
            if n == 0 {
                return Err(Error::config(THREADS_ENV, "must be >= 1"));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

pub(crate) fn with_pool<T: Send>(opts: &RunOptions, job: impl FnOnce() -> T + Send) -> Result<T> {
    let threads = match opts.threads {
        Some(t) => Some(t),
        None => threads_from_env()?,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::State(format!("thread pool: {e}")))?;
    Ok(pool.install(job))
}

/// One record per seed, ordered by seed. Seeds run in parallel; each has its
/// own RNG and ledgers, so the result does not depend on scheduling.
pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<Vec<RunRecord>> {
    s.validate()?;
    let mut records = with_pool(opts, || {
        s.seeds
            .par_iter()
            .map(|&seed| run_seed(s, seed, opts))
            .collect::<Result<Vec<_>>>()
    })??;
    records.sort_by(|a, b| a.scenario.cmp(&b.scenario).then(a.seed.cmp(&b.seed)));
    Ok(records)
}

/// Hashed attention against its ablations on one seed's inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashingComparison {
    pub seed: u64,
    /// Mean row error of learned-hash attention vs exact softmax.
    pub hashed_err: f64,
    /// Mean row error of sign-binarized attention vs exact softmax.
    pub binarized_err: f64,
    /// `‖HHᵀ - bY‖_F²` for the learned codes.
    pub learned_reconstruction: f64,
    /// The same error for uniformly random codes of equal width.
    pub random_reconstruction: f64,
    /// Mean Hamming distance between learned codes within / across blobs.
    pub intra_distance: Option<f64>,
    pub inter_distance: Option<f64>,
}

pub fn compare_hashing(s: &Scenario, seed: u64) -> Result<HashingComparison> {
    let hashed = Scenario {
        variant: Variant::Hashed,
        ..s.clone()
    };
    hashed.validate()?;
    let root = SeededRng::new(seed);
    let inputs = generate_inputs(&hashed, &mut root.substream(STREAM_INPUTS))?;
    let (q, v) = (&inputs.q, &inputs.v);
    let reference = softmax_attention(q, q, v, s.temperature, &mut OpLedger::default())?;

    let learned = learn(&hashed, &inputs, &root)?;
    let out = hashed_attention(&learned.codes, &learned.codes, v, &mut OpLedger::default())?;
    let (hashed_err, _) = row_errors(&out.output, &reference)?;

    let (sign_codes, _) = binarize_sign_scale(q)?;
    let out = hashed_attention(&sign_codes, &sign_codes, v, &mut OpLedger::default())?;
    let (binarized_err, _) = row_errors(&out.output, &reference)?;

    let random =
        crate::attention::BinaryCodeMatrix::random(hashed.n, hashed.bits, &mut root.substream(STREAM_RANDOM_CODES));
    let random_reconstruction = reconstruction_error(&random, &learned.labels)?;

    let (intra_distance, inter_distance) = match &inputs.clusters {
        Some(c) => {
            let (mut intra, mut inter) = ((0.0, 0u64), (0.0, 0u64));
            for i in 0..hashed.n {
                for j in i + 1..hashed.n {
                    let dist = learned
                        .codes
                        .row(i)
                        .iter()
                        .zip(learned.codes.row(j))
                        .filter(|(a, b)| a != b)
                        .count() as f64;
                    let slot = if c[i] == c[j] { &mut intra } else { &mut inter };
                    slot.0 += dist;
                    slot.1 += 1;
                }
            }
            let mean = |(sum, count): (f64, u64)| (count > 0).then(|| sum / count as f64);
            (mean(intra), mean(inter))
        }
        None => (None, None),
    };

    Ok(HashingComparison {
        seed,
        hashed_err,
        binarized_err,
        learned_reconstruction: learned.reconstruction_error(),
        random_reconstruction,
        intra_distance,
        inter_distance,
    })
}
