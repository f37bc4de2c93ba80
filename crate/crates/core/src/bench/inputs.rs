use std::fs;
use std::path::Path;

use super::scenario::{InputMode, Scenario};
use crate::attention::project_qkv;
use crate::cost::OpLedger;
use crate::error::{Error, Result};
use crate::numerics::{row_l2_normalize, RealMatrix, SeededRng, DEFAULT_NORM_EPS};

/// Tied unit-row queries/keys and values for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub q: RealMatrix,
    pub v: RealMatrix,
    /// Blob membership per token for two-cluster inputs.
    pub clusters: Option<Vec<usize>>,
}

/// `n` points split evenly between blobs centered at `±separation/2 · e`
/// for a random unit direction `e`, with `N(0, 1/d)` noise per coordinate.
pub fn two_cluster(n: usize, d: usize, separation: f32, rng: &mut SeededRng) -> (RealMatrix, Vec<usize>) {
    let dir = RealMatrix::random_normal(1, d, 0.0, 1.0, rng);
    let dir = row_l2_normalize(&dir, DEFAULT_NORM_EPS).expect("positive eps").matrix;
    let noise = 1.0 / (d as f32).sqrt();
    let clusters: Vec<usize> = (0..n).map(|i| 2 * i / n).collect();
    let mut data = Vec::with_capacity(n * d);
    for &c in &clusters {
        let side = if c == 0 { 0.5 } else { -0.5 };
        for &e in dir.row(0) {
            data.push(side * separation * e + rng.normal(0.0, noise));
        }
    }
    (RealMatrix::new(n, d, data).expect("finite samples"), clusters)
}

/// Reads a dense matrix, one row per line, entries separated by commas or
/// whitespace. Blank lines and `#` comments are skipped.
pub fn read_matrix(path: &Path) -> Result<RealMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f32>()
                    .map_err(|e| Error::io(path, format!("line {}: `{t}`: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::io(path, "no data rows"));
    }
    RealMatrix::from_rows(&rows).map_err(|e| Error::io(path, e))
}

/// Builds the inputs for one seed. Raw token features `X` are generated (or
/// read), queries and keys are the tied rows of `X` projected to the unit
/// sphere, and values are `X · W_v` with `W_v ~ N(0, 1/d)`.
pub fn generate_inputs(s: &Scenario, rng: &mut SeededRng) -> Result<Inputs> {
    let (x, clusters) = match s.input_mode {
        InputMode::RandomUnit => (RealMatrix::random_normal(s.n, s.d_p, 0.0, 1.0, rng), None),
        InputMode::TwoCluster => {
            let (x, c) = two_cluster(s.n, s.d_p, s.separation, rng);
            (x, Some(c))
        }
        InputMode::File => {
            let path = s
                .input_file
                .as_deref()
                .ok_or_else(|| Error::config("input_file", "missing"))?;
            let x = read_matrix(path)?;
            if x.shape() != (s.n, s.d_p) {
                return Err(Error::io(
                    path,
                    format!("expected {}x{} values, found {}x{}", s.n, s.d_p, x.rows(), x.cols()),
                ));
            }
            (x, None)
        }
    };
    let eye = RealMatrix::identity(s.d_p);
    let w_v = RealMatrix::random_normal(s.d_p, s.d_p, 0.0, 1.0 / (s.d_p as f32).sqrt(), rng);
    let (q, _, v) = project_qkv(&x, &eye, &eye, &w_v, &mut OpLedger::default())?;
    let q = row_l2_normalize(&q, DEFAULT_NORM_EPS)?;
    if let Some(&row) = q.degenerate_rows.first() {
        return Err(Error::Degenerate {
            op: "generate_inputs",
            row,
            detail: "token has zero norm and cannot be projected to the unit sphere".into(),
        });
    }
    Ok(Inputs {
        q: q.matrix,
        v,
        clusters,
    })
}
