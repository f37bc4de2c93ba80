use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

/// How a pair marked `+1` from one row and `-1` from the other is resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConflictRule {
    #[default]
    PreferSimilar,
    PreferDissimilar,
}

/// Pairwise similarity targets over `{-1, 0, +1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AffinityLabels {
    n: usize,
    l: usize,
    y: Vec<i8>,
    selected: Vec<i8>,
}

impl AffinityLabels {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Symmetric labels, row-major, with `+1` on the diagonal.
    pub fn y(&self) -> &[i8] {
        &self.y
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.y[i * self.n + j]
    }

    /// Per-row selections before symmetrization (diagonal 0).
    pub fn selected(&self) -> &[i8] {
        &self.selected
    }

    pub fn to_matrix(&self) -> RealMatrix {
        RealMatrix::from_raw(self.n, self.n, self.y.iter().map(|&v| v as f32).collect())
    }
}

/// Labels with similarity winning symmetrization conflicts.
pub fn build_pairwise_labels(scores: &RealMatrix, l: usize) -> Result<AffinityLabels> {
    build_pairwise_labels_with(scores, l, ConflictRule::PreferSimilar)
}

/// Per row, the `l` largest off-diagonal scores are marked `+1` and the `l`
/// smallest of the rest `-1`; ties go to the lower column index.
pub fn build_pairwise_labels_with(scores: &RealMatrix, l: usize, rule: ConflictRule) -> Result<AffinityLabels> {
    let n = scores.rows();
    if scores.cols() != n {
        return Err(Error::shape(
            "build_pairwise_labels",
            "square scores",
            format!("{}x{}", scores.rows(), scores.cols()),
        ));
    }
    if 2 * l >= n {
        return Err(Error::param("l", format!("2l = {} must be < N = {n}", 2 * l)));
    }
    scores.ensure_finite("build_pairwise_labels")?;

    let mut selected = vec![0i8; n * n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let row = scores.row(i);
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        for &j in &order[..l] {
            selected[i * n + j] = 1;
        }
        let mut rest = order.split_off(l);
        rest.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        for &j in &rest[..l] {
            selected[i * n + j] = -1;
        }
    }

    let (win, lose) = match rule {
        ConflictRule::PreferSimilar => (1i8, -1i8),
        ConflictRule::PreferDissimilar => (-1, 1),
    };
    let mut y = vec![0i8; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (selected[i * n + j], selected[j * n + i]);
            y[i * n + j] = if i == j {
                1
            } else if a == win || b == win {
                win
            } else if a == lose || b == lose {
                lose
            } else {
                0
            };
        }
    }
    Ok(AffinityLabels { n, l, y, selected })
}
