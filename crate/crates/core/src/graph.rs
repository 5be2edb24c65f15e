//! Category-to-category knowledge graph from classifier confusion.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// How off-diagonal similarities are turned into transfer weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Use `ε_{c,i}` as is.
    #[default]
    Raw,
    /// Rescale the off-diagonal entries of a row to sum to one.
    Renormalized,
}

/// Row-normalized confusion matrix `ε`, where `ε[i][j]` is the fraction of
/// class-`i` training samples predicted as class `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    eps: Matrix,
    /// Classes with no samples; their rows are all zero.
    empty: Vec<bool>,
}

impl KnowledgeGraph {
    pub fn build(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                context: "build_graph",
                expected: truth.len(),
                actual: predicted.len(),
            });
        }
        let mut counts = vec![0usize; num_classes * num_classes];
        let mut totals = vec![0usize; num_classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            for label in [p, t] {
                if label >= num_classes {
                    return Err(Error::InvalidLabel { label, num_classes });
                }
            }
            counts[t * num_classes + p] += 1;
            totals[t] += 1;
        }
        let mut eps = Matrix::zeros(num_classes, num_classes);
        for i in 0..num_classes {
            if totals[i] == 0 {
                continue;
            }
            for j in 0..num_classes {
                eps[(i, j)] = counts[i * num_classes + j] as f64 / totals[i] as f64;
            }
        }
        Ok(KnowledgeGraph {
            eps,
            empty: totals.iter().map(|&n| n == 0).collect(),
        })
    }

    /// Wraps an explicit similarity matrix (entries in `[0, 1]`).
    pub fn from_matrix(eps: Matrix) -> Result<Self> {
        if !eps.is_square() {
            return Err(Error::NotSquare {
                rows: eps.rows(),
                cols: eps.cols(),
            });
        }
        if eps.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(
                "graph entries must lie in [0, 1]".into(),
            ));
        }
        let empty = (0..eps.rows())
            .map(|i| eps.row(i).iter().all(|&v| v == 0.0))
            .collect();
        Ok(KnowledgeGraph { eps, empty })
    }

    pub fn identity(num_classes: usize) -> Self {
        KnowledgeGraph {
            eps: Matrix::identity(num_classes),
            empty: vec![false; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.eps.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.eps
    }

    pub fn is_empty_row(&self, c: usize) -> bool {
        self.empty[c]
    }

    /// Transfer weights from row `c`: entry `c` is always zero, the rest are
    /// the off-diagonal similarities, raw or renormalized. Renormalization of
    /// a row without off-diagonal mass yields all zeros.
    pub fn similarity_weights(&self, c: usize, mode: WeightMode) -> Vec<f64> {
        let mut w = self.eps.row(c).to_vec();
        w[c] = 0.0;
        if mode == WeightMode::Renormalized {
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
        }
        w
    }

    /// CSV with a header row and a leading column of class indices.
    pub fn to_csv(&self) -> String {
        let n = self.num_classes();
        let mut out = String::from("class");
        for j in 0..n {
            let _ = write!(out, ",{j}");
        }
        out.push('\n');
        for i in 0..n {
            let _ = write!(out, "{i}");
            for v in self.eps.row(i) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
