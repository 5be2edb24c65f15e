//! Per-class feature prototypes and covariances with exact streaming merges.
//!
//! Each class keeps `(count, mean, M2)` where `M2` is the centered sum of
//! outer products. Two groups merge with the pooled (Chan et al.) update, so
//! any batching of a dataset reproduces the single-pass statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Vector};

/// Componentwise mean of equally sized feature vectors.
pub fn prototype(features: &[&[f64]]) -> Result<Vector> {
    let first = features.first().ok_or(Error::Empty("prototype of no features"))?;
    let d = first.len();
    let mut sum = vec![0.0; d];
    for f in features {
        if f.len() != d {
            return Err(Error::DimensionMismatch {
                context: "prototype",
                expected: d,
                actual: f.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(f.iter()) {
            *s += v;
        }
    }
    let n = features.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect::<Vec<_>>().into())
}

/// Unbiased covariance around `mean`. The flag is `true` when fewer than
/// two features were given, in which case the zero matrix is returned.
pub fn covariance(features: &[&[f64]], mean: &Vector) -> Result<(Matrix, bool)> {
    let d = mean.dim();
    let mut cov = Matrix::zeros(d, d);
    if features.len() < 2 {
        return Ok((cov, true));
    }
    let mut centered = vec![0.0; d];
    for f in features {
        if f.len() != d {
            return Err(Error::DimensionMismatch {
                context: "covariance",
                expected: d,
                actual: f.len(),
            });
        }
        for (c, (v, m)) in centered.iter_mut().zip(f.iter().zip(mean.as_slice())) {
            *c = v - m;
        }
        add_outer_upper(&mut cov, &centered, 1.0);
    }
    mirror_upper(&mut cov);
    cov.scale(1.0 / (features.len() - 1) as f64);
    Ok((cov, false))
}

// Adds scale·v·vᵀ to the upper triangle only.
fn add_outer_upper(m: &mut Matrix, v: &[f64], scale: f64) {
    let d = v.len();
    for i in 0..d {
        let vi = scale * v[i];
        if vi == 0.0 {
            continue;
        }
        let row = m.row_mut(i);
        for j in i..d {
            row[j] += vi * v[j];
        }
    }
}

fn mirror_upper(m: &mut Matrix) {
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            m[(j, i)] = m[(i, j)];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub class: usize,
    count: usize,
    mean: Vector,
    /// Centered sum of outer products, symmetric.
    m2: Matrix,
    /// Set when the covariance was smoothed by [`StatsBank::ema_refresh`];
    /// then `covariance()` reads it instead of `m2 / (n − 1)`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    smoothed_cov: Option<Matrix>,
}

impl ClassStats {
    pub fn empty(class: usize, dim: usize) -> Self {
        ClassStats {
            class,
            count: 0,
            mean: Vector::zeros(dim),
            m2: Matrix::zeros(dim, dim),
            smoothed_cov: None,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn prototype(&self) -> &Vector {
        &self.mean
    }

    /// Unbiased covariance; the zero matrix when `count <= 1`.
    pub fn covariance(&self) -> Matrix {
        if let Some(cov) = &self.smoothed_cov {
            return cov.clone();
        }
        let d = self.mean.dim();
        if self.count <= 1 {
            return Matrix::zeros(d, d);
        }
        self.m2.scaled(1.0 / (self.count - 1) as f64)
    }

    /// Pooled merge of another group of the same class into this one.
    pub fn merge(&mut self, other: &ClassStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            let class = self.class;
            *self = other.clone();
            self.class = class;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta: Vec<f64> = other
            .mean
            .as_slice()
            .iter()
            .zip(self.mean.as_slice())
            .map(|(b, a)| b - a)
            .collect();
        self.m2
            .axpy(1.0, &other.m2)
            .expect("merged stats share a dimension");
        let mut upper = Matrix::zeros(delta.len(), delta.len());
        add_outer_upper(&mut upper, &delta, na * nb / n);
        mirror_upper(&mut upper);
        self.m2.axpy(1.0, &upper).expect("same dimension");
        for (m, dlt) in self.mean.as_mut_slice().iter_mut().zip(&delta) {
            *m += dlt * nb / n;
        }
        self.count += other.count;
        self.smoothed_cov = None;
    }

    fn from_group(class: usize, features: &[&[f64]]) -> Result<Self> {
        let mean = prototype(features)?;
        let d = mean.dim();
        let mut m2 = Matrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for f in features {
            for (c, (v, m)) in centered.iter_mut().zip(f.iter().zip(mean.as_slice())) {
                *c = v - m;
            }
            add_outer_upper(&mut m2, &centered, 1.0);
        }
        mirror_upper(&mut m2);
        Ok(ClassStats {
            class,
            count: features.len(),
            mean,
            m2,
            smoothed_cov: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsBank {
    dim: usize,
    classes: Vec<ClassStats>,
}

impl StatsBank {
    pub fn new(num_classes: usize, dim: usize) -> Self {
        StatsBank {
            dim,
            classes: (0..num_classes).map(|c| ClassStats::empty(c, dim)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &ClassStats {
        &self.classes[c]
    }

    pub fn classes(&self) -> &[ClassStats] {
        &self.classes
    }

    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(ClassStats::count).collect()
    }

    /// Folds one batch of `(feature row, label)` pairs into the bank.
    /// Classes absent from the batch are untouched.
    pub fn update_batch(&mut self, features: &Matrix, labels: &[usize]) -> Result<()> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "update_batch: labels",
                expected: features.rows(),
                actual: labels.len(),
            });
        }
        if features.rows() > 0 && features.cols() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "update_batch: features",
                expected: self.dim,
                actual: features.cols(),
            });
        }
        let c = self.classes.len();
        let mut groups: Vec<Vec<&[f64]>> = vec![Vec::new(); c];
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::InvalidLabel {
                    label: y,
                    num_classes: c,
                });
            }
            groups[y].push(features.row(i));
        }
        for (class, group) in groups.iter().enumerate() {
            if !group.is_empty() {
                let partial = ClassStats::from_group(class, group)?;
                self.classes[class].merge(&partial);
            }
        }
        Ok(())
    }

    /// `m·old + (1 − m)·new` on every prototype and covariance. Counts come
    /// from `new`.
    pub fn ema_refresh(&self, new: &StatsBank, momentum: f64) -> Result<StatsBank> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!(
                "EMA momentum must be in [0, 1], got {momentum}"
            )));
        }
        if new.classes.len() != self.classes.len() || new.dim != self.dim {
            return Err(Error::DimensionMismatch {
                context: "ema_refresh",
                expected: self.classes.len(),
                actual: new.classes.len(),
            });
        }
        if momentum == 0.0 {
            return Ok(new.clone());
        }
        if momentum == 1.0 {
            return Ok(self.clone());
        }
        let classes = self
            .classes
            .iter()
            .zip(&new.classes)
            .map(|(old, fresh)| {
                let mut mean = old.mean.clone();
                mean.scale(momentum);
                mean.axpy(1.0 - momentum, &fresh.mean);
                let mut cov = old.covariance().scaled(momentum);
                cov.axpy(1.0 - momentum, &fresh.covariance())?;
                Ok(ClassStats {
                    class: fresh.class,
                    count: fresh.count,
                    mean,
                    m2: fresh.m2.clone(),
                    smoothed_cov: Some(cov),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StatsBank {
            dim: self.dim,
            classes,
        })
    }

    /// JSON dump with per-class count, prototype and covariance rows.
    pub fn to_dump_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Entry {
            class: usize,
            count: usize,
            prototype: Vec<f64>,
            covariance: Vec<Vec<f64>>,
        }
        #[derive(Serialize)]
        struct Dump {
            feature_dim: usize,
            classes: Vec<Entry>,
        }
        let dump = Dump {
            feature_dim: self.dim,
            classes: self
                .classes
                .iter()
                .map(|s| {
                    let cov = s.covariance();
                    Entry {
                        class: s.class,
                        count: s.count,
                        prototype: s.mean.as_slice().to_vec(),
                        covariance: (0..cov.rows()).map(|i| cov.row(i).to_vec()).collect(),
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}
