//! The implicit-augmentation surrogate loss, its gradients, class
//! reweighting, and Monte-Carlo estimators of the losses it bounds.
//!
//! For an instance `(f, y)` augmented as `f̃ ~ N(f + s_y, Σ_y)` the expected
//! cross-entropy is bounded above (Jensen plus the Gaussian MGF) by the
//! cross-entropy over surrogate logits
//!
//! ```text
//! Z_j = ŷ_j + (w_j − w_y)ᵀ s_y + ½ (w_j − w_y)ᵀ Σ_y (w_j − w_y)
//! ```
//!
//! where `s_y = α μ_y^r` and `Σ_y = β (Σ_y + Σ_y^r)` come from
//! [`AugmentationDistribution`]. Statistics are constants for
//! differentiation; gradients flow through `ŷ`, `f`, `W` and `b` only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, log_sum_exp, quadratic_form, softmax_in_place, GaussianSampler, Matrix, SeededRng, Vector};
use crate::reasoning::AugmentationDistribution;

/// Effective-number weight `ρ = (1 − γ) / (1 − γ^n)`.
pub fn class_weight(count: usize, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("class weight needs at least one sample".into()));
    }
    if count == 1 {
        return Ok(1.0);
    }
    // −expm1(n·ln γ) = 1 − γ^n without cancellation for γ near 1.
    let denom = -(count as f64 * gamma.ln()).exp_m1();
    Ok((1.0 - gamma) / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    rho: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights {
            rho: vec![1.0; num_classes],
        }
    }

    /// Effective-number weights for `counts`. Classes with zero samples get
    /// weight zero. With `normalize`, weights of populated classes are
    /// rescaled to average one.
    pub fn effective_number(counts: &[usize], gamma: f64, normalize: bool) -> Result<Self> {
        let mut rho = counts
            .iter()
            .map(|&n| if n == 0 { Ok(0.0) } else { class_weight(n, gamma) })
            .collect::<Result<Vec<_>>>()?;
        if normalize {
            let populated = counts.iter().filter(|&&n| n > 0).count();
            let total: f64 = rho.iter().sum();
            if total > 0.0 {
                rho.iter_mut().for_each(|r| *r *= populated as f64 / total);
            }
        }
        Ok(ClassWeights { rho })
    }

    pub fn get(&self, c: usize) -> f64 {
        self.rho[c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }
}

/// `σ = β (w_j − w_y)ᵀ Σ (w_j − w_y)`
pub fn sigma_ij(w_j: &[f64], w_y: &[f64], cov: &Matrix, beta: f64) -> Result<f64> {
    if w_j.len() != w_y.len() {
        return Err(Error::DimensionMismatch {
            context: "sigma_ij",
            expected: w_y.len(),
            actual: w_j.len(),
        });
    }
    let diff: Vec<f64> = w_j.iter().zip(w_y).map(|(a, b)| a - b).collect();
    Ok(beta * quadratic_form(&diff, cov)?)
}

/// Surrogate logits `Z` for one instance of class `y` (the mean shift and
/// covariance are taken from `dist`, i.e. already scaled by `α` and `β`).
pub fn surrogate_logits(
    logits: &[f64],
    weight: &Matrix,
    y: usize,
    dist: &AugmentationDistribution,
) -> Result<Vec<f64>> {
    let c = weight.rows();
    if logits.len() != c {
        return Err(Error::DimensionMismatch {
            context: "surrogate_logits: logits",
            expected: c,
            actual: logits.len(),
        });
    }
    if y >= c {
        return Err(Error::InvalidLabel {
            label: y,
            num_classes: c,
        });
    }
    if dist.dim() != weight.cols() {
        return Err(Error::DimensionMismatch {
            context: "surrogate_logits: distribution",
            expected: weight.cols(),
            actual: dist.dim(),
        });
    }
    let w_y = weight.row(y);
    let mut z = logits.to_vec();
    for (j, zj) in z.iter_mut().enumerate() {
        if j == y {
            continue;
        }
        let diff: Vec<f64> = weight.row(j).iter().zip(w_y).map(|(a, b)| a - b).collect();
        *zj += dot(&diff, dist.mean_shift.as_slice()) + 0.5 * quadratic_form(&diff, &dist.covariance)?;
    }
    Ok(z)
}

/// Per-instance surrogate bound `log Σ_j e^{Z_j} − Z_y`.
pub fn surrogate_sample_loss(
    logits: &[f64],
    weight: &Matrix,
    y: usize,
    dist: &AugmentationDistribution,
) -> Result<f64> {
    let z = surrogate_logits(logits, weight, y, dist)?;
    Ok(log_sum_exp(&z) - z[y])
}

/// Which class's reasoning prototype enters `Z_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuIndex {
    /// `μ^r` of the instance's own class; the form that equals the bound.
    #[default]
    Label,
    /// `μ^r` of the competing class `j`.
    Competitor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossOptions {
    pub reweight_on: bool,
    pub mu_index: MuIndex,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateLossResult {
    pub loss: f64,
    /// Surrogate logits, batch × C.
    pub z: Matrix,
    /// `∂L/∂ŷ` with `W` held fixed in the correction terms.
    pub grad_logits: Matrix,
    /// Total `∂L/∂W`, including the path through `ŷ = W f + b`.
    pub grad_w: Matrix,
    pub grad_b: Vec<f64>,
    /// Total `∂L/∂f`, batch × d.
    pub grad_features: Matrix,
}

/// Batch surrogate loss `(1/B) Σ_i ρ_{y_i} (log Σ_j e^{Z_ij} − Z_{i,y_i})`.
///
/// `dists[c]` is the augmentation of class `c`; a class present in the batch
/// without one is an error. With `reweight_on == false` every `ρ` is one.
#[allow(clippy::too_many_arguments)]
pub fn risda_loss(
    features: &Matrix,
    labels: &[usize],
    logits: &Matrix,
    weight: &Matrix,
    bias: &[f64],
    dists: &[Option<AugmentationDistribution>],
    weights: &ClassWeights,
    opts: LossOptions,
) -> Result<SurrogateLossResult> {
    let batch = labels.len();
    let c = weight.rows();
    let d = weight.cols();
    let shape_err = |context: &'static str, expected: usize, actual: usize| {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    };
    if batch == 0 {
        return Err(Error::Empty("risda_loss on an empty batch"));
    }
    if features.rows() != batch || features.cols() != d {
        return shape_err("risda_loss: features", batch * d, features.rows() * features.cols());
    }
    if logits.rows() != batch || logits.cols() != c {
        return shape_err("risda_loss: logits", batch * c, logits.rows() * logits.cols());
    }
    if bias.len() != c {
        return shape_err("risda_loss: bias", c, bias.len());
    }
    if dists.len() != c || weights.as_slice().len() != c {
        return shape_err("risda_loss: per-class inputs", c, dists.len());
    }

    // Per (label class y, competitor j): the constant correction added to
    // ŷ_j and the vector ∂corr/∂w_j = s + Σ_y (w_j − w_y).
    let mut corrections: Vec<Option<(Vec<f64>, Vec<Vec<f64>>)>> = vec![None; c];
    for &y in labels {
        if y >= c {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes: c,
            });
        }
        if corrections[y].is_some() {
            continue;
        }
        let dist = dists[y].as_ref().ok_or(Error::MissingStats(y))?;
        if dist.dim() != d {
            return shape_err("risda_loss: distribution", d, dist.dim());
        }
        let w_y = weight.row(y);
        let mut corr = vec![0.0; c];
        let mut dirs = vec![vec![0.0; d]; c];
        for j in 0..c {
            if j == y {
                continue;
            }
            let shift = match opts.mu_index {
                MuIndex::Label => dist.mean_shift.as_slice(),
                MuIndex::Competitor => match &dists[j] {
                    Some(other) => other.mean_shift.as_slice(),
                    None => &[][..],
                },
            };
            let diff: Vec<f64> = weight.row(j).iter().zip(w_y).map(|(a, b)| a - b).collect();
            let sigma_diff = dist.covariance.matvec(&diff)?;
            let shift_term = if shift.is_empty() { 0.0 } else { dot(&diff, shift) };
            corr[j] = shift_term + 0.5 * dot(&diff, &sigma_diff);
            let dir = &mut dirs[j];
            dir.copy_from_slice(&sigma_diff);
            if !shift.is_empty() {
                axpy(dir, 1.0, shift);
            }
        }
        corrections[y] = Some((corr, dirs));
    }

    let scale = 1.0 / batch as f64;
    let mut z = Matrix::zeros(batch, c);
    let mut grad_logits = Matrix::zeros(batch, c);
    let mut loss = 0.0;
    // Σ_i g_ij grouped by label, for the correction-term gradient.
    let mut grouped = vec![vec![0.0; c]; c];
    for (i, &y) in labels.iter().enumerate() {
        let (corr, _) = corrections[y].as_ref().expect("filled above");
        let zi = z.row_mut(i);
        for (j, zij) in zi.iter_mut().enumerate() {
            *zij = logits[(i, j)] + corr[j];
        }
        let rho = if opts.reweight_on { weights.get(y) } else { 1.0 };
        loss += rho * (log_sum_exp(zi) - zi[y]);
        let g = grad_logits.row_mut(i);
        g.copy_from_slice(z.row(i));
        softmax_in_place(g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= rho * scale);
        axpy(&mut grouped[y], 1.0, g);
    }
    loss *= scale;

    let mut grad_w = Matrix::zeros(c, d);
    let mut grad_b = vec![0.0; c];
    let mut grad_features = Matrix::zeros(batch, d);
    for i in 0..batch {
        let g = grad_logits.row(i);
        let f = features.row(i);
        let gf = grad_features.row_mut(i);
        for j in 0..c {
            if g[j] != 0.0 {
                axpy(grad_w.row_mut(j), g[j], f);
                axpy(gf, g[j], weight.row(j));
                grad_b[j] += g[j];
            }
        }
    }
    for (y, entry) in corrections.iter().enumerate() {
        let Some((_, dirs)) = entry else { continue };
        for j in 0..c {
            let gj = grouped[y][j];
            if j == y || gj == 0.0 {
                continue;
            }
            axpy(grad_w.row_mut(j), gj, &dirs[j]);
            axpy(grad_w.row_mut(y), -gj, &dirs[j]);
        }
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite("risda_loss"));
    }
    Ok(SurrogateLossResult {
        loss,
        z,
        grad_logits,
        grad_w,
        grad_b,
        grad_features,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossEntropyResult {
    pub loss: f64,
    pub grad_logits: Matrix,
}

/// Mean (optionally `ρ`-weighted) softmax cross-entropy over a batch.
pub fn cross_entropy(
    logits: &Matrix,
    labels: &[usize],
    weights: Option<&ClassWeights>,
) -> Result<CrossEntropyResult> {
    let batch = labels.len();
    if batch == 0 {
        return Err(Error::Empty("cross_entropy on an empty batch"));
    }
    if logits.rows() != batch {
        return Err(Error::DimensionMismatch {
            context: "cross_entropy",
            expected: batch,
            actual: logits.rows(),
        });
    }
    let c = logits.cols();
    let scale = 1.0 / batch as f64;
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes: c,
            });
        }
        let rho = weights.map_or(1.0, |w| w.get(y));
        let row = logits.row(i);
        loss += rho * (log_sum_exp(row) - row[y]);
        let g = grad.row_mut(i);
        softmax_in_place(g);
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= rho * scale);
    }
    Ok(CrossEntropyResult {
        loss: loss * scale,
        grad_logits: grad,
    })
}

/// Monte-Carlo mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    /// Shifted-data mean and standard error; identical samples give an
    /// exact mean and zero error.
    fn from_samples(values: &[f64]) -> Self {
        let m = values.len();
        let pivot = values[0];
        let (sum, sum_sq) = values.iter().fold((0.0, 0.0), |(s, q), v| {
            let dv = v - pivot;
            (s + dv, q + dv * dv)
        });
        let mean = pivot + sum / m as f64;
        let stderr = if m > 1 {
            let var = ((sum_sq - sum * sum / m as f64) / (m - 1) as f64).max(0.0);
            (var / m as f64).sqrt()
        } else {
            0.0
        };
        McEstimate { mean, stderr }
    }
}

fn check_classifier(feature: &[f64], weight: &Matrix, bias: &[f64], y: usize) -> Result<()> {
    if feature.len() != weight.cols() || bias.len() != weight.rows() {
        return Err(Error::DimensionMismatch {
            context: "classifier",
            expected: weight.cols(),
            actual: feature.len(),
        });
    }
    if y >= weight.rows() {
        return Err(Error::InvalidLabel {
            label: y,
            num_classes: weight.rows(),
        });
    }
    Ok(())
}

fn sampled_ce(
    sampler: &GaussianSampler,
    weight: &Matrix,
    bias: &[f64],
    y: usize,
    m: usize,
    rng: &mut SeededRng,
) -> McEstimate {
    let c = weight.rows();
    let mut draw = vec![0.0; sampler.dim()];
    let mut scratch = Vec::new();
    let mut logits = vec![0.0; c];
    let mut values = Vec::with_capacity(m);
    for _ in 0..m {
        sampler.sample_into(rng, &mut scratch, &mut draw);
        for (j, l) in logits.iter_mut().enumerate() {
            *l = dot(weight.row(j), &draw) + bias[j];
        }
        values.push(log_sum_exp(&logits) - logits[y]);
    }
    McEstimate::from_samples(&values)
}

/// Estimates `E[CE(W f̃ + b, y)]` for `f̃ ~ N(f + shift, cov)` from `m` draws.
pub fn mc_loss_oracle(
    feature: &[f64],
    y: usize,
    dist: &AugmentationDistribution,
    weight: &Matrix,
    bias: &[f64],
    m: usize,
    rng: &mut SeededRng,
) -> Result<McEstimate> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    check_classifier(feature, weight, bias, y)?;
    let mut mean = Vector::from(feature.to_vec());
    mean.axpy(1.0, &dist.mean_shift);
    let sampler = GaussianSampler::new(&mean, &dist.covariance)?;
    Ok(sampled_ce(&sampler, weight, bias, y, m, rng))
}

/// Empirical `E[e^{tX}]` for `X ~ N(μ, σ²)` next to `e^{tμ + σ²t²/2}`.
pub fn mgf_check(mu: f64, var: f64, t: f64, m: usize, rng: &mut SeededRng) -> Result<(f64, f64)> {
    if m == 0 || !(var >= 0.0) {
        return Err(Error::InvalidParameter("mgf_check needs m >= 1 and var >= 0".into()));
    }
    let sd = var.sqrt();
    let total: f64 = (0..m).map(|_| (t * (mu + sd * rng.normal())).exp()).sum();
    Ok((total / m as f64, (t * mu + 0.5 * var * t * t).exp()))
}

/// The explicit `M`-fold augmented loss: for every class present,
/// `(1/N_c) Σ_i (1/M) Σ_k CE(f_i^k)`, summed over classes. An instance
/// whose distribution is degenerate contributes its plain cross-entropy.
/// `stderr` combines the per-instance Monte-Carlo errors.
pub fn explicit_augment_loss(
    features: &Matrix,
    labels: &[usize],
    dists: &[AugmentationDistribution],
    m: usize,
    weight: &Matrix,
    bias: &[f64],
    rng: &mut SeededRng,
) -> Result<McEstimate> {
    if labels.len() != features.rows() || dists.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "explicit_augment_loss",
            expected: features.rows(),
            actual: labels.len().min(dists.len()),
        });
    }
    let c = weight.rows();
    let mut per_class = vec![0usize; c];
    for &y in labels {
        if y >= c {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes: c,
            });
        }
        per_class[y] += 1;
    }
    let mut total = 0.0;
    let mut var = 0.0;
    for (i, (&y, dist)) in labels.iter().zip(dists).enumerate() {
        let est = mc_loss_oracle(features.row(i), y, dist, weight, bias, m, rng)?;
        let n = per_class[y] as f64;
        total += est.mean / n;
        var += (est.stderr / n).powi(2);
    }
    Ok(McEstimate {
        mean: total,
        stderr: var.sqrt(),
    })
}

/// Surrogate counterpart of [`explicit_augment_loss`]: the same class-sum
/// weighting applied to per-instance surrogate bounds.
pub fn surrogate_class_sum(
    features: &Matrix,
    labels: &[usize],
    dists: &[AugmentationDistribution],
    weight: &Matrix,
    bias: &[f64],
) -> Result<f64> {
    let c = weight.rows();
    let mut per_class = vec![0usize; c];
    for &y in labels {
        if y >= c {
            return Err(Error::InvalidLabel {
                label: y,
                num_classes: c,
            });
        }
        per_class[y] += 1;
    }
    let mut total = 0.0;
    for (i, (&y, dist)) in labels.iter().zip(dists).enumerate() {
        let f = features.row(i);
        check_classifier(f, weight, bias, y)?;
        let logits: Vec<f64> = (0..c).map(|j| dot(weight.row(j), f) + bias[j]).collect();
        total += surrogate_sample_loss(&logits, weight, y, dist)? / per_class[y] as f64;
    }
    Ok(total)
}
