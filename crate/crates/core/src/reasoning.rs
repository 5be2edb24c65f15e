//! Reasoning-based prototypes and covariances, and the per-class Gaussian
//! augmentation distributions built from them.
//!
//! For a tail class `c` with transfer weights `ε_{c,i}` (i ≠ c):
//!
//! ```text
//! μ_c^r = Σ_i ε_{c,i} μ_i
//! Σ_c^r = Σ_i ε_{c,i} Σ_i
//! f̃ ~ N(f + α μ_c^r, β (Σ_c + Σ_c^r))
//! ```
//!
//! Head classes never receive transferred statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, WeightMode};
use crate::numeric::{psd_project, Matrix, Vector};
use crate::stats::StatsBank;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPolicy {
    /// The `k` most frequent classes are head (ties go to the lower index).
    TopK { k: usize },
    /// Classes with more than `threshold` samples are head.
    MinCount { threshold: usize },
}

impl HeadPolicy {
    /// `top_k = ⌈0.2·C⌉`.
    pub fn default_top_k(num_classes: usize) -> Self {
        HeadPolicy::TopK {
            k: (num_classes as f64 * 0.2).ceil() as usize,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadAugmentation {
    /// ISDA-style: `N(f, β Σ_c)`.
    #[default]
    OwnCovariance,
    /// No augmentation for head classes.
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleDirection {
    /// `α = α₀·t/T`
    #[default]
    RampUp,
    /// `α = α₀·(1 − t/T)`
    RampDown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassRole {
    Head,
    Tail,
}

/// Static augmentation hyper-parameters; the epoch is supplied separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub alpha0: f64,
    pub beta0: f64,
    /// Effective-number parameter for the class weights.
    pub gamma: f64,
    pub head_policy: HeadPolicy,
    pub head_augmentation: HeadAugmentation,
    pub schedule: ScheduleDirection,
    pub weight_mode: WeightMode,
    /// Transfer only the covariance (α forced to zero).
    pub covariance_only: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha0: 0.5,
            beta0: 0.75,
            gamma: 0.999,
            head_policy: HeadPolicy::default_top_k(10),
            head_augmentation: HeadAugmentation::OwnCovariance,
            schedule: ScheduleDirection::RampUp,
            weight_mode: WeightMode::Raw,
            covariance_only: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 >= 0.0 && self.beta0 >= 0.0) {
            return Err(Error::InvalidParameter("alpha0 and beta0 must be >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `(α, β)` at epoch `t` of `T`.
pub fn schedule(
    alpha0: f64,
    beta0: f64,
    t: usize,
    total: usize,
    direction: ScheduleDirection,
) -> Result<(f64, f64)> {
    if total == 0 || t > total {
        return Err(Error::InvalidParameter(format!(
            "schedule needs 0 <= t <= T with T > 0 (t = {t}, T = {total})"
        )));
    }
    let ramp = t as f64 / total as f64;
    let factor = match direction {
        ScheduleDirection::RampUp => ramp,
        ScheduleDirection::RampDown => 1.0 - ramp,
    };
    Ok((alpha0 * factor, beta0 * factor))
}

/// Assigns every class exactly one role.
pub fn head_partition(counts: &[usize], policy: HeadPolicy) -> Vec<ClassRole> {
    match policy {
        HeadPolicy::MinCount { threshold } => counts
            .iter()
            .map(|&n| if n > threshold { ClassRole::Head } else { ClassRole::Tail })
            .collect(),
        HeadPolicy::TopK { k } => {
            let mut order: Vec<usize> = (0..counts.len()).collect();
            order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            let mut roles = vec![ClassRole::Tail; counts.len()];
            for &c in order.iter().take(k) {
                roles[c] = ClassRole::Head;
            }
            roles
        }
    }
}

/// `μ_c^r = Σ_{i≠c} ε_{c,i} μ_i`, skipping classes without samples.
pub fn reasoning_prototype(
    c: usize,
    graph: &KnowledgeGraph,
    bank: &StatsBank,
    mode: WeightMode,
) -> Vector {
    let mut out = Vector::zeros(bank.dim());
    for (i, w) in graph.similarity_weights(c, mode).into_iter().enumerate() {
        if w != 0.0 && bank.class(i).count() > 0 {
            out.axpy(w, bank.class(i).prototype());
        }
    }
    out
}

/// `Σ_c^r = Σ_{i≠c} ε_{c,i} Σ_i`, skipping classes without samples.
pub fn reasoning_covariance(
    c: usize,
    graph: &KnowledgeGraph,
    bank: &StatsBank,
    mode: WeightMode,
) -> Matrix {
    let d = bank.dim();
    let mut out = Matrix::zeros(d, d);
    for (i, w) in graph.similarity_weights(c, mode).into_iter().enumerate() {
        if w != 0.0 && bank.class(i).count() > 0 {
            out.axpy(w, &bank.class(i).covariance())
                .expect("bank covariances share one dimension");
        }
    }
    out
}

/// `N(f + mean_shift, covariance)` relative to an instance feature `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationDistribution {
    pub mean_shift: Vector,
    pub covariance: Matrix,
    pub is_reasoning: bool,
}

impl AugmentationDistribution {
    pub fn zero(dim: usize) -> Self {
        AugmentationDistribution {
            mean_shift: Vector::zeros(dim),
            covariance: Matrix::zeros(dim, dim),
            is_reasoning: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_shift.dim()
    }
}

/// Unscaled ingredients of one class's augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassAugmentation {
    pub role: ClassRole,
    pub reasoning_prototype: Vector,
    pub own_covariance: Matrix,
    pub reasoning_covariance: Matrix,
}

/// Switches that shape a distribution independently of the statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentOptions {
    pub head_augmentation: HeadAugmentation,
    /// `false` drops `μ^r` and `Σ^r` (the ISDA ablation).
    pub reasoning_on: bool,
    pub covariance_only: bool,
}

impl ClassAugmentation {
    pub fn distribution(
        &self,
        alpha: f64,
        beta: f64,
        opts: AugmentOptions,
    ) -> Result<AugmentationDistribution> {
        let d = self.reasoning_prototype.dim();
        let mut dist = AugmentationDistribution::zero(d);
        match self.role {
            ClassRole::Head => {
                if opts.head_augmentation == HeadAugmentation::OwnCovariance {
                    dist.covariance = self.own_covariance.scaled(beta);
                }
            }
            ClassRole::Tail => {
                let mut cov = self.own_covariance.clone();
                if opts.reasoning_on {
                    cov.axpy(1.0, &self.reasoning_covariance)?;
                    if !opts.covariance_only {
                        dist.mean_shift = self.reasoning_prototype.clone();
                        dist.mean_shift.scale(alpha);
                    }
                    dist.is_reasoning = true;
                }
                cov.scale(beta);
                dist.covariance = cov;
            }
        }
        dist.covariance = psd_project(&dist.covariance, 0.0)?;
        Ok(dist)
    }
}

/// Per-class ingredients; `None` for classes without statistics.
pub fn class_augmentations(
    graph: &KnowledgeGraph,
    bank: &StatsBank,
    roles: &[ClassRole],
    mode: WeightMode,
) -> Result<Vec<Option<ClassAugmentation>>> {
    if graph.num_classes() != bank.num_classes() || roles.len() != bank.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "class_augmentations",
            expected: bank.num_classes(),
            actual: graph.num_classes().min(roles.len()),
        });
    }
    Ok((0..bank.num_classes())
        .map(|c| {
            (bank.class(c).count() > 0).then(|| ClassAugmentation {
                role: roles[c],
                reasoning_prototype: reasoning_prototype(c, graph, bank, mode),
                own_covariance: bank.class(c).covariance(),
                reasoning_covariance: reasoning_covariance(c, graph, bank, mode),
            })
        })
        .collect())
}

/// Resolves every class's distribution for one `(α, β)`.
pub fn class_distributions(
    augmentations: &[Option<ClassAugmentation>],
    alpha: f64,
    beta: f64,
    opts: AugmentOptions,
) -> Result<Vec<Option<AugmentationDistribution>>> {
    augmentations
        .iter()
        .map(|a| a.as_ref().map(|a| a.distribution(alpha, beta, opts)).transpose())
        .collect()
}

/// Distribution for an instance of class `c` at epoch `t` of `T`.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_for(
    c: usize,
    graph: &KnowledgeGraph,
    bank: &StatsBank,
    config: &AugmentConfig,
    t: usize,
    total: usize,
    reasoning_on: bool,
) -> Result<AugmentationDistribution> {
    if c >= bank.num_classes() {
        return Err(Error::InvalidLabel {
            label: c,
            num_classes: bank.num_classes(),
        });
    }
    let (alpha, beta) = schedule(config.alpha0, config.beta0, t, total, config.schedule)?;
    let roles = head_partition(&bank.counts(), config.head_policy);
    let aug = ClassAugmentation {
        role: roles[c],
        reasoning_prototype: reasoning_prototype(c, graph, bank, config.weight_mode),
        own_covariance: bank.class(c).covariance(),
        reasoning_covariance: reasoning_covariance(c, graph, bank, config.weight_mode),
    };
    aug.distribution(
        alpha,
        beta,
        AugmentOptions {
            head_augmentation: config.head_augmentation,
            reasoning_on,
            covariance_only: config.covariance_only,
        },
    )
}
