//! Brute-force oracle checks of the analytic machinery.
//!
//! Every check draws its own random instances from a seed and compares the
//! library against an independent computation: Monte-Carlo sampling, a
//! textbook cross-entropy, central finite differences or two-pass
//! statistics. [`Mutation`] deliberately corrupts one quantity so that the
//! checks can be shown to catch errors.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::KnowledgeGraph;
use crate::loss::{
    cross_entropy, mc_loss_oracle, mgf_check, risda_loss, surrogate_logits, ClassWeights,
    LossOptions, MuIndex,
};
use crate::net::{Activation, MlpConfig, NetworkState};
use crate::numeric::{log_sum_exp, random_psd, Matrix, SeededRng, Vector};
use crate::reasoning::AugmentationDistribution;
use crate::stats::StatsBank;

/// Corruptions used to confirm the checks are sensitive.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    #[default]
    None,
    /// Subtract instead of add `σ/2` in the surrogate logits.
    FlipSigmaSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub jensen_instances: usize,
    pub jensen_draws: usize,
    pub mgf_cases: usize,
    pub mgf_draws: usize,
    pub random_cases: usize,
    pub mutation: Mutation,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            jensen_instances: 200,
            jensen_draws: 100_000,
            mgf_cases: 20,
            mgf_draws: 1_000_000,
            random_cases: 100,
            mutation: Mutation::None,
        }
    }
}

impl VerifyOptions {
    /// Fewer instances and draws, for smoke runs.
    pub fn quick(seed: u64) -> Self {
        VerifyOptions {
            seed,
            jensen_instances: 20,
            jensen_draws: 20_000,
            mgf_cases: 5,
            mgf_draws: 200_000,
            random_cases: 10,
            mutation: Mutation::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed deviation, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, cases: usize, failures: usize, worst: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: failures == 0,
            cases,
            failures,
            worst,
            tolerance,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}/{} cases ok, worst {:.3e} (tol {:.1e}){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases - self.failures,
            self.cases,
            self.worst,
            self.tolerance,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" - {}", self.detail)
            }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub options: VerifyOptions,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

pub const CHECK_NAMES: [&str; 8] = [
    "jensen_bound",
    "mgf_identity",
    "ce_degeneration",
    "surrogate_identity",
    "loss_gradients",
    "network_gradients",
    "stats_merge",
    "graph_rows",
];

/// Runs every named check.
pub fn run_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let checks = CHECK_NAMES
        .iter()
        .map(|name| run_check(name, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        options: opts.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Runs one check by name; unknown names are an error.
pub fn run_check(name: &str, opts: &VerifyOptions) -> Result<CheckResult> {
    match name {
        "jensen_bound" => jensen_bound(opts),
        "mgf_identity" => mgf_identity(opts),
        "ce_degeneration" => ce_degeneration(opts),
        "surrogate_identity" => surrogate_identity(opts),
        "loss_gradients" => loss_gradients(opts),
        "network_gradients" => network_gradients(opts),
        "stats_merge" => stats_merge(opts),
        "graph_rows" => graph_rows(opts),
        other => Err(crate::Error::InvalidParameter(format!(
            "unknown check `{other}`; valid checks: {}",
            CHECK_NAMES.join(", ")
        ))),
    }
}

fn rng_for(opts: &VerifyOptions, stream: u64) -> SeededRng {
    SeededRng::derive(opts.seed, 0x7e41_0000 + stream)
}

struct Instance {
    feature: Vec<f64>,
    y: usize,
    weight: Matrix,
    bias: Vec<f64>,
    dist: AugmentationDistribution,
}

fn random_instance(rng: &mut SeededRng, c: usize, d: usize) -> Result<Instance> {
    let mut shift = Vector::from(rng.normal_vec(d));
    shift.scale(0.5);
    let cov_scale = rng.uniform_range(0.1, 1.0);
    Ok(Instance {
        feature: rng.normal_vec(d),
        y: rng.below(c),
        weight: Matrix::from_vec(c, d, rng.normal_vec(c * d))?,
        bias: rng.normal_vec(c),
        dist: AugmentationDistribution {
            mean_shift: shift,
            covariance: random_psd(d, cov_scale, rng),
            is_reasoning: true,
        },
    })
}

fn logits_of(weight: &Matrix, bias: &[f64], feature: &[f64]) -> Vec<f64> {
    (0..weight.rows())
        .map(|j| weight.row(j).iter().zip(feature).map(|(w, f)| w * f).sum::<f64>() + bias[j])
        .collect()
}

/// The surrogate must upper-bound the Monte-Carlo expected loss:
/// `bound ≥ mean − 3·stderr` on every instance.
pub fn jensen_bound(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 1);
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..opts.jensen_instances {
        let c = if k % 2 == 0 { 3 } else { 5 };
        let d = if (k / 2) % 2 == 0 { 4 } else { 8 };
        let inst = random_instance(&mut rng, c, d)?;
        let logits = logits_of(&inst.weight, &inst.bias, &inst.feature);
        let bound_dist = match opts.mutation {
            Mutation::None => inst.dist.clone(),
            Mutation::FlipSigmaSign => AugmentationDistribution {
                covariance: inst.dist.covariance.scaled(-1.0),
                ..inst.dist.clone()
            },
        };
        let z = surrogate_logits(&logits, &inst.weight, inst.y, &bound_dist)?;
        let bound = log_sum_exp(&z) - z[inst.y];
        let mc = mc_loss_oracle(
            &inst.feature,
            inst.y,
            &inst.dist,
            &inst.weight,
            &inst.bias,
            opts.jensen_draws,
            &mut rng,
        )?;
        // Violation in units of the Monte-Carlo standard error.
        let excess = (mc.mean - bound) / mc.stderr.max(f64::MIN_POSITIVE);
        worst = worst.max(excess);
        if mc.mean - 3.0 * mc.stderr > bound {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "jensen_bound",
        opts.jensen_instances,
        failures,
        worst,
        3.0,
        format!("M = {} draws per instance; worst is (mc mean - bound) / stderr", opts.jensen_draws),
    ))
}

/// `E[e^{tX}]` for `X ~ N(μ, σ²)` against the closed form, within 1%.
pub fn mgf_identity(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 2);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.mgf_cases {
        let mu = rng.uniform_range(-1.0, 1.0);
        let var = rng.uniform_range(0.0, 1.0);
        let t = rng.uniform_range(-1.0, 1.0);
        let (emp, analytic) = mgf_check(mu, var, t, opts.mgf_draws, &mut rng)?;
        let rel = (emp - analytic).abs() / analytic;
        worst = worst.max(rel);
        if rel > 0.01 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "mgf_identity",
        opts.mgf_cases,
        failures,
        worst,
        0.01,
        format!("M = {} draws per case, relative error", opts.mgf_draws),
    ))
}

fn textbook_ce(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|v| (v - m).exp()).sum();
        total += m + denom.ln() - row[y];
    }
    total / labels.len() as f64
}

struct Batch {
    features: Matrix,
    labels: Vec<usize>,
    weight: Matrix,
    bias: Vec<f64>,
    dists: Vec<Option<AugmentationDistribution>>,
    rho: ClassWeights,
}

impl Batch {
    fn random(rng: &mut SeededRng, batch: usize, c: usize, d: usize, zero_dists: bool) -> Result<Self> {
        let dists = (0..c)
            .map(|_| {
                Some(if zero_dists {
                    AugmentationDistribution::zero(d)
                } else {
                    let mut shift = Vector::from(rng.normal_vec(d));
                    shift.scale(0.4);
                    AugmentationDistribution {
                        mean_shift: shift,
                        covariance: random_psd(d, 0.6, rng),
                        is_reasoning: true,
                    }
                })
            })
            .collect();
        let counts: Vec<usize> = (0..c).map(|_| 1 + rng.below(200)).collect();
        Ok(Batch {
            features: Matrix::from_vec(batch, d, rng.normal_vec(batch * d))?,
            labels: (0..batch).map(|_| rng.below(c)).collect(),
            weight: Matrix::from_vec(c, d, rng.normal_vec(c * d))?,
            bias: rng.normal_vec(c),
            dists,
            rho: ClassWeights::effective_number(&counts, 0.99, false)?,
        })
    }

    fn logits(&self) -> Matrix {
        let mut out = Matrix::zeros(self.features.rows(), self.weight.rows());
        for i in 0..self.features.rows() {
            let l = logits_of(&self.weight, &self.bias, self.features.row(i));
            out.row_mut(i).copy_from_slice(&l);
        }
        out
    }

    fn loss(&self, opts: LossOptions) -> Result<crate::loss::SurrogateLossResult> {
        risda_loss(
            &self.features,
            &self.labels,
            &self.logits(),
            &self.weight,
            &self.bias,
            &self.dists,
            &self.rho,
            opts,
        )
    }
}

/// With no augmentation and no reweighting the surrogate is plain
/// cross-entropy.
pub fn ce_degeneration(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 3);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.random_cases {
        let c = 2 + rng.below(6);
        let d = 1 + rng.below(8);
        let size = 1 + rng.below(16);
        let batch = Batch::random(&mut rng, size, c, d, true)?;
        let got = batch
            .loss(LossOptions {
                reweight_on: false,
                mu_index: MuIndex::Label,
            })?
            .loss;
        let err = (got - textbook_ce(&batch.logits(), &batch.labels)).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "ce_degeneration",
        opts.random_cases,
        failures,
        worst,
        1e-12,
        "absolute difference to a textbook cross-entropy".into(),
    ))
}

/// Cross-entropy over the surrogate logits equals `log Σ_j e^{A_j}` with
/// `A_j = (w_j − w_y)ᵀ(f + s) + (b_j − b_y) + ½(w_j − w_y)ᵀΣ(w_j − w_y)`.
pub fn surrogate_identity(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 4);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.random_cases {
        let c = 2 + rng.below(5);
        let d = 1 + rng.below(8);
        let inst = random_instance(&mut rng, c, d)?;
        let logits = logits_of(&inst.weight, &inst.bias, &inst.feature);
        let z = surrogate_logits(&logits, &inst.weight, inst.y, &inst.dist)?;
        let via_z = log_sum_exp(&z) - z[inst.y];

        let y = inst.y;
        let mut sum_exp = 0.0;
        for j in 0..c {
            let mut a = inst.bias[j] - inst.bias[y];
            let mut quad = 0.0;
            for k in 0..d {
                let dk = inst.weight[(j, k)] - inst.weight[(y, k)];
                a += dk * (inst.feature[k] + inst.dist.mean_shift[k]);
                for l in 0..d {
                    let dl = inst.weight[(j, l)] - inst.weight[(y, l)];
                    quad += dk * inst.dist.covariance[(k, l)] * dl;
                }
            }
            sum_exp += (a + 0.5 * quad).exp();
        }
        let err = (via_z - sum_exp.ln()).abs();
        worst = worst.max(err);
        if err > 1e-12 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "surrogate_identity",
        opts.random_cases,
        failures,
        worst,
        1e-12,
        "label-class reasoning prototype in every competitor term".into(),
    ))
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

const FD_STEP: f64 = 1e-5;

/// Central differences of the surrogate loss in logits, `W`, `b` and the
/// features, in both reasoning-prototype conventions.
pub fn loss_gradients(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 5);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let h = FD_STEP;
    for case in 0..opts.random_cases {
        let c = 2 + rng.below(4);
        let d = 1 + rng.below(5);
        let size = 1 + rng.below(5);
        let batch = Batch::random(&mut rng, size, c, d, false)?;
        let lopts = LossOptions {
            reweight_on: case % 2 == 0,
            mu_index: if case % 4 == 3 { MuIndex::Competitor } else { MuIndex::Label },
        };
        let res = batch.loss(lopts)?;
        let mut case_worst: f64 = 0.0;

        let logits = batch.logits();
        for i in 0..logits.rows() {
            for j in 0..logits.cols() {
                let eval = |delta: f64| -> Result<f64> {
                    let mut l = logits.clone();
                    l[(i, j)] += delta;
                    Ok(risda_loss(
                        &batch.features,
                        &batch.labels,
                        &l,
                        &batch.weight,
                        &batch.bias,
                        &batch.dists,
                        &batch.rho,
                        lopts,
                    )?
                    .loss)
                };
                let num = (eval(h)? - eval(-h)?) / (2.0 * h);
                case_worst = case_worst.max(rel_err(res.grad_logits[(i, j)], num));
            }
        }
        let mut probe = |edit: &dyn Fn(&mut Batch, f64), analytic: f64| -> Result<()> {
            let mut plus = clone_batch(&batch);
            let mut minus = clone_batch(&batch);
            edit(&mut plus, h);
            edit(&mut minus, -h);
            let num = (plus.loss(lopts)?.loss - minus.loss(lopts)?.loss) / (2.0 * h);
            case_worst = case_worst.max(rel_err(analytic, num));
            Ok(())
        };
        for j in 0..c {
            for k in 0..d {
                probe(&|b, dl| b.weight[(j, k)] += dl, res.grad_w[(j, k)])?;
            }
            probe(&|b, dl| b.bias[j] += dl, res.grad_b[j])?;
        }
        for i in 0..batch.features.rows() {
            for k in 0..d {
                probe(&|b, dl| b.features[(i, k)] += dl, res.grad_features[(i, k)])?;
            }
        }
        worst = worst.max(case_worst);
        if case_worst >= 1e-5 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "loss_gradients",
        opts.random_cases,
        failures,
        worst,
        1e-5,
        "relative error of logits, W, b and feature gradients".into(),
    ))
}

fn clone_batch(b: &Batch) -> Batch {
    Batch {
        features: b.features.clone(),
        labels: b.labels.clone(),
        weight: b.weight.clone(),
        bias: b.bias.clone(),
        dists: b.dists.clone(),
        rho: b.rho.clone(),
    }
}

fn network_ce(state: &NetworkState, inputs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let cache = state.forward_batch(inputs.iter().map(|x| x.as_slice()))?;
    Ok(cross_entropy(&cache.logits, labels, None)?.loss)
}

/// Central differences of the cross-entropy through the whole network.
pub fn network_gradients(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 6);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let h = FD_STEP;
    for _ in 0..opts.random_cases {
        let c = 2 + rng.below(3);
        let config = MlpConfig {
            input_dim: 1 + rng.below(4),
            hidden_dims: (0..rng.below(3)).map(|_| 2 + rng.below(4)).collect(),
            feature_dim: 1 + rng.below(4),
            num_classes: c,
            activation: Activation::Relu,
            init_scale: 3f64.sqrt(),
            seed: rng.below(1 << 30) as u64,
        };
        let mut state = NetworkState::new(config.clone())?;
        // Fresh layers have zero biases, which puts units fed only by dead
        // ReLUs exactly on the kink; nonzero biases keep instances smooth.
        for layer in state.params.feature_layers.iter_mut() {
            layer.bias = rng.normal_vec(layer.bias.len());
        }
        let batch = 1 + rng.below(4);
        let inputs: Vec<Vec<f64>> = (0..batch).map(|_| rng.normal_vec(config.input_dim)).collect();
        let labels: Vec<usize> = (0..batch).map(|_| rng.below(c)).collect();

        let cache = state.forward_batch(inputs.iter().map(|x| x.as_slice()))?;
        let ce = cross_entropy(&cache.logits, &labels, None)?;
        let grads = state.backward(&cache, &ce.grad_logits, None)?;
        let analytic: Vec<f64> = grads.slices().iter().flat_map(|s| s.iter().copied()).collect();

        let mut numeric = Vec::with_capacity(analytic.len());
        let sizes: Vec<usize> = state.params.slices().iter().map(|s| s.len()).collect();
        for (block, &len) in sizes.iter().enumerate() {
            for k in 0..len {
                let original = state.params.slices()[block][k];
                state.params.slices_mut()[block][k] = original + h;
                let plus = network_ce(&state, &inputs, &labels)?;
                state.params.slices_mut()[block][k] = original - h;
                let minus = network_ce(&state, &inputs, &labels)?;
                state.params.slices_mut()[block][k] = original;
                numeric.push((plus - minus) / (2.0 * h));
            }
        }
        let case_worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| rel_err(a, n))
            .fold(0.0, f64::max);
        worst = worst.max(case_worst);
        if case_worst >= 1e-5 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "network_gradients",
        opts.random_cases,
        failures,
        worst,
        1e-5,
        "relative error over every network parameter under cross-entropy".into(),
    ))
}

/// Streaming statistics over a random three-way split against two-pass
/// mean and unbiased covariance.
pub fn stats_merge(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 7);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.random_cases {
        let c = 1 + rng.below(4);
        let d = 1 + rng.below(6);
        let n = 3 + rng.below(60);
        let offset = rng.uniform_range(-5.0, 5.0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| rng.normal_vec(d).into_iter().map(|v| 3.0 * v + offset).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let mut cuts = [rng.below(n + 1), rng.below(n + 1)];
        cuts.sort_unstable();

        let mut bank = StatsBank::new(c, d);
        for (lo, hi) in [(0, cuts[0]), (cuts[0], cuts[1]), (cuts[1], n)] {
            if lo == hi {
                continue;
            }
            let flat: Vec<f64> = rows[lo..hi].iter().flatten().copied().collect();
            bank.update_batch(&Matrix::from_vec(hi - lo, d, flat)?, &labels[lo..hi])?;
        }

        let mut case_worst: f64 = 0.0;
        for k in 0..c {
            let members: Vec<&Vec<f64>> = rows.iter().zip(&labels).filter(|(_, &y)| y == k).map(|(r, _)| r).collect();
            let stats = bank.class(k);
            if members.is_empty() {
                if stats.count() != 0 {
                    case_worst = f64::INFINITY;
                }
                continue;
            }
            let m = members.len() as f64;
            let mean: Vec<f64> = (0..d).map(|a| members.iter().map(|r| r[a]).sum::<f64>() / m).collect();
            for a in 0..d {
                case_worst = case_worst.max((stats.prototype()[a] - mean[a]).abs());
            }
            let cov = stats.covariance();
            for a in 0..d {
                for b in 0..d {
                    let expect = if members.len() > 1 {
                        members.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (m - 1.0)
                    } else {
                        0.0
                    };
                    case_worst = case_worst.max((cov[(a, b)] - expect).abs());
                }
            }
        }
        worst = worst.max(case_worst);
        if case_worst > 1e-10 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "stats_merge",
        opts.random_cases,
        failures,
        worst,
        1e-10,
        "max-norm difference of prototypes and covariances".into(),
    ))
}

/// Rows of the confusion graph of populated classes sum to one.
pub fn graph_rows(opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = rng_for(opts, 8);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..opts.random_cases {
        let c = 2 + rng.below(10);
        let n = 1 + rng.below(500);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let graph = KnowledgeGraph::build(&pred, &truth, c)?;
        let mut case_worst: f64 = 0.0;
        for i in 0..c {
            let sum: f64 = graph.matrix().row(i).iter().sum();
            let expect = if truth.contains(&i) { 1.0 } else { 0.0 };
            case_worst = case_worst.max((sum - expect).abs());
        }
        worst = worst.max(case_worst);
        if case_worst > 1e-12 {
            failures += 1;
        }
    }
    Ok(CheckResult::new(
        "graph_rows",
        opts.random_cases,
        failures,
        worst,
        1e-12,
        "row sums of populated classes minus one".into(),
    ))
}
