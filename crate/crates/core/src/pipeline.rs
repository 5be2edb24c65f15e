//! Two-stage training, evaluation, ablations and hyper-parameter sweeps.
//!
//! Stage I trains `F` and `H` with cross-entropy on the long-tailed data.
//! Stage II fine-tunes with the surrogate loss, refreshing class statistics
//! and the confusion graph from the current network on a fixed cadence.
//! A `(config, seed)` pair determines every number a run emits.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{load_csv, synthesize, Dataset, LongTailSpec};
use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::loss::{cross_entropy, risda_loss, ClassWeights, LossOptions, MuIndex};
use crate::net::{config_hash, sgd_step, MlpConfig, NetworkState, SgdConfig, UpdateScope};
use crate::numeric::SeededRng;
use crate::reasoning::{
    class_augmentations, class_distributions, head_partition, schedule, AugmentConfig,
    AugmentOptions, ClassRole,
};
use crate::stats::StatsBank;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(LongTailSpec),
    Csv { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    /// Recompute statistics and graph from the current network.
    #[default]
    Refresh,
    /// Keep the stage-I statistics and graph throughout stage II.
    Frozen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsConfig {
    pub mode: StatsMode,
    /// Stage-II epochs between refreshes.
    pub refresh_period: usize,
    /// Weight of the previous statistics when refreshing (0 = replace).
    pub ema_momentum: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            mode: StatsMode::Refresh,
            refresh_period: 1,
            ema_momentum: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub mlp: MlpConfig,
    pub sgd: SgdConfig,
    pub augment: AugmentConfig,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stats: StatsConfig,
    pub reweight_on: bool,
    pub reasoning_on: bool,
    /// Rescale class weights to average one.
    pub normalize_weights: bool,
    pub mu_index: MuIndex,
    /// Update only the classifier during stage II.
    pub freeze_features: bool,
    /// Start stage II with empty momentum buffers.
    pub reset_momentum: bool,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    /// The reference desk-scale setup.
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic(LongTailSpec::default()),
            mlp: MlpConfig::default(),
            sgd: SgdConfig::default(),
            augment: AugmentConfig::default(),
            stage1_epochs: 48,
            stage2_epochs: 12,
            stats: StatsConfig::default(),
            reweight_on: true,
            reasoning_on: true,
            normalize_weights: false,
            mu_index: MuIndex::Label,
            freeze_features: false,
            reset_momentum: false,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs + self.stage2_epochs != self.sgd.total_epochs {
            return Err(Error::InvalidParameter(format!(
                "stage1_epochs + stage2_epochs ({} + {}) must equal sgd.total_epochs ({})",
                self.stage1_epochs, self.stage2_epochs, self.sgd.total_epochs
            )));
        }
        if self.stats.refresh_period == 0 {
            return Err(Error::InvalidParameter("stats.refresh_period must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.stats.ema_momentum) {
            return Err(Error::InvalidParameter("stats.ema_momentum must lie in [0, 1]".into()));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        self.mlp.validate()?;
        self.sgd.validate()?;
        self.augment.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every settable key as a dotted path.
    pub fn keys(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        collect_leaves(&serde_json::to_value(self)?, String::new(), &mut out);
        Ok(out)
    }

    /// Applies `key=value` overrides. A key is a full dotted path or any
    /// unambiguous suffix of one (`beta0`, `sgd.base_lr`). Values are parsed
    /// as JSON, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut tree = serde_json::to_value(self)?;
        let keys = self.keys()?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("override {raw:?} is not of the form key=value"))
            })?;
            let key = key.trim();
            let matches: Vec<&String> = keys
                .iter()
                .filter(|k| *k == key || k.ends_with(&format!(".{key}")))
                .collect();
            let path = match matches.as_slice() {
                [one] => *one,
                [] => {
                    return Err(Error::InvalidParameter(format!(
                        "unknown config key `{key}`; valid keys: {}",
                        keys.join(", ")
                    )))
                }
                many => {
                    return Err(Error::InvalidParameter(format!(
                        "ambiguous config key `{key}`; use one of: {}",
                        many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                    )))
                }
            };
            let parsed: Value = serde_json::from_str(value.trim())
                .unwrap_or_else(|_| Value::String(value.trim().to_string()));
            let mut slot = &mut tree;
            for part in path.split('.') {
                slot = slot
                    .get_mut(part)
                    .expect("path comes from the serialized tree");
            }
            *slot = parsed;
        }
        serde_json::from_value(tree).map_err(|e| Error::InvalidParameter(format!("override: {e}")))
    }

    /// Loads the datasets and syncs the network's input and class dims.
    pub fn load_data(&self) -> Result<(ExperimentConfig, Data)> {
        let (train, test) = match &self.data {
            DataSource::Synthetic(spec) => synthesize(spec)?,
            DataSource::Csv { train, test } => {
                let classes = self.mlp.num_classes;
                (load_csv(train, Some(classes))?, load_csv(test, Some(classes))?)
            }
        };
        if train.input_dim() != test.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "train/test input dims",
                expected: train.input_dim(),
                actual: test.input_dim(),
            });
        }
        let mut resolved = self.clone();
        resolved.mlp.input_dim = train.input_dim();
        resolved.mlp.num_classes = train.num_classes();
        resolved.validate()?;
        Ok((resolved, Data { train, test }))
    }

    /// This config pinned to a single seed, as stored in a run directory.
    pub fn for_seed(&self, seed: u64) -> ExperimentConfig {
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.mlp.seed = seed;
        c
    }
}

fn collect_leaves(value: &Value, prefix: String, out: &mut Vec<String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                collect_leaves(v, path, out);
            }
        }
        _ => out.push(prefix),
    }
}

#[derive(Clone, Debug)]
pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
}

/// Ablation variants: the full method, the two rows of the ablation table,
/// and the plain cross-entropy baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Risda,
    WithoutReasoning,
    WithoutReweighting,
    CrossEntropy,
}

impl Variant {
    pub const ABLATION: [Variant; 3] = [
        Variant::Risda,
        Variant::WithoutReasoning,
        Variant::WithoutReweighting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Risda => "risda",
            Variant::WithoutReasoning => "without_reasoning",
            Variant::WithoutReweighting => "without_reweighting",
            Variant::CrossEntropy => "cross_entropy",
        }
    }

    pub fn apply(self, config: &ExperimentConfig) -> ExperimentConfig {
        let mut c = config.clone();
        match self {
            Variant::Risda => {
                c.reasoning_on = true;
                c.reweight_on = true;
            }
            Variant::WithoutReasoning => {
                c.reasoning_on = false;
                c.reweight_on = true;
            }
            Variant::WithoutReweighting => {
                c.reasoning_on = true;
                c.reweight_on = false;
            }
            Variant::CrossEntropy => {
                c.reasoning_on = false;
                c.reweight_on = false;
                c.augment.alpha0 = 0.0;
                c.augment.beta0 = 0.0;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub train_loss: f64,
    pub test_error: f64,
    pub head_error: f64,
    pub tail_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Percent.
    pub overall_error: f64,
    pub per_class_error: Vec<f64>,
    pub head_error: f64,
    pub tail_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub config_hash: String,
    pub overall_error: f64,
    pub per_class_error: Vec<f64>,
    pub head_error: f64,
    pub tail_error: f64,
    pub head_classes: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
    /// Interpretation switches in effect, for the experiment log.
    pub settings: RunSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub reweight_on: bool,
    pub reasoning_on: bool,
    pub schedule: crate::reasoning::ScheduleDirection,
    pub weight_mode: crate::graph::WeightMode,
    pub mu_index: MuIndex,
    pub stats_mode: StatsMode,
    pub head_augmentation: crate::reasoning::HeadAugmentation,
    pub covariance_only: bool,
}

impl RunSettings {
    fn of(config: &ExperimentConfig) -> Self {
        RunSettings {
            reweight_on: config.reweight_on,
            reasoning_on: config.reasoning_on,
            schedule: config.augment.schedule,
            weight_mode: config.augment.weight_mode,
            mu_index: config.mu_index,
            stats_mode: config.stats.mode,
            head_augmentation: config.augment.head_augmentation,
            covariance_only: config.augment.covariance_only,
        }
    }
}

/// Argmax error rates in percent; head/tail errors average the per-class
/// errors of each group.
pub fn evaluate(state: &NetworkState, dataset: &Dataset, roles: &[ClassRole]) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let c = state.config.num_classes;
    if roles.len() != c || dataset.num_classes() > c {
        return Err(Error::DimensionMismatch {
            context: "evaluate: classes",
            expected: c,
            actual: roles.len(),
        });
    }
    let predictions = predict(state, dataset)?;
    let mut wrong = vec![0usize; c];
    let mut total = vec![0usize; c];
    let mut wrong_all = 0;
    for (s, p) in dataset.samples().iter().zip(&predictions) {
        total[s.y] += 1;
        if *p != s.y {
            wrong[s.y] += 1;
            wrong_all += 1;
        }
    }
    let per_class: Vec<f64> = (0..c)
        .map(|k| {
            if total[k] == 0 {
                f64::NAN
            } else {
                100.0 * wrong[k] as f64 / total[k] as f64
            }
        })
        .collect();
    let group_mean = |role: ClassRole| {
        let vals: Vec<f64> = (0..c)
            .filter(|&k| roles[k] == role && total[k] > 0)
            .map(|k| per_class[k])
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    Ok(Evaluation {
        overall_error: 100.0 * wrong_all as f64 / dataset.len() as f64,
        head_error: group_mean(ClassRole::Head),
        tail_error: group_mean(ClassRole::Tail),
        per_class_error: per_class,
    })
}

pub fn predict(state: &NetworkState, dataset: &Dataset) -> Result<Vec<usize>> {
    dataset
        .samples()
        .iter()
        .map(|s| {
            let (_, logits) = state.forward(s.x.as_slice())?;
            Ok(argmax(&logits))
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Class statistics of the current features over the whole training set,
/// plus the confusion graph of the current classifier.
pub fn compute_stats(
    state: &NetworkState,
    train: &Dataset,
    batch_size: usize,
) -> Result<(StatsBank, KnowledgeGraph)> {
    let c = state.config.num_classes;
    let mut bank = StatsBank::new(c, state.config.feature_dim);
    let mut predicted = Vec::with_capacity(train.len());
    for chunk in train.samples().chunks(batch_size.max(1)) {
        let cache = state.forward_batch(chunk.iter().map(|s| s.x.as_slice()))?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.y).collect();
        bank.update_batch(&cache.features, &labels)?;
        predicted.extend((0..cache.logits.rows()).map(|i| argmax(cache.logits.row(i))));
    }
    let graph = KnowledgeGraph::build(&predicted, &train.labels(), c)?;
    Ok((bank, graph))
}

#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub state: NetworkState,
    pub bank: StatsBank,
    pub graph: KnowledgeGraph,
    pub epochs: Vec<EpochRecord>,
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::derive(seed, 0xe90c_0000 + epoch as u64).shuffle(&mut order);
    order
}

fn batch_inputs<'a>(train: &'a Dataset, idx: &'a [usize]) -> (Vec<&'a [f64]>, Vec<usize>) {
    let samples = train.samples();
    (
        idx.iter().map(|&i| samples[i].x.as_slice()).collect(),
        idx.iter().map(|&i| samples[i].y).collect(),
    )
}

fn record(
    state: &NetworkState,
    data: &Data,
    roles: &[ClassRole],
    epoch: usize,
    stage: u8,
    loss_sum: f64,
    seen: usize,
) -> Result<EpochRecord> {
    let train_loss = loss_sum / seen.max(1) as f64;
    if !train_loss.is_finite() || !state.params.is_finite() {
        return Err(Error::Diverged {
            epoch,
            loss: train_loss,
        });
    }
    let eval = evaluate(state, &data.test, roles)?;
    Ok(EpochRecord {
        epoch,
        stage,
        train_loss,
        test_error: eval.overall_error,
        head_error: eval.head_error,
        tail_error: eval.tail_error,
    })
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, loss })
    }
}

fn diverged(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged {
            epoch,
            loss: f64::NAN,
        },
        other => other,
    }
}

fn check_params(state: &NetworkState, loss: f64, epoch: usize) -> Result<()> {
    if state.params.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, loss })
    }
}

fn roles_for(config: &ExperimentConfig, train: &Dataset) -> Vec<ClassRole> {
    head_partition(train.class_counts(), config.augment.head_policy)
}

/// One cross-entropy epoch over shuffled mini-batches.
pub fn train_epoch_ce(
    state: &mut NetworkState,
    train: &Dataset,
    config: &ExperimentConfig,
    seed: u64,
    epoch: usize,
) -> Result<(f64, usize)> {
    let order = epoch_order(seed, epoch, train.len());
    let mut loss_sum = 0.0;
    for idx in order.chunks(config.sgd.batch_size) {
        let (xs, labels) = batch_inputs(train, idx);
        let cache = state.forward_batch(xs).map_err(|e| diverged(e, epoch))?;
        let ce = cross_entropy(&cache.logits, &labels, None).map_err(|e| diverged(e, epoch))?;
        let grads = state.backward(&cache, &ce.grad_logits, None)?;
        check_finite(ce.loss, epoch)?;
        sgd_step(state, &grads, epoch, &config.sgd, UpdateScope::All)?;
        check_params(state, ce.loss, epoch)?;
        loss_sum += ce.loss * idx.len() as f64;
    }
    Ok((loss_sum, train.len()))
}

/// Trains with plain cross-entropy for `stage1_epochs`, then estimates
/// class statistics and the confusion graph from the trained network.
pub fn run_stage1(config: &ExperimentConfig, seed: u64, data: &Data) -> Result<Stage1Output> {
    let mut state = NetworkState::new(config.for_seed(seed).mlp)?;
    let roles = roles_for(config, &data.train);
    let mut epochs = Vec::with_capacity(config.stage1_epochs);
    for epoch in 0..config.stage1_epochs {
        let (loss_sum, seen) = train_epoch_ce(&mut state, &data.train, config, seed, epoch)?;
        epochs.push(record(&state, data, &roles, epoch, 1, loss_sum, seen)?);
    }
    let (bank, graph) = compute_stats(&state, &data.train, config.sgd.batch_size)?;
    Ok(Stage1Output {
        state,
        bank,
        graph,
        epochs,
    })
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: NetworkState,
    pub bank: StatsBank,
    pub graph: KnowledgeGraph,
    pub report: MetricsReport,
}

/// Fine-tunes with the surrogate loss for `stage2_epochs` and reports on
/// the test split.
pub fn run_stage2(
    stage1: Stage1Output,
    config: &ExperimentConfig,
    seed: u64,
    data: &Data,
) -> Result<RunOutput> {
    let Stage1Output {
        mut state,
        mut bank,
        mut graph,
        mut epochs,
    } = stage1;
    if config.reset_momentum {
        state.reset_momentum();
    }
    let total = config.sgd.total_epochs;
    let counts = data.train.class_counts();
    let roles = roles_for(config, &data.train);
    let weights = ClassWeights::effective_number(counts, config.augment.gamma, config.normalize_weights)?;
    let opts = AugmentOptions {
        head_augmentation: config.augment.head_augmentation,
        reasoning_on: config.reasoning_on,
        covariance_only: config.augment.covariance_only,
    };
    let loss_opts = LossOptions {
        reweight_on: config.reweight_on,
        mu_index: config.mu_index,
    };
    let scope = if config.freeze_features {
        UpdateScope::ClassifierOnly
    } else {
        UpdateScope::All
    };

    for (k, epoch) in (config.stage1_epochs..total).enumerate() {
        let due = k > 0 && k % config.stats.refresh_period == 0;
        if config.stats.mode == StatsMode::Refresh && due {
            let (fresh, fresh_graph) = compute_stats(&state, &data.train, config.sgd.batch_size)?;
            bank = bank.ema_refresh(&fresh, config.stats.ema_momentum)?;
            graph = fresh_graph;
        }
        let (alpha, beta) = schedule(
            config.augment.alpha0,
            config.augment.beta0,
            epoch + 1,
            total,
            config.augment.schedule,
        )?;
        let augs = class_augmentations(&graph, &bank, &roles, config.augment.weight_mode)?;
        let dists = class_distributions(&augs, alpha, beta, opts)?;

        let order = epoch_order(seed, epoch, data.train.len());
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.sgd.batch_size) {
            let (xs, labels) = batch_inputs(&data.train, idx);
            let cache = state.forward_batch(xs).map_err(|e| diverged(e, epoch))?;
            let res = risda_loss(
                &cache.features,
                &labels,
                &cache.logits,
                state.classifier_weight(),
                state.classifier_bias(),
                &dists,
                &weights,
                loss_opts,
            )
            .map_err(|e| diverged(e, epoch))?;
            let mut grads = state.backward(&cache, &res.grad_logits, None)?;
            grads.classifier.weight = res.grad_w;
            grads.classifier.bias = res.grad_b;
            check_finite(res.loss, epoch)?;
            sgd_step(&mut state, &grads, epoch, &config.sgd, scope)?;
            check_params(&state, res.loss, epoch)?;
            loss_sum += res.loss * idx.len() as f64;
        }
        epochs.push(record(&state, data, &roles, epoch, 2, loss_sum, data.train.len())?);
    }

    let eval = evaluate(&state, &data.test, &roles)?;
    let report = MetricsReport {
        seed,
        config_hash: config_hash(&config.for_seed(seed))?,
        overall_error: eval.overall_error,
        per_class_error: eval.per_class_error,
        head_error: eval.head_error,
        tail_error: eval.tail_error,
        head_classes: (0..roles.len()).filter(|&c| roles[c] == ClassRole::Head).collect(),
        epochs,
        settings: RunSettings::of(config),
    };
    Ok(RunOutput {
        state,
        bank,
        graph,
        report,
    })
}

/// Stage I followed by stage II for one seed.
pub fn run(config: &ExperimentConfig, seed: u64, data: &Data) -> Result<RunOutput> {
    let stage1 = run_stage1(config, seed, data)?;
    run_stage2(stage1, config, seed, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and (n − 1) standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub overall: MeanStd,
    pub head: MeanStd,
    pub tail: MeanStd,
}

impl Summary {
    pub fn of(label: impl Into<String>, reports: &[MetricsReport]) -> Self {
        let pick = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Summary {
            label: label.into(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            overall: pick(|r| r.overall_error),
            head: pick(|r| r.head_error),
            tail: pick(|r| r.tail_error),
        }
    }
}

/// Runs `f` over `items` on a pool capped by `RISDA_THREADS`; results keep
/// the input order.
pub fn parallel_map<T, R, F>(items: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> Result<R> + Sync + Send,
{
    let threads = std::env::var("RISDA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| items.into_par_iter().map(f).collect())
}

/// Runs each variant for each seed, sharing stage I per seed.
pub fn run_variants(
    config: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    data: &Data,
) -> Result<Vec<Vec<RunOutput>>> {
    let per_seed = parallel_map(seeds.to_vec(), |seed| {
        let stage1 = run_stage1(config, seed, data)?;
        variants
            .iter()
            .map(|v| run_stage2(stage1.clone(), &v.apply(config), seed, data))
            .collect::<Result<Vec<_>>>()
    })?;
    // Regroup as [variant][seed].
    Ok((0..variants.len())
        .map(|v| per_seed.iter().map(|runs| runs[v].clone()).collect())
        .collect())
}

pub const DEFAULT_GRID: [f64; 6] = [0.25, 0.50, 0.75, 1.00, 1.25, 1.50];

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `cells[a][b]` holds one run per seed.
    pub cells: Vec<Vec<Vec<RunOutput>>>,
}

impl SweepResult {
    pub fn mean_errors(&self) -> Vec<Vec<MeanStd>> {
        self.cells
            .iter()
            .map(|row| {
                row.iter()
                    .map(|runs| MeanStd::of(&runs.iter().map(|r| r.report.overall_error).collect::<Vec<_>>()))
                    .collect()
            })
            .collect()
    }

    /// `(alpha index, beta index)` of the lowest mean error.
    pub fn best_cell(&self) -> (usize, usize) {
        let errs = self.mean_errors();
        let mut best = (0, 0);
        for (a, row) in errs.iter().enumerate() {
            for (b, cell) in row.iter().enumerate() {
                if cell.mean < errs[best.0][best.1].mean {
                    best = (a, b);
                }
            }
        }
        best
    }

    /// Whether the cell at `(alpha0, beta0)` is within one standard
    /// deviation of the best cell. `None` if the grid lacks that cell.
    pub fn within_one_std_of_best(&self, alpha0: f64, beta0: f64) -> Option<bool> {
        let a = self.alphas.iter().position(|&v| (v - alpha0).abs() < 1e-12)?;
        let b = self.betas.iter().position(|&v| (v - beta0).abs() < 1e-12)?;
        let errs = self.mean_errors();
        let (ba, bb) = self.best_cell();
        let cell = errs[a][b];
        let best = errs[ba][bb];
        Some(cell.mean - best.mean <= cell.std.max(best.std))
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("alpha0,beta0,mean_error,std_error,mean_tail_error,seeds\n");
        for (a, row) in self.cells.iter().enumerate() {
            for (b, runs) in row.iter().enumerate() {
                let overall = MeanStd::of(&runs.iter().map(|r| r.report.overall_error).collect::<Vec<_>>());
                let tail = MeanStd::of(&runs.iter().map(|r| r.report.tail_error).collect::<Vec<_>>());
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    self.alphas[a],
                    self.betas[b],
                    overall.mean,
                    overall.std,
                    tail.mean,
                    runs.len()
                );
            }
        }
        out
    }
}

/// One full run per `(α₀, β₀, seed)`; stage I is shared across the grid.
pub fn sweep(
    config: &ExperimentConfig,
    alphas: &[f64],
    betas: &[f64],
    seeds: &[u64],
    data: &Data,
) -> Result<SweepResult> {
    if alphas.is_empty() || betas.is_empty() || seeds.is_empty() {
        return Err(Error::Empty("sweep grid or seed list"));
    }
    let stage1 = parallel_map(seeds.to_vec(), |seed| run_stage1(config, seed, data))?;
    let mut jobs = Vec::new();
    for (a, &alpha) in alphas.iter().enumerate() {
        for (b, &beta) in betas.iter().enumerate() {
            for (s, &seed) in seeds.iter().enumerate() {
                jobs.push((a, b, s, alpha, beta, seed));
            }
        }
    }
    let outputs = parallel_map(jobs, |(_, _, s, alpha, beta, seed)| {
        let mut cell = config.clone();
        cell.augment.alpha0 = alpha;
        cell.augment.beta0 = beta;
        run_stage2(stage1[s].clone(), &cell, seed, data)
    })?;
    let mut iter = outputs.into_iter();
    let cells = (0..alphas.len())
        .map(|_| {
            (0..betas.len())
                .map(|_| (0..seeds.len()).map(|_| iter.next().expect("one output per job")).collect())
                .collect()
        })
        .collect();
    Ok(SweepResult {
        alphas: alphas.to_vec(),
        betas: betas.to_vec(),
        cells,
    })
}

/// Writes `run-<hash>/` with config, metrics, loss curve, stats and graph.
/// Returns the run directory.
pub fn write_run_dir(
    out: &Path,
    config: &ExperimentConfig,
    run: &RunOutput,
    force: bool,
) -> Result<PathBuf> {
    let seeded = config.for_seed(run.report.seed);
    let dir = out.join(format!("run-{}", config_hash(&seeded)?));
    if dir.exists() && !force {
        return Err(Error::OutputExists(dir));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    };
    write("config.json", seeded.to_json()? + "\n")?;
    write("metrics.json", serde_json::to_string_pretty(&run.report)? + "\n")?;
    write("loss_curve.csv", loss_curve_csv(&run.report.epochs))?;
    write("stats_dump.json", run.bank.to_dump_json()? + "\n")?;
    write("graph.csv", run.graph.to_csv())?;
    Ok(dir)
}

pub fn loss_curve_csv(epochs: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,test_error,head_error,tail_error\n");
    for e in epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            e.epoch, e.train_loss, e.test_error, e.head_error, e.tail_error
        );
    }
    out
}

/// CSV of per-label summaries (`label,overall_mean,…`).
pub fn summaries_csv(summaries: &[Summary]) -> String {
    let mut out = String::from(
        "label,overall_mean,overall_std,head_mean,head_std,tail_mean,tail_std,seeds\n",
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.label,
            s.overall.mean,
            s.overall.std,
            s.head.mean,
            s.head.std,
            s.tail.mean,
            s.tail.std,
            s.seeds.len()
        );
    }
    out
}

pub(crate) fn write_file(path: &Path, text: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.to_path_buf()));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// `train`: one run per seed, plus `summary.csv`.
pub fn train_command(config: &ExperimentConfig, seeds: &[u64], out: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let (resolved, data) = config.load_data()?;
    let runs = parallel_map(seeds.to_vec(), |seed| run(&resolved, seed, &data))?;
    let dirs = runs
        .iter()
        .map(|r| write_run_dir(out, &resolved, r, force))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<MetricsReport> = runs.into_iter().map(|r| r.report).collect();
    write_file(&out.join("summary.csv"), &summaries_csv(&[Summary::of("train", &reports)]), force)?;
    Ok(dirs)
}

/// `ablate`: the three ablation variants per seed, plus `summary.csv`.
pub fn ablate_command(config: &ExperimentConfig, seeds: &[u64], out: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let (resolved, data) = config.load_data()?;
    let grouped = run_variants(&resolved, &Variant::ABLATION, seeds, &data)?;
    let mut dirs = Vec::new();
    let mut summaries = Vec::new();
    for (variant, runs) in Variant::ABLATION.iter().zip(&grouped) {
        let vcfg = variant.apply(&resolved);
        for r in runs {
            dirs.push(write_run_dir(out, &vcfg, r, force)?);
        }
        let reports: Vec<MetricsReport> = runs.iter().map(|r| r.report.clone()).collect();
        summaries.push(Summary::of(variant.name(), &reports));
    }
    write_file(&out.join("summary.csv"), &summaries_csv(&summaries), force)?;
    Ok(dirs)
}

/// `sweep`: every grid cell per seed, plus `summary.csv` of mean errors.
pub fn sweep_command(
    config: &ExperimentConfig,
    alphas: &[f64],
    betas: &[f64],
    seeds: &[u64],
    out: &Path,
    force: bool,
) -> Result<SweepResult> {
    let (resolved, data) = config.load_data()?;
    let result = sweep(&resolved, alphas, betas, seeds, &data)?;
    for (a, row) in result.cells.iter().enumerate() {
        for (b, runs) in row.iter().enumerate() {
            let mut cell = resolved.clone();
            cell.augment.alpha0 = result.alphas[a];
            cell.augment.beta0 = result.betas[b];
            for r in runs {
                write_run_dir(out, &cell, r, force)?;
            }
        }
    }
    write_file(&out.join("summary.csv"), &result.summary_csv(), force)?;
    Ok(result)
}
