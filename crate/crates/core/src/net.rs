//! Feedforward feature extractor `F` with a linear classifier `H`, trained by
//! momentum SGD.
//!
//! `F` is a stack of dense layers: every hidden layer is followed by ReLU and
//! the last layer (to the feature dimension) is linear, so features are not
//! sign-constrained. The classifier computes `ŷ = W·f + b`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{axpy, dot, Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
    /// Uniform init range is `±init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 20,
            hidden_dims: vec![64, 64],
            feature_dim: 16,
            num_classes: 10,
            activation: Activation::Relu,
            init_scale: 3f64.sqrt(),
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim >= 1
            && self.feature_dim >= 1
            && self.num_classes >= 1
            && self.hidden_dims.iter().all(|&h| h >= 1);
        if !dims_ok {
            return Err(Error::InvalidParameter("all network dims must be >= 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidParameter("init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Layer widths of `F`, input first.
    fn feature_widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.feature_dim);
        w
    }
}

/// One affine layer `out = W·in + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    fn init(inputs: usize, outputs: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        let mut layer = Dense::zeros(inputs, outputs);
        for w in layer.weight.as_mut_slice() {
            *w = rng.uniform_range(-bound, bound);
        }
        layer
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            (0..self.outputs()).map(|o| dot(self.weight.row(o), input) + self.bias[o]),
        );
    }

    fn zeros_like(&self) -> Dense {
        Dense::zeros(self.inputs(), self.outputs())
    }
}

/// All trainable parameters. Also used for gradients and momentum buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub feature_layers: Vec<Dense>,
    pub classifier: Dense,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        Params {
            feature_layers: self.feature_layers.iter().map(Dense::zeros_like).collect(),
            classifier: self.classifier.zeros_like(),
        }
    }

    /// Every tensor as a flat mutable slice, in a fixed order.
    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.feature_layers.len() + 2);
        for layer in &mut self.feature_layers {
            out.push(layer.weight.as_mut_slice());
            out.push(layer.bias.as_mut_slice());
        }
        out.push(self.classifier.weight.as_mut_slice());
        out.push(self.classifier.bias.as_mut_slice());
        out
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.feature_layers.len() + 2);
        for layer in &self.feature_layers {
            out.push(layer.weight.as_slice());
            out.push(layer.bias.as_slice());
        }
        out.push(self.classifier.weight.as_slice());
        out.push(self.classifier.bias.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub config: MlpConfig,
    pub params: Params,
    pub momentum: Params,
}

/// Intermediate values of a batch forward pass, kept for backprop.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// `layer_inputs[l][i]` is the input of feature layer `l` for sample `i`.
    layer_inputs: Vec<Vec<Vec<f64>>>,
    /// Pre-activations of the hidden layers (ReLU masks).
    pre_activations: Vec<Vec<Vec<f64>>>,
    pub features: Matrix,
    pub logits: Matrix,
}

impl NetworkState {
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derive(config.seed, 0x1417);
        let widths = config.feature_widths();
        let feature_layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], config.init_scale, &mut rng))
            .collect();
        let classifier = Dense::init(
            config.feature_dim,
            config.num_classes,
            config.init_scale,
            &mut rng,
        );
        let params = Params {
            feature_layers,
            classifier,
        };
        let momentum = params.zeros_like();
        Ok(NetworkState {
            config,
            params,
            momentum,
        })
    }

    pub fn classifier_weight(&self) -> &Matrix {
        &self.params.classifier.weight
    }

    pub fn classifier_bias(&self) -> &[f64] {
        &self.params.classifier.bias
    }

    pub fn reset_momentum(&mut self) {
        self.momentum = self.params.zeros_like();
    }

    /// Features `f = F(x)` and logits `ŷ = W·f + b` for one input.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let mut next = Vec::new();
        let last = self.params.feature_layers.len() - 1;
        for (l, layer) in self.params.feature_layers.iter().enumerate() {
            layer.apply(&current, &mut next);
            if l < last {
                relu(&mut next);
            }
            std::mem::swap(&mut current, &mut next);
        }
        let mut logits = Vec::new();
        self.params.classifier.apply(&current, &mut logits);
        Ok((current, logits))
    }

    pub fn forward_batch<'a, I>(&self, inputs: I) -> Result<ForwardCache>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let layers = &self.params.feature_layers;
        let last = layers.len() - 1;
        let mut layer_inputs: Vec<Vec<Vec<f64>>> = vec![Vec::new(); layers.len()];
        let mut pre_activations: Vec<Vec<Vec<f64>>> = vec![Vec::new(); last];
        let mut features = Vec::new();
        let mut logits = Vec::new();
        let mut rows = 0;
        for x in inputs {
            self.check_input(x)?;
            let mut current = x.to_vec();
            for (l, layer) in layers.iter().enumerate() {
                let mut out = Vec::new();
                layer.apply(&current, &mut out);
                layer_inputs[l].push(current);
                if l < last {
                    pre_activations[l].push(out.clone());
                    relu(&mut out);
                }
                current = out;
            }
            let mut y = Vec::new();
            self.params.classifier.apply(&current, &mut y);
            features.extend_from_slice(&current);
            logits.extend_from_slice(&y);
            rows += 1;
        }
        Ok(ForwardCache {
            layer_inputs,
            pre_activations,
            features: Matrix::from_vec(rows, self.config.feature_dim, features)?,
            logits: Matrix::from_vec(rows, self.config.num_classes, logits)?,
        })
    }

    /// Backpropagates `∂L/∂ŷ` (batch×C) plus a direct `∂L/∂f` term
    /// (batch×d, for losses that also read the features) through `H` and `F`.
    ///
    /// Weight decay is not included; [`sgd_step`] adds it.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_logits: &Matrix,
        grad_features: Option<&Matrix>,
    ) -> Result<Params> {
        let batch = cache.logits.rows();
        let c = self.config.num_classes;
        let d = self.config.feature_dim;
        if grad_logits.rows() != batch || grad_logits.cols() != c {
            return Err(Error::DimensionMismatch {
                context: "backward: grad_logits",
                expected: batch * c,
                actual: grad_logits.rows() * grad_logits.cols(),
            });
        }
        if let Some(g) = grad_features {
            if g.rows() != batch || g.cols() != d {
                return Err(Error::DimensionMismatch {
                    context: "backward: grad_features",
                    expected: batch * d,
                    actual: g.rows() * g.cols(),
                });
            }
        }

        let mut grads = self.params.zeros_like();
        let w = &self.params.classifier.weight;
        // δ for the current layer output, per sample
        let mut delta: Vec<Vec<f64>> = Vec::with_capacity(batch);
        for i in 0..batch {
            let g = grad_logits.row(i);
            let f = cache.features.row(i);
            for (j, &gj) in g.iter().enumerate() {
                if gj != 0.0 {
                    axpy(grads.classifier.weight.row_mut(j), gj, f);
                    grads.classifier.bias[j] += gj;
                }
            }
            let mut df = match grad_features {
                Some(extra) => extra.row(i).to_vec(),
                None => vec![0.0; d],
            };
            for (j, &gj) in g.iter().enumerate() {
                if gj != 0.0 {
                    axpy(&mut df, gj, w.row(j));
                }
            }
            delta.push(df);
        }

        let layers = &self.params.feature_layers;
        for l in (0..layers.len()).rev() {
            if l < layers.len() - 1 {
                for (dl, pre) in delta.iter_mut().zip(&cache.pre_activations[l]) {
                    for (g, &z) in dl.iter_mut().zip(pre) {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                }
            }
            let layer = &layers[l];
            let grad = &mut grads.feature_layers[l];
            let mut next_delta = Vec::with_capacity(if l > 0 { batch } else { 0 });
            for (dl, input) in delta.iter().zip(&cache.layer_inputs[l]) {
                for (o, &g) in dl.iter().enumerate() {
                    if g != 0.0 {
                        axpy(grad.weight.row_mut(o), g, input);
                        grad.bias[o] += g;
                    }
                }
                if l > 0 {
                    let mut back = vec![0.0; layer.inputs()];
                    for (o, &g) in dl.iter().enumerate() {
                        if g != 0.0 {
                            axpy(&mut back, g, layer.weight.row(o));
                        }
                    }
                    next_delta.push(back);
                }
            }
            delta = next_delta;
        }
        Ok(grads)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                context: "forward: input",
                expected: self.config.input_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Pretty JSON dump of config, parameters, momentum and a config hash.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(&self.config)?,
            state: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&ckpt)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        if ckpt.config_hash != config_hash(&ckpt.state.config)? {
            return Err(Error::InvalidParameter("checkpoint config hash mismatch".into()));
        }
        let expected = NetworkState::new(ckpt.state.config.clone())?;
        let shapes_match = |a: &Params, b: &Params| {
            a.slices().iter().map(|s| s.len()).eq(b.slices().iter().map(|s| s.len()))
        };
        if !shapes_match(&ckpt.state.params, &expected.params)
            || !shapes_match(&ckpt.state.momentum, &expected.params)
        {
            return Err(Error::InvalidParameter(
                "checkpoint parameter shapes do not match its config".into(),
            ));
        }
        Ok(ckpt.state)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config_hash: String,
    state: NetworkState,
}

/// Short SHA-256 digest of any serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(hex::encode(&digest[..8]))
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 5,
            decay_epochs: vec![48, 54],
            decay_factor: 0.1,
            batch_size: 50,
            total_epochs: 60,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidParameter("base_lr must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter("momentum must be in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0 && self.decay_factor > 0.0) {
            return Err(Error::InvalidParameter(
                "weight_decay must be >= 0 and decay_factor > 0".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch: linear warmup, then step decay at
    /// each milestone already reached.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.base_lr * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let passed = self.decay_epochs.iter().filter(|&&m| epoch >= m).count();
        self.base_lr * self.decay_factor.powi(passed as i32)
    }
}

/// Which parameter groups an SGD step may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateScope {
    All,
    ClassifierOnly,
}

/// `v ← μ·v + g + λ·p;  p ← p − lr·v`
pub fn sgd_step(
    state: &mut NetworkState,
    grads: &Params,
    epoch: usize,
    config: &SgdConfig,
    scope: UpdateScope,
) -> Result<()> {
    if epoch >= config.total_epochs {
        return Err(Error::InvalidParameter(format!(
            "epoch {epoch} outside [0, {})",
            config.total_epochs
        )));
    }
    let lr = config.learning_rate(epoch);
    let n_feature_slices = 2 * state.params.feature_layers.len();
    let params = state.params.slices_mut();
    let momentum = state.momentum.slices_mut();
    let grads = grads.slices();
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            context: "sgd_step",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    for (k, ((p, v), g)) in params.into_iter().zip(momentum).zip(grads).enumerate() {
        if scope == UpdateScope::ClassifierOnly && k < n_feature_slices {
            continue;
        }
        if p.len() != g.len() {
            return Err(Error::DimensionMismatch {
                context: "sgd_step",
                expected: p.len(),
                actual: g.len(),
            });
        }
        for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = config.momentum * *vi + gi + config.weight_decay * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::cross_entropy;

    fn tiny_config(hidden: Vec<usize>, seed: u64) -> MlpConfig {
        MlpConfig {
            input_dim: 5,
            hidden_dims: hidden,
            feature_dim: 4,
            num_classes: 3,
            activation: Activation::Relu,
            init_scale: 1.5,
            seed,
        }
    }

    fn zero_params(state: &mut NetworkState) {
        for s in state.params.slices_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut state = NetworkState::new(tiny_config(vec![6], 1)).unwrap();
        zero_params(&mut state);
        let (f, y) = state.forward(&[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_linear_network_passes_input_through() {
        let config = MlpConfig {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            num_classes: 3,
            ..tiny_config(vec![], 0)
        };
        let mut state = NetworkState::new(config).unwrap();
        zero_params(&mut state);
        state.params.feature_layers[0].weight = Matrix::identity(3);
        state.params.classifier.weight = Matrix::identity(3);
        let x = [0.3, -1.2, 4.0];
        assert_eq!(state.forward(&x).unwrap().1, x.to_vec());
    }

    // Independent matrix-multiply chain used as an oracle for forward().
    fn reference_forward(state: &NetworkState, x: &[f64]) -> Vec<f64> {
        let layers = &state.params.feature_layers;
        let mut h: Vec<f64> = x.to_vec();
        for (l, layer) in layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs()];
            for o in 0..layer.outputs() {
                let mut acc = layer.bias[o];
                for i in 0..layer.inputs() {
                    acc += layer.weight[(o, i)] * h[i];
                }
                out[o] = if l + 1 < layers.len() { acc.max(0.0) } else { acc };
            }
            h = out;
        }
        let cls = &state.params.classifier;
        (0..cls.outputs())
            .map(|j| cls.bias[j] + (0..h.len()).map(|k| cls.weight[(j, k)] * h[k]).sum::<f64>())
            .collect()
    }

    #[test]
    fn forward_matches_reference_chain() {
        let state = NetworkState::new(tiny_config(vec![7, 6], 3)).unwrap();
        let mut rng = SeededRng::new(4);
        for _ in 0..10 {
            let x = rng.normal_vec(5);
            let (_, y) = state.forward(&x).unwrap();
            let expected = reference_forward(&state, &x);
            for (a, b) in y.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
            let cache = state.forward_batch([x.as_slice()]).unwrap();
            assert_eq!(cache.logits.row(0), y.as_slice());
        }
    }

    #[test]
    fn forward_rejects_wrong_dim() {
        let state = NetworkState::new(tiny_config(vec![], 0)).unwrap();
        assert!(state.forward(&[1.0]).is_err());
    }

    #[test]
    fn zero_gradients_give_zero_parameter_gradients() {
        let state = NetworkState::new(tiny_config(vec![6], 2)).unwrap();
        let x = vec![vec![0.1; 5], vec![-0.4; 5]];
        let cache = state.forward_batch(x.iter().map(Vec::as_slice)).unwrap();
        let grads = state
            .backward(&cache, &Matrix::zeros(2, 3), Some(&Matrix::zeros(2, 4)))
            .unwrap();
        assert!(grads.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let state = NetworkState::new(tiny_config(vec![], 2)).unwrap();
        let cache = state.forward_batch([[0.0; 5].as_slice()]).unwrap();
        assert!(state.backward(&cache, &Matrix::zeros(2, 3), None).is_err());
        assert!(state
            .backward(&cache, &Matrix::zeros(1, 3), Some(&Matrix::zeros(1, 3)))
            .is_err());
    }

    #[test]
    fn linear_model_ce_gradient_is_closed_form() {
        // With F the identity, ∂CE/∂W = (softmax(ŷ) − onehot)·xᵀ.
        let config = MlpConfig {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            num_classes: 4,
            ..tiny_config(vec![], 8)
        };
        let mut state = NetworkState::new(config).unwrap();
        state.params.feature_layers[0].weight = Matrix::identity(3);
        state.params.feature_layers[0].bias = vec![0.0; 3];
        let x = [0.7, -0.2, 1.1];
        let y = 2;
        let cache = state.forward_batch([x.as_slice()]).unwrap();
        let ce = cross_entropy(&cache.logits, &[y], None).unwrap();
        let grads = state.backward(&cache, &ce.grad_logits, None).unwrap();

        let logits = cache.logits.row(0);
        let max = logits.iter().copied().fold(f64::MIN, f64::max);
        let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        for j in 0..4 {
            let p = (logits[j] - max).exp() / z;
            let r = p - if j == y { 1.0 } else { 0.0 };
            for k in 0..3 {
                let g = grads.classifier.weight[(j, k)];
                assert!((g - r * x[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = SgdConfig {
            base_lr: 0.1,
            warmup_epochs: 5,
            decay_epochs: vec![160, 180],
            decay_factor: 0.01,
            total_epochs: 200,
            ..SgdConfig::default()
        };
        assert!((cfg.learning_rate(0) - 0.02).abs() < 1e-15);
        assert!((cfg.learning_rate(4) - 0.1).abs() < 1e-15);
        assert_eq!(cfg.learning_rate(159), 0.1);
        assert!((cfg.learning_rate(160) / cfg.learning_rate(159) - 0.01).abs() < 1e-12);
        assert!((cfg.learning_rate(180) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn plain_gradient_descent_step() {
        let mut state = NetworkState::new(tiny_config(vec![], 5)).unwrap();
        let before = state.params.clone();
        let mut grads = state.params.zeros_like();
        for s in grads.slices_mut() {
            s.iter_mut().for_each(|v| *v = 1.0);
        }
        let cfg = SgdConfig {
            base_lr: 0.5,
            momentum: 0.0,
            weight_decay: 0.0,
            warmup_epochs: 0,
            decay_epochs: vec![],
            total_epochs: 1,
            ..SgdConfig::default()
        };
        sgd_step(&mut state, &grads, 0, &cfg, UpdateScope::All).unwrap();
        for (a, b) in state.params.slices().iter().zip(before.slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - (y - 0.5)).abs() < 1e-15);
            }
        }

        let snapshot = state.params.clone();
        let zeros = state.params.zeros_like();
        sgd_step(&mut state, &zeros, 0, &cfg, UpdateScope::All).unwrap();
        assert_eq!(state.params, snapshot);
    }

    #[test]
    fn classifier_only_scope_freezes_features() {
        let mut state = NetworkState::new(tiny_config(vec![3], 5)).unwrap();
        let before = state.params.clone();
        let mut grads = state.params.zeros_like();
        for s in grads.slices_mut() {
            s.iter_mut().for_each(|v| *v = 1.0);
        }
        let cfg = SgdConfig {
            total_epochs: 1,
            warmup_epochs: 0,
            ..SgdConfig::default()
        };
        sgd_step(&mut state, &grads, 0, &cfg, UpdateScope::ClassifierOnly).unwrap();
        assert_eq!(state.params.feature_layers, before.feature_layers);
        assert_ne!(state.params.classifier, before.classifier);
        assert!(sgd_step(&mut state, &grads, 1, &cfg, UpdateScope::All).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let state = NetworkState::new(tiny_config(vec![6, 5], 12)).unwrap();
        let first = state.to_checkpoint_json().unwrap();
        let loaded = NetworkState::from_checkpoint_json(&first).unwrap();
        assert_eq!(loaded, state);
        assert_eq!(loaded.to_checkpoint_json().unwrap(), first);
    }

    #[test]
    fn checkpoint_rejects_tampered_config() {
        let state = NetworkState::new(tiny_config(vec![6], 12)).unwrap();
        let text = state
            .to_checkpoint_json()
            .unwrap()
            .replace("\"feature_dim\": 4", "\"feature_dim\": 5");
        assert!(NetworkState::from_checkpoint_json(&text).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a = NetworkState::new(tiny_config(vec![6], 77)).unwrap();
        let b = NetworkState::new(tiny_config(vec![6], 77)).unwrap();
        let c = NetworkState::new(tiny_config(vec![6], 78)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
