//! The 10-learnable-layer network: 8 strided 1D convolutions (the first
//! with plain ReLU, the rest with batch norm and LeakyReLU) downsample the
//! window to a single time step, then two dense layers with dropout in
//! between produce the 2-class logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    activation_backward, activation_forward, batchnorm1d_backward, batchnorm1d_forward,
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, dropout_backward,
    dropout_forward, same_padding, Activation, BatchNormCache, Conv1dCache, DenseCache,
};
pub use crate::nn::layers::Mode;
use crate::nn::tensor::Tensor;
use crate::prng::Prng;

/// Full-scale conv channel ladder; an `arch_scale` divisor shrinks it for
/// tests (e.g. 4 → quarter scale).
const CONV_CHANNELS: [usize; 8] = [32, 64, 128, 256, 256, 512, 512, 1024];
const DENSE_HIDDEN: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub window_len: usize,
    pub in_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_width: usize,
    pub conv_stride: usize,
    pub dense_hidden: usize,
    pub num_classes: usize,
    pub keep_prob: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelSpec {
    /// The default architecture for a given window length, optionally
    /// shrunk by an integer scale divisor (1 = full size).
    pub fn scaled(window_len: usize, in_channels: usize, arch_scale: usize, keep_prob: f64) -> Self {
        let scale = arch_scale.max(1);
        ModelSpec {
            window_len,
            in_channels,
            conv_channels: CONV_CHANNELS.iter().map(|&c| (c / scale).max(1)).collect(),
            kernel_width: 9,
            conv_stride: 2,
            dense_hidden: (DENSE_HIDDEN / scale).max(1),
            num_classes: 2,
            keep_prob,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2
            || self.in_channels == 0
            || self.conv_channels.is_empty()
            || self.conv_channels.contains(&0)
            || self.kernel_width == 0
            || self.conv_stride == 0
            || self.dense_hidden == 0
            || self.num_classes < 2
        {
            return Err(Error::Config("invalid model spec dimensions".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep_prob must be in (0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.bn_eps <= 0.0 {
            return Err(Error::Config("bn_eps must be positive".into()));
        }
        Ok(())
    }

    /// Time length after all conv layers.
    pub fn final_time_len(&self) -> usize {
        let mut len = self.window_len;
        for _ in &self.conv_channels {
            len = same_padding(len, self.kernel_width, self.conv_stride).0;
        }
        len
    }

    pub fn flat_dim(&self) -> usize {
        self.conv_channels.last().unwrap() * self.final_time_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub w: Tensor,
    pub b: Tensor,
    pub bn: Option<BnParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub convs: Vec<ConvBlock>,
    pub dense1: DenseBlock,
    pub dense2: DenseBlock,
}

/// One gradient tensor per learnable parameter, in the model's canonical
/// parameter order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

pub struct ForwardCache {
    conv: Vec<(Conv1dCache, Option<BatchNormCache>, Tensor)>,
    conv_out_shape: Vec<usize>,
    dense1: DenseCache,
    act1_pre: Tensor,
    dropout_mask: Option<Tensor>,
    dense2: DenseCache,
}

impl Model {
    /// Initialize parameters from the generator: conv/dense weights are
    /// Gaussian(0, 2/fan_in) via Box–Muller, drawn in layer order with
    /// entries row-major; biases 0; gamma 1, beta 0, running stats (0, 1).
    pub fn init(spec: ModelSpec, prng: &mut Prng) -> Result<Model> {
        spec.validate()?;
        let mut convs = Vec::with_capacity(spec.conv_channels.len());
        let mut c_in = spec.in_channels;
        for (i, &c_out) in spec.conv_channels.iter().enumerate() {
            let fan_in = c_in * spec.kernel_width;
            let w = gaussian_tensor(&[c_out, c_in, spec.kernel_width], fan_in, prng);
            let bn = (i > 0).then(|| BnParams {
                gamma: Tensor::from_vec(&[c_out], vec![1.0; c_out]).unwrap(),
                beta: Tensor::zeros(&[c_out]),
                running_mean: Tensor::zeros(&[c_out]),
                running_var: Tensor::from_vec(&[c_out], vec![1.0; c_out]).unwrap(),
            });
            convs.push(ConvBlock {
                w,
                b: Tensor::zeros(&[c_out]),
                bn,
            });
            c_in = c_out;
        }
        let flat = spec.flat_dim();
        let dense1 = DenseBlock {
            w: gaussian_tensor(&[spec.dense_hidden, flat], flat, prng),
            b: Tensor::zeros(&[spec.dense_hidden]),
        };
        let dense2 = DenseBlock {
            w: gaussian_tensor(&[spec.num_classes, spec.dense_hidden], spec.dense_hidden, prng),
            b: Tensor::zeros(&[spec.num_classes]),
        };
        Ok(Model {
            spec,
            convs,
            dense1,
            dense2,
        })
    }

    /// Training forward pass: batch-stat batch norm, live dropout masks.
    /// Mutates running statistics and draws dropout masks from `prng`.
    pub fn forward_train(&mut self, x: &Tensor, prng: &mut Prng) -> Result<(Tensor, ForwardCache)> {
        self.forward_inner(x, Mode::Train, Some(prng))
    }

    /// Evaluation forward pass: running statistics, identity dropout, no
    /// generator draws, no mutation.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        // eval mode never writes running stats; the snapshot is discarded
        let mut shadow = RunningStats::capture(self);
        let (logits, _) = forward_pass(self, &mut shadow, x, Mode::Eval, None)?;
        Ok(logits)
    }

    fn forward_inner(
        &mut self,
        x: &Tensor,
        mode: Mode,
        prng: Option<&mut Prng>,
    ) -> Result<(Tensor, ForwardCache)> {
        let mut stats = RunningStats::capture(self);
        let (logits, cache) = forward_pass(self, &mut stats, x, mode, prng)?;
        stats.write_back(self);
        Ok((logits, cache))
    }

    /// Reverse pass; `cache` must come from a matching train-mode forward.
    pub fn backward(&self, cache: &ForwardCache, d_logits: &Tensor) -> Result<Gradients> {
        let mut grads_rev: Vec<Tensor> = Vec::new();

        let (d_hidden_dropped, dw2, db2) = dense_backward(&cache.dense2, d_logits)?;
        grads_rev.push(db2);
        grads_rev.push(dw2);

        let d_hidden_act = match &cache.dropout_mask {
            Some(mask) => dropout_backward(mask, self.spec.keep_prob, &d_hidden_dropped)?,
            None => d_hidden_dropped,
        };
        let d_hidden = activation_backward(Activation::LeakyRelu, &cache.act1_pre, &d_hidden_act)?;
        let (d_flat, dw1, db1) = dense_backward(&cache.dense1, &d_hidden)?;
        grads_rev.push(db1);
        grads_rev.push(dw1);

        let mut d_conv = Tensor::from_vec(&cache.conv_out_shape, d_flat.data)?;
        for (i, block) in self.convs.iter().enumerate().rev() {
            let (conv_cache, bn_cache, act_pre) = &cache.conv[i];
            let kind = if i == 0 { Activation::Relu } else { Activation::LeakyRelu };
            let d_act = activation_backward(kind, act_pre, &d_conv)?;
            let d_bn_in = match (bn_cache, &block.bn) {
                (Some(bn_cache), Some(_)) => {
                    let (dx, d_gamma, d_beta) = batchnorm1d_backward(bn_cache, &d_act)?;
                    grads_rev.push(d_beta);
                    grads_rev.push(d_gamma);
                    dx
                }
                (None, None) => d_act,
                _ => {
                    return Err(Error::Shape(format!(
                        "conv block {i}: cache does not match batch-norm layout"
                    )))
                }
            };
            let (dx, dw, db) = conv1d_backward(conv_cache, &d_bn_in)?;
            grads_rev.push(db);
            grads_rev.push(dw);
            d_conv = dx;
        }
        grads_rev.reverse();
        Ok(Gradients { tensors: grads_rev })
    }

    /// Learnable parameters in canonical order (shared with [`Gradients`]):
    /// per conv block W, b, then gamma, beta when batch-normed; then the
    /// two dense blocks' W, b. Names are stable checkpoint identifiers
    /// `layer{i}.{W|b|gamma|beta}` with i counting learnable layers 0..=9.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.convs.iter().enumerate() {
            out.push((format!("layer{i}.W"), &block.w));
            out.push((format!("layer{i}.b"), &block.b));
            if let Some(bn) = &block.bn {
                out.push((format!("layer{i}.gamma"), &bn.gamma));
                out.push((format!("layer{i}.beta"), &bn.beta));
            }
        }
        let d1 = self.convs.len();
        let d2 = d1 + 1;
        out.push((format!("layer{d1}.W"), &self.dense1.w));
        out.push((format!("layer{d1}.b"), &self.dense1.b));
        out.push((format!("layer{d2}.W"), &self.dense2.w));
        out.push((format!("layer{d2}.b"), &self.dense2.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let d1 = self.convs.len();
        let d2 = d1 + 1;
        let mut out = Vec::new();
        for (i, block) in self.convs.iter_mut().enumerate() {
            out.push((format!("layer{i}.W"), &mut block.w));
            out.push((format!("layer{i}.b"), &mut block.b));
            if let Some(bn) = &mut block.bn {
                out.push((format!("layer{i}.gamma"), &mut bn.gamma));
                out.push((format!("layer{i}.beta"), &mut bn.beta));
            }
        }
        out.push((format!("layer{d1}.W"), &mut self.dense1.w));
        out.push((format!("layer{d1}.b"), &mut self.dense1.b));
        out.push((format!("layer{d2}.W"), &mut self.dense2.w));
        out.push((format!("layer{d2}.b"), &mut self.dense2.b));
        out
    }

    /// Non-learnable state (batch-norm running statistics), named
    /// `layer{i}.running_{mean|var}`.
    pub fn named_state(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.convs.iter().enumerate() {
            if let Some(bn) = &block.bn {
                out.push((format!("layer{i}.running_mean"), &bn.running_mean));
                out.push((format!("layer{i}.running_var"), &bn.running_var));
            }
        }
        out
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, block) in self.convs.iter_mut().enumerate() {
            if let Some(bn) = &mut block.bn {
                out.push((format!("layer{i}.running_mean"), &mut bn.running_mean));
                out.push((format!("layer{i}.running_var"), &mut bn.running_var));
            }
        }
        out
    }

    /// Learnable parameters followed by running statistics, one borrow.
    pub fn named_all_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let d1 = self.convs.len();
        let d2 = d1 + 1;
        let mut params = Vec::new();
        let mut state = Vec::new();
        for (i, block) in self.convs.iter_mut().enumerate() {
            params.push((format!("layer{i}.W"), &mut block.w));
            params.push((format!("layer{i}.b"), &mut block.b));
            if let Some(bn) = &mut block.bn {
                params.push((format!("layer{i}.gamma"), &mut bn.gamma));
                params.push((format!("layer{i}.beta"), &mut bn.beta));
                state.push((format!("layer{i}.running_mean"), &mut bn.running_mean));
                state.push((format!("layer{i}.running_var"), &mut bn.running_var));
            }
        }
        params.push((format!("layer{d1}.W"), &mut self.dense1.w));
        params.push((format!("layer{d1}.b"), &mut self.dense1.b));
        params.push((format!("layer{d2}.W"), &mut self.dense2.w));
        params.push((format!("layer{d2}.b"), &mut self.dense2.b));
        params.extend(state);
        params
    }

    /// Weight matrices subject to L2 decay (conv and dense W only).
    pub fn decayed_weights(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.convs.iter().map(|c| &c.w).collect();
        out.push(&self.dense1.w);
        out.push(&self.dense2.w);
        out
    }

    /// Whether a canonical parameter name refers to a decayed weight.
    pub fn is_decayed(name: &str) -> bool {
        name.ends_with(".W")
    }
}

/// Snapshot of batch-norm running stats so a forward pass can run against
/// `&Model` and commit (train) or discard (eval) the updates.
struct RunningStats {
    per_conv: Vec<Option<(Tensor, Tensor)>>,
}

impl RunningStats {
    fn capture(model: &Model) -> Self {
        RunningStats {
            per_conv: model
                .convs
                .iter()
                .map(|c| c.bn.as_ref().map(|bn| (bn.running_mean.clone(), bn.running_var.clone())))
                .collect(),
        }
    }

    fn write_back(self, model: &mut Model) {
        for (block, stats) in model.convs.iter_mut().zip(self.per_conv) {
            if let (Some(bn), Some((mean, var))) = (&mut block.bn, stats) {
                bn.running_mean = mean;
                bn.running_var = var;
            }
        }
    }
}

fn forward_pass(
    model: &Model,
    stats: &mut RunningStats,
    x: &Tensor,
    mode: Mode,
    mut prng: Option<&mut Prng>,
) -> Result<(Tensor, ForwardCache)> {
    let spec = &model.spec;
    let batch = match x.shape.as_slice() {
        &[b, c, l] if c == spec.in_channels && l == spec.window_len => b,
        other => {
            return Err(Error::Shape(format!(
                "model input: expected [B, {}, {}], got {other:?}",
                spec.in_channels, spec.window_len
            )))
        }
    };

    let mut conv_caches = Vec::with_capacity(model.convs.len());
    let mut cur = x.clone();
    for (i, block) in model.convs.iter().enumerate() {
        let (conv_out, conv_cache) = conv1d_forward(&cur, &block.w, &block.b, spec.conv_stride)?;
        let (pre_act, bn_cache) = match (&block.bn, &mut stats.per_conv[i]) {
            (Some(bn), Some((running_mean, running_var))) => {
                let (y, cache) = batchnorm1d_forward(
                    &conv_out,
                    &bn.gamma,
                    &bn.beta,
                    running_mean,
                    running_var,
                    spec.bn_eps,
                    spec.bn_momentum,
                    mode,
                )?;
                (y, cache)
            }
            _ => (conv_out, None),
        };
        let kind = if i == 0 { Activation::Relu } else { Activation::LeakyRelu };
        let (activated, act_cache) = activation_forward(kind, &pre_act);
        conv_caches.push((conv_cache, bn_cache, act_cache));
        cur = activated;
    }

    let conv_out_shape = cur.shape.clone();
    let flat = Tensor::from_vec(&[batch, spec.flat_dim()], cur.data)?;

    let (hidden_pre, dense1_cache) = dense_forward(&flat, &model.dense1.w, &model.dense1.b)?;
    let (hidden_act, act1_pre) = activation_forward(Activation::LeakyRelu, &hidden_pre);
    let (hidden, dropout_mask) = match mode {
        Mode::Train => {
            let prng = prng
                .as_deref_mut()
                .ok_or_else(|| Error::Config("train-mode forward needs a generator".into()))?;
            dropout_forward(&hidden_act, spec.keep_prob, Mode::Train, prng)?
        }
        Mode::Eval => (hidden_act, None),
    };
    let (logits, dense2_cache) = dense_forward(&hidden, &model.dense2.w, &model.dense2.b)?;

    Ok((
        logits,
        ForwardCache {
            conv: conv_caches,
            conv_out_shape,
            dense1: dense1_cache,
            act1_pre,
            dropout_mask,
            dense2: dense2_cache,
        },
    ))
}

fn gaussian_tensor(shape: &[usize], fan_in: usize, prng: &mut Prng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in &mut t.data {
        *v = std * prng.next_gaussian();
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quarter_spec(window: usize) -> ModelSpec {
        ModelSpec::scaled(window, 10, 4, 1.0)
    }

    #[test]
    fn default_spec_shape_propagation() {
        let spec = ModelSpec::scaled(256, 10, 1, 0.6);
        assert_eq!(spec.conv_channels, vec![32, 64, 128, 256, 256, 512, 512, 1024]);
        assert_eq!(spec.final_time_len(), 1);
        assert_eq!(spec.flat_dim(), 1024);
    }

    #[test]
    fn quarter_scale_logit_shape() {
        let mut prng = Prng::new(42).unwrap();
        let mut model = Model::init(quarter_spec(32), &mut prng).unwrap();
        let x = Tensor::zeros(&[3, 10, 32]);
        let logits = model.forward_eval(&x).unwrap();
        assert_eq!(logits.shape, vec![3, 2]);
        let (logits, _) = model.forward_train(&x, &mut prng).unwrap();
        assert_eq!(logits.shape, vec![3, 2]);
        assert!(logits.is_finite());
    }

    #[test]
    fn init_is_deterministic() {
        let a = Model::init(quarter_spec(32), &mut Prng::new(7).unwrap()).unwrap();
        let b = Model::init(quarter_spec(32), &mut Prng::new(7).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_forward_deterministic_and_stat_preserving() {
        let mut prng = Prng::new(9).unwrap();
        let model = Model::init(quarter_spec(32), &mut prng).unwrap();
        let x = Tensor::from_vec(&[2, 10, 32], (0..640).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let before = model.clone();
        let a = model.forward_eval(&x).unwrap();
        let b = model.forward_eval(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(model, before);
    }

    #[test]
    fn train_forward_updates_running_stats() {
        let mut prng = Prng::new(9).unwrap();
        let mut model = Model::init(quarter_spec(32), &mut prng).unwrap();
        let x = Tensor::from_vec(&[4, 10, 32], (0..1280).map(|i| (i % 11) as f64 / 11.0).collect()).unwrap();
        let stats_before: Vec<Tensor> = model.named_state().iter().map(|(_, t)| (*t).clone()).collect();
        model.forward_train(&x, &mut prng).unwrap();
        let stats_after: Vec<Tensor> = model.named_state().iter().map(|(_, t)| (*t).clone()).collect();
        assert_ne!(stats_before, stats_after);
    }

    #[test]
    fn gradient_count_matches_param_count() {
        let mut prng = Prng::new(13).unwrap();
        let mut model = Model::init(quarter_spec(16), &mut prng).unwrap();
        let x = Tensor::from_vec(&[2, 10, 16], (0..320).map(|i| (i % 5) as f64 / 5.0).collect()).unwrap();
        let (logits, cache) = model.forward_train(&x, &mut prng).unwrap();
        let grads = model.backward(&cache, &logits.zeros_like()).unwrap();
        let params = model.named_params();
        assert_eq!(grads.tensors.len(), params.len());
        for ((name, p), g) in params.iter().zip(&grads.tensors) {
            assert_eq!(p.shape, g.shape, "{name}");
            assert!(g.data.iter().all(|&v| v == 0.0), "{name}: zero upstream must give zero grads");
        }
    }

    #[test]
    fn backward_is_linear_in_upstream() {
        let mut prng = Prng::new(21).unwrap();
        let mut model = Model::init(quarter_spec(16), &mut prng).unwrap();
        let x = Tensor::from_vec(&[2, 10, 16], (0..320).map(|i| ((i * 3) % 13) as f64 / 13.0).collect()).unwrap();
        let (logits, cache) = model.forward_train(&x, &mut prng).unwrap();
        let mut d1 = logits.zeros_like();
        for (i, v) in d1.data.iter_mut().enumerate() {
            *v = (i as f64 - 1.5) * 0.25;
        }
        let mut d2 = d1.clone();
        for v in &mut d2.data {
            *v *= 2.0;
        }
        let g1 = model.backward(&cache, &d1).unwrap();
        let g2 = model.backward(&cache, &d2).unwrap();
        for (a, b) in g1.tensors.iter().zip(&g2.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((2.0 * x - y).abs() < 1e-9_f64.max(y.abs() * 1e-12));
            }
        }
    }

    #[test]
    fn param_names_cover_ten_layers() {
        let mut prng = Prng::new(1).unwrap();
        let model = Model::init(quarter_spec(32), &mut prng).unwrap();
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"layer0.W".to_string()));
        assert!(names.contains(&"layer7.gamma".to_string()));
        assert!(names.contains(&"layer9.b".to_string()));
        assert!(!names.contains(&"layer0.gamma".to_string())); // first conv has no BN
        // 8 conv (W,b) + 7 bn (gamma,beta) + 2 dense (W,b)
        assert_eq!(names.len(), 8 * 2 + 7 * 2 + 2 * 2);
    }
}
