//! Training orchestration: epoch/batch iteration, optimizer steps, metric
//! rows, checkpoint resume, and signal prediction.
//!
//! Generator draw order is fixed: parameter init first, then per step the
//! dropout masks; per-epoch batch orders come from their own seed derived
//! from (seed, epoch). Two runs with the same config and data therefore
//! produce identical metric rows.

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainProgress};
use crate::dataset::{self, SplitDataset, WindowSample};
use crate::error::{Error, Result};
use crate::market_data::TickerSeries;
use crate::nn::loss::cross_entropy_loss;
use crate::nn::model::{Model, ModelSpec};
use crate::nn::tensor::Tensor;
use crate::optim::{Optimizer, OptimizerKind};
use crate::prng::Prng;

/// Batch rows used when chunking evaluation passes; metrics are invariant
/// to this value.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub window_len: usize,
    pub horizon: usize,
    pub stride: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub keep_prob: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub arch_scale: usize,
    pub chronological_split: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_len: 256,
            horizon: 1,
            stride: 1,
            batch_size: 250,
            learning_rate: 1e-3,
            keep_prob: 0.6,
            epochs: 100,
            optimizer: OptimizerKind::Adam,
            weight_decay: 0.0,
            seed: 1,
            train_frac: 0.7,
            val_frac: 0.15,
            arch_scale: 1,
            chronological_split: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 2 || self.horizon < 1 || self.stride < 1 {
            return Err(Error::Config("window_len/horizon/stride out of range".into()));
        }
        if self.batch_size < 1 || self.epochs < 1 || self.arch_scale < 1 {
            return Err(Error::Config("batch_size/epochs/arch_scale must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob must be in (0, 1], got {}", self.keep_prob)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.seed == 0 {
            return Err(Error::Config("seed must be nonzero".into()));
        }
        if !(self.train_frac > 0.0 && self.val_frac > 0.0 && self.train_frac + self.val_frac < 1.0) {
            return Err(Error::Config("train_frac + val_frac must be < 1 with both positive".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::scaled(self.window_len, crate::market_data::NUM_FEATURES, self.arch_scale, self.keep_prob)
    }

    /// Partition samples per the configured split strategy.
    pub fn split(&self, samples: Vec<WindowSample>) -> Result<SplitDataset> {
        if self.chronological_split {
            dataset::split_chronological(samples, self.train_frac, self.val_frac, self.seed)
        } else {
            dataset::split_shuffle(samples, self.train_frac, self.val_frac, self.seed)
        }
    }
}

/// One curves row, mirroring the columns epoch, iteration, train loss,
/// train accuracy, validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub iteration: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochMetrics>,
    pub test: Option<EvalMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Signal {
    #[serde(rename = "BUY")]
    Buy,
    #[serde(rename = "SELL")]
    Sell,
}

impl std::fmt::Display for Signal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Signal::Buy => write!(f, "BUY"),
            Signal::Sell => write!(f, "SELL"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPrediction {
    pub symbol: String,
    pub signal: Signal,
    pub p_bullish: f64,
    pub p_bearish: f64,
}

/// A training run in progress; supports stepping epoch by epoch so callers
/// can checkpoint mid-run and resume bit-identically.
pub struct TrainSession {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Optimizer,
    pub prng: Prng,
    pub epoch: usize,
    pub iteration: u64,
}

impl TrainSession {
    pub fn new(config: TrainConfig) -> Result<TrainSession> {
        config.validate()?;
        let mut prng = Prng::new(config.seed)?;
        let model = Model::init(config.model_spec(), &mut prng)?;
        let params: Vec<&Tensor> = model.named_params().iter().map(|(_, t)| *t).collect();
        let optimizer = Optimizer::new(config.optimizer, &params);
        Ok(TrainSession {
            config,
            model,
            optimizer,
            prng,
            epoch: 0,
            iteration: 0,
        })
    }

    /// Continue a checkpointed run. The new config may extend `epochs` but
    /// must otherwise match the checkpointed one.
    pub fn resume(config: TrainConfig, checkpoint: &Checkpoint) -> Result<TrainSession> {
        config.validate()?;
        let progress = checkpoint
            .progress
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint has no training progress, cannot resume".into()))?;
        let mut stored = progress.config.clone();
        stored.epochs = config.epochs;
        if stored != config {
            return Err(Error::Config(
                "resume config differs from checkpointed config (only `epochs` may change)".into(),
            ));
        }
        let model = checkpoint.restore_model()?;
        if model.spec != config.model_spec() {
            return Err(Error::Config("checkpoint architecture does not match config".into()));
        }
        let optimizer = checkpoint.restore_optimizer(&model)?;
        let prng = Prng::from_state(checkpoint.restore_prng_state()?)?;
        Ok(TrainSession {
            config,
            model,
            optimizer,
            prng,
            epoch: progress.epoch,
            iteration: progress.iteration,
        })
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Run one epoch of shuffled batches and return its metrics row.
    pub fn run_epoch(&mut self, data: &SplitDataset) -> Result<EpochMetrics> {
        if data.train.is_empty() || data.val.is_empty() {
            return Err(Error::Data("train and val splits must be non-empty".into()));
        }
        let cfg = &self.config;
        let spec = self.model.spec.clone();
        let order = dataset::batches(data.train.len(), cfg.batch_size, self.epoch, cfg.seed, true);
        let mut loss_sum = 0.0;
        let mut steps_this_epoch = 0u64;
        for batch in &order {
            let (x, labels) = batch_tensor(&data.train, batch, &spec)?;
            let (logits, cache) = self.model.forward_train(&x, &mut self.prng)?;
            let decayed = self.model.decayed_weights();
            let (loss, d_logits) = cross_entropy_loss(&logits, &labels, cfg.weight_decay, &decayed)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: self.iteration });
            }
            let mut grads = self.model.backward(&cache, &d_logits)?;
            if cfg.weight_decay != 0.0 {
                for ((name, param), grad) in self.model.named_params().iter().zip(&mut grads.tensors) {
                    if Model::is_decayed(name) {
                        for (g, p) in grad.data.iter_mut().zip(&param.data) {
                            *g += cfg.weight_decay * p;
                        }
                    }
                }
            }
            let lr = cfg.learning_rate;
            self.optimizer.step(&mut self.model.named_params_mut(), &grads.tensors, lr)?;
            loss_sum += loss;
            self.iteration += 1;
            steps_this_epoch += 1;
        }
        self.epoch += 1;
        let train_loss = if steps_this_epoch > 0 {
            loss_sum / steps_this_epoch as f64
        } else {
            f64::NAN
        };
        let train_acc = evaluate(&self.model, &data.train)?.accuracy;
        let val_acc = evaluate(&self.model, &data.val)?.accuracy;
        Ok(EpochMetrics {
            epoch: self.epoch,
            iteration: self.iteration,
            train_loss,
            train_acc,
            val_acc,
        })
    }

    pub fn progress(&self) -> TrainProgress {
        TrainProgress {
            epoch: self.epoch,
            iteration: self.iteration,
            config: self.config.clone(),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::build(
            &self.model,
            self.prng.state(),
            Some(&self.optimizer),
            Some(self.progress()),
        )
    }
}

/// Train to completion and report, including final test metrics when a
/// test split exists.
pub fn train(config: TrainConfig, data: &SplitDataset) -> Result<(TrainSession, TrainReport)> {
    let mut session = TrainSession::new(config)?;
    let mut rows = Vec::with_capacity(session.config.epochs);
    while !session.finished() {
        rows.push(session.run_epoch(data)?);
    }
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&session.model, &data.test)?)
    };
    Ok((session, TrainReport { rows, test }))
}

/// Eval-mode metrics over a full sample set. Prediction is the argmax of
/// the two logits with ties going to class 0 (SELL); BUY is the positive
/// class of the confusion counts. Chunking does not affect the result.
pub fn evaluate(model: &Model, samples: &[WindowSample]) -> Result<EvalMetrics> {
    evaluate_chunked(model, samples, EVAL_CHUNK)
}

pub fn evaluate_chunked(model: &Model, samples: &[WindowSample], chunk: usize) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let indices: Vec<usize> = (0..samples.len()).collect();
    let mut loss_sum = 0.0;
    let mut confusion = Confusion::default();
    for batch in indices.chunks(chunk.max(1)) {
        let (x, labels) = batch_tensor(samples, batch, &model.spec)?;
        let logits = model.forward_eval(&x)?;
        let (loss, _) = cross_entropy_loss(&logits, &labels, 0.0, &[])?;
        loss_sum += loss * batch.len() as f64;
        for (n, &label) in labels.iter().enumerate() {
            let bearish = logits.data[n * 2];
            let bullish = logits.data[n * 2 + 1];
            let predicted = if bullish > bearish { 1 } else { 0 };
            match (predicted, label) {
                (1, 1) => confusion.tp += 1,
                (1, 0) => confusion.fp += 1,
                (0, 0) => confusion.tn += 1,
                (0, 1) => confusion.fn_ += 1,
                _ => unreachable!(),
            }
        }
    }
    let n = samples.len();
    Ok(EvalMetrics {
        loss: loss_sum / n as f64,
        accuracy: (confusion.tp + confusion.tn) as f64 / n as f64,
        confusion,
    })
}

/// Run the model on the most recent window of a series and emit a trading
/// signal: BUY iff p_bullish > 0.5, ties going to SELL.
pub fn predict(model: &Model, series: &TickerSeries) -> Result<SignalPrediction> {
    let window = model.spec.window_len;
    let len = series.bars.len();
    if len < window {
        return Err(Error::Data(format!("series too short ({len} < {window})")));
    }
    let mut matrix = Vec::with_capacity(window * crate::market_data::NUM_FEATURES);
    for bar in &series.bars[len - window..] {
        matrix.extend_from_slice(&bar.features);
    }
    dataset::normalize_window(&mut matrix, window);
    let x = window_to_input(&matrix, window, &model.spec)?;
    let logits = model.forward_eval(&x)?;
    let probs = crate::nn::layers::softmax(&logits)?;
    let p_bearish = probs.data[0];
    let p_bullish = probs.data[1];
    Ok(SignalPrediction {
        symbol: series.symbol.clone(),
        signal: if p_bullish > 0.5 { Signal::Buy } else { Signal::Sell },
        p_bullish,
        p_bearish,
    })
}

/// Assemble samples into the network input layout [B, C, W] (the stored
/// matrices are time-major [W, C]; the transpose happens here).
pub fn batch_tensor(
    samples: &[WindowSample],
    indices: &[usize],
    spec: &ModelSpec,
) -> Result<(Tensor, Vec<usize>)> {
    let channels = crate::market_data::NUM_FEATURES;
    let window = spec.window_len;
    let batch = indices.len();
    let mut data = vec![0.0; batch * channels * window];
    let mut labels = Vec::with_capacity(batch);
    for (n, &idx) in indices.iter().enumerate() {
        let sample = &samples[idx];
        if sample.window_len != window {
            return Err(Error::Shape(format!(
                "sample window {} does not match model window {window}",
                sample.window_len
            )));
        }
        for t in 0..window {
            for c in 0..channels {
                data[(n * channels + c) * window + t] = sample.matrix[t * channels + c];
            }
        }
        labels.push(sample.label as usize);
    }
    Ok((Tensor::from_vec(&[batch, channels, window], data)?, labels))
}

fn window_to_input(matrix: &[f64], window: usize, spec: &ModelSpec) -> Result<Tensor> {
    let channels = crate::market_data::NUM_FEATURES;
    if window != spec.window_len {
        return Err(Error::Shape(format!(
            "window {window} does not match model window {}",
            spec.window_len
        )));
    }
    let mut data = vec![0.0; channels * window];
    for t in 0..window {
        for c in 0..channels {
            data[c * window + t] = matrix[t * channels + c];
        }
    }
    Tensor::from_vec(&[1, channels, window], data)
}

/// Format with `digits` significant digits, the precision of curves files.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.prec$}", prec = digits - 1);
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

pub const CURVES_HEADER: &str = "epoch,iteration,train_loss,train_acc,val_acc";

pub fn curves_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(CURVES_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            r.iteration,
            format_sig(r.train_loss, 6),
            format_sig(r.train_acc, 6),
            format_sig(r.val_acc, 6),
        ));
    }
    out
}
