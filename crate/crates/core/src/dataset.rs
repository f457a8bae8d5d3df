//! Windowing, labeling, normalization, and split/shuffle of feature series.
//!
//! A sample is a W×C matrix (W consecutive trading days, C = 10 channels)
//! normalized per channel to [0, 1], labeled BUY (1) when the adjusted
//! close rises over the horizon and SELL (0) otherwise.

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::market_data::{TickerSeries, ADJ_CLOSE_SLOT, NUM_FEATURES};
use crate::prng::Prng;

pub const SELL: u8 = 0;
pub const BUY: u8 = 1;

/// Per-epoch reshuffle seed mixer (splitmix64 increment).
const EPOCH_SEED_MIX: u64 = 0x9E3779B97F4A7C15;

/// One labeled window. `matrix` is row-major [window_len × NUM_FEATURES]
/// with time as the row axis.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub matrix: Vec<f64>,
    pub window_len: usize,
    pub label: u8,
    pub symbol: String,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub label_date: NaiveDate,
}

impl WindowSample {
    pub fn channels(&self) -> usize {
        NUM_FEATURES
    }
}

/// Disjoint train/val/test partition of a sample set.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub seed: u64,
    pub fractions: (f64, f64),
}

/// BUY iff the adjusted close `horizon` rows after `end_index` exceeds the
/// one at `end_index`; a zero return is SELL.
pub fn label_for(series: &TickerSeries, end_index: usize, horizon: usize) -> Result<u8> {
    let target = end_index + horizon;
    if target >= series.bars.len() {
        return Err(Error::Data(format!(
            "label index {target} out of range (series length {})",
            series.bars.len()
        )));
    }
    let now = series.bars[end_index].features[ADJ_CLOSE_SLOT];
    let later = series.bars[target].features[ADJ_CLOSE_SLOT];
    Ok(if later - now > 0.0 { BUY } else { SELL })
}

/// Cut a series into labeled windows of `window_len` rows, sliding by
/// `stride`, with labels `horizon` rows past each window end. Matrices are
/// raw feature values; call [`normalize_window`] before feeding the model.
/// A series shorter than `window_len + horizon` yields no windows.
pub fn make_windows(
    series: &TickerSeries,
    window_len: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    if window_len < 2 || horizon < 1 || stride < 1 {
        return Err(Error::Config(format!(
            "invalid windowing parameters: window_len={window_len}, horizon={horizon}, stride={stride}"
        )));
    }
    let len = series.bars.len();
    let mut out = Vec::new();
    if len < window_len + horizon {
        return Ok(out);
    }
    let mut start = 0;
    while start + window_len - 1 + horizon <= len - 1 {
        let end = start + window_len - 1;
        let mut matrix = Vec::with_capacity(window_len * NUM_FEATURES);
        for bar in &series.bars[start..=end] {
            matrix.extend_from_slice(&bar.features);
        }
        out.push(WindowSample {
            matrix,
            window_len,
            label: label_for(series, end, horizon)?,
            symbol: series.symbol.clone(),
            start_date: series.bars[start].date,
            end_date: series.bars[end].date,
            label_date: series.bars[end + horizon].date,
        });
        start += stride;
    }
    Ok(out)
}

/// Min-max normalize each channel over the window's own rows only:
/// z = (x − min) / (max − min), with a constant channel mapping to all
/// zeros. `matrix` is row-major [rows × NUM_FEATURES].
pub fn normalize_window(matrix: &mut [f64], rows: usize) {
    debug_assert_eq!(matrix.len(), rows * NUM_FEATURES);
    for c in 0..NUM_FEATURES {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in 0..rows {
            let v = matrix[r * NUM_FEATURES + c];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        for r in 0..rows {
            let v = &mut matrix[r * NUM_FEATURES + c];
            *v = if range == 0.0 { 0.0 } else { (*v - lo) / range };
        }
    }
}

/// Fisher–Yates shuffle with `Prng(seed)`, then a contiguous cut:
/// |train| = floor(train_frac·n), |val| = floor(val_frac·n), the remainder
/// is test.
pub fn split_shuffle(
    samples: Vec<WindowSample>,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitDataset> {
    check_fractions(train_frac, val_frac)?;
    if samples.is_empty() {
        return Err(Error::Data("cannot split an empty sample list".into()));
    }
    let mut samples = samples;
    let mut prng = Prng::new(seed)?;
    prng.shuffle(&mut samples);
    Ok(cut(samples, train_frac, val_frac, seed))
}

/// Chronology-preserving alternative to [`split_shuffle`]: no shuffle, the
/// earliest windows train and the latest test. Same size rule.
pub fn split_chronological(
    samples: Vec<WindowSample>,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitDataset> {
    check_fractions(train_frac, val_frac)?;
    if samples.is_empty() {
        return Err(Error::Data("cannot split an empty sample list".into()));
    }
    let mut samples = samples;
    samples.sort_by(|a, b| (a.end_date, &a.symbol).cmp(&(b.end_date, &b.symbol)));
    Ok(cut(samples, train_frac, val_frac, seed))
}

fn check_fractions(train_frac: f64, val_frac: f64) -> Result<()> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Config(format!(
            "invalid split fractions: train={train_frac}, val={val_frac}"
        )));
    }
    Ok(())
}

fn cut(mut samples: Vec<WindowSample>, train_frac: f64, val_frac: f64, seed: u64) -> SplitDataset {
    let n = samples.len();
    let n_train = (train_frac * n as f64).floor() as usize;
    let n_val = (val_frac * n as f64).floor() as usize;
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    SplitDataset {
        train: samples,
        val,
        test,
        seed,
        fractions: (train_frac, val_frac),
    }
}

/// Per-epoch batch order: indices 0..n reshuffled with a seed derived from
/// (seed, epoch), then chunked into consecutive batches of `batch_size`.
/// With `drop_small`, a trailing batch of fewer than 2 samples is dropped
/// (train-mode batch norm needs at least 2 rows).
pub fn batches(
    n_samples: usize,
    batch_size: usize,
    epoch: usize,
    seed: u64,
    drop_small: bool,
) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let derived = seed ^ (epoch as u64 + 1).wrapping_mul(EPOCH_SEED_MIX);
    // the derived seed is zero only for one adversarial (seed, epoch) pair;
    // substitute the mixing constant to keep the generator valid
    let derived = if derived == 0 { EPOCH_SEED_MIX } else { derived };
    let mut prng = Prng::new(derived).expect("derived seed is nonzero");
    let mut indices: Vec<usize> = (0..n_samples).collect();
    prng.shuffle(&mut indices);
    let mut out: Vec<Vec<usize>> = indices.chunks(batch_size).map(|c| c.to_vec()).collect();
    if drop_small {
        if let Some(last) = out.last() {
            if last.len() < 2 {
                out.pop();
            }
        }
    }
    out
}
