//! Shared fixtures for the integration and acceptance suites.
#![allow(dead_code)] // each test target uses a subset

use candlenet::dataset::{normalize_window, WindowSample};
use candlenet::market_data::NUM_FEATURES;
use candlenet::prng::Prng;
use chrono::NaiveDate;

/// Synthetic OHLCV CSV: a bounded random walk with self-consistent OHLC
/// ranges and adjusted columns equal to the raw ones.
pub fn synthetic_csv(n_rows: usize, seed: u64) -> String {
    let mut prng = Prng::new(seed).unwrap();
    let mut out = String::from(
        "date,open,high,low,close,volume,ex_dividend,split_ratio,adj_open,adj_high,adj_low,adj_close,adj_volume,adj_factor\n",
    );
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let mut price = 100.0;
    for i in 0..n_rows {
        let date = start + chrono::Days::new(i as u64);
        let open = price;
        let close = price * (1.0 + (prng.next_f64() - 0.5) * 0.04);
        let high = open.max(close) * (1.0 + prng.next_f64() * 0.01);
        let low = open.min(close) * (1.0 - prng.next_f64() * 0.01);
        let volume = 1.0e6 + prng.next_f64() * 5.0e6;
        out.push_str(&format!(
            "{date},{open:.4},{high:.4},{low:.4},{close:.4},{volume:.0},0.0,1.0,{open:.4},{high:.4},{low:.4},{close:.4},{volume:.0},1.0\n"
        ));
        price = close;
    }
    out
}

/// Planted-pattern samples: the label is a fair coin flip, and the adjusted
/// close channel drifts `drift` per step in the label's direction on top of
/// a unit random walk; the other nine channels are independent walks. With
/// `drift = 0` the labels carry no signal at all (pure memorization
/// material). Matrices come back normalized, as the trainer expects.
pub fn planted_samples(n: usize, window: usize, seed: u64, drift: f64) -> Vec<WindowSample> {
    let mut prng = Prng::new(seed).unwrap();
    let d0 = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap();
    (0..n)
        .map(|i| {
            let label = (prng.next_u64() & 1) as u8;
            let step = if label == 1 { drift } else { -drift };
            let mut matrix = vec![0.0; window * NUM_FEATURES];
            for c in 0..NUM_FEATURES {
                let mut v = 50.0 + prng.next_f64() * 100.0;
                for t in 0..window {
                    matrix[t * NUM_FEATURES + c] = v;
                    v += (prng.next_f64() - 0.5) * 2.0;
                    if c == 8 {
                        v += step;
                    }
                }
            }
            normalize_window(&mut matrix, window);
            let day = |k: u64| d0 + chrono::Days::new(k);
            WindowSample {
                matrix,
                window_len: window,
                label,
                symbol: "PLANT".into(),
                start_date: day(i as u64),
                end_date: day(i as u64 + window as u64 - 1),
                label_date: day(i as u64 + window as u64),
            }
        })
        .collect()
}
