//! Stock-movement classification from raw OHLCV candle data.
//!
//! The pipeline: parse per-ticker CSV files into validated feature series,
//! cut them into normalized sliding windows labeled BUY/SELL over a horizon,
//! and train a from-scratch 1D convolutional network (manual forward and
//! backward passes) to predict the label. Every stochastic step draws from a
//! single fully specified xorshift64* generator, so runs are bit-reproducible.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod market_data;
pub mod nn;
pub mod optim;
pub mod prng;
pub mod trainer;

pub use error::Error;
pub use prng::Prng;
