//! Sovereign-risk panel toolkit.
//!
//! The crate is organised along the pipeline it implements:
//!
//! - [`panel`]: ingest, validate and preprocess an unbalanced daily
//!   country panel (moving averages, standardization, coverage arithmetic).
//! - [`models`]: fixed-effects linear, regularized, factor-reduced and
//!   tree-ensemble regressors behind one fit/predict contract.
//! - [`harness`]: leakage-free recursive backtests, expanding-window
//!   hyperparameter search and MAE/RMSE accounting.
//! - [`attribution`]: exact path-dependent tree Shapley values, pairwise
//!   interaction values, importance summaries and LOESS dependence curves.
//! - [`connect`]: rolling VAR/GFEVD spillover indices and Spearman network
//!   density over attribution series.
//! - [`synth`]: ground-truth synthetic panels and brute-force oracles.
//!
//! Data-parallel inner loops (ensemble members, per-row attribution, rolling
//! windows, backtest tasks) run on rayon when the `parallel` feature is
//! enabled and fall back to plain iterators otherwise.

pub mod attribution;
pub mod connect;
pub mod error;
pub mod harness;
pub mod models;
pub mod panel;
pub mod par;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
