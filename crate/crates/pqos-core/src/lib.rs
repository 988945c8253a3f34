//! Leader/follower V2X throughput-prediction workbench.
//!
//! The crate covers the full desk-scale pipeline for predicting the downlink
//! datarate of an ego vehicle from its own radio KPIs and from measurements
//! taken by a lead vehicle driving the same route:
//!
//! * [`trace_store`] — trace schema, CSV ingestion, scenario filtering and
//!   ego/lead grouping.
//! * [`stats`] — autocorrelation, Pearson/Spearman correlation, feature
//!   ranking and measurement-averaged pairwise correlation.
//! * [`align`] — temporal (same timestamp) and spatial (same place, earlier
//!   time) joins between ego and lead series.
//! * [`featureset`] — the five engineered datasets (EGF, EGLT, EGLT-Diff,
//!   EGLS, EGLS-Ratio), collinearity pruning, min-max scaling, chronological
//!   splitting and lookback windowing.
//! * [`models`] — gradient-boosted trees, a 1-D convolutional network and a
//!   gated recurrent network, all trained deterministically from a seed.
//! * [`eval`] — MAE / modified-SMAPE / RMSE, the multi-run experiment grid
//!   and report emission.
//! * [`synthgen`] — a convoy trace generator with a shared spatially
//!   correlated radio environment, used as ground truth for the pipeline.

pub mod align;
pub mod eval;
pub mod featureset;
pub mod models;
pub mod plot;
pub mod stats;
pub mod synthgen;
pub mod trace_store;
