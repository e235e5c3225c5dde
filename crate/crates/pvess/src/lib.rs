//! Scheduling laboratory for a heterogeneous photovoltaic + battery + hydrogen
//! energy storage system trading on an hourly electricity market.
//!
//! The crate is organized around a 24-hour Markov decision process:
//!
//! - [`storage`] — pure device physics and cost models for the battery and the
//!   hydrogen subsystem (electrolyzer, fuel cells, reservoir).
//! - [`env`] — the market environment: state assembly, action sanitization,
//!   transitions, reward, and market data ingestion/synthesis.
//! - [`neural`] — a minimal dense-network substrate with exact manual
//!   gradients and an Adam optimizer.
//! - [`ppo`] — clipped-surrogate PPO pre-training of the black-box
//!   actor-critic.
//! - [`proto`] — the prototype-based interpretable policy distilled from the
//!   pretrained agent, plus per-decision explanations.
//! - [`baselines`] — the learned-prototype variant and the K-Means prototype
//!   baseline.
//! - [`dp`] — a finite-horizon value-iteration oracle on a discretized
//!   instance, used to bound policy quality.
//! - [`harness`] — experiment orchestration: cases, metrics, the learning-rate
//!   ablation, configuration, and report emission.
//!
//! With the default `parallel` feature, evaluation sweeps fan out over
//! independent seeded trials via rayon; disabling the feature falls back to an
//! equivalent sequential path with identical results.

pub mod baselines;
pub mod dp;
pub mod env;
pub mod error;
pub mod harness;
pub mod neural;
pub mod ppo;
pub mod proto;
pub mod storage;

pub use error::{Error, Result};
