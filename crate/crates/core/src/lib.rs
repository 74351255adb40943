//! Deterministic simulator for decentralized federated learning where the
//! per-round aggregator is chosen and audited by on-chain contracts.
//!
//! The numeric kernels ([`param_math`], [`hsic`], [`aggregation`]) are
//! generic over [`Scalar`]; the simulation pipeline runs in `f64` through the
//! aliases below.

pub mod aggregation;
pub mod attacks;
pub mod config;
pub mod contracts;
pub mod error;
pub mod hsic;
pub mod io;
pub mod learning;
pub mod ledger;
pub mod param_math;
pub mod rng;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model-parameter vector used throughout the simulator.
pub type ParamVector = param_math::Params<f64>;
/// Recent audit values in simulation precision.
pub type HsicWindow = hsic::HsicWindow<f64>;
