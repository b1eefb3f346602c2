//! Diffusion-market engine for growth-optimal portfolios, martingale deflators and
//! real-world pricing without an equivalent martingale measure.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod gop;
pub mod hedging;
pub mod linalg;
pub mod market;
pub mod pricing;
mod risk;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
pub use market::{builtin_model, CoefficientSnapshot, MarketModel, ModelConfig};
pub use sim::{simulate_bundle, PathBundle, PathTable, SamplingScheme, SimulationGrid, Strategy};
