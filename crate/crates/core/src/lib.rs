//! Simulation and cross-verification toolkit for the strongly coupled
//! FitzHugh-Nagumo mean-field system.
//!
//! The network of `n` neurons with gap-junction coupling of strength
//! `1/epsilon` is integrated with Euler-Maruyama ([`particle`]); the
//! self-consistent Fokker-Planck equation is solved with a conservative
//! finite-volume scheme ([`fokker_planck`]); the strong-coupling limit is
//! the single-neuron FitzHugh-Nagumo ODE ([`limit_ode`]), whose regimes are
//! classified in [`bifurcation`]. [`diagnostics`] measures how closely the
//! empirical distributions match the predicted Gaussian concentration
//! profile, and [`experiment`] ties everything together behind presets and
//! config files.
//!
//! Sign conventions used throughout:
//!
//! ```text
//! dv = (-v(v-λ)(v-1) + I_ext - x + (vbar - v)/ε) dt + σ √2 dW
//! dx = (-a x + b v) dt  [+ √(2ε) dB]
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bifurcation;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fokker_planck;
pub mod limit_ode;
pub mod model;
pub mod output;
pub mod particle;
pub mod sum;

pub use error::{Error, Result};
pub use model::{DriftSpec, InitCondition, InitKind, ModelParams};

/// Toolkit version embedded in every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
