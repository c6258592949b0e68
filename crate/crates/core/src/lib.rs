//! Off-policy evaluation for finite MDPs via marginalized importance sampling.
//!
//! The crate provides:
//!
//! * exact linear-algebra solvers for occupancies, successor representations,
//!   value functions and density ratios on tabular MDPs ([`mdp`]),
//! * dataset collection and an on-disk JSONL format ([`dataset`]),
//! * deterministic feature maps including the classic random-walk feature
//!   sets ([`features`]),
//! * minimal differentiable models and optimizers with finite-difference
//!   gradient checking ([`approx`]),
//! * five off-policy estimators: SR-DICE, DualDICE, GradientDICE, deep-SR
//!   regression and deep TD ([`estimators`]),
//! * metrics, the randomized-reward evaluation protocol and the random-walk
//!   experiment presets ([`eval`]).

pub mod approx;
pub mod dataset;
pub mod estimators;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod mdp;
pub mod rng;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
