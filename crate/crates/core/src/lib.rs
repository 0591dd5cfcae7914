//! Knowledge-distillation engine for embedding models.
//!
//! Instance-level embedding distillation (ILED) aligns each student embedding
//! with its teacher counterpart under a hard-mining rescaled-softplus weight;
//! relation-based pairwise similarity distillation (RPSD) matches the
//! student's cosine-similarity structure against a FIFO memory bank to the
//! teacher's. Both are combined with a recognition loss in [`trainer`].
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the double-precision instantiation used by the CLI.

pub mod checkpoint;
pub mod error;
pub mod evaluator;
pub mod geometry;
pub mod grad_oracle;
pub mod grad_suite;
pub mod identities;
pub mod losses;
pub mod memory_bank;
pub mod scalar;
pub mod toy_models;
pub mod trainer;

pub use error::{KdError, Result};
pub use scalar::Scalar;

pub type Matrix = ndarray::Array2<f64>;
pub type Vector = ndarray::Array1<f64>;
pub type LossOutputF64 = losses::LossOutput<f64>;
pub type MemoryBankF64 = memory_bank::MemoryBank<f64>;
pub type BankPairF64 = memory_bank::BankPair<f64>;
pub type Network = toy_models::NetworkState<f64>;
pub type Head = toy_models::MarginHead<f64>;
pub type DatasetF64 = toy_models::Dataset<f64>;

pub type Matrix32 = ndarray::Array2<f32>;
pub type Network32 = toy_models::NetworkState<f32>;
