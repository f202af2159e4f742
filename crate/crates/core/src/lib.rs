//! Hybrid crystal generation: a token-level proposer hands intermediate
//! structures to an equivariant diffusion model, which refines them from an
//! intermediate noise level.

pub mod corpus;
pub mod crystal;
pub mod denoiser;
pub mod diffusion;
pub mod elements;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod proposer;
pub mod rng;
pub mod sampler;
pub mod text;
pub mod trainer;

pub use crystal::{Composition, Crystal, LatticeParams};
pub use par::Execution;
