//! Adversarial dead-branch attacks on binary-function similarity models.
//!
//! The crate parses a documented x86-64 subset ([`asm`]), models functions as
//! control-flow graphs ([`function`]), inserts instructions behind
//! never-taken guards ([`perturbation`]), maps functions into three feature
//! spaces ([`features`]) consumed by small differentiable surrogate models
//! ([`models`]), trains instruction embeddings ([`embedding`]), and runs the
//! Greedy, Spatial Greedy and gradient-guided attacks ([`attacks`]) under an
//! evaluation harness ([`eval`]).

pub mod asm;
pub mod attacks;
pub mod embedding;
pub mod eval;
pub mod features;
pub mod function;
pub mod models;
pub mod perturbation;
pub mod rng;
