//! Deep linear networks, average gradient outer products and first-layer
//! feature alignment.
//!
//! The crate trains deep linear stacks (optionally topped with a ReLU head or
//! a generic ReLU feed-forward net), measures how the first-layer Gram matrix
//! `W₁ᵀW₁` aligns with fractional powers of the AGOP, and packages the
//! experiments behind the `nfa-lab` CLI.

pub mod error;
pub mod harness;
pub mod init;
pub mod linalg;
pub mod network;
pub mod nfa;
pub mod optim;
pub mod rng;
pub mod targets;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{LinearStack, Network};
pub use rng::SeededRng;
