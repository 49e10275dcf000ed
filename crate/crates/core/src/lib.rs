//! Building blocks for neural networks on matrix manifolds.
//!
//! The crate is organized around three gyrovector-space families:
//!
//! - [`spd`]: symmetric positive definite matrices under the Affine-Invariant,
//!   Log-Euclidean and Log-Cholesky metrics — gyro operations, orthonormal
//!   bases, hypergyroplanes, fully-connected and convolutional layer math.
//! - [`grassmann`]: the Grassmann manifold in both the projector and the
//!   ONB perspective — Exp/Log maps, the projector-log-via-ONB conversion,
//!   gyrotranslations and the GCN nonlinearity.
//! - [`spsd`]: the structure space of fixed-rank SPSD matrices (a Grassmann
//!   factor times an SPD factor) — canonical representations, inner products,
//!   hypergyroplanes and batched pseudo-gyrodistances.
//!
//! [`linalg`] provides the dense kernels everything builds on, [`autodiff`]
//! a reverse-mode gradient engine over those kernels, [`nn`] trainable layers
//! and reference models, and [`data`] ingestion and synthetic data pipelines.

pub mod autodiff;
pub mod batch;
pub mod checks;
pub mod data;
pub mod grassmann;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod spd;
pub mod spsd;
