//! Deterministic simulator core for personalized federated learning via
//! knowledge distillation.
//!
//! The crate is organized around a two-stage pipeline:
//!
//! 1. **Federated averaging** ([`fedsim`]): synchronous rounds of local
//!    SGD on every client followed by uniform weight averaging, with the
//!    global model snapshotted each round.
//! 2. **Per-client distillation** ([`distill`]): each client picks the
//!    snapshot that minimizes its validation cross-entropy (its teacher),
//!    then trains a personal model against a blend of hard labels and the
//!    teacher's temperature-softened predictions, grid-searching the
//!    imitation weight and temperature on validation accuracy.
//!
//! Everything below that is support machinery: dense row-major [`Tensor`]s,
//! a small reverse-mode [`tape`] for gradients, an MLP [`model`],
//! numerically careful [`loss`] functions, synthetic [`data`]
//! generation, the three non-IID [`split`] strategies, and evaluation
//! [`metrics`].
//!
//! The crate is `no_std`-compatible (with `alloc`); all transcendental
//! math goes through `libm` so results are bit-identical with or without
//! the `std` feature. Every source of randomness is an explicit seeded
//! generator — see [`rng`] — so identical inputs reproduce identical
//! outputs bit-for-bit.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// `!(x > 0.0)` rejects NaN where `x <= 0.0` would let it through; the
// negated form is intentional in every validation guard here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod distill;
pub mod error;
pub mod fedsim;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod split;
pub mod tape;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use tensor::Tensor;
