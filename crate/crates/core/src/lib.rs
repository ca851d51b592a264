//! Conditional GAN transfer of structural-response manifolds across
//! environmental conditions.
//!
//! * [`nnet`]: dense networks, backpropagation, BCE, Adam.
//! * [`cgan`]: code-conditioned generator/discriminator and training loop.
//! * [`density`]: grid KDE and KL divergence for model selection.
//! * [`dynsim`]: parametrised mass-spring-damper chain and transmissibilities.
//! * [`features`]: `[-1, 1]` normalization and PCA.
//! * [`datasets`]: rotated-line benchmark, splits and CSV persistence.

// `!(a > b)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cgan;
pub mod datasets;
pub mod density;
pub mod dynsim;
pub mod error;
pub mod features;
pub mod nnet;

pub use cgan::{ConditionedSet, GanPair, TrainConfig};
pub use density::{CodeGroup, EvalGrid, KlReport};
pub use error::{Error, Result};
pub use nnet::{Activation, Matrix, Mlp, Vector};
