//! Neural tangent kernel toolkit.
//!
//! The crate covers both sides of the infinite-width correspondence for fully
//! connected networks in the NTK parametrization:
//!
//! * [`limit_kernel`] evaluates the activation kernels `Σ^(ℓ)` and the limiting
//!   tangent kernel `Θ^(ℓ)_∞` as Gram matrices over a finite dataset;
//! * [`finite_net`] builds actual networks, back-propagates through them and
//!   measures their empirical tangent kernel;
//! * [`function_space`] integrates kernel gradient descent for least squares,
//!   exactly (spectrally) or by explicit Euler, and evaluates the `t → ∞`
//!   regression limit with its Gaussian variance;
//! * [`nonlinearity`] holds the activations, their Gaussian duals and the
//!   Hermite-series positive-definiteness certificate.
//!
//! Everything on the kernel side is `f64`. Network weights may be `f32` to fit
//! wide layers in memory.

pub mod data_io;
pub mod error;
pub mod export;
pub mod finite_net;
pub mod function_space;
pub mod limit_kernel;
pub mod nonlinearity;
pub mod numerics;

pub use error::{NtkError, Result};
