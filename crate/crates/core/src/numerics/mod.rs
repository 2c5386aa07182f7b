//! Dense linear algebra, quadrature rules and seeded random streams.
//!
//! Every routine here is a pure function of its inputs.

mod linalg;
mod quadrature;
mod rng;

pub use linalg::{power_iteration, solve_spd, sym_eig, CholeskyFactor, Spectrum, SymMatrix};
pub use quadrature::{
    gauss_hermite, gauss_legendre, half_normal_rule, rayleigh_rule, QuadratureRule,
    MAX_QUADRATURE_ORDER,
};
pub use rng::{standard_normal, RngStream};

/// Relative Frobenius distance `‖a − b‖_F / ‖b‖_F` (absolute when `b` is zero).
pub fn relative_frobenius(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
