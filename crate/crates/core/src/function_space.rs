//! Least-squares kernel gradient descent in function space.
//!
//! Functions are only ever seen through their values on the dataset, so an
//! `f` is an `N × n_L` table and the operator
//! `Π(f)(x_j) = (1/N) Σ_i K(x_j, x_i) f(x_i)` is the Gram matrix scaled by `1/N`.
//! Flattened vectors use index `i * n_L + k`.

use std::sync::OnceLock;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{NtkError, Result};
use crate::limit_kernel::KernelGram;
use crate::numerics::{power_iteration, sym_eig, CholeskyFactor, Spectrum, SymMatrix};

/// Eigenvalues below this fraction of `λ_max` are treated as the null space.
pub const NULL_SPACE_RATIO: f64 = 1e-12;

/// Dimension above which kernel PCA switches from a full eigensolve to power iteration.
pub const PCA_POWER_ITERATION_DIM: usize = 1024;

/// Values of a function `ℝ^{n₀} → ℝ^{n_L}` on the `N` dataset points.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionOnData {
    values: DMatrix<f64>,
}

impl FunctionOnData {
    /// `values` is `N × n_L`, one row per dataset point.
    pub fn new(values: DMatrix<f64>) -> Self {
        FunctionOnData { values }
    }

    pub fn zeros(n_points: usize, n_out: usize) -> Self {
        FunctionOnData {
            values: DMatrix::zeros(n_points, n_out),
        }
    }

    pub fn from_column(values: &[f64]) -> Self {
        FunctionOnData {
            values: DMatrix::from_column_slice(values.len(), 1, values),
        }
    }

    pub fn from_flat(flat: &DVector<f64>, n_out: usize) -> Self {
        let n = flat.len() / n_out;
        FunctionOnData {
            values: DMatrix::from_fn(n, n_out, |i, k| flat[i * n_out + k]),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_points(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.values.ncols()
    }

    pub fn flatten(&self) -> DVector<f64> {
        let (n, k) = self.values.shape();
        DVector::from_fn(n * k, |r, _| self.values[(r / k, r % k)])
    }

    /// `⟨f, g⟩_{p^in} = (1/N) Σ_i f(x_i)ᵀ g(x_i)`.
    pub fn inner(&self, other: &FunctionOnData) -> Result<f64> {
        self.check_same_shape(other, "FunctionOnData::inner")?;
        Ok(self.values.dot(&other.values) / self.n_points() as f64)
    }

    /// `‖f‖_{p^in}`.
    pub fn norm(&self) -> f64 {
        (self.values.norm_squared() / self.n_points() as f64).sqrt()
    }

    pub fn sub(&self, other: &FunctionOnData) -> Result<FunctionOnData> {
        self.check_same_shape(other, "FunctionOnData::sub")?;
        Ok(FunctionOnData::new(&self.values - &other.values))
    }

    pub fn add(&self, other: &FunctionOnData) -> Result<FunctionOnData> {
        self.check_same_shape(other, "FunctionOnData::add")?;
        Ok(FunctionOnData::new(&self.values + &other.values))
    }

    pub fn scale(&self, factor: f64) -> FunctionOnData {
        FunctionOnData::new(&self.values * factor)
    }

    pub fn sup_distance(&self, other: &FunctionOnData) -> Result<f64> {
        self.check_same_shape(other, "FunctionOnData::sup_distance")?;
        Ok((&self.values - &other.values).amax())
    }

    fn check_same_shape(&self, other: &FunctionOnData, context: &'static str) -> Result<()> {
        if self.values.shape() != other.values.shape() {
            return Err(NtkError::Dimension {
                context,
                expected: self.values.len(),
                found: other.values.len(),
            });
        }
        Ok(())
    }
}

/// `Π = K̃ / N` acting on functions restricted to the dataset.
#[derive(Debug)]
pub struct PiOperator {
    n_points: usize,
    n_out: usize,
    matrix: SymMatrix,
    spectrum: OnceLock<Spectrum>,
}

impl PiOperator {
    pub fn new(gram: &KernelGram) -> Self {
        PiOperator {
            n_points: gram.n_points,
            n_out: gram.n_out,
            matrix: gram.materialize().scale(1.0 / gram.n_points as f64),
            spectrum: OnceLock::new(),
        }
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// The scaled matrix `K̃ / N`.
    pub fn matrix(&self) -> &SymMatrix {
        &self.matrix
    }

    /// Full spectrum of `Π`, computed once.
    pub fn spectrum(&self) -> Result<&Spectrum> {
        if let Some(s) = self.spectrum.get() {
            return Ok(s);
        }
        let s = sym_eig(&self.matrix)?;
        Ok(self.spectrum.get_or_init(|| s))
    }

    fn check(&self, f: &FunctionOnData, context: &'static str) -> Result<()> {
        if f.n_points() != self.n_points || f.n_out() != self.n_out {
            return Err(NtkError::Dimension {
                context,
                expected: self.n_points * self.n_out,
                found: f.n_points() * f.n_out(),
            });
        }
        Ok(())
    }
}

pub fn pi_apply(op: &PiOperator, f: &FunctionOnData) -> Result<FunctionOnData> {
    op.check(f, "pi_apply")?;
    Ok(FunctionOnData::from_flat(&(op.matrix.as_matrix() * f.flatten()), op.n_out))
}

fn null_threshold(spectrum: &Spectrum) -> f64 {
    NULL_SPACE_RATIO * spectrum.values.first().copied().unwrap_or(0.0).max(0.0)
}

/// `f_t = f* + e^{−tΠ}(f₀ − f*)` for each `t`, by spectral decomposition.
/// Components in the null space of `Π` do not decay.
pub fn kernel_gd_exact(
    op: &PiOperator,
    f0: &FunctionOnData,
    fstar: &FunctionOnData,
    times: &[f64],
) -> Result<Vec<FunctionOnData>> {
    op.check(f0, "kernel_gd_exact f0")?;
    op.check(fstar, "kernel_gd_exact fstar")?;
    let spectrum = op.spectrum()?;
    let cut = null_threshold(spectrum);
    let delta = f0.flatten() - fstar.flatten();
    let coeffs = spectrum.vectors.tr_mul(&delta);
    let target = fstar.flatten();
    Ok(times
        .iter()
        .map(|&t| {
            let scaled = DVector::from_fn(coeffs.len(), |i, _| {
                let lambda = spectrum.values[i];
                if lambda > cut {
                    coeffs[i] * (-t * lambda).exp()
                } else {
                    coeffs[i]
                }
            });
            FunctionOnData::from_flat(&(&target + &spectrum.vectors * scaled), op.n_out)
        })
        .collect())
}

/// Expands an `M × N` scalar cross kernel to `(M·n_out) × (N·n_out)`.
pub fn materialize_cross(cross: &DMatrix<f64>, n_out: usize) -> DMatrix<f64> {
    if n_out == 1 {
        return cross.clone();
    }
    let (m, n) = cross.shape();
    DMatrix::from_fn(m * n_out, n * n_out, |r, c| {
        if r % n_out == c % n_out {
            cross[(r / n_out, c / n_out)]
        } else {
            0.0
        }
    })
}

/// Exact kernel gradient descent evaluated at off-dataset queries.
///
/// `∂_t f_t(q) = (1/N) Σ_i K(q, x_i)(f*(x_i) − f_t(x_i))`, and on the data
/// `f* − f_s = e^{−sΠ}(f* − f₀)`, so the query values integrate to
/// `f₀(q) + (1/N) κ(q)ᵀ Σ_i ((1 − e^{−tλ_i})/λ_i) ⟨v_i, f* − f₀⟩ v_i`.
/// `cross` is the materialized `(M·n_out) × (N·n_out)` kernel.
pub fn kernel_gd_exact_at_queries(
    op: &PiOperator,
    cross: &DMatrix<f64>,
    f0_data: &FunctionOnData,
    f0_queries: &FunctionOnData,
    fstar: &FunctionOnData,
    t: f64,
) -> Result<FunctionOnData> {
    op.check(f0_data, "kernel_gd_exact_at_queries f0")?;
    op.check(fstar, "kernel_gd_exact_at_queries fstar")?;
    if cross.ncols() != op.n_points * op.n_out || cross.nrows() != f0_queries.n_points() * op.n_out {
        return Err(NtkError::Dimension {
            context: "kernel_gd_exact_at_queries cross kernel",
            expected: f0_queries.n_points() * op.n_out * op.n_points * op.n_out,
            found: cross.len(),
        });
    }
    let spectrum = op.spectrum()?;
    let cut = null_threshold(spectrum);
    let residual = fstar.flatten() - f0_data.flatten();
    let coeffs = spectrum.vectors.tr_mul(&residual);
    let integrated = DVector::from_fn(coeffs.len(), |i, _| {
        let lambda = spectrum.values[i];
        let weight = if lambda > cut { -(-t * lambda).exp_m1() / lambda } else { t };
        coeffs[i] * weight
    });
    let drive = &spectrum.vectors * integrated / op.n_points as f64;
    Ok(FunctionOnData::from_flat(&(f0_queries.flatten() + cross * drive), op.n_out))
}

/// Explicit Euler trajectory of kernel gradient descent.
#[derive(Clone, Debug)]
pub struct EulerTrajectory {
    pub dt: f64,
    pub final_values: FunctionOnData,
    /// `‖f_k − f*‖_{p^in}` for `k = 0..=steps`.
    pub residual_norms: Vec<f64>,
}

impl EulerTrajectory {
    /// Least-squares cost `½‖f_k − f*‖²_{p^in}` along the trajectory.
    pub fn costs(&self) -> Vec<f64> {
        self.residual_norms.iter().map(|r| 0.5 * r * r).collect()
    }
}

/// Consecutive growing steps that count as instability.
const INSTABILITY_RUN: usize = 10;

/// `f ← f + dt · Π(f* − f)` for `steps` steps.
pub fn kernel_gd_euler(
    op: &PiOperator,
    f0: &FunctionOnData,
    fstar: &FunctionOnData,
    dt: f64,
    steps: usize,
) -> Result<EulerTrajectory> {
    op.check(f0, "kernel_gd_euler f0")?;
    op.check(fstar, "kernel_gd_euler fstar")?;
    if !(dt > 0.0) {
        return Err(NtkError::arg(format!("Euler step must be positive, got {dt}")));
    }
    let lambda_max = if op.matrix.dim() > PCA_POWER_ITERATION_DIM {
        power_iteration(&op.matrix, 1, 1e-6, 10_000)?.values[0]
    } else {
        op.spectrum()?.values[0]
    };
    if dt * lambda_max >= 2.0 {
        warn!("kernel_gd_euler: dt * lambda_max = {} >= 2, integration is unstable", dt * lambda_max);
    }
    let n = op.n_points as f64;
    let target = fstar.flatten();
    let mut f = f0.flatten();
    let norm = |r: &DVector<f64>| (r.norm_squared() / n).sqrt();
    let mut residual = &target - &f;
    let mut norms = Vec::with_capacity(steps + 1);
    norms.push(norm(&residual));
    let mut growing = 0;
    for step in 1..=steps {
        f += op.matrix.as_matrix() * &residual * dt;
        residual = &target - &f;
        let r = norm(&residual);
        if !r.is_finite() {
            return Err(NtkError::Unstable {
                step,
                dt,
                dt_lambda_max: dt * lambda_max,
            });
        }
        growing = if r > norms[step - 1] { growing + 1 } else { 0 };
        norms.push(r);
        if growing >= INSTABILITY_RUN {
            return Err(NtkError::Unstable {
                step,
                dt,
                dt_lambda_max: dt * lambda_max,
            });
        }
    }
    Ok(EulerTrajectory {
        dt,
        final_values: FunctionOnData::from_flat(&f, op.n_out),
        residual_norms: norms,
    })
}

/// What is known about the initial function `f₀` for the regression limit.
#[derive(Clone, Debug)]
pub enum InitialFunction {
    /// `f₀ ∼ GP(0, Σ^(L))`: report the Gaussian mean and variance.
    ZeroMean,
    /// A specific realization of `f₀` on the dataset.
    Realized(FunctionOnData),
}

/// Closed-form `t → ∞` limit of least-squares kernel gradient descent:
/// `f_∞(x) = κ(x)ᵀK̃⁻¹y* + (f₀(x) − κ(x)ᵀK̃⁻¹y₀)`.
#[derive(Clone, Debug)]
pub struct RegressionLimit {
    n_out: usize,
    jitter: f64,
    factor: CholeskyFactor,
    sigma_data: SymMatrix,
    /// `K̃⁻¹ y*`
    pub target_coefficients: DVector<f64>,
    /// `K̃⁻¹ y₀` for a realized initial function.
    pub initial_coefficients: Option<DVector<f64>>,
}

/// Default ridge jitter `1e-10 · trace / N`.
pub fn default_jitter(gram: &KernelGram) -> f64 {
    1e-10 * gram.entries.trace() / gram.entries.dim() as f64
}

pub fn regression_limit(
    theta_gram: &KernelGram,
    sigma_gram: &KernelGram,
    fstar: &FunctionOnData,
    initial: InitialFunction,
    jitter: Option<f64>,
) -> Result<RegressionLimit> {
    let dim = theta_gram.full_dim();
    if sigma_gram.full_dim() != dim || fstar.n_points() * fstar.n_out() != dim {
        return Err(NtkError::Dimension {
            context: "regression_limit",
            expected: dim,
            found: sigma_gram.full_dim(),
        });
    }
    let jitter = jitter.unwrap_or_else(|| default_jitter(theta_gram));
    let factor = CholeskyFactor::new(&theta_gram.materialize(), jitter)?;
    let solve = |v: DVector<f64>| -> Result<DVector<f64>> {
        let m = DMatrix::from_column_slice(dim, 1, v.as_slice());
        Ok(factor.solve(&m)?.column(0).into_owned())
    };
    let target_coefficients = solve(fstar.flatten())?;
    let initial_coefficients = match &initial {
        InitialFunction::ZeroMean => None,
        InitialFunction::Realized(f0) => Some(solve(f0.flatten())?),
    };
    Ok(RegressionLimit {
        n_out: theta_gram.n_out,
        jitter,
        factor,
        sigma_data: sigma_gram.materialize(),
        target_coefficients,
        initial_coefficients,
    })
}

impl RegressionLimit {
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Gaussian mean `κ_Θ(x)ᵀ K̃⁻¹ y*` at the queries (`theta_cross` materialized).
    pub fn mean(&self, theta_cross: &DMatrix<f64>) -> Result<FunctionOnData> {
        self.check_cross(theta_cross)?;
        Ok(FunctionOnData::from_flat(&(theta_cross * &self.target_coefficients), self.n_out))
    }

    /// `f_∞` for the realized initial function, given its values at the queries.
    pub fn realize(&self, theta_cross: &DMatrix<f64>, f0_queries: &FunctionOnData) -> Result<FunctionOnData> {
        let mean = self.mean(theta_cross)?;
        let coeffs = self
            .initial_coefficients
            .as_ref()
            .ok_or_else(|| NtkError::arg("regression limit was built without a realized f0"))?;
        let correction = FunctionOnData::from_flat(&(f0_queries.flatten() - theta_cross * coeffs), self.n_out);
        mean.add(&correction)
    }

    /// Variance of `f₀(x) − κ_Θ(x)ᵀK̃⁻¹y₀` under `f₀ ∼ GP(0, Σ)`:
    /// `Σ(x,x) − 2κ_Θᵀ K̃⁻¹ σ(x) + κ_Θᵀ K̃⁻¹ Σ_data K̃⁻¹ κ_Θ`.
    /// `query_sigma_diag` holds the scalar `Σ(q, q)` per query point.
    pub fn variance(
        &self,
        theta_cross: &DMatrix<f64>,
        sigma_cross: &DMatrix<f64>,
        query_sigma_diag: &[f64],
    ) -> Result<FunctionOnData> {
        self.check_cross(theta_cross)?;
        self.check_cross(sigma_cross)?;
        if query_sigma_diag.len() * self.n_out != theta_cross.nrows() {
            return Err(NtkError::Dimension {
                context: "RegressionLimit::variance diagonal",
                expected: theta_cross.nrows() / self.n_out,
                found: query_sigma_diag.len(),
            });
        }
        let u = self.factor.solve(&theta_cross.transpose())?;
        let su = self.sigma_data.as_matrix() * &u;
        let rows = theta_cross.nrows();
        let flat = DVector::from_fn(rows, |r, _| {
            let own = query_sigma_diag[r / self.n_out];
            let cross = u.column(r).dot(&sigma_cross.row(r).transpose());
            let quad = u.column(r).dot(&su.column(r));
            (own - 2.0 * cross + quad).max(0.0)
        });
        Ok(FunctionOnData::from_flat(&flat, self.n_out))
    }

    fn check_cross(&self, cross: &DMatrix<f64>) -> Result<()> {
        if cross.ncols() != self.factor.dim() {
            return Err(NtkError::Dimension {
                context: "RegressionLimit cross kernel",
                expected: self.factor.dim(),
                found: cross.ncols(),
            });
        }
        Ok(())
    }
}

/// Leading non-centered kernel principal components.
#[derive(Clone, Debug)]
pub struct KernelPcaResult {
    pub eigenvalues: Vec<f64>,
    /// `p^in`-orthonormal eigenfunctions of `Π`.
    pub components: Vec<FunctionOnData>,
}

pub fn kernel_pca(op: &PiOperator, count: usize) -> Result<KernelPcaResult> {
    let dim = op.matrix.dim();
    if count > dim {
        return Err(NtkError::arg(format!("kernel_pca: {count} components requested from dimension {dim}")));
    }
    let owned;
    let spectrum = if dim > PCA_POWER_ITERATION_DIM {
        owned = power_iteration(&op.matrix, count, 1e-10, 1_000_000)?;
        &owned
    } else {
        op.spectrum()?
    };
    let scale = (op.n_points as f64).sqrt();
    let components = (0..count)
        .map(|j| {
            let mut v = spectrum.vectors.column(j).into_owned() * scale;
            // sign convention: the largest-magnitude entry is positive
            let pivot = v.iamax();
            if v[pivot] < 0.0 {
                v.neg_mut();
            }
            FunctionOnData::from_flat(&v, op.n_out)
        })
        .collect();
    Ok(KernelPcaResult {
        eigenvalues: spectrum.values[..count].to_vec(),
        components,
    })
}

/// Splits `f_diff` into its `p^in`-projection onto `component` and the orthogonal rest.
pub fn decompose_along(f_diff: &FunctionOnData, component: &FunctionOnData) -> Result<(FunctionOnData, FunctionOnData)> {
    let norm2 = component.inner(component)?;
    if !(norm2 > 0.0) {
        return Err(NtkError::arg("decompose_along: component has zero p_in norm"));
    }
    let g = component.scale(f_diff.inner(component)? / norm2);
    let h = f_diff.sub(&g)?;
    Ok((g, h))
}
