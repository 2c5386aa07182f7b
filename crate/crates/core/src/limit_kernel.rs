//! Infinite-width kernels of fully connected networks in the NTK parametrization.
//!
//! For depth `L`, nonlinearity `σ` and bias scale `β`:
//!
//! ```text
//! Σ^(1)(x, x')   = xᵀx' / n₀ + β²
//! Σ^(ℓ+1)(x, x') = E[σ(f(x)) σ(f(x'))] + β²,     f ∼ GP(0, Σ^(ℓ))
//! Σ̇^(ℓ+1)(x, x') = E[σ̇(f(x)) σ̇(f(x'))]
//! Θ^(1)          = Σ^(1)
//! Θ^(ℓ+1)        = Θ^(ℓ) Σ̇^(ℓ+1) + Σ^(ℓ+1)
//! ```
//!
//! Every entry depends only on the triple `(xᵀx, xᵀx', x'ᵀx')`, so the
//! recursion runs per pair on `(diag_x, offdiag, diag_y)` and the per-point
//! diagonal sequences are computed once and shared.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NtkError, Result};
use crate::nonlinearity::{dual_dot_with, dual_with, Cov2, DualMethod, Nonlinearity};
use crate::numerics::{sym_eig, SymMatrix};

/// A finite dataset `x_1..x_N ∈ ℝ^{n₀}` with uniform weights `1/N`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: DMatrix<f64>,
}

impl EmpiricalMeasure {
    /// `points` holds one sample per row.
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(NtkError::arg("empirical measure needs points of positive dimension"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(NtkError::arg("empirical measure has non-finite coordinates"));
        }
        Ok(EmpiricalMeasure { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n0 = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n0) {
            return Err(NtkError::arg("rows of an empirical measure must share one dimension"));
        }
        Self::new(DMatrix::from_fn(rows.len(), n0, |i, j| rows[i][j]))
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.points.row(i).iter().copied().collect()
    }

    /// `X Xᵀ`.
    pub fn inner_products(&self) -> DMatrix<f64> {
        &self.points * self.points.transpose()
    }

    /// Rows `indices` as a new measure.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(self.points.select_rows(indices))
    }
}

/// Depth, bias scale and nonlinearity shared by every kernel of a stack.
#[derive(Clone, Debug)]
pub struct KernelConfig {
    pub depth: usize,
    pub beta: f64,
    pub nonlinearity: Nonlinearity,
    pub method: DualMethod,
}

impl KernelConfig {
    pub fn new(depth: usize, beta: f64, nonlinearity: Nonlinearity) -> Result<Self> {
        let method = nonlinearity.default_dual_method();
        Self::with_method(depth, beta, nonlinearity, method)
    }

    pub fn with_method(depth: usize, beta: f64, nonlinearity: Nonlinearity, method: DualMethod) -> Result<Self> {
        if depth == 0 {
            return Err(NtkError::arg("kernel depth must be at least 1"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(NtkError::arg(format!("beta must be a non-negative real, got {beta}")));
        }
        Ok(KernelConfig {
            depth,
            beta,
            nonlinearity,
            method,
        })
    }
}

/// Per-level values of one kernel entry: `sigma[ℓ−1] = Σ^(ℓ)`,
/// `sigma_dot[ℓ−2] = Σ̇^(ℓ)`, `theta[ℓ−1] = Θ^(ℓ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelValues {
    pub sigma: Vec<f64>,
    pub sigma_dot: Vec<f64>,
    pub theta: Vec<f64>,
}

/// Runs the recursion for one pair given both points' diagonal sequences.
/// `diag_x`/`diag_y` are `None` when the pair is itself a diagonal entry.
fn pair_levels(
    config: &KernelConfig,
    n0: usize,
    inner: f64,
    diag: Option<(&LevelValues, &LevelValues)>,
    with_tangent: bool,
) -> Result<LevelValues> {
    let beta2 = config.beta * config.beta;
    let depth = config.depth;
    let mut sigma = Vec::with_capacity(depth);
    let mut sigma_dot = Vec::with_capacity(depth.saturating_sub(1));
    let mut theta = Vec::with_capacity(if with_tangent { depth } else { 0 });
    sigma.push(inner / n0 as f64 + beta2);
    if with_tangent {
        theta.push(sigma[0]);
    }
    for level in 1..depth {
        let xy = sigma[level - 1];
        let (xx, yy) = match diag {
            Some((dx, dy)) => (dx.sigma[level - 1], dy.sigma[level - 1]),
            None => (xy, xy),
        };
        let cov = Cov2::new(xx, xy, yy);
        sigma.push(dual_with(&config.nonlinearity, cov, config.method)? + beta2);
        if with_tangent {
            let dot = dual_dot_with(&config.nonlinearity, cov, config.method)?;
            sigma_dot.push(dot);
            theta.push(theta[level - 1] * dot + sigma[level]);
        }
    }
    Ok(LevelValues {
        sigma,
        sigma_dot,
        theta,
    })
}

fn diagonal_levels(
    config: &KernelConfig,
    points: &DMatrix<f64>,
    with_tangent: bool,
) -> Result<Vec<LevelValues>> {
    let n0 = points.ncols();
    (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let sq = points.row(i).norm_squared();
            pair_levels(config, n0, sq, None, with_tangent)
        })
        .collect()
}

/// Kernels `Σ^(1..L)`, `Σ̇^(2..L)` and (when requested) `Θ^(1..L)_∞` as scalar
/// `N × N` Grams. The output dimension only enters as `⊗ Id_{n_L}`.
#[derive(Clone, Debug)]
pub struct KernelStack {
    pub config: KernelConfig,
    sigma: Vec<SymMatrix>,
    sigma_dot: Vec<SymMatrix>,
    theta: Vec<SymMatrix>,
}

impl KernelStack {
    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn n_points(&self) -> usize {
        self.sigma[0].dim()
    }

    /// `Σ^(level)`, `1 ≤ level ≤ L`.
    pub fn sigma(&self, level: usize) -> &SymMatrix {
        &self.sigma[level - 1]
    }

    /// `Σ̇^(level)`, `2 ≤ level ≤ L`; `None` for a Σ-only stack.
    pub fn sigma_dot(&self, level: usize) -> Option<&SymMatrix> {
        level.checked_sub(2).and_then(|k| self.sigma_dot.get(k))
    }

    /// `Θ^(level)_∞`; `None` for a Σ-only stack.
    pub fn theta(&self, level: usize) -> Option<&SymMatrix> {
        level.checked_sub(1).and_then(|k| self.theta.get(k))
    }

    pub fn has_tangent(&self) -> bool {
        !self.theta.is_empty()
    }

    pub fn sigma_gram(&self, level: usize, n_out: usize) -> KernelGram {
        KernelGram::scalar_block(GramKind::Sigma { level }, self.sigma(level).clone(), n_out)
    }

    /// Top-level `Θ^(L)_∞` gram.
    pub fn theta_gram(&self, n_out: usize) -> Option<KernelGram> {
        let depth = self.depth();
        self.theta(depth)
            .map(|t| KernelGram::scalar_block(GramKind::ThetaLimit { depth }, t.clone(), n_out))
    }

    /// Largest deviation of the stored `Θ^(ℓ+1)` from `Θ^(ℓ) ∘ Σ̇^(ℓ+1) + Σ^(ℓ+1)`.
    pub fn recursion_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for level in 1..self.theta.len() {
            let rebuilt = self.theta[level - 1]
                .hadamard(&self.sigma_dot[level - 1])
                .add(&self.sigma[level]);
            worst = worst.max((rebuilt.as_matrix() - self.theta[level].as_matrix()).amax());
        }
        worst
    }
}

fn build_stack(measure: &EmpiricalMeasure, config: &KernelConfig, with_tangent: bool) -> Result<KernelStack> {
    let points = measure.points();
    let n = measure.len();
    let n0 = measure.input_dim();
    let inner = measure.inner_products();
    let diag = diagonal_levels(config, points, with_tangent)?;

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
    let off: Vec<LevelValues> = pairs
        .par_iter()
        .map(|&(i, j)| pair_levels(config, n0, inner[(i, j)], Some((&diag[i], &diag[j])), with_tangent))
        .collect::<Result<_>>()?;

    let lookup = |i: usize, j: usize| -> &LevelValues {
        if i == j {
            &diag[i]
        } else {
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            // pairs are enumerated column by column over the strict upper triangle
            &off[b * (b - 1) / 2 + a]
        }
    };
    let depth = config.depth;
    let sigma = (0..depth)
        .map(|k| SymMatrix::from_fn(n, |i, j| lookup(i, j).sigma[k]))
        .collect();
    let (sigma_dot, theta) = if with_tangent {
        (
            (0..depth - 1)
                .map(|k| SymMatrix::from_fn(n, |i, j| lookup(i, j).sigma_dot[k]))
                .collect(),
            (0..depth)
                .map(|k| SymMatrix::from_fn(n, |i, j| lookup(i, j).theta[k]))
                .collect(),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(KernelStack {
        config: config.clone(),
        sigma,
        sigma_dot,
        theta,
    })
}

/// Activation kernels `Σ^(1..L)` only.
pub fn sigma_stack(measure: &EmpiricalMeasure, config: &KernelConfig) -> Result<KernelStack> {
    build_stack(measure, config, false)
}

/// Activation kernels, their derivative kernels and the limiting NTK.
pub fn ntk_stack(measure: &EmpiricalMeasure, config: &KernelConfig) -> Result<KernelStack> {
    build_stack(measure, config, true)
}

/// Kernels between `M` query points and the `N` dataset points.
#[derive(Clone, Debug)]
pub struct CrossKernel {
    /// `sigma[ℓ−1]` is the `M × N` matrix `Σ^(ℓ)(q_m, x_i)`.
    pub sigma: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
    /// `Σ^(ℓ)(q_m, q_m)` per level.
    pub query_sigma_diag: Vec<Vec<f64>>,
    pub query_theta_diag: Vec<Vec<f64>>,
}

impl CrossKernel {
    pub fn sigma_top(&self) -> &DMatrix<f64> {
        self.sigma.last().expect("depth >= 1")
    }

    pub fn theta_top(&self) -> &DMatrix<f64> {
        self.theta.last().expect("depth >= 1")
    }
}

/// `Σ^(ℓ)(q, x_i)` and `Θ^(ℓ)_∞(q, x_i)` for every query row `q`.
pub fn cross_kernel(measure: &EmpiricalMeasure, config: &KernelConfig, queries: &DMatrix<f64>) -> Result<CrossKernel> {
    if queries.ncols() != measure.input_dim() {
        return Err(NtkError::Dimension {
            context: "cross_kernel queries",
            expected: measure.input_dim(),
            found: queries.ncols(),
        });
    }
    if queries.iter().any(|v| !v.is_finite()) {
        return Err(NtkError::arg("cross_kernel: non-finite query coordinates"));
    }
    let n0 = measure.input_dim();
    let data_diag = diagonal_levels(config, measure.points(), true)?;
    let query_diag = diagonal_levels(config, queries, true)?;
    let inner = queries * measure.points().transpose();
    let (m, n) = (queries.nrows(), measure.len());
    let entries: Vec<LevelValues> = (0..m * n)
        .into_par_iter()
        .map(|idx| {
            let (q, i) = (idx / n, idx % n);
            pair_levels(config, n0, inner[(q, i)], Some((&query_diag[q], &data_diag[i])), true)
        })
        .collect::<Result<_>>()?;
    let depth = config.depth;
    let level_matrix =
        |pick: &dyn Fn(&LevelValues) -> f64| DMatrix::from_fn(m, n, |q, i| pick(&entries[q * n + i]));
    Ok(CrossKernel {
        sigma: (0..depth).map(|k| level_matrix(&|v| v.sigma[k])).collect(),
        theta: (0..depth).map(|k| level_matrix(&|v| v.theta[k])).collect(),
        query_sigma_diag: (0..depth)
            .map(|k| query_diag.iter().map(|v| v.sigma[k]).collect())
            .collect(),
        query_theta_diag: (0..depth)
            .map(|k| query_diag.iter().map(|v| v.theta[k]).collect())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GramKind {
    Sigma { level: usize },
    ThetaLimit { depth: usize },
    ThetaEmpirical { depth: usize, widths: Vec<usize>, time: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramLayout {
    /// `N × N` scalar block; the full kernel is `block ⊗ Id_{n_out}`.
    ScalarBlock,
    /// Full `N·n_out` matrix indexed by `i * n_out + k`.
    Full,
}

/// Kernel evaluations over a dataset.
#[derive(Clone, Debug)]
pub struct KernelGram {
    pub kind: GramKind,
    pub n_points: usize,
    pub n_out: usize,
    pub layout: GramLayout,
    pub entries: SymMatrix,
}

impl KernelGram {
    pub fn scalar_block(kind: GramKind, block: SymMatrix, n_out: usize) -> Self {
        KernelGram {
            kind,
            n_points: block.dim(),
            n_out,
            layout: GramLayout::ScalarBlock,
            entries: block,
        }
    }

    pub fn full(kind: GramKind, entries: SymMatrix, n_points: usize, n_out: usize) -> Result<Self> {
        if entries.dim() != n_points * n_out {
            return Err(NtkError::Dimension {
                context: "KernelGram::full",
                expected: n_points * n_out,
                found: entries.dim(),
            });
        }
        Ok(KernelGram {
            kind,
            n_points,
            n_out,
            layout: GramLayout::Full,
            entries,
        })
    }

    /// The `N·n_out` matrix, expanding a scalar block if needed.
    pub fn materialize(&self) -> SymMatrix {
        match self.layout {
            GramLayout::Full => self.entries.clone(),
            GramLayout::ScalarBlock => self.entries.kron_identity(self.n_out),
        }
    }

    pub fn full_dim(&self) -> usize {
        self.n_points * self.n_out
    }
}

/// Smallest eigenvalue of the gram (a scalar block shares its spectrum with `block ⊗ Id`).
pub fn min_eigenvalue(gram: &KernelGram) -> Result<f64> {
    let spectrum = sym_eig(&gram.entries)?;
    spectrum
        .values
        .last()
        .copied()
        .ok_or_else(|| NtkError::arg("min_eigenvalue of an empty gram"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::dual;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn circle(count: usize) -> EmpiricalMeasure {
        let rows: Vec<Vec<f64>> = (0..count)
            .map(|i| {
                let g = 2.0 * PI * i as f64 / count as f64;
                vec![g.cos(), g.sin()]
            })
            .collect();
        EmpiricalMeasure::from_rows(&rows).unwrap()
    }

    fn relu(depth: usize, beta: f64) -> KernelConfig {
        KernelConfig::new(depth, beta, Nonlinearity::Relu).unwrap()
    }

    #[test]
    fn first_level_formula() {
        let m = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = sigma_stack(&m, &relu(1, 0.1)).unwrap();
        assert_abs_diff_eq!(s.sigma(1).get(0, 0), 0.51, epsilon = 1e-15);
        let s0 = sigma_stack(&m, &relu(1, 0.0)).unwrap();
        assert_eq!(s0.sigma(1).get(0, 1), 0.0);
        assert!(!s0.has_tangent());
    }

    #[test]
    fn second_level_diagonal_on_circle() {
        let beta = 0.1;
        let s = ntk_stack(&circle(5), &relu(2, beta)).unwrap();
        for i in 0..5 {
            let s1 = s.sigma(1).get(i, i);
            let via_dual = dual(&Nonlinearity::Relu, Cov2::new(s1, s1, s1)).unwrap() + beta * beta;
            assert_abs_diff_eq!(s.sigma(2).get(i, i), s1 / 2.0 + beta * beta, epsilon = 1e-15);
            assert_abs_diff_eq!(s.sigma(2).get(i, i), via_dual, epsilon = 1e-15);
            assert_abs_diff_eq!(s.theta(2).unwrap().get(i, i), s1 * 0.5 + s.sigma(2).get(i, i), epsilon = 1e-15);
        }
        // quadrature agrees with the closed form on the whole stack
        let quad = KernelConfig::with_method(2, beta, Nonlinearity::Relu, DualMethod::Quadrature(80)).unwrap();
        let q = ntk_stack(&circle(5), &quad).unwrap();
        assert!((q.theta(2).unwrap().as_matrix() - s.theta(2).unwrap().as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn depth_one_theta_is_sigma() {
        let s = ntk_stack(&circle(6), &relu(1, 0.3)).unwrap();
        assert_eq!(s.theta(1).unwrap(), s.sigma(1));
    }

    #[test]
    fn recursion_consistent_and_symmetric() {
        let s = ntk_stack(&circle(7), &relu(4, 0.1)).unwrap();
        assert!(s.recursion_residual() <= 1e-12);
        let t = s.theta(4).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(t.get(i, j), t.get(j, i));
            }
        }
    }

    #[test]
    fn each_level_adds_a_positive_sigma_term() {
        // Θ^(ℓ+1)(x,x) exceeds Θ^(ℓ)(x,x)·Σ̇^(ℓ+1)(x,x) by Σ^(ℓ+1)(x,x) > 0. Θ itself
        // is not monotone in ℓ: relu halves it through Σ̇ = 1/2 on the diagonal.
        let m = circle(3);
        let s = ntk_stack(&m, &relu(6, 0.1)).unwrap();
        let diag: Vec<f64> = (1..=6).map(|l| s.theta(l).unwrap().get(0, 0)).collect();
        for l in 1..6 {
            let carried = s.theta(l).unwrap().get(0, 0) * s.sigma_dot(l + 1).unwrap().get(0, 0);
            assert!(s.theta(l + 1).unwrap().get(0, 0) - carried > 0.0);
        }
        assert_abs_diff_eq!(diag[0], 0.51, epsilon = 1e-15);
        assert_abs_diff_eq!(diag[1], 0.52, epsilon = 1e-15);
        assert_abs_diff_eq!(diag[2], 0.4025, epsilon = 1e-15);
    }

    #[test]
    fn cross_kernel_reproduces_gram_columns() {
        let m = circle(8);
        let cfg = relu(4, 0.1);
        let s = ntk_stack(&m, &cfg).unwrap();
        let queries = m.points().rows(2, 2).into_owned();
        let c = cross_kernel(&m, &cfg, &queries).unwrap();
        for i in 0..8 {
            assert_abs_diff_eq!(c.theta_top()[(0, i)], s.theta(4).unwrap().get(2, i), epsilon = 1e-14);
            assert_abs_diff_eq!(c.sigma_top()[(1, i)], s.sigma(4).get(3, i), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(c.query_theta_diag[3][0], s.theta(4).unwrap().get(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn cross_kernel_depth_one_formula() {
        let m = circle(4);
        let cfg = relu(1, 0.2);
        let q = DMatrix::from_row_slice(1, 2, &[0.3, -2.0]);
        let c = cross_kernel(&m, &cfg, &q).unwrap();
        for i in 0..4 {
            let x = m.point(i);
            let expected = (0.3 * x[0] - 2.0 * x[1]) / 2.0 + 0.04;
            assert_abs_diff_eq!(c.theta_top()[(0, i)], expected, epsilon = 1e-15);
        }
        assert!(cross_kernel(&m, &cfg, &DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn cross_kernel_even_in_angle() {
        let x0 = EmpiricalMeasure::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let cfg = relu(4, 0.1);
        let gammas: Vec<f64> = (1..20).map(|k| k as f64 * 0.15).collect();
        let q = DMatrix::from_fn(2 * gammas.len(), 2, |r, c| {
            let g = if r % 2 == 0 { gammas[r / 2] } else { -gammas[r / 2] };
            if c == 0 { g.cos() } else { g.sin() }
        });
        let k = cross_kernel(&x0, &cfg, &q).unwrap();
        for r in 0..gammas.len() {
            assert_abs_diff_eq!(k.theta_top()[(2 * r, 0)], k.theta_top()[(2 * r + 1, 0)], epsilon = 1e-14);
        }
    }

    #[test]
    fn min_eigenvalue_cases() {
        let id = KernelGram::scalar_block(GramKind::Sigma { level: 1 }, SymMatrix::identity(4), 1);
        assert_abs_diff_eq!(min_eigenvalue(&id).unwrap(), 1.0, epsilon = 1e-15);
        let v = [1.0, 2.0, -1.0];
        let r1 = SymMatrix::from_fn(3, |i, j| v[i] * v[j]);
        let g = KernelGram::scalar_block(GramKind::Sigma { level: 1 }, r1, 1);
        assert!(min_eigenvalue(&g).unwrap().abs() < 1e-10);
    }

    #[test]
    fn zero_input_without_bias() {
        let m = EmpiricalMeasure::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let s = ntk_stack(&m, &relu(3, 0.0)).unwrap();
        assert_eq!(s.sigma(3).get(0, 0), 0.0);
        assert!(s.theta(3).unwrap().is_finite());
    }

    #[test]
    fn materialize_scalar_block() {
        let s = ntk_stack(&circle(3), &relu(2, 0.1)).unwrap();
        let g = s.theta_gram(2).unwrap();
        let full = g.materialize();
        assert_eq!(full.dim(), 6);
        assert_eq!(full.get(2, 4), g.entries.get(1, 2));
        assert_eq!(full.get(2, 5), 0.0);
    }

    fn rotation(n0: usize, seed: u64) -> DMatrix<f64> {
        let z = crate::numerics::standard_normal(crate::numerics::RngStream::new(seed, 77), n0 * n0);
        DMatrix::from_row_slice(n0, n0, &z).qr().q()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn grams_invariant_under_orthogonal_maps(seed in 0u64..1000, n in 2usize..7, n0 in 2usize..5) {
            let z = crate::numerics::standard_normal(crate::numerics::RngStream::new(seed, 5), n * n0);
            let pts = DMatrix::from_row_slice(n, n0, &z);
            let rotated = &pts * rotation(n0, seed);
            let cfg = relu(3, 0.2);
            let a = ntk_stack(&EmpiricalMeasure::new(pts).unwrap(), &cfg).unwrap();
            let b = ntk_stack(&EmpiricalMeasure::new(rotated).unwrap(), &cfg).unwrap();
            for level in 1..=3 {
                let d = (a.theta(level).unwrap().as_matrix() - b.theta(level).unwrap().as_matrix()).amax();
                prop_assert!(d <= 1e-12, "level {} deviation {}", level, d);
            }
        }

        #[test]
        fn sigma_grams_are_psd(seed in 0u64..1000, n in 2usize..12) {
            let z = crate::numerics::standard_normal(crate::numerics::RngStream::new(seed, 6), n * 3);
            let m = EmpiricalMeasure::new(DMatrix::from_row_slice(n, 3, &z)).unwrap();
            let s = ntk_stack(&m, &relu(4, 0.1)).unwrap();
            for level in 1..=4 {
                let g = s.sigma(level);
                let low = sym_eig(g).unwrap().values.last().copied().unwrap();
                prop_assert!(low >= -1e-10 * g.trace() / n as f64);
            }
        }
    }
}
