use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::rng::RngStream;
use crate::error::{NtkError, Result};

/// Dense symmetric matrix. Entries `(i, j)` and `(j, i)` are bit-identical.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    /// Builds the matrix from its upper triangle; `f` is only called for `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut inner = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..=j {
                let v = f(i, j);
                inner[(i, j)] = v;
                inner[(j, i)] = v;
            }
        }
        SymMatrix { inner }
    }

    /// Symmetrizes `m` as `(m + mᵀ) / 2`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(NtkError::Dimension {
                context: "SymMatrix::from_matrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let dim = m.nrows();
        Ok(Self::from_fn(dim, |i, j| {
            if i == j {
                m[(i, i)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)])
            }
        }))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix {
            inner: DMatrix::identity(dim, dim),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix {
            inner: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        SymMatrix {
            inner: &self.inner * factor,
        }
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, other: &SymMatrix) -> Self {
        SymMatrix {
            inner: self.inner.component_mul(&other.inner),
        }
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix {
            inner: &self.inner + &other.inner,
        }
    }

    /// `self ⊗ Id_k`, with row index `i * k + a`.
    pub fn kron_identity(&self, k: usize) -> Self {
        if k == 1 {
            return self.clone();
        }
        let n = self.dim();
        let mut inner = DMatrix::zeros(n * k, n * k);
        for j in 0..n {
            for i in 0..n {
                let v = self.inner[(i, j)];
                for a in 0..k {
                    inner[(i * k + a, j * k + a)] = v;
                }
            }
        }
        SymMatrix { inner }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }
}

/// Eigenpairs sorted by descending eigenvalue. Column `i` of `vectors` pairs with `values[i]`.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `V diag(λ) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.values.len(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        &scaled * self.vectors.transpose()
    }
}

/// Full symmetric eigendecomposition with eigenvalues in descending order.
pub fn sym_eig(m: &SymMatrix) -> Result<Spectrum> {
    let dim = m.dim();
    if !m.is_finite() {
        return Err(NtkError::arg("sym_eig: matrix has non-finite entries"));
    }
    if dim == 0 {
        return Ok(Spectrum {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = nalgebra::SymmetricEigen::try_new(m.as_matrix().clone(), f64::EPSILON, 30 * dim.max(1))
        .ok_or(NtkError::EigenFailure { dim })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(dim, dim, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(Spectrum { values, vectors })
}

/// Lower Cholesky factor of `m + jitter·I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn new(m: &SymMatrix, jitter: f64) -> Result<Self> {
        if !(jitter >= 0.0) {
            return Err(NtkError::arg(format!("jitter must be non-negative, got {jitter}")));
        }
        let n = m.dim();
        let a = m.as_matrix();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)] + jitter;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(NtkError::NotPositiveDefinite { index: j, value: d });
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(CholeskyFactor { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        if rhs.nrows() != n {
            return Err(NtkError::Dimension {
                context: "CholeskyFactor::solve",
                expected: n,
                found: rhs.nrows(),
            });
        }
        let l = &self.lower;
        let mut x = rhs.clone();
        for c in 0..x.ncols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in (i + 1)..n {
                    s -= l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = s / l[(i, i)];
            }
        }
        Ok(x)
    }
}

/// Solves `(m + jitter·I) X = rhs` by Cholesky.
pub fn solve_spd(m: &SymMatrix, rhs: &DMatrix<f64>, jitter: f64) -> Result<DMatrix<f64>> {
    CholeskyFactor::new(m, jitter)?.solve(rhs)
}

/// Leading `count` eigenpairs of a PSD matrix by power iteration.
///
/// Each new iterate is kept orthogonal to the pairs already found (deflation),
/// and iteration stops once `‖Mv − λv‖ ≤ tol · λ₁`.
pub fn power_iteration(m: &SymMatrix, count: usize, tol: f64, max_iter: usize) -> Result<Spectrum> {
    let dim = m.dim();
    if count > dim {
        return Err(NtkError::arg(format!(
            "power_iteration: requested {count} eigenpairs of a {dim}x{dim} matrix"
        )));
    }
    let a = m.as_matrix();
    let mut rng = RngStream::new(0x9e37_79b9, 0).rng();
    let mut found: Vec<DVector<f64>> = Vec::with_capacity(count);
    let mut values = Vec::with_capacity(count);
    let mut scale = 0.0_f64;

    let deflate = |v: &mut DVector<f64>, found: &[DVector<f64>]| {
        for _ in 0..2 {
            for u in found {
                let c = u.dot(v);
                v.axpy(-c, u, 1.0);
            }
        }
    };

    for index in 0..count {
        let mut v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        deflate(&mut v, &found);
        v.normalize_mut();
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..max_iter.max(1) {
            let mut w = a * &v;
            deflate(&mut w, &found);
            let lambda = v.dot(&w);
            residual = (&w - &v * lambda).norm();
            if index == 0 {
                scale = lambda.abs();
            }
            let threshold = tol * scale.max(f64::MIN_POSITIVE);
            let norm = w.norm();
            if residual <= threshold || norm == 0.0 {
                converged = true;
                break;
            }
            v = w / norm;
        }
        if !converged {
            return Err(NtkError::Convergence { index, residual });
        }
        let mut w = a * &v;
        deflate(&mut w, &found);
        values.push(v.dot(&w));
        found.push(v);
    }
    let mut vectors = DMatrix::zeros(dim, count);
    for (j, v) in found.iter().enumerate() {
        vectors.set_column(j, v);
    }
    Ok(Spectrum { values, vectors })
}
