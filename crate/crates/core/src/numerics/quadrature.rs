//! Gauss rules built by Golub–Welsch from three-term recurrences.
//!
//! Classical families (Hermite, Legendre) use their closed-form recurrence
//! coefficients. The half-line Gaussian weights used for kinked integrands
//! have no classical recurrence; their coefficients come from a Lanczos run on
//! a fine composite Gauss–Legendre discretization of the weight.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use super::linalg::{sym_eig, SymMatrix};
use crate::error::{NtkError, Result};

pub const MAX_QUADRATURE_ORDER: usize = 200;

/// Nodes and positive weights of an `order`-point Gauss rule.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Family {
    Hermite,
    Legendre,
    HalfNormal,
    Rayleigh,
}

fn cache() -> &'static Mutex<HashMap<(Family, usize), Arc<QuadratureRule>>> {
    static CACHE: OnceLock<Mutex<HashMap<(Family, usize), Arc<QuadratureRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(family: Family, order: usize, build: impl FnOnce() -> Result<QuadratureRule>) -> Result<Arc<QuadratureRule>> {
    if order == 0 || order > MAX_QUADRATURE_ORDER {
        return Err(NtkError::arg(format!(
            "quadrature order must be in 1..={MAX_QUADRATURE_ORDER}, got {order}"
        )));
    }
    if let Some(rule) = cache().lock().expect("quadrature cache poisoned").get(&(family, order)) {
        return Ok(Arc::clone(rule));
    }
    let rule = Arc::new(build()?);
    cache()
        .lock()
        .expect("quadrature cache poisoned")
        .insert((family, order), Arc::clone(&rule));
    Ok(rule)
}

/// Probabilists' Gauss–Hermite rule normalized against the standard normal
/// density: `Σ wᵢ f(xᵢ) ≈ E[f(X)]`, `X ∼ N(0, 1)`, exact up to degree `2·order − 1`.
pub fn gauss_hermite(order: usize) -> Result<Arc<QuadratureRule>> {
    cached(Family::Hermite, order, || {
        let offdiag: Vec<f64> = (1..order).map(|k| (k as f64).sqrt()).collect();
        let (mut nodes, mut weights) = golub_welsch(&vec![0.0; order], &offdiag, 1.0)?;
        // enforce exact mirror symmetry about the origin
        for i in 0..order / 2 {
            let j = order - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Ok(QuadratureRule { order, nodes, weights })
    })
}

/// Gauss–Legendre rule on `[−1, 1]` (weights sum to 2).
pub fn gauss_legendre(order: usize) -> Result<Arc<QuadratureRule>> {
    cached(Family::Legendre, order, || {
        let offdiag: Vec<f64> = (1..order)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        let (nodes, weights) = golub_welsch(&vec![0.0; order], &offdiag, 2.0)?;
        Ok(QuadratureRule { order, nodes, weights })
    })
}

/// Gauss rule for the half-line weight `φ(x) = e^{−x²/2}/√(2π)` on `[0, ∞)`
/// (weights sum to 1/2). `E[f(X)] = Σ wᵢ (f(xᵢ) + f(−xᵢ))` is then exact for
/// functions that are polynomial on each side of the origin.
pub fn half_normal_rule(order: usize) -> Result<Arc<QuadratureRule>> {
    cached(Family::HalfNormal, order, || {
        let inv_sqrt_2pi = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        discretized_rule(order, |x| inv_sqrt_2pi * (-0.5 * x * x).exp())
    })
}

/// Gauss rule for the Rayleigh weight `r e^{−r²/2}` on `[0, ∞)` (weights sum to 1),
/// the radial part of a standard bivariate normal.
pub fn rayleigh_rule(order: usize) -> Result<Arc<QuadratureRule>> {
    cached(Family::Rayleigh, order, || discretized_rule(order, |r| r * (-0.5 * r * r).exp()))
}

fn golub_welsch(diag: &[f64], offdiag: &[f64], mass: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let jacobi = SymMatrix::from_fn(n, |i, j| {
        if i == j {
            diag[i]
        } else if j == i + 1 {
            offdiag[i]
        } else {
            0.0
        }
    });
    let mut nodes = sym_eig(&jacobi)?.values;
    nodes.sort_by(f64::total_cmp);
    // Christoffel numbers from the orthonormal recurrence keep tail weights
    // accurate relative to their size, unlike squared eigenvector entries.
    let weights = nodes
        .iter()
        .map(|&x| {
            let (mut prev, mut cur) = (0.0, 1.0);
            let mut sum = 1.0;
            for k in 0..n - 1 {
                let next = ((x - diag[k]) * cur - if k == 0 { 0.0 } else { offdiag[k - 1] * prev }) / offdiag[k];
                prev = cur;
                cur = next;
                sum += cur * cur;
            }
            mass / sum
        })
        .collect();
    Ok((nodes, weights))
}

/// Gauss rule for a weight on `[0, ∞)` with Gaussian decay, from Lanczos on a
/// composite Gauss–Legendre discretization with full reorthogonalization.
fn discretized_rule(order: usize, weight: impl Fn(f64) -> f64) -> Result<QuadratureRule> {
    const PANEL_WIDTH: f64 = 0.25;
    const PANEL_POINTS: usize = 20;
    let reach = (4.0 * order as f64).sqrt() + 12.0;
    let panels = (reach / PANEL_WIDTH).ceil() as usize;
    let gl = gauss_legendre(PANEL_POINTS)?;

    let mut t = Vec::with_capacity(panels * PANEL_POINTS);
    let mut omega = Vec::with_capacity(panels * PANEL_POINTS);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * PANEL_WIDTH;
        for (&x, &w) in gl.nodes.iter().zip(&gl.weights) {
            let node = mid + 0.5 * PANEL_WIDTH * x;
            t.push(node);
            omega.push(0.5 * PANEL_WIDTH * w * weight(node));
        }
    }
    let mass: f64 = omega.iter().sum();
    let k = t.len();

    let mut basis = DMatrix::<f64>::zeros(k, order);
    let mut q: Vec<f64> = omega.iter().map(|w| (w / mass).sqrt()).collect();
    let mut alpha = Vec::with_capacity(order);
    let mut beta = Vec::with_capacity(order);
    for j in 0..order {
        basis.set_column(j, &nalgebra::DVector::from_column_slice(&q));
        let mut r: Vec<f64> = q.iter().zip(&t).map(|(qi, ti)| qi * ti).collect();
        let a: f64 = r.iter().zip(&q).map(|(ri, qi)| ri * qi).sum();
        alpha.push(a);
        if j + 1 == order {
            break;
        }
        for _ in 0..2 {
            for c in 0..=j {
                let col = basis.column(c);
                let proj: f64 = r.iter().zip(col.iter()).map(|(ri, ci)| ri * ci).sum();
                for (ri, ci) in r.iter_mut().zip(col.iter()) {
                    *ri -= proj * ci;
                }
            }
        }
        let b = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(b > 0.0) {
            return Err(NtkError::arg(format!(
                "discretized measure supports fewer than {order} Gauss nodes"
            )));
        }
        beta.push(b);
        q = r.into_iter().map(|v| v / b).collect();
    }
    let (nodes, weights) = golub_welsch(&alpha, &beta, mass)?;
    Ok(QuadratureRule { order, nodes, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn double_factorial(n: i64) -> f64 {
        (1..=n).rev().step_by(2).map(|k| k as f64).product()
    }

    fn normal_moment(p: u32) -> f64 {
        if p % 2 == 1 {
            0.0
        } else if p == 0 {
            1.0
        } else {
            double_factorial(p as i64 - 1)
        }
    }

    #[test]
    fn order_two_matches_moments() {
        let rule = gauss_hermite(2).unwrap();
        assert_abs_diff_eq!(rule.nodes[0], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.nodes[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights[0], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.weights[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn normalized_and_symmetric_for_all_orders() {
        for order in [1, 2, 3, 7, 20, 80, 200] {
            let rule = gauss_hermite(order).unwrap();
            let total: f64 = rule.weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(rule.integrate(|x| x), 0.0, epsilon = 1e-12);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for i in 0..order {
                assert_eq!(rule.nodes[i], -rule.nodes[order - 1 - i]);
            }
        }
    }

    #[test]
    fn fourth_moment_order_twenty() {
        let rule = gauss_hermite(20).unwrap();
        assert_abs_diff_eq!(rule.integrate(|x| x.powi(4)), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn monomials_exact_up_to_degree_2k_minus_1() {
        for order in 1..=12usize {
            let rule = gauss_hermite(order).unwrap();
            for p in 0..(2 * order as u32) {
                let exact = normal_moment(p);
                let got = rule.integrate(|x| x.powi(p as i32));
                // absolute error in units of E|X|^p
                let scale = rule.integrate(|x| x.abs().powi(p as i32)).max(1.0);
                assert!(
                    (got - exact).abs() <= 1e-12 * scale,
                    "order {order}, p {p}: {got} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn order_out_of_range() {
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_hermite(201).is_err());
        assert!(rayleigh_rule(201).is_err());
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let rule = gauss_legendre(10).unwrap();
        assert_abs_diff_eq!(rule.integrate(|x| x.powi(18)), 2.0 / 19.0, epsilon = 1e-14);
        assert_abs_diff_eq!(rule.integrate(|_| 1.0), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn half_normal_moments() {
        // E[|X|^p] = 2 ∫_0^∞ x^p φ(x) dx
        let rule = half_normal_rule(30).unwrap();
        let abs_moment = |p: i32| 2.0 * rule.integrate(|x| x.powi(p));
        assert_abs_diff_eq!(abs_moment(0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(abs_moment(1), (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-13);
        assert_abs_diff_eq!(abs_moment(2), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(abs_moment(3), 2.0 * (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(abs_moment(8), 105.0, epsilon = 1e-10);
    }

    #[test]
    fn half_normal_high_order_is_normalized() {
        let rule = half_normal_rule(200).unwrap();
        assert_abs_diff_eq!(rule.weights.iter().sum::<f64>(), 0.5, epsilon = 1e-13);
        assert!(rule.weights.iter().all(|&w| w >= 0.0));
        assert_abs_diff_eq!(2.0 * rule.integrate(|x| x.powi(6)), 15.0, epsilon = 1e-10);
    }

    #[test]
    fn rayleigh_moments() {
        // E[R^p] = 2^{p/2} Γ(1 + p/2)
        let rule = rayleigh_rule(40).unwrap();
        assert_abs_diff_eq!(rule.integrate(|_| 1.0), 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(rule.integrate(|r| r * r), 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(rule.integrate(|r| r.powi(4)), 8.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            rule.integrate(|r| r),
            (std::f64::consts::PI / 2.0).sqrt(),
            epsilon = 1e-13
        );
    }
}
