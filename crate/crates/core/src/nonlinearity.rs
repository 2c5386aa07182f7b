//! Activations, their Gaussian duals and Hermite expansions.
//!
//! The dual of a nonlinearity is the map
//! `cov ↦ E[σ(X) σ(Y)]` for `(X, Y) ∼ N(0, cov)`; with `σ̇` in place of `σ` it
//! gives the derivative kernel. Relu has arc-cosine closed forms. Everything
//! else goes through a polar quadrature: the angle is integrated with
//! Gauss–Legendre on arcs split where either argument changes sign, and the
//! radius with a Gauss rule for the Rayleigh weight. Activations whose only
//! kink sits at the origin are integrated to machine precision that way.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{NtkError, Result};
use crate::numerics::{gauss_legendre, half_normal_rule, rayleigh_rule, MAX_QUADRATURE_ORDER};

/// Default order of the angular and radial quadrature rules.
pub const DEFAULT_DUAL_ORDER: usize = 80;

const CORRELATION_SLACK: f64 = 1e-12;

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied activation with its derivative.
#[derive(Clone)]
pub struct CustomActivation {
    name: String,
    value: ScalarMap,
    derivative: ScalarMap,
    lipschitz: f64,
}

#[derive(Clone)]
pub enum Nonlinearity {
    Relu,
    Erf,
    Tanh,
    /// `c₀ + c₁x + c₂x² + …`
    Polynomial(Vec<f64>),
    Custom(CustomActivation),
}

impl Nonlinearity {
    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lipschitz: f64,
    ) -> Self {
        Nonlinearity::Custom(CustomActivation {
            name: name.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            lipschitz,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Erf => libm::erf(x),
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci),
            Nonlinearity::Custom(c) => (c.value)(x),
        }
    }

    /// Derivative; relu uses `σ̇(0) = 0`.
    pub fn apply_dot(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Erf => 2.0 / PI.sqrt() * (-x * x).exp(),
            Nonlinearity::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Nonlinearity::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &ck)| acc * x + k as f64 * ck),
            Nonlinearity::Custom(c) => (c.derivative)(x),
        }
    }

    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            Nonlinearity::Relu | Nonlinearity::Tanh => 1.0,
            Nonlinearity::Erf => 2.0 / PI.sqrt(),
            Nonlinearity::Polynomial(c) => {
                if c.iter().skip(2).all(|&ck| ck == 0.0) {
                    c.get(1).copied().unwrap_or(0.0).abs()
                } else {
                    f64::INFINITY
                }
            }
            Nonlinearity::Custom(c) => c.lipschitz,
        }
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self, Nonlinearity::Polynomial(_))
    }

    pub fn default_dual_method(&self) -> DualMethod {
        match self {
            Nonlinearity::Relu => DualMethod::ClosedForm,
            _ => DualMethod::Quadrature(DEFAULT_DUAL_ORDER),
        }
    }
}

impl fmt::Display for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Relu => f.write_str("relu"),
            Nonlinearity::Erf => f.write_str("erf"),
            Nonlinearity::Tanh => f.write_str("tanh"),
            Nonlinearity::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
            Nonlinearity::Custom(c) => write!(f, "custom:{}", c.name),
        }
    }
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Nonlinearity {
    type Err = NtkError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Nonlinearity::Relu),
            "erf" => Ok(Nonlinearity::Erf),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => {
                let coeffs = other
                    .strip_prefix("poly:")
                    .ok_or_else(|| NtkError::arg(format!("unknown nonlinearity {other:?}")))?;
                let parsed = coeffs
                    .split(',')
                    .map(|c| c.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| NtkError::arg(format!("bad polynomial coefficients {coeffs:?}: {e}")))?;
                if parsed.is_empty() || parsed.iter().any(|c| !c.is_finite()) {
                    return Err(NtkError::arg(format!("bad polynomial coefficients {coeffs:?}")));
                }
                Ok(Nonlinearity::Polynomial(parsed))
            }
        }
    }
}

impl Serialize for Nonlinearity {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Nonlinearity {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Covariance of a centered bivariate Gaussian `(X, Y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Cov2 { xx, xy, yy }
    }

    /// Unit variances with correlation `rho`.
    pub fn standardized(rho: f64) -> Self {
        Cov2 { xx: 1.0, xy: rho, yy: 1.0 }
    }

    pub fn swapped(&self) -> Self {
        Cov2 {
            xx: self.yy,
            xy: self.xy,
            yy: self.xx,
        }
    }

    /// Correlation clamped to `[−1, 1]`; `None` when a variance is zero.
    fn correlation(&self) -> Result<Option<f64>> {
        if !(self.xx >= 0.0 && self.yy >= 0.0 && self.xy.is_finite()) {
            return Err(NtkError::arg(format!("covariance {self:?} is not PSD")));
        }
        if self.xx == 0.0 || self.yy == 0.0 {
            if self.xy != 0.0 {
                return Err(NtkError::arg(format!("covariance {self:?} is not PSD")));
            }
            return Ok(None);
        }
        let rho = self.xy / (self.xx * self.yy).sqrt();
        if rho.abs() > 1.0 + CORRELATION_SLACK {
            return Err(NtkError::arg(format!(
                "covariance {self:?} is not PSD (correlation {rho})"
            )));
        }
        Ok(Some(rho.clamp(-1.0, 1.0)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DualMethod {
    ClosedForm,
    Quadrature(usize),
}

/// `E[σ(X)σ(Y)]` with the nonlinearity's default method.
pub fn dual(nl: &Nonlinearity, cov: Cov2) -> Result<f64> {
    dual_with(nl, cov, nl.default_dual_method())
}

/// `E[σ̇(X)σ̇(Y)]` with the nonlinearity's default method.
pub fn dual_dot(nl: &Nonlinearity, cov: Cov2) -> Result<f64> {
    dual_dot_with(nl, cov, nl.default_dual_method())
}

pub fn dual_with(nl: &Nonlinearity, cov: Cov2, method: DualMethod) -> Result<f64> {
    let rho = cov.correlation()?;
    match (method, nl) {
        (DualMethod::ClosedForm, Nonlinearity::Relu) => Ok(match rho {
            None => 0.0,
            Some(rho) => relu_dual(rho) * (cov.xx * cov.yy).sqrt(),
        }),
        (DualMethod::ClosedForm, other) => Err(NtkError::arg(format!("no closed-form dual for {other}"))),
        (DualMethod::Quadrature(order), _) => {
            let f = |x: f64| nl.apply(x);
            pair_expectation(&f, &f, cov, rho, order)
        }
    }
}

pub fn dual_dot_with(nl: &Nonlinearity, cov: Cov2, method: DualMethod) -> Result<f64> {
    let rho = cov.correlation()?;
    match (method, nl) {
        (DualMethod::ClosedForm, Nonlinearity::Relu) => Ok(match rho {
            None => 0.0,
            Some(rho) => relu_dual_dot(rho),
        }),
        (DualMethod::ClosedForm, other) => Err(NtkError::arg(format!("no closed-form dual for {other}"))),
        (DualMethod::Quadrature(order), _) => {
            let f = |x: f64| nl.apply_dot(x);
            pair_expectation(&f, &f, cov, rho, order)
        }
    }
}

/// Arc-cosine kernel of degree one at unit variances.
fn relu_dual(rho: f64) -> f64 {
    ((1.0 - rho * rho).max(0.0).sqrt() + (PI - rho.acos()) * rho) / (2.0 * PI)
}

/// Arc-cosine kernel of degree zero.
fn relu_dual_dot(rho: f64) -> f64 {
    (PI - rho.acos()) / (2.0 * PI)
}

/// `E[f(X) g(Y)]`, `(X, Y) ∼ N(0, cov)`.
///
/// Writing `(Z₁, Z₂) = r(cos φ, sin φ)` gives `X = √xx r cos φ` and
/// `Y = √yy r cos(φ − ψ)` with `cos ψ = ρ`. Folding `φ ∈ [π, 2π)` onto
/// `r < 0` leaves `(1/2π) ∫₀^π dφ ∫₀^∞ r e^{−r²/2} [h(r) + h(−r)] dr`.
fn pair_expectation(
    f: &dyn Fn(f64) -> f64,
    g: &dyn Fn(f64) -> f64,
    cov: Cov2,
    rho: Option<f64>,
    order: usize,
) -> Result<f64> {
    let Some(rho) = rho else {
        // a zero variance pins that coordinate to 0
        let half = half_normal_rule(order.min(MAX_QUADRATURE_ORDER))?;
        let (pinned, free, sd) = if cov.xx == 0.0 {
            (f(0.0), g, cov.yy.sqrt())
        } else {
            (g(0.0), f, cov.xx.sqrt())
        };
        if pinned == 0.0 {
            return Ok(0.0);
        }
        let mean = half.integrate(|x| free(sd * x) + free(-sd * x));
        return Ok(pinned * mean);
    };
    let radial = rayleigh_rule(order)?;
    let angular = gauss_legendre(order)?;
    let (sx, sy) = (cov.xx.sqrt(), cov.yy.sqrt());
    let psi = rho.acos();

    let mut breaks = vec![0.0, PI / 2.0, PI];
    let shifted = if psi > PI / 2.0 { psi - PI / 2.0 } else { psi + PI / 2.0 };
    if breaks.iter().all(|b| (b - shifted).abs() > 1e-14) {
        breaks.push(shifted);
    }
    breaks.sort_by(f64::total_cmp);

    let inner = |phi: f64| -> f64 {
        let a = sx * phi.cos();
        let b = sy * (phi - psi).cos();
        radial.integrate(|r| f(a * r) * g(b * r) + f(-a * r) * g(-b * r))
    };
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let half_width = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        total += half_width * angular.integrate(|t| inner(mid + half_width * t));
    }
    Ok(total / (2.0 * PI))
}

/// Scalar dual `μ̂` of a nonlinearity at fixed variances, as a function of the correlation.
#[derive(Clone, Debug)]
pub struct DualActivation {
    pub source: Nonlinearity,
    pub variance_x: f64,
    pub variance_y: f64,
    pub method: DualMethod,
}

impl DualActivation {
    pub fn new(source: Nonlinearity, variance_x: f64, variance_y: f64, method: DualMethod) -> Result<Self> {
        if !(variance_x > 0.0 && variance_y > 0.0) {
            return Err(NtkError::arg("dual activation variances must be positive"));
        }
        Ok(DualActivation {
            source,
            variance_x,
            variance_y,
            method,
        })
    }

    fn cov(&self, rho: f64) -> Cov2 {
        Cov2::new(self.variance_x, rho * (self.variance_x * self.variance_y).sqrt(), self.variance_y)
    }

    pub fn value(&self, rho: f64) -> Result<f64> {
        dual_with(&self.source, self.cov(rho), self.method)
    }

    pub fn derivative_value(&self, rho: f64) -> Result<f64> {
        dual_dot_with(&self.source, self.cov(rho), self.method)
    }
}

/// Evaluates orthonormal probabilists' Hermite polynomials `h_0..=h_order` at `x`.
pub fn hermite_values(x: f64, order: usize) -> Vec<f64> {
    let mut h = Vec::with_capacity(order + 1);
    h.push(1.0);
    if order >= 1 {
        h.push(x);
    }
    for k in 1..order {
        let kf = k as f64;
        let next = (x * h[k] - kf.sqrt() * h[k - 1]) / (kf + 1.0).sqrt();
        h.push(next);
    }
    h
}

/// Coefficients of `μ(x) = σ(scale · x)` in the orthonormal Hermite basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HermiteExpansion {
    pub coefficients: Vec<f64>,
    pub order: usize,
    pub scale: f64,
    /// `E[μ(X)²]`
    pub second_moment: f64,
    /// L² norm of the truncated remainder, `sqrt(E[μ²] − Σ aᵢ²)`.
    pub truncation_error: f64,
}

impl HermiteExpansion {
    /// Truncated series `Σ aᵢ h_i(x)`.
    pub fn reconstruct(&self, x: f64) -> f64 {
        hermite_values(x, self.order)
            .iter()
            .zip(&self.coefficients)
            .map(|(h, a)| h * a)
            .sum()
    }
}

/// `aᵢ = E[μ(X) hᵢ(X)]` for `i ≤ order`, `X ∼ N(0, 1)`.
pub fn hermite_expand(nl: &Nonlinearity, scale: f64, order: usize) -> Result<HermiteExpansion> {
    if order >= MAX_QUADRATURE_ORDER {
        return Err(NtkError::arg(format!(
            "Hermite order {order} exceeds quadrature capacity ({})",
            MAX_QUADRATURE_ORDER - 1
        )));
    }
    if !(scale > 0.0) {
        return Err(NtkError::arg(format!("Hermite scale must be positive, got {scale}")));
    }
    let rule = half_normal_rule(MAX_QUADRATURE_ORDER)?;
    let mut coefficients = vec![0.0; order + 1];
    let mut second_moment = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let plus = nl.apply(scale * x);
        let minus = nl.apply(-scale * x);
        second_moment += w * (plus * plus + minus * minus);
        let even = w * (plus + minus);
        let odd = w * (plus - minus);
        for (i, h) in hermite_values(x, order).into_iter().enumerate() {
            coefficients[i] += h * if i % 2 == 0 { even } else { odd };
        }
    }
    let captured: f64 = coefficients.iter().map(|a| a * a).sum();
    Ok(HermiteExpansion {
        coefficients,
        order,
        scale,
        second_moment,
        truncation_error: (second_moment - captured).max(0.0).sqrt(),
    })
}

/// `μ̂(ρ) = Σ_{i ≤ M} aᵢ² ρ^i`.
pub fn dual_from_expansion(he: &HermiteExpansion, rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0 + CORRELATION_SLACK) {
        return Err(NtkError::arg(format!("correlation {rho} outside [-1, 1]")));
    }
    let rho = rho.clamp(-1.0, 1.0);
    Ok(he
        .coefficients
        .iter()
        .rev()
        .fold(0.0, |acc, a| acc * rho + a * a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdVerdict {
    CertifiedPdTruncated,
    NotPdPolynomial,
    Inconclusive,
}

/// Truncated Schoenberg-type check that the depth-2 activation kernel is
/// strictly positive definite on the unit sphere.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdCertificate {
    pub even_nonzero_count: usize,
    pub odd_nonzero_count: usize,
    pub threshold: f64,
    pub verdict: PdVerdict,
    /// Power-series coefficients `b_k` of `ν(ρ) = Σ b_k ρ^k`, `ρ = xᵀx'`.
    pub series: Vec<f64>,
}

/// Minimum number of even and of odd series coefficients above the threshold.
pub const PD_MIN_COUNT: usize = 3;

/// On the sphere, `Σ^(2)(x, x') = ν(xᵀx')` with
/// `ν(ρ) = β² + Σ aᵢ² ((n₀β² + ρ)/(n₀β² + 1))^i`, where `aᵢ` expand
/// `μ(x) = σ(x √(1/n₀ + β²))`. Re-expanding the shifted powers binomially
/// gives the series of `ν` in `ρ`, whose even and odd coefficients are counted.
pub fn pd_certificate(nl: &Nonlinearity, n0: usize, beta: f64, order: usize, threshold: f64) -> Result<PdCertificate> {
    if order < 8 {
        return Err(NtkError::arg(format!("certificate order must be at least 8, got {order}")));
    }
    if n0 == 0 {
        return Err(NtkError::arg("input dimension must be positive"));
    }
    let n0f = n0 as f64;
    let expansion = hermite_expand(nl, (1.0 / n0f + beta * beta).sqrt(), order)?;
    let shift = n0f * beta * beta;
    let denom_log = (shift + 1.0).ln();

    let mut series = vec![0.0; order + 1];
    series[0] = beta * beta;
    for (i, a) in expansion.coefficients.iter().enumerate() {
        let a2 = a * a;
        if a2 == 0.0 {
            continue;
        }
        // ((s + ρ)/(s + 1))^i = Σ_k C(i, k) s^{i−k} ρ^k / (s + 1)^i
        let mut log_binom = 0.0;
        for (k, b) in series.iter_mut().enumerate().take(i + 1) {
            if k > 0 {
                log_binom += ((i + 1 - k) as f64).ln() - (k as f64).ln();
            }
            let power = i - k;
            let shift_term = if power == 0 {
                0.0
            } else if shift == 0.0 {
                continue;
            } else {
                power as f64 * shift.ln()
            };
            *b += a2 * (log_binom + shift_term - i as f64 * denom_log).exp();
        }
    }
    let even_nonzero_count = series.iter().step_by(2).filter(|&&b| b > threshold).count();
    let odd_nonzero_count = series.iter().skip(1).step_by(2).filter(|&&b| b > threshold).count();
    let verdict = if nl.is_polynomial() {
        PdVerdict::NotPdPolynomial
    } else if even_nonzero_count >= PD_MIN_COUNT && odd_nonzero_count >= PD_MIN_COUNT {
        PdVerdict::CertifiedPdTruncated
    } else {
        PdVerdict::Inconclusive
    };
    Ok(PdCertificate {
        even_nonzero_count,
        odd_nonzero_count,
        threshold,
        verdict,
        series,
    })
}
