//! Closed-form error-bound quantities for RFM-KRR.
//!
//! Everything is driven by the core norm `‖K^{1/2}(K + nλI)⁻¹y‖²`. With
//! `K = UΣUᵀ` and `cᵢ = uᵢᵀy` it is `Σ σᵢ cᵢ² / (σᵢ + nλ)²`. Each term is
//! at most `cᵢ²/(4nλ)` (the maximum of `σ/(σ + nλ)²` is at `σ = nλ`),
//! hence the cap `‖y‖²/(4nλ)`.
//!
//! The eigen route clamps negative eigenvalues to zero. When `α = (K +
//! nλI)⁻¹y` is already known, [`core_norm_from_dual`] gives the same value
//! as the quadratic form `αᵀKα` at the cost of one matrix-vector product,
//! which is what the experiment runner uses at large `n`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::symmetric_eigen;

/// Clamped eigenvalues of `K` and the coordinates of `y` in its eigenbasis.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: Array1<f64>,
    pub coords: Array1<f64>,
}

impl Spectrum {
    pub fn new(k: &Array2<f64>, y: &Array1<f64>) -> Result<Self> {
        if k.nrows() != k.ncols() || k.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: k.nrows(),
                found: y.len(),
            });
        }
        let (values, vectors) = symmetric_eigen(k.view())?;
        Ok(Spectrum {
            eigenvalues: values.mapv(|v| v.max(0.0)),
            coords: vectors.t().dot(y),
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    fn weighted_sum(&self, lambda: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let shift = self.n() as f64 * lambda;
        self.eigenvalues
            .iter()
            .zip(self.coords.iter())
            .map(|(&sigma, &c)| weight(sigma) * c * c / ((sigma + shift) * (sigma + shift)))
            .sum()
    }

    /// `Σ σᵢ cᵢ² / (σᵢ + nλ)²`.
    pub fn core_norm(&self, lambda: f64) -> f64 {
        self.weighted_sum(lambda, |sigma| sigma)
    }

    /// `Σ (σᵢ - σᵢ²/n)₊ cᵢ² / (σᵢ + nλ)²`, the lower-bound core.
    pub fn lower_core(&self, lambda: f64) -> f64 {
        let n = self.n() as f64;
        self.weighted_sum(lambda, |sigma| (sigma - sigma * sigma / n).max(0.0))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("lambda must be positive, got {lambda}")))
    }
}

fn check_s(s: usize) -> Result<()> {
    if s == 0 {
        Err(invalid("s must be at least 1"))
    } else {
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `‖K^{1/2}(K + nλI)⁻¹y‖²` via the eigendecomposition of `K`.
pub fn core_norm(k: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(Spectrum::new(k, y)?.core_norm(lambda))
}

/// `αᵀKα` for `α = (K + nλI)⁻¹y`.
pub fn core_norm_from_dual(k: &Array2<f64>, alpha: &Array1<f64>) -> f64 {
    alpha.dot(&k.dot(alpha))
}

/// `αᵀ(K - K²/n)α` for `α = (K + nλI)⁻¹y`, floored at zero.
pub fn lower_core_from_dual(k: &Array2<f64>, alpha: &Array1<f64>) -> f64 {
    let ka = k.dot(alpha);
    (alpha.dot(&ka) - ka.dot(&ka) / alpha.len() as f64).max(0.0)
}

/// `‖y‖²/(4nλ)`.
pub fn cap(y: &Array1<f64>, lambda: f64) -> f64 {
    y.dot(y) / (4.0 * y.len() as f64 * lambda)
}

/// `(4b/s) · core_norm`.
pub fn theorem1_bound(k: &Array2<f64>, y: &Array1<f64>, lambda: f64, s: usize, b: f64) -> Result<f64> {
    check_s(s)?;
    Ok(4.0 * b / s as f64 * core_norm(k, y, lambda)?)
}

/// `(1/s) · core_norm`: the upper bound without the `4b` factor.
pub fn plot_bound(k: &Array2<f64>, y: &Array1<f64>, lambda: f64, s: usize) -> Result<f64> {
    check_s(s)?;
    Ok(core_norm(k, y, lambda)? / s as f64)
}

/// `(1/s) ‖(K - K²/n)^{1/2}(K + nλI)⁻¹y‖²`.
pub fn lower_quantity(k: &Array2<f64>, y: &Array1<f64>, lambda: f64, s: usize) -> Result<f64> {
    check_lambda(lambda)?;
    check_s(s)?;
    Ok(Spectrum::new(k, y)?.lower_core(lambda) / s as f64)
}

/// Smallest `λ` for which the high-probability upper bound applies:
/// `(2b/√n) · sqrt(ln(s/δ))`.
pub fn lambda_threshold(n: usize, s: usize, b: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    check_s(s)?;
    if n == 0 || b.is_nan() || b <= 0.0 {
        return Err(invalid("lambda threshold needs n >= 1 and b > 0"));
    }
    Ok(2.0 * b / (n as f64).sqrt() * (s as f64 / delta).ln().sqrt())
}

/// Sample size beyond which `‖Ξ - ΨᵀΨ/n‖₂ ≤ ε` with probability `1 - δ`:
/// `ceil(8b²/(3ε²) · ln(s/δ))`, at least 1.
pub fn sample_threshold(epsilon: f64, s: usize, b: f64, delta: f64) -> Result<usize> {
    check_delta(delta)?;
    check_s(s)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) || b.is_nan() || b <= 0.0 {
        return Err(invalid("sample threshold needs epsilon > 0 and b > 0"));
    }
    let raw = 8.0 * b * b / (3.0 * epsilon * epsilon) * (s as f64 / delta).ln();
    Ok((raw.ceil() as usize).max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lambda: f64,
    pub s: usize,
    pub b: f64,
    pub delta: f64,
    pub epsilon: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            lambda: 1e-2,
            s: 100,
            b: 2.0,
            delta: 0.05,
            epsilon: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub s: usize,
    pub lambda: f64,
    pub b: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub core_norm: f64,
    /// `(4b/s) · core_norm`.
    pub theorem1_bound: f64,
    /// `core_norm / s`.
    pub plot_bound: f64,
    /// `‖y‖²/(4nλ)`, which caps `core_norm`.
    pub cap: f64,
    pub lower_quantity: f64,
    /// `lower_quantity · (sλ/(1 + sλ))²`, the lower-bound proof's constant
    /// made explicit. Informational only.
    pub lower_with_constant: f64,
    pub lambda_threshold: f64,
    pub n_threshold: usize,
}

impl BoundReport {
    /// All quantities from one eigendecomposition of `k`.
    pub fn compute(k: &Array2<f64>, y: &Array1<f64>, inputs: BoundInputs) -> Result<Self> {
        check_lambda(inputs.lambda)?;
        let spectrum = Spectrum::new(k, y)?;
        let core = spectrum.core_norm(inputs.lambda);
        let lower = spectrum.lower_core(inputs.lambda);
        Self::assemble(y, core, lower, inputs)
    }

    /// Same report from the dual coefficients `α = (K + nλI)⁻¹y`.
    pub fn from_dual(k: &Array2<f64>, alpha: &Array1<f64>, y: &Array1<f64>, inputs: BoundInputs) -> Result<Self> {
        check_lambda(inputs.lambda)?;
        if alpha.len() != y.len() || k.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: alpha.len(),
            });
        }
        Self::assemble(
            y,
            core_norm_from_dual(k, alpha).max(0.0),
            lower_core_from_dual(k, alpha),
            inputs,
        )
    }

    fn assemble(y: &Array1<f64>, core: f64, lower: f64, inputs: BoundInputs) -> Result<Self> {
        check_s(inputs.s)?;
        let n = y.len();
        let s = inputs.s as f64;
        let shrink = s * inputs.lambda / (1.0 + s * inputs.lambda);
        Ok(BoundReport {
            n,
            s: inputs.s,
            lambda: inputs.lambda,
            b: inputs.b,
            delta: inputs.delta,
            epsilon: inputs.epsilon,
            core_norm: core,
            theorem1_bound: 4.0 * inputs.b * core / s,
            plot_bound: core / s,
            cap: cap(y, inputs.lambda),
            lower_quantity: lower / s,
            lower_with_constant: lower / s * shrink * shrink,
            lambda_threshold: lambda_threshold(n, inputs.s, inputs.b, inputs.delta)?,
            n_threshold: sample_threshold(inputs.epsilon, inputs.s, inputs.b, inputs.delta)?,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
