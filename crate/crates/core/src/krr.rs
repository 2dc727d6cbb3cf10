//! Exact kernel ridge regression and its random-feature counterpart.
//!
//! Exact KRR predicts `f(x') = k'ᵀ(K + nλI)⁻¹y`. RFM-KRR solves the `s x s`
//! primal system `(ΨᵀΨ + nλI)w = Ψᵀy` and predicts `ψ(x')ᵀw`; by the push-
//! through identity this equals `k̃'ᵀ(K̃ + nλI)⁻¹y` with `K̃ = ΨΨᵀ`, which is
//! what [`rfm_predict_dual`] computes on the `n x n` route.

use ndarray::{Array1, Array2};

use crate::blob;
use crate::error::{invalid, Error, Result};
use crate::feature_map::{approx_kernel_matrix, FeatureMap};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{add_diagonal, solve_spd};

const KRR_MAGIC: &[u8; 8] = b"RFMKRR\0K";
const RFM_MAGIC: &[u8; 8] = b"RFMKRR\0R";

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("lambda must be positive and finite, got {lambda}")))
    }
}

fn check_targets(rows: usize, y: &Array1<f64>) -> Result<()> {
    if rows == 0 {
        return Err(invalid("at least one training sample is required"));
    }
    if rows != y.len() {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: y.len(),
        });
    }
    Ok(())
}

/// `α = (K + nλI)⁻¹y` for a precomputed Gram matrix.
pub fn dual_coefficients(k: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    check_lambda(lambda)?;
    check_targets(k.nrows(), y)?;
    let n = y.len();
    let mut system = k.clone();
    add_diagonal(&mut system, n as f64 * lambda);
    solve_spd(&system, y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KrrModel {
    pub alpha: Array1<f64>,
    pub lambda: f64,
    pub kernel: KernelSpec,
    pub x_train: Array2<f64>,
}

impl KrrModel {
    pub fn fit(x: &Array2<f64>, y: &Array1<f64>, kernel: KernelSpec, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        check_targets(x.nrows(), y)?;
        let k = kernel.matrix(x)?;
        Self::fit_with_gram(x, &k, y, kernel, lambda)
    }

    /// Fits from a kernel matrix the caller already built for `x`.
    pub fn fit_with_gram(
        x: &Array2<f64>,
        k: &Array2<f64>,
        y: &Array1<f64>,
        kernel: KernelSpec,
        lambda: f64,
    ) -> Result<Self> {
        if k.nrows() != x.nrows() || k.ncols() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: k.nrows(),
            });
        }
        let alpha = dual_coefficients(k, y, lambda)?;
        Ok(KrrModel {
            alpha,
            lambda,
            kernel,
            x_train: x.clone(),
        })
    }

    pub fn predict(&self, x_test: &Array2<f64>) -> Result<Array1<f64>> {
        if x_test.nrows() == 0 {
            return Ok(Array1::zeros(0));
        }
        Ok(self.kernel.cross_matrix(x_test, &self.x_train)?.dot(&self.alpha))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = blob::Writer::new(KRR_MAGIC);
        w.u8(match self.kernel.family {
            KernelFamily::Rbf => 0,
            KernelFamily::Laplace => 1,
            KernelFamily::Angular => 2,
        });
        w.f64(self.kernel.sigma);
        w.f64(self.lambda);
        w.matrix(&self.x_train);
        w.vector(&self.alpha);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = blob::Reader::new(bytes, KRR_MAGIC)?;
        let family = match r.u8()? {
            0 => KernelFamily::Rbf,
            1 => KernelFamily::Laplace,
            2 => KernelFamily::Angular,
            t => return Err(Error::Format(format!("unknown kernel tag {t}"))),
        };
        let kernel = KernelSpec { family, sigma: r.f64()? };
        let lambda = r.f64()?;
        let x_train = r.matrix()?;
        let alpha = r.vector()?;
        r.finish()?;
        if alpha.len() != x_train.nrows() {
            return Err(Error::Format("alpha length does not match training rows".into()));
        }
        Ok(KrrModel {
            alpha,
            lambda,
            kernel,
            x_train,
        })
    }
}

/// Primal RFM-KRR weights `w = (ΨᵀΨ + nλI)⁻¹Ψᵀy`; never forms an `n x n`
/// matrix.
pub fn rfm_weights(psi: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    check_lambda(lambda)?;
    check_targets(psi.nrows(), y)?;
    let n = psi.nrows();
    let mut gram = psi.t().dot(psi);
    add_diagonal(&mut gram, n as f64 * lambda);
    solve_spd(&gram, &psi.t().dot(y))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfmModel {
    pub w: Array1<f64>,
    pub lambda: f64,
    pub fm: FeatureMap,
}

impl RfmModel {
    pub fn fit(fm: FeatureMap, x: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<Self> {
        let psi = fm.apply(x)?;
        Self::fit_features(fm, &psi, y, lambda)
    }

    /// Fits from a feature matrix `psi = fm.apply(x)` computed by the caller.
    pub fn fit_features(fm: FeatureMap, psi: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> Result<Self> {
        if psi.ncols() != fm.num_features() {
            return Err(Error::DimensionMismatch {
                expected: fm.num_features(),
                found: psi.ncols(),
            });
        }
        let w = rfm_weights(psi, y, lambda)?;
        Ok(RfmModel { w, lambda, fm })
    }

    pub fn predict(&self, x_test: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.fm.apply(x_test)?.dot(&self.w))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = blob::Writer::new(RFM_MAGIC);
        w.f64(self.lambda);
        w.vector(&self.w);
        self.fm.write_fields(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = blob::Reader::new(bytes, RFM_MAGIC)?;
        let lambda = r.f64()?;
        let w = r.vector()?;
        let fm = FeatureMap::read_fields(&mut r)?;
        r.finish()?;
        if w.len() != fm.num_features() {
            return Err(Error::Format("weight length does not match feature count".into()));
        }
        Ok(RfmModel { w, lambda, fm })
    }
}

/// RFM-KRR predictions through the `n x n` dual system
/// `k̃'ᵀ(K̃ + nλI)⁻¹y`. Cubic in `n`; used to cross-check the primal route.
pub fn rfm_predict_dual(
    fm: &FeatureMap,
    x_train: &Array2<f64>,
    y: &Array1<f64>,
    lambda: f64,
    x_test: &Array2<f64>,
) -> Result<Array1<f64>> {
    let psi = fm.apply(x_train)?;
    let alpha = dual_coefficients(&approx_kernel_matrix(&psi), y, lambda)?;
    let k_test = fm.apply(x_test)?.dot(&psi.t());
    Ok(k_test.dot(&alpha))
}
