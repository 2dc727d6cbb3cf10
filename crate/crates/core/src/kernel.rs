//! Kernel functions, Gram matrices and the average-interpoint-distance
//! bandwidth heuristic.
//!
//! All three kernels have unit self-similarity, so every Gram matrix has
//! a unit diagonal and `‖K‖₂ ≤ n`.

use std::f64::consts::FRAC_2_PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `exp(-‖x - x'‖₂² / (2σ²))`
    Rbf,
    /// `exp(-‖x - x'‖₁ / σ)`
    Laplace,
    /// `(2/π) arcsin(xᵀx' / (‖x‖ ‖x'‖))`
    Angular,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Laplace => "laplace",
            KernelFamily::Angular => "angular",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" | "gaussian" => Ok(KernelFamily::Rbf),
            "laplace" | "laplacian" => Ok(KernelFamily::Laplace),
            "angular" | "arcsin" => Ok(KernelFamily::Angular),
            other => Err(invalid(format!("unknown kernel {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Bandwidth; ignored by the angular kernel.
    pub sigma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if family != KernelFamily::Angular && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(KernelSpec { family, sigma })
    }

    pub fn rbf(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf, sigma)
    }

    pub fn laplace(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::Laplace, sigma)
    }

    pub fn angular() -> Self {
        KernelSpec {
            family: KernelFamily::Angular,
            sigma: 1.0,
        }
    }

    /// Builds a spec with the bandwidth chosen by [`bandwidth_heuristic`].
    pub fn with_heuristic_bandwidth(family: KernelFamily, x: &Array2<f64>) -> Result<Self> {
        match family {
            KernelFamily::Angular => Ok(Self::angular()),
            _ => Self::new(family, bandwidth_heuristic(family, x)?),
        }
    }

    pub fn eval(&self, x: ArrayView1<f64>, x2: ArrayView1<f64>) -> Result<f64> {
        if x.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: x2.len(),
            });
        }
        match self.family {
            KernelFamily::Angular => {
                let (nx, nx2) = (x.dot(&x).sqrt(), x2.dot(&x2).sqrt());
                if nx == 0.0 {
                    return Err(Error::ZeroVector { row: 0 });
                }
                if nx2 == 0.0 {
                    return Err(Error::ZeroVector { row: 1 });
                }
                Ok(self.eval_unchecked(x, x2, nx, nx2))
            }
            _ => Ok(self.eval_unchecked(x, x2, 0.0, 0.0)),
        }
    }

    /// `norm_x`/`norm_x2` are only read by the angular kernel.
    fn eval_unchecked(
        &self,
        x: ArrayView1<f64>,
        x2: ArrayView1<f64>,
        norm_x: f64,
        norm_x2: f64,
    ) -> f64 {
        match self.family {
            KernelFamily::Rbf => {
                let sq = Zip::from(&x).and(&x2).fold(0.0, |acc, a, b| acc + (a - b) * (a - b));
                (-sq / (2.0 * self.sigma * self.sigma)).exp()
            }
            KernelFamily::Laplace => {
                let l1 = Zip::from(&x).and(&x2).fold(0.0, |acc, a, b| acc + (a - b).abs());
                (-l1 / self.sigma).exp()
            }
            KernelFamily::Angular => {
                // (2/π) arcsin(cos θ) = 1 - 2θ/π, with θ from the
                // half-angle form, which stays accurate near θ = 0 and π.
                let (mut diff, mut sum) = (0.0, 0.0);
                Zip::from(&x).and(&x2).for_each(|a, b| {
                    let (u, v) = (a / norm_x, b / norm_x2);
                    diff += (u - v) * (u - v);
                    sum += (u + v) * (u + v);
                });
                let theta = 2.0 * diff.sqrt().atan2(sum.sqrt());
                1.0 - FRAC_2_PI * theta
            }
        }
    }

    fn row_norms(&self, x: ArrayView2<f64>, offset: usize) -> Result<Array1<f64>> {
        let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        if self.family == KernelFamily::Angular {
            if let Some(i) = norms.iter().position(|&v| v == 0.0) {
                return Err(Error::ZeroVector { row: i + offset });
            }
        }
        Ok(norms)
    }

    /// `K[i][j] = κ(xᵢ, xⱼ)`.
    pub fn matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let n = x.nrows();
        if n == 0 {
            return Err(invalid("kernel matrix needs at least one row"));
        }
        let norms = self.row_norms(x.view(), 0)?;
        let mut k = Array2::zeros((n, n));
        k.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for j in 0..=i {
                    row[j] = if i == j {
                        1.0
                    } else {
                        self.eval_unchecked(x.row(i), x.row(j), norms[i], norms[j])
                    };
                }
            });
        for i in 0..n {
            for j in (i + 1)..n {
                k[[i, j]] = k[[j, i]];
            }
        }
        Ok(k)
    }

    /// `k'ᵢ = κ(x', xᵢ)` for every training row.
    pub fn vector(&self, x_train: &Array2<f64>, x_test: ArrayView1<f64>) -> Result<Array1<f64>> {
        let k = self.cross_matrix(&x_test.insert_axis(Axis(0)).to_owned(), x_train)?;
        Ok(k.row(0).to_owned())
    }

    /// `m x n` matrix of `κ(test_i, train_j)`.
    pub fn cross_matrix(&self, x_test: &Array2<f64>, x_train: &Array2<f64>) -> Result<Array2<f64>> {
        if x_test.ncols() != x_train.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x_train.ncols(),
                found: x_test.ncols(),
            });
        }
        let test_norms = self.row_norms(x_test.view(), 0)?;
        let train_norms = self.row_norms(x_train.view(), 0)?;
        let mut k = Array2::zeros((x_test.nrows(), x_train.nrows()));
        k.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for (j, slot) in row.iter_mut().enumerate() {
                    *slot = self.eval_unchecked(
                        x_test.row(i),
                        x_train.row(j),
                        test_norms[i],
                        train_norms[j],
                    );
                }
            });
        Ok(k)
    }
}

/// Bandwidth from the average interpoint distance over all `n²` ordered
/// pairs (including `i = j`).
///
/// RBF: `σ = sqrt(mean ‖xᵢ - xⱼ‖₂²)`. Laplace: `σ = mean ‖xᵢ - xⱼ‖₁`.
/// The angular kernel has no bandwidth; it returns 1.
pub fn bandwidth_heuristic(family: KernelFamily, x: &Array2<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(invalid("bandwidth heuristic needs at least 2 rows"));
    }
    let pair: fn(ArrayView1<f64>, ArrayView1<f64>) -> f64 = match family {
        KernelFamily::Angular => return Ok(1.0),
        KernelFamily::Rbf => |a, b| Zip::from(&a).and(&b).fold(0.0, |s, u, v| s + (u - v) * (u - v)),
        KernelFamily::Laplace => |a, b| Zip::from(&a).and(&b).fold(0.0, |s, u, v| s + (u - v).abs()),
    };
    // Strict upper triangle, doubled; the diagonal contributes zero.
    let upper: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            ((i + 1)..n).map(|j| pair(xi, x.row(j))).sum::<f64>()
        })
        .sum();
    let mean = 2.0 * upper / (n as f64 * n as f64);
    let sigma = match family {
        KernelFamily::Rbf => mean.sqrt(),
        _ => mean,
    };
    if sigma <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(sigma)
}
