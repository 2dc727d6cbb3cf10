//! Random feature maps: random Fourier features for the RBF and Laplace
//! kernels and random sign features for the angular kernel.
//!
//! A map holds one frozen draw of `s` random directions. Row `i` of the
//! feature matrix is `ψ(xᵢ) = s^{-1/2} [ψ(xᵢ; v₁), .., ψ(xᵢ; v_s)]`, so that
//! `ΨΨᵀ` is an unbiased estimate of the kernel matrix.
//!
//! Each column is drawn from its own RNG substream keyed by
//! `(seed, column)`, so a map with `s` features is a prefix of the map with
//! `s' > s` features drawn from the same seed.

use std::f64::consts::{PI, SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{invalid, Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::rng;

const MAGIC: &[u8; 8] = b"RFMKRR\0F";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureFamily {
    /// Gaussian frequencies; approximates the RBF kernel.
    FourierRbf,
    /// Standard Cauchy frequencies; approximates the Laplace kernel.
    FourierLaplace,
    /// `sgn(xᵀv)` with `v` uniform on the unit sphere; approximates the
    /// angular kernel.
    RandomSign,
}

impl FeatureFamily {
    pub fn for_kernel(family: KernelFamily) -> Self {
        match family {
            KernelFamily::Rbf => FeatureFamily::FourierRbf,
            KernelFamily::Laplace => FeatureFamily::FourierLaplace,
            KernelFamily::Angular => FeatureFamily::RandomSign,
        }
    }

    pub fn kernel_family(self) -> KernelFamily {
        match self {
            FeatureFamily::FourierRbf => KernelFamily::Rbf,
            FeatureFamily::FourierLaplace => KernelFamily::Laplace,
            FeatureFamily::RandomSign => KernelFamily::Angular,
        }
    }

    pub fn is_fourier(self) -> bool {
        self != FeatureFamily::RandomSign
    }

    fn tag(self) -> u8 {
        match self {
            FeatureFamily::FourierRbf => 0,
            FeatureFamily::FourierLaplace => 1,
            FeatureFamily::RandomSign => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(FeatureFamily::FourierRbf),
            1 => Ok(FeatureFamily::FourierLaplace),
            2 => Ok(FeatureFamily::RandomSign),
            t => Err(Error::Format(format!("unknown feature family tag {t}"))),
        }
    }
}

/// Scaling convention for Fourier features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// `√2 cos(aᵀx/σ + φ)`: unbiased for κ, with `ψ² ≤ 2`.
    #[default]
    Unbiased,
    /// `cos(aᵀx/σ + φ)` without the `√2`, which estimates `κ/2`.
    /// Kept to replicate experiments that used this scaling.
    PaperExact,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Unbiased => "unbiased",
            FeatureMode::PaperExact => "paper-exact",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unbiased" => Ok(FeatureMode::Unbiased),
            "paper-exact" => Ok(FeatureMode::PaperExact),
            other => Err(invalid(format!("unknown feature mode {other:?}"))),
        }
    }
}

/// One frozen draw of `s` random features over `d` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    family: FeatureFamily,
    mode: FeatureMode,
    /// `d x s`; column `p` is the direction `v_p` (frequency, or unit vector).
    directions: Array2<f64>,
    /// Length `s` for Fourier maps, empty for sign maps.
    phase: Array1<f64>,
    sigma: f64,
    seed: u64,
}

impl FeatureMap {
    pub fn draw(
        family: FeatureFamily,
        d: usize,
        s: usize,
        sigma: f64,
        seed: u64,
        mode: FeatureMode,
    ) -> Result<Self> {
        if d == 0 || s == 0 {
            return Err(invalid(format!("feature map needs d >= 1 and s >= 1 (got d={d}, s={s})")));
        }
        if family.is_fourier() && !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("bandwidth must be positive, got {sigma}")));
        }
        let mut directions = Array2::zeros((d, s));
        let mut phase = Array1::zeros(if family.is_fourier() { s } else { 0 });
        for p in 0..s {
            let mut r = rng::stream(seed, &[p as u64]);
            let mut col = directions.column_mut(p);
            match family {
                FeatureFamily::FourierRbf => {
                    col.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                }
                FeatureFamily::FourierLaplace => {
                    col.iter_mut().for_each(|v| *v = standard_cauchy(&mut r));
                }
                FeatureFamily::RandomSign => loop {
                    col.iter_mut().for_each(|v| *v = r.sample(StandardNormal));
                    let norm = col.dot(&col).sqrt();
                    if norm > 0.0 {
                        col.mapv_inplace(|v| v / norm);
                        break;
                    }
                },
            }
            if family.is_fourier() {
                phase[p] = r.random::<f64>() * TAU;
            }
        }
        Ok(FeatureMap {
            family,
            mode,
            directions,
            phase,
            sigma: if family.is_fourier() { sigma } else { 1.0 },
            seed,
        })
    }

    /// Draws the map matching `kernel`'s family and bandwidth.
    pub fn for_kernel(kernel: &KernelSpec, d: usize, s: usize, seed: u64, mode: FeatureMode) -> Result<Self> {
        Self::draw(FeatureFamily::for_kernel(kernel.family), d, s, kernel.sigma, seed, mode)
    }

    pub fn family(&self) -> FeatureFamily {
        self.family
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.directions.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.directions.ncols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn directions(&self) -> &Array2<f64> {
        &self.directions
    }

    pub fn phase(&self) -> &Array1<f64> {
        &self.phase
    }

    /// The kernel this map approximates.
    pub fn kernel(&self) -> KernelSpec {
        KernelSpec {
            family: self.family.kernel_family(),
            sigma: self.sigma,
        }
    }

    /// Almost-sure bound on a single raw feature: `ψ²(x; v) ≤ b`.
    pub fn b(&self) -> f64 {
        match (self.family, self.mode) {
            (FeatureFamily::RandomSign, _) => 1.0,
            (_, FeatureMode::Unbiased) => 2.0,
            (_, FeatureMode::PaperExact) => 1.0,
        }
    }

    fn amplitude(&self) -> f64 {
        match (self.family, self.mode) {
            (FeatureFamily::RandomSign, _) | (_, FeatureMode::PaperExact) => 1.0,
            (_, FeatureMode::Unbiased) => SQRT_2,
        }
    }

    #[inline]
    fn raw(&self, projection: f64, p: usize) -> f64 {
        if self.family.is_fourier() {
            self.amplitude() * (projection / self.sigma + self.phase[p]).cos()
        } else {
            sign(projection)
        }
    }

    /// Unscaled features `[ψ(x; v₁), .., ψ(x; v_s)]`, without the `1/√s`.
    pub fn raw_features(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.len())?;
        let proj = x.dot(&self.directions);
        Ok(Array1::from_iter(proj.iter().enumerate().map(|(p, &z)| self.raw(z, p))))
    }

    /// The `n x s` feature matrix `Ψ`.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let scale = 1.0 / (self.num_features() as f64).sqrt();
        let mut psi = x.dot(&self.directions);
        for mut row in psi.rows_mut() {
            for (p, z) in row.iter_mut().enumerate() {
                *z = scale * self.raw(*z, p);
            }
        }
        Ok(psi)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = blob::Writer::new(MAGIC);
        self.write_fields(&mut w);
        w.finish()
    }

    pub(crate) fn write_fields(&self, w: &mut blob::Writer) {
        w.u8(self.family.tag());
        w.u8(match self.mode {
            FeatureMode::Unbiased => 0,
            FeatureMode::PaperExact => 1,
        });
        w.u64(self.seed);
        w.f64(self.sigma);
        w.matrix(&self.directions);
        w.vector(&self.phase);
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = blob::Reader::new(bytes, MAGIC)?;
        let fm = Self::read_fields(&mut r)?;
        r.finish()?;
        Ok(fm)
    }

    pub(crate) fn read_fields(r: &mut blob::Reader<'_>) -> Result<Self> {
        let family = FeatureFamily::from_tag(r.u8()?)?;
        let mode = match r.u8()? {
            0 => FeatureMode::Unbiased,
            1 => FeatureMode::PaperExact,
            t => return Err(Error::Format(format!("unknown feature mode tag {t}"))),
        };
        let seed = r.u64()?;
        let sigma = r.f64()?;
        let directions = r.matrix()?;
        let phase = r.vector()?;
        let expected_phase = if family.is_fourier() { directions.ncols() } else { 0 };
        if phase.len() != expected_phase {
            return Err(Error::Format("phase length does not match feature count".into()));
        }
        Ok(FeatureMap {
            family,
            mode,
            directions,
            phase,
            sigma,
            seed,
        })
    }
}

/// `sgn` with `sgn(0) = +1`, so every sign feature squares to 1.
#[inline]
pub fn sign(z: f64) -> f64 {
    if z < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Inverse-CDF draw from the standard Cauchy distribution.
fn standard_cauchy<R: Rng>(r: &mut R) -> f64 {
    let u: f64 = r.random();
    (PI * (u - 0.5)).tan()
}

/// `K̃ = ΨΨᵀ`.
pub fn approx_kernel_matrix(psi: &Array2<f64>) -> Array2<f64> {
    psi.dot(&psi.t())
}
