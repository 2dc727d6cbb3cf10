//! Independent numerical checks of the moment inequalities behind the
//! upper bound, at sizes small enough for enumeration, circle quadrature
//! or tight Monte Carlo estimates.
//!
//! Checks of the form `A ⪯ B` pass when the largest eigenvalue of the
//! estimated `A - B` is at most `5 · (max entrywise standard error) · n`.
//! Checks of exact identities are two-sided.

use std::f64::consts::{FRAC_PI_2, TAU};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::sample_threshold;
use crate::error::{invalid, Error, Result};
use crate::feature_map::{sign, FeatureFamily, FeatureMap, FeatureMode};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{max_eigenvalue, spectral_norm_sym};
use crate::rng;

/// Noise allowance multiplier for PSD-order checks.
pub const PSD_SIGMAS: f64 = 5.0;
/// Two-sided entrywise tolerance, in standard errors, for equality checks.
pub const EQUALITY_SIGMAS: f64 = 5.0;
/// Default number of circle quadrature nodes.
pub const DEFAULT_NODES: usize = 4096;

const CHUNK: usize = 1024;

/// Running entrywise mean and variance (Welford), mergeable.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    count: usize,
    mean: Array2<f64>,
    m2: Array2<f64>,
}

impl MomentAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: Array2::zeros((rows, cols)),
            m2: Array2::zeros((rows, cols)),
        }
    }

    pub fn push(&mut self, sample: &Array2<f64>) {
        self.count += 1;
        let c = self.count as f64;
        ndarray::Zip::from(&mut self.mean)
            .and(&mut self.m2)
            .and(sample)
            .for_each(|mean, m2, &x| {
                let delta = x - *mean;
                *mean += delta / c;
                *m2 += delta * (x - *mean);
            });
    }

    /// Chan et al. pairwise combination.
    pub fn merge(mut self, other: &MomentAccumulator) -> Self {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other.clone();
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let total = na + nb;
        ndarray::Zip::from(&mut self.mean)
            .and(&mut self.m2)
            .and(&other.mean)
            .and(&other.m2)
            .for_each(|ma, m2a, &mb, &m2b| {
                let delta = mb - *ma;
                *ma += delta * nb / total;
                *m2a += m2b + delta * delta * na * nb / total;
            });
        self.count += other.count;
        self
    }

    pub fn finish(self, seed: u64) -> MomentEstimate {
        let c = self.count as f64;
        let std_err = if self.count > 1 {
            self.m2.mapv(|m2| (m2.max(0.0) / (c - 1.0) / c).sqrt())
        } else {
            Array2::zeros(self.m2.raw_dim())
        };
        MomentEstimate {
            mean: self.mean,
            std_err,
            num_draws: self.count,
            seed,
        }
    }
}

/// Monte Carlo estimate of a matrix-valued expectation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean: Array2<f64>,
    pub std_err: Array2<f64>,
    pub num_draws: usize,
    pub seed: u64,
}

impl MomentEstimate {
    pub fn max_std_err(&self) -> f64 {
        self.std_err.iter().copied().fold(0.0, f64::max)
    }
}

/// Accumulates `sample(draw_index)` over `draws` draws in fixed-size
/// chunks run in parallel and merged in chunk order.
fn monte_carlo<F>(rows: usize, cols: usize, draws: usize, seed: u64, sample: F) -> Result<MomentEstimate>
where
    F: Fn(usize) -> Result<Array2<f64>> + Sync,
{
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<MomentAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = MomentAccumulator::new(rows, cols);
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(draws) {
                acc.push(&sample(i)?);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let merged = partial
        .iter()
        .fold(MomentAccumulator::new(rows, cols), |acc, p| acc.merge(p));
    Ok(merged.finish(seed))
}

/// Compact, serializable outcome of one oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub lemma: String,
    pub pass: bool,
    /// Allowance minus observed violation; non-negative on PASS.
    pub margin: f64,
    pub draws: usize,
    pub seed: u64,
    pub worst_eigenvalue: Option<f64>,
}

/// `Ξ = (1/m) Σᵣ ψ(xᵣ)ψ(xᵣ)ᵀ` for `x` uniform over the rows of `support`.
pub fn exact_xi_discrete(fm: &FeatureMap, support: &Array2<f64>) -> Result<Array2<f64>> {
    if support.nrows() == 0 {
        return Err(invalid("support must have at least one point"));
    }
    let psi = fm.apply(support)?;
    Ok(psi.t().dot(&psi) / support.nrows() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub n: usize,
    pub threshold_n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub trials: usize,
    pub seed: u64,
    pub failures: usize,
    pub observed_failure_rate: f64,
    /// `δ + 3·sqrt(δ(1-δ)/trials)`.
    pub allowed_rate: f64,
    pub max_deviation: f64,
    pub pass: bool,
}

impl Lemma1Report {
    pub fn summary(&self) -> OracleReport {
        OracleReport {
            lemma: "lemma1".into(),
            pass: self.pass,
            margin: self.allowed_rate - self.observed_failure_rate,
            draws: self.trials,
            seed: self.seed,
            worst_eigenvalue: Some(self.max_deviation),
        }
    }
}

/// Draws `trials` training sets of size `n` uniformly from `support` and
/// counts how often `‖Ξ - ΨᵀΨ/n‖₂ > ε`.
pub fn verify_lemma1(
    fm: &FeatureMap,
    support: &Array2<f64>,
    n: usize,
    epsilon: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<Lemma1Report> {
    let threshold_n = sample_threshold(epsilon, fm.num_features(), fm.b(), delta)?;
    if n < threshold_n {
        return Err(invalid(format!(
            "n = {n} is below the sample threshold {threshold_n}"
        )));
    }
    if trials == 0 {
        return Err(invalid("trials must be positive"));
    }
    let xi = exact_xi_discrete(fm, support)?;
    let psi_support = fm.apply(support)?;
    let m = support.nrows();
    let deviations: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::stream(seed, &[t as u64]);
            let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..m)).collect();
            let psi = psi_support.select(Axis(0), &rows);
            let empirical = psi.t().dot(&psi) / n as f64;
            spectral_norm_sym((&xi - &empirical).view())
        })
        .collect::<Result<_>>()?;
    let failures = deviations.iter().filter(|&&d| d > epsilon).count();
    let observed = failures as f64 / trials as f64;
    let allowed = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    Ok(Lemma1Report {
        n,
        threshold_n,
        epsilon,
        delta,
        trials,
        seed,
        failures,
        observed_failure_rate: observed,
        allowed_rate: allowed,
        max_deviation: deviations.iter().copied().fold(0.0, f64::max),
        pass: observed <= allowed,
    })
}

/// Two-sided entrywise comparison of a Monte Carlo mean with a target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EqualityCheck {
    pub max_abs_diff: f64,
    /// Largest `|mean - target| / std_err` over entries with nonzero error.
    pub max_z: f64,
    pub pass: bool,
}

impl EqualityCheck {
    fn new(est: &MomentEstimate, target: &Array2<f64>, sigmas: f64) -> Self {
        let mut max_abs_diff: f64 = 0.0;
        let mut max_z: f64 = 0.0;
        let mut pass = true;
        ndarray::Zip::from(&est.mean)
            .and(&est.std_err)
            .and(target)
            .for_each(|&m, &se, &t| {
                let diff = (m - t).abs();
                max_abs_diff = max_abs_diff.max(diff);
                if se > 0.0 {
                    max_z = max_z.max(diff / se);
                }
                pass &= diff <= sigmas * se + 1e-12;
            });
        EqualityCheck {
            max_abs_diff,
            max_z,
            pass,
        }
    }
}

/// Outcome of an estimated PSD-order check `E[..] ⪯ bound`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderReport {
    pub lemma: String,
    pub estimate: MomentEstimate,
    pub bound: Array2<f64>,
    /// Largest eigenvalue of `estimate.mean - bound`.
    pub worst_eigenvalue: f64,
    /// `5 · max std_err · n`.
    pub allowance: f64,
    pub pass: bool,
    /// Present when the inequality is known to hold with equality.
    pub equality: Option<EqualityCheck>,
    /// Present for checks that also test an unbiasedness sub-claim.
    pub unbiased: Option<EqualityCheck>,
}

impl OrderReport {
    fn new(lemma: &str, estimate: MomentEstimate, bound: Array2<f64>) -> Result<Self> {
        let n = bound.nrows();
        let worst = max_eigenvalue((&estimate.mean - &bound).view())?;
        let allowance = PSD_SIGMAS * estimate.max_std_err() * n as f64;
        Ok(OrderReport {
            lemma: lemma.into(),
            pass: worst <= allowance + 1e-12,
            worst_eigenvalue: worst,
            allowance,
            estimate,
            bound,
            equality: None,
            unbiased: None,
        })
    }

    /// Passes only if the order check and every attached sub-check pass.
    pub fn all_pass(&self) -> bool {
        self.pass
            && self.equality.as_ref().is_none_or(|e| e.pass)
            && self.unbiased.as_ref().is_none_or(|e| e.pass)
    }

    pub fn summary(&self) -> OracleReport {
        OracleReport {
            lemma: self.lemma.clone(),
            pass: self.all_pass(),
            margin: self.allowance - self.worst_eigenvalue,
            draws: self.estimate.num_draws,
            seed: self.estimate.seed,
            worst_eigenvalue: Some(self.worst_eigenvalue),
        }
    }
}

fn check_small(x: &Array2<f64>, draws: usize) -> Result<()> {
    if x.nrows() == 0 || x.nrows() > 6 {
        return Err(invalid(format!("oracles expect 1..=6 rows, got {}", x.nrows())));
    }
    if draws < 2 {
        return Err(invalid("need at least 2 draws"));
    }
    Ok(())
}

fn draw_for(kernel: &KernelSpec, d: usize, s: usize, seed: u64, i: usize) -> Result<FeatureMap> {
    FeatureMap::for_kernel(kernel, d, s, rng::derive_seed(seed, &[i as u64]), FeatureMode::Unbiased)
}

/// Estimates `E[ΨΨᵀΨΨᵀ]` and checks it against
/// `((s-1)/s)K² + (nb/s)K`. For sign features (`ψ² ≡ 1`) the two are
/// equal, which is checked two-sided as well.
pub fn verify_lemma2(kernel: &KernelSpec, x: &Array2<f64>, s: usize, draws: usize, seed: u64) -> Result<OrderReport> {
    check_small(x, draws)?;
    let n = x.nrows();
    let k = kernel.matrix(x)?;
    let b = draw_for(kernel, x.ncols(), s, seed, 0)?.b();
    let estimate = monte_carlo(n, n, draws, seed, |i| {
        let psi = draw_for(kernel, x.ncols(), s, seed, i)?.apply(x)?;
        let kt = psi.dot(&psi.t());
        Ok(kt.dot(&kt))
    })?;
    let sf = s as f64;
    let bound = (sf - 1.0) / sf * k.dot(&k) + (n as f64 * b / sf) * &k;
    let mut report = OrderReport::new("lemma2", estimate, bound)?;
    if kernel.family == KernelFamily::Angular {
        report.equality = Some(EqualityCheck::new(&report.estimate, &report.bound, EQUALITY_SIGMAS));
    }
    Ok(report)
}

/// Estimates `E[(k̃' - k')(k̃' - k')ᵀ]` and checks it against
/// `(b/s)K - (1/s)k'k'ᵀ`, plus `E[k̃'] = k'` within 3 standard errors.
pub fn verify_lemma3(
    kernel: &KernelSpec,
    x: &Array2<f64>,
    x_test: ndarray::ArrayView1<f64>,
    s: usize,
    draws: usize,
    seed: u64,
) -> Result<OrderReport> {
    check_small(x, draws)?;
    let n = x.nrows();
    let k = kernel.matrix(x)?;
    let kv = kernel.vector(x, x_test)?;
    let b = draw_for(kernel, x.ncols(), s, seed, 0)?.b();
    let test = x_test.insert_axis(Axis(0)).to_owned();

    // Column 0 carries k̃' itself, the remaining n columns the outer product.
    let joint = monte_carlo(n, n + 1, draws, seed, |i| {
        let fm = draw_for(kernel, x.ncols(), s, seed, i)?;
        let psi = fm.apply(x)?;
        let approx = psi.dot(&fm.apply(&test)?.row(0));
        let diff = &approx - &kv;
        let mut out = Array2::zeros((n, n + 1));
        out.column_mut(0).assign(&approx);
        out.slice_mut(ndarray::s![.., 1..])
            .assign(&crate::linalg::outer(&diff, &diff));
        Ok(out)
    })?;
    let split = |m: &Array2<f64>| (m.slice(ndarray::s![.., 0..1]).to_owned(), m.slice(ndarray::s![.., 1..]).to_owned());
    let (mean_vec, mean_cov) = split(&joint.mean);
    let (se_vec, se_cov) = split(&joint.std_err);

    let sf = s as f64;
    let bound = (b / sf) * &k - crate::linalg::outer(&kv, &kv) / sf;
    let cov = MomentEstimate {
        mean: mean_cov,
        std_err: se_cov,
        num_draws: joint.num_draws,
        seed,
    };
    let mut report = OrderReport::new("lemma3", cov, bound)?;
    let mean = MomentEstimate {
        mean: mean_vec,
        std_err: se_vec,
        num_draws: joint.num_draws,
        seed,
    };
    report.unbiased = Some(EqualityCheck::new(&mean, &kv.insert_axis(Axis(1)).to_owned(), 3.0));
    Ok(report)
}

/// Nodes and weights on `[0, 2π)` for integrands that are piecewise
/// constant between `breakpoints`. `nodes` points are split across arcs in
/// proportion to their length (at least one per arc) and placed at arc
/// midpoints of equal sub-arcs, so the rule is exact for such integrands.
/// Weights sum to 1 (they include the `1/2π` of the uniform density).
pub fn circle_rule(breakpoints: &[f64], nodes: usize) -> Vec<(f64, f64)> {
    let mut cuts: Vec<f64> = breakpoints.iter().map(|t| t.rem_euclid(TAU)).collect();
    cuts.push(0.0);
    cuts.push(TAU);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut rule = Vec::with_capacity(nodes + cuts.len());
    for w in cuts.windows(2) {
        let (a, len) = (w[0], w[1] - w[0]);
        if len <= 0.0 {
            continue;
        }
        let count = ((nodes as f64 * len / TAU).round() as usize).max(1);
        let h = len / count as f64;
        for j in 0..count {
            rule.push((a + (j as f64 + 0.5) * h, h / TAU));
        }
    }
    rule
}

/// Angles at which `sgn(xᵢᵀv)` flips for `v = (cos t, sin t)`.
pub fn sign_breakpoints(x: &Array2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .flat_map(|r| {
            let theta = r[1].atan2(r[0]);
            [theta + FRAC_PI_2, theta - FRAC_PI_2]
        })
        .collect()
}

/// `E_v[f(z(v))]` over `v` uniform on the unit circle, where
/// `z(v) = sgn(Xv)`.
pub fn circle_expectation<F>(x: &Array2<f64>, nodes: usize, mut f: F) -> Array2<f64>
where
    F: FnMut(&Array1<f64>) -> Array2<f64>,
{
    let mut acc: Option<Array2<f64>> = None;
    for (t, w) in circle_rule(&sign_breakpoints(x), nodes) {
        let v = ndarray::array![t.cos(), t.sin()];
        let z = x.dot(&v).mapv(sign);
        let term = f(&z) * w;
        acc = Some(match acc {
            Some(a) => a + term,
            None => term,
        });
    }
    acc.expect("circle rule always has nodes")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SignMethod {
    Quadrature { nodes: usize },
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SignIdentityReport {
    pub method: SignMethod,
    pub s: usize,
    /// Estimated `E[(K̃ - K)²]`.
    pub estimate: Array2<f64>,
    /// `(nK - K²)/s`.
    pub identity: Array2<f64>,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl SignIdentityReport {
    pub fn summary(&self) -> OracleReport {
        let (draws, seed) = match self.method {
            SignMethod::Quadrature { nodes } => (nodes, 0),
            SignMethod::MonteCarlo { draws, seed } => (draws, seed),
        };
        OracleReport {
            lemma: "sign-identity".into(),
            pass: self.pass,
            margin: self.tolerance - self.max_abs_diff,
            draws,
            seed,
            worst_eigenvalue: None,
        }
    }
}

type DiffCheck = Box<dyn Fn(&Array2<f64>) -> bool>;

/// Checks `E[(K̃ - K)²] = (nK - K²)/s` for random sign features on unit
/// vectors. In two dimensions the expectation over `v` is computed by
/// circle quadrature for one feature and extended to `s` features
/// analytically; otherwise by Monte Carlo over whole `s`-feature maps.
pub fn verify_sign_identity(x: &Array2<f64>, s: usize, method: SignMethod) -> Result<SignIdentityReport> {
    if s == 0 || x.nrows() == 0 {
        return Err(invalid("need s >= 1 and at least one row"));
    }
    for (i, r) in x.rows().into_iter().enumerate() {
        if (r.dot(&r).sqrt() - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("row {i} is not unit-norm")));
        }
    }
    let n = x.nrows();
    let k = KernelSpec::angular().matrix(x)?;
    let sf = s as f64;
    let identity = (n as f64 * &k - k.dot(&k)) / sf;

    let (estimate, tolerance, pass_fn): (Array2<f64>, f64, DiffCheck) = match method {
        SignMethod::Quadrature { nodes } => {
            if x.ncols() != 2 {
                return Err(invalid("circle quadrature needs d = 2"));
            }
            let first = circle_expectation(x, nodes, |z| crate::linalg::outer(z, z));
            let second = circle_expectation(x, nodes, |z| {
                let k1 = crate::linalg::outer(z, z);
                k1.dot(&k1)
            });
            // One feature: A = K₁ - K. With s i.i.d. copies,
            // E[(K̃ - K)²] = E[A²]/s + (s-1)/s · E[A]².
            let a_sq = &second - first.dot(&k) - k.dot(&first) + k.dot(&k);
            let bias = &first - &k;
            let est = a_sq / sf + (sf - 1.0) / sf * bias.dot(&bias);
            let tol = 1e-6;
            (est, tol, Box::new(move |diff: &Array2<f64>| diff.iter().all(|d| d.abs() <= tol)))
        }
        SignMethod::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(invalid("need at least 2 draws"));
            }
            let est = monte_carlo(n, n, draws, seed, |i| {
                let fm = FeatureMap::draw(
                    FeatureFamily::RandomSign,
                    x.ncols(),
                    s,
                    1.0,
                    rng::derive_seed(seed, &[i as u64]),
                    FeatureMode::Unbiased,
                )?;
                let psi = fm.apply(x)?;
                let d = psi.dot(&psi.t()) - &k;
                Ok(d.dot(&d))
            })?;
            let se = est.std_err.clone();
            let tol = 4.0 * est.max_std_err();
            (
                est.mean,
                tol,
                Box::new(move |diff: &Array2<f64>| {
                    ndarray::Zip::from(diff).and(&se).all(|d, e| d.abs() <= 4.0 * e + 1e-12)
                }),
            )
        }
    };
    let diff = &estimate - &identity;
    let max_abs_diff = diff.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    Ok(SignIdentityReport {
        method,
        s,
        pass: pass_fn(&diff),
        estimate,
        identity,
        max_abs_diff,
        tolerance,
    })
}

/// Monte Carlo check that `E_v[ψ(x; v)ψ(x'; v)] = κ(x, x')` using `draws`
/// independent directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnbiasednessCheck {
    pub family: FeatureFamily,
    pub kernel_value: f64,
    pub mean: f64,
    pub std_err: f64,
    pub draws: usize,
    pub pass: bool,
}

pub fn check_unbiasedness(
    kernel: &KernelSpec,
    x: ndarray::ArrayView1<f64>,
    x2: ndarray::ArrayView1<f64>,
    draws: usize,
    seed: u64,
) -> Result<UnbiasednessCheck> {
    if x.len() != x2.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: x2.len(),
        });
    }
    if draws < 2 {
        return Err(invalid("need at least 2 draws"));
    }
    let fm = FeatureMap::for_kernel(kernel, x.len(), draws, seed, FeatureMode::Unbiased)?;
    let products = fm.raw_features(x)? * fm.raw_features(x2)?;
    let m = draws as f64;
    let mean = products.sum() / m;
    let var = products.mapv(|p| (p - mean) * (p - mean)).sum() / (m - 1.0);
    let std_err = (var / m).sqrt();
    let kernel_value = kernel.eval(x, x2)?;
    Ok(UnbiasednessCheck {
        family: fm.family(),
        kernel_value,
        mean,
        std_err,
        draws,
        pass: (mean - kernel_value).abs() <= 4.0 * std_err,
    })
}
