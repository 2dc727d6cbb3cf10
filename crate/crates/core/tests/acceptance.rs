//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Runs at full size in a few minutes on one core.

use std::process::Command;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rfmkrr::bounds::{self, lambda_threshold, sample_threshold};
use rfmkrr::harness::{self, DataSource, ExperimentConfig, LambdaRule};
use rfmkrr::krr::rfm_predict_dual;
use rfmkrr::linalg::symmetric_eigen;
use rfmkrr::oracles::{self, SignMethod};
use rfmkrr::{FeatureFamily, FeatureMap, FeatureMode, KernelFamily, KernelSpec, RfmModel};

const SLOPE_RANGE: (f64, f64) = (-1.15, -0.85);
const COVERAGE_MIN: f64 = 0.95;
const RATIO_RANGE: (f64, f64) = (0.5, 50.0);
const CAP_SLACK: f64 = 1e-10;
const CAP_EQUALITY_TOL: f64 = 1e-8;
const PRIMAL_DUAL_TOL: f64 = 1e-8;
const UNBIASED_SIGMAS: f64 = 4.0;
const QUADRATURE_TOL: f64 = 1e-6;
const ORDER_TOL: f64 = 1e-12;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.sample(StandardNormal))
}

fn gaussian_vec(r: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || r.sample(StandardNormal))
}

/// Random PSD matrix of random rank, scaled by a random factor.
fn random_psd(r: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let rank = r.random_range(1..=n);
    let g = gaussian(r, n, rank);
    g.dot(&g.t()) * 10f64.powf(r.random_range(-2.0..2.0))
}

fn synthetic_sweep() -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic { rows: 4000, dim: 5, noise: 0.1, seed: 7 },
        kernel: KernelFamily::Rbf,
        lambda: LambdaRule::Multiplier(1.0),
        s_grid: vec![50, 100, 200, 400, 800, 1600],
        n_train: 2000,
        n_test: 2000,
        repeats: 50,
        master_seed: 1,
        ..Default::default()
    }
}

fn rate() -> Outcome {
    let run = harness::run_mse_vs_s(&synthetic_sweep()).map_err(|e| e.to_string())?;
    let slope = run.log_log_slope().ok_or("slope undefined")?;
    let msg = format!("slope {slope:.4} in [{}, {}]", SLOPE_RANGE.0, SLOPE_RANGE.1);
    if (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn upper_bound_validity() -> Outcome {
    let mut cfg = synthetic_sweep();
    let mut lambda: f64 = 0.0;
    for &s in &cfg.s_grid {
        lambda = lambda.max(lambda_threshold(cfg.n_train, s, 2.0, 0.05).map_err(|e| e.to_string())?);
    }
    cfg.lambda = LambdaRule::Fixed(lambda);
    let run = harness::run_mse_vs_s(&cfg).map_err(|e| e.to_string())?;
    if let Some(c) = run.cells.iter().find(|c| c.lambda < c.lambda_threshold) {
        return Err(format!("cell s = {} has lambda below its threshold", c.x));
    }
    let coverage = run.bound_coverage();
    let msg = format!(
        "lambda {lambda:.4}: bound holds in {:.1}% of {} cells (need {:.0}%)",
        100.0 * coverage,
        run.cells.len(),
        100.0 * COVERAGE_MIN
    );
    if coverage >= COVERAGE_MIN {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn tightness() -> Outcome {
    let cfg = ExperimentConfig {
        data: DataSource::Synthetic { rows: 6000, dim: 5, noise: 0.1, seed: 7 },
        lambda: LambdaRule::Multiplier(5.0),
        s_grid: vec![100],
        n_grid: vec![200, 500, 1000, 2000, 5000],
        n_test: 1000,
        repeats: 10,
        master_seed: 1,
        ..Default::default()
    };
    let run = harness::run_ratio_vs_n(&cfg).map_err(|e| e.to_string())?;
    let ratios: Vec<String> = run
        .points
        .iter()
        .map(|p| p.ratio.map_or("null".into(), |r| format!("{r:.2}")))
        .collect();
    let ok = run
        .points
        .iter()
        .all(|p| p.ratio.is_some_and(|r| (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&r)));
    let msg = format!("ratios [{}] in [{}, {}]", ratios.join(", "), RATIO_RANGE.0, RATIO_RANGE.1);
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cap() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = r.random_range(1..=50);
        let k = random_psd(&mut r, n);
        let y = gaussian_vec(&mut r, n);
        let lambda = 10f64.powf(r.random_range(-4.0..1.0));
        let core = bounds::core_norm(&k, &y, lambda).map_err(|e| e.to_string())?;
        let cap = bounds::cap(&y, lambda);
        worst = worst.max(core / cap - 1.0);
        if core > cap * (1.0 + CAP_SLACK) {
            return Err(format!("core norm {core} > cap {cap} (n = {n})"));
        }
    }
    let mut worst_eq: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=50);
        let k = random_psd(&mut r, n);
        let (vals, vecs) = symmetric_eigen(k.view()).map_err(|e| e.to_string())?;
        let top = vals.len() - 1;
        let lambda = vals[top] / n as f64;
        let y = vecs.column(top).to_owned() * r.random_range(0.1..10.0);
        let core = bounds::core_norm(&k, &y, lambda).map_err(|e| e.to_string())?;
        let rel = (core - bounds::cap(&y, lambda)).abs() / core;
        worst_eq = worst_eq.max(rel);
    }
    let msg = format!("max core/cap - 1 = {worst:.2e}; equality case rel err {worst_eq:.2e}");
    if worst_eq <= CAP_EQUALITY_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn primal_dual() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let families = [KernelFamily::Rbf, KernelFamily::Laplace, KernelFamily::Angular];
    for i in 0..100 {
        let n = r.random_range(2..=50);
        let s = r.random_range(1..=20);
        let d = r.random_range(1..=6);
        let x = gaussian(&mut r, n, d);
        let x_test = gaussian(&mut r, 7, d);
        let y = gaussian_vec(&mut r, n);
        let lambda = 10f64.powf(r.random_range(-3.0..0.0));
        let kernel = KernelSpec::new(families[i % 3], r.random_range(0.5..3.0)).map_err(|e| e.to_string())?;
        let fm = FeatureMap::for_kernel(&kernel, d, s, i as u64, FeatureMode::Unbiased).map_err(|e| e.to_string())?;
        let dual = rfm_predict_dual(&fm, &x, &y, lambda, &x_test).map_err(|e| e.to_string())?;
        let primal = RfmModel::fit(fm, &x, &y, lambda)
            .and_then(|m| m.predict(&x_test))
            .map_err(|e| e.to_string())?;
        worst = worst.max((&primal - &dual).iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let msg = format!("max |primal - dual| = {worst:.2e} (tol {PRIMAL_DUAL_TOL:.0e})");
    if worst <= PRIMAL_DUAL_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn unbiasedness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut worst_z: f64 = 0.0;
    for family in [FeatureFamily::FourierRbf, FeatureFamily::FourierLaplace, FeatureFamily::RandomSign] {
        let kernel = match family.kernel_family() {
            KernelFamily::Angular => KernelSpec::angular(),
            k => KernelSpec::new(k, 1.5).map_err(|e| e.to_string())?,
        };
        for pair in 0..10u64 {
            let x = gaussian(&mut r, 2, 4);
            let check = oracles::check_unbiasedness(&kernel, x.row(0), x.row(1), 1_000_000, pair)
                .map_err(|e| e.to_string())?;
            let z = (check.mean - check.kernel_value).abs() / check.std_err;
            worst_z = worst_z.max(z);
            if z > UNBIASED_SIGMAS {
                return Err(format!("{family:?} pair {pair}: |mean - kappa| = {z:.2} stderr"));
            }
        }
    }
    Ok(format!("worst |mean - kappa| = {worst_z:.2} stderr over 30 pairs (limit {UNBIASED_SIGMAS})"))
}

fn sign_identity() -> Outcome {
    let (a, b) = (std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_3);
    let x = ndarray::array![[a.cos(), a.sin()], [b.cos(), b.sin()]];
    let mut worst: f64 = 0.0;
    for s in [1, 10, 100] {
        let report = oracles::verify_sign_identity(&x, s, SignMethod::Quadrature { nodes: oracles::DEFAULT_NODES })
            .map_err(|e| e.to_string())?;
        worst = worst.max(report.max_abs_diff);
    }
    let msg = format!("max entrywise deviation {worst:.2e} (tol {QUADRATURE_TOL:.0e})");
    if worst <= QUADRATURE_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lemma1() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let support = gaussian(&mut r, 8, 3);
    let fm = FeatureMap::draw(FeatureFamily::RandomSign, 3, 8, 1.0, 8, FeatureMode::Unbiased)
        .map_err(|e| e.to_string())?;
    let n = sample_threshold(0.3, 8, 1.0, 0.1).map_err(|e| e.to_string())?;
    let report = oracles::verify_lemma1(&fm, &support, n, 0.3, 0.1, 200, 8).map_err(|e| e.to_string())?;
    let msg = format!(
        "n = {n}: failure rate {:.3} <= allowed {:.3}",
        report.observed_failure_rate, report.allowed_rate
    );
    if report.pass {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn lemmas_2_3() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let mut lines = Vec::new();
    for family in [KernelFamily::Rbf, KernelFamily::Laplace, KernelFamily::Angular] {
        let kernel = match family {
            KernelFamily::Angular => KernelSpec::angular(),
            k => KernelSpec::new(k, 1.0).map_err(|e| e.to_string())?,
        };
        let x = gaussian(&mut r, 5, 3);
        let x_test = gaussian_vec(&mut r, 3);
        let l2 = oracles::verify_lemma2(&kernel, &x, 6, 100_000, 21).map_err(|e| e.to_string())?;
        let l3 = oracles::verify_lemma3(&kernel, &x, x_test.view(), 6, 100_000, 22).map_err(|e| e.to_string())?;
        if family == KernelFamily::Angular && l2.equality.as_ref().is_none_or(|e| !e.pass) {
            return Err("sign-feature equality case failed".into());
        }
        for rep in [&l2, &l3] {
            if !rep.all_pass() {
                return Err(format!(
                    "{} {family}: worst eigenvalue {:.3e} > allowance {:.3e}",
                    rep.lemma, rep.worst_eigenvalue, rep.allowance
                ));
            }
        }
        lines.push(format!(
            "{family} {:.1e}/{:.1e}",
            l2.worst_eigenvalue - l2.allowance,
            l3.worst_eigenvalue - l3.allowance
        ));
    }
    Ok(format!("eigenvalue minus allowance: {}", lines.join(", ")))
}

fn lower_vs_upper() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = r.random_range(1..=50);
        let k = random_psd(&mut r, n);
        let y = gaussian_vec(&mut r, n);
        let lambda = 10f64.powf(r.random_range(-4.0..1.0));
        let s = r.random_range(1..=500);
        let lower = bounds::lower_quantity(&k, &y, lambda, s).map_err(|e| e.to_string())?;
        let plot = bounds::plot_bound(&k, &y, lambda, s).map_err(|e| e.to_string())?;
        worst = worst.max(lower - plot);
        if lower > plot + ORDER_TOL {
            return Err(format!("lower {lower} > plot {plot} (n = {n})"));
        }
    }
    Ok(format!("max lower - plot = {worst:.2e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_rfmkrr"))
            .args(["mse-vs-s", "--data", "synthetic:1200:5:0.1:3", "--n-train", "600", "--n-test", "400"])
            .args(["--s-grid", "20,50,100", "--repeats", "8", "--seed", "11", "--out"])
            .arg(&out)
            .stderr(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("mse-vs-s exited with {status}"));
        }
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let (a, b) = (run("a.csv")?, run("b.csv")?);
    if a == b {
        Ok(format!("two runs produced identical {}-byte CSV", a.len()))
    } else {
        Err("CSV outputs differ".into())
    }
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("1/s rate", rate),
        ("upper bound validity", upper_bound_validity),
        ("bound tightness", tightness),
        ("cap inequality", cap),
        ("primal-dual equivalence", primal_dual),
        ("unbiasedness", unbiasedness),
        ("sign-feature identity", sign_identity),
        ("lemma 1 threshold", lemma1),
        ("lemmas 2-3 PSD order", lemmas_2_3),
        ("lower vs upper ordering", lower_vs_upper),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
