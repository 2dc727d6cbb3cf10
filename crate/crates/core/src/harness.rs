//! Experiment runner: the MSE-vs-`s` sweep (with its `1/s` extrapolation)
//! and the bound/MSE-vs-`n` sweep, plus CSV/JSON output and the key=value
//! config format used by the CLI.
//!
//! Every random draw is seeded from `(master_seed, grid value, repeat,
//! purpose)`, so adding grid points or repeats never changes existing
//! cells, and identical configs produce byte-identical CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{self, lambda_threshold, BoundInputs, BoundReport};
use crate::dataset::{self, Dataset, RawDataset, ScalingSource, SplitSpec};
use crate::error::{invalid, Error, Result};
use crate::feature_map::{FeatureMap, FeatureMode};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::krr::{KrrModel, RfmModel};
use crate::rng::derive_seed;

pub const CSV_HEADER: &str = "x,mse,mse_stderr,bound,ratio,extrapolation";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Libsvm(PathBuf),
    /// Gaussian inputs with a smooth nonlinear target; see
    /// [`dataset::synthetic`].
    Synthetic { rows: usize, dim: usize, noise: f64, seed: u64 },
}

impl FromStr for DataSource {
    type Err = Error;

    /// `synthetic[:rows[:dim[:noise[:seed]]]]` or a path.
    fn from_str(s: &str) -> Result<Self> {
        let Some(rest) = s.strip_prefix("synthetic") else {
            return Ok(DataSource::Libsvm(PathBuf::from(s)));
        };
        let mut parts = rest.split(':').skip(1);
        let mut next = |default: &str| parts.next().filter(|p| !p.is_empty()).unwrap_or(default).to_string();
        let bad = |what: &str| invalid(format!("bad synthetic {what} in {s:?}"));
        Ok(DataSource::Synthetic {
            rows: next("10000").parse().map_err(|_| bad("rows"))?,
            dim: next("5").parse().map_err(|_| bad("dim"))?,
            noise: next("0.1").parse().map_err(|_| bad("noise"))?,
            seed: next("0").parse().map_err(|_| bad("seed"))?,
        })
    }
}

/// Loaded data, before any split.
pub enum Pool {
    Raw(RawDataset),
    Dense(Dataset),
}

impl Pool {
    pub fn load(source: &DataSource) -> Result<Self> {
        match source {
            DataSource::Libsvm(path) => {
                let file = std::fs::File::open(path)?;
                Ok(Pool::Raw(dataset::parse_libsvm(std::io::BufReader::new(file))?))
            }
            DataSource::Synthetic { rows, dim, noise, seed } => {
                Ok(Pool::Dense(dataset::synthetic(*rows, *dim, *noise, *seed)?))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Pool::Raw(r) => r.len(),
            Pool::Dense(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split(&self, spec: &SplitSpec, scaling: ScalingSource) -> Result<(Dataset, Dataset)> {
        match self {
            Pool::Raw(raw) => dataset::preprocess_split(raw, spec, scaling),
            Pool::Dense(ds) => dataset::subsample(ds, spec),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// `λ = c/√n`.
    Multiplier(f64),
    Fixed(f64),
}

impl LambdaRule {
    pub fn lambda(&self, n: usize) -> f64 {
        match *self {
            LambdaRule::Multiplier(c) => c / (n as f64).sqrt(),
            LambdaRule::Fixed(l) => l,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub kernel: KernelFamily,
    pub lambda: LambdaRule,
    pub s_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    /// Training rows for the MSE-vs-`s` sweep.
    pub n_train: usize,
    /// Test rows for both sweeps.
    pub n_test: usize,
    pub repeats: usize,
    pub master_seed: u64,
    pub feature_mode: FeatureMode,
    /// Overrides the interpoint-distance bandwidth heuristic.
    pub sigma: Option<f64>,
    pub scaling: ScalingSource,
    /// Confidence parameter for the `λ` threshold reported alongside.
    pub delta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic { rows: 10_000, dim: 5, noise: 0.1, seed: 0 },
            kernel: KernelFamily::Rbf,
            lambda: LambdaRule::Multiplier(1.0),
            s_grid: vec![50, 100, 200, 400, 800, 1600],
            n_grid: vec![200, 500, 1000, 2000, 5000],
            n_train: 2000,
            n_test: 2000,
            repeats: 100,
            master_seed: 0,
            feature_mode: FeatureMode::Unbiased,
            sigma: None,
            scaling: ScalingSource::TrainOnly,
            delta: 0.05,
        }
    }
}

fn strictly_increasing(grid: &[usize]) -> bool {
    !grid.is_empty() && grid[0] > 0 && grid.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !strictly_increasing(&self.s_grid) {
            return Err(invalid("s grid must be nonempty, positive and strictly increasing"));
        }
        if !strictly_increasing(&self.n_grid) {
            return Err(invalid("n grid must be nonempty, positive and strictly increasing"));
        }
        if self.repeats == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(invalid("repeats, n_train and n_test must be positive"));
        }
        match self.lambda {
            LambdaRule::Multiplier(v) | LambdaRule::Fixed(v) if !(v > 0.0 && v.is_finite()) => {
                return Err(invalid(format!("lambda setting must be positive, got {v}")))
            }
            _ => {}
        }
        Ok(())
    }

    fn kernel_for(&self, x: &ndarray::Array2<f64>) -> Result<KernelSpec> {
        match self.sigma {
            Some(sigma) if self.kernel != KernelFamily::Angular => KernelSpec::new(self.kernel, sigma),
            _ => KernelSpec::with_heuristic_bandwidth(self.kernel, x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// `s` or `n`.
    pub x: usize,
    /// Mean over repeats of the test-set mean of `(f̃ - f)²`.
    pub mse: f64,
    pub mse_stderr: f64,
    /// `core_norm / s` (mean over repeats when the training set varies).
    pub bound: f64,
    /// `bound / mse`; `None` when `mse = 0`.
    pub ratio: Option<f64>,
    /// `mse₁ · x₁ / x`, the `1/x` rule anchored at the first point.
    pub extrapolation: f64,
}

/// One `(grid value, repeat)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub repeat: usize,
    pub mse: f64,
    pub plot_bound: f64,
    pub theorem1_bound: f64,
    pub lambda: f64,
    pub lambda_threshold: f64,
}

impl Cell {
    pub fn within_bound(&self) -> bool {
        self.mse <= self.theorem1_bound
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub points: Vec<CurvePoint>,
    pub cells: Vec<Cell>,
    /// Number of exact KRR fits performed.
    pub exact_fits: usize,
    /// `ratio` is undefined at some point because the MSE vanished.
    pub degenerate: bool,
}

impl ExperimentRun {
    /// Least-squares slope of `log mse` against `log x`.
    pub fn log_log_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter(|p| p.mse > 0.0)
            .map(|p| ((p.x as f64).ln(), p.mse.ln()))
            .collect();
        least_squares_slope(&pts)
    }

    /// Fraction of cells with `mse ≤ theorem1_bound`.
    pub fn bound_coverage(&self) -> f64 {
        if self.cells.is_empty() {
            return 1.0;
        }
        self.cells.iter().filter(|c| c.within_bound()).count() as f64 / self.cells.len() as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / m, b + y / m));
    let (sxy, sxx) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    (sxx > 0.0).then(|| sxy / sxx)
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn mean_sq_gap(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let d = a - b;
    d.dot(&d) / d.len() as f64
}

fn with_extrapolation(mut points: Vec<CurvePoint>) -> Vec<CurvePoint> {
    if let Some(first) = points.first().cloned() {
        for p in &mut points {
            p.extrapolation = first.mse * first.x as f64 / p.x as f64;
        }
    }
    points
}

/// Exact KRR on the training split with its test predictions and the
/// data-dependent core norm.
struct ExactFit {
    kernel: KernelSpec,
    lambda: f64,
    test_predictions: Array1<f64>,
    core_norm: f64,
}

impl ExactFit {
    fn new(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<Self> {
        let kernel = cfg.kernel_for(&train.x)?;
        let lambda = cfg.lambda.lambda(train.len());
        let k = kernel.matrix(&train.x)?;
        let model = KrrModel::fit_with_gram(&train.x, &k, &train.y, kernel, lambda)?;
        let core_norm = bounds::core_norm_from_dual(&k, &model.alpha).max(0.0);
        Ok(ExactFit {
            kernel,
            lambda,
            test_predictions: model.predict(&test.x)?,
            core_norm,
        })
    }

    fn rfm_gap(&self, cfg: &ExperimentConfig, train: &Dataset, test: &Dataset, s: usize, seed: u64) -> Result<f64> {
        let fm = FeatureMap::for_kernel(&self.kernel, train.dim(), s, seed, cfg.feature_mode)?;
        let model = RfmModel::fit(fm, &train.x, &train.y, self.lambda)?;
        Ok(mean_sq_gap(&model.predict(&test.x)?, &self.test_predictions))
    }
}

fn b_for(cfg: &ExperimentConfig) -> f64 {
    match (cfg.kernel, cfg.feature_mode) {
        (KernelFamily::Angular, _) | (_, FeatureMode::PaperExact) => 1.0,
        _ => 2.0,
    }
}

/// MSE between exact and random-feature predictions for each `s`,
/// averaged over `repeats` feature-map draws on one fixed split.
pub fn run_mse_vs_s(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let pool = Pool::load(&cfg.data)?;
    run_mse_vs_s_on(cfg, &pool)
}

pub fn run_mse_vs_s_on(cfg: &ExperimentConfig, pool: &Pool) -> Result<ExperimentRun> {
    cfg.validate()?;
    let split = SplitSpec {
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        seed: derive_seed(cfg.master_seed, &[0x5350_4c49]),
    };
    let (train, test) = pool.split(&split, cfg.scaling)?;
    let exact = ExactFit::new(cfg, &train, &test)?;
    let b = b_for(cfg);
    let n = train.len();

    let mut points = Vec::with_capacity(cfg.s_grid.len());
    let mut cells = Vec::new();
    for &s in &cfg.s_grid {
        let gaps: Vec<f64> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(cfg.master_seed, &[s as u64, r as u64]);
                exact.rfm_gap(cfg, &train, &test, s, seed)
            })
            .collect::<Result<_>>()?;
        let plot_bound = exact.core_norm / s as f64;
        let threshold = lambda_threshold(n, s, b, cfg.delta)?;
        cells.extend(gaps.iter().enumerate().map(|(r, &mse)| Cell {
            x: s,
            repeat: r,
            mse,
            plot_bound,
            theorem1_bound: 4.0 * b * plot_bound,
            lambda: exact.lambda,
            lambda_threshold: threshold,
        }));
        let (mse, mse_stderr) = mean_and_stderr(&gaps);
        points.push(CurvePoint {
            x: s,
            mse,
            mse_stderr,
            bound: plot_bound,
            ratio: (mse > 0.0).then(|| plot_bound / mse),
            extrapolation: 0.0,
        });
    }
    let points = with_extrapolation(points);
    Ok(ExperimentRun {
        experiment: "mse-vs-s".into(),
        config: cfg.clone(),
        degenerate: points.iter().any(|p| p.ratio.is_none()),
        points,
        cells,
        exact_fits: 1,
    })
}

/// Bound/MSE ratio for each training size `n` at fixed `s = s_grid[0]`.
/// Every repeat draws a fresh train/test split and a fresh feature map.
pub fn run_ratio_vs_n(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let pool = Pool::load(&cfg.data)?;
    run_ratio_vs_n_on(cfg, &pool)
}

pub fn run_ratio_vs_n_on(cfg: &ExperimentConfig, pool: &Pool) -> Result<ExperimentRun> {
    cfg.validate()?;
    let s = cfg.s_grid[0];
    let b = b_for(cfg);
    let mut points = Vec::with_capacity(cfg.n_grid.len());
    let mut cells = Vec::new();
    let mut exact_fits = 0;
    for &n in &cfg.n_grid {
        let results: Vec<(f64, f64, f64)> = (0..cfg.repeats)
            .into_par_iter()
            .map(|r| {
                let split = SplitSpec {
                    n_train: n,
                    n_test: cfg.n_test,
                    seed: derive_seed(cfg.master_seed, &[n as u64, r as u64, 0]),
                };
                let (train, test) = pool.split(&split, cfg.scaling)?;
                let exact = ExactFit::new(cfg, &train, &test)?;
                let seed = derive_seed(cfg.master_seed, &[n as u64, r as u64, 1]);
                let gap = exact.rfm_gap(cfg, &train, &test, s, seed)?;
                Ok((gap, exact.core_norm / s as f64, exact.lambda))
            })
            .collect::<Result<_>>()?;
        exact_fits += results.len();
        let threshold = lambda_threshold(n, s, b, cfg.delta)?;
        cells.extend(results.iter().enumerate().map(|(r, &(mse, plot_bound, lambda))| Cell {
            x: n,
            repeat: r,
            mse,
            plot_bound,
            theorem1_bound: 4.0 * b * plot_bound,
            lambda,
            lambda_threshold: threshold,
        }));
        let gaps: Vec<f64> = results.iter().map(|t| t.0).collect();
        let (mse, mse_stderr) = mean_and_stderr(&gaps);
        let bound = results.iter().map(|t| t.1).sum::<f64>() / results.len() as f64;
        points.push(CurvePoint {
            x: n,
            mse,
            mse_stderr,
            bound,
            ratio: (mse > 0.0).then(|| bound / mse),
            extrapolation: 0.0,
        });
    }
    let points = with_extrapolation(points);
    Ok(ExperimentRun {
        experiment: "ratio-vs-n".into(),
        config: cfg.clone(),
        degenerate: points.iter().any(|p| p.ratio.is_none()),
        points,
        cells,
        exact_fits,
    })
}

/// Bound quantities for a dataset, via the eigen route.
pub fn bound_report(train: &Dataset, kernel: &KernelSpec, inputs: BoundInputs) -> Result<BoundReport> {
    let k = kernel.matrix(&train.x)?;
    BoundReport::compute(&k, &train.y, inputs)
}

/// One CSV line for a point, without the trailing newline. Numbers use
/// the shortest representation that round-trips; an undefined ratio is
/// written as `null`.
pub fn csv_line(p: &CurvePoint) -> String {
    let ratio = p.ratio.map_or_else(|| "null".to_string(), |r| r.to_string());
    format!("{},{},{},{},{},{}", p.x, p.mse, p.mse_stderr, p.bound, ratio, p.extrapolation)
}

pub fn write_csv<W: Write>(points: &[CurvePoint], mut out: W) -> Result<()> {
    let mut buf = String::with_capacity(64 * (points.len() + 1));
    buf.push_str(CSV_HEADER);
    buf.push('\n');
    for p in points {
        let _ = writeln!(buf, "{}", csv_line(p));
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

pub fn emit_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    write_csv(points, std::fs::File::create(path)?)
}

pub fn emit_json<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Vec<CurvePoint>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(Error::Parse { line: 1, message: format!("expected header {CSV_HEADER:?}") }),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let err = |m: &str| Error::Parse { line: i + 1, message: m.to_string() };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(err("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("non-numeric field"));
            Ok(CurvePoint {
                x: f[0].parse().map_err(|_| err("non-integer x"))?,
                mse: num(f[1])?,
                mse_stderr: num(f[2])?,
                bound: num(f[3])?,
                ratio: if f[4] == "null" { None } else { Some(num(f[4])?) },
                extrapolation: num(f[5])?,
            })
        })
        .collect()
}

/// `key = value` lines; `#` starts a comment. Keys are the CLI flag names
/// without the leading dashes.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected key=value".into(),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Comma-separated positive integers.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| invalid(format!("bad grid entry {t:?}"))))
        .collect()
}
