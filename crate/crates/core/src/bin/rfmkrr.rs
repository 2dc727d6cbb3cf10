use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};

use rfmkrr::bounds::{BoundInputs, BoundReport};
use rfmkrr::dataset::{self, Dataset, ScalingSource};
use rfmkrr::harness::{self, DataSource, ExperimentConfig, ExperimentRun, LambdaRule};
use rfmkrr::oracles::{self, OracleReport, SignMethod};
use rfmkrr::{Error, FeatureMap, FeatureMode, KernelFamily, KernelSpec, KrrModel, Result, RfmModel};

#[derive(Parser)]
#[command(name = "rfmkrr", version, about = "Kernel ridge regression with random feature maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand)]
enum Command {
    /// Fit exact KRR, or RFM-KRR when an s grid is given; writes a model blob.
    Fit,
    /// Predict with a fitted model blob; writes one prediction per line.
    Predict,
    /// Bound quantities for a dataset, as JSON.
    Bounds,
    /// Prediction gap between exact and random-feature KRR against s.
    MseVsS,
    /// Bound/MSE ratio against n at fixed s.
    RatioVsN,
    /// Run the statistical oracles for the feature-map lemmas.
    VerifyLemmas,
}

/// Every option can also be set in the `--config` file as `name = value`.
#[derive(Args, Default)]
struct Opts {
    /// key=value file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// libsvm file, or `synthetic[:rows[:dim[:noise[:seed]]]]`.
    #[arg(long, global = true)]
    data: Option<String>,
    /// rbf, laplace or angular.
    #[arg(long, global = true)]
    kernel: Option<String>,
    /// c in λ = c/√n.
    #[arg(long, global = true)]
    lambda_mult: Option<String>,
    /// Fixed λ, overriding --lambda-mult.
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    s_grid: Option<String>,
    #[arg(long, global = true)]
    n_grid: Option<String>,
    #[arg(long, global = true)]
    repeats: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// unbiased or paper-exact.
    #[arg(long, global = true)]
    feature_mode: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Also write the full run (config echo, points, cells) as JSON.
    #[arg(long, global = true)]
    json: Option<String>,
    #[arg(long, global = true)]
    n_train: Option<String>,
    #[arg(long, global = true)]
    n_test: Option<String>,
    /// Kernel bandwidth; defaults to the interpoint-distance heuristic.
    #[arg(long, global = true)]
    sigma: Option<String>,
    #[arg(long, global = true)]
    delta: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    /// train-only or global.
    #[arg(long, global = true)]
    scaling: Option<String>,
    /// Model blob for `predict`.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Monte Carlo draws for `verify-lemmas`.
    #[arg(long, global = true)]
    draws: Option<String>,
}

const KEYS: &[&str] = &[
    "data", "kernel", "lambda-mult", "lambda", "s-grid", "n-grid", "repeats", "seed", "feature-mode", "out",
    "json", "n-train", "n-test", "sigma", "delta", "epsilon", "scaling", "model", "draws",
];

struct Settings(BTreeMap<String, String>);

impl Settings {
    fn resolve(opts: &Opts) -> Result<Self> {
        let mut map = match &opts.config {
            Some(path) => harness::parse_config(&std::fs::read_to_string(path)?)?,
            None => BTreeMap::new(),
        };
        if let Some(bad) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!("unknown config key {bad:?}")));
        }
        let flags = [
            ("data", &opts.data),
            ("kernel", &opts.kernel),
            ("lambda-mult", &opts.lambda_mult),
            ("lambda", &opts.lambda),
            ("s-grid", &opts.s_grid),
            ("n-grid", &opts.n_grid),
            ("repeats", &opts.repeats),
            ("seed", &opts.seed),
            ("feature-mode", &opts.feature_mode),
            ("out", &opts.out),
            ("json", &opts.json),
            ("n-train", &opts.n_train),
            ("n-test", &opts.n_test),
            ("sigma", &opts.sigma),
            ("delta", &opts.delta),
            ("epsilon", &opts.epsilon),
            ("scaling", &opts.scaling),
            ("model", &opts.model),
            ("draws", &opts.draws),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                map.insert(key.to_string(), v.clone());
            }
        }
        Ok(Settings(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::InvalidParameter(format!("invalid value {v:?} for {key}")))
            })
            .transpose()
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require(&self, key: &str) -> Result<String> {
        self.0
            .get(key)
            .cloned()
            .ok_or_else(|| Error::InvalidParameter(format!("--{key} is required")))
    }

    fn grid(&self, key: &str) -> Result<Option<Vec<usize>>> {
        self.0.get(key).map(|v| harness::parse_grid(v)).transpose()
    }

    fn scaling(&self) -> Result<ScalingSource> {
        match self.0.get("scaling").map(String::as_str) {
            None | Some("train-only") => Ok(ScalingSource::TrainOnly),
            Some("global") => Ok(ScalingSource::Global),
            Some(other) => Err(Error::InvalidParameter(format!("unknown scaling {other:?}"))),
        }
    }

    fn lambda_rule(&self) -> Result<LambdaRule> {
        Ok(match self.get::<f64>("lambda")? {
            Some(l) => LambdaRule::Fixed(l),
            None => LambdaRule::Multiplier(self.get_or("lambda-mult", 1.0)?),
        })
    }

    fn experiment(&self, default_repeats: usize, default_s: Vec<usize>) -> Result<ExperimentConfig> {
        let base = ExperimentConfig::default();
        Ok(ExperimentConfig {
            data: self.get_or("data", base.data)?,
            kernel: self.get_or("kernel", base.kernel)?,
            lambda: self.lambda_rule()?,
            s_grid: self.grid("s-grid")?.unwrap_or(default_s),
            n_grid: self.grid("n-grid")?.unwrap_or(base.n_grid),
            n_train: self.get_or("n-train", base.n_train)?,
            n_test: self.get_or("n-test", base.n_test)?,
            repeats: self.get_or("repeats", default_repeats)?,
            master_seed: self.get_or("seed", base.master_seed)?,
            feature_mode: self.get_or("feature-mode", base.feature_mode)?,
            sigma: self.get("sigma")?,
            scaling: self.scaling()?,
            delta: self.get_or("delta", base.delta)?,
        })
    }
}

/// Whole file, preprocessed with global statistics.
fn load_full(settings: &Settings) -> Result<Dataset> {
    match settings.require("data")?.parse::<DataSource>()? {
        DataSource::Libsvm(path) => {
            let file = std::fs::File::open(&path)?;
            dataset::preprocess(&dataset::parse_libsvm(std::io::BufReader::new(file))?)
        }
        DataSource::Synthetic { rows, dim, noise, seed } => dataset::synthetic(rows, dim, noise, seed),
    }
}

fn kernel_for(settings: &Settings, x: &Array2<f64>) -> Result<KernelSpec> {
    let family: KernelFamily = settings.get_or("kernel", KernelFamily::Rbf)?;
    match settings.get::<f64>("sigma")? {
        Some(sigma) if family != KernelFamily::Angular => KernelSpec::new(family, sigma),
        _ => KernelSpec::with_heuristic_bandwidth(family, x),
    }
}

fn write_output(settings: &Settings, text: &str) -> Result<()> {
    match settings.0.get("out") {
        Some(path) => Ok(std::fs::write(path, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

enum Outcome {
    Pass,
    ContractFailure(String),
}

fn fit(settings: &Settings) -> Result<Outcome> {
    let data = load_full(settings)?;
    let kernel = kernel_for(settings, &data.x)?;
    let lambda = settings.lambda_rule()?.lambda(data.len());
    let out = settings.require("out")?;
    let bytes = match settings.grid("s-grid")? {
        Some(grid) => {
            let s = *grid.first().ok_or_else(|| Error::InvalidParameter("empty s grid".into()))?;
            let mode: FeatureMode = settings.get_or("feature-mode", FeatureMode::Unbiased)?;
            let fm = FeatureMap::for_kernel(&kernel, data.dim(), s, settings.get_or("seed", 0)?, mode)?;
            let model = RfmModel::fit(fm, &data.x, &data.y, lambda)?;
            eprintln!("fitted RFM-KRR: n={} s={s} lambda={lambda}", data.len());
            model.to_bytes()
        }
        None => {
            let model = KrrModel::fit(&data.x, &data.y, kernel, lambda)?;
            eprintln!("fitted KRR: n={} lambda={lambda}", data.len());
            model.to_bytes()
        }
    };
    std::fs::write(out, bytes)?;
    Ok(Outcome::Pass)
}

/// Features are used as given (no rescaling); pad to the model's width.
fn predict(settings: &Settings) -> Result<Outcome> {
    let bytes = std::fs::read(settings.require("model")?)?;
    let krr = KrrModel::from_bytes(&bytes);
    let dim = match &krr {
        Ok(m) => m.x_train.ncols(),
        Err(_) => RfmModel::from_bytes(&bytes)?.fm.dim(),
    };
    let x = match settings.require("data")?.parse::<DataSource>()? {
        DataSource::Libsvm(path) => {
            let file = std::fs::File::open(&path)?;
            let mut raw = dataset::parse_libsvm(std::io::BufReader::new(file))?;
            if raw.declared_dim > dim {
                return Err(Error::DimensionMismatch { expected: dim, found: raw.declared_dim });
            }
            raw.declared_dim = dim;
            raw.densify().0
        }
        DataSource::Synthetic { rows, dim, noise, seed } => dataset::synthetic(rows, dim, noise, seed)?.x,
    };
    let preds: Array1<f64> = match krr {
        Ok(m) => m.predict(&x)?,
        Err(_) => RfmModel::from_bytes(&bytes)?.predict(&x)?,
    };
    let text: String = preds.iter().map(|p| format!("{p}\n")).collect();
    write_output(settings, &text)?;
    Ok(Outcome::Pass)
}

fn bounds(settings: &Settings) -> Result<Outcome> {
    let mut data = load_full(settings)?;
    if let Some(n) = settings.get::<usize>("n-train")? {
        if n < data.len() {
            let spec = dataset::SplitSpec {
                n_train: n,
                n_test: data.len() - n,
                seed: settings.get_or("seed", 0)?,
            };
            data = dataset::subsample(&data, &spec)?.0;
        }
    }
    let kernel = kernel_for(settings, &data.x)?;
    let mode: FeatureMode = settings.get_or("feature-mode", FeatureMode::Unbiased)?;
    let b = FeatureMap::for_kernel(&kernel, data.dim(), 1, 0, mode)?.b();
    let defaults = BoundInputs::default();
    let inputs = BoundInputs {
        lambda: settings.lambda_rule()?.lambda(data.len()),
        s: settings.grid("s-grid")?.and_then(|g| g.first().copied()).unwrap_or(defaults.s),
        b,
        delta: settings.get_or("delta", defaults.delta)?,
        epsilon: settings.get_or("epsilon", defaults.epsilon)?,
    };
    let report = harness::bound_report(&data, &kernel, inputs)?;
    let mut text = report.to_json()?;
    text.push('\n');
    write_output(settings, &text)?;
    Ok(check_bounds(&report))
}

fn check_bounds(r: &BoundReport) -> Outcome {
    if r.core_norm > r.cap * (1.0 + 1e-10) {
        return Outcome::ContractFailure(format!("core norm {} exceeds cap {}", r.core_norm, r.cap));
    }
    if r.lower_quantity > r.plot_bound + 1e-12 {
        return Outcome::ContractFailure(format!(
            "lower quantity {} exceeds plot bound {}",
            r.lower_quantity, r.plot_bound
        ));
    }
    Outcome::Pass
}

fn experiment_outcome(run: &ExperimentRun) -> Outcome {
    if let Some(p) = run.points.iter().find(|p| !(p.mse.is_finite() && p.mse >= 0.0)) {
        return Outcome::ContractFailure(format!("non-finite or negative mse at x = {}", p.x));
    }
    let eligible: Vec<_> = run.cells.iter().filter(|c| c.lambda >= c.lambda_threshold).collect();
    if !eligible.is_empty() {
        let covered = eligible.iter().filter(|c| c.within_bound()).count() as f64 / eligible.len() as f64;
        println!("upper bound holds in {:.1}% of {} eligible cells", 100.0 * covered, eligible.len());
        if covered < 0.95 {
            return Outcome::ContractFailure(format!("upper bound coverage {covered} < 0.95"));
        }
    }
    Outcome::Pass
}

fn experiment(settings: &Settings, ratio: bool) -> Result<Outcome> {
    let run = if ratio {
        harness::run_ratio_vs_n(&settings.experiment(10, vec![100])?)?
    } else {
        harness::run_mse_vs_s(&settings.experiment(100, ExperimentConfig::default().s_grid)?)?
    };
    let mut csv = Vec::new();
    harness::write_csv(&run.points, &mut csv)?;
    write_output(settings, &String::from_utf8(csv).expect("csv is utf-8"))?;
    if let Some(path) = settings.0.get("json") {
        harness::emit_json(&run, Path::new(path))?;
    }
    if let Some(slope) = run.log_log_slope() {
        eprintln!("log-log slope of mse against {}: {slope:.4}", if ratio { "n" } else { "s" });
    }
    if run.degenerate {
        eprintln!("note: mse vanished at some grid point; ratio emitted as null");
    }
    Ok(experiment_outcome(&run))
}

fn verify_lemmas(settings: &Settings) -> Result<Outcome> {
    let draws: usize = settings.get_or("draws", 100_000)?;
    let seed: u64 = settings.get_or("seed", 0)?;
    let s = settings.grid("s-grid")?.and_then(|g| g.first().copied()).unwrap_or(4);
    let mut reports: Vec<OracleReport> = Vec::new();

    let draw = dataset::synthetic(5, 3, 0.0, seed)?.x;
    let x = draw.slice(ndarray::s![..4, ..]).to_owned();
    let x_test = draw.slice(ndarray::s![4.., ..]).to_owned();
    let unit = x.map_axis(ndarray::Axis(1), |r| r.dot(&r).sqrt());
    let x_unit = &x / &unit.insert_axis(ndarray::Axis(1));
    for family in [KernelFamily::Rbf, KernelFamily::Laplace, KernelFamily::Angular] {
        let kernel = match family {
            KernelFamily::Angular => KernelSpec::angular(),
            _ => KernelSpec::new(family, 1.0)?,
        };
        let pts = if family == KernelFamily::Angular { &x_unit } else { &x };
        let check = oracles::check_unbiasedness(&kernel, pts.row(0), pts.row(1), draws, seed)?;
        reports.push(OracleReport {
            lemma: format!("unbiased-{family}"),
            pass: check.pass,
            margin: 4.0 * check.std_err - (check.mean - check.kernel_value).abs(),
            draws,
            seed,
            worst_eigenvalue: None,
        });
        reports.push(oracles::verify_lemma2(&kernel, pts, s, draws, seed)?.summary());
        reports.last_mut().unwrap().lemma = format!("lemma2-{family}");
        reports.push(oracles::verify_lemma3(&kernel, pts, x_test.row(0), s, draws, seed)?.summary());
        reports.last_mut().unwrap().lemma = format!("lemma3-{family}");
    }

    let circle = ndarray::array![[0.0, 1.0], [0.5, 3f64.sqrt() / 2.0]];
    let nodes = oracles::DEFAULT_NODES;
    reports.push(oracles::verify_sign_identity(&circle, s, SignMethod::Quadrature { nodes })?.summary());

    let support = dataset::synthetic(8, 3, 0.0, seed)?.x;
    let support = &support / &support.map_axis(ndarray::Axis(1), |r| r.dot(&r).sqrt()).insert_axis(ndarray::Axis(1));
    let fm = FeatureMap::for_kernel(&KernelSpec::angular(), 3, 8, seed, FeatureMode::Unbiased)?;
    let n = rfmkrr::bounds::sample_threshold(0.3, 8, 1.0, 0.1)?;
    reports.push(oracles::verify_lemma1(&fm, &support, n, 0.3, 0.1, 200, seed)?.summary());

    for r in &reports {
        println!("{} {} (margin {:.3e})", if r.pass { "PASS" } else { "FAIL" }, r.lemma, r.margin);
    }
    if let Some(path) = settings.0.get("out") {
        harness::emit_json(&reports, Path::new(path))?;
    }
    Ok(match reports.iter().find(|r| !r.pass) {
        Some(r) => Outcome::ContractFailure(format!("{} failed", r.lemma)),
        None => Outcome::Pass,
    })
}

fn run(cli: &Cli) -> Result<Outcome> {
    let settings = Settings::resolve(&cli.opts)?;
    match cli.command {
        Command::Fit => fit(&settings),
        Command::Predict => predict(&settings),
        Command::Bounds => bounds(&settings),
        Command::MseVsS => experiment(&settings, false),
        Command::RatioVsN => experiment(&settings, true),
        Command::VerifyLemmas => verify_lemmas(&settings),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::ContractFailure(msg)) => {
            eprintln!("contract failure: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
