//! libsvm ingestion, min-max scaling, target normalization and seeded
//! train/test subsampling.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng;

/// One libsvm line: a target and its sparse features with 1-based indices.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRow {
    pub target: f64,
    pub features: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub rows: Vec<RawRow>,
    /// Largest feature index observed.
    pub declared_dim: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense `n x d` features and targets; missing entries are 0.
    pub fn densify(&self) -> (Array2<f64>, Array1<f64>) {
        let mut x = Array2::zeros((self.rows.len(), self.declared_dim));
        let mut y = Array1::zeros(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            y[i] = row.target;
            for &(j, v) in &row.features {
                x[[i, j - 1]] = v;
            }
        }
        (x, y)
    }
}

/// Dense features `x` (`n x d`) with targets `y` (length `n`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }

    /// Writes `y,x1,..,xd` followed by one line per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("y".to_string())
            .chain((1..=self.dim()).map(|j| format!("x{j}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for (row, y) in self.x.outer_iter().zip(self.y.iter()) {
            write!(out, "{y}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Parses libsvm text: `<target> <idx>:<val> ...` per line.
///
/// Blank lines and `#` comments are skipped. Indices must be positive and
/// strictly increasing within a line.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<RawDataset> {
    let mut rows = Vec::new();
    let mut declared_dim = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => Error::Parse {
                line: line_no,
                message: "input is not valid UTF-8".into(),
            },
            _ => Error::Io(e),
        })?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let row = parse_line(content, line_no)?;
        if let Some(&(last, _)) = row.features.last() {
            declared_dim = declared_dim.max(last);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(RawDataset { rows, declared_dim })
}

pub fn parse_libsvm_str(text: &str) -> Result<RawDataset> {
    parse_libsvm(text.as_bytes())
}

fn parse_line(content: &str, line: usize) -> Result<RawRow> {
    let err = |message: String| Error::Parse { line, message };
    let mut tokens = content.split_whitespace();
    let target_tok = tokens.next().ok_or_else(|| err("missing target".into()))?;
    let target: f64 = target_tok
        .parse()
        .map_err(|_| err(format!("non-numeric target {target_tok:?}")))?;
    if !target.is_finite() {
        return Err(err(format!("non-finite target {target_tok:?}")));
    }

    let mut features = Vec::new();
    let mut prev = 0usize;
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected <index>:<value>, found {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| err(format!("non-numeric index in {tok:?}")))?;
        if idx == 0 {
            return Err(err("feature indices are 1-based".into()));
        }
        if idx <= prev {
            return Err(err(format!(
                "non-increasing index {idx} after {prev}"
            )));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("non-numeric value in {tok:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value in {tok:?}")));
        }
        features.push((idx, val));
        prev = idx;
    }
    Ok(RawRow { target, features })
}

/// Per-column min/max statistics mapping each column onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    pub min: Array1<f64>,
    pub max: Array1<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: &Array2<f64>) -> Self {
        let d = x.ncols();
        let mut min = Array1::from_elem(d, f64::INFINITY);
        let mut max = Array1::from_elem(d, f64::NEG_INFINITY);
        for row in x.outer_iter() {
            for j in 0..d {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
        MinMaxScaler { min, max }
    }

    /// Constant columns map to 0.
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.min.len() {
            return Err(Error::DimensionMismatch {
                expected: self.min.len(),
                found: x.ncols(),
            });
        }
        let mut out = x.clone();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[j], self.max[j]);
            let range = hi - lo;
            if range > 0.0 {
                col.mapv_inplace(|v| 2.0 * (v - lo) / range - 1.0);
            } else {
                col.fill(0.0);
            }
        }
        Ok(out)
    }
}

/// Centers `y` and divides by `max|y|`.
pub fn normalize_targets(y: &Array1<f64>) -> Result<Array1<f64>> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mean = y.sum() / y.len() as f64;
    let centered = y.mapv(|v| v - mean);
    let scale = centered.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::DegenerateTargets);
    }
    Ok(centered / scale)
}

/// Global min-max scaling of features plus target normalization.
pub fn normalize_dense(x: &Array2<f64>, y: &Array1<f64>) -> Result<Dataset> {
    if x.nrows() < 2 {
        return Err(invalid("preprocessing needs at least 2 rows"));
    }
    let x = MinMaxScaler::fit(x).transform(x)?;
    Dataset::new(x, normalize_targets(y)?)
}

pub fn preprocess(raw: &RawDataset) -> Result<Dataset> {
    let (x, y) = raw.densify();
    normalize_dense(&x, &y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SplitSpec {
    fn indices(&self, available: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(invalid("n_train and n_test must be positive"));
        }
        let total = self.n_train + self.n_test;
        if total > available {
            return Err(Error::InvalidSplit {
                n_train: self.n_train,
                n_test: self.n_test,
                available,
            });
        }
        let mut r = rng::stream(self.seed, &[available as u64]);
        let picked = index::sample(&mut r, available, total).into_vec();
        let test = picked[self.n_train..].to_vec();
        let mut train = picked;
        train.truncate(self.n_train);
        Ok((train, test))
    }
}

/// Disjoint train/test subsets drawn without replacement.
pub fn subsample(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = spec.indices(ds.len())?;
    Ok((ds.select(&train), ds.select(&test)))
}

/// Where min-max statistics come from when preprocessing with a split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingSource {
    #[default]
    TrainOnly,
    Global,
}

/// Splits raw data, then scales features with statistics from
/// `scaling`. Targets are normalized once over the full loaded data
/// before splitting.
pub fn preprocess_split(
    raw: &RawDataset,
    spec: &SplitSpec,
    scaling: ScalingSource,
) -> Result<(Dataset, Dataset)> {
    let (x, y) = raw.densify();
    if x.nrows() < 2 {
        return Err(invalid("preprocessing needs at least 2 rows"));
    }
    let y = normalize_targets(&y)?;
    let (train_idx, test_idx) = spec.indices(x.nrows())?;
    let x_train = x.select(Axis(0), &train_idx);
    let x_test = x.select(Axis(0), &test_idx);
    let scaler = match scaling {
        ScalingSource::TrainOnly => MinMaxScaler::fit(&x_train),
        ScalingSource::Global => MinMaxScaler::fit(&x),
    };
    Ok((
        Dataset::new(scaler.transform(&x_train)?, y.select(Axis(0), &train_idx))?,
        Dataset::new(scaler.transform(&x_test)?, y.select(Axis(0), &test_idx))?,
    ))
}

/// The regression target used by the synthetic benchmark.
pub fn synthetic_target(x: ndarray::ArrayView1<f64>) -> f64 {
    let d = x.len();
    let at = |j: usize| x[j % d];
    (1.5 * at(0)).sin() + 0.5 * (at(1) * at(2)).cos() + 0.3 * at(3) * at(3).abs().sqrt()
        - 0.2 * at(4) * at(0)
}

/// Gaussian inputs with a smooth nonlinear target plus Gaussian noise,
/// already normalized.
pub fn synthetic(n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if d == 0 {
        return Err(invalid("synthetic data needs d >= 1"));
    }
    let mut r = rng::stream(seed, &[0x5157_4e54]);
    let x = Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal));
    let y = Array1::from_iter(
        x.outer_iter()
            .map(|row| synthetic_target(row) + noise * r.sample::<f64, _>(StandardNormal)),
    );
    normalize_dense(&x, &y)
}
