//! Datasets: synthetic generation, CSV ingestion, and standardization.
//!
//! Every random stream is a ChaCha generator keyed by
//! `derive_seed(seed, tag, index)`. No global generator is involved, so a run
//! reproduces exactly no matter how rayon schedules the row blocks.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::SignalNoise;

const ROW_BLOCK: usize = 256;

const TAG_BETA: u64 = 1;
const TAG_ROWS: u64 = 2;
const TAG_SPLIT: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a root seed, a purpose tag and an
/// index.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: f64,
    pub y_scale: f64,
    /// Columns with zero training variance; centered but not rescaled.
    pub constant_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Ground truth, present for synthetic data only.
    pub beta: Option<DVector<f64>>,
    pub theta: Option<SignalNoise<f64>>,
    pub normalization: Option<NormalizationStats>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} design rows but {} responses", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains NaN or infinite values".into()));
        }
        Ok(Self {
            x,
            y,
            beta: None,
            theta: None,
            normalization: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The given rows, in order; ground truth carries over.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r])),
            beta: self.beta.clone(),
            theta: self.theta,
            normalization: self.normalization.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Design {
    Isotropic,
    /// Stationary AR(1) columns: `Σ_ij = ρ^{|i−j|}`.
    Ar1 { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub alpha2: f64,
    pub sigma2: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidInput(format!("n and p must be positive, got n={}, p={}", self.n, self.p)));
        }
        if let Design::Ar1 { rho } = self.design {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::domain("rho", rho, "(-1, 1)"));
            }
        }
        SignalNoise::new(self.sigma2, self.alpha2)?;
        Ok(())
    }
}

/// Draws `Y = Xβ + ε` with Gaussian rows, `β ~ N(0, σ²α²/p · I)` and
/// `ε ~ N(0, σ²)`.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let SynthSpec { n, p, design, .. } = *spec;

    let mut beta_rng = stream(spec.seed, TAG_BETA, 0);
    let beta_sd = (spec.sigma2 * spec.alpha2 / p as f64).sqrt();
    let beta = DVector::from_fn(p, |_, _| beta_sd * beta_rng.sample::<f64, _>(StandardNormal));
    let noise_sd = spec.sigma2.sqrt();

    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(spec.seed, TAG_ROWS, b as u64);
            let rows = ROW_BLOCK.min(n - b * ROW_BLOCK);
            let mut xs = Vec::with_capacity(rows * p);
            let mut ys = Vec::with_capacity(rows);
            let mut row = vec![0.0; p];
            for _ in 0..rows {
                fill_row(&mut row, design, &mut rng);
                let signal: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                ys.push(signal + noise_sd * rng.sample::<f64, _>(StandardNormal));
                xs.extend_from_slice(&row);
            }
            (xs, ys)
        })
        .collect();

    let mut xs = Vec::with_capacity(n * p);
    let mut ys = Vec::with_capacity(n);
    for (bx, by) in blocks {
        xs.extend(bx);
        ys.extend(by);
    }
    let mut data = Dataset::new(DMatrix::from_row_slice(n, p, &xs), DVector::from_vec(ys))?;
    data.beta = Some(beta);
    data.theta = Some(SignalNoise::new(spec.sigma2, spec.alpha2)?);
    Ok(data)
}

fn fill_row(row: &mut [f64], design: Design, rng: &mut ChaCha8Rng) {
    match design {
        Design::Isotropic => {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
        }
        Design::Ar1 { rho } => {
            let innovation = (1.0 - rho * rho).sqrt();
            let mut prev: f64 = rng.sample(StandardNormal);
            row[0] = prev;
            for v in row.iter_mut().skip(1) {
                prev = rho * prev + innovation * rng.sample::<f64, _>(StandardNormal);
                *v = prev;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeColumn {
    Index(usize),
    Name(String),
    Last,
}

/// Reads a rectangular numeric CSV. Parse errors carry the 1-based line
/// number in the file and the 1-based column.
pub fn load_csv(path: impl AsRef<Path>, outcome: &OutcomeColumn, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let header: Option<Vec<String>> = if has_header {
        Some(reader.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let first_line = if has_header { 2 } else { 1 };

    let mut width = header.as_ref().map(Vec::len);
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = first_line + i;
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    row: line,
                    column: record.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            None => width = Some(record.len()),
            _ => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: j + 1,
                message: format!("non-numeric value {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: j + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        rows += 1;
    }

    let width = width.unwrap_or(0);
    let target = match outcome {
        OutcomeColumn::Index(j) if *j < width => *j,
        OutcomeColumn::Last if width > 0 => width - 1,
        OutcomeColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Parse {
                row: 1,
                column: 0,
                message: format!("outcome column {name:?} not found in header"),
            })?,
        other => {
            return Err(Error::Parse {
                row: 1,
                column: 0,
                message: format!("outcome column {other:?} not present in {width} columns"),
            })
        }
    };
    if rows == 0 || width < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least one row and two columns, found {rows} rows and {width} columns"
        )));
    }

    let p = width - 1;
    let mut x = DMatrix::zeros(rows, p);
    let mut y = DVector::zeros(rows);
    for r in 0..rows {
        let mut c = 0;
        for j in 0..width {
            let v = values[r * width + j];
            if j == target {
                y[r] = v;
            } else {
                x[(r, c)] = v;
                c += 1;
            }
        }
    }
    Dataset::new(x, y)
}

/// Writes features then the outcome as the last column, with a header row.
/// `{}` formatting of `f64` is the shortest string that parses back exactly.
pub fn write_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    writer.write_record(&header)?;
    let mut record = Vec::with_capacity(data.p() + 1);
    for r in 0..data.n() {
        record.clear();
        record.extend(data.x.row(r).iter().map(|v| v.to_string()));
        record.push(data.y[r].to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    let mean = sum / count as f64;
    if count < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (count - 1) as f64).sqrt())
}

fn is_constant(mean: f64, sd: f64) -> bool {
    sd <= 1e-12 * (1.0 + mean.abs())
}

/// Centers and scales columns of X and Y to mean 0 and unit sample standard
/// deviation, using training statistics for both sets.
pub fn center_normalize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset, NormalizationStats)> {
    if train.n() == 0 {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if train.p() != test.p() {
        return Err(Error::Dimension(format!("train has {} columns, test has {}", train.p(), test.p())));
    }
    let p = train.p();
    let mut x_mean = Vec::with_capacity(p);
    let mut x_scale = Vec::with_capacity(p);
    let mut constant_columns = Vec::new();
    for j in 0..p {
        let (mean, sd) = mean_sd(train.x.column(j).iter().copied());
        x_mean.push(mean);
        if is_constant(mean, sd) {
            constant_columns.push(j);
            x_scale.push(1.0);
        } else {
            x_scale.push(sd);
        }
    }
    let (y_mean, y_sd) = mean_sd(train.y.iter().copied());
    let y_scale = if is_constant(y_mean, y_sd) { 1.0 } else { y_sd };
    let stats = NormalizationStats {
        x_mean,
        x_scale,
        y_mean,
        y_scale,
        constant_columns,
    };
    let train_out = apply_normalization(train, &stats);
    let test_out = apply_normalization(test, &stats);
    Ok((train_out, test_out, stats))
}

pub fn apply_normalization(data: &Dataset, stats: &NormalizationStats) -> Dataset {
    let mut x = data.x.clone();
    for (j, mut col) in x.column_iter_mut().enumerate() {
        col.add_scalar_mut(-stats.x_mean[j]);
        col /= stats.x_scale[j];
    }
    let y = data.y.map(|v| (v - stats.y_mean) / stats.y_scale);
    Dataset {
        x,
        y,
        // Ground truth refers to the raw scale.
        beta: None,
        theta: None,
        normalization: Some(stats.clone()),
    }
}

/// Disjoint random train and test rows, deterministic in `seed`.
pub fn train_test_split(data: &Dataset, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train + n_test > data.n() {
        return Err(Error::InvalidInput(format!(
            "requested {n_train} + {n_test} rows from a dataset of {}",
            data.n()
        )));
    }
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut stream(seed, TAG_SPLIT, 0));
    let train = data.select_rows(&idx[..n_train]);
    let test = data.select_rows(&idx[n_train..n_train + n_test]);
    Ok((train, test))
}
