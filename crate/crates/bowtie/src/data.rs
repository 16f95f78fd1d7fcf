//! Delimited-text datasets, input normalization, train/test splits and the
//! simulated benchmark.

use std::path::Path;

use bowtie_core::linalg::Mat;
use bowtie_core::state::NormStats;
use bowtie_core::Dataset;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CliError;

/// Raw table: named numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize, CliError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CliError::Input(format!("column '{name}' not found; have {:?}", self.columns)))
    }

    /// Splits into inputs and targets. Feature columns default to every
    /// non-target column; a missing target list yields an empty target matrix.
    pub fn to_dataset(&self, targets: &[String], features: Option<&[String]>) -> Result<Dataset, CliError> {
        let t_idx: Vec<usize> = targets.iter().map(|t| self.column_index(t)).collect::<Result<_, _>>()?;
        let f_names: Vec<String> = match features {
            Some(f) => f.to_vec(),
            None => self.columns.iter().filter(|c| !targets.contains(c)).cloned().collect(),
        };
        if f_names.is_empty() {
            return Err(CliError::Input("no feature columns".into()));
        }
        let f_idx: Vec<usize> = f_names.iter().map(|f| self.column_index(f)).collect::<Result<_, _>>()?;
        let n = self.rows.len();
        let x = Mat::from_fn(n, f_idx.len(), |i, j| self.rows[i][f_idx[j]]);
        let y = Mat::from_fn(n, t_idx.len(), |i, j| self.rows[i][t_idx[j]]);
        Ok(Dataset { x, y, feature_names: f_names, target_names: targets.to_vec(), norm: None })
    }
}

/// Reads a delimited file with a header row. Every field must parse as a number.
pub fn read_table(path: &Path, delimiter: u8) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                if field.is_empty() {
                    return Err(CliError::Input(format!("{}: missing value at row {}, column {}", path.display(), r + 1, c + 1)));
                }
                field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CliError::Input(format!("{}: non-numeric value '{field}' at row {}, column {}", path.display(), r + 1, c + 1))
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Table { columns, rows })
}

/// Writes a table with a header row.
pub fn write_table(path: &Path, table: &Table, delimiter: u8) -> Result<(), CliError> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(&mut buf);
        w.write_record(&table.columns).map_err(|e| CliError::Io(e.to_string()))?;
        for row in &table.rows {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    }
    crate::formats::write_atomic(path, &buf)
}

/// Table view of a raw (unnormalized) dataset, features then targets.
pub fn dataset_table(data: &Dataset) -> Table {
    let mut columns = data.feature_names.clone();
    columns.extend(data.target_names.iter().cloned());
    let rows = (0..data.len())
        .map(|i| {
            let mut r = data.x.row(i).to_vec();
            r.extend_from_slice(data.y.row(i));
            r
        })
        .collect();
    Table { columns, rows }
}

/// Per-column mean and population standard deviation of the inputs. Constant
/// columns get `sd = 1`; their names are returned as warnings.
pub fn input_stats(data: &Dataset) -> (NormStats, Vec<String>) {
    let n = data.len() as f64;
    let mut warnings = Vec::new();
    let mut mean = Vec::with_capacity(data.x.cols());
    let mut sd = Vec::with_capacity(data.x.cols());
    for j in 0..data.x.cols() {
        let m = (0..data.len()).map(|i| data.x[(i, j)]).sum::<f64>() / n;
        let v = (0..data.len()).map(|i| (data.x[(i, j)] - m).powi(2)).sum::<f64>() / n;
        let s = v.sqrt();
        if s > 0.0 && s.is_finite() {
            sd.push(s);
        } else {
            warnings.push(format!("column '{}' is constant; using sd = 1", data.feature_names[j]));
            sd.push(1.0);
        }
        mean.push(m);
    }
    (NormStats { mean, sd }, warnings)
}

/// Applies `stats` to the inputs and records them on the dataset.
pub fn apply_norm(data: &mut Dataset, stats: &NormStats) {
    for i in 0..data.len() {
        stats.apply(data.x.row_mut(i));
    }
    data.norm = Some(stats.clone());
}

/// Normalizes the inputs of `data` with its own statistics.
pub fn normalize(data: &mut Dataset) -> Vec<String> {
    let (stats, warnings) = input_stats(data);
    apply_norm(data, &stats);
    warnings
}

/// Seeded random split of a raw dataset into `round(train_frac * N)` training
/// rows and the rest. Both parts are normalized with the training statistics.
pub fn split(data: &Dataset, train_frac: f64, seed: u64) -> (Dataset, Dataset) {
    let (train_idx, test_idx) = split_indices(data.len(), train_frac, seed);
    let mut train = data.subset(&train_idx);
    let mut test = data.subset(&test_idx);
    let (stats, _) = input_stats(&train);
    apply_norm(&mut train, &stats);
    apply_norm(&mut test, &stats);
    (train, test)
}

/// Training and test row indices of [`split`].
pub fn split_indices(n: usize, train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_frac * n as f64).round() as usize).min(n);
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Noise-free regression function of the simulated benchmark.
pub fn toy_function(x1: f64) -> f64 {
    0.1 * x1 * x1 + 10.0 * x1.sin()
}

/// `n` draws of `x ~ U([-2, 2]^2)`, `y = 0.1 x1^2 + 10 sin(x1) + eps`,
/// `eps ~ N(0, 0.5)` (variance 0.5). The second input is irrelevant.
pub fn simulate_toy(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let mut x = Mat::zeros(n, 2);
    let mut y = Mat::zeros(n, 1);
    for i in 0..n {
        x[(i, 0)] = rng.random_range(-2.0..=2.0);
        x[(i, 1)] = rng.random_range(-2.0..=2.0);
        y[(i, 0)] = toy_function(x[(i, 0)]) + noise.sample(&mut rng);
    }
    Dataset { x, y, feature_names: vec!["x1".into(), "x2".into()], target_names: vec!["y".into()], norm: None }
}
