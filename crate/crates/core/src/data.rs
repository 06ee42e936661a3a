//! Datasets, train/test partitions and min-max scaling.
//!
//! CSV ingestion is driven by a [`Schema`] naming the feature and target
//! columns and the task kind. Cells that are empty, `?`, `NA` or `NaN` are
//! treated as missing and the row is dropped. Cells that fail to parse are an
//! error unless the schema sets `invalid = "drop"`.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub task: TaskKind,
    /// Class label for each one-hot column (classification only).
    pub classes: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (
            self.features.select(Axis(0), rows),
            self.targets.select(Axis(0), rows),
        )
    }

    /// Index of the hot entry in each target row.
    pub fn labels(&self) -> Vec<usize> {
        self.targets
            .outer_iter()
            .map(|row| {
                row.iter()
                    .position(|&v| v == 1.0)
                    .expect("one-hot targets")
            })
            .collect()
    }
}

/// `y = sin(2 pi x) + noise_amp * N(0, 1)` on `n_points` equally spaced `x` in `[-1, 1]`.
pub fn gen_noisy_sine(n_points: usize, noise_amp: f64, seed: u64) -> Result<Dataset> {
    if n_points < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 points, got {n_points}"
        )));
    }
    let mut rng = rng::stream(seed, Purpose::Noise, 0);
    let step = 2.0 / (n_points - 1) as f64;
    let xs: Vec<f64> = (0..n_points).map(|i| -1.0 + step * i as f64).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (2.0 * PI * x).sin() + noise_amp * z
        })
        .collect();
    Ok(Dataset {
        features: Array2::from_shape_vec((n_points, 1), xs).expect("n x 1"),
        targets: Array2::from_shape_vec((n_points, 1), ys).expect("n x 1"),
        feature_names: vec!["x".into()],
        target_names: vec!["y".into()],
        task: TaskKind::Regression,
        classes: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InvalidCellPolicy {
    #[default]
    Error,
    Drop,
}

/// Which CSV columns to read and how to interpret them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub task: TaskKind,
    pub features: Vec<String>,
    /// Regression: one or more numeric columns. Classification: exactly one label column.
    pub targets: Vec<String>,
    #[serde(default)]
    pub invalid: InvalidCellPolicy,
}

impl Schema {
    pub fn from_toml_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Schema::from_toml_str(&text)
    }

    /// Schema files are TOML:
    ///
    /// ```text
    /// task = "classification"
    /// features = ["sepal_width", "petal_width"]
    /// targets = ["species"]
    /// invalid = "drop"            # optional, default "error"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Schema> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("schema: {e}")))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "?" | "NA" | "NaN" | "nan")
}

/// Reads a headed CSV file according to `schema`.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    read_csv(file, schema)
}

/// Datasets vendored with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    /// Fisher's Iris measurements, 150 rows.
    Iris,
    /// Auto-MPG, 406 rows of which 392 are complete.
    AutoMpg,
}

impl Builtin {
    pub fn csv(self) -> &'static str {
        match self {
            Builtin::Iris => include_str!("../data/iris.csv"),
            Builtin::AutoMpg => include_str!("../data/auto_mpg.csv"),
        }
    }

    pub fn load(self, schema: &Schema) -> Result<Dataset> {
        read_csv(self.csv().as_bytes(), schema)
    }
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(source: R, schema: &Schema) -> Result<Dataset> {
    if schema.features.is_empty() || schema.targets.is_empty() {
        return Err(Error::InvalidArgument(
            "schema needs at least one feature and one target".into(),
        ));
    }
    if schema.task == TaskKind::Classification && schema.targets.len() != 1 {
        return Err(Error::InvalidArgument(
            "classification schemas take exactly one label column".into(),
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: HashMap<String, usize> = reader
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_owned(), i))
        .collect();
    let column = |name: &String| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownColumn(name.clone()))
    };
    let feature_cols: Vec<usize> = schema.features.iter().map(column).collect::<Result<_>>()?;
    let target_cols: Vec<usize> = schema.targets.iter().map(column).collect::<Result<_>>()?;

    let mut features = Vec::new();
    let mut numeric_targets = Vec::new();
    let mut labels = Vec::new();
    // Row numbers are 1-based and count the header as row 1.
    'rows: for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 2;
        let mut row = Vec::with_capacity(feature_cols.len());
        let parse = |col: usize, name: &String| -> Result<Option<f64>> {
            let cell = record.get(col).unwrap_or("");
            if is_missing(cell) {
                return Ok(None);
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ if schema.invalid == InvalidCellPolicy::Drop => Ok(None),
                _ => Err(Error::Parse {
                    row: row_no,
                    column: name.clone(),
                    value: cell.to_owned(),
                }),
            }
        };
        for (&col, name) in feature_cols.iter().zip(&schema.features) {
            match parse(col, name)? {
                Some(v) => row.push(v),
                None => continue 'rows,
            }
        }
        match schema.task {
            TaskKind::Regression => {
                let mut t = Vec::with_capacity(target_cols.len());
                for (&col, name) in target_cols.iter().zip(&schema.targets) {
                    match parse(col, name)? {
                        Some(v) => t.push(v),
                        None => continue 'rows,
                    }
                }
                numeric_targets.extend(t);
            }
            TaskKind::Classification => {
                let cell = record.get(target_cols[0]).unwrap_or("");
                if is_missing(cell) {
                    continue 'rows;
                }
                labels.push(cell.to_owned());
            }
        }
        features.extend(row);
    }

    let rows = features.len() / feature_cols.len();
    let features = Array2::from_shape_vec((rows, feature_cols.len()), features).expect("row-major");
    let (targets, classes, target_names) = match schema.task {
        TaskKind::Regression => (
            Array2::from_shape_vec((rows, target_cols.len()), numeric_targets).expect("row-major"),
            Vec::new(),
            schema.targets.clone(),
        ),
        TaskKind::Classification => {
            let classes: Vec<String> = labels
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut onehot = Array2::zeros((rows, classes.len()));
            for (r, label) in labels.iter().enumerate() {
                let c = classes.binary_search(label).expect("label from the set");
                onehot[[r, c]] = 1.0;
            }
            (onehot, classes.clone(), classes)
        }
    };
    Ok(Dataset {
        features,
        targets,
        feature_names: schema.features.clone(),
        target_names,
        task: schema.task,
        classes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Uniformly random partition: the first `n_train` entries of a seeded
/// permutation of `0..n_samples` train, the rest test.
pub fn split(n_samples: usize, n_train: usize, seed: u64) -> Result<Split> {
    if n_train == 0 || n_train >= n_samples {
        return Err(Error::InvalidArgument(format!(
            "n_train must be in 1..{n_samples}, got {n_train}"
        )));
    }
    let mut idx: Vec<usize> = (0..n_samples).collect();
    idx.shuffle(&mut rng::stream(seed, Purpose::Split, 0));
    let test = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        test,
        seed,
    })
}

/// Per-column affine map sending the training minimum to -1 and maximum to +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl ScalerParams {
    /// Fits on the given rows of `data` only.
    pub fn fit(data: ArrayView2<f64>, rows: &[usize], names: &[String]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows to fit the scaler on".into()));
        }
        let mut min = vec![f64::INFINITY; data.ncols()];
        let mut max = vec![f64::NEG_INFINITY; data.ncols()];
        for &r in rows {
            for (c, &v) in data.row(r).iter().enumerate() {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
        for c in 0..data.ncols() {
            if !(max[c] > min[c]) {
                let name = names.get(c).cloned().unwrap_or_else(|| format!("#{c}"));
                return Err(Error::ConstantFeature(name));
            }
        }
        Ok(ScalerParams { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Slope `a` of the inverse map `x = a * s + b` for column `c`.
    pub fn half_range(&self, c: usize) -> f64 {
        0.5 * (self.max[c] - self.min[c])
    }

    fn check(&self, data: &ArrayView2<f64>) -> Result<()> {
        if data.ncols() != self.dim() {
            return Err(Error::shape(
                format!("{} columns", self.dim()),
                format!("{} columns", data.ncols()),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[c], self.max[c]);
            col.mapv_inplace(|x| 2.0 * (x - lo) / (hi - lo) - 1.0);
        }
        Ok(out)
    }

    pub fn invert(&self, data: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&data)?;
        let mut out = data.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = (self.min[c], self.max[c]);
            col.mapv_inplace(|s| (s + 1.0) * 0.5 * (hi - lo) + lo);
        }
        Ok(out)
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Array1<f64>> {
        let view = ArrayView2::from_shape((1, row.len()), row)
            .map_err(|_| Error::shape(self.dim(), row.len()))?;
        Ok(self.apply(view)?.row(0).to_owned())
    }
}

pub fn minmax_fit(data: ArrayView2<f64>, rows: &[usize], names: &[String]) -> Result<ScalerParams> {
    ScalerParams::fit(data, rows, names)
}

pub fn minmax_apply(scaler: &ScalerParams, data: ArrayView2<f64>) -> Result<Array2<f64>> {
    scaler.apply(data)
}

pub fn minmax_invert(scaler: &ScalerParams, data: ArrayView2<f64>) -> Result<Array2<f64>> {
    scaler.invert(data)
}

/// Train/test matrices in network space together with the scalers that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub train_x: Array2<f64>,
    pub train_y: Array2<f64>,
    pub test_x: Array2<f64>,
    pub test_y: Array2<f64>,
    pub feature_scaler: ScalerParams,
    /// Present for regression when targets are scaled.
    pub target_scaler: Option<ScalerParams>,
}

impl Prepared {
    /// Factor turning a squared-error loss on scaled targets into the same
    /// loss in original target units. Only meaningful for a single target.
    pub fn target_units_factor(&self) -> f64 {
        match &self.target_scaler {
            Some(s) if s.dim() == 1 => s.half_range(0).powi(2),
            _ => 1.0,
        }
    }
}

/// Scales features (and regression targets when `scale_targets`) using the
/// training rows of `split` only. Classification targets stay one-hot.
pub fn prepare(dataset: &Dataset, split: &Split, scale_targets: bool) -> Result<Prepared> {
    let feature_scaler = ScalerParams::fit(dataset.features.view(), &split.train, &dataset.feature_names)?;
    let target_scaler = if scale_targets && dataset.task == TaskKind::Regression {
        Some(ScalerParams::fit(
            dataset.targets.view(),
            &split.train,
            &dataset.target_names,
        )?)
    } else {
        None
    };
    let (tx, ty) = dataset.select(&split.train);
    let (vx, vy) = dataset.select(&split.test);
    let scale_y = |y: Array2<f64>| -> Result<Array2<f64>> {
        match &target_scaler {
            Some(s) => s.apply(y.view()),
            None => Ok(y),
        }
    };
    Ok(Prepared {
        train_x: feature_scaler.apply(tx.view())?,
        train_y: scale_y(ty)?,
        test_x: feature_scaler.apply(vx.view())?,
        test_y: scale_y(vy)?,
        feature_scaler,
        target_scaler,
    })
}
