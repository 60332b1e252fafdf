//! Labeled manifests built from the `NNNN{r|f}` filename convention,
//! stratified train/test splits, the standardizing scaler and the feature
//! cache CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureVector, FEATURE_NAMES, N_FEATURES};

pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{name:?} does not follow the NNNN[r|f] naming convention: {reason}")]
    Naming { name: String, reason: String },
    #[error("duplicate sample index {index}: {first} and {second}")]
    DuplicateIndex {
        index: u32,
        first: String,
        second: String,
    },
    #[error("cannot stratify: {0}")]
    Stratification(String),
    #[error("need at least {needed} feature vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid split configuration: {0}")]
    Config(String),
    #[error("feature CSV row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("sample {0} has no features")]
    MissingFeatures(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Real recordings are the negative class, mimicked ones the positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Faked,
}

impl Label {
    /// Integer class used by the network: real = 0, faked = 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Faked => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Faked),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Faked => "faked",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Label::Real),
            "faked" => Ok(Label::Faked),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub index: u32,
    pub label: Label,
    pub path: PathBuf,
    pub features: Option<FeatureVector>,
}

impl LabeledSample {
    pub fn file_name(&self) -> String {
        self.path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

/// Samples ordered by index, indices unique.
///
/// The naming convention carries no speaker identity, so "one sample per
/// speaker" can only be enforced as index uniqueness.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    samples: Vec<LabeledSample>,
}

impl DatasetManifest {
    pub fn new(mut samples: Vec<LabeledSample>) -> Result<Self, DatasetError> {
        samples.sort_by_key(|s| s.index);
        for pair in samples.windows(2) {
            if pair[0].index == pair[1].index {
                return Err(DatasetError::DuplicateIndex {
                    index: pair[0].index,
                    first: pair[0].file_name(),
                    second: pair[1].file_name(),
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [LabeledSample] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<LabeledSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Feature vectors of every sample, failing on the first without any.
    pub fn feature_vectors(&self) -> Result<Vec<FeatureVector>, DatasetError> {
        self.samples
            .iter()
            .map(|s| {
                s.features
                    .ok_or_else(|| DatasetError::MissingFeatures(s.file_name()))
            })
            .collect()
    }
}

/// Parses `NNNNx...` where `NNNN` is the decimal index and `x` is `r`
/// (real) or `f` (faked). Directory components are ignored.
pub fn parse_label(filename: &str) -> Result<(u32, Label), DatasetError> {
    let base = Path::new(filename)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let err = |reason: &str| DatasetError::Naming {
        name: filename.to_string(),
        reason: reason.to_string(),
    };
    let chars: Vec<char> = base.chars().take(5).collect();
    if chars.len() < 5 {
        return Err(err("name shorter than five characters"));
    }
    if !chars[..4].iter().all(|c| c.is_ascii_digit()) {
        return Err(err("first four characters must be digits"));
    }
    let index: u32 = chars[..4].iter().collect::<String>().parse().unwrap();
    let label = match chars[4] {
        'r' => Label::Real,
        'f' => Label::Faked,
        _ => return Err(err("fifth character must be 'r' or 'f'")),
    };
    Ok((index, label))
}

/// One sample per `.wav` file in `dir` (not recursive), ordered by index.
pub fn build_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut samples = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let is_wav = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav || !path.is_file() {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let (index, label) = parse_label(&name)?;
        samples.push(LabeledSample {
            index,
            label,
            path,
            features: None,
        });
    }
    DatasetManifest::new(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    /// Share of the training part held out for per-epoch validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            // 933 -> 746/187 and 1127 -> 901/226
            test_fraction: 0.2004,
            validation_fraction: 0.2,
            seed: 42,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (name, v) in [
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(DatasetError::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Splits `total` items across groups of the given sizes in proportion,
/// by largest remainder, so the parts sum to exactly `total`.
fn apportion(total: usize, sizes: &[usize], fraction: f64) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&n| n as f64 * fraction).collect();
    let mut parts: Vec<usize> = exact
        .iter()
        .zip(sizes)
        .map(|(&e, &n)| (e.floor() as usize).min(n))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = total.saturating_sub(parts.iter().sum());
    for &g in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if parts[g] < sizes[g] {
            parts[g] += 1;
            missing -= 1;
        }
    }
    parts
}

/// Stratified, seeded train/test split. The test part has
/// `round(test_fraction * n)` samples, apportioned to labels by largest
/// remainder. Both outputs stay ordered by index.
pub fn split(
    manifest: &DatasetManifest,
    cfg: &SplitConfig,
) -> Result<(DatasetManifest, DatasetManifest), DatasetError> {
    cfg.validate()?;
    let mut groups: BTreeMap<Label, Vec<&LabeledSample>> = BTreeMap::new();
    for s in manifest.samples() {
        groups.entry(s.label).or_default().push(s);
    }
    if groups.len() < 2 {
        return Err(DatasetError::Stratification(format!(
            "need both labels, manifest has {} real and {} faked",
            manifest.count(Label::Real),
            manifest.count(Label::Faked)
        )));
    }

    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let n_test = (cfg.test_fraction * manifest.len() as f64).round() as usize;
    let per_label = apportion(n_test, &sizes, cfg.test_fraction);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (group, take) in groups.into_values().zip(per_label) {
        let mut shuffled = group;
        shuffled.shuffle(&mut rng);
        let (t, rest) = shuffled.split_at(take);
        test.extend(t.iter().map(|s| (*s).clone()));
        train.extend(rest.iter().map(|s| (*s).clone()));
    }
    Ok((DatasetManifest::new(train)?, DatasetManifest::new(test)?))
}

/// Per-dimension standardizer fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Mean and population standard deviation per column, std floored at
    /// [`STD_FLOOR`].
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, DatasetError> {
        if rows.len() < 2 {
            return Err(DatasetError::InsufficientData {
                needed: 2,
                got: rows.len(),
            });
        }
        let dim = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        for d in 0..dim {
            // Shifted by the first value so a constant column has exact mean.
            let pivot = rows[0].as_ref()[d];
            let shift: f64 = rows.iter().map(|r| r.as_ref()[d] - pivot).sum::<f64>() / n;
            let m = pivot + shift;
            let var = rows
                .iter()
                .map(|r| (r.as_ref()[d] - m).powi(2))
                .sum::<f64>()
                / n;
            mean[d] = m;
            std[d] = var.sqrt().max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim(), "scaler dimension mismatch");
        v.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim(), "scaler dimension mismatch");
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, s))| m + s * x)
            .collect()
    }
}

pub fn fit_scaler(train: &[FeatureVector]) -> Result<Scaler, DatasetError> {
    let rows: Vec<&[f64]> = train.iter().map(FeatureVector::as_slice).collect();
    Scaler::fit(&rows)
}

pub fn apply_scaler(scaler: &Scaler, v: &FeatureVector) -> Vec<f64> {
    scaler.transform(v.as_slice())
}

pub fn csv_header() -> Vec<&'static str> {
    let mut h = vec!["filename"];
    h.extend(FEATURE_NAMES);
    h.push("label");
    h
}

/// Writes the feature cache: header, then `filename, 26 features, label`
/// per sample. Floats use the shortest representation that parses back to
/// the same `f64`.
pub fn write_feature_csv<W: Write>(manifest: &DatasetManifest, out: W) -> Result<(), DatasetError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let csv_err = |row: usize| move |e: csv::Error| DatasetError::Csv {
        row,
        message: e.to_string(),
    };
    w.write_record(csv_header()).map_err(csv_err(1))?;
    for (i, s) in manifest.samples().iter().enumerate() {
        let fv = s
            .features
            .ok_or_else(|| DatasetError::MissingFeatures(s.file_name()))?;
        let mut record = Vec::with_capacity(N_FEATURES + 2);
        record.push(s.file_name());
        record.extend(fv.values.iter().map(|v| format!("{v:?}")));
        record.push(s.label.to_string());
        w.write_record(&record).map_err(csv_err(i + 2))?;
    }
    w.flush().map_err(|e| DatasetError::Csv {
        row: 0,
        message: e.to_string(),
    })
}

/// Reads a feature cache written by [`write_feature_csv`]. Rows are
/// numbered from 1 (the header) in errors.
pub fn read_feature_csv<R: Read>(input: R) -> Result<DatasetManifest, DatasetError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = r.records();
    let expected_cols = N_FEATURES + 2;

    match records.next() {
        None => return Ok(DatasetManifest::default()),
        Some(header) => {
            let header = header.map_err(|e| DatasetError::Csv {
                row: 1,
                message: e.to_string(),
            })?;
            let got: Vec<&str> = header.iter().collect();
            if got != csv_header() {
                return Err(DatasetError::Csv {
                    row: 1,
                    message: "header does not match the feature schema".into(),
                });
            }
        }
    }

    let mut samples = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let err = |message: String| DatasetError::Csv { row, message };
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != expected_cols {
            return Err(err(format!(
                "expected {expected_cols} columns, found {}",
                rec.len()
            )));
        }
        let filename = rec[0].to_string();
        let (index, name_label) = parse_label(&filename).map_err(|e| err(e.to_string()))?;
        let label: Label = rec[expected_cols - 1].parse().map_err(err)?;
        if label != name_label {
            return Err(err(format!(
                "label column {label} contradicts file name {filename:?}"
            )));
        }
        let mut values = [0.0; N_FEATURES];
        for (j, v) in values.iter_mut().enumerate() {
            let cell = &rec[j + 1];
            *v = cell
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| err(format!("column {}: {cell:?} is not a finite number", FEATURE_NAMES[j])))?;
        }
        samples.push(LabeledSample {
            index,
            label,
            path: PathBuf::from(filename),
            features: Some(FeatureVector::new(values)),
        });
    }
    DatasetManifest::new(samples)
}
