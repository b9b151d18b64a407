//! EMBER-style tabular CSV input.
//!
//! Schema: header `task,label,family,f0,...,f{D-1}`, one sample per row,
//! UTF-8, `.` as decimal point, no quoting. `label` is 0 (goodware) or 1
//! (malware). `family` is a non-negative integer for malware (0 = unlabeled)
//! and is ignored for goodware; it is written as `-1` for goodware rows.
//! Train and test files must already share the same column layout.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;

use crate::data::{FamilyId, Label, Sample, SampleId, Scenario, TaskData, TaskStream};
use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};
use crate::scalar::Scalar;
use crate::synth::holdout_count;

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.001;

#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset<T> {
    pub features: Array2<T>,
    pub labels: Vec<Label>,
    pub families: Vec<FamilyId>,
    pub task_key: Vec<i64>,
}

impl<T: Scalar> RawDataset<T> {
    pub fn empty(feature_dim: usize) -> Self {
        RawDataset {
            features: Array2::zeros((0, feature_dim)),
            labels: Vec::new(),
            families: Vec::new(),
            task_key: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Flattens a stream back into rows (train then hold-out, task by task).
    pub fn from_stream(stream: &TaskStream<T>) -> Self {
        let samples: Vec<&Sample<T>> = stream.tasks.iter().flat_map(|t| t.train.iter().chain(&t.holdout)).collect();
        let mut features = Array2::zeros((samples.len(), stream.feature_dim));
        for (r, s) in samples.iter().enumerate() {
            for (c, &v) in s.features.iter().enumerate() {
                features[[r, c]] = v;
            }
        }
        RawDataset {
            features,
            labels: samples.iter().map(|s| s.label).collect(),
            families: samples.iter().map(|s| s.family).collect(),
            task_key: samples.iter().map(|s| s.origin_task() as i64).collect(),
        }
    }
}

fn csv_err(path: &Path, row: usize, reason: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

pub fn load_csv<T: Scalar>(path: &Path) -> Result<RawDataset<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

/// Parses CSV from any reader; `path` is only used in error messages.
/// Data rows are numbered from 1, the header is row 0.
pub fn read_csv<T: Scalar, R: Read>(reader: R, path: &Path) -> Result<RawDataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| csv_err(path, 0, e.to_string()))?.clone();
    let fixed = ["task", "label", "family"];
    for (i, name) in fixed.iter().enumerate() {
        if header.get(i) != Some(*name) {
            return Err(csv_err(path, 0, format!("missing column `{name}` at position {i}")));
        }
    }
    let dim = header.len() - fixed.len();
    for (d, name) in header.iter().skip(fixed.len()).enumerate() {
        if name != format!("f{d}") {
            return Err(csv_err(path, 0, format!("expected column `f{d}`, found `{name}`")));
        }
    }
    if dim == 0 {
        return Err(csv_err(path, 0, "no feature columns"));
    }

    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut families = Vec::new();
    let mut task_key = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, row, e.to_string()))?;
        if record.len() != header.len() {
            return Err(csv_err(path, row, format!("{} fields, expected {}", record.len(), header.len())));
        }
        let task: i64 = record[0]
            .parse()
            .map_err(|_| csv_err(path, row, format!("task `{}` is not an integer", &record[0])))?;
        let label = record[1]
            .parse::<u8>()
            .ok()
            .and_then(Label::from_bit)
            .ok_or_else(|| csv_err(path, row, format!("label `{}` is not 0 or 1", &record[1])))?;
        let family = match label {
            Label::Goodware => FamilyId::GOODWARE,
            Label::Malware => {
                let f: u32 = record[2]
                    .parse()
                    .map_err(|_| csv_err(path, row, format!("family `{}` is not a non-negative integer", &record[2])))?;
                if f == u32::MAX {
                    return Err(csv_err(path, row, "family id reserved for goodware"));
                }
                FamilyId(f)
            }
        };
        for (d, field) in record.iter().skip(fixed.len()).enumerate() {
            let v: T = field
                .parse()
                .map_err(|_| csv_err(path, row, format!("feature f{d} `{field}` is not numeric")))?;
            if !v.is_finite() {
                return Err(csv_err(path, row, format!("feature f{d} is not finite")));
            }
            values.push(v);
        }
        labels.push(label);
        families.push(family);
        task_key.push(task);
    }
    let features = Array2::from_shape_vec((labels.len(), dim), values).expect("row widths checked");
    Ok(RawDataset {
        features,
        labels,
        families,
        task_key,
    })
}

/// Writes the CSV schema; reals use shortest round-trip formatting.
pub fn write_csv<T: Scalar, W: Write>(ds: &RawDataset<T>, w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Never).from_writer(w);
    let mut header = vec!["task".to_string(), "label".into(), "family".into()];
    header.extend((0..ds.feature_dim()).map(|d| format!("f{d}")));
    let wrap = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    wtr.write_record(&header).map_err(wrap)?;
    for r in 0..ds.len() {
        let family = if ds.families[r].is_goodware() {
            "-1".to_string()
        } else {
            ds.families[r].0.to_string()
        };
        let mut rec = vec![ds.task_key[r].to_string(), ds.labels[r].bit().to_string(), family];
        rec.extend(ds.features.row(r).iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(wrap)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))
}

pub fn save_csv<T: Scalar>(ds: &RawDataset<T>, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

/// Columns kept by a variance filter fitted on training rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureMask {
    pub keep: Vec<bool>,
}

impl FeatureMask {
    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn kept_columns(&self) -> Vec<usize> {
        self.keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    /// Keeps the selected columns in their original order.
    pub fn apply<T: Scalar>(&self, ds: &RawDataset<T>) -> Result<RawDataset<T>> {
        if ds.feature_dim() != self.keep.len() {
            return Err(Error::DimensionMismatch {
                expected: self.keep.len(),
                found: ds.feature_dim(),
            });
        }
        Ok(RawDataset {
            features: ds.features.select(Axis(1), &self.kept_columns()),
            labels: ds.labels.clone(),
            families: ds.families.clone(),
            task_key: ds.task_key.clone(),
        })
    }
}

/// Population variance (divide by `n`) of every column.
pub fn column_variances<T: Scalar>(features: &Array2<T>) -> Vec<f64> {
    let n = features.nrows() as f64;
    features
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
            col.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

/// Keeps features whose population variance on `train` exceeds `threshold`.
pub fn variance_filter<T: Scalar>(train: &RawDataset<T>, threshold: f64) -> Result<FeatureMask> {
    if threshold < 0.0 || threshold.is_nan() {
        return Err(Error::invalid(format!("variance threshold {threshold} must be >= 0")));
    }
    if train.len() < 2 {
        return Err(Error::invalid("variance filter needs at least 2 rows"));
    }
    let keep: Vec<bool> = column_variances(&train.features).into_iter().map(|v| v > threshold).collect();
    let mask = FeatureMask { keep };
    if mask.kept() == 0 {
        return Err(Error::AllFeaturesDropped(train.feature_dim()));
    }
    Ok(mask)
}

/// Row indices per distinct task key, keys ascending, rows in file order.
pub fn group_by_task<T: Scalar>(ds: &RawDataset<T>) -> Result<Vec<Vec<usize>>> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (r, &k) in ds.task_key.iter().enumerate() {
        groups.entry(k).or_default().push(r);
    }
    let keys: Vec<i64> = groups.keys().copied().collect();
    if let Some(w) = keys.windows(2).find(|w| w[1] != w[0] + 1) {
        return Err(Error::invalid(format!("task keys jump from {} to {}", w[0], w[1])));
    }
    Ok(groups.into_values().collect())
}

/// One task per distinct key with a seeded train / hold-out split.
pub fn partition_by_task<T: Scalar>(
    ds: &RawDataset<T>,
    scenario: Scenario,
    holdout_fraction: f64,
    seed: u64,
) -> Result<TaskStream<T>> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::invalid(format!("holdout_fraction {holdout_fraction} outside (0, 1)")));
    }
    let mut tasks = Vec::new();
    for (task_id, rows) in group_by_task(ds)?.into_iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::invalid(format!("task {task_id} has {} sample(s); need at least 2", rows.len())).at_task(task_id));
        }
        let samples: Vec<Sample<T>> = rows
            .iter()
            .enumerate()
            .map(|(index, &r)| Sample {
                id: SampleId { task: task_id, index },
                features: ds.features.row(r).to_vec(),
                label: ds.labels[r],
                family: ds.families[r],
            })
            .collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng_from(seed, &[tag::PARTITION, task_id as u64]));
        let n_hold = holdout_count(samples.len(), holdout_fraction);
        let hold: BTreeSet<usize> = order[..n_hold].iter().copied().collect();
        let (mut holdout, mut train) = (Vec::new(), Vec::new());
        for (i, s) in samples.into_iter().enumerate() {
            if hold.contains(&i) {
                holdout.push(s)
            } else {
                train.push(s)
            }
        }
        let active_classes = match scenario {
            Scenario::DomainIl => BTreeSet::from([0, 1]),
            _ => train.iter().chain(&holdout).filter(|s| s.is_malware()).map(|s| s.family.0).collect(),
        };
        tasks.push(TaskData {
            task_id,
            train,
            holdout,
            active_classes,
        });
    }
    Ok(TaskStream {
        scenario,
        feature_dim: ds.feature_dim(),
        tasks,
    })
}

/// Fits the variance filter on every training row of the stream and drops
/// the same columns from all train and hold-out samples.
pub fn filter_stream<T: Scalar>(stream: &TaskStream<T>, threshold: f64) -> Result<(TaskStream<T>, FeatureMask)> {
    let train: Vec<&Sample<T>> = stream.tasks.iter().flat_map(|t| &t.train).collect();
    let mut features = Array2::zeros((train.len(), stream.feature_dim));
    for (r, s) in train.iter().enumerate() {
        features.row_mut(r).assign(&ndarray::ArrayView1::from(&s.features[..]));
    }
    let fit = RawDataset {
        features,
        labels: train.iter().map(|s| s.label).collect(),
        families: train.iter().map(|s| s.family).collect(),
        task_key: train.iter().map(|s| s.origin_task() as i64).collect(),
    };
    let mask = variance_filter(&fit, threshold)?;
    let cols = mask.kept_columns();
    let project = |s: &Sample<T>| Sample {
        features: cols.iter().map(|&c| s.features[c]).collect(),
        ..s.clone()
    };
    let tasks = stream
        .tasks
        .iter()
        .map(|t| TaskData {
            task_id: t.task_id,
            train: t.train.iter().map(project).collect(),
            holdout: t.holdout.iter().map(project).collect(),
            active_classes: t.active_classes.clone(),
        })
        .collect();
    let filtered = TaskStream {
        scenario: stream.scenario,
        feature_dim: cols.len(),
        tasks,
    };
    Ok((filtered, mask))
}
