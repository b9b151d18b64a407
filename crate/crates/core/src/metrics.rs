//! Average accuracy over the tasks seen so far, its global mean, and a
//! forgetting probe on old malware.

use ndarray::Array2;

use crate::data::{AccuracyMatrix, Label, TaskData};
use crate::error::{Error, Result};
use crate::nn::{predict_classes, Mlp, OutputMask};
use crate::scalar::Scalar;

/// Mean of row `i` (tasks `0..=i`), in [0, 1].
pub fn ap_at_task(matrix: &AccuracyMatrix, i: usize) -> Result<f64> {
    let row = matrix
        .row(i)
        .ok_or_else(|| Error::invalid(format!("row {i} of the accuracy matrix is incomplete")))?;
    Ok(shifted_mean(&row))
}

// mean taken relative to the first value, so constant input comes back unchanged
fn shifted_mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values.iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

/// Mean of the per-task averages, scaled to percent.
pub fn global_ap(matrix: &AccuracyMatrix) -> Result<f64> {
    let n = matrix.num_tasks();
    if n == 0 {
        return Err(Error::invalid("empty accuracy matrix"));
    }
    let per_task = (0..n).map(|i| ap_at_task(matrix, i)).collect::<Result<Vec<f64>>>()?;
    Ok(shifted_mean(&per_task) * 100.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDetection {
    pub task: usize,
    pub malware: usize,
    pub goodware: usize,
    /// Fraction of the task's hold-out malware flagged; `None` without malware.
    pub tpr: Option<f64>,
    /// Fraction of the task's hold-out goodware flagged; `None` without goodware.
    pub fpr: Option<f64>,
}

/// Detection of earlier tasks' hold-out samples by a binary model.
#[derive(Clone, Debug, PartialEq)]
pub struct RmaProbe {
    pub per_task: Vec<TaskDetection>,
}

impl RmaProbe {
    pub fn task(&self, task: usize) -> Option<&TaskDetection> {
        self.per_task.iter().find(|d| d.task == task)
    }

    /// TPR over all probed malware pooled together.
    pub fn pooled_tpr(&self) -> Option<f64> {
        pooled(self.per_task.iter().map(|d| (d.tpr, d.malware)))
    }

    pub fn pooled_fpr(&self) -> Option<f64> {
        pooled(self.per_task.iter().map(|d| (d.fpr, d.goodware)))
    }
}

fn pooled(parts: impl Iterator<Item = (Option<f64>, usize)>) -> Option<f64> {
    let (mut hits, mut total) = (0.0, 0usize);
    for (rate, n) in parts {
        if let Some(r) = rate {
            hits += r * n as f64;
            total += n;
        }
    }
    (total > 0).then(|| hits / total as f64)
}

/// Runs a Domain-IL model over old hold-out sets and reports how much of
/// their malware it still flags, plus its false-positive rate on their
/// goodware.
pub fn rma_probe<T: Scalar>(model: &Mlp<T>, early_holdouts: &[&TaskData<T>]) -> Result<RmaProbe> {
    if model.num_classes() != 2 {
        return Err(Error::invalid(format!(
            "probe expects a binary model, got {} outputs",
            model.num_classes()
        )));
    }
    let mask = OutputMask::all(2);
    let mut per_task = Vec::with_capacity(early_holdouts.len());
    for task in early_holdouts {
        let dim = model.input_dim();
        let mut x = Array2::zeros((task.holdout.len(), dim));
        for (r, s) in task.holdout.iter().enumerate() {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: s.features.len(),
                });
            }
            x.row_mut(r).assign(&ndarray::ArrayView1::from(&s.features[..]));
        }
        let predicted = if x.nrows() == 0 {
            Vec::new()
        } else {
            predict_classes(model, x.view(), &mask)?
        };
        let (mut tp, mut malware, mut fp, mut goodware) = (0usize, 0usize, 0usize, 0usize);
        for (s, &p) in task.holdout.iter().zip(&predicted) {
            let flagged = p == Label::Malware.bit() as usize;
            match s.label {
                Label::Malware => {
                    malware += 1;
                    tp += flagged as usize;
                }
                Label::Goodware => {
                    goodware += 1;
                    fp += flagged as usize;
                }
            }
        }
        per_task.push(TaskDetection {
            task: task.task_id,
            malware,
            goodware,
            tpr: (malware > 0).then(|| tp as f64 / malware as f64),
            fpr: (goodware > 0).then(|| fp as f64 / goodware as f64),
        });
    }
    Ok(RmaProbe { per_task })
}
