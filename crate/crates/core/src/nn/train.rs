use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{rng_from, tag};
use crate::scalar::Scalar;

use super::adam::{adam_step, AdamState};
use super::loss::{loss_and_grad, masked_argmax, OutputMask};
use super::mlp::Mlp;

pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Output masks used during training: one for every row, or one per row
/// (Task-IL replay keeps each sample on its own task's head).
#[derive(Clone, Debug)]
pub enum MaskPlan<'a> {
    Shared(&'a OutputMask),
    PerRow(Vec<&'a OutputMask>),
}

impl<'a> MaskPlan<'a> {
    fn for_rows(&self, rows: &[usize]) -> Vec<&'a OutputMask> {
        match self {
            MaskPlan::Shared(m) => vec![*m; rows.len()],
            MaskPlan::PerRow(ms) => rows.iter().map(|&r| ms[r]).collect(),
        }
    }
}

/// Trains in place for `cfg.epochs` passes over `(x, y)`, reshuffling each
/// epoch from `seed`. Returns the mean loss of every epoch.
pub fn train_task<T: Scalar>(
    model: &mut Mlp<T>,
    optimizer: &mut AdamState<T>,
    x: ArrayView2<T>,
    y: &[usize],
    masks: &MaskPlan<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    if cfg.batch_size < 1 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let rows = x.nrows();
    if rows == 0 || y.len() != rows {
        return Err(Error::invalid(format!("training set has {rows} rows and {} labels", y.len())));
    }
    if let MaskPlan::PerRow(ms) = masks {
        if ms.len() != rows {
            return Err(Error::invalid("per-row mask count differs from row count"));
        }
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..rows).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng_from(seed, &[tag::TRAIN, epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // a lone trailing row has zero batch variance; fold it into the previous batch
        if batches.len() > 1 && batches.last().map(|b| b.len()) == Some(1) {
            batches.pop();
            let n = batches.len();
            batches[n - 1] = &order[(n - 1) * cfg.batch_size..];
        }
        let mut loss_sum = 0.0;
        for batch in &batches {
            let xb = x.select(Axis(0), batch);
            let yb: Vec<usize> = batch.iter().map(|&r| y[r]).collect();
            let (logits, cache) = model.forward_train(xb.view(), &mut rng)?;
            let (loss, d_logits) = loss_and_grad(logits.view(), &yb, &masks.for_rows(batch))?;
            let grads = model.backward(&cache, d_logits);
            adam_step(model, &grads, optimizer);
            loss_sum += loss.to_f64_lossy() * batch.len() as f64;
        }
        trace.push(loss_sum / rows as f64);
    }
    Ok(trace)
}

/// Eval-mode predictions restricted to the active classes of `mask`.
pub fn predict_classes<T: Scalar>(model: &Mlp<T>, x: ArrayView2<T>, mask: &OutputMask) -> Result<Vec<usize>> {
    mask.check_width(model.num_classes())?;
    let mut out = Vec::with_capacity(x.nrows());
    for start in (0..x.nrows()).step_by(4096) {
        let end = (start + 4096).min(x.nrows());
        let logits = model.predict(x.slice(ndarray::s![start..end, ..]))?;
        out.extend(logits.rows().into_iter().map(|r| masked_argmax(r, mask)));
    }
    Ok(out)
}

/// Fraction of rows whose masked argmax equals the label.
pub fn evaluate<T: Scalar>(model: &Mlp<T>, x: ArrayView2<T>, y: &[usize], mask: &OutputMask) -> Result<f64> {
    if x.nrows() == 0 || y.len() != x.nrows() {
        return Err(Error::invalid(format!("hold-out set has {} rows and {} labels", x.nrows(), y.len())));
    }
    let predicted = predict_classes(model, x, mask)?;
    let correct = predicted.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::adam::AdamConfig;
    use crate::nn::mlp::{BatchNorm, Dense};
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rng_from(seed, &[]);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((n, 2));
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let c = rng.random_range(0..2usize);
            let center = if c == 0 { (-2.0, -2.0) } else { (2.0, 2.0) };
            x[[i, 0]] = center.0 + noise.sample(&mut rng);
            x[[i, 1]] = center.1 + noise.sample(&mut rng);
            y.push(c);
        }
        (x, y)
    }

    /// Plain batch-gradient logistic regression; the separability oracle.
    fn logistic_regression_accuracy(x: &Array2<f64>, y: &[usize]) -> f64 {
        let (mut w, mut b) = ([0.0f64; 2], 0.0f64);
        for _ in 0..500 {
            let (mut gw, mut gb) = ([0.0; 2], 0.0);
            for (r, &t) in y.iter().enumerate() {
                let z = w[0] * x[[r, 0]] + w[1] * x[[r, 1]] + b;
                let err = 1.0 / (1.0 + (-z).exp()) - t as f64;
                gw[0] += err * x[[r, 0]];
                gw[1] += err * x[[r, 1]];
                gb += err;
            }
            let n = y.len() as f64;
            w[0] -= 0.1 * gw[0] / n;
            w[1] -= 0.1 * gw[1] / n;
            b -= 0.1 * gb / n;
        }
        let correct = y
            .iter()
            .enumerate()
            .filter(|(r, &t)| ((w[0] * x[[*r, 0]] + w[1] * x[[*r, 1]] + b > 0.0) as usize) == t)
            .count();
        correct as f64 / y.len() as f64
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(400, 3);
        assert!(logistic_regression_accuracy(&x, &y) >= 0.95);
        let mut model = Mlp::<f64>::new(&[2, 16, 16, 2], 0.1, 7).unwrap();
        let mut opt = AdamState::new(&model, AdamConfig::default());
        let mask = OutputMask::all(2);
        let cfg = TrainConfig { epochs: 20, batch_size: 32 };
        let trace = train_task(&mut model, &mut opt, x.view(), &y, &MaskPlan::Shared(&mask), &cfg, 11).unwrap();
        assert_eq!(trace.len(), 20);
        assert!(trace[19] < trace[0]);
        assert!(evaluate(&model, x.view(), &y, &mask).unwrap() >= 0.95);
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let (x, y) = blobs(20, 1);
        let mut model = Mlp::<f64>::new(&[2, 4, 2], 0.0, 1).unwrap();
        let before = model.clone();
        let mut opt = AdamState::new(&model, AdamConfig::default());
        let mask = OutputMask::all(2);
        let cfg = TrainConfig { epochs: 0, batch_size: 8 };
        let trace = train_task(&mut model, &mut opt, x.view(), &y, &MaskPlan::Shared(&mask), &cfg, 0).unwrap();
        assert!(trace.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = blobs(60, 2);
        let mask = OutputMask::all(2);
        let cfg = TrainConfig { epochs: 3, batch_size: 16 };
        let run = || {
            let mut model = Mlp::<f64>::new(&[2, 8, 2], 0.3, 5).unwrap();
            let mut opt = AdamState::new(&model, AdamConfig::default());
            train_task(&mut model, &mut opt, x.view(), &y, &MaskPlan::Shared(&mask), &cfg, 9).unwrap();
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_batch_size_rejected() {
        let (x, y) = blobs(4, 0);
        let mut model = Mlp::<f64>::new(&[2, 4, 2], 0.0, 1).unwrap();
        let mut opt = AdamState::new(&model, AdamConfig::default());
        let mask = OutputMask::all(2);
        let cfg = TrainConfig { epochs: 1, batch_size: 0 };
        assert!(train_task(&mut model, &mut opt, x.view(), &y, &MaskPlan::Shared(&mask), &cfg, 0).is_err());
    }

    /// Two-unit net whose logits reproduce its inputs (up to BN scaling).
    fn passthrough() -> Mlp<f64> {
        Mlp::from_parts(
            vec![
                Dense { weight: Array2::eye(2), bias: array![0.0, 0.0] },
                Dense { weight: Array2::eye(2), bias: array![0.0, 0.0] },
            ],
            vec![BatchNorm {
                gamma: array![1.0, 1.0],
                beta: array![0.0, 0.0],
                running_mean: array![0.0, 0.0],
                running_var: array![1.0, 1.0],
            }],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_counts_and_complements() {
        let model = passthrough();
        let mask = OutputMask::all(2);
        // predicted class = larger coordinate: 1,0,1,1,0,0,1,0,1,1
        let x = array![
            [0.0, 1.0], [2.0, 0.0], [0.1, 0.3], [0.0, 5.0], [3.0, 1.0],
            [0.9, 0.2], [0.0, 0.4], [1.0, 0.0], [0.2, 2.2], [0.5, 0.6]
        ];
        let y = [1, 0, 0, 1, 0, 1, 1, 1, 1, 0];
        // hand confusion count: correct at rows 0,1,3,4,6,8 -> 6/10
        let acc = evaluate(&model, x.view(), &y, &mask).unwrap();
        assert_eq!(acc, 0.6);
        let flipped: Vec<usize> = y.iter().map(|c| 1 - c).collect();
        assert!((evaluate(&model, x.view(), &flipped, &mask).unwrap() - 0.4).abs() < 1e-15);
        let truth = [1, 0, 1, 1, 0, 0, 1, 0, 1, 1];
        assert_eq!(evaluate(&model, x.view(), &truth, &mask).unwrap(), 1.0);
    }
}
