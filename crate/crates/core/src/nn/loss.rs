use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which output units participate in softmax, loss and argmax.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputMask {
    active: Vec<bool>,
}

impl OutputMask {
    pub fn all(width: usize) -> Self {
        OutputMask {
            active: vec![true; width],
        }
    }

    pub fn from_active(width: usize, active: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; width];
        for c in active {
            mask[c] = true;
        }
        OutputMask { active: mask }
    }

    pub fn width(&self) -> usize {
        self.active.len()
    }

    pub fn is_active(&self, class: usize) -> bool {
        self.active.get(class).copied().unwrap_or(false)
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i)
    }

    pub fn is_subset_of(&self, other: &OutputMask) -> bool {
        self.active_classes().all(|c| other.is_active(c))
    }

    pub(crate) fn check_width(&self, width: usize) -> Result<()> {
        if self.width() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                found: self.width(),
            });
        }
        if self.active_count() == 0 {
            return Err(Error::invalid("output mask has no active class"));
        }
        Ok(())
    }
}

/// Softmax over the active entries of one logit row; inactive entries are 0.
pub fn masked_softmax<T: Scalar>(row: ArrayView1<T>, mask: &OutputMask) -> Vec<T> {
    let max = mask
        .active_classes()
        .map(|c| row[c])
        .fold(T::neg_infinity(), T::max);
    let mut out = vec![T::zero(); row.len()];
    let mut total = T::zero();
    for c in mask.active_classes() {
        let e = (row[c] - max).exp();
        out[c] = e;
        total = total + e;
    }
    for c in mask.active_classes() {
        out[c] = out[c] / total;
    }
    out
}

/// Index of the largest active logit; ties resolve to the lowest class id.
pub fn masked_argmax<T: Scalar>(row: ArrayView1<T>, mask: &OutputMask) -> usize {
    let mut best: Option<(usize, T)> = None;
    for c in mask.active_classes() {
        match best {
            Some((_, v)) if row[c] <= v => {}
            _ => best = Some((c, row[c])),
        }
    }
    best.map(|(c, _)| c).unwrap_or(0)
}

/// Mean negative log-likelihood of `labels` under the softmax restricted to `mask`.
pub fn masked_cross_entropy<T: Scalar>(
    logits: ArrayView2<T>,
    labels: &[usize],
    mask: &OutputMask,
) -> Result<T> {
    let masks = vec![mask; labels.len()];
    loss_and_grad(logits, labels, &masks).map(|(loss, _)| loss)
}

/// Loss plus its gradient w.r.t. the logits, with a mask per row.
pub(crate) fn loss_and_grad<T: Scalar>(
    logits: ArrayView2<T>,
    labels: &[usize],
    masks: &[&OutputMask],
) -> Result<(T, Array2<T>)> {
    let (rows, width) = logits.dim();
    if labels.len() != rows || masks.len() != rows {
        return Err(Error::invalid(format!(
            "{rows} logit rows but {} labels and {} masks",
            labels.len(),
            masks.len()
        )));
    }
    let scale = T::one() / T::from_usize(rows.max(1)).unwrap();
    let mut grad = Array2::<T>::zeros((rows, width));
    let mut total = T::zero();
    for (r, (&label, mask)) in labels.iter().zip(masks).enumerate() {
        mask.check_width(width)?;
        if !mask.is_active(label) {
            return Err(Error::InactiveLabel { label });
        }
        let probs = masked_softmax(logits.row(r), mask);
        total = total - probs[label].max(T::min_positive_value()).ln();
        for c in mask.active_classes() {
            let target = if c == label { T::one() } else { T::zero() };
            grad[[r, c]] = (probs[c] - target) * scale;
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn uniform_two_class_is_ln2() {
        let logits = array![[0.3, 0.3], [-1.0, -1.0]];
        let loss = masked_cross_entropy(logits.view(), &[0, 1], &OutputMask::all(2)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn full_mask_equals_plain_cross_entropy() {
        let logits: Array2<f64> = array![[1.0, 2.0, 0.5], [0.1, -0.3, 0.7]];
        let labels = [1, 2];
        let loss = masked_cross_entropy(logits.view(), &labels, &OutputMask::all(3)).unwrap();
        let plain: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                let z: f64 = logits.row(r).iter().map(|v| v.exp()).sum();
                -(logits[[r, y]].exp() / z).ln()
            })
            .sum::<f64>()
            / 2.0;
        assert!((loss - plain).abs() < 1e-14);
    }

    #[test]
    fn masked_three_class_matches_two_class_by_hand() {
        // class 1 masked; remaining logits (2.0, -1.0), label class 2.
        let logits = array![[2.0, 50.0, -1.0]];
        let mask = OutputMask::from_active(3, [0, 2]);
        let loss = masked_cross_entropy(logits.view(), &[2], &mask).unwrap();
        // -ln(e^-1 / (e^2 + e^-1)) = ln(1 + e^3)
        let expected = (1.0 + 3.0f64.exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn label_on_inactive_class_rejected() {
        let logits = array![[0.0, 0.0, 0.0]];
        let mask = OutputMask::from_active(3, [0, 2]);
        assert!(matches!(
            masked_cross_entropy(logits.view(), &[1], &mask),
            Err(Error::InactiveLabel { label: 1 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let row = array![3.0, -200.0, 0.25, 7.5];
        let mask = OutputMask::from_active(4, [0, 2, 3]);
        let p = masked_softmax(row.view(), &mask);
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_ignores_masked_units() {
        let row = array![0.1, 9.0, 0.2];
        assert_eq!(masked_argmax(row.view(), &OutputMask::from_active(3, [0, 2])), 2);
        assert_eq!(masked_argmax(array![1.0, 1.0].view(), &OutputMask::all(2)), 0);
    }
}
