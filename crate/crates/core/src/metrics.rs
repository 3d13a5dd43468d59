//! Confusion counts, per-class error rates and the balanced error, reported
//! as the sum of per-class error rates.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::trainer::{predict_all, Model};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], n: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: predictions.len(),
            });
        }
        let mut counts = vec![vec![0u64; n]; n];
        for (&p, &y) in predictions.iter().zip(labels) {
            if p >= n || y >= n {
                return Err(Error::Label { label: p.max(y), n });
            }
            counts[y][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.n_classes()).map(|k| self.counts[k][k]).sum();
        trace as f64 / self.total() as f64
    }

    /// Misclassified fraction per true class; a class without examples is
    /// an error.
    pub fn per_class_error(&self) -> Result<Vec<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let m: u64 = row.iter().sum();
                if m == 0 {
                    return Err(Error::EmptyClass(k));
                }
                Ok((m - row[k]) as f64 / m as f64)
            })
            .collect()
    }

    pub fn balanced_error(&self) -> Result<f64> {
        Ok(self.per_class_error()?.iter().sum())
    }
}

pub fn confusion<M: Model + ?Sized>(model: &M, test: &Dataset) -> Result<ConfusionMatrix> {
    let preds = predict_all(model, test)?;
    ConfusionMatrix::from_predictions(&preds, test.labels(), test.n_classes())
}

pub fn per_class_error<M: Model + ?Sized>(model: &M, test: &Dataset) -> Result<Vec<f64>> {
    confusion(model, test)?.per_class_error()
}

/// Sum over classes of the per-class error rate, in `[0, n]`.
pub fn balanced_error<M: Model + ?Sized>(model: &M, test: &Dataset) -> Result<f64> {
    confusion(model, test)?.balanced_error()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::eval_balanced_loss;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let labels = [0, 0, 1, 1, 1];
        let perfect = ConfusionMatrix::from_predictions(&labels, &labels, 2).unwrap();
        assert_eq!(perfect.balanced_error().unwrap(), 0.0);
        assert_eq!(perfect.counts(), &[vec![2, 0], vec![0, 3]]);
        let constant = ConfusionMatrix::from_predictions(&[0; 5], &labels, 2).unwrap();
        assert_eq!(constant.balanced_error().unwrap(), 1.0);
        assert_eq!(constant.per_class_error().unwrap(), vec![0.0, 1.0]);
        let missing = ConfusionMatrix::from_predictions(&[0, 0], &[0, 0], 2).unwrap();
        assert!(missing.balanced_error().is_err());
    }

    proptest! {
        #[test]
        fn rate_sum_matches_mean_balanced_loss(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 4..60)
        ) {
            let mut labels: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            labels[..4].copy_from_slice(&[0, 1, 2, 3]);
            let preds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let cm = ConfusionMatrix::from_predictions(&preds, &labels, 4).unwrap();
            let be = cm.balanced_error().unwrap();
            prop_assert!((0.0..=4.0).contains(&be));
            let m = labels.len() as f64;
            let priors: Vec<f64> = (0..4)
                .map(|k| labels.iter().filter(|&&y| y == k).count() as f64 / m)
                .collect();
            let direct: f64 = preds
                .iter()
                .zip(&labels)
                .map(|(&p, &y)| eval_balanced_loss(p, y, &priors).unwrap())
                .sum::<f64>() / m;
            prop_assert!((be - direct).abs() < 1e-12);
            let rates = cm.per_class_error().unwrap();
            prop_assert!((rates.iter().sum::<f64>() / 4.0 - be / 4.0).abs() < 1e-15);
            prop_assert_eq!(cm.total(), labels.len() as u64);
        }
    }
}
