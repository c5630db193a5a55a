//! Overall accuracy, average (per-class) accuracy and Cohen's kappa.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][pred]`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts<R: AsRef<[u64]>>(rows: &[R]) -> Result<Self> {
        let classes = rows.len();
        let mut cm = Self::new(classes);
        for (t, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != classes {
                return Err(Error::Metric(format!(
                    "row {t} has {} entries, expected {classes}",
                    r.len()
                )));
            }
            cm.counts[t * classes..(t + 1) * classes].copy_from_slice(r);
        }
        Ok(cm)
    }

    pub fn from_predictions(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Metric(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.accumulate(t, p)?;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn accumulate(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.classes {
                return Err(Error::Index {
                    index: label,
                    len: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k * self.classes..(k + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, k)).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Metric("confusion matrix is empty".into())),
            n => Ok(n as f64),
        }
    }

    /// `Σ_k rowsum_k · colsum_k / total²`
    pub fn chance_agreement(&self) -> Result<f64> {
        let n = self.nonempty_total()?;
        let s: f64 = (0..self.classes)
            .map(|k| self.row_sum(k) as f64 * self.col_sum(k) as f64)
            .sum();
        Ok(s / (n * n))
    }
}

/// trace / total
pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.nonempty_total()?;
    Ok(cm.trace() as f64 / n)
}

/// Mean per-class recall.
pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.classes == 0 {
        return Err(Error::Metric("confusion matrix has no classes".into()));
    }
    let mut sum = 0.0;
    for k in 0..cm.classes {
        let support = cm.row_sum(k);
        if support == 0 {
            return Err(Error::Metric(format!("class {k} has no evaluated samples")));
        }
        sum += cm.get(k, k) as f64 / support as f64;
    }
    Ok(sum / cm.classes as f64)
}

/// `(p_o − p_e)/(1 − p_e)`; 0 when chance agreement is total.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let p_o = overall_accuracy(cm)?;
    let p_e = cm.chance_agreement()?;
    if p_e >= 1.0 {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// OA / AA / κ as fractions in `[0, 1]` (κ in `[−1, 1]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
}

impl Scores {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            oa: overall_accuracy(cm)?,
            aa: average_accuracy(cm)?,
            kappa: cohen_kappa(cm)?,
        })
    }

    /// Percentages rounded to two decimals, as reported in logs.
    pub fn as_percentages(&self) -> Scores {
        let pct = |v: f64| (v * 10_000.0).round() / 100.0;
        Scores {
            oa: pct(self.oa),
            aa: pct(self.aa),
            kappa: pct(self.kappa),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn accumulate_increments_one_cell() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(2, 1).unwrap();
        assert_eq!(cm.get(2, 1), 1);
        assert_eq!(cm.total(), 1);
        for t in 0..3 {
            for p in 0..3 {
                if (t, p) != (2, 1) {
                    assert_eq!(cm.get(t, p), 0);
                }
            }
        }
        assert!(matches!(
            cm.accumulate(3, 0),
            Err(Error::Index { index: 3, len: 3 })
        ));
        assert!(cm.accumulate(0, 7).is_err());
        assert_eq!(cm.total(), 1);
    }

    #[test]
    fn hand_fixture() {
        let cm = ConfusionMatrix::from_counts(&[[5, 5], [0, 10]]).unwrap();
        assert_eq!(overall_accuracy(&cm).unwrap(), 0.75);
        assert_eq!(average_accuracy(&cm).unwrap(), 0.75);
        assert_eq!(cm.chance_agreement().unwrap(), 0.5);
        assert_eq!(cohen_kappa(&cm).unwrap(), 0.5);
    }

    #[test]
    fn identity_and_off_diagonal() {
        let id = ConfusionMatrix::from_counts(&[[4, 0, 0], [0, 2, 0], [0, 0, 9]]).unwrap();
        assert_eq!(
            Scores::from_confusion(&id).unwrap(),
            Scores {
                oa: 1.0,
                aa: 1.0,
                kappa: 1.0
            }
        );
        let off = ConfusionMatrix::from_counts(&[[0, 3, 3], [3, 0, 3], [3, 3, 0]]).unwrap();
        assert_eq!(overall_accuracy(&off).unwrap(), 0.0);
    }

    #[test]
    fn chance_matrix_has_zero_kappa() {
        let cm = ConfusionMatrix::from_counts(&[[25, 25], [25, 25]]).unwrap();
        assert_eq!(overall_accuracy(&cm).unwrap(), 0.5);
        assert_eq!(cohen_kappa(&cm).unwrap(), 0.0);
    }

    #[test]
    fn aa_equals_oa_for_balanced_equal_recall() {
        let cm = ConfusionMatrix::from_counts(&[[8, 2, 0], [1, 8, 1], [0, 2, 8]]).unwrap();
        assert_abs_diff_eq!(
            average_accuracy(&cm).unwrap(),
            overall_accuracy(&cm).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_and_empty() {
        let single = ConfusionMatrix::from_counts(&[[7]]).unwrap();
        assert_eq!(cohen_kappa(&single).unwrap(), 0.0);
        let empty = ConfusionMatrix::new(2);
        assert!(overall_accuracy(&empty).is_err());
        assert!(cohen_kappa(&empty).is_err());
        let missing = ConfusionMatrix::from_counts(&[[3, 0], [0, 0]]).unwrap();
        let err = average_accuracy(&missing).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn percentages_round_to_two_decimals() {
        let s = Scores {
            oa: 0.876_543,
            aa: 0.5,
            kappa: -0.123_456,
        }
        .as_percentages();
        assert_eq!(
            s,
            Scores {
                oa: 87.65,
                aa: 50.0,
                kappa: -12.35
            }
        );
    }

    fn cm_strategy() -> impl Strategy<Value = (usize, Vec<u64>)> {
        (2usize..6).prop_flat_map(|c| (Just(c), proptest::collection::vec(1u64..20, c * c)))
    }

    proptest! {
        #[test]
        #[allow(clippy::needless_range_loop)]
        fn kappa_identity_and_chance_brute_force((c, counts) in cm_strategy()) {
            let rows: Vec<Vec<u64>> = counts.chunks(c).map(|r| r.to_vec()).collect();
            let cm = ConfusionMatrix::from_counts(&rows).unwrap();
            let n = cm.total() as f64;
            let mut brute = 0.0;
            for k in 0..c {
                let mut r = 0u64;
                let mut col = 0u64;
                for j in 0..c {
                    r += rows[k][j];
                    col += rows[j][k];
                }
                brute += r as f64 * col as f64;
            }
            brute /= n * n;
            let p_e = cm.chance_agreement().unwrap();
            prop_assert!((p_e - brute).abs() < 1e-12);
            let oa = overall_accuracy(&cm).unwrap();
            prop_assert_eq!(cohen_kappa(&cm).unwrap(), (oa - p_e) / (1.0 - p_e));
        }

        #[test]
        fn metrics_invariant_under_class_permutation(
            (c, counts) in cm_strategy(), seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut perm: Vec<usize> = (0..c).collect();
            perm.shuffle(&mut crate::rng::seeded(seed));
            let rows: Vec<Vec<u64>> = counts.chunks(c).map(|r| r.to_vec()).collect();
            let mut permuted = vec![vec![0u64; c]; c];
            for t in 0..c {
                for p in 0..c {
                    permuted[perm[t]][perm[p]] = rows[t][p];
                }
            }
            let a = Scores::from_confusion(&ConfusionMatrix::from_counts(&rows).unwrap()).unwrap();
            let b = Scores::from_confusion(&ConfusionMatrix::from_counts(&permuted).unwrap()).unwrap();
            prop_assert!((a.oa - b.oa).abs() < 1e-12);
            prop_assert!((a.aa - b.aa).abs() < 1e-12);
            prop_assert!((a.kappa - b.kappa).abs() < 1e-12);
        }
    }
}
