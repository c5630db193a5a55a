use super::matrix::Matrix;
use crate::error::{dim_err, Error, Result};

/// Probability floor applied before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-wise softmax with max subtraction.
pub fn softmax(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `log softmax(row)` computed without forming the probabilities.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn check_labels(probs: &Matrix, labels: &[usize], op: &'static str) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(dim_err(op, probs.rows(), labels.len()));
    }
    if probs.rows() == 0 {
        return Err(Error::SampleCount { needed: 1, got: 0 });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(Error::Index {
            index: bad,
            len: probs.cols(),
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the labelled class.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels, "cross_entropy")?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.get(i, y).max(PROB_FLOOR).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// `(ŷ − onehot(y)) / n`: gradient of the batch-mean cross-entropy w.r.t. logits.
pub fn ce_logit_grad(pred_probs: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_labels(pred_probs, labels, "ce_logit_grad")?;
    let n = labels.len() as f64;
    let mut g = pred_probs.scale(1.0 / n);
    for (i, &y) in labels.iter().enumerate() {
        let v = g.get(i, y);
        g.set(i, y, v - 1.0 / n);
    }
    Ok(g)
}

/// Softmax cross-entropy on raw logits: `(loss, ∂loss/∂z)`.
pub fn softmax_ce(z: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let p = softmax(z);
    Ok((cross_entropy(&p, labels)?, ce_logit_grad(&p, labels)?))
}

pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    m.row_iter().map(argmax).collect()
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_examples() {
        let p = softmax(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap());
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let p = softmax(&Matrix::from_rows(&[[2f64.ln(), 0.0]]).unwrap());
        assert_abs_diff_eq!(p.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.get(0, 1), 1.0 / 3.0, epsilon = 1e-15);

        let p = softmax(&Matrix::from_rows(&[[1000.0, 0.0]]).unwrap());
        assert!(p.is_finite());
        assert_abs_diff_eq!(p.get(0, 0), 1.0, epsilon = 1e-15);
        assert!(p.get(0, 1) < 1e-300);
    }

    #[test]
    fn cross_entropy_examples() {
        let p = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&p, &[0]).unwrap(), 0.0);

        let p = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert_abs_diff_eq!(cross_entropy(&p, &[1]).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let one = Matrix::from_rows(&[[0.2, 0.8]]).unwrap();
        let two = Matrix::from_rows(&[[0.2, 0.8], [0.2, 0.8]]).unwrap();
        assert_abs_diff_eq!(
            cross_entropy(&one, &[0]).unwrap(),
            cross_entropy(&two, &[0, 0]).unwrap(),
            epsilon = 1e-15
        );

        // zero probability is floored instead of producing +inf
        let l = cross_entropy(&Matrix::from_rows(&[[0.0, 1.0]]).unwrap(), &[0]).unwrap();
        assert_abs_diff_eq!(l, -PROB_FLOOR.ln(), epsilon = 1e-9);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let p = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!(matches!(
            cross_entropy(&p, &[2]),
            Err(Error::Index { index: 2, len: 2 })
        ));
        assert!(ce_logit_grad(&p, &[5]).is_err());
    }

    #[test]
    fn ce_logit_grad_examples() {
        let g = ce_logit_grad(&Matrix::from_rows(&[[0.5, 0.5]]).unwrap(), &[0]).unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 0.5]);

        let g = ce_logit_grad(&Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap(), &[1]).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ce_logit_grad_matches_finite_differences() {
        let z = Matrix::from_rows(&[[0.3, -1.2, 0.8], [2.0, 0.1, -0.4]]).unwrap();
        let labels = [2, 0];
        let (_, g) = softmax_ce(&z, &labels).unwrap();
        let h = 1e-5;
        for i in 0..z.as_slice().len() {
            let mut zp = z.clone();
            zp.as_mut_slice()[i] += h;
            let mut zm = z.clone();
            zm.as_mut_slice()[i] -= h;
            let fp = cross_entropy(&softmax(&zp), &labels).unwrap();
            let fm = cross_entropy(&softmax(&zm), &labels).unwrap();
            assert_abs_diff_eq!(g.as_slice()[i], (fp - fm) / (2.0 * h), epsilon = 1e-6);
        }
    }

    #[test]
    fn log_softmax_consistent_with_softmax() {
        let row = [1.5, -0.5, 3.0, 0.0];
        let ls = log_softmax_row(&row);
        let p = softmax(&Matrix::row_vector(&row).unwrap());
        for (a, b) in ls.iter().zip(p.as_slice()) {
            assert_abs_diff_eq!(a.exp(), *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn argmax_picks_first_max() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        assert_eq!(argmax(&[-3.0]), 0);
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_are_distributions(
            rows in proptest::collection::vec(proptest::collection::vec(-300.0f64..300.0, 1..8), 1..6),
        ) {
            let c = rows[0].len();
            let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().cycle().take(c)).copied().collect();
            let p = softmax(&Matrix::from_vec(rows.len(), c, data).unwrap());
            for row in p.row_iter() {
                proptest::prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                proptest::prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
