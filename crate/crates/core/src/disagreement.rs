//! Disagreement mechanism.
//!
//! A private target branch is pushed away from the shared branch by
//! penalising the sample distance correlation of their features, and an
//! ensemble head is distilled from both branches with symmetric KL.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor_net::{log_softmax_row, Matrix};

/// dVar below this means a constant batch: no dependence to measure.
pub const DVAR_FLOOR: f64 = 1e-15;

/// Added under the square root of every pairwise distance in [`dir_loss`].
pub const DISTANCE_SMOOTHING: f64 = 1e-12;

fn check_batch(x: &Matrix) -> Result<()> {
    if x.rows() < 2 {
        return Err(Error::SampleCount {
            needed: 2,
            got: x.rows(),
        });
    }
    Ok(())
}

fn check_pair(x: &Matrix, y: &Matrix) -> Result<()> {
    check_batch(x)?;
    check_batch(y)?;
    if x.rows() != y.rows() {
        return Err(Error::SampleCount {
            needed: x.rows(),
            got: y.rows(),
        });
    }
    Ok(())
}

fn distances_with(x: &Matrix, smoothing: f64) -> Matrix {
    let n = x.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        let xi = x.row(i);
        if smoothing > 0.0 {
            d.set(i, i, smoothing.sqrt());
        }
        for j in i + 1..n {
            let sq: f64 = xi
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = (sq + smoothing).sqrt();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Euclidean distance between every pair of rows.
pub fn pairwise_distances(x: &Matrix) -> Result<Matrix> {
    check_batch(x)?;
    Ok(distances_with(x, 0.0))
}

/// `A[i][j] = D[i][j] − rowmean_i − colmean_j + grandmean`.
pub fn double_center(d: &Matrix) -> Result<Matrix> {
    let n = d.rows();
    if d.cols() != n {
        return Err(dim_err(
            "double_center",
            format!("{n}×{n}"),
            format!("{n}×{}", d.cols()),
        ));
    }
    let inv = 1.0 / n as f64;
    let row_means: Vec<f64> = d.row_iter().map(|r| r.iter().sum::<f64>() * inv).collect();
    let col_means: Vec<f64> = d.col_sums().into_iter().map(|s| s * inv).collect();
    let grand = row_means.iter().sum::<f64>() * inv;
    let mut a = d.clone();
    for (i, row_mean) in row_means.iter().enumerate() {
        for (v, col_mean) in a.row_mut(i).iter_mut().zip(&col_means) {
            *v += grand - row_mean - col_mean;
        }
    }
    Ok(a)
}

fn mean_product(a: &Matrix, b: &Matrix) -> f64 {
    let n = a.rows() as f64;
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum::<f64>()
        / (n * n)
}

/// Sample (biased, V-statistic) distance correlation in `[0, 1]`.
///
/// `dCov² = mean(A∘B)`, `dVar² = mean(A∘A)`, `dCor = dCov / √(dVarX·dVarY)`.
pub fn distance_correlation(x: &Matrix, y: &Matrix) -> Result<f64> {
    check_pair(x, y)?;
    let a = double_center(&distances_with(x, 0.0))?;
    let b = double_center(&distances_with(y, 0.0))?;
    Ok(dcor_from_centered(&a, &b).dcor)
}

struct DcorParts {
    dcor: f64,
    v_xx: f64,
    v_yy: f64,
}

fn dcor_from_centered(a: &Matrix, b: &Matrix) -> DcorParts {
    let v_xy = mean_product(a, b).max(0.0);
    let v_xx = mean_product(a, a);
    let v_yy = mean_product(b, b);
    let dcor = if v_xx.sqrt() < DVAR_FLOOR || v_yy.sqrt() < DVAR_FLOOR {
        0.0
    } else {
        (v_xy / (v_xx * v_yy).sqrt()).sqrt().min(1.0)
    };
    DcorParts { dcor, v_xx, v_yy }
}

/// Distance-correlation penalty and its gradient w.r.t. both batches.
#[derive(Clone, Debug)]
pub struct DirLoss {
    pub value: f64,
    pub grad_shared: Matrix,
    pub grad_private: Matrix,
}

/// Disagreement restriction: dCor between shared and private features.
///
/// Pairwise distances are smoothed to `√(d² + 1e-12)` so the loss is
/// differentiable at coincident samples; the value therefore differs from
/// [`distance_correlation`] only at the ~1e-6 level.
pub fn dir_loss(shared: &Matrix, private: &Matrix) -> Result<DirLoss> {
    check_pair(shared, private)?;
    let n = shared.rows();
    let da = distances_with(shared, DISTANCE_SMOOTHING);
    let db = distances_with(private, DISTANCE_SMOOTHING);
    let a = double_center(&da)?;
    let b = double_center(&db)?;
    let parts = dcor_from_centered(&a, &b);

    let mut grad_shared = Matrix::zeros(n, shared.cols());
    let mut grad_private = Matrix::zeros(n, private.cols());
    if parts.dcor > 0.0 {
        // dCor = √R, R = V_xy / √(V_xx V_yy). Because centering is a
        // projection, ∂V_xy/∂a_ij = B_ij/n² and ∂V_xx/∂a_ij = 2A_ij/n².
        let n2 = (n * n) as f64;
        let root = (parts.v_xx * parts.v_yy).sqrt();
        let r = parts.dcor * parts.dcor;
        let half_inv = 0.5 / parts.dcor;
        let coeff_a = |i: usize, j: usize| {
            half_inv * (b.get(i, j) / (n2 * root) - r * a.get(i, j) / (n2 * parts.v_xx))
        };
        let coeff_b = |i: usize, j: usize| {
            half_inv * (a.get(i, j) / (n2 * root) - r * b.get(i, j) / (n2 * parts.v_yy))
        };
        scatter_distance_grad(shared, &da, coeff_a, &mut grad_shared);
        scatter_distance_grad(private, &db, coeff_b, &mut grad_private);
    }
    Ok(DirLoss {
        value: parts.dcor,
        grad_shared,
        grad_private,
    })
}

/// Chain rule through `a_ij = √(‖x_i − x_j‖² + δ)`; `coeff` is `∂L/∂a_ij`
/// (symmetric), so each unordered pair contributes twice.
fn scatter_distance_grad(
    x: &Matrix,
    dist: &Matrix,
    coeff: impl Fn(usize, usize) -> f64,
    out: &mut Matrix,
) {
    let n = x.rows();
    let d = x.cols();
    for i in 0..n {
        for j in i + 1..n {
            let w = 2.0 * coeff(i, j) / dist.get(i, j);
            for k in 0..d {
                let diff = w * (x.get(i, k) - x.get(j, k));
                out.row_mut(i)[k] += diff;
                out.row_mut(j)[k] -= diff;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub temp_agree: f64,
    pub temp_disagree: f64,
    /// Multiply KL terms by `T²` so gradient scale does not depend on `T`.
    pub t2_scaling: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temp_agree: 1.0,
            temp_disagree: 0.05,
            t2_scaling: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("temp_agree", self.temp_agree),
            ("temp_disagree", self.temp_disagree),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {t}")));
            }
        }
        Ok(())
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Config(format!(
            "distillation temperature must be > 0, got {t}"
        )));
    }
    Ok(())
}

fn kl_from_logs(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}

fn tempered_log_softmax(logits: &[f64], t: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|v| v / t).collect();
    log_softmax_row(&scaled)
}

/// `T²·KL(softmax(p/T) ‖ softmax(q/T))`.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64], t: f64) -> Result<f64> {
    kl_divergence_scaled(p_logits, q_logits, t, true)
}

pub fn kl_divergence_scaled(
    p_logits: &[f64],
    q_logits: &[f64],
    t: f64,
    t2_scaling: bool,
) -> Result<f64> {
    check_temperature(t)?;
    if p_logits.len() != q_logits.len() {
        return Err(dim_err("kl_divergence", p_logits.len(), q_logits.len()));
    }
    if p_logits.len() < 2 {
        return Err(dim_err("kl_divergence", ">= 2 classes", p_logits.len()));
    }
    let kl = kl_from_logs(
        &tempered_log_softmax(p_logits, t),
        &tempered_log_softmax(q_logits, t),
    );
    Ok(if t2_scaling { kl * t * t } else { kl })
}

/// Batch-mean symmetric KL between a student and a gradient-stopped teacher.
#[derive(Clone, Debug)]
pub struct DistillLoss {
    pub value: f64,
    /// Gradient w.r.t. the student logits only.
    pub grad_student: Matrix,
}

/// `mean_i [KL(s_i‖t_i) + KL(t_i‖s_i)]` at temperature `T`.
///
/// With `u = s/T`, `p = softmax(u)`, `q = softmax(t/T)`:
/// `∂KL(p‖q)/∂u = p∘(log p − log q − KL(p‖q))` and `∂KL(q‖p)/∂u = p − q`.
pub fn symmetric_kl(
    student: &Matrix,
    teacher: &Matrix,
    t: f64,
    t2_scaling: bool,
) -> Result<DistillLoss> {
    check_temperature(t)?;
    if student.shape() != teacher.shape() {
        return Err(dim_err(
            "symmetric_kl",
            format!("{:?}", teacher.shape()),
            format!("{:?}", student.shape()),
        ));
    }
    let (n, c) = student.shape();
    if n == 0 {
        return Err(Error::SampleCount { needed: 1, got: 0 });
    }
    let scale = if t2_scaling { t * t } else { 1.0 };
    let inv_n = 1.0 / n as f64;
    let mut grad_student = Matrix::zeros(n, c);
    let mut total = 0.0;
    for i in 0..n {
        let log_p = tempered_log_softmax(student.row(i), t);
        let log_q = tempered_log_softmax(teacher.row(i), t);
        let kl_pq = kl_from_logs(&log_p, &log_q);
        let kl_qp = kl_from_logs(&log_q, &log_p);
        total += kl_pq + kl_qp;
        let g = grad_student.row_mut(i);
        for k in 0..c {
            let p = log_p[k].exp();
            let q = log_q[k].exp();
            let du = p * (log_p[k] - log_q[k] - kl_pq) + (p - q);
            g[k] = du / t * scale * inv_n;
        }
    }
    Ok(DistillLoss {
        value: total * scale * inv_n,
        grad_student,
    })
}

/// `E_en1`: ensemble against the agreement teacher.
pub fn ensemble_loss_agree(
    ens_logits: &Matrix,
    agree_logits: &Matrix,
    t: f64,
    t2_scaling: bool,
) -> Result<DistillLoss> {
    symmetric_kl(ens_logits, agree_logits, t, t2_scaling)
}

/// `E_en2`: ensemble against the disagreement teacher.
pub fn ensemble_loss_disagree(
    ens_logits: &Matrix,
    disagree_logits: &Matrix,
    t: f64,
    t2_scaling: bool,
) -> Result<DistillLoss> {
    symmetric_kl(ens_logits, disagree_logits, t, t2_scaling)
}

/// `E_en = E_en1 + E_en2`.
pub fn ensemble_total(e_en1: f64, e_en2: f64) -> f64 {
    e_en1 + e_en2
}
