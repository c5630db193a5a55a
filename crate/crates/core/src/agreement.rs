//! Agreement mechanism for the shared encoder.
//!
//! GradVac nudges the source gradient towards the target gradient whenever
//! their cosine similarity drops below an EMA-tracked target, and LogitNorm
//! fixes the logit norm at `1/τ` so neither task can dominate the shared
//! update through ever-growing logits.

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor_net::{dot, norm, softmax_in_place, Matrix, PROB_FLOOR};

/// Norm floor used throughout this module.
pub const NORM_EPS: f64 = 1e-12;

/// Bound on |α| so that `√(1−α²)` stays well conditioned.
pub const ALPHA_BOUND: f64 = 1.0 - 1e-6;

fn check_len(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_err(op, a.len(), b.len()));
    }
    Ok(())
}

/// `g_s·g_t / (‖g_s‖‖g_t‖)`, or 0 when either norm is below [`NORM_EPS`].
pub fn cosine_similarity(g_s: &[f64], g_t: &[f64]) -> Result<f64> {
    check_len("cosine_similarity", g_s, g_t)?;
    let (ns, nt) = (norm(g_s), norm(g_t));
    if ns < NORM_EPS || nt < NORM_EPS {
        return Ok(0.0);
    }
    Ok((dot(g_s, g_t) / (ns * nt)).clamp(-1.0, 1.0))
}

pub fn clamp_alpha(alpha: f64) -> f64 {
    alpha.clamp(-ALPHA_BOUND, ALPHA_BOUND)
}

/// Scale applied to `g_t` so that `g_s + η·g_t` has cosine `target` with `g_t`.
///
/// Law-of-sines construction: with φ the current cosine,
/// `η = ‖g_s‖(φᵀ√(1−φ²) − φ√(1−φᵀ²)) / (‖g_t‖√(1−φᵀ²))`.
pub fn gradvac_coefficient(norm_s: f64, norm_t: f64, phi: f64, target: f64) -> f64 {
    let phi = phi.clamp(-1.0, 1.0);
    let s_phi = (1.0 - phi * phi).max(0.0).sqrt();
    let s_tgt = (1.0 - target * target).sqrt();
    norm_s * (target * s_phi - phi * s_tgt) / (norm_t * s_tgt)
}

/// GradVac update of the source gradient.
///
/// Only fires when `phi < alpha`; otherwise, or when `g_t` has no usable
/// direction, `g_s` comes back unchanged. `alpha` is clamped to
/// ±[`ALPHA_BOUND`] and used as the alignment target.
pub fn gradvac_update(g_s: &[f64], g_t: &[f64], phi: f64, alpha: f64) -> Result<Vec<f64>> {
    check_len("gradvac_update", g_s, g_t)?;
    let alpha = clamp_alpha(alpha);
    let nt = norm(g_t);
    if phi >= alpha || nt < NORM_EPS {
        return Ok(g_s.to_vec());
    }
    let eta = gradvac_coefficient(norm(g_s), nt, phi, alpha);
    Ok(g_s.iter().zip(g_t).map(|(s, t)| s + eta * t).collect())
}

/// `(1−β)·α_prev + β·φ_prev`, clamped to ±[`ALPHA_BOUND`].
pub fn ema_update(alpha_prev: f64, phi_prev: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!(
            "EMA rate beta must lie in (0, 1], got {beta}"
        )));
    }
    Ok(clamp_alpha((1.0 - beta) * alpha_prev + beta * phi_prev))
}

/// `2‖g_s‖‖g_t‖ / (‖g_s‖² + ‖g_t‖²)`; 0 when both norms vanish.
pub fn magnitude_similarity(g_s: &[f64], g_t: &[f64]) -> Result<f64> {
    check_len("magnitude_similarity", g_s, g_t)?;
    let (ns, nt) = (norm(g_s), norm(g_t));
    if ns < NORM_EPS && nt < NORM_EPS {
        return Ok(0.0);
    }
    Ok(2.0 * ns * nt / (ns * ns + nt * nt))
}

/// Per-run GradVac state: the latest gradients, the EMA target α and its rate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradState {
    pub g_s: Vec<f64>,
    pub g_t: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub step: u64,
}

/// What one [`GradState::step`] did.
#[derive(Clone, Debug, PartialEq)]
pub struct SurgeryOutcome {
    /// Source gradient to apply (surgery result, or the raw gradient).
    pub g_s_applied: Vec<f64>,
    pub phi_raw: f64,
    pub phi_post: f64,
    /// Threshold used at this step (before the EMA update).
    pub alpha: f64,
    pub mag_sim: f64,
    pub fired: bool,
}

impl GradState {
    /// Fresh state with `α⁽⁰⁾ = 0`.
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::Config(format!(
                "EMA rate beta must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self {
            g_s: Vec::new(),
            g_t: Vec::new(),
            alpha: 0.0,
            beta,
            step: 0,
        })
    }

    /// Records a gradient pair, applies surgery against the current α when
    /// `surgery` is enabled and the guard fires, then advances α with the
    /// raw similarity of this step.
    pub fn step(&mut self, g_s: Vec<f64>, g_t: Vec<f64>, surgery: bool) -> Result<SurgeryOutcome> {
        check_len("GradState::step", &g_s, &g_t)?;
        let phi_raw = cosine_similarity(&g_s, &g_t)?;
        let mag_sim = magnitude_similarity(&g_s, &g_t)?;
        let alpha = self.alpha;
        let fired = surgery && phi_raw < alpha && norm(&g_t) >= NORM_EPS;
        let g_s_applied = if fired {
            gradvac_update(&g_s, &g_t, phi_raw, alpha)?
        } else {
            g_s.clone()
        };
        let phi_post = if fired {
            cosine_similarity(&g_s_applied, &g_t)?
        } else {
            phi_raw
        };
        self.alpha = ema_update(alpha, phi_raw, self.beta)?;
        self.g_s = g_s;
        self.g_t = g_t;
        self.step += 1;
        Ok(SurgeryOutcome {
            g_s_applied,
            phi_raw,
            phi_post,
            alpha,
            mag_sim,
            fired,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogitNormConfig {
    pub tau: f64,
    pub epsilon: f64,
}

impl LogitNormConfig {
    pub fn new(tau: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            epsilon: NORM_EPS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!(
                "LogitNorm tau must be > 0, got {}",
                self.tau
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::Config(format!(
                "LogitNorm epsilon must lie in (0, 1e-6], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// `z / (τ·max(‖z‖, ε))`.
pub fn logitnorm(z: &[f64], cfg: &LogitNormConfig) -> Vec<f64> {
    let denom = cfg.tau * norm(z).max(cfg.epsilon);
    z.iter().map(|v| v / denom).collect()
}

/// Result of [`logitnorm_ce`].
#[derive(Clone, Debug)]
pub struct LogitNormLoss {
    pub loss: f64,
    /// Exact gradient w.r.t. the raw logits.
    pub grad: Matrix,
    /// Mean `‖ẑ‖` over rows whose raw norm clears ε.
    pub mean_normalized_norm: f64,
}

/// Batch-mean cross-entropy on LogitNorm-normalised logits, with the exact
/// gradient through the normalisation.
///
/// For a row with `‖z‖ ≥ ε` the normalisation Jacobian is
/// `J = (I − τ²ẑẑᵀ)/(τ‖z‖)`, which is symmetric, so the row gradient is
/// `(u − τ²ẑ(ẑ·u)) / (τ‖z‖)` with `u = (softmax(ẑ) − y)/n`. Below the floor
/// the map is linear and `J = I/(τε)`.
pub fn logitnorm_ce(z: &Matrix, labels: &[usize], cfg: &LogitNormConfig) -> Result<LogitNormLoss> {
    let (n, c) = z.shape();
    if labels.len() != n {
        return Err(dim_err("logitnorm_ce", n, labels.len()));
    }
    if n == 0 {
        return Err(Error::SampleCount { needed: 1, got: 0 });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index { index: bad, len: c });
    }
    let inv_n = 1.0 / n as f64;
    let tau2 = cfg.tau * cfg.tau;
    let mut grad = Matrix::zeros(n, c);
    let mut loss = 0.0;
    let mut norm_sum = 0.0;
    let mut norm_count = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = z.row(i);
        let raw_norm = norm(row);
        let zhat = logitnorm(row, cfg);
        let mut p = zhat.clone();
        softmax_in_place(&mut p);
        loss -= p[y].max(PROB_FLOOR).ln();

        let mut u: Vec<f64> = p.iter().map(|v| v * inv_n).collect();
        u[y] -= inv_n;
        let g = grad.row_mut(i);
        if raw_norm >= cfg.epsilon {
            norm_sum += norm(&zhat);
            norm_count += 1;
            let proj = dot(&zhat, &u);
            let scale = 1.0 / (cfg.tau * raw_norm);
            for k in 0..c {
                g[k] = (u[k] - tau2 * zhat[k] * proj) * scale;
            }
        } else {
            let scale = 1.0 / (cfg.tau * cfg.epsilon);
            for k in 0..c {
                g[k] = u[k] * scale;
            }
        }
    }
    let mean_normalized_norm = if norm_count > 0 {
        norm_sum / norm_count as f64
    } else {
        0.0
    };
    Ok(LogitNormLoss {
        loss: loss * inv_n,
        grad,
        mean_normalized_norm,
    })
}
