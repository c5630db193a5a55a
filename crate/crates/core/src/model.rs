//! Network components and per-task shared-encoder gradients.
//!
//! Agreement branch: `T_s(G(F_s(x)))` and `T_t(G(F_t(x)))` share the encoder
//! `G`. Disagreement branch: `T'_t(G'(F'_t(x)))`, fully separate. Ensemble
//! branch: `T_en(G_en(F_t(x)))`, reusing the agreement target extractor.

use serde::{Deserialize, Serialize};

use crate::agreement::{logitnorm_ce, LogitNormConfig};
use crate::error::{dim_err, Error, Result};
use crate::rng::Rng;
use crate::tensor_net::{softmax_ce, Matrix, Mlp, ParamSet};

/// Widths of the extractor/encoder MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Extractor output `d` (input of every encoder).
    pub feat_dim: usize,
    /// Hidden width of extractors and encoders.
    pub hidden_dim: usize,
    /// Encoder output `h` (input of every head).
    pub enc_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            feat_dim: 32,
            hidden_dim: 64,
            enc_dim: 32,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 || self.hidden_dim == 0 || self.enc_dim == 0 {
            return Err(Error::Config(format!(
                "architecture dims must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Input/output sizes that depend on the scene pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleDims {
    pub bands_source: usize,
    pub bands_target: usize,
    pub classes_source: usize,
    pub classes_target: usize,
    pub arch: ArchConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub dims: BundleDims,
    pub f_s: Mlp,
    pub f_t: Mlp,
    pub g: Mlp,
    pub t_s: Mlp,
    pub t_t: Mlp,
    pub f_t_dis: Mlp,
    pub g_dis: Mlp,
    pub t_dis: Mlp,
    pub g_en: Mlp,
    pub t_en: Mlp,
}

/// Names in checkpoint order.
pub const COMPONENT_NAMES: [&str; 10] = [
    "f_s", "f_t", "g", "t_s", "t_t", "f_t_dis", "g_dis", "t_dis", "g_en", "t_en",
];

impl ModelBundle {
    pub fn new(dims: BundleDims, rng: &mut Rng) -> Result<Self> {
        dims.arch.validate()?;
        if dims.bands_source == 0 || dims.bands_target == 0 {
            return Err(Error::Config("band counts must be >= 1".into()));
        }
        if dims.classes_source < 2 || dims.classes_target < 2 {
            return Err(Error::Config("each scene needs at least 2 classes".into()));
        }
        let a = dims.arch;
        let extractor = |name: &str, bands: usize, rng: &mut Rng| {
            Mlp::new(name, &[bands, a.hidden_dim, a.feat_dim], rng)
        };
        let encoder =
            |name: &str, rng: &mut Rng| Mlp::new(name, &[a.feat_dim, a.hidden_dim, a.enc_dim], rng);
        let head =
            |name: &str, classes: usize, rng: &mut Rng| Mlp::new(name, &[a.enc_dim, classes], rng);
        Ok(Self {
            dims,
            f_s: extractor("f_s", dims.bands_source, rng),
            f_t: extractor("f_t", dims.bands_target, rng),
            g: encoder("g", rng),
            t_s: head("t_s", dims.classes_source, rng),
            t_t: head("t_t", dims.classes_target, rng),
            f_t_dis: extractor("f_t_dis", dims.bands_target, rng),
            g_dis: encoder("g_dis", rng),
            t_dis: head("t_dis", dims.classes_target, rng),
            g_en: encoder("g_en", rng),
            t_en: head("t_en", dims.classes_target, rng),
        })
    }

    pub fn components(&self) -> [(&'static str, &Mlp); 10] {
        [
            ("f_s", &self.f_s),
            ("f_t", &self.f_t),
            ("g", &self.g),
            ("t_s", &self.t_s),
            ("t_t", &self.t_t),
            ("f_t_dis", &self.f_t_dis),
            ("g_dis", &self.g_dis),
            ("t_dis", &self.t_dis),
            ("g_en", &self.g_en),
            ("t_en", &self.t_en),
        ]
    }

    pub fn components_mut(&mut self) -> [(&'static str, &mut Mlp); 10] {
        [
            ("f_s", &mut self.f_s),
            ("f_t", &mut self.f_t),
            ("g", &mut self.g),
            ("t_s", &mut self.t_s),
            ("t_t", &mut self.t_t),
            ("f_t_dis", &mut self.f_t_dis),
            ("g_dis", &mut self.g_dis),
            ("t_dis", &mut self.t_dis),
            ("g_en", &mut self.g_en),
            ("t_en", &mut self.t_en),
        ]
    }

    pub fn agreement_params(&self) -> [&ParamSet; 5] {
        [
            &self.f_s.params,
            &self.f_t.params,
            &self.g.params,
            &self.t_s.params,
            &self.t_t.params,
        ]
    }

    pub fn disagreement_params(&self) -> [&ParamSet; 3] {
        [&self.f_t_dis.params, &self.g_dis.params, &self.t_dis.params]
    }

    pub fn ensemble_params(&self) -> [&ParamSet; 2] {
        [&self.g_en.params, &self.t_en.params]
    }

    fn check_bands(x: &Matrix, bands: usize, op: &'static str) -> Result<()> {
        if x.cols() != bands {
            return Err(dim_err(
                op,
                format!("{bands} bands"),
                format!("{} bands", x.cols()),
            ));
        }
        Ok(())
    }

    /// `T_s(G(F_s(x)))`
    pub fn forward_source(&self, x_s: &Matrix) -> Result<Matrix> {
        Self::check_bands(x_s, self.dims.bands_source, "forward_source")?;
        self.t_s.forward(&self.g.forward(&self.f_s.forward(x_s)?)?)
    }

    /// `F_t(x)`
    pub fn target_features(&self, x_t: &Matrix) -> Result<Matrix> {
        Self::check_bands(x_t, self.dims.bands_target, "target_features")?;
        self.f_t.forward(x_t)
    }

    /// `G(F_t(x))`: the shared representation of target samples.
    pub fn shared_target_features(&self, x_t: &Matrix) -> Result<Matrix> {
        self.g.forward(&self.target_features(x_t)?)
    }

    /// `T_t(G(F_t(x)))`, pre-normalisation logits.
    pub fn forward_target_agree(&self, x_t: &Matrix) -> Result<Matrix> {
        self.t_t.forward(&self.shared_target_features(x_t)?)
    }

    /// `(G'(F'_t(x)), T'_t(G'(F'_t(x))))`
    pub fn forward_target_disagree(&self, x_t: &Matrix) -> Result<(Matrix, Matrix)> {
        Self::check_bands(x_t, self.dims.bands_target, "forward_target_disagree")?;
        let feats = self.g_dis.forward(&self.f_t_dis.forward(x_t)?)?;
        let logits = self.t_dis.forward(&feats)?;
        Ok((feats, logits))
    }

    /// `T_en(G_en(F_t(x)))`
    pub fn forward_ensemble(&self, x_t: &Matrix) -> Result<Matrix> {
        self.t_en
            .forward(&self.g_en.forward(&self.target_features(x_t)?)?)
    }

    pub fn zero_agreement_grads(&mut self) {
        for m in [
            &mut self.f_s,
            &mut self.f_t,
            &mut self.g,
            &mut self.t_s,
            &mut self.t_t,
        ] {
            m.zero_grads();
        }
    }

    /// Per-task gradients of the shared encoder `G`.
    ///
    /// Zeroes and then fills the gradient buffers of `F_s`, `T_s` (source loss)
    /// and `F_t`, `T_t` (target loss). `G`'s buffers are left holding the
    /// plain sum `g_s + g_t`; callers applying surgery overwrite them.
    pub fn shared_gradients(
        &mut self,
        source: (&Matrix, &[usize]),
        target: (&Matrix, &[usize]),
        loss_s: &TaskLoss,
        loss_t: &TaskLoss,
    ) -> Result<SharedGradients> {
        if source.0.rows() == 0 || target.0.rows() == 0 {
            return Err(Error::Data(
                "shared_gradients needs non-empty source and target batches".into(),
            ));
        }
        Self::check_bands(source.0, self.dims.bands_source, "shared_gradients")?;
        Self::check_bands(target.0, self.dims.bands_target, "shared_gradients")?;
        self.zero_agreement_grads();

        let src = self.task_backward(TaskSide::Source, source, loss_s)?;
        let g_s = self.g.params.flatten_grads();
        self.g.zero_grads();
        let tgt = self.task_backward(TaskSide::Target, target, loss_t)?;
        let g_t = self.g.params.flatten_grads();

        let sum: Vec<f64> = g_s.iter().zip(&g_t).map(|(a, b)| a + b).collect();
        self.g.params.set_grads(&sum)?;
        Ok(SharedGradients {
            g_s,
            g_t,
            loss_s: src.loss,
            loss_t: tgt.loss,
            zhat_norm_s: src.normalized_norm,
            zhat_norm_t: tgt.normalized_norm,
        })
    }

    fn task_backward(
        &mut self,
        side: TaskSide,
        batch: (&Matrix, &[usize]),
        loss: &TaskLoss,
    ) -> Result<TaskEval> {
        let (extractor, head) = match side {
            TaskSide::Source => (&mut self.f_s, &mut self.t_s),
            TaskSide::Target => (&mut self.f_t, &mut self.t_t),
        };
        let (feat, c_f) = extractor.forward_cached(batch.0)?;
        let (enc, c_g) = self.g.forward_cached(&feat)?;
        let (z, c_h) = head.forward_cached(&enc)?;
        let eval = loss.evaluate(&z, batch.1)?;
        let d_enc = head.backward(&c_h, &eval.grad)?;
        let d_feat = self.g.backward(&c_g, &d_enc)?;
        extractor.backward(&c_f, &d_feat)?;
        Ok(eval)
    }
}

#[derive(Clone, Copy)]
enum TaskSide {
    Source,
    Target,
}

/// Task loss used on the agreement heads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskLoss {
    CrossEntropy,
    LogitNorm(LogitNormConfig),
}

/// Loss value, logit gradient and (for LogitNorm) the mean `‖ẑ‖`.
#[derive(Clone, Debug)]
pub struct TaskEval {
    pub loss: f64,
    pub grad: Matrix,
    pub normalized_norm: Option<f64>,
}

impl TaskLoss {
    pub fn evaluate(&self, z: &Matrix, labels: &[usize]) -> Result<TaskEval> {
        match self {
            TaskLoss::CrossEntropy => {
                let (loss, grad) = softmax_ce(z, labels)?;
                Ok(TaskEval {
                    loss,
                    grad,
                    normalized_norm: None,
                })
            }
            TaskLoss::LogitNorm(cfg) => {
                let out = logitnorm_ce(z, labels, cfg)?;
                Ok(TaskEval {
                    loss: out.loss,
                    grad: out.grad,
                    normalized_norm: Some(out.mean_normalized_norm),
                })
            }
        }
    }
}

/// Output of [`ModelBundle::shared_gradients`].
#[derive(Clone, Debug)]
pub struct SharedGradients {
    pub g_s: Vec<f64>,
    pub g_t: Vec<f64>,
    pub loss_s: f64,
    pub loss_t: f64,
    pub zhat_norm_s: Option<f64>,
    pub zhat_norm_t: Option<f64>,
}
