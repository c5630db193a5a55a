//! Three-phase training loop.
//!
//! Phase A trains the agreement branch (`F_s`, `F_t`, `G`, `T_s`, `T_t`) on
//! paired source/target batches with optional GradVac and LogitNorm. Phase B
//! trains the private target branch against the frozen shared features with
//! the distance-correlation restriction. Phase C distils both branches into
//! the ensemble head on top of the frozen target extractor.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::log::{AgreementStep, DisagreementStep, EnsembleStep, StepRecord};
use crate::agreement::GradState;
use crate::data::{generate_pair, sample_k_per_class, FewShotSplit, SceneDataset};
use crate::disagreement::{dir_loss, ensemble_loss_agree, ensemble_loss_disagree};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Scores};
use crate::model::{BundleDims, ModelBundle, TaskLoss};
use crate::rng::{derived, Rng};
use crate::tensor_net::{adam_step, argmax_rows, norm, softmax_ce, AdamConfig, Matrix};

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_AGREE: u64 = 3;
const STREAM_DISAGREE: u64 = 4;
const STREAM_ENSEMBLE: u64 = 5;

/// Which head produces target predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalHead {
    /// `T_t(G(F_t(x)))`
    Agreement,
    /// `T_en(G_en(F_t(x)))`
    Ensemble,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub bundle: ModelBundle,
    pub head: EvalHead,
}

impl TrainedModel {
    pub fn predict_logits(&self, x: &Matrix) -> Result<Matrix> {
        match self.head {
            EvalHead::Agreement => self.bundle.forward_target_agree(x),
            EvalHead::Ensemble => self.bundle.forward_ensemble(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub records: Vec<StepRecord>,
    /// Target held-out scores as fractions.
    pub scores: Scores,
    pub model: TrainedModel,
}

impl RunReport {
    pub fn agreement_steps(&self) -> impl Iterator<Item = &AgreementStep> {
        self.records.iter().filter_map(StepRecord::as_agreement)
    }

    pub fn metric_log(&self) -> String {
        super::log::render_metric_log(&self.records, &self.scores)
    }
}

/// Scene pair and few-shot split exactly as `train` sees them.
pub fn prepare_data(cfg: &TrainConfig) -> Result<(SceneDataset, FewShotSplit)> {
    let (source, target) = generate_pair(&cfg.synth)?;
    let split = sample_k_per_class(&target, cfg.shots_per_class, split_seed(cfg))?;
    Ok((source, split))
}

fn split_seed(cfg: &TrainConfig) -> u64 {
    derived(cfg.seed, STREAM_SPLIT).random()
}

pub fn train(cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let (source, split) = prepare_data(cfg)?;
    if split.eval.is_empty() {
        return Err(Error::Data(
            "few-shot split left no target samples for evaluation".into(),
        ));
    }
    let dims = BundleDims {
        bands_source: source.bands,
        bands_target: split.train.bands,
        classes_source: source.classes,
        classes_target: split.train.classes,
        arch: cfg.arch(),
    };
    let mut bundle = ModelBundle::new(dims, &mut derived(cfg.seed, STREAM_INIT))?;
    let steps_per_epoch = source.len().div_ceil(cfg.batch_size);

    let mut records = Vec::new();
    run_agreement_phase(cfg, &mut bundle, &source, &split.train, &mut records)?;
    if cfg.use_dir || cfg.use_ensemble {
        let steps = cfg.epochs_disagree * steps_per_epoch;
        run_disagreement_phase(cfg, &mut bundle, &split.train, steps, &mut records)?;
    }
    let head = if cfg.use_ensemble {
        let steps = cfg.epochs_ensemble * steps_per_epoch;
        run_ensemble_phase(cfg, &mut bundle, &split.train, steps, &mut records)?;
        EvalHead::Ensemble
    } else {
        EvalHead::Agreement
    };
    let model = TrainedModel { bundle, head };
    let scores = evaluate(&model, &split.eval)?;
    Ok(RunReport {
        records,
        scores,
        model,
    })
}

/// Argmax predictions on `eval` → OA / AA / κ.
pub fn evaluate(model: &TrainedModel, eval: &SceneDataset) -> Result<Scores> {
    if eval.is_empty() {
        return Err(Error::Data("evaluation split is empty".into()));
    }
    let logits = model.predict_logits(&eval.spectra)?;
    let pred = argmax_rows(&logits);
    let cm = ConfusionMatrix::from_predictions(eval.classes, &eval.labels, &pred)?;
    Scores::from_confusion(&cm)
}

fn resample(rng: &mut Rng, ds: &SceneDataset, n: usize) -> (Matrix, Vec<usize>) {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..ds.len())).collect();
    (
        ds.spectra.select_rows(&idx),
        idx.iter().map(|&i| ds.labels[i]).collect(),
    )
}

fn run_agreement_phase(
    cfg: &TrainConfig,
    bundle: &mut ModelBundle,
    source: &SceneDataset,
    target: &SceneDataset,
    records: &mut Vec<StepRecord>,
) -> Result<()> {
    let mut rng = derived(cfg.seed, STREAM_AGREE);
    let adam = cfg.adam();
    let ln = TaskLoss::LogitNorm(cfg.logitnorm());
    let mut state = GradState::new(cfg.beta)?;
    // Before the first step there is no magnitude similarity; treat the pair
    // as unbalanced with the source (the larger scene) dominating.
    let mut prev_mag_sim = 0.0;
    let mut source_dominates = true;
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut t = 0u64;
    for _epoch in 0..cfg.epochs_agree {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs = source.spectra.select_rows(chunk);
            let ys: Vec<usize> = chunk.iter().map(|&i| source.labels[i]).collect();
            let (xt, yt) = resample(&mut rng, target, cfg.batch_size);

            // LogitNorm bounds the logits of whichever task dominated the
            // shared encoder last step; the other head keeps plain CE.
            let logitnorm = cfg.use_logitnorm && prev_mag_sim < cfg.phi_mag_threshold;
            let ce = TaskLoss::CrossEntropy;
            let (loss_s, loss_t) = match (logitnorm, source_dominates) {
                (false, _) => (&ce, &ce),
                (true, true) => (&ln, &ce),
                (true, false) => (&ce, &ln),
            };
            let grads = bundle.shared_gradients((&xs, &ys), (&xt, &yt), loss_s, loss_t)?;
            let (norm_gs, norm_gt) = (norm(&grads.g_s), norm(&grads.g_t));
            source_dominates = norm_gs >= norm_gt;
            let g_t = grads.g_t.clone();
            let out = state.step(grads.g_s, grads.g_t, cfg.use_gradvac)?;
            prev_mag_sim = out.mag_sim;

            let combined: Vec<f64> = out
                .g_s_applied
                .iter()
                .zip(&g_t)
                .map(|(s, t)| cfg.source_weight * s + cfg.target_weight * t)
                .collect();
            bundle.g.params.set_grads(&combined)?;

            t += 1;
            for m in [
                &mut bundle.f_s,
                &mut bundle.f_t,
                &mut bundle.g,
                &mut bundle.t_s,
                &mut bundle.t_t,
            ] {
                adam_step(&mut m.params, &adam, t);
            }
            records.push(StepRecord::Agreement(AgreementStep {
                step: t as usize,
                phi_raw: out.phi_raw,
                phi_post: out.phi_post,
                alpha: out.alpha,
                mag_sim: out.mag_sim,
                loss_s: grads.loss_s,
                loss_t: grads.loss_t,
                norm_gs,
                norm_gt,
                surgery: out.fired,
                logitnorm,
                zhat_norm_s: grads.zhat_norm_s,
                zhat_norm_t: grads.zhat_norm_t,
            }));
        }
    }
    Ok(())
}

fn run_disagreement_phase(
    cfg: &TrainConfig,
    bundle: &mut ModelBundle,
    target: &SceneDataset,
    steps: usize,
    records: &mut Vec<StepRecord>,
) -> Result<()> {
    let mut rng = derived(cfg.seed, STREAM_DISAGREE);
    let adam: AdamConfig = cfg.adam();
    for t in 1..=steps {
        let (x, y) = resample(&mut rng, target, cfg.batch_size);
        let shared = bundle.shared_target_features(&x)?;
        for m in [&mut bundle.f_t_dis, &mut bundle.g_dis, &mut bundle.t_dis] {
            m.zero_grads();
        }
        let (feat, c_f) = bundle.f_t_dis.forward_cached(&x)?;
        let (private, c_g) = bundle.g_dis.forward_cached(&feat)?;
        let (z, c_h) = bundle.t_dis.forward_cached(&private)?;
        let (loss_ce, grad_z) = softmax_ce(&z, &y)?;
        let mut d_private = bundle.t_dis.backward(&c_h, &grad_z)?;
        let loss_dir = if cfg.use_dir {
            let dir = dir_loss(&shared, &private)?;
            d_private.add_scaled(&dir.grad_private, cfg.dcor_weight)?;
            Some(dir.value)
        } else {
            None
        };
        let d_feat = bundle.g_dis.backward(&c_g, &d_private)?;
        bundle.f_t_dis.backward(&c_f, &d_feat)?;
        for m in [&mut bundle.f_t_dis, &mut bundle.g_dis, &mut bundle.t_dis] {
            adam_step(&mut m.params, &adam, t as u64);
        }
        records.push(StepRecord::Disagreement(DisagreementStep {
            step: t,
            loss_ce,
            loss_dir,
        }));
    }
    Ok(())
}

fn run_ensemble_phase(
    cfg: &TrainConfig,
    bundle: &mut ModelBundle,
    target: &SceneDataset,
    steps: usize,
    records: &mut Vec<StepRecord>,
) -> Result<()> {
    let mut rng = derived(cfg.seed, STREAM_ENSEMBLE);
    let adam = cfg.adam();
    let distill = cfg.distill();
    for t in 1..=steps {
        let (x, y) = resample(&mut rng, target, cfg.batch_size);
        let feats = bundle.target_features(&x)?;
        let teacher_agree = bundle.t_t.forward(&bundle.g.forward(&feats)?)?;
        let (_, teacher_dis) = bundle.forward_target_disagree(&x)?;

        bundle.g_en.zero_grads();
        bundle.t_en.zero_grads();
        let (enc, c_g) = bundle.g_en.forward_cached(&feats)?;
        let (z, c_h) = bundle.t_en.forward_cached(&enc)?;
        let (loss_ce, mut grad_z) = softmax_ce(&z, &y)?;
        let en1 = ensemble_loss_agree(&z, &teacher_agree, distill.temp_agree, distill.t2_scaling)?;
        let en2 =
            ensemble_loss_disagree(&z, &teacher_dis, distill.temp_disagree, distill.t2_scaling)?;
        grad_z.add_scaled(&en1.grad_student, cfg.distill_weight)?;
        grad_z.add_scaled(&en2.grad_student, cfg.distill_weight)?;
        let d_enc = bundle.t_en.backward(&c_h, &grad_z)?;
        bundle.g_en.backward(&c_g, &d_enc)?;
        for m in [&mut bundle.g_en, &mut bundle.t_en] {
            adam_step(&mut m.params, &adam, t as u64);
        }
        records.push(StepRecord::Ensemble(EnsembleStep {
            step: t,
            loss_ce,
            loss_en1: en1.value,
            loss_en2: en2.value,
        }));
    }
    Ok(())
}
