use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::Scores;

/// One training step, tagged by phase in the JSON-lines log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum StepRecord {
    Agreement(AgreementStep),
    Disagreement(DisagreementStep),
    Ensemble(EnsembleStep),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementStep {
    pub step: usize,
    pub phi_raw: f64,
    pub phi_post: f64,
    /// Threshold in force at this step.
    pub alpha: f64,
    pub mag_sim: f64,
    pub loss_s: f64,
    pub loss_t: f64,
    pub norm_gs: f64,
    pub norm_gt: f64,
    pub surgery: bool,
    pub logitnorm: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zhat_norm_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zhat_norm_t: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisagreementStep {
    pub step: usize,
    pub loss_ce: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_dir: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStep {
    pub step: usize,
    pub loss_ce: f64,
    pub loss_en1: f64,
    pub loss_en2: f64,
}

impl StepRecord {
    pub fn as_agreement(&self) -> Option<&AgreementStep> {
        match self {
            StepRecord::Agreement(a) => Some(a),
            _ => None,
        }
    }
}

/// Metric log: one JSON object per step, then `{oa, aa, kappa}` in percent.
pub fn render_metric_log(records: &[StepRecord], scores: &Scores) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialise"));
        out.push('\n');
    }
    out.push_str(&serde_json::to_string(&scores.as_percentages()).expect("scores serialise"));
    out.push('\n');
    out
}

pub fn write_metric_log(
    path: impl AsRef<Path>,
    records: &[StepRecord],
    scores: &Scores,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(render_metric_log(records, scores).as_bytes())?;
    f.flush()?;
    Ok(())
}
