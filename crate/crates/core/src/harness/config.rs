use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agreement::LogitNormConfig;
use crate::data::SynthConfig;
use crate::disagreement::DistillConfig;
use crate::error::{Error, Result};
use crate::model::ArchConfig;
use crate::tensor_net::AdamConfig;

/// Every knob of a training run. Missing keys take their defaults; unknown
/// keys are rejected when parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    /// Phase lengths in epochs; one epoch is one pass over the source scene.
    pub epochs_agree: usize,
    pub epochs_disagree: usize,
    pub epochs_ensemble: usize,
    /// Labelled target samples per class.
    pub shots_per_class: usize,
    /// EMA rate for the GradVac threshold.
    pub beta: f64,
    /// LogitNorm temperature.
    pub tau: f64,
    pub temp_agree: f64,
    pub temp_disagree: f64,
    /// Multiply each KL term by `T²`. Off by default: at the sharp
    /// disagreement temperature it would all but erase that teacher.
    pub kl_t2_scaling: bool,
    /// LogitNorm is applied while the previous step's magnitude similarity
    /// is below this value; 1.0 keeps it on. It normalises the head of the
    /// task whose encoder gradient was larger on that step.
    pub phi_mag_threshold: f64,
    pub dcor_weight: f64,
    pub distill_weight: f64,
    /// Weights on `g_s'` and `g_t` when combining them on the shared encoder.
    pub source_weight: f64,
    pub target_weight: f64,
    pub use_gradvac: bool,
    pub use_logitnorm: bool,
    pub use_ensemble: bool,
    pub use_dir: bool,
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub enc_dim: usize,
    pub synth: SynthConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        Self {
            seed: 0,
            lr: 5e-4,
            weight_decay: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs_agree: 40,
            epochs_disagree: 20,
            epochs_ensemble: 20,
            shots_per_class: 10,
            beta: 0.1,
            tau: 2.0,
            temp_agree: 1.0,
            temp_disagree: 0.05,
            kl_t2_scaling: false,
            phi_mag_threshold: 1.0,
            dcor_weight: 1.0,
            distill_weight: 1.0,
            source_weight: 1.0,
            target_weight: 1.0,
            use_gradvac: true,
            use_logitnorm: true,
            use_ensemble: true,
            use_dir: true,
            feat_dim: arch.feat_dim,
            hidden_dim: arch.hidden_dim,
            enc_dim: arch.enc_dim,
            synth: SynthConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Same configuration with the four component toggles replaced.
    pub fn with_components(
        &self,
        gradvac: bool,
        logitnorm: bool,
        ensemble: bool,
        dir: bool,
    ) -> Self {
        Self {
            use_gradvac: gradvac,
            use_logitnorm: logitnorm,
            use_ensemble: ensemble,
            use_dir: dir,
            ..self.clone()
        }
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            feat_dim: self.feat_dim,
            hidden_dim: self.hidden_dim,
            enc_dim: self.enc_dim,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn logitnorm(&self) -> LogitNormConfig {
        LogitNormConfig {
            tau: self.tau,
            epsilon: crate::agreement::NORM_EPS,
        }
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            temp_agree: self.temp_agree,
            temp_disagree: self.temp_disagree,
            t2_scaling: self.kl_t2_scaling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("adam_eps", self.adam_eps),
            ("tau", self.tau),
            ("temp_agree", self.temp_agree),
            ("temp_disagree", self.temp_disagree),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("weight_decay", self.weight_decay),
            ("dcor_weight", self.dcor_weight),
            ("distill_weight", self.distill_weight),
            ("source_weight", self.source_weight),
            ("target_weight", self.target_weight),
            ("phi_mag_threshold", self.phi_mag_threshold),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config(format!(
                "beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.use_dir && self.batch_size < 2 {
            return Err(Error::Config(
                "distance correlation needs batch_size >= 2".into(),
            ));
        }
        if self.shots_per_class == 0 {
            return Err(Error::Config("shots_per_class must be >= 1".into()));
        }
        if self.shots_per_class > self.synth.samples_per_class_target {
            return Err(Error::Config(format!(
                "shots_per_class ({}) exceeds samples_per_class_target ({})",
                self.shots_per_class, self.synth.samples_per_class_target
            )));
        }
        self.arch().validate()?;
        self.synth.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_experimental_setup() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.weight_decay, c.batch_size), (5e-4, 5e-3, 64));
        assert_eq!(
            (c.beta, c.tau, c.temp_agree, c.temp_disagree),
            (0.1, 2.0, 1.0, 0.05)
        );
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
        assert_eq!(c.shots_per_class, 10);
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_configs() {
        let c = TrainConfig::default();
        assert_eq!(TrainConfig::from_json(&c.to_json_pretty()).unwrap(), c);
        let partial =
            TrainConfig::from_json(r#"{"seed": 9, "synth": {"noise_sigma": 0.2}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.synth.noise_sigma, 0.2);
        assert_eq!(partial.synth.bands_source, 48);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            TrainConfig::from_json(r#"{"tua": 2.0}"#),
            Err(Error::Json(_))
        ));
        assert!(TrainConfig::from_json(r#"{"synth": {"nosie_sigma": 0.1}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        for json in [
            r#"{"tau": 0}"#,
            r#"{"temp_disagree": -1}"#,
            r#"{"batch_size": 0}"#,
            r#"{"beta": 0}"#,
            r#"{"lr": -0.1}"#,
            r#"{"shots_per_class": 61}"#,
            r#"{"feat_dim": 0}"#,
        ] {
            assert!(
                matches!(TrainConfig::from_json(json), Err(Error::Config(_))),
                "{json}"
            );
        }
    }
}
