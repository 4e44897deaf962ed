use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{Metric, VoteConfig};
use crate::noise::NoiseSpec;
use crate::trainer::{LossConfig, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    IterKnn,
    #[default]
    SelKnn,
}

/// Which training labels back test-time deep-KNN prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepKnnReference {
    /// Every training sample with its corrected label.
    #[default]
    Corrected,
    /// Only the SelKNN reference subset of the last correction.
    CleanSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub hidden_sizes: Vec<usize>,
    /// Layer whose activations are the embedding; defaults to the last hidden layer.
    pub embedding_layer: Option<usize>,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self { hidden_sizes: vec![64], embedding_layer: None }
    }
}

impl ClassifierSpec {
    pub fn layer_sizes(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(num_classes);
        sizes
    }
}

/// Loss settings as configured; the hybrid weight comes from the episode schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSpec {
    pub kind: crate::trainer::LossKind,
    pub sl_alpha: f64,
    pub sl_beta: f64,
    pub rce_clip_a: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        let d = LossConfig::default();
        Self { kind: d.kind, sl_alpha: d.sl_alpha, sl_beta: d.sl_beta, rce_clip_a: d.rce_clip_a }
    }
}

impl LossSpec {
    pub fn with_gamma(&self, gamma: f64) -> LossConfig {
        LossConfig {
            kind: self.kind,
            sl_alpha: self.sl_alpha,
            sl_beta: self.sl_beta,
            rce_clip_a: self.rce_clip_a,
            gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub episodes: usize,
    pub epochs_per_episode: usize,
    pub k: usize,
    pub metric: Metric,
    pub vote: VoteConfig,
    pub correction: Correction,
    pub gamma_init: f64,
    /// γ is divided by this after every episode.
    pub gamma_decay_factor: f64,
    pub selknn_m_init_percent: f64,
    pub selknn_m_increment_percent: f64,
    pub classifier: ClassifierSpec,
    pub optimizer: OptimizerConfig,
    pub loss: LossSpec,
    /// Corruption applied to the training set's noisy labels before the run.
    pub noise: Option<NoiseSpec>,
    pub seed: u64,
    /// Retrain on the corrected labels (γ = 0) after the last episode.
    pub final_training: bool,
    pub deep_knn_reference: DeepKnnReference,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            epochs_per_episode: 30,
            k: 100,
            metric: Metric::L2,
            vote: VoteConfig::default(),
            correction: Correction::SelKnn,
            gamma_init: 1.0,
            gamma_decay_factor: 1.2,
            selknn_m_init_percent: 20.0,
            selknn_m_increment_percent: 10.0,
            classifier: ClassifierSpec::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossSpec::default(),
            noise: None,
            seed: 0,
            final_training: true,
            deep_knn_reference: DeepKnnReference::Corrected,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical JSON echo of every field.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is always serializable")
    }

    // Negated comparisons so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("field `{field}`: {why}")));
        if self.episodes == 0 {
            return bad("episodes", "must be at least 1".into());
        }
        if self.epochs_per_episode == 0 {
            return bad("epochs_per_episode", "must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if !(self.gamma_init > 0.0 && self.gamma_init <= 1.0) {
            return bad("gamma_init", format!("{} not in (0, 1]", self.gamma_init));
        }
        if !(self.gamma_decay_factor > 1.0) || !self.gamma_decay_factor.is_finite() {
            return bad("gamma_decay_factor", format!("{} must be > 1", self.gamma_decay_factor));
        }
        for (name, v) in [
            ("selknn_m_init_percent", self.selknn_m_init_percent),
            ("selknn_m_increment_percent", self.selknn_m_increment_percent),
        ] {
            if !(v > 0.0 && v <= 100.0) {
                return bad(name, format!("{v} not in (0, 100]"));
            }
        }
        if self.classifier.hidden_sizes.contains(&0) {
            return bad("classifier.hidden_sizes", "sizes must be positive".into());
        }
        if let Some(l) = self.classifier.embedding_layer {
            if l > self.classifier.hidden_sizes.len() {
                return bad("classifier.embedding_layer", format!("{l} is past the last hidden layer"));
            }
        }
        self.vote.validate().map_err(|e| Error::Config(format!("field `vote`: {e}")))?;
        self.optimizer.validate().map_err(|e| Error::Config(format!("field `optimizer`: {e}")))?;
        self.loss.with_gamma(1.0).validate().map_err(|e| Error::Config(format!("field `loss`: {e}")))?;
        if let Some(noise) = &self.noise {
            noise.validate().map_err(|e| Error::Config(format!("field `noise`: {e}")))?;
        }
        Ok(())
    }

    /// γ for 1-based episode `m`.
    pub fn gamma_at(&self, m: usize) -> f64 {
        self.gamma_init / self.gamma_decay_factor.powi(m as i32 - 1)
    }

    /// SelKNN reference percentage for 1-based episode `m`, capped at 100.
    pub fn m_percent_at(&self, m: usize) -> f64 {
        (self.selknn_m_init_percent + self.selknn_m_increment_percent * (m as f64 - 1.0)).min(100.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert_eq!(cfg.k, 100);
        assert_eq!(cfg.episodes, 10);
        assert_eq!(cfg.optimizer.weight_decay, 1e-4);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::from_json("{\n  \"episodes\": 2,\n  \"kk\": 5\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kk") && msg.contains("line 3"), "{msg}");
        let err = PipelineConfig::from_json("{\"optimizer\": {\"lr\": 1}}").unwrap_err();
        assert!(err.to_string().contains("lr"));
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = PipelineConfig::from_json("{\"gamma_decay_factor\": 0.8}").unwrap_err();
        assert!(err.to_string().contains("gamma_decay_factor"));
        let err = PipelineConfig::from_json("{\"selknn_m_init_percent\": 0}").unwrap_err();
        assert!(err.to_string().contains("selknn_m_init_percent"));
    }

    #[test]
    fn canonical_echo_round_trips() {
        let cfg = PipelineConfig { correction: Correction::IterKnn, k: 7, ..Default::default() };
        let back = PipelineConfig::from_json(&cfg.to_canonical_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.to_canonical_json().contains("\"iterknn\""));
    }

    #[test]
    fn schedules() {
        let cfg = PipelineConfig::default();
        let gammas: Vec<f64> = (1..=5).map(|m| cfg.gamma_at(m)).collect();
        for (g, want) in gammas.iter().zip([1.0, 0.833333333333, 0.694444444444, 0.578703703704, 0.482253086420]) {
            assert!((g - want).abs() < 1e-11, "{g} vs {want}");
        }
        let ms: Vec<f64> = (1..=11).map(|m| cfg.m_percent_at(m)).collect();
        assert_eq!(ms, vec![20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0, 100.0, 100.0]);
    }
}
