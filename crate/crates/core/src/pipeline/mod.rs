//! The iterative train / embed / correct loop.
//!
//! Each episode re-initializes the classifier, trains it on the hybrid loss
//! at the episode's γ, extracts embeddings, and re-infers labels with the
//! configured KNN correction. γ shrinks and the SelKNN reference share grows
//! from one episode to the next. Ground-truth labels only feed the metrics.

mod config;
mod report;
mod sweep;

pub use config::{ClassifierSpec, Correction, DeepKnnReference, LossSpec, PipelineConfig};
pub use report::{write_csv_reports, write_json_summary, EpisodeReport, FinalMetrics, CSV_COLUMNS};
pub use sweep::{k_sweep, write_sweep_csv, SweepMode, SweepRow};

use std::time::Instant;

use log::{info, warn};
use thiserror::Error;

use crate::embedstore::{EmbeddingSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::knn::{self, Metric, ReferenceQuota, VoteConfig};
use crate::noise::label_error_rate;
use crate::trainer::{self, Classifier, LossLedger};
use crate::{ClassId, Scalar};

/// Fraction of samples whose current label equals the ground truth.
pub fn label_recovery_rate(current: &[ClassId], truth: Option<&[ClassId]>) -> Result<f64> {
    let truth = truth.ok_or_else(|| Error::invalid("label recovery needs true labels"))?;
    Ok(1.0 - label_error_rate(current, truth)?)
}

fn accuracy(pred: &[ClassId], truth: &[ClassId]) -> Result<f64> {
    Ok(1.0 - label_error_rate(pred, truth)?)
}

/// Per-episode seed for model initialization and batch shuffling.
pub(crate) fn episode_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(episode as u64)
}

pub(crate) fn build_classifier<T: Scalar>(
    cfg: &PipelineConfig,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Classifier<T>> {
    let sizes = cfg.classifier.layer_sizes(input_dim, num_classes);
    let model = Classifier::init(&sizes, seed)?;
    match cfg.classifier.embedding_layer {
        Some(l) => model.with_embedding_layer(l),
        None => Ok(model),
    }
}

/// Clamps `k` to `available`, warning when it has to.
pub(crate) fn clamp_k(k: usize, available: usize, what: &str) -> Result<usize> {
    if available == 0 {
        return Err(Error::invalid(format!("no {what} available for KNN")));
    }
    if k > available {
        warn!("k = {k} exceeds the {available} available {what}; using k = {available}");
        Ok(available)
    } else {
        Ok(k)
    }
}

/// Test-set accuracies: classifier head and deep-KNN over the training embeddings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub head_accuracy: f64,
    pub deep_knn_accuracy: f64,
}

/// Scores `model` on `test`, using `reference` (with its current labels) as
/// the deep-KNN memory.
pub fn evaluate<T: Scalar>(
    model: &Classifier<T>,
    reference: &LabeledDataset<T>,
    test: &LabeledDataset<T>,
    k: usize,
    metric: Metric,
    vote: &VoteConfig,
) -> Result<Evaluation> {
    let truth = test.true_labels().ok_or_else(|| Error::invalid("test set has no true labels"))?;
    let head = trainer::predict_all(model, test.embeddings())?;
    let ref_emb = trainer::embed_all(model, reference.embeddings())?;
    let test_emb = trainer::embed_all(model, test.embeddings())?;
    let k = clamp_k(k, reference.len(), "reference samples")?;
    let knn_pred = knn::predict_deep_knn(&ref_emb, reference.current_labels(), &test_emb, k, metric, vote)?;
    Ok(Evaluation { head_accuracy: accuracy(&head, truth)?, deep_knn_accuracy: accuracy(&knn_pred, truth)? })
}

/// Everything a successful run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub reports: Vec<EpisodeReport>,
    /// Training set with the final corrected labels as `current_labels`.
    pub corrected: LabeledDataset<T>,
    pub model: Classifier<T>,
    /// SelKNN reference mask of the last correction, if it used one.
    pub reference_mask: Option<Vec<bool>>,
    pub final_metrics: FinalMetrics,
}

/// A run that stopped early, with the reports of completed episodes.
#[derive(Debug, Error)]
#[error("run aborted after {} completed episode(s): {source}", .reports.len())]
pub struct RunFailure {
    #[source]
    pub source: Error,
    pub reports: Vec<EpisodeReport>,
}

struct Correcting {
    labels: Vec<ClassId>,
    mask: Option<Vec<bool>>,
    m_percent: Option<f64>,
}

fn correct_labels<T: Scalar>(
    cfg: &PipelineConfig,
    episode: usize,
    embeddings: &EmbeddingSet<T>,
    data: &LabeledDataset<T>,
    ledger: &LossLedger,
) -> Result<Correcting> {
    let view = data.labels();
    match cfg.correction {
        Correction::SelKnn if cfg.m_percent_at(episode) < 100.0 => {
            let pct = cfg.m_percent_at(episode);
            let quota = ReferenceQuota::Percent(pct);
            let mask = knn::select_reference(view.current, view.num_classes, ledger.cumulative(), quota)?;
            let selected = mask.iter().filter(|&&m| m).count();
            let k = clamp_k(cfg.k, selected, "SelKNN reference samples")?;
            let (labels, mask) =
                knn::correct_selknn(embeddings, view, ledger.cumulative(), quota, k, cfg.metric, &cfg.vote)?;
            Ok(Correcting { labels, mask: Some(mask), m_percent: Some(pct) })
        }
        correction => {
            // SelKNN with a 100% reference share degenerates to IterKNN.
            let k = clamp_k(cfg.k, data.len() - 1, "other samples")?;
            let labels = knn::correct_iterknn(embeddings, view, k, cfg.metric, &cfg.vote)?;
            let m_percent = (correction == Correction::SelKnn).then_some(100.0);
            Ok(Correcting { labels, mask: None, m_percent })
        }
    }
}

fn deep_knn_reference<T: Scalar>(
    cfg: &PipelineConfig,
    data: &LabeledDataset<T>,
    mask: Option<&[bool]>,
) -> Result<LabeledDataset<T>> {
    match (cfg.deep_knn_reference, mask) {
        (DeepKnnReference::CleanSubset, Some(mask)) => {
            let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
            data.select(&rows)
        }
        _ => Ok(data.clone()),
    }
}

/// Runs the full correction loop on `train`, scoring against `test` when given.
pub fn run<T: Scalar>(
    cfg: &PipelineConfig,
    train: &LabeledDataset<T>,
    test: Option<&LabeledDataset<T>>,
) -> std::result::Result<RunOutcome<T>, RunFailure> {
    let mut reports = Vec::with_capacity(cfg.episodes);
    match run_inner(cfg, train, test, &mut reports) {
        Ok(outcome) => Ok(outcome),
        Err(source) => Err(RunFailure { source, reports }),
    }
}

fn run_inner<T: Scalar>(
    cfg: &PipelineConfig,
    train: &LabeledDataset<T>,
    test: Option<&LabeledDataset<T>>,
    reports: &mut Vec<EpisodeReport>,
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    if let Some(t) = test {
        if t.embeddings().dim() != train.embeddings().dim() {
            return Err(Error::DimensionMismatch { expected: train.embeddings().dim(), actual: t.embeddings().dim() });
        }
        if t.num_classes() != train.num_classes() {
            return Err(Error::invalid("train and test class counts differ"));
        }
    }

    // Corruption acts on the noisy labels and resets the current labels to them.
    let mut data = match &cfg.noise {
        Some(spec) => train.with_noisy_labels(spec.apply(train.noisy_labels(), train.num_classes())?)?,
        None => train.with_current_labels(train.noisy_labels().to_vec())?,
    };
    let truth = train.true_labels();
    let inputs = train.embeddings();
    let mut last_mask = None;
    let mut last_model = None;

    for episode in 1..=cfg.episodes {
        let started = Instant::now();
        let gamma = cfg.gamma_at(episode);
        let seed = episode_seed(cfg.seed, episode);
        let model = build_classifier::<T>(cfg, inputs.dim(), data.num_classes(), seed)?;
        let (model, ledger) = trainer::train_episode(
            model,
            inputs,
            data.labels(),
            &cfg.loss.with_gamma(gamma),
            cfg.epochs_per_episode,
            &cfg.optimizer,
            seed,
        )?;
        let train_accuracy = accuracy(&trainer::predict_all(&model, inputs)?, data.current_labels())?;
        let embeddings = trainer::embed_all(&model, inputs)?;
        let fix = correct_labels(cfg, episode, &embeddings, &data, &ledger)?;
        let labels_changed = fix.labels.iter().zip(data.current_labels()).filter(|(a, b)| a != b).count();
        data = data.with_current_labels(fix.labels)?;

        let (head, deep) = match test {
            Some(t) if t.true_labels().is_some() => {
                let reference = deep_knn_reference(cfg, &data, fix.mask.as_deref())?;
                let eval = evaluate(&model, &reference, t, cfg.k, cfg.metric, &cfg.vote)?;
                (Some(eval.head_accuracy), Some(eval.deep_knn_accuracy))
            }
            _ => (None, None),
        };
        let recovery = truth.map(|t| label_recovery_rate(data.current_labels(), Some(t))).transpose()?;
        let report = EpisodeReport {
            episode,
            gamma,
            m_percent: fix.m_percent,
            label_recovery_rate: recovery,
            label_error_rate: recovery.map(|r| 1.0 - r),
            train_accuracy,
            test_accuracy_head: head,
            test_accuracy_knn: deep,
            labels_changed,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "episode {episode}: gamma={gamma:.4} changed={labels_changed} recovery={}",
            recovery.map_or("n/a".to_string(), |r| format!("{r:.4}"))
        );
        reports.push(report);
        last_mask = fix.mask;
        last_model = Some(model);
    }

    // Final pass on the corrected labels only.
    let model = if cfg.final_training {
        let final_seed = episode_seed(cfg.seed, cfg.episodes + 1);
        let model = build_classifier::<T>(cfg, inputs.dim(), data.num_classes(), final_seed)?;
        trainer::train_episode(
            model,
            inputs,
            data.labels(),
            &cfg.loss.with_gamma(0.0),
            cfg.epochs_per_episode,
            &cfg.optimizer,
            final_seed,
        )?
        .0
    } else {
        last_model.expect("at least one episode ran")
    };
    let train_accuracy = accuracy(&trainer::predict_all(&model, inputs)?, data.current_labels())?;
    let recovery = truth.map(|t| label_recovery_rate(data.current_labels(), Some(t))).transpose()?;
    let eval = match test {
        Some(t) if t.true_labels().is_some() => {
            let reference = deep_knn_reference(cfg, &data, last_mask.as_deref())?;
            Some(evaluate(&model, &reference, t, cfg.k, cfg.metric, &cfg.vote)?)
        }
        _ => None,
    };
    let final_metrics = FinalMetrics {
        label_recovery_rate: recovery,
        label_error_rate: recovery.map(|r| 1.0 - r),
        train_accuracy,
        test_accuracy_head: eval.map(|e| e.head_accuracy),
        test_accuracy_knn: eval.map(|e| e.deep_knn_accuracy),
        final_training: cfg.final_training,
    };
    Ok(RunOutcome { reports: std::mem::take(reports), corrected: data, model, reference_mask: last_mask, final_metrics })
}
