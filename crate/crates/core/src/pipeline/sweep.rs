use std::collections::BTreeSet;
use std::path::Path;

use log::warn;
use serde::Serialize;

use super::{build_classifier, episode_seed, label_recovery_rate, PipelineConfig};
use crate::embedstore::{EmbeddingSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::knn::{self, Neighbor, ReferenceQuota, SearchIndex};
use crate::trainer::{self, LossLedger};
use crate::{ClassId, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    IterKnn,
    SelKnn,
    /// The classifier head's own predictions.
    Classifier,
}

impl SweepMode {
    fn as_str(self) -> &'static str {
        match self {
            SweepMode::IterKnn => "iterknn",
            SweepMode::SelKnn => "selknn",
            SweepMode::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epoch: usize,
    pub mode: SweepMode,
    /// Requested k; `None` for classifier rows.
    pub k: Option<usize>,
    pub recovery_rate: f64,
}

fn vote_prefixes(
    neighbors: &[Vec<Neighbor>],
    reference_labels: &[ClassId],
    k: usize,
    cfg: &PipelineConfig,
) -> Vec<ClassId> {
    neighbors.iter().map(|nb| knn::vote(&nb[..k], reference_labels, &cfg.vote)).collect()
}

/// Recovery rates after a single training episode, for every k in
/// `k_values` under both correction modes, measured every `eval_every`
/// epochs and at the end of the episode. No labels are corrected between
/// measurements.
pub fn k_sweep<T: Scalar>(
    cfg: &PipelineConfig,
    train: &LabeledDataset<T>,
    k_values: &[usize],
    eval_every: usize,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let truth = train.true_labels().ok_or_else(|| Error::invalid("k-sweep needs true labels"))?;
    let n = train.len();
    let ks: BTreeSet<usize> = k_values.iter().copied().collect();
    if ks.len() != k_values.len() {
        warn!("duplicate k values ignored; sweeping {:?}", ks);
    }
    let k_max = *ks.last().ok_or_else(|| Error::invalid("empty k list"))?;
    if ks.contains(&0) {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k_max >= n {
        return Err(Error::invalid(format!("k = {k_max} must be smaller than n = {n}")));
    }
    if eval_every == 0 {
        return Err(Error::invalid("eval_every must be at least 1"));
    }

    let data = match &cfg.noise {
        Some(spec) => train.with_noisy_labels(spec.apply(train.noisy_labels(), train.num_classes())?)?,
        None => train.with_current_labels(train.noisy_labels().to_vec())?,
    };
    let seed = episode_seed(cfg.seed, 1);
    let model = build_classifier::<T>(cfg, train.embeddings().dim(), train.num_classes(), seed)?;
    let epochs = cfg.epochs_per_episode;
    let mut rows = Vec::new();

    trainer::train_episode_with(
        model,
        train.embeddings(),
        data.labels(),
        &cfg.loss.with_gamma(cfg.gamma_init),
        epochs,
        &cfg.optimizer,
        seed,
        |s| {
            if s.epoch % eval_every != 0 && s.epoch != epochs {
                return Ok(());
            }
            let head = trainer::predict_all(s.model, train.embeddings())?;
            rows.push(SweepRow {
                epoch: s.epoch,
                mode: SweepMode::Classifier,
                k: None,
                recovery_rate: label_recovery_rate(&head, Some(truth))?,
            });
            let embeddings = trainer::embed_all(s.model, train.embeddings())?;
            sweep_epoch(cfg, &data, truth, &embeddings, s.ledger, &ks, s.epoch, &mut rows)
        },
    )?;
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn sweep_epoch<T: Scalar>(
    cfg: &PipelineConfig,
    data: &LabeledDataset<T>,
    truth: &[ClassId],
    embeddings: &EmbeddingSet<T>,
    ledger: &LossLedger,
    ks: &BTreeSet<usize>,
    epoch: usize,
    rows: &mut Vec<SweepRow>,
) -> Result<()> {
    let n = data.len();
    let current = data.current_labels();
    let k_max = *ks.last().expect("non-empty");

    // Top-k lists are prefixes of the top-k_max list, so one search serves every k.
    let index = SearchIndex::new(embeddings, cfg.metric)?;
    let all: Vec<usize> = (0..n).collect();
    let neighbors = index.search_many(embeddings, &all, k_max, Some)?;
    for &k in ks {
        let labels = vote_prefixes(&neighbors, current, k, cfg);
        rows.push(SweepRow {
            epoch,
            mode: SweepMode::IterKnn,
            k: Some(k),
            recovery_rate: label_recovery_rate(&labels, Some(truth))?,
        });
    }

    let quota = ReferenceQuota::Percent(cfg.m_percent_at(1));
    let mask = knn::select_reference(current, data.num_classes(), ledger.cumulative(), quota)?;
    let reference_rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let query_rows: Vec<usize> = (0..n).filter(|&i| !mask[i]).collect();
    let reference_labels: Vec<ClassId> = reference_rows.iter().map(|&i| current[i]).collect();
    let sel_max = k_max.min(reference_rows.len());
    let neighbors = if query_rows.is_empty() {
        Vec::new()
    } else {
        let reference = embeddings.select(&reference_rows)?;
        SearchIndex::new(&reference, cfg.metric)?.search_many(embeddings, &query_rows, sel_max, |_| None)?
    };
    for &k in ks {
        let k_eff = super::clamp_k(k, sel_max, "SelKNN reference samples")?;
        let mut labels = current.to_vec();
        for (&row, label) in query_rows.iter().zip(vote_prefixes(&neighbors, &reference_labels, k_eff, cfg)) {
            labels[row] = label;
        }
        rows.push(SweepRow {
            epoch,
            mode: SweepMode::SelKnn,
            k: Some(k),
            recovery_rate: label_recovery_rate(&labels, Some(truth))?,
        });
    }
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let err = |e: csv::Error| Error::Report(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["epoch", "mode", "k", "recovery_rate"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.mode.as_str().to_string(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.recovery_rate.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
