use super::{vote, Metric, SearchIndex, VoteConfig};
use crate::embedstore::{EmbeddingSet, LabelView};
use crate::error::{Error, Result};
use crate::{ClassId, Scalar};

/// How many reference samples each class contributes to SelKNN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceQuota {
    /// Fixed count per class.
    PerClass(usize),
    /// `ceil(percent * class_size / 100)` per class.
    Percent(f64),
}

impl ReferenceQuota {
    fn count(&self, class_size: usize) -> usize {
        let want = match *self {
            ReferenceQuota::PerClass(m) => m,
            ReferenceQuota::Percent(p) => {
                // Guard against 20.000000000004-style rounding before ceil.
                let raw = p * class_size as f64 / 100.0;
                (raw - 1e-9).ceil().max(0.0) as usize
            }
        };
        want.min(class_size)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ReferenceQuota::PerClass(0) => Err(Error::invalid("reference quota must be at least 1")),
            ReferenceQuota::Percent(p) if !(p > 0.0 && p <= 100.0) => {
                Err(Error::invalid(format!("reference percent must be in (0, 100], got {p}")))
            }
            _ => Ok(()),
        }
    }
}

fn check_alignment<T: Scalar>(embeddings: &EmbeddingSet<T>, labels: &[ClassId]) -> Result<()> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), actual: embeddings.len() });
    }
    Ok(())
}

/// Re-infers every label by voting over its `k` nearest other samples.
///
/// All votes read the labels as they were before the pass.
pub fn correct_iterknn<T: Scalar>(
    embeddings: &EmbeddingSet<T>,
    labels: LabelView<'_>,
    k: usize,
    metric: Metric,
    vote_cfg: &VoteConfig,
) -> Result<Vec<ClassId>> {
    vote_cfg.validate()?;
    check_alignment(embeddings, labels.current)?;
    let n = embeddings.len();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must be in [1, n) with n = {n}")));
    }
    let index = SearchIndex::new(embeddings, metric)?;
    let rows: Vec<usize> = (0..n).collect();
    let neighbors = index.search_many(embeddings, &rows, k, Some)?;
    Ok(neighbors.iter().map(|nb| vote(nb, labels.current, vote_cfg)).collect())
}

/// Per class (by current label), marks the samples with the lowest
/// cumulative loss. Loss ties go to the lower sample index.
pub fn select_reference(
    current: &[ClassId],
    num_classes: usize,
    cumulative_loss: &[f64],
    quota: ReferenceQuota,
) -> Result<Vec<bool>> {
    quota.validate()?;
    if cumulative_loss.len() != current.len() {
        return Err(Error::DimensionMismatch { expected: current.len(), actual: cumulative_loss.len() });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &c) in current.iter().enumerate() {
        by_class
            .get_mut(c as usize)
            .ok_or_else(|| Error::invalid(format!("label {c} out of range")))?
            .push(i);
    }
    let mut mask = vec![false; current.len()];
    for members in &mut by_class {
        members.sort_by(|&a, &b| cumulative_loss[a].total_cmp(&cumulative_loss[b]).then(a.cmp(&b)));
        for &i in &members[..quota.count(members.len())] {
            mask[i] = true;
        }
    }
    Ok(mask)
}

/// Keeps the low-loss reference samples' labels and re-infers every other
/// label by voting over its `k` nearest reference samples.
///
/// Returns the new labels and the reference mask.
pub fn correct_selknn<T: Scalar>(
    embeddings: &EmbeddingSet<T>,
    labels: LabelView<'_>,
    cumulative_loss: &[f64],
    quota: ReferenceQuota,
    k: usize,
    metric: Metric,
    vote_cfg: &VoteConfig,
) -> Result<(Vec<ClassId>, Vec<bool>)> {
    vote_cfg.validate()?;
    check_alignment(embeddings, labels.current)?;
    let mask = select_reference(labels.current, labels.num_classes, cumulative_loss, quota)?;

    let reference_rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if reference_rows.is_empty() {
        return Err(Error::invalid("empty reference set"));
    }
    if k == 0 || k > reference_rows.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {} selected reference samples",
            reference_rows.len()
        )));
    }
    let query_rows: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    let mut out = labels.current.to_vec();
    if query_rows.is_empty() {
        return Ok((out, mask));
    }

    let reference = embeddings.select(&reference_rows)?;
    let reference_labels: Vec<ClassId> = reference_rows.iter().map(|&i| labels.current[i]).collect();
    let index = SearchIndex::new(&reference, metric)?;
    let neighbors = index.search_many(embeddings, &query_rows, k, |_| None)?;
    for (&row, nb) in query_rows.iter().zip(&neighbors) {
        out[row] = vote(nb, &reference_labels, vote_cfg);
    }
    Ok((out, mask))
}

/// Labels each query by voting over its `k` nearest reference samples.
pub fn predict_deep_knn<T: Scalar>(
    reference: &EmbeddingSet<T>,
    reference_labels: &[ClassId],
    queries: &EmbeddingSet<T>,
    k: usize,
    metric: Metric,
    vote_cfg: &VoteConfig,
) -> Result<Vec<ClassId>> {
    vote_cfg.validate()?;
    check_alignment(reference, reference_labels)?;
    if reference.dim() != queries.dim() {
        return Err(Error::DimensionMismatch { expected: reference.dim(), actual: queries.dim() });
    }
    let index = SearchIndex::new(reference, metric)?;
    let rows: Vec<usize> = (0..queries.len()).collect();
    let neighbors = index.search_many(queries, &rows, k, |_| None)?;
    Ok(neighbors.iter().map(|nb| vote(nb, reference_labels, vote_cfg)).collect())
}
