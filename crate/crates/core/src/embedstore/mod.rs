//! Dataset model: dense embedding matrices plus their label arrays.

mod emb1;
mod synth;

pub use emb1::{load_dataset, read_dataset, save_dataset, write_dataset, FORMAT_VERSION, MAGIC};
pub use synth::synth_gaussian;

use crate::error::{Error, Result};
use crate::{ClassId, Scalar};

/// An `n × d` row-major matrix of finite feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    n: usize,
    d: usize,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingSet<T> {
    pub fn new(n: usize, d: usize, data: Vec<T>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("embedding set must be non-empty, got {n}x{d}")));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, actual: data.len() });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {d}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), d, data)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Subset of rows, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!("row index {i} out of range for {} rows", self.n)));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> EmbeddingSet<U> {
        EmbeddingSet {
            n: self.n,
            d: self.d,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, row) in self.rows().enumerate() {
            let norm = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("row {i} has zero norm")));
            }
            data.extend(row.iter().map(|v| T::from_f64_lossy(v.as_f64() / norm)));
        }
        Ok(Self { n: self.n, d: self.d, data })
    }
}

/// Borrowed label arrays that correction and training are allowed to see.
///
/// Ground-truth labels are deliberately not reachable from here.
#[derive(Debug, Clone, Copy)]
pub struct LabelView<'a> {
    pub noisy: &'a [ClassId],
    pub current: &'a [ClassId],
    pub num_classes: usize,
}

/// Embeddings together with ground-truth, noisy and current label arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    embeddings: EmbeddingSet<T>,
    true_labels: Option<Vec<ClassId>>,
    noisy_labels: Vec<ClassId>,
    current_labels: Vec<ClassId>,
    num_classes: usize,
}

fn check_labels(name: &str, labels: &[ClassId], n: usize, num_classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{name} has length {}, expected {n}",
            labels.len()
        )));
    }
    if let Some((i, &c)) = labels.iter().enumerate().find(|(_, &c)| c as usize >= num_classes) {
        return Err(Error::invalid(format!(
            "{name}[{i}] = {c} is out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(
        embeddings: EmbeddingSet<T>,
        true_labels: Option<Vec<ClassId>>,
        noisy_labels: Vec<ClassId>,
        current_labels: Vec<ClassId>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if num_classes > ClassId::MAX as usize {
            return Err(Error::invalid("class count does not fit in 32 bits"));
        }
        let n = embeddings.len();
        if let Some(t) = &true_labels {
            check_labels("true_labels", t, n, num_classes)?;
        }
        check_labels("noisy_labels", &noisy_labels, n, num_classes)?;
        check_labels("current_labels", &current_labels, n, num_classes)?;
        Ok(Self { embeddings, true_labels, noisy_labels, current_labels, num_classes })
    }

    /// Clean dataset: all three label arrays set to `labels`.
    pub fn from_clean(embeddings: EmbeddingSet<T>, labels: Vec<ClassId>, num_classes: usize) -> Result<Self> {
        Self::new(embeddings, Some(labels.clone()), labels.clone(), labels, num_classes)
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn embeddings(&self) -> &EmbeddingSet<T> {
        &self.embeddings
    }

    pub fn true_labels(&self) -> Option<&[ClassId]> {
        self.true_labels.as_deref()
    }

    pub fn noisy_labels(&self) -> &[ClassId] {
        &self.noisy_labels
    }

    pub fn current_labels(&self) -> &[ClassId] {
        &self.current_labels
    }

    pub fn labels(&self) -> LabelView<'_> {
        LabelView {
            noisy: &self.noisy_labels,
            current: &self.current_labels,
            num_classes: self.num_classes,
        }
    }

    /// Copy with new current labels.
    pub fn with_current_labels(&self, current: Vec<ClassId>) -> Result<Self> {
        check_labels("current_labels", &current, self.len(), self.num_classes)?;
        Ok(Self { current_labels: current, ..self.clone() })
    }

    /// Copy with new noisy labels; current labels are reset to them.
    pub fn with_noisy_labels(&self, noisy: Vec<ClassId>) -> Result<Self> {
        check_labels("noisy_labels", &noisy, self.len(), self.num_classes)?;
        Ok(Self { current_labels: noisy.clone(), noisy_labels: noisy, ..self.clone() })
    }

    pub fn with_true_labels(&self, truth: Option<Vec<ClassId>>) -> Result<Self> {
        if let Some(t) = &truth {
            check_labels("true_labels", t, self.len(), self.num_classes)?;
        }
        Ok(Self { true_labels: truth, ..self.clone() })
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            embeddings: self.embeddings.cast(),
            true_labels: self.true_labels.clone(),
            noisy_labels: self.noisy_labels.clone(),
            current_labels: self.current_labels.clone(),
            num_classes: self.num_classes,
        }
    }

    /// Subset of samples, in the order given.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let pick = |v: &[ClassId]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Self {
            embeddings: self.embeddings.select(indices)?,
            true_labels: self.true_labels.as_deref().map(pick),
            noisy_labels: pick(&self.noisy_labels),
            current_labels: pick(&self.current_labels),
            num_classes: self.num_classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn normalize_three_four_five() {
        let set = EmbeddingSet::<f64>::from_rows(&[vec![3.0, 4.0]]).unwrap();
        let unit = set.normalize_rows().unwrap();
        assert_abs_diff_eq!(unit.row(0)[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(unit.row(0)[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn normalize_is_idempotent_on_unit_rows() {
        let set = EmbeddingSet::<f64>::from_rows(&[vec![1.0, 0.0], vec![0.6, -0.8]]).unwrap();
        let again = set.normalize_rows().unwrap();
        for (a, b) in set.as_slice().iter().zip(again.as_slice()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_random_rows_have_unit_norm() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let set = EmbeddingSet::new(5, 8, data).unwrap();
        let unit = set.normalize_rows().unwrap();
        for row in unit.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((1.0 - 1e-9..=1.0 + 1e-9).contains(&norm), "norm {norm}");
        }
    }

    #[test]
    fn normalize_rejects_zero_row() {
        let set = EmbeddingSet::<f32>::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let err = set.normalize_rows().unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(EmbeddingSet::<f32>::new(1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(EmbeddingSet::<f32>::new(0, 2, vec![]).is_err());
        assert!(EmbeddingSet::<f32>::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn dataset_rejects_out_of_range_label() {
        let emb = EmbeddingSet::<f32>::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(LabeledDataset::new(emb.clone(), None, vec![0, 2], vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new(emb.clone(), None, vec![0, 1], vec![0], 2).is_err());
        assert!(LabeledDataset::new(emb, None, vec![0, 0], vec![0, 0], 1).is_err());
    }
}
