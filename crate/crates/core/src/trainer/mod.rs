//! Classifier training with hybrid noisy/corrected-label losses.
//!
//! Besides the model, each training episode produces a [`LossLedger`]: every
//! sample's loss on its current label, divided by that epoch's dataset mean
//! and summed over the episode's epochs. SelKNN ranks samples by it.

mod loss;
mod mlp;

pub use loss::{
    base_loss, hybrid_from_probs, loss_ce, loss_rce, loss_sl, LossConfig, LossKind, PROB_FLOOR,
};
pub use mlp::{parameter_count, Classifier};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{EmbeddingSet, LabelView};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::{ClassId, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs (0-based) at whose start the learning rate is multiplied by
    /// `lr_decay`. `None` means halfway and three quarters through.
    pub lr_milestones: Option<Vec<usize>>,
    pub lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            batch_size: 256,
            lr_milestones: None,
            lr_decay: 0.1,
        }
    }
}

impl OptimizerConfig {
    // Negated comparisons so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 {
            return Err(Error::invalid("learning_rate and batch_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
        }
        if !(self.weight_decay >= 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0 and lr_decay > 0"));
        }
        Ok(())
    }

    pub fn milestones(&self, epochs: usize) -> Vec<usize> {
        self.lr_milestones.clone().unwrap_or_else(|| vec![epochs / 2, epochs * 3 / 4])
    }

    fn learning_rate_at(&self, epoch: usize, milestones: &[usize]) -> f64 {
        let passed = milestones.iter().filter(|&&m| m > 0 && m <= epoch).count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

/// Per-sample cumulative normalized loss for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLedger {
    cumulative: Vec<f64>,
}

impl LossLedger {
    pub fn new(n: usize) -> Self {
        Self { cumulative: vec![0.0; n] }
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// Normalizes raw epoch losses by their mean and adds them in.
    /// Returns the normalized contributions.
    fn accumulate(&mut self, epoch_losses: &[f64]) -> Vec<f64> {
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        let normalized: Vec<f64> = if mean > 0.0 {
            epoch_losses.iter().map(|l| l / mean).collect()
        } else {
            vec![1.0; epoch_losses.len()]
        };
        for (c, v) in self.cumulative.iter_mut().zip(&normalized) {
            *c += v;
        }
        normalized
    }
}

/// State handed to the observer after every epoch.
pub struct EpochSummary<'a, T> {
    /// 1-based.
    pub epoch: usize,
    pub model: &'a Classifier<T>,
    pub ledger: &'a LossLedger,
    /// This epoch's contributions to the ledger; they average to 1.
    pub normalized_losses: &'a [f64],
    pub mean_loss: f64,
    pub learning_rate: f64,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], step: 0 }
    }

    fn update(&mut self, params: &mut [T], grads: &[T], lr: f64, cfg: &OptimizerConfig) {
        self.step += 1;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(self.step));
        let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(self.step));
        let lr_t = T::from_f64_lossy(lr);
        let decay = T::from_f64_lossy(lr * cfg.weight_decay);
        let eps = T::from_f64_lossy(cfg.eps);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= decay * *p;
            *p -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Trains `model` for one episode on the hybrid loss.
pub fn train_episode<T: Scalar>(
    model: Classifier<T>,
    inputs: &EmbeddingSet<T>,
    labels: LabelView<'_>,
    loss: &LossConfig,
    epochs: usize,
    optimizer: &OptimizerConfig,
    seed: u64,
) -> Result<(Classifier<T>, LossLedger)> {
    train_episode_with(model, inputs, labels, loss, epochs, optimizer, seed, |_| Ok(()))
}

/// [`train_episode`] with a callback after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_episode_with<T: Scalar>(
    mut model: Classifier<T>,
    inputs: &EmbeddingSet<T>,
    labels: LabelView<'_>,
    loss: &LossConfig,
    epochs: usize,
    optimizer: &OptimizerConfig,
    seed: u64,
    mut observer: impl FnMut(&EpochSummary<'_, T>) -> Result<()>,
) -> Result<(Classifier<T>, LossLedger)> {
    loss.validate()?;
    optimizer.validate()?;
    if epochs == 0 {
        return Err(Error::invalid("epochs must be at least 1"));
    }
    let n = inputs.len();
    if labels.current.len() != n || labels.noisy.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: labels.current.len() });
    }
    if inputs.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: inputs.dim() });
    }
    if labels.num_classes != model.num_classes() {
        return Err(Error::invalid(format!(
            "model has {} outputs but the dataset has {} classes",
            model.num_classes(),
            labels.num_classes
        )));
    }

    let milestones = optimizer.milestones(epochs);
    let mut adam = Adam::new(model.parameter_count());
    let mut grads = vec![T::zero(); model.parameter_count()];
    let mut ledger = LossLedger::new(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = vec![0.0f64; n];

    for epoch in 0..epochs {
        let lr = optimizer.learning_rate_at(epoch, &milestones);
        order.sort_unstable();
        order.shuffle(&mut rng::stream(seed, domain::SHUFFLE, epoch as u64));

        for batch in order.chunks(optimizer.batch_size) {
            grads.iter_mut().for_each(|g| *g = T::zero());
            let scale = T::one() / T::from_f64_lossy(batch.len() as f64);
            for &i in batch {
                let cache = model.forward_cached(inputs.row(i))?;
                let (corrected, noisy) = (labels.current[i], labels.noisy[i]);
                let sample_loss = base_loss(&cache.probs, corrected, loss).as_f64();
                if !sample_loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss at sample {i}, epoch {}", epoch + 1)));
                }
                epoch_losses[i] = sample_loss;
                let dlogits = loss::hybrid_grad(&cache.probs, corrected, noisy, loss);
                model.backward(&cache, &dlogits, scale, &mut grads);
            }
            adam.update(model.params_mut(), &grads, lr, optimizer);
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("parameters diverged in epoch {}", epoch + 1)));
        }

        let mean_loss = epoch_losses.iter().sum::<f64>() / n as f64;
        let normalized = ledger.accumulate(&epoch_losses);
        observer(&EpochSummary {
            epoch: epoch + 1,
            model: &model,
            ledger: &ledger,
            normalized_losses: &normalized,
            mean_loss,
            learning_rate: lr,
        })?;
    }
    Ok((model, ledger))
}

/// Embedding-layer activations for every row.
pub fn embed_all<T: Scalar>(model: &Classifier<T>, inputs: &EmbeddingSet<T>) -> Result<EmbeddingSet<T>> {
    if inputs.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: inputs.dim() });
    }
    let rows: Vec<Vec<T>> = inputs
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| model.forward(x).map(|(_, e)| e))
        .collect::<Result<_>>()?;
    let data: Vec<T> = rows.into_iter().flatten().collect();
    EmbeddingSet::new(inputs.len(), model.embedding_dim(), data)
}

/// Head predictions for every row.
pub fn predict_all<T: Scalar>(model: &Classifier<T>, inputs: &EmbeddingSet<T>) -> Result<Vec<ClassId>> {
    inputs.rows().collect::<Vec<_>>().par_iter().map(|x| model.predict(x)).collect()
}

/// Labels entering the hybrid loss for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleTarget {
    pub corrected: ClassId,
    pub noisy: ClassId,
}

impl SampleTarget {
    pub fn single(label: ClassId) -> Self {
        Self { corrected: label, noisy: label }
    }
}

/// Hybrid loss of `model` on one sample.
pub fn hybrid_loss<T: Scalar>(model: &Classifier<T>, x: &[T], target: SampleTarget, cfg: &LossConfig) -> Result<T> {
    let (probs, _) = model.forward(x)?;
    Ok(hybrid_from_probs(&probs, target.corrected, target.noisy, cfg))
}

/// Analytic parameter gradient of the hybrid loss on one sample.
pub fn loss_gradient<T: Scalar>(model: &Classifier<T>, x: &[T], target: SampleTarget, cfg: &LossConfig) -> Result<Vec<T>> {
    let cache = model.forward_cached(x)?;
    let dlogits = loss::hybrid_grad(&cache.probs, target.corrected, target.noisy, cfg);
    let mut grads = vec![T::zero(); model.parameter_count()];
    model.backward(&cache, &dlogits, T::one(), &mut grads);
    Ok(grads)
}

/// Step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-4;

/// Gradients whose analytic and numeric magnitudes are both below this are
/// compared absolutely instead of relatively.
pub const FD_ZERO_FLOOR: f64 = 1e-8;

/// Max relative error between the analytic gradient and central finite differences.
pub fn gradient_check(model: &Classifier<f64>, x: &[f64], target: SampleTarget, cfg: &LossConfig) -> Result<f64> {
    let analytic = loss_gradient(model, x, target, cfg)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (j, &a) in analytic.iter().enumerate() {
        let orig = probe.params()[j];
        probe.params_mut()[j] = orig + FD_STEP;
        let up = hybrid_loss(&probe, x, target, cfg)?;
        probe.params_mut()[j] = orig - FD_STEP;
        let down = hybrid_loss(&probe, x, target, cfg)?;
        probe.params_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let scale = a.abs().max(numeric.abs());
        let err = if scale < FD_ZERO_FLOOR { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::synth_gaussian;

    #[test]
    fn milestones_default_and_explicit() {
        let cfg = OptimizerConfig::default();
        assert_eq!(cfg.milestones(40), vec![20, 30]);
        let m = cfg.milestones(40);
        assert_eq!(cfg.learning_rate_at(19, &m), 1e-3);
        assert!((cfg.learning_rate_at(20, &m) - 1e-4).abs() < 1e-18);
        assert!((cfg.learning_rate_at(35, &m) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn ledger_normalizes_per_epoch() {
        let mut ledger = LossLedger::new(3);
        let a = ledger.accumulate(&[1.0, 2.0, 3.0]);
        assert_eq!(a, vec![0.5, 1.0, 1.5]);
        ledger.accumulate(&[0.0, 0.0, 0.0]);
        assert_eq!(ledger.cumulative(), &[1.5, 2.0, 2.5]);
    }

    #[test]
    fn zero_gradient_at_confident_correct_prediction() {
        // Huge logit on class 1 saturates the softmax.
        let mut model = Classifier::<f64>::zeros(&[2, 3]).unwrap();
        let n = model.parameter_count();
        model.params_mut()[n - 2] = 200.0;
        let g = loss_gradient(&model, &[0.3, -0.7], SampleTarget::single(1), &LossConfig::ce()).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "gradient norm {norm}");
    }

    #[test]
    fn affine_embedding_for_nonnegative_model() {
        let mut model = Classifier::<f64>::zeros(&[2, 3, 2]).unwrap();
        let w = [0.5, 1.0, 2.0, 0.0, 0.25, 0.75];
        let b = [0.1, 0.0, 0.3];
        model.params_mut()[..6].copy_from_slice(&w);
        model.params_mut()[6..9].copy_from_slice(&b);
        let x = EmbeddingSet::from_rows(&[vec![1.0, 2.0], vec![0.0, 4.0]]).unwrap();
        let e = embed_all(&model, &x).unwrap();
        for (i, xi) in x.rows().enumerate() {
            for o in 0..3 {
                let expect = w[2 * o] * xi[0] + w[2 * o + 1] * xi[1] + b[o];
                assert!((e.row(i)[o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_ledger_mean_is_one() {
        let ds = synth_gaussian::<f32>(3, 20, 4, 6.0, 2).unwrap();
        let model = Classifier::init(&[4, 8, 3], 1).unwrap();
        let opt = OptimizerConfig { batch_size: 16, ..Default::default() };
        let mut means = Vec::new();
        let (a, la) = train_episode_with(model.clone(), ds.embeddings(), ds.labels(), &LossConfig::default(), 3, &opt, 5, |s| {
            means.push(s.normalized_losses.iter().sum::<f64>() / s.normalized_losses.len() as f64);
            assert!(s.normalized_losses.iter().all(|&v| v >= 0.0));
            Ok(())
        })
        .unwrap();
        let (b, lb) = train_episode(model, ds.embeddings(), ds.labels(), &LossConfig::default(), 3, &opt, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(means.len(), 3);
        assert!(means.iter().all(|m| (m - 1.0).abs() < 1e-6));
    }

    #[test]
    fn embed_single_row() {
        let model = Classifier::<f32>::init(&[3, 5, 2], 0).unwrap();
        let x = EmbeddingSet::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let e = embed_all(&model, &x).unwrap();
        assert_eq!((e.len(), e.dim()), (1, 5));
        assert_eq!(e, embed_all(&model, &x).unwrap());
        let bad = EmbeddingSet::from_rows(&[vec![1.0f32, 2.0]]).unwrap();
        assert!(embed_all(&model, &bad).is_err());
    }
}
