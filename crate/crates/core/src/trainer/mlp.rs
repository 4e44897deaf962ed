use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::Scalar;

/// Feed-forward classifier: ReLU hidden layers, softmax head.
///
/// Parameters live in one flat vector, layer by layer, each layer being its
/// `out × in` row-major weight matrix followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Classifier<T> {
    layer_sizes: Vec<usize>,
    embedding_layer: usize,
    params: Vec<T>,
}

/// Activations recorded during a forward pass, reused by backprop.
pub(crate) struct ForwardCache<T> {
    /// `activations[0]` is the input; `activations[l]` the post-ReLU output of layer `l`.
    pub(crate) activations: Vec<Vec<T>>,
    pub(crate) probs: Vec<T>,
}

pub fn parameter_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

impl<T: Scalar> Classifier<T> {
    /// Fresh model with He-uniform weights (bound `sqrt(6 / fan_in)`) and zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes)?;
        let mut rng = rng::stream(seed, domain::INIT, 0);
        for l in 1..layer_sizes.len() {
            let bound = (6.0 / layer_sizes[l - 1] as f64).sqrt();
            let (start, len) = model.weight_span(l);
            for w in &mut model.params[start..start + len] {
                *w = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        }
        Ok(model)
    }

    /// All parameters zero; embedding taken at the last hidden layer.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("classifier needs at least an input and an output layer"));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::invalid(format!("layer sizes must be positive: {layer_sizes:?}")));
        }
        if *layer_sizes.last().expect("len >= 2") < 2 {
            return Err(Error::invalid("output layer needs at least 2 classes"));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            embedding_layer: layer_sizes.len() - 2,
            params: vec![T::zero(); parameter_count(layer_sizes)],
        })
    }

    /// Selects the layer whose activations [`Self::forward`] reports as the
    /// embedding: 0 is the raw input, `1..L-1` are hidden layers.
    pub fn with_embedding_layer(mut self, layer: usize) -> Result<Self> {
        if layer + 1 >= self.layer_sizes.len() {
            return Err(Error::invalid(format!(
                "embedding layer {layer} must be a hidden layer or the input (< {})",
                self.layer_sizes.len() - 1
            )));
        }
        self.embedding_layer = layer;
        Ok(self)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("len >= 2")
    }

    pub fn embedding_layer(&self) -> usize {
        self.embedding_layer
    }

    pub fn embedding_dim(&self) -> usize {
        self.layer_sizes[self.embedding_layer]
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn offset(&self, layer: usize) -> usize {
        parameter_count(&self.layer_sizes[..layer])
    }

    /// `(start, len)` of layer `l`'s weight block.
    pub(crate) fn weight_span(&self, l: usize) -> (usize, usize) {
        (self.offset(l), self.layer_sizes[l] * self.layer_sizes[l - 1])
    }

    pub(crate) fn layer(&self, l: usize) -> (&[T], &[T]) {
        let (start, len) = self.weight_span(l);
        let out = self.layer_sizes[l];
        (&self.params[start..start + len], &self.params[start + len..start + len + out])
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), actual: x.len() });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, x: &[T]) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let depth = self.layer_sizes.len() - 1;
        let mut activations = Vec::with_capacity(depth);
        activations.push(x.to_vec());
        let mut logits = Vec::new();
        for l in 1..=depth {
            let (w, b) = self.layer(l);
            let input = activations.last().expect("input pushed");
            let fan_in = self.layer_sizes[l - 1];
            let z: Vec<T> = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, &bias)| row.iter().zip(input).fold(bias, |acc, (&wi, &xi)| acc + wi * xi))
                .collect();
            if l == depth {
                logits = z;
            } else {
                activations.push(z.into_iter().map(|v| v.max(T::zero())).collect());
            }
        }
        let probs = softmax(&logits);
        Ok(ForwardCache { activations, probs })
    }

    /// Class probabilities and embedding-layer activations for one input.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let mut cache = self.forward_cached(x)?;
        let embedding = std::mem::take(&mut cache.activations[self.embedding_layer]);
        Ok((cache.probs, embedding))
    }

    /// Most probable class; ties go to the lowest class id.
    pub fn predict(&self, x: &[T]) -> Result<u32> {
        let (probs, _) = self.forward(x)?;
        let mut best = 0;
        for (c, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = c;
            }
        }
        Ok(best as u32)
    }

    /// Accumulates `scale * dLoss/dparams` into `grads`, given the loss
    /// gradient with respect to the logits.
    pub(crate) fn backward(&self, cache: &ForwardCache<T>, dlogits: &[T], scale: T, grads: &mut [T]) {
        let depth = self.layer_sizes.len() - 1;
        let mut delta: Vec<T> = dlogits.iter().map(|&g| g * scale).collect();
        for l in (1..=depth).rev() {
            let fan_in = self.layer_sizes[l - 1];
            let input = &cache.activations[l - 1];
            let (start, len) = self.weight_span(l);
            let (w, _) = self.layer(l);
            {
                let (gw, gb) = grads[start..start + len + delta.len()].split_at_mut(len);
                for (o, &d) in delta.iter().enumerate() {
                    gb[o] += d;
                    if d != T::zero() {
                        for (g, &xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                            *g += d * xi;
                        }
                    }
                }
            }
            if l > 1 {
                let mut prev = vec![T::zero(); fan_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d != T::zero() {
                        for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                            *p += d * wi;
                        }
                    }
                }
                // ReLU derivative; activations at exactly 0 get zero gradient.
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *p = T::zero();
                    }
                }
                delta = prev;
            }
        }
    }
}
