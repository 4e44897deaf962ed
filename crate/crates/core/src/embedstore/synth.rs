use rand::Rng;
use rand_distr::StandardNormal;

use super::{EmbeddingSet, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::{ClassId, Scalar};

const ATTEMPTS_PER_RADIUS: usize = 1000;

/// Isotropic unit-variance Gaussian clusters, one per class, class-major order.
///
/// Centers are drawn uniformly from a ball and accepted only if they are at
/// least `separation` away from every earlier center; the ball grows when
/// placement keeps failing, so any `(C, d)` combination terminates.
pub fn synth_gaussian<T: Scalar>(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    if num_classes < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::invalid("per_class and dim must be at least 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be positive, got {separation}")));
    }

    let mut rng = rng::stream(seed, domain::SYNTH, 0);
    let centers = place_centers(&mut rng, num_classes, dim, separation);

    let mut data = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(T::from_f64_lossy(mu + z));
            }
            labels.push(c as ClassId);
        }
    }
    let emb = EmbeddingSet::new(labels.len(), dim, data)?;
    LabeledDataset::from_clean(emb, labels, num_classes)
}

fn place_centers(rng: &mut impl Rng, count: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut radius = separation;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut failures = 0;
    while centers.len() < count {
        let candidate = sample_ball(rng, dim, radius);
        let ok = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= separation
        });
        if ok {
            centers.push(candidate);
            failures = 0;
        } else {
            failures += 1;
            if failures == ATTEMPTS_PER_RADIUS {
                radius *= 1.25;
                failures = 0;
            }
        }
    }
    centers
}

fn sample_ball(rng: &mut impl Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
            return v.into_iter().map(|x| x / norm * r).collect();
        }
    }
}
