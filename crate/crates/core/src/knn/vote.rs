use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Neighbor;
use crate::error::{Error, Result};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteScheme {
    #[default]
    HardMajority,
    DistanceWeighted,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Tied class holding the single nearest neighbor; then lowest class id.
    #[default]
    NearestNeighborWins,
    LowestClassId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteConfig {
    pub scheme: VoteScheme,
    pub tie_rule: TieRule,
    /// Offset in the distance weight `1 / (distance + epsilon)`.
    pub epsilon: f64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { scheme: VoteScheme::HardMajority, tie_rule: TieRule::NearestNeighborWins, epsilon: 1e-8 }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon > 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!("vote epsilon must be positive, got {}", self.epsilon)))
        }
    }
}

fn label_of(labels: &[ClassId], n: &Neighbor) -> ClassId {
    labels[n.index]
}

/// Picks the best-scoring class, breaking exact score ties by `rule`.
fn resolve(scores: &BTreeMap<ClassId, f64>, neighbors: &[Neighbor], labels: &[ClassId], rule: TieRule) -> ClassId {
    let best = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut tied = scores.iter().filter(|(_, &s)| s == best).map(|(&c, _)| c);
    let first = tied.next().expect("at least one class scored");
    match rule {
        TieRule::LowestClassId => first,
        TieRule::NearestNeighborWins => {
            // BTreeMap order makes `first` the lowest id, so strict `<` keeps
            // the lowest id among classes whose nearest member is equally close.
            let nearest = |c: ClassId| {
                neighbors
                    .iter()
                    .filter(|n| label_of(labels, n) == c)
                    .map(|n| n.distance)
                    .fold(f64::INFINITY, f64::min)
            };
            let mut winner = (first, nearest(first));
            for c in tied {
                let d = nearest(c);
                if d < winner.1 {
                    winner = (c, d);
                }
            }
            winner.0
        }
    }
}

fn tally(neighbors: &[Neighbor], labels: &[ClassId], weight: impl Fn(&Neighbor) -> f64) -> BTreeMap<ClassId, f64> {
    assert!(!neighbors.is_empty(), "vote over an empty neighbor set");
    let mut scores = BTreeMap::new();
    for n in neighbors {
        *scores.entry(label_of(labels, n)).or_insert(0.0) += weight(n);
    }
    scores
}

/// Majority vote over neighbor labels.
pub fn vote_hard(neighbors: &[Neighbor], labels: &[ClassId], config: &VoteConfig) -> ClassId {
    let scores = tally(neighbors, labels, |_| 1.0);
    resolve(&scores, neighbors, labels, config.tie_rule)
}

/// Vote where each neighbor counts `1 / (distance + epsilon)`.
pub fn vote_weighted(neighbors: &[Neighbor], labels: &[ClassId], config: &VoteConfig) -> ClassId {
    let eps = config.epsilon;
    let scores = tally(neighbors, labels, |n| 1.0 / (n.distance + eps));
    resolve(&scores, neighbors, labels, config.tie_rule)
}

/// Fraction of neighbors carrying each class.
pub fn vote_soft(neighbors: &[Neighbor], labels: &[ClassId], num_classes: usize) -> Vec<f64> {
    assert!(!neighbors.is_empty(), "vote over an empty neighbor set");
    let mut p = vec![0.0; num_classes];
    for n in neighbors {
        p[label_of(labels, n) as usize] += 1.0;
    }
    let k = neighbors.len() as f64;
    p.iter_mut().for_each(|v| *v /= k);
    p
}

/// Hard label under the configured scheme.
pub fn vote(neighbors: &[Neighbor], labels: &[ClassId], config: &VoteConfig) -> ClassId {
    match config.scheme {
        VoteScheme::HardMajority => vote_hard(neighbors, labels, config),
        VoteScheme::DistanceWeighted => vote_weighted(neighbors, labels, config),
        VoteScheme::Soft => {
            let num_classes = neighbors.iter().map(|n| label_of(labels, n) as usize + 1).max().unwrap_or(1);
            let probs = vote_soft(neighbors, labels, num_classes);
            let scores: BTreeMap<ClassId, f64> = probs
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(c, &p)| (c as ClassId, p))
                .collect();
            resolve(&scores, neighbors, labels, config.tie_rule)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nb(distances: &[f64]) -> Vec<Neighbor> {
        distances.iter().enumerate().map(|(index, &distance)| Neighbor { index, distance }).collect()
    }

    #[test]
    fn strict_majority() {
        let cfg = VoteConfig::default();
        assert_eq!(vote_hard(&nb(&[0.1, 0.2, 0.3]), &[1, 1, 2], &cfg), 1);
    }

    #[test]
    fn nearest_neighbor_breaks_tie() {
        let cfg = VoteConfig::default();
        assert_eq!(vote_hard(&nb(&[0.5, 0.9]), &[2, 1], &cfg), 2);
        let low = VoteConfig { tie_rule: TieRule::LowestClassId, ..cfg };
        assert_eq!(vote_hard(&nb(&[0.5, 0.9]), &[2, 1], &low), 1);
    }

    #[test]
    fn equidistant_tie_falls_back_to_lowest_id() {
        let cfg = VoteConfig::default();
        assert_eq!(vote_hard(&nb(&[0.5, 0.5]), &[3, 1], &cfg), 1);
    }

    #[test]
    fn weighted_examples() {
        let cfg = VoteConfig::default();
        assert_eq!(vote_weighted(&nb(&[2.0]), &[4], &cfg), 4);
        assert_eq!(vote_weighted(&nb(&[0.1, 10.0, 10.0]), &[0, 1, 1], &cfg), 0);
        assert_eq!(vote_hard(&nb(&[0.1, 10.0, 10.0]), &[0, 1, 1], &cfg), 1);
    }

    #[test]
    fn soft_examples() {
        let p = vote_soft(&nb(&[0.1, 0.2, 0.3]), &[1, 1, 2], 3);
        assert_eq!(p, vec![0.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(vote_soft(&nb(&[0.1, 0.2]), &[2, 2], 3), vec![0.0, 0.0, 1.0]);
        let cfg = VoteConfig { scheme: VoteScheme::Soft, ..Default::default() };
        assert_eq!(vote(&nb(&[0.5, 0.9]), &[2, 1], &cfg), 2);
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(VoteConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
    }
}
