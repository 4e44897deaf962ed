//! Synthetic label corruption and label-disagreement measurement.
//!
//! Each sample's coin flip comes from its own `(seed, index)` stream, so the
//! corrupted label of sample `i` is independent of array order and of any
//! parallel split of the work.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, domain};
use crate::ClassId;

/// Class-to-class corruption map for asymmetric noise.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transitions(BTreeMap<ClassId, ClassId>);

impl Transitions {
    pub fn new(pairs: impl IntoIterator<Item = (ClassId, ClassId)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (src, dst) in pairs {
            if src == dst {
                return Err(Error::invalid(format!("transition {src}:{dst} maps a class to itself")));
            }
            if map.insert(src, dst).is_some() {
                return Err(Error::invalid(format!("class {src} has more than one transition target")));
            }
        }
        Ok(Self(map))
    }

    pub fn get(&self, class: ClassId) -> Option<ClassId> {
        self.0.get(&class).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, ClassId)> + '_ {
        self.0.iter().map(|(&s, &t)| (s, t))
    }

    /// Largest class id mentioned, as source or target.
    pub fn max_class(&self) -> Option<ClassId> {
        self.iter().flat_map(|(s, t)| [s, t]).max()
    }

    /// Parses `"source:target"` pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[S]) -> Result<Self> {
        let parsed = pairs
            .iter()
            .map(|p| {
                let p = p.as_ref();
                let (s, t) = p
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("transition {p:?} is not source:target")))?;
                let parse = |x: &str| {
                    x.trim()
                        .parse::<ClassId>()
                        .map_err(|_| Error::invalid(format!("bad class id {x:?} in transition {p:?}")))
                };
                Ok((parse(s)?, parse(t)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(parsed)
    }
}

impl fmt::Display for Transitions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(s, t)| format!("{s}:{t}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Builtin class transitions: `mnist` and `cifar10` (airplane=0 .. truck=9).
pub fn builtin_transitions(name: &str) -> Result<Transitions> {
    match name {
        "mnist" => Transitions::new([(7, 1), (2, 7), (5, 6), (6, 5), (3, 8)]),
        // truck->automobile, bird->airplane, cat<->dog, deer->horse
        "cifar10" => Transitions::new([(9, 1), (2, 0), (3, 5), (5, 3), (4, 7)]),
        other => Err(Error::invalid(format!("unknown transition set {other:?}"))),
    }
}

impl FromStr for Transitions {
    type Err = Error;

    /// A builtin name, or a comma-separated list of `source:target` pairs.
    fn from_str(s: &str) -> Result<Self> {
        if s.contains(':') {
            let pairs: Vec<&str> = s.split(',').filter(|p| !p.trim().is_empty()).collect();
            Self::from_pairs(&pairs)
        } else {
            builtin_transitions(s.trim())
        }
    }
}

/// Transition list as it appears in configuration: a builtin name or pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransitionSource {
    Builtin(String),
    Pairs(Vec<String>),
}

impl TransitionSource {
    pub fn resolve(&self) -> Result<Transitions> {
        match self {
            TransitionSource::Builtin(name) => name.parse(),
            TransitionSource::Pairs(pairs) => Transitions::from_pairs(pairs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub level: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transitions: Option<TransitionSource>,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        check_level(self.level)?;
        match (self.kind, &self.transitions) {
            (NoiseKind::Symmetric, Some(t)) if !t.resolve()?.is_empty() => {
                Err(Error::invalid("symmetric noise takes no transitions"))
            }
            (NoiseKind::Asymmetric, None) => Err(Error::invalid("asymmetric noise requires transitions")),
            (NoiseKind::Asymmetric, Some(t)) => t.resolve().map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Corrupts `labels` according to this spec.
    pub fn apply(&self, labels: &[ClassId], num_classes: usize) -> Result<Vec<ClassId>> {
        self.validate()?;
        match self.kind {
            NoiseKind::Symmetric => inject_symmetric(labels, num_classes, self.level, self.seed),
            NoiseKind::Asymmetric => {
                let t = self.transitions.as_ref().expect("validated").resolve()?;
                if let Some(m) = t.max_class().filter(|&m| m as usize >= num_classes) {
                    return Err(Error::invalid(format!(
                        "transition mentions class {m} but dataset has {num_classes} classes"
                    )));
                }
                inject_asymmetric(labels, &t, self.level, self.seed)
            }
        }
    }
}

fn check_level(level: f64) -> Result<()> {
    if (0.0..=1.0).contains(&level) {
        Ok(())
    } else {
        Err(Error::invalid(format!("level out of range: {level} not in [0, 1]")))
    }
}

/// Flips each label with probability `level` to one of the other `C-1`
/// classes, chosen uniformly.
pub fn inject_symmetric(labels: &[ClassId], num_classes: usize, level: f64, seed: u64) -> Result<Vec<ClassId>> {
    check_level(level)?;
    if num_classes < 2 {
        return Err(Error::invalid("symmetric noise needs at least 2 classes"));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y as usize >= num_classes {
                return Err(Error::invalid(format!("label {y} at {i} out of range")));
            }
            let mut rng = rng::stream(seed, domain::NOISE, i as u64);
            if rng.random::<f64>() < level {
                let r = rng.random_range(0..num_classes as ClassId - 1);
                Ok(if r >= y { r + 1 } else { r })
            } else {
                Ok(y)
            }
        })
        .collect()
}

/// Replaces each label that is a transition source by its target with
/// probability `level`.
pub fn inject_asymmetric(labels: &[ClassId], transitions: &Transitions, level: f64, seed: u64) -> Result<Vec<ClassId>> {
    check_level(level)?;
    if let Some((s, _)) = transitions.iter().find(|(s, t)| s == t) {
        return Err(Error::invalid(format!("transition for class {s} targets itself")));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| match transitions.get(y) {
            Some(target) => {
                let mut rng = rng::stream(seed, domain::NOISE, i as u64);
                if rng.random::<f64>() < level {
                    target
                } else {
                    y
                }
            }
            None => y,
        })
        .collect())
}

/// Fraction of positions where the two label arrays disagree.
pub fn label_error_rate(a: &[ClassId], b: &[ClassId]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.is_empty() {
        return Err(Error::invalid("cannot measure error rate of empty label arrays"));
    }
    let diff = a.iter().zip(b).filter(|(x, y)| x != y).count();
    Ok(diff as f64 / a.len() as f64)
}
