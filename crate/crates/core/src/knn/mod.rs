//! Exact k-nearest-neighbor search, label voting, and KNN label correction.
//!
//! Search is brute force: every query scans the full reference set with
//! double-precision accumulation and keeps the `k` best candidates in a
//! bounded max-heap. Candidates are ordered by `(distance, index)`, so equal
//! distances always resolve to the lower reference index and results are
//! identical for any thread count.

mod correct;
mod vote;

pub use correct::{correct_iterknn, correct_selknn, predict_deep_knn, select_reference, ReferenceQuota};
pub use vote::{vote, vote_hard, vote_soft, vote_weighted, TieRule, VoteConfig, VoteScheme};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::EmbeddingSet;
use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    L2,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Row in the reference set.
    pub index: usize,
    pub distance: f64,
}

/// Distance between two vectors.
pub fn distance<T: Scalar>(a: &[T], b: &[T], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    match metric {
        Metric::L2 => Ok(sq_l2(a.iter().map(|v| v.as_f64()), b.iter().map(|v| v.as_f64())).sqrt()),
        Metric::Cosine => {
            let na = norm(a.iter().map(|v| v.as_f64()));
            let nb = norm(b.iter().map(|v| v.as_f64()));
            if na == 0.0 || nb == 0.0 {
                return Err(Error::invalid("cosine distance of a zero vector"));
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
            Ok(cosine_from_parts(dot, na, nb))
        }
    }
}

#[inline]
fn sq_l2(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn norm(a: impl Iterator<Item = f64>) -> f64 {
    a.map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn cosine_from_parts(dot: f64, na: f64, nb: f64) -> f64 {
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Heap entry; the max element is the worst of the current best `k`.
#[derive(Clone, Copy)]
struct Candidate {
    score: f64,
    index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.total_cmp(&other.score).then(self.index.cmp(&other.index))
    }
}

/// Reference set converted once to `f64`, with row norms for cosine.
pub(crate) struct SearchIndex {
    dim: usize,
    rows: Vec<f64>,
    norms: Vec<f64>,
    metric: Metric,
}

impl SearchIndex {
    pub(crate) fn new<T: Scalar>(reference: &EmbeddingSet<T>, metric: Metric) -> Result<Self> {
        let rows: Vec<f64> = reference.as_slice().iter().map(|v| v.as_f64()).collect();
        let dim = reference.dim();
        let norms = match metric {
            Metric::L2 => Vec::new(),
            Metric::Cosine => {
                let norms: Vec<f64> = rows.chunks_exact(dim).map(|r| norm(r.iter().copied())).collect();
                if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                    return Err(Error::invalid(format!("reference row {i} is all zero under cosine metric")));
                }
                norms
            }
        };
        Ok(Self { dim, rows, norms, metric })
    }

    pub(crate) fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    /// `k` nearest rows to `query`, skipping `exclude`.
    pub(crate) fn search(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: query.len() });
        }
        let usable = self.len() - exclude.filter(|&e| e < self.len()).map_or(0, |_| 1);
        if k == 0 || k > usable {
            return Err(Error::invalid(format!(
                "k = {k} is out of range for {usable} usable reference points"
            )));
        }
        let qnorm = match self.metric {
            Metric::L2 => 0.0,
            Metric::Cosine => {
                let n = norm(query.iter().copied());
                if n == 0.0 {
                    return Err(Error::invalid("cosine query is an all-zero vector"));
                }
                n
            }
        };

        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (index, row) in self.rows.chunks_exact(self.dim).enumerate() {
            if Some(index) == exclude {
                continue;
            }
            let score = match self.metric {
                Metric::L2 => sq_l2(query.iter().copied(), row.iter().copied()),
                Metric::Cosine => {
                    let dot: f64 = query.iter().zip(row).map(|(a, b)| a * b).sum();
                    cosine_from_parts(dot, qnorm, self.norms[index])
                }
            };
            let cand = Candidate { score, index };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap holds k >= 1 items") {
                heap.pop();
                heap.push(cand);
            }
        }

        let sorted = heap.into_sorted_vec();
        Ok(sorted
            .into_iter()
            .map(|c| Neighbor {
                index: c.index,
                distance: match self.metric {
                    Metric::L2 => c.score.sqrt(),
                    Metric::Cosine => c.score,
                },
            })
            .collect())
    }

    /// Runs one search per query in parallel; output order follows `queries`.
    pub(crate) fn search_many<T: Scalar>(
        &self,
        queries: &EmbeddingSet<T>,
        rows: &[usize],
        k: usize,
        exclude: impl Fn(usize) -> Option<usize> + Sync,
    ) -> Result<Vec<Vec<Neighbor>>> {
        rows.par_iter()
            .map(|&q| {
                let query: Vec<f64> = queries.row(q).iter().map(|v| v.as_f64()).collect();
                self.search(&query, k, exclude(q))
            })
            .collect()
    }
}

/// The `k` nearest reference rows to `query`, ascending by distance.
pub fn knn_query<T: Scalar>(
    reference: &EmbeddingSet<T>,
    query: &[T],
    k: usize,
    metric: Metric,
    exclude: Option<usize>,
) -> Result<Vec<Neighbor>> {
    let index = SearchIndex::new(reference, metric)?;
    let q: Vec<f64> = query.iter().map(|v| v.as_f64()).collect();
    index.search(&q, k, exclude)
}
