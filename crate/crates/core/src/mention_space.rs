//! Mention vectors and their density-based clustering.
//!
//! A mention is represented by the mean embedding of its own tokens and the
//! `k` tokens on either side. Mentions are then clustered with DBSCAN on
//! Euclidean distance; each cluster stands for one language pattern.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    mention_tokens, tokenize, CorpusError, Document, MentionAnnotation, TokenSequence,
};
use crate::embedding::EmbeddingModel;

pub const DEFAULT_HALF_WINDOW: usize = 5;
pub const DEFAULT_MIN_PTS: usize = 3;

#[derive(Error, Debug)]
pub enum SpaceError {
    #[error("mention {0} has no in-vocabulary token in its window")]
    Unrepresentable(String),

    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error("vector {mention_id} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        mention_id: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate mention id {0}")]
    DuplicateMention(String),

    #[error("eps must be positive and finite, got {0}")]
    BadEps(f64),

    #[error("eps quantile must lie in [0, 1], got {0}")]
    BadQuantile(f64),

    #[error("fewer than {0} mention vectors")]
    TooFewPoints(usize),

    #[error("min_pts must be at least 1")]
    BadMinPts,

    #[error("centroid of an empty member list")]
    EmptyCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionVector {
    pub mention_id: String,
    pub vector: Vec<f64>,
    /// Share of window tokens that had no embedding.
    pub oov_fraction: f64,
}

pub fn vectorize_mention(
    model: &EmbeddingModel,
    seq: &TokenSequence,
    mention: &MentionAnnotation,
    k: usize,
) -> Result<MentionVector, SpaceError> {
    let span = mention_tokens(seq, mention)?;
    let lo = span.start.saturating_sub(k);
    let hi = (span.end + k).min(seq.tokens.len());
    let window = &seq.tokens[lo..hi];

    let mut sum = vec![0.0; model.dim()];
    let mut found = 0usize;
    for tok in window {
        if let Some(v) = model.vector_of(&tok.surface) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            found += 1;
        }
    }
    if found == 0 {
        return Err(SpaceError::Unrepresentable(mention.mention_id.clone()));
    }
    let n = found as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(MentionVector {
        mention_id: mention.mention_id.clone(),
        vector: sum,
        oov_fraction: (window.len() - found) as f64 / window.len() as f64,
    })
}

/// Result of vectorizing a whole mention set.
#[derive(Debug, Clone, Default)]
pub struct Vectorized {
    /// In annotation order.
    pub vectors: Vec<MentionVector>,
    /// Mentions whose whole window was out of vocabulary.
    pub unrepresentable: Vec<String>,
}

/// Vectorize every annotation against its document. Runs in parallel;
/// output order follows `annotations`.
pub fn vectorize_all(
    model: &EmbeddingModel,
    docs: &[Document],
    annotations: &[MentionAnnotation],
    k: usize,
) -> Result<Vectorized, SpaceError> {
    let by_doc = crate::corpus::group_by_document(docs, annotations)?;
    let seqs: HashMap<&str, TokenSequence> = docs
        .par_iter()
        .filter(|d| by_doc.contains_key(d.id.as_str()))
        .map(|d| (d.id.as_str(), tokenize(&d.id, &d.text)))
        .collect();
    let results: Vec<Result<MentionVector, SpaceError>> = annotations
        .par_iter()
        .map(|a| vectorize_mention(model, &seqs[a.doc_id.as_str()], a, k))
        .collect();
    let mut out = Vectorized::default();
    for r in results {
        match r {
            Ok(v) => out.vectors.push(v),
            Err(SpaceError::Unrepresentable(id)) => out.unrepresentable.push(id),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    /// Sorted by mention id.
    pub members: Vec<String>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub eps: f64,
    pub min_pts: usize,
    pub clusters: Vec<Cluster>,
    /// Sorted by mention id.
    pub noise: Vec<String>,
}

impl ClusterSet {
    pub fn clustered_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    pub fn total(&self) -> usize {
        self.clustered_count() + self.noise.len()
    }

    /// Clusters followed by every noise point as its own singleton group.
    pub fn groups(&self) -> Vec<Vec<&str>> {
        self.clusters
            .iter()
            .map(|c| c.members.iter().map(String::as_str).collect())
            .chain(self.noise.iter().map(|n| vec![n.as_str()]))
            .collect()
    }

    /// True when no mention is listed twice across clusters and noise.
    pub fn is_partition(&self) -> bool {
        let mut seen = HashSet::new();
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter())
            .chain(self.noise.iter())
            .all(|m| seen.insert(m))
    }
}

pub fn clustered_percentage(cs: &ClusterSet) -> f64 {
    let total = cs.total();
    if total == 0 {
        0.0
    } else {
        cs.clustered_count() as f64 / total as f64
    }
}

/// Componentwise mean.
pub fn centroid<V: AsRef<[f64]>>(members: &[V]) -> Result<Vec<f64>, SpaceError> {
    let first = members.first().ok_or(SpaceError::EmptyCluster)?;
    let mut sum = vec![0.0; first.as_ref().len()];
    for m in members {
        for (s, x) in sum.iter_mut().zip(m.as_ref()) {
            *s += x;
        }
    }
    let n = members.len() as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Ok(sum)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// DBSCAN over Euclidean distance.
///
/// Points are scanned in mention-id order. A point is core when at least
/// `min_pts` points (itself included) lie within `eps`. Border points join
/// the first cluster that reaches them.
pub fn cluster_mentions(
    vectors: &[MentionVector],
    eps: f64,
    min_pts: usize,
) -> Result<ClusterSet, SpaceError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(SpaceError::BadEps(eps));
    }
    if min_pts == 0 {
        return Err(SpaceError::BadMinPts);
    }
    let mut order: Vec<&MentionVector> = vectors.iter().collect();
    order.sort_by(|a, b| a.mention_id.cmp(&b.mention_id));
    for pair in order.windows(2) {
        if pair[0].mention_id == pair[1].mention_id {
            return Err(SpaceError::DuplicateMention(pair[0].mention_id.clone()));
        }
    }
    if let Some(first) = order.first() {
        let dim = first.vector.len();
        if let Some(bad) = order.iter().find(|v| v.vector.len() != dim) {
            return Err(SpaceError::DimensionMismatch {
                mention_id: bad.mention_id.clone(),
                expected: dim,
                found: bad.vector.len(),
            });
        }
    }

    let n = order.len();
    let eps2 = eps * eps;
    let neighbours: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| squared_distance(&order[i].vector, &order[j].vector) <= eps2)
                .collect()
        })
        .collect();
    let is_core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= min_pts).collect();

    const UNASSIGNED: usize = usize::MAX;
    let mut label = vec![UNASSIGNED; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if label[start] != UNASSIGNED || !is_core[start] {
            continue;
        }
        let cid = members.len();
        let mut cluster = vec![start];
        label[start] = cid;
        let mut frontier = vec![start];
        while let Some(p) = frontier.pop() {
            for &q in &neighbours[p] {
                if label[q] == UNASSIGNED {
                    label[q] = cid;
                    cluster.push(q);
                    if is_core[q] {
                        frontier.push(q);
                    }
                }
            }
        }
        cluster.sort_unstable();
        members.push(cluster);
    }

    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            let vecs: Vec<&[f64]> = idx.iter().map(|&i| order[i].vector.as_slice()).collect();
            Ok(Cluster {
                id,
                members: idx.iter().map(|&i| order[i].mention_id.clone()).collect(),
                centroid: centroid(&vecs)?,
            })
        })
        .collect::<Result<Vec<_>, SpaceError>>()?;
    let noise = (0..n)
        .filter(|&i| label[i] == UNASSIGNED)
        .map(|i| order[i].mention_id.clone())
        .collect();
    Ok(ClusterSet {
        eps,
        min_pts,
        clusters,
        noise,
    })
}

/// Distance from every point to its `min_pts`-th nearest point, itself
/// included: the smallest eps at which that point becomes core.
pub fn core_distances(vectors: &[MentionVector], min_pts: usize) -> Result<Vec<f64>, SpaceError> {
    if min_pts == 0 {
        return Err(SpaceError::BadMinPts);
    }
    Ok(vectors
        .par_iter()
        .map(|a| {
            let mut d: Vec<f64> = vectors
                .iter()
                .map(|b| squared_distance(&a.vector, &b.vector))
                .collect();
            d.sort_by(f64::total_cmp);
            d.get(min_pts - 1).map_or(f64::INFINITY, |x| x.sqrt())
        })
        .collect())
}

/// The `q` quantile of the core distances, as a data-driven eps.
pub fn eps_at_quantile(
    vectors: &[MentionVector],
    min_pts: usize,
    q: f64,
) -> Result<f64, SpaceError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(SpaceError::BadQuantile(q));
    }
    let mut d: Vec<f64> = core_distances(vectors, min_pts)?
        .into_iter()
        .filter(|x| x.is_finite())
        .collect();
    if d.is_empty() {
        return Err(SpaceError::TooFewPoints(min_pts));
    }
    d.sort_by(f64::total_cmp);
    let rank = ((q * d.len() as f64).ceil() as usize).clamp(1, d.len());
    Ok(d[rank - 1].max(f64::MIN_POSITIVE))
}

/// `points` ascending eps values at the i/(points + 1) quantiles of the core
/// distances, i = 1..=points. The top of the range stays clear of the
/// largest core distance, which a single outlier can drive.
pub fn eps_grid(
    vectors: &[MentionVector],
    min_pts: usize,
    points: usize,
) -> Result<Vec<f64>, SpaceError> {
    let mut d: Vec<f64> = core_distances(vectors, min_pts)?
        .into_iter()
        .filter(|x| x.is_finite())
        .collect();
    if d.is_empty() || points == 0 {
        return Ok(Vec::new());
    }
    d.sort_by(f64::total_cmp);
    Ok((1..=points)
        .map(|i| {
            let rank = (i * d.len()).div_ceil(points + 1).max(1);
            d[rank - 1].max(f64::MIN_POSITIVE)
        })
        .collect())
}
