//! Splitting a new task's mentions into p-known and p-unknown sets.
//!
//! A reference vector is taken from the mark-up embeddings of the task
//! phenotype, or of the nearest trained phenotype in the concept tree when
//! the task phenotype was never trained. Each cluster whose centroid has
//! cosine similarity at least `threshold` to the reference joins the
//! p-known set wholesale; noise mentions are judged one by one. Every
//! p-unknown cluster gets up to `e` representatives for targeted validation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbeddingModel};
use crate::mention_space::{clustered_percentage, ClusterSet, MentionVector};
use crate::metrics::separate_power;
use crate::ontology::{ConceptId, ConceptTree, OntologyError};

pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_E: usize = 3;

#[derive(Error, Debug)]
pub enum GuidanceError {
    #[error("model has no trained phenotypes")]
    NoTrainedPhenotypes,

    #[error(transparent)]
    Ontology(#[from] OntologyError),

    #[error("no mark-up vector for {concept} under strategy {strategy:?}")]
    NoMarkupVectors {
        concept: ConceptId,
        strategy: ReferenceStrategy,
    },

    #[error("similarity threshold must lie in [-1, 1], got {0}")]
    BadThreshold(f64),

    #[error("e must be at least 1")]
    BadE,

    #[error("no vector supplied for noise mention {0}")]
    MissingNoiseVector(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReferenceStrategy {
    /// Mean of the concept's mark-up vectors over every context present.
    #[default]
    AverageContexts,
    /// The concept's positive-context mark-up vector.
    PositiveOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub task_concept: ConceptId,
    pub reference_concept: ConceptId,
    pub vector: Vec<f64>,
}

/// Reference vector for the task phenotype `task`.
pub fn reference_vector(
    model: &EmbeddingModel,
    tree: &ConceptTree,
    task: &ConceptId,
    strategy: ReferenceStrategy,
) -> Result<Reference, GuidanceError> {
    let trained = model.trained_phenotypes();
    if trained.is_empty() {
        return Err(GuidanceError::NoTrainedPhenotypes);
    }
    let chosen = if trained.contains(task) {
        task.clone()
    } else {
        tree.choose_reference_phenotype(task, trained)?
    };
    let vector = concept_vector(model, &chosen, strategy)?;
    Ok(Reference {
        task_concept: task.clone(),
        reference_concept: chosen,
        vector,
    })
}

/// Vector of one trained concept under `strategy`.
pub fn concept_vector(
    model: &EmbeddingModel,
    concept: &ConceptId,
    strategy: ReferenceStrategy,
) -> Result<Vec<f64>, GuidanceError> {
    let vectors = model.markup_vectors(concept);
    let missing = || GuidanceError::NoMarkupVectors {
        concept: concept.clone(),
        strategy,
    };
    match strategy {
        ReferenceStrategy::AverageContexts => {
            let rows: Vec<&[f64]> = vectors.iter().map(|(_, v)| *v).collect();
            crate::mention_space::centroid(&rows).map_err(|_| missing())
        }
        ReferenceStrategy::PositiveOnly => vectors
            .iter()
            .find(|(ctx, _)| *ctx == crate::corpus::Context::Pos)
            .map(|(_, v)| v.to_vec())
            .ok_or_else(missing),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativeStrategy {
    /// First `e` members in mention-id order.
    #[default]
    MentionIdOrder,
    /// `e` members drawn at random with the given seed.
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub threshold: f64,
    pub e: usize,
    pub representatives: RepresentativeStrategy,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        ClassifyParams {
            threshold: DEFAULT_THRESHOLD,
            e: DEFAULT_E,
            representatives: RepresentativeStrategy::MentionIdOrder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownCluster {
    pub cluster_id: usize,
    pub members: Vec<String>,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownCluster {
    pub cluster_id: usize,
    pub members: Vec<String>,
    pub representatives: Vec<String>,
    /// `None` when the centroid had zero norm.
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidancePartition {
    pub task_concept: ConceptId,
    pub reference_concept: ConceptId,
    pub reference_vector: Vec<f64>,
    pub similarity_threshold: f64,
    pub e: usize,
    /// Members of every p-known cluster.
    pub p_known: BTreeSet<String>,
    pub known_clusters: Vec<KnownCluster>,
    pub p_unknown: Vec<UnknownCluster>,
    pub singles_known: BTreeSet<String>,
    pub singles_unknown: BTreeSet<String>,
    /// Similarity of every single mention; `None` when it could not be computed.
    pub single_similarity: BTreeMap<String, Option<f64>>,
    pub diagnostics: Vec<String>,
}

impl GuidancePartition {
    /// Every mention covered by the partition.
    pub fn all_mentions(&self) -> impl Iterator<Item = &String> {
        self.p_known
            .iter()
            .chain(self.p_unknown.iter().flat_map(|c| c.members.iter()))
            .chain(self.singles_known.iter())
            .chain(self.singles_unknown.iter())
    }

    pub fn total(&self) -> usize {
        self.all_mentions().count()
    }

    /// Mentions that need no validation.
    pub fn known_mentions(&self) -> impl Iterator<Item = &String> {
        self.p_known.iter().chain(self.singles_known.iter())
    }

    /// Sizes of the p-unknown groups: clusters, then one per unknown single.
    pub fn unknown_group_sizes(&self) -> Vec<usize> {
        self.p_unknown
            .iter()
            .map(|c| c.members.len())
            .chain(std::iter::repeat_n(1, self.singles_unknown.len()))
            .collect()
    }

    /// Send mentions that could not be vectorized to p-unknown singles.
    pub fn route_unrepresentable(&mut self, ids: &[String]) {
        for id in ids {
            self.singles_unknown.insert(id.clone());
            self.single_similarity.insert(id.clone(), None);
            self.diagnostics.push(format!(
                "{id}: no in-vocabulary context, routed to p-unknown"
            ));
        }
    }

    /// Human-readable triage list, one row per mention.
    pub fn triage_tsv(&self) -> String {
        let mut rows: Vec<(String, &str, String, String, bool)> = Vec::new();
        let sim = |s: Option<f64>| s.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        for c in &self.known_clusters {
            for m in &c.members {
                rows.push((
                    m.clone(),
                    "KNOWN",
                    c.cluster_id.to_string(),
                    sim(Some(c.similarity)),
                    false,
                ));
            }
        }
        for c in &self.p_unknown {
            let reps: BTreeSet<&String> = c.representatives.iter().collect();
            for m in &c.members {
                rows.push((
                    m.clone(),
                    "UNKNOWN",
                    c.cluster_id.to_string(),
                    sim(c.similarity),
                    reps.contains(m),
                ));
            }
        }
        for (set, verdict) in [
            (&self.singles_known, "KNOWN"),
            (&self.singles_unknown, "UNKNOWN"),
        ] {
            for m in set {
                let s = self.single_similarity.get(m).copied().flatten();
                // an unknown single is its own group, so it represents itself
                rows.push((m.clone(), verdict, "-".into(), sim(s), verdict == "UNKNOWN"));
            }
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::from("mention_id\tverdict\tcluster_id\tsimilarity\trepresentative\n");
        for (id, verdict, cid, s, rep) in rows {
            let _ = writeln!(
                out,
                "{id}\t{verdict}\t{cid}\t{s}\t{}",
                if rep { "yes" } else { "no" }
            );
        }
        out
    }
}

fn pick_representatives(
    members: &[String],
    e: usize,
    strategy: RepresentativeStrategy,
    cluster_id: usize,
) -> Vec<String> {
    let take = members.len().min(e);
    match strategy {
        RepresentativeStrategy::MentionIdOrder => members[..take].to_vec(),
        RepresentativeStrategy::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(cluster_id as u64);
            let mut chosen: Vec<String> =
                members.choose_multiple(&mut rng, take).cloned().collect();
            chosen.sort();
            chosen
        }
    }
}

/// Classify clusters and noise mentions against `reference`.
pub fn classify(
    cs: &ClusterSet,
    noise_vectors: &[MentionVector],
    reference: &Reference,
    params: &ClassifyParams,
) -> Result<GuidancePartition, GuidanceError> {
    if !(-1.0..=1.0).contains(&params.threshold) {
        return Err(GuidanceError::BadThreshold(params.threshold));
    }
    if params.e == 0 {
        return Err(GuidanceError::BadE);
    }
    let ref_vec = &reference.vector;
    let mut part = GuidancePartition {
        task_concept: reference.task_concept.clone(),
        reference_concept: reference.reference_concept.clone(),
        reference_vector: ref_vec.clone(),
        similarity_threshold: params.threshold,
        e: params.e,
        p_known: BTreeSet::new(),
        known_clusters: Vec::new(),
        p_unknown: Vec::new(),
        singles_known: BTreeSet::new(),
        singles_unknown: BTreeSet::new(),
        single_similarity: BTreeMap::new(),
        diagnostics: Vec::new(),
    };

    for c in &cs.clusters {
        let mut members = c.members.clone();
        members.sort();
        let sim = cosine(&c.centroid, ref_vec);
        match sim {
            Some(s) if s >= params.threshold => {
                part.p_known.extend(members.iter().cloned());
                part.known_clusters.push(KnownCluster {
                    cluster_id: c.id,
                    members,
                    similarity: s,
                });
            }
            _ => {
                if sim.is_none() {
                    part.diagnostics.push(format!(
                        "cluster {}: zero-norm vector, forced p-unknown",
                        c.id
                    ));
                }
                let representatives =
                    pick_representatives(&members, params.e, params.representatives, c.id);
                part.p_unknown.push(UnknownCluster {
                    cluster_id: c.id,
                    members,
                    representatives,
                    similarity: sim,
                });
            }
        }
    }

    let by_id: HashMap<&str, &MentionVector> = noise_vectors
        .iter()
        .map(|v| (v.mention_id.as_str(), v))
        .collect();
    for id in &cs.noise {
        let v = by_id
            .get(id.as_str())
            .ok_or_else(|| GuidanceError::MissingNoiseVector(id.clone()))?;
        let sim = cosine(&v.vector, ref_vec);
        part.single_similarity.insert(id.clone(), sim);
        match sim {
            Some(s) if s >= params.threshold => {
                part.singles_known.insert(id.clone());
            }
            _ => {
                if sim.is_none() {
                    part.diagnostics
                        .push(format!("{id}: zero-norm vector, forced p-unknown"));
                }
                part.singles_unknown.insert(id.clone());
            }
        }
    }
    Ok(part)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub one_pattern_per_mention: bool,
    pub clustered_percentage: f64,
    /// Separate Power on incorrect mentions; absent without gold labels.
    pub sp: Option<f64>,
}

/// Check the pattern-model assumptions on a clustering. SP treats every
/// noise mention as a group of one.
pub fn assumption_report(
    cs: &ClusterSet,
    gold: Option<&HashMap<String, bool>>,
) -> AssumptionReport {
    let sp = gold.and_then(|gold| {
        let groups = cs.groups();
        let labels: HashMap<String, bool> = groups
            .iter()
            .flatten()
            .map(|m| gold.get(*m).map(|&g| (m.to_string(), g)))
            .collect::<Option<_>>()?;
        // undefined without any incorrect mention
        separate_power(&groups, &labels, false).ok()
    });
    AssumptionReport {
        one_pattern_per_mention: cs.is_partition(),
        clustered_percentage: clustered_percentage(cs),
        sp,
    }
}
