//! Concept tree with synonyms, hop distance and reference-phenotype choice.
//!
//! Trees are read from a tab-separated file with three record kinds:
//!
//! ```text
//! NODE<TAB>id<TAB>preferred_name
//! EDGE<TAB>child<TAB>parent
//! SYN<TAB>id<TAB>synonym
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Several roots are
//! allowed, so a file may describe a forest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const TOY_ONTOLOGY: &str = include_str!("../data/toy_ontology.tsv");

#[derive(Error, Debug)]
pub enum OntologyError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty concept id")]
    EmptyId,

    #[error("unknown concept {0}")]
    UnknownConcept(ConceptId),

    #[error("{0} and {1} are in different trees")]
    Unreachable(ConceptId, ConceptId),

    #[error("no candidate reference concept is reachable from {0}")]
    NoReachableCandidate(ConceptId),

    #[error("parent relation has a cycle through {0}")]
    Cycle(ConceptId),

    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Concept identifier, shaped like a UMLS CUI (`C0038454`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ConceptId(String);

impl ConceptId {
    pub fn new(id: impl Into<String>) -> Result<Self, OntologyError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(OntologyError::EmptyId);
        }
        Ok(ConceptId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ConceptId {
    type Error = OntologyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        ConceptId::new(value)
    }
}

impl From<ConceptId> for String {
    fn from(id: ConceptId) -> String {
        id.0
    }
}

impl FromStr for ConceptId {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConceptId::new(s)
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Immutable concept forest. Every non-root node has exactly one parent.
#[derive(Debug, Clone, Default)]
pub struct ConceptTree {
    labels: BTreeMap<ConceptId, String>,
    parent: HashMap<ConceptId, ConceptId>,
    synonyms: BTreeMap<ConceptId, BTreeSet<String>>,
    // lowercased surface -> concept; preferred names and synonyms
    lookup: HashMap<String, ConceptId>,
}

impl ConceptTree {
    /// The bundled ~70-node toy tree used by tests and examples.
    pub fn toy() -> Self {
        Self::from_tsv_str(TOY_ONTOLOGY).expect("bundled toy ontology is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv_str(&text)
    }

    pub fn from_tsv_str(text: &str) -> Result<Self, OntologyError> {
        let mut labels = BTreeMap::new();
        let mut edges = Vec::new();
        let mut syns = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let raw = raw.trim_end_matches('\r');
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            let parse_err = |message: String| OntologyError::Parse { line, message };
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let id = ConceptId::new(fields[1]).map_err(|e| parse_err(e.to_string()))?;
            match fields[0] {
                "NODE" => {
                    if labels.insert(id.clone(), fields[2].to_string()).is_some() {
                        return Err(parse_err(format!("duplicate node {id}")));
                    }
                }
                "EDGE" => {
                    let parent = ConceptId::new(fields[2]).map_err(|e| parse_err(e.to_string()))?;
                    edges.push((line, id, parent));
                }
                "SYN" => syns.push((line, id, fields[2].to_string())),
                other => return Err(parse_err(format!("unknown record kind {other:?}"))),
            }
        }

        let mut parent = HashMap::new();
        for (line, child, par) in edges {
            for c in [&child, &par] {
                if !labels.contains_key(c) {
                    return Err(OntologyError::Parse {
                        line,
                        message: format!("edge references undeclared node {c}"),
                    });
                }
            }
            if child == par {
                return Err(OntologyError::Cycle(child));
            }
            if parent.insert(child.clone(), par).is_some() {
                return Err(OntologyError::Parse {
                    line,
                    message: format!("{child} has more than one parent"),
                });
            }
        }

        let mut synonyms: BTreeMap<ConceptId, BTreeSet<String>> = BTreeMap::new();
        for (line, id, syn) in syns {
            if !labels.contains_key(&id) {
                return Err(OntologyError::Parse {
                    line,
                    message: format!("synonym for undeclared node {id}"),
                });
            }
            synonyms.entry(id).or_default().insert(syn);
        }

        let mut tree = ConceptTree {
            labels,
            parent,
            synonyms,
            lookup: HashMap::new(),
        };
        tree.check_acyclic()?;
        tree.build_lookup();
        Ok(tree)
    }

    fn check_acyclic(&self) -> Result<(), OntologyError> {
        let limit = self.labels.len();
        for start in self.parent.keys() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parent.get(cur) {
                steps += 1;
                if steps > limit {
                    return Err(OntologyError::Cycle(start.clone()));
                }
                cur = p;
            }
        }
        Ok(())
    }

    fn build_lookup(&mut self) {
        // preferred names win over synonyms on collision; first id wins otherwise
        for (id, syns) in &self.synonyms {
            for s in syns {
                self.lookup
                    .entry(s.to_lowercase())
                    .or_insert_with(|| id.clone());
            }
        }
        for (id, label) in &self.labels {
            self.lookup.insert(label.to_lowercase(), id.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, id: &ConceptId) -> bool {
        self.labels.contains_key(id)
    }

    pub fn label(&self, id: &ConceptId) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn parent(&self, id: &ConceptId) -> Option<&ConceptId> {
        self.parent.get(id)
    }

    pub fn concepts(&self) -> impl Iterator<Item = &ConceptId> {
        self.labels.keys()
    }

    pub fn synonyms(&self, id: &ConceptId) -> impl Iterator<Item = &str> {
        self.synonyms
            .get(id)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// Case-insensitive lookup over preferred names and synonyms.
    pub fn synonym_concept(&self, surface: &str) -> Option<&ConceptId> {
        self.lookup.get(&surface.trim().to_lowercase())
    }

    /// Ancestors of `id` starting with `id` itself, ending at its root.
    fn ancestors<'a>(&'a self, id: &'a ConceptId) -> impl Iterator<Item = &'a ConceptId> + 'a {
        std::iter::successors(Some(id), move |c| self.parent.get(*c))
    }

    /// Number of edges on the tree path between `a` and `b`.
    pub fn tree_distance(&self, a: &ConceptId, b: &ConceptId) -> Result<usize, OntologyError> {
        for c in [a, b] {
            if !self.contains(c) {
                return Err(OntologyError::UnknownConcept(c.clone()));
            }
        }
        let depth_from_a: HashMap<&ConceptId, usize> =
            self.ancestors(a).enumerate().map(|(d, c)| (c, d)).collect();
        for (db, c) in self.ancestors(b).enumerate() {
            if let Some(da) = depth_from_a.get(c) {
                return Ok(da + db);
            }
        }
        Err(OntologyError::Unreachable(a.clone(), b.clone()))
    }

    /// Member of `candidates` nearest to `target`. Ties go to the smallest id.
    /// Candidates that are unknown or in another tree are skipped.
    pub fn choose_reference_phenotype<'a, I>(
        &self,
        target: &ConceptId,
        candidates: I,
    ) -> Result<ConceptId, OntologyError>
    where
        I: IntoIterator<Item = &'a ConceptId>,
    {
        if !self.contains(target) {
            return Err(OntologyError::UnknownConcept(target.clone()));
        }
        candidates
            .into_iter()
            .filter_map(|c| self.tree_distance(target, c).ok().map(|d| (d, c)))
            .min()
            .map(|(_, c)| c.clone())
            .ok_or_else(|| OntologyError::NoReachableCandidate(target.clone()))
    }
}
