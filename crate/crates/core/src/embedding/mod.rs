//! Word and phenotype mark-up embeddings.
//!
//! Models are trained with CBOW over mark-up injected token sequences and
//! persisted in the plain-text word2vec layout: a `vocab_size dim` header
//! followed by one `token c1 .. c_dim` line per token. Training settings and
//! the trained phenotype list live in a JSON sidecar next to the vectors
//! (`<path>.meta.json`).

pub mod cbow;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_markup, Context, TokenSequence};
use crate::ontology::ConceptId;

#[derive(Error, Debug)]
pub enum EmbeddingError {
    #[error("empty effective vocabulary after min_count filtering")]
    EmptyVocabulary,

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("training failed: {0}")]
    Training(String),

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Sidecar { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub window: usize,
    pub epochs: usize,
    pub negative_samples: usize,
    /// Initial rate; decays linearly to 1e-4 of this value.
    pub learning_rate: f64,
    /// Minimum count for ordinary words.
    pub min_count: u64,
    /// Minimum count for mark-up tokens.
    pub min_count_markup: u64,
    /// Frequency subsampling threshold, applied to words only.
    pub subsample_threshold: f64,
    pub seed: u64,
    /// Subtract the mean input vector from every vector after training.
    pub center_vectors: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            window: 5,
            epochs: 5,
            negative_samples: 5,
            learning_rate: 0.025,
            min_count: 2,
            min_count_markup: 1,
            subsample_threshold: 1e-3,
            seed: 42,
            center_vectors: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.min_count == 0 || self.min_count_markup == 0 {
            return bad("min counts must be positive");
        }
        if !(self.subsample_threshold >= 0.0 && self.subsample_threshold.is_finite()) {
            return bad("subsample_threshold must be non-negative");
        }
        Ok(())
    }
}

/// How training work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// One worker, bit-reproducible for a fixed seed.
    Deterministic,
    /// Several workers updating shared parameters without locks.
    Parallel { workers: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    config: TrainConfig,
    trained_phenotypes: BTreeSet<ConceptId>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: TrainConfig,
    trained_phenotypes: BTreeSet<ConceptId>,
}

fn markup_concepts<'a>(tokens: impl Iterator<Item = &'a String>) -> BTreeSet<ConceptId> {
    tokens
        .filter_map(|t| parse_markup(t).ok())
        .map(|m| m.concept)
        .collect()
}

impl EmbeddingModel {
    /// Build a model from explicit vectors. `vectors` is row-major.
    pub fn from_parts(
        tokens: Vec<String>,
        dim: usize,
        vectors: Vec<f64>,
        config: TrainConfig,
    ) -> Result<Self, EmbeddingError> {
        if dim == 0 || vectors.len() != tokens.len() * dim {
            return Err(EmbeddingError::InvalidConfig(format!(
                "{} components for {} tokens of dim {dim}",
                vectors.len(),
                tokens.len()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::InvalidConfig(format!(
                "non-finite component in vector of {:?}",
                tokens[pos / dim]
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(EmbeddingError::InvalidConfig(format!(
                    "duplicate token {t:?}"
                )));
            }
        }
        let trained_phenotypes = markup_concepts(tokens.iter());
        Ok(EmbeddingModel {
            dim,
            tokens,
            index,
            vectors,
            config,
            trained_phenotypes,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Concepts with at least one mark-up vector in the vocabulary.
    pub fn trained_phenotypes(&self) -> &BTreeSet<ConceptId> {
        &self.trained_phenotypes
    }

    pub fn vector_of(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Mark-up vectors of `concept`, one per context seen in training.
    pub fn markup_vectors(&self, concept: &ConceptId) -> Vec<(Context, &[f64])> {
        Context::ALL
            .into_iter()
            .filter_map(|ctx| {
                let token = crate::corpus::render_markup(concept, ctx).rendered;
                self.vector_of(&token).map(|v| (ctx, v))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let io = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        writeln!(w, "{} {}", self.tokens.len(), self.dim).map_err(io)?;
        for (i, token) in self.tokens.iter().enumerate() {
            write!(w, "{token}").map_err(io)?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                // Display prints the shortest string that parses back exactly
                write!(w, " {v}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)?;

        let side = sidecar_path(path);
        let meta = Sidecar {
            config: self.config.clone(),
            trained_phenotypes: self.trained_phenotypes.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        std::fs::write(&side, json + "\n").map_err(|source| EmbeddingError::Io {
            path: side.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let fmt_err = |line: usize, message: String| EmbeddingError::Format {
            path: shown.clone(),
            line,
            message,
        };
        let file = File::open(path).map_err(|source| EmbeddingError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| fmt_err(1, "missing header".into()))?
            .map_err(|source| EmbeddingError::Io {
                path: shown.clone(),
                source,
            })?;
        let (vocab_size, dim) = parse_header(&header).map_err(|m| fmt_err(1, m))?;

        let mut tokens = Vec::with_capacity(vocab_size);
        let mut vectors = Vec::with_capacity(vocab_size * dim);
        for (idx, line) in lines.enumerate() {
            let lineno = idx + 2;
            let line = line.map_err(|source| EmbeddingError::Io {
                path: shown.clone(),
                source,
            })?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let token = parts.next().unwrap_or_default().to_string();
            let before = vectors.len();
            for p in parts {
                let v: f64 = p.parse().map_err(|_| {
                    fmt_err(lineno, format!("token {token:?}: bad component {p:?}"))
                })?;
                if !v.is_finite() {
                    return Err(fmt_err(
                        lineno,
                        format!("token {token:?}: non-finite component"),
                    ));
                }
                vectors.push(v);
            }
            let found = vectors.len() - before;
            if found != dim {
                return Err(fmt_err(
                    lineno,
                    format!("token {token:?} has {found} components, expected {dim}"),
                ));
            }
            tokens.push(token);
        }
        if tokens.len() != vocab_size {
            return Err(fmt_err(
                1,
                format!(
                    "header declares {vocab_size} tokens, found {}",
                    tokens.len()
                ),
            ));
        }

        let side = sidecar_path(path);
        let side_shown = side.display().to_string();
        let meta_text = std::fs::read_to_string(&side).map_err(|source| EmbeddingError::Io {
            path: side_shown.clone(),
            source,
        })?;
        let meta: Sidecar =
            serde_json::from_str(&meta_text).map_err(|e| EmbeddingError::Sidecar {
                path: side_shown.clone(),
                message: e.to_string(),
            })?;
        let model = Self::from_parts(tokens, dim, vectors, meta.config)
            .map_err(|e| fmt_err(0, e.to_string()))?;
        if model.trained_phenotypes != meta.trained_phenotypes {
            return Err(EmbeddingError::Sidecar {
                path: side_shown,
                message: "trained_phenotypes disagrees with the mark-ups in the vocabulary".into(),
            });
        }
        Ok(model)
    }
}

fn parse_header(header: &str) -> Result<(usize, usize), String> {
    let mut it = header.split_whitespace();
    let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
        return Err(format!("header must be `vocab_size dim`, got {header:?}"));
    };
    let vocab: usize = a.parse().map_err(|_| format!("bad vocab size {a:?}"))?;
    let dim: usize = b.parse().map_err(|_| format!("bad dimension {b:?}"))?;
    if dim == 0 {
        return Err("dimension must be positive".into());
    }
    Ok((vocab, dim))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Vocabulary in training order: count descending, then token.
struct Vocab {
    tokens: Vec<String>,
    counts: Vec<u64>,
    is_markup: Vec<bool>,
    index: HashMap<String, usize>,
}

fn build_vocab(corpus: &[TokenSequence], config: &TrainConfig) -> Vocab {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for seq in corpus {
        for t in seq.surfaces() {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, u64, bool)> = counts
        .into_iter()
        .map(|(t, c)| (t, c, parse_markup(t).is_ok()))
        .filter(|&(_, c, markup)| {
            c >= if markup {
                config.min_count_markup
            } else {
                config.min_count
            }
        })
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: Vec<String> = entries.iter().map(|e| e.0.to_string()).collect();
    let index = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    Vocab {
        counts: entries.iter().map(|e| e.1).collect(),
        is_markup: entries.iter().map(|e| e.2).collect(),
        tokens,
        index,
    }
}

/// Remove the direction shared by all vectors. Negative-sampling vectors
/// sit in a narrow cone around it, which pushes every cosine towards 1.
fn center(vectors: &mut [f64], dim: usize) {
    let rows = vectors.len() / dim;
    if rows == 0 {
        return;
    }
    let mut mean = vec![0.0; dim];
    for row in vectors.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= rows as f64);
    for row in vectors.chunks_mut(dim) {
        row.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m);
    }
}

/// Per-epoch callback receiving the epoch index and the input vectors.
pub type EpochObserver<'a> = &'a mut dyn FnMut(usize, &[f64]);

/// Train CBOW embeddings over mark-up injected sequences.
pub fn train_cbow(
    corpus: &[TokenSequence],
    config: &TrainConfig,
    mode: TrainMode,
) -> Result<EmbeddingModel, EmbeddingError> {
    train_cbow_observed(corpus, config, mode, None)
}

/// As [`train_cbow`], calling `on_epoch(epoch, input_vectors)` after every
/// epoch. The callback only fires in deterministic mode.
pub fn train_cbow_observed(
    corpus: &[TokenSequence],
    config: &TrainConfig,
    mode: TrainMode,
    on_epoch: Option<EpochObserver<'_>>,
) -> Result<EmbeddingModel, EmbeddingError> {
    config.validate()?;
    let vocab = build_vocab(corpus, config);
    if vocab.tokens.is_empty() {
        return Err(EmbeddingError::EmptyVocabulary);
    }
    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .map(|seq| {
            seq.surfaces()
                .filter_map(|t| vocab.index.get(t).copied())
                .collect()
        })
        .collect();
    let mut vectors = cbow::Trainer {
        config,
        sentences: &sentences,
        counts: &vocab.counts,
        is_markup: &vocab.is_markup,
    }
    .run(mode, on_epoch)?;
    if config.center_vectors {
        center(&mut vectors, config.dim);
    }
    EmbeddingModel::from_parts(vocab.tokens, config.dim, vectors, config.clone())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}
