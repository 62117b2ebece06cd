//! End-to-end commands behind the `mention-atlas` binary.
//!
//! Every command reads a [`PipelineConfig`], writes its outputs under
//! `out_dir` and returns a summary for the caller to print. Randomness is
//! derived from the root `seed` with one named sub-seed per stage.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Document, MentionAnnotation};
use crate::embedding::{self, EmbeddingError, EmbeddingModel, TrainConfig, TrainMode};
use crate::guidance::{
    self, AssumptionReport, ClassifyParams, GuidanceError, GuidancePartition, Reference,
    ReferenceStrategy, RepresentativeStrategy,
};
use crate::mention_space::{self, ClusterSet, SpaceError, Vectorized};
use crate::metrics::{self, AccuracyReport, MetricsError, SinglesMode, WasteReport};
use crate::ontology::{ConceptId, ConceptTree, OntologyError};
use crate::seed;
use crate::synth::{self, SynthConfig, SynthError};

pub const MODEL_FILE: &str = "model.vec";
pub const PARTITION_FILE: &str = "partition.json";
pub const TRIAGE_FILE: &str = "triage.tsv";
pub const REPORT_FILE: &str = "report.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const VECTORS_FILE: &str = "mention_vectors.jsonl";
pub const SWEEP_EPS_FILE: &str = "sweep_eps.csv";
pub const SWEEP_THRESHOLD_FILE: &str = "sweep_threshold.csv";
pub const COMPARE_REFS_FILE: &str = "compare_refs.tsv";

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("{what} not found: {}", path.display())]
    MissingInput { what: &'static str, path: PathBuf },

    #[error("no {0} given (set it in the config file or on the command line)")]
    Unset(&'static str),

    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{0} needs gold labels on every annotation")]
    NeedsGold(&'static str),

    #[error(transparent)]
    Corpus(#[from] CorpusError),

    #[error(transparent)]
    Ontology(#[from] OntologyError),

    #[error(transparent)]
    Embedding(#[from] EmbeddingError),

    #[error(transparent)]
    Space(#[from] SpaceError),

    #[error(transparent)]
    Guidance(#[from] GuidanceError),

    #[error(transparent)]
    Metrics(#[from] MetricsError),

    #[error(transparent)]
    Synth(#[from] SynthError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit code for this error: 2 for missing inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput { .. } | PipelineError::Unset(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Documents, JSONL.
    pub corpus: Option<PathBuf>,
    /// Mention annotations, JSONL.
    pub annotations: Option<PathBuf>,
    /// Concept tree TSV; the bundled toy tree when absent.
    pub ontology: Option<PathBuf>,
    /// Embedding file; `<out_dir>/model.vec` when absent.
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    /// Context half-window around a mention.
    pub k: usize,
    pub eps: f64,
    /// Derive eps from this quantile of the core distances instead.
    pub eps_quantile: Option<f64>,
    pub min_pts: usize,
    pub similarity_threshold: f64,
    pub e: usize,
    pub reference_strategy: ReferenceStrategy,
    /// Draw p-unknown representatives at random instead of by mention id.
    pub random_representatives: bool,
    pub singles_mode: SinglesMode,
    pub target_concept: Option<ConceptId>,
    /// Keep only annotations of `target_concept` as the task's mentions.
    pub only_target_mentions: bool,
    pub random_trials: usize,
    pub seed: u64,
    pub deterministic: bool,
    /// Training workers in parallel mode.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: None,
            annotations: None,
            ontology: None,
            model: None,
            out_dir: PathBuf::from("out"),
            train: TrainConfig::default(),
            k: mention_space::DEFAULT_HALF_WINDOW,
            eps: 3.8,
            eps_quantile: None,
            min_pts: mention_space::DEFAULT_MIN_PTS,
            similarity_threshold: guidance::DEFAULT_THRESHOLD,
            e: guidance::DEFAULT_E,
            reference_strategy: ReferenceStrategy::AverageContexts,
            random_representatives: false,
            singles_mode: SinglesMode::Pooled,
            target_concept: None,
            only_target_mentions: false,
            random_trials: 100,
            seed: 42,
            deterministic: false,
            workers: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(PipelineError::MissingInput {
                what: "config file",
                path: path.to_path_buf(),
            });
        }
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.out_dir.join(MODEL_FILE))
    }

    fn train_mode(&self) -> TrainMode {
        if self.deterministic {
            TrainMode::Deterministic
        } else {
            TrainMode::Parallel {
                workers: self.workers.max(1),
            }
        }
    }

    fn classify_params(&self, threshold: f64) -> ClassifyParams {
        ClassifyParams {
            threshold,
            e: self.e,
            representatives: if self.random_representatives {
                RepresentativeStrategy::Seeded(seed::derive(self.seed, "representatives"))
            } else {
                RepresentativeStrategy::MentionIdOrder
            },
        }
    }

    fn target(&self) -> Result<&ConceptId, PipelineError> {
        self.target_concept
            .as_ref()
            .ok_or(PipelineError::Unset("target concept"))
    }

    fn tree(&self) -> Result<ConceptTree, PipelineError> {
        match &self.ontology {
            None => Ok(ConceptTree::toy()),
            Some(p) => Ok(ConceptTree::load(existing("ontology", p)?)?),
        }
    }
}

fn existing<'a>(what: &'static str, path: &'a Path) -> Result<&'a Path, PipelineError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingInput {
            what,
            path: path.to_path_buf(),
        })
    }
}

fn input<'a>(what: &'static str, path: &'a Option<PathBuf>) -> Result<&'a Path, PipelineError> {
    existing(what, path.as_deref().ok_or(PipelineError::Unset(what))?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(path, &text)
}

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn load_inputs(
    cfg: &PipelineConfig,
) -> Result<(Vec<Document>, Vec<MentionAnnotation>), PipelineError> {
    let corpus_path = input("corpus", &cfg.corpus)?;
    let ann_path = input("annotations", &cfg.annotations)?;
    let docs = corpus::load_corpus(corpus_path)?;
    let anns = corpus::load_annotations(ann_path)?;
    Ok((docs, anns))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub vocab_size: usize,
    pub dim: usize,
    pub trained_phenotypes: Vec<ConceptId>,
}

/// Train embeddings over the mark-up injected corpus and save them.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let (docs, anns) = load_inputs(cfg)?;
    let seqs = corpus::markup_corpus(&docs, &anns)?;
    let mut train = cfg.train.clone();
    train.seed = seed::derive(cfg.seed, "embedding");
    let model = embedding::train_cbow(&seqs, &train, cfg.train_mode())?;

    let path = cfg.model_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    model.save(&path)?;
    Ok(TrainSummary {
        model: path,
        vocab_size: model.vocab_size(),
        dim: model.dim(),
        trained_phenotypes: model.trained_phenotypes().iter().cloned().collect(),
    })
}

/// The mentions of a new task, vectorized against a model.
struct Task {
    vectorized: Vectorized,
    gold: Option<HashMap<String, bool>>,
    total: usize,
}

impl Task {
    fn load(cfg: &PipelineConfig, model: &EmbeddingModel) -> Result<Task, PipelineError> {
        let (docs, mut anns) = load_inputs(cfg)?;
        if cfg.only_target_mentions {
            let target = cfg.target()?;
            anns.retain(|a| &a.concept == target);
        }
        if anns.is_empty() {
            return Err(PipelineError::Invalid("task has no mentions".into()));
        }
        let gold = anns
            .iter()
            .map(|a| a.gold_correct.map(|g| (a.mention_id.clone(), g)))
            .collect::<Option<HashMap<_, _>>>();
        let vectorized = mention_space::vectorize_all(model, &docs, &anns, cfg.k)?;
        Ok(Task {
            vectorized,
            gold,
            total: anns.len(),
        })
    }

    fn eps(&self, cfg: &PipelineConfig) -> Result<f64, PipelineError> {
        match cfg.eps_quantile {
            Some(q) => Ok(mention_space::eps_at_quantile(
                &self.vectorized.vectors,
                cfg.min_pts,
                q,
            )?),
            None => Ok(cfg.eps),
        }
    }

    fn cluster(&self, eps: f64, min_pts: usize) -> Result<ClusterSet, PipelineError> {
        Ok(mention_space::cluster_mentions(
            &self.vectorized.vectors,
            eps,
            min_pts,
        )?)
    }

    fn classify(
        &self,
        cs: &ClusterSet,
        reference: &Reference,
        params: &ClassifyParams,
    ) -> Result<GuidancePartition, PipelineError> {
        let mut part = guidance::classify(cs, &self.vectorized.vectors, reference, params)?;
        part.route_unrepresentable(&self.vectorized.unrepresentable);
        Ok(part)
    }

    fn accuracy(
        &self,
        part: &GuidancePartition,
        mode: SinglesMode,
    ) -> Result<Option<AccuracyReport>, PipelineError> {
        let Some(gold) = &self.gold else {
            return Ok(None);
        };
        match metrics::accuracy(part, gold, mode) {
            Ok(a) => Ok(Some(a)),
            Err(MetricsError::NothingCounted) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

fn load_model(cfg: &PipelineConfig) -> Result<EmbeddingModel, PipelineError> {
    input("corpus", &cfg.corpus)?;
    input("annotations", &cfg.annotations)?;
    let path = cfg.model_path();
    Ok(EmbeddingModel::load(existing("model", &path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuideReport {
    pub task_concept: ConceptId,
    pub reference_concept: ConceptId,
    pub eps: f64,
    pub min_pts: usize,
    pub k: usize,
    pub similarity_threshold: f64,
    pub total_mentions: usize,
    pub unrepresentable: usize,
    pub waste: WasteReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracyReport>,
    pub assumptions: AssumptionReport,
    pub diagnostics: Vec<String>,
}

/// Split a new task's mentions into p-known and p-unknown and report the
/// waste each avoids.
pub fn cmd_guide(cfg: &PipelineConfig) -> Result<GuideReport, PipelineError> {
    let tree = cfg.tree()?;
    let target = cfg.target()?;
    if !tree.contains(target) {
        return Err(OntologyError::UnknownConcept(target.clone()).into());
    }
    let model = load_model(cfg)?;
    let task = Task::load(cfg, &model)?;
    let eps = task.eps(cfg)?;
    let cs = task.cluster(eps, cfg.min_pts)?;
    let reference = guidance::reference_vector(&model, &tree, target, cfg.reference_strategy)?;
    let part = task.classify(
        &cs,
        &reference,
        &cfg.classify_params(cfg.similarity_threshold),
    )?;

    let waste = metrics::waste_report(&part, task.total)?;
    let accuracy = task.accuracy(&part, cfg.singles_mode)?;
    let report = GuideReport {
        task_concept: target.clone(),
        reference_concept: reference.reference_concept.clone(),
        eps,
        min_pts: cfg.min_pts,
        k: cfg.k,
        similarity_threshold: cfg.similarity_threshold,
        total_mentions: task.total,
        unrepresentable: task.vectorized.unrepresentable.len(),
        waste,
        accuracy,
        assumptions: guidance::assumption_report(&cs, task.gold.as_ref()),
        diagnostics: part.diagnostics.clone(),
    };

    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join(PARTITION_FILE), &part)?;
    write_file(&cfg.out_dir.join(TRIAGE_FILE), &part.triage_tsv())?;
    write_json(&cfg.out_dir.join(CLUSTERS_FILE), &cs)?;
    corpus::write_jsonl(cfg.out_dir.join(VECTORS_FILE), &task.vectorized.vectors)?;
    write_json(&cfg.out_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Eps values to sweep.
#[derive(Debug, Clone, PartialEq)]
pub enum EpsSweep {
    List(Vec<f64>),
    /// This many points spread over the core-distance quantiles.
    Grid(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsRow {
    pub eps: f64,
    pub clustered_percentage: f64,
    pub sp_embedding: f64,
    pub sp_random: f64,
}

/// Separate Power of clusterings across eps, against a random grouping with
/// the same group sizes. Unrepresentable mentions count as unclustered
/// singletons.
pub fn cmd_sweep_eps(cfg: &PipelineConfig, sweep: &EpsSweep) -> Result<Vec<EpsRow>, PipelineError> {
    let model = load_model(cfg)?;
    let task = Task::load(cfg, &model)?;
    let gold = task
        .gold
        .as_ref()
        .ok_or(PipelineError::NeedsGold("sweep-eps"))?;
    let mut eps_list = match sweep {
        EpsSweep::List(v) => v.clone(),
        EpsSweep::Grid(n) => mention_space::eps_grid(&task.vectorized.vectors, cfg.min_pts, *n)?,
    };
    if eps_list.is_empty() {
        return Err(PipelineError::Invalid("empty eps list".into()));
    }
    eps_list.sort_by(f64::total_cmp);
    let baseline_seed = seed::derive(cfg.seed, "random_baseline");

    let rows = eps_list
        .par_iter()
        .map(|&eps| -> Result<EpsRow, PipelineError> {
            let cs = task.cluster(eps, cfg.min_pts)?;
            let mut groups = cs.groups();
            groups.extend(
                task.vectorized
                    .unrepresentable
                    .iter()
                    .map(|m| vec![m.as_str()]),
            );
            let sp_embedding = metrics::separate_power(&groups, gold, false)?;
            let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            let labels: Vec<bool> = groups.iter().flatten().map(|m| gold[*m]).collect();
            let sp_random = metrics::random_baseline_sp(
                &sizes,
                &labels,
                false,
                cfg.random_trials,
                baseline_seed,
            )?;
            Ok(EpsRow {
                eps,
                clustered_percentage: cs.clustered_count() as f64 / task.total as f64,
                sp_embedding,
                sp_random,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from("eps,clustered_percentage,sp_embedding,sp_random\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.eps, r.clustered_percentage, r.sp_embedding, r.sp_random
        )
        .expect("write to string");
    }
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(SWEEP_EPS_FILE), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub duplicate_waste: f64,
    pub macro_accuracy: Option<f64>,
    pub micro_accuracy: Option<f64>,
    pub saved_imbalance_waste: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Classification across similarity thresholds over one fixed clustering.
pub fn cmd_sweep_threshold(
    cfg: &PipelineConfig,
    thresholds: &[f64],
) -> Result<Vec<ThresholdRow>, PipelineError> {
    if thresholds.is_empty() {
        return Err(PipelineError::Invalid("empty threshold list".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(-1.0..=1.0).contains(*t)) {
        return Err(GuidanceError::BadThreshold(*t).into());
    }
    let tree = cfg.tree()?;
    let target = cfg.target()?;
    let model = load_model(cfg)?;
    let task = Task::load(cfg, &model)?;
    let cs = task.cluster(task.eps(cfg)?, cfg.min_pts)?;
    let reference = guidance::reference_vector(&model, &tree, target, cfg.reference_strategy)?;

    let mut sorted = thresholds.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = sorted
        .par_iter()
        .map(|&threshold| -> Result<ThresholdRow, PipelineError> {
            let part = task.classify(&cs, &reference, &cfg.classify_params(threshold))?;
            let waste = metrics::waste_report(&part, task.total)?;
            let acc = task.accuracy(&part, cfg.singles_mode)?;
            Ok(ThresholdRow {
                threshold,
                duplicate_waste: waste.duplicate_waste,
                macro_accuracy: acc.as_ref().map(|a| a.macro_accuracy),
                micro_accuracy: acc.as_ref().map(|a| a.micro_accuracy),
                saved_imbalance_waste: waste.imbalance_waste_saved,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from("threshold,duplicate_waste,macro,micro,saved_imbalance_waste\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.threshold,
            r.duplicate_waste,
            opt(r.macro_accuracy),
            opt(r.micro_accuracy),
            r.saved_imbalance_waste
        )
        .expect("write to string");
    }
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(SWEEP_THRESHOLD_FILE), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub reference: ConceptId,
    pub duplicate_waste: f64,
    pub macro_accuracy: Option<f64>,
    pub micro_accuracy: Option<f64>,
}

/// Classify the same task against several reference phenotypes.
pub fn cmd_compare_refs(
    cfg: &PipelineConfig,
    candidates: &[ConceptId],
) -> Result<Vec<ReferenceRow>, PipelineError> {
    if candidates.len() < 2 {
        return Err(PipelineError::Invalid(
            "compare-refs needs at least two candidate references".into(),
        ));
    }
    let tree = cfg.tree()?;
    if let Some(c) = candidates.iter().find(|c| !tree.contains(c)) {
        return Err(OntologyError::UnknownConcept(c.clone()).into());
    }
    let model = load_model(cfg)?;
    let task = Task::load(cfg, &model)?;
    let cs = task.cluster(task.eps(cfg)?, cfg.min_pts)?;
    let task_concept = cfg
        .target_concept
        .clone()
        .unwrap_or_else(|| candidates[0].clone());
    let params = cfg.classify_params(cfg.similarity_threshold);

    let mut rows = Vec::with_capacity(candidates.len());
    for c in candidates {
        let reference = Reference {
            task_concept: task_concept.clone(),
            reference_concept: c.clone(),
            vector: guidance::concept_vector(&model, c, cfg.reference_strategy)?,
        };
        let part = task.classify(&cs, &reference, &params)?;
        let acc = task.accuracy(&part, cfg.singles_mode)?;
        rows.push(ReferenceRow {
            reference: c.clone(),
            duplicate_waste: metrics::duplicate_waste(&part, task.total)?,
            macro_accuracy: acc.as_ref().map(|a| a.macro_accuracy),
            micro_accuracy: acc.as_ref().map(|a| a.micro_accuracy),
        });
    }

    let mut tsv = String::from("reference\tduplicate_waste\tmacro\tmicro\n");
    for r in &rows {
        writeln!(
            tsv,
            "{}\t{}\t{}\t{}",
            r.reference,
            r.duplicate_waste,
            opt(r.macro_accuracy),
            opt(r.micro_accuracy)
        )
        .expect("write to string");
    }
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join(COMPARE_REFS_FILE), &tsv)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthSummary {
    pub documents: usize,
    pub mentions: usize,
    /// Documents and mentions per split, when split.
    pub source: Option<(usize, usize)>,
    pub target: Option<(usize, usize)>,
}

/// Generate a synthetic corpus into `out_dir` (`corpus.jsonl`,
/// `annotations.jsonl`), plus `source/` and `target/` splits when
/// `split_fraction` is given.
pub fn cmd_synth(
    config: &SynthConfig,
    out_dir: &Path,
    split_fraction: Option<f64>,
) -> Result<SynthSummary, PipelineError> {
    let generated = synth::generate(config)?;
    let write = |dir: &Path, c: &synth::SynthCorpus| -> Result<(), PipelineError> {
        create_dir(dir)?;
        corpus::write_jsonl(dir.join("corpus.jsonl"), &c.documents)?;
        corpus::write_jsonl(dir.join("annotations.jsonl"), &c.annotations)?;
        Ok(())
    };
    write(out_dir, &generated.corpus)?;
    let mut summary = SynthSummary {
        documents: generated.corpus.documents.len(),
        mentions: generated.corpus.annotations.len(),
        source: None,
        target: None,
    };
    if let Some(f) = split_fraction {
        let (source, target) = synth::split(&generated, f, seed::derive(config.seed, "split"))?;
        write(&out_dir.join("source"), &source)?;
        write(&out_dir.join("target"), &target)?;
        summary.source = Some((source.documents.len(), source.annotations.len()));
        summary.target = Some((target.documents.len(), target.annotations.len()));
    }
    Ok(summary)
}
