//! Labelled synthetic corpora with planted language patterns.
//!
//! Each mention is rendered from a [`PatternSpec`] template such as
//! `"mri scan * confirmed an acute <M> in the * territory"`: `<M>` is
//! replaced by a surface form of the document's phenotype and every `*` by a
//! word drawn from the pattern's filler vocabulary. The generating pattern
//! is recorded on every annotation as ground truth.
//!
//! Familiar patterns may appear anywhere; documents containing a novel
//! pattern or a target-only phenotype always land in the target split.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Context, Document, MentionAnnotation};
use crate::ontology::ConceptId;

pub const MENTION_SLOT: &str = "<M>";
pub const FILLER_SLOT: &str = "*";

#[derive(Error, Debug)]
pub enum SynthError {
    #[error("pattern {0}: template must contain exactly one {MENTION_SLOT} slot")]
    MentionSlot(String),

    #[error("pattern {0}: weight must be positive and finite")]
    BadWeight(String),

    #[error("pattern {0}: filler slot without filler vocabulary")]
    NoFillers(String),

    #[error("duplicate pattern id {0}")]
    DuplicatePattern(String),

    #[error("phenotype {0}: no surface forms")]
    NoSurfaces(ConceptId),

    #[error("phenotype {0}: weight must be positive and finite")]
    BadPhenotypeWeight(ConceptId),

    #[error("no pattern can render phenotype {0}")]
    NoPatternFor(ConceptId),

    #[error("config has no phenotypes")]
    NoPhenotypes,

    #[error("incorrect_fraction {0} needs both correct and incorrect patterns in [0, 1]")]
    BadIncorrectFraction(f64),

    #[error("{field} must lie in [0, 1], got {value}")]
    BadProbability { field: &'static str, value: f64 },

    #[error("background_rate must be finite and non-negative, got {0}")]
    BadRate(f64),

    #[error("mentions_per_doc needs 1 <= min <= max, got {min}..={max}")]
    BadMentionsPerDoc { min: usize, max: usize },

    #[error("split fraction must lie strictly between 0 and 1, got {0}")]
    BadSplitFraction(f64),

    #[error("unknown preset {0:?} (expected eps-sweep, reuse or compare-refs)")]
    UnknownPreset(String),

    #[error("{path}: {message}")]
    Config { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phenotype {
    pub concept: ConceptId,
    pub surfaces: Vec<String>,
    /// Documents about this phenotype only ever go to the target split.
    #[serde(default)]
    pub target_only: bool,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

fn default_topic_words() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSpec {
    pub pattern_id: String,
    /// Whitespace separated tokens with one `<M>` slot and any number of `*`
    /// filler slots.
    pub template: String,
    pub context: Context,
    /// Gold label of every mention rendered from this pattern.
    pub correct: bool,
    #[serde(default)]
    pub vocabulary_jitter: Vec<String>,
    pub weight: f64,
    /// Phenotypes this pattern may render; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concepts: Option<Vec<ConceptId>>,
}

impl PatternSpec {
    fn allows(&self, concept: &ConceptId) -> bool {
        self.concepts.as_ref().is_none_or(|cs| cs.contains(concept))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MentionsPerDoc {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub phenotypes: Vec<Phenotype>,
    pub familiar_patterns: Vec<PatternSpec>,
    #[serde(default)]
    pub novel_patterns: Vec<PatternSpec>,
    pub n_documents: usize,
    pub mentions_per_doc: MentionsPerDoc,
    /// When set, pattern weights are rescaled so that incorrect patterns
    /// carry this share of the total.
    #[serde(default)]
    pub incorrect_fraction: Option<f64>,
    /// Probability that a filler slot draws from the pooled vocabulary of all
    /// patterns instead of its own.
    #[serde(default)]
    pub overlap: f64,
    /// Pattern-free sentences sprinkled between mentions.
    #[serde(default)]
    pub background: Vec<String>,
    /// Number of generated background topics, each with its own words
    /// (`b<topic>w<index>`). Generated sentences stay within one topic.
    #[serde(default)]
    pub background_topics: usize,
    #[serde(default = "default_topic_words")]
    pub background_topic_words: usize,
    /// Mean number of background sentences before each mention sentence.
    #[serde(default)]
    pub background_rate: f64,
    pub seed: u64,
}

/// A corpus and its annotations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthCorpus {
    pub documents: Vec<Document>,
    pub annotations: Vec<MentionAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub corpus: SynthCorpus,
    /// Documents that must stay out of the source split.
    pub target_only_docs: BTreeSet<String>,
    pub familiar_pattern_ids: BTreeSet<String>,
    pub novel_pattern_ids: BTreeSet<String>,
}

impl SynthConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let err = |message: String| SynthError::Config {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let config: SynthConfig = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.phenotypes.is_empty() {
            return Err(SynthError::NoPhenotypes);
        }
        let MentionsPerDoc { min, max } = self.mentions_per_doc;
        if min == 0 || min > max {
            return Err(SynthError::BadMentionsPerDoc { min, max });
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(SynthError::BadProbability {
                field: "overlap",
                value: self.overlap,
            });
        }
        if !(self.background_rate >= 0.0 && self.background_rate.is_finite()) {
            return Err(SynthError::BadRate(self.background_rate));
        }
        if self.background_topics > 0 && self.background_topic_words == 0 {
            return Err(SynthError::BadRate(0.0));
        }
        let mut ids = HashSet::new();
        for p in self.patterns() {
            if p.template
                .split_whitespace()
                .filter(|t| *t == MENTION_SLOT)
                .count()
                != 1
            {
                return Err(SynthError::MentionSlot(p.pattern_id.clone()));
            }
            if !(p.weight > 0.0 && p.weight.is_finite()) {
                return Err(SynthError::BadWeight(p.pattern_id.clone()));
            }
            let has_filler = p.template.split_whitespace().any(|t| t == FILLER_SLOT);
            if has_filler && p.vocabulary_jitter.is_empty() {
                return Err(SynthError::NoFillers(p.pattern_id.clone()));
            }
            if !ids.insert(p.pattern_id.as_str()) {
                return Err(SynthError::DuplicatePattern(p.pattern_id.clone()));
            }
        }
        for ph in &self.phenotypes {
            if ph.surfaces.iter().all(|s| s.trim().is_empty()) {
                return Err(SynthError::NoSurfaces(ph.concept.clone()));
            }
            if !(ph.weight > 0.0 && ph.weight.is_finite()) {
                return Err(SynthError::BadPhenotypeWeight(ph.concept.clone()));
            }
            if !self.patterns().any(|p| p.allows(&ph.concept)) {
                return Err(SynthError::NoPatternFor(ph.concept.clone()));
            }
        }
        if let Some(f) = self.incorrect_fraction {
            let has_correct = self.patterns().any(|p| p.correct);
            let has_incorrect = self.patterns().any(|p| !p.correct);
            let ok = (0.0..=1.0).contains(&f)
                && (f == 0.0 || has_incorrect)
                && (f == 1.0 || has_correct);
            if !ok {
                return Err(SynthError::BadIncorrectFraction(f));
            }
        }
        Ok(())
    }

    fn patterns(&self) -> impl Iterator<Item = &PatternSpec> {
        self.familiar_patterns.iter().chain(&self.novel_patterns)
    }

    /// Sampling weight of every pattern, familiar first, after applying
    /// `incorrect_fraction`.
    fn effective_weights(&self) -> Vec<f64> {
        let raw: Vec<(f64, bool)> = self.patterns().map(|p| (p.weight, p.correct)).collect();
        let Some(f) = self.incorrect_fraction else {
            return raw.iter().map(|(w, _)| *w).collect();
        };
        let total = |correct: bool| -> f64 {
            raw.iter()
                .filter(|(_, c)| *c == correct)
                .map(|(w, _)| w)
                .sum()
        };
        let (wc, wi) = (total(true), total(false));
        raw.iter()
            .map(|&(w, c)| if c { w / wc * (1.0 - f) } else { w / wi * f })
            .collect()
    }

    pub fn preset(name: &str) -> Result<Self, SynthError> {
        match name {
            "eps-sweep" => Ok(presets::eps_sweep()),
            "reuse" => Ok(presets::reuse()),
            "compare-refs" => Ok(presets::compare_refs()),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }
}

/// Build a corpus from `config`. Deterministic for a fixed seed.
pub fn generate(config: &SynthConfig) -> Result<Generated, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let patterns: Vec<&PatternSpec> = config.patterns().collect();
    let n_familiar = config.familiar_patterns.len();
    let weights = config.effective_weights();
    let pooled: Vec<&str> = {
        let mut seen = BTreeSet::new();
        patterns
            .iter()
            .flat_map(|p| p.vocabulary_jitter.iter())
            .filter(|w| seen.insert(w.as_str()))
            .map(String::as_str)
            .collect()
    };

    // Per phenotype: candidate pattern indices and their sampler.
    let per_phenotype: Vec<(Vec<usize>, WeightedIndex<f64>)> = config
        .phenotypes
        .iter()
        .map(|ph| {
            let idx: Vec<usize> = (0..patterns.len())
                .filter(|&i| patterns[i].allows(&ph.concept) && weights[i] > 0.0)
                .collect();
            let dist = WeightedIndex::new(idx.iter().map(|&i| weights[i]))
                .map_err(|_| SynthError::NoPatternFor(ph.concept.clone()))?;
            Ok((idx, dist))
        })
        .collect::<Result<_, SynthError>>()?;
    let phenotype_dist = WeightedIndex::new(config.phenotypes.iter().map(|p| p.weight))
        .expect("validated phenotype weights");

    let mut out = Generated {
        corpus: SynthCorpus::default(),
        target_only_docs: BTreeSet::new(),
        familiar_pattern_ids: config
            .familiar_patterns
            .iter()
            .map(|p| p.pattern_id.clone())
            .collect(),
        novel_pattern_ids: config
            .novel_patterns
            .iter()
            .map(|p| p.pattern_id.clone())
            .collect(),
    };

    for d in 0..config.n_documents {
        let doc_id = format!("doc{d:05}");
        let which = phenotype_dist.sample(&mut rng);
        let ph = &config.phenotypes[which];
        let (candidates, dist) = &per_phenotype[which];
        let surfaces: Vec<&String> = ph
            .surfaces
            .iter()
            .filter(|s| !s.trim().is_empty())
            .collect();
        let n_mentions = rng.gen_range(config.mentions_per_doc.min..=config.mentions_per_doc.max);

        let mut text = String::new();
        let mut len = 0usize;
        let mut target_only = ph.target_only;
        let push = |text: &mut String, len: &mut usize, s: &str| {
            text.push_str(s);
            *len += s.chars().count();
        };

        for m in 0..n_mentions {
            let sources = config.background.len() + config.background_topics;
            let rate = config.background_rate;
            let n_background = if sources == 0 {
                0
            } else {
                rate.floor() as usize + rng.gen_bool(rate.fract()) as usize
            };
            for _ in 0..n_background {
                let which = rng.gen_range(0..sources);
                let sentence = match config.background.get(which) {
                    Some(fixed) => fixed.trim().to_string(),
                    None => {
                        let topic = which - config.background.len();
                        let words = rng.gen_range(6..=12);
                        (0..words)
                            .map(|_| {
                                let w = rng.gen_range(0..config.background_topic_words);
                                format!("b{topic}w{w}")
                            })
                            .collect::<Vec<_>>()
                            .join(" ")
                    }
                };
                if !text.is_empty() {
                    push(&mut text, &mut len, " ");
                }
                push(&mut text, &mut len, &sentence);
                push(&mut text, &mut len, ".");
            }
            let pi = candidates[dist.sample(&mut rng)];
            let pattern = patterns[pi];
            target_only |= pi >= n_familiar;
            let surface = surfaces.choose(&mut rng).expect("validated surfaces");

            if !text.is_empty() {
                push(&mut text, &mut len, " ");
            }
            let mut span = (0, 0);
            for (t, token) in pattern.template.split_whitespace().enumerate() {
                if t > 0 {
                    push(&mut text, &mut len, " ");
                }
                match token {
                    MENTION_SLOT => {
                        let start = len;
                        push(&mut text, &mut len, surface.trim());
                        span = (start, len);
                    }
                    FILLER_SLOT => {
                        let word = if config.overlap > 0.0 && rng.gen_bool(config.overlap) {
                            pooled.choose(&mut rng).copied()
                        } else {
                            pattern
                                .vocabulary_jitter
                                .choose(&mut rng)
                                .map(String::as_str)
                        }
                        .expect("validated fillers");
                        push(&mut text, &mut len, word);
                    }
                    word => push(&mut text, &mut len, word),
                }
            }
            push(&mut text, &mut len, ".");

            out.corpus.annotations.push(MentionAnnotation {
                mention_id: format!("{doc_id}.m{m}"),
                doc_id: doc_id.clone(),
                start: span.0,
                end: span.1,
                concept: ph.concept.clone(),
                context: pattern.context,
                gold_correct: Some(pattern.correct),
                pattern_id: Some(pattern.pattern_id.clone()),
            });
        }
        if target_only {
            out.target_only_docs.insert(doc_id.clone());
        }
        out.corpus.documents.push(Document { id: doc_id, text });
    }
    Ok(out)
}

/// Split into a source corpus (for training the reused model) and a target
/// corpus (the new task). The source receives `round(fraction * n)` of the
/// `n` documents free to go either way; target-only documents always go to
/// the target. Document order is preserved on both sides.
pub fn split(
    generated: &Generated,
    fraction: f64,
    seed: u64,
) -> Result<(SynthCorpus, SynthCorpus), SynthError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SynthError::BadSplitFraction(fraction));
    }
    let mut eligible: Vec<&str> = generated
        .corpus
        .documents
        .iter()
        .map(|d| d.id.as_str())
        .filter(|id| !generated.target_only_docs.contains(*id))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    eligible.shuffle(&mut rng);
    let n_source = (fraction * eligible.len() as f64).round() as usize;
    let source_ids: HashSet<&str> = eligible[..n_source].iter().copied().collect();

    let mut source = SynthCorpus::default();
    let mut target = SynthCorpus::default();
    for d in &generated.corpus.documents {
        let side = if source_ids.contains(d.id.as_str()) {
            &mut source
        } else {
            &mut target
        };
        side.documents.push(d.clone());
    }
    for a in &generated.corpus.annotations {
        let side = if source_ids.contains(a.doc_id.as_str()) {
            &mut source
        } else {
            &mut target
        };
        side.annotations.push(a.clone());
    }
    Ok((source, target))
}

mod presets {
    use super::*;

    fn concept(id: &str) -> ConceptId {
        ConceptId::new(id).expect("preset concept ids are valid")
    }

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn pattern(
        id: &str,
        template: &str,
        context: Context,
        correct: bool,
        jitter: &str,
        weight: f64,
    ) -> PatternSpec {
        PatternSpec {
            pattern_id: id.to_string(),
            template: template.to_string(),
            context,
            correct,
            vocabulary_jitter: words(jitter),
            weight,
            concepts: None,
        }
    }

    fn stroke() -> Phenotype {
        Phenotype {
            concept: concept("C0038454"),
            surfaces: vec![
                "stroke".into(),
                "cva".into(),
                "brain attack".into(),
                "cerebrovascular accident".into(),
            ],
            target_only: false,
            weight: 1.0,
        }
    }

    /// Four stroke patterns, one of them a not-a-phenotype use.
    pub fn eps_sweep() -> SynthConfig {
        SynthConfig {
            phenotypes: vec![stroke()],
            familiar_patterns: vec![
                pattern(
                    "imaging_confirmed",
                    "scan * confirmed * <M> affecting * * territory",
                    Context::Pos,
                    true,
                    "clearly again acute left right posterior small large recent",
                    0.40,
                ),
                pattern(
                    "ct_negative",
                    "ct * shows no * <M> or * bleed",
                    Context::Neg,
                    true,
                    "today head clear acute new further intracranial evidence",
                    0.25,
                ),
                pattern(
                    "risk_discussion",
                    "worried about * risk of <M> if * * stops",
                    Context::Hyp,
                    true,
                    "higher increased future warfarin her anticoagulant medication",
                    0.20,
                ),
                pattern(
                    "ward_name",
                    "scan * booked via * <M> unit * * tomorrow",
                    Context::Not,
                    false,
                    "letters notes the acute office nurses reception team",
                    0.15,
                ),
            ],
            novel_patterns: vec![],
            n_documents: 250,
            mentions_per_doc: MentionsPerDoc { min: 2, max: 2 },
            incorrect_fraction: Some(0.15),
            overlap: 0.3,
            background: vec![
                "seen in clinic with daughter".into(),
                "observations stable overnight".into(),
                "plan discussed with the team".into(),
                "bloods sent and reviewed".into(),
                "mobilising with frame on the ward".into(),
            ],
            background_topics: 0,
            background_topic_words: 20,
            background_rate: 0.5,
            seed: 1,
        }
    }

    fn stroke_patterns() -> Vec<PatternSpec> {
        vec![
            pattern(
                "imaging_confirmed",
                "mri scan * confirmed an acute * <M> affecting the * * territory",
                Context::Pos,
                true,
                "clearly again finally left right posterior anterior small large recent",
                0.40,
            ),
            pattern(
                "ct_negative",
                "ct head * shows no * evidence of <M> or * * bleed seen",
                Context::Neg,
                true,
                "today scan clear acute new further intracranial major obvious",
                0.25,
            ),
            pattern(
                "risk_discussion",
                "family worried she * be at * risk of <M> if * * medication stops",
                Context::Hyp,
                true,
                "might could higher increased warfarin her anticoagulant blood",
                0.20,
            ),
        ]
    }

    /// Familiar stroke patterns plus novel ones, one of which is a
    /// not-a-phenotype use. Novel patterns borrow the words of two background
    /// topics, so the model knows their vocabulary but never saw it around a
    /// stroke mention.
    pub fn reuse() -> SynthConfig {
        let mut familiar = stroke_patterns();
        familiar.push(pattern(
            "history_of",
            "past medical history includes * * <M> with * residual * weakness",
            Context::His,
            true,
            "previous old remote minor mild slight arm leg",
            0.2,
        ));
        let total: f64 = familiar.iter().map(|p| p.weight).sum();
        familiar.iter_mut().for_each(|p| p.weight *= 0.7 / total);
        SynthConfig {
            phenotypes: vec![stroke()],
            familiar_patterns: familiar,
            novel_patterns: vec![
                pattern(
                    "gp_letter",
                    "b1w0 b1w1 * b1w2 b1w3 * <M> b1w4 * * b1w5 b1w6",
                    Context::Pos,
                    true,
                    "b1w7 b1w8 b1w9 b1w10 b1w11 b1w12",
                    0.15,
                ),
                pattern(
                    "charity_event",
                    "b2w0 b2w1 * b2w2 * <M> b2w3 b2w4 b2w5 * b2w6",
                    Context::Not,
                    false,
                    "b2w7 b2w8 b2w9 b2w10 b2w11 b2w12",
                    0.15,
                ),
            ],
            n_documents: 600,
            mentions_per_doc: MentionsPerDoc { min: 1, max: 2 },
            incorrect_fraction: None,
            overlap: 0.0,
            background: vec![],
            background_topics: 30,
            background_topic_words: 20,
            background_rate: 3.0,
            seed: 1,
        }
    }

    /// Diabetes as the new task; type 2 diabetes shares its language,
    /// hypercholesterolaemia does not.
    pub fn compare_refs() -> SynthConfig {
        let diabetes = concept("C0011849");
        let t2dm = concept("C0011860");
        let lipid = concept("C0020443");
        let restrict = |mut p: PatternSpec, cs: &[&ConceptId]| {
            p.concepts = Some(cs.iter().map(|c| (*c).clone()).collect());
            p
        };
        let glucose = [&diabetes, &t2dm];
        SynthConfig {
            phenotypes: vec![
                Phenotype {
                    concept: diabetes.clone(),
                    surfaces: words("diabetes dm"),
                    target_only: true,
                    weight: 1.0,
                },
                Phenotype {
                    concept: t2dm.clone(),
                    surfaces: vec!["type 2 diabetes".into(), "t2dm".into()],
                    target_only: false,
                    weight: 1.0,
                },
                Phenotype {
                    concept: lipid.clone(),
                    surfaces: vec!["hypercholesterolaemia".into(), "high cholesterol".into()],
                    target_only: false,
                    weight: 1.0,
                },
            ],
            familiar_patterns: vec![
                restrict(
                    pattern(
                        "glucose_control",
                        "hba1c * remains * above target so * <M> needs * * insulin review",
                        Context::Pos,
                        true,
                        "today still well slightly poorly controlled urgent basal",
                        0.4,
                    ),
                    &glucose,
                ),
                restrict(
                    pattern(
                        "foot_check",
                        "annual * foot check for * <M> showed * * sensation intact",
                        Context::Pos,
                        true,
                        "routine podiatry known longstanding normal good protective",
                        0.3,
                    ),
                    &glucose,
                ),
                restrict(
                    pattern(
                        "glucose_negated",
                        "fasting * glucose normal so * no * <M> at this * stage",
                        Context::Neg,
                        true,
                        "plasma blood clearly definite evidence early",
                        0.3,
                    ),
                    &glucose,
                ),
                restrict(
                    pattern(
                        "clinic_name",
                        "appointment * letter from the * <M> centre about * parking",
                        Context::Not,
                        false,
                        "new outpatient regional community hospital car",
                        0.15,
                    ),
                    &glucose,
                ),
                restrict(
                    pattern(
                        "lipid_clinic",
                        "lipid * profile * consistent with * <M> so statin * * started",
                        Context::Pos,
                        true,
                        "panel fasting strongly familial therapy was dose",
                        0.5,
                    ),
                    &[&lipid],
                ),
                restrict(
                    pattern(
                        "lipid_negated",
                        "cholesterol * level * today excludes * <M> so diet * * continue",
                        Context::Neg,
                        true,
                        "total serum checked measured familial advice should",
                        0.5,
                    ),
                    &[&lipid],
                ),
            ],
            novel_patterns: vec![],
            n_documents: 450,
            mentions_per_doc: MentionsPerDoc { min: 1, max: 2 },
            incorrect_fraction: None,
            overlap: 0.0,
            background: vec![],
            background_topics: 30,
            background_topic_words: 20,
            background_rate: 2.0,
            seed: 1,
        }
    }
}
