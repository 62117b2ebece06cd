//! Documents, mention annotations, tokenization and mark-up injection.
//!
//! Offsets everywhere are character (not byte) offsets into the document
//! text. Mention spans must line up with token boundaries; a span that cuts
//! through a token is an ingest error.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::ConceptId;

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: invalid field `{field}`: {message}")]
    InvalidField {
        path: String,
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown context code {0:?}")]
    UnknownContext(String),

    #[error("malformed mark-up token {0:?}")]
    BadMarkup(String),

    #[error("mention {mention_id} belongs to document {found}, not {expected}")]
    WrongDocument {
        mention_id: String,
        expected: String,
        found: String,
    },

    #[error("mention {mention_id} refers to unknown document {doc_id}")]
    UnknownDocument { mention_id: String, doc_id: String },

    #[error("mention {mention_id} span {start}..{end} is not aligned to token boundaries")]
    Misaligned {
        mention_id: String,
        start: usize,
        end: usize,
    },

    #[error("overlapping mention spans: {}", .0.join(", "))]
    Overlap(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Mention context labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Context {
    /// positive mention
    Pos,
    /// negated mention
    Neg,
    /// hypothetical mention
    Hyp,
    /// historical mention
    His,
    /// mention about another person
    Oth,
    /// not a phenotype mention
    Not,
}

impl Context {
    pub const ALL: [Context; 6] = [
        Context::Pos,
        Context::Neg,
        Context::Hyp,
        Context::His,
        Context::Oth,
        Context::Not,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Context::Pos => "POS",
            Context::Neg => "NEG",
            Context::Hyp => "HYP",
            Context::His => "HIS",
            Context::Oth => "OTH",
            Context::Not => "NOT",
        }
    }
}

impl FromStr for Context {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Context::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| CorpusError::UnknownContext(s.to_string()))
    }
}

impl TryFrom<String> for Context {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Context> for String {
    fn from(c: Context) -> String {
        c.code().to_string()
    }
}

impl fmt::Display for Context {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub doc_id: String,
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token index range `[first, last + 1)` covered by a character span, or
    /// `None` when the span does not start and end on token boundaries.
    pub fn token_range(&self, start: usize, end: usize) -> Option<std::ops::Range<usize>> {
        if start >= end {
            return None;
        }
        let first = self.tokens.binary_search_by_key(&start, |t| t.start).ok()?;
        let last = self.tokens.binary_search_by_key(&end, |t| t.end).ok()?;
        (first <= last).then_some(first..last + 1)
    }
}

/// A phenotype mention produced upstream by an NLP model or a gold standard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionAnnotation {
    pub mention_id: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub concept: ConceptId,
    pub context: Context,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_correct: Option<bool>,
    /// Ground-truth language pattern, only present in generated corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_id: Option<String>,
}

/// `CUI_CONTEXT` placeholder token standing for a contextualised phenotype.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MarkupToken {
    pub concept: ConceptId,
    pub context: Context,
    pub rendered: String,
}

pub fn render_markup(concept: &ConceptId, context: Context) -> MarkupToken {
    MarkupToken {
        rendered: format!("{}_{}", concept, context.code()),
        concept: concept.clone(),
        context,
    }
}

pub fn parse_markup(token: &str) -> Result<MarkupToken, CorpusError> {
    let bad = || CorpusError::BadMarkup(token.to_string());
    let (concept, code) = token.rsplit_once('_').ok_or_else(bad)?;
    let context: Context = code.parse().map_err(|_| bad())?;
    let concept = ConceptId::new(concept).map_err(|_| bad())?;
    Ok(MarkupToken {
        concept,
        context,
        rendered: token.to_string(),
    })
}

/// Lowercased word tokens plus single-character punctuation tokens.
pub fn tokenize(doc_id: &str, text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            let (_, buf) = word.get_or_insert_with(|| (pos, String::new()));
            buf.extend(ch.to_lowercase());
        } else {
            if let Some((start, surface)) = word.take() {
                tokens.push(Token {
                    surface,
                    start,
                    end: pos,
                });
            }
            if !ch.is_whitespace() {
                tokens.push(Token {
                    surface: ch.to_lowercase().collect(),
                    start: pos,
                    end: pos + 1,
                });
            }
        }
        pos += 1;
    }
    if let Some((start, surface)) = word {
        tokens.push(Token {
            surface,
            start,
            end: pos,
        });
    }
    TokenSequence {
        doc_id: doc_id.to_string(),
        tokens,
    }
}

/// Token range of a mention inside its document's token sequence.
pub fn mention_tokens(
    seq: &TokenSequence,
    mention: &MentionAnnotation,
) -> Result<std::ops::Range<usize>, CorpusError> {
    if mention.doc_id != seq.doc_id {
        return Err(CorpusError::WrongDocument {
            mention_id: mention.mention_id.clone(),
            expected: seq.doc_id.clone(),
            found: mention.doc_id.clone(),
        });
    }
    seq.token_range(mention.start, mention.end)
        .ok_or_else(|| CorpusError::Misaligned {
            mention_id: mention.mention_id.clone(),
            start: mention.start,
            end: mention.end,
        })
}

/// Replace each annotated span with its single mark-up token.
///
/// Returns a new sequence; the input is left untouched. Annotations must
/// belong to `seq`'s document, be token-aligned and not overlap.
pub fn inject_markups(
    seq: &TokenSequence,
    annotations: &[&MentionAnnotation],
) -> Result<TokenSequence, CorpusError> {
    let mut spans = annotations
        .iter()
        .map(|a| mention_tokens(seq, a).map(|r| (r, *a)))
        .collect::<Result<Vec<_>, _>>()?;
    spans.sort_by_key(|(r, a)| (r.start, a.mention_id.clone()));

    let mut conflicts = Vec::new();
    for pair in spans.windows(2) {
        if pair[1].0.start < pair[0].0.end {
            conflicts.push(pair[0].1.mention_id.clone());
            conflicts.push(pair[1].1.mention_id.clone());
        }
    }
    if !conflicts.is_empty() {
        conflicts.dedup();
        return Err(CorpusError::Overlap(conflicts));
    }

    let mut out = Vec::with_capacity(seq.tokens.len());
    let mut cursor = 0;
    for (range, ann) in spans {
        out.extend_from_slice(&seq.tokens[cursor..range.start]);
        out.push(Token {
            surface: render_markup(&ann.concept, ann.context).rendered,
            start: ann.start,
            end: ann.end,
        });
        cursor = range.end;
    }
    out.extend_from_slice(&seq.tokens[cursor..]);
    Ok(TokenSequence {
        doc_id: seq.doc_id.clone(),
        tokens: out,
    })
}

/// Tokenize every document and inject its annotations' mark-ups.
///
/// Output follows document order. Documents without annotations are
/// included unchanged.
pub fn markup_corpus(
    docs: &[Document],
    annotations: &[MentionAnnotation],
) -> Result<Vec<TokenSequence>, CorpusError> {
    let by_doc = group_by_document(docs, annotations)?;
    docs.iter()
        .map(|d| {
            let seq = tokenize(&d.id, &d.text);
            let anns = by_doc.get(d.id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
            inject_markups(&seq, anns)
        })
        .collect()
}

/// Annotations keyed by document id; errors on dangling document ids.
pub fn group_by_document<'a>(
    docs: &[Document],
    annotations: &'a [MentionAnnotation],
) -> Result<HashMap<&'a str, Vec<&'a MentionAnnotation>>, CorpusError> {
    let ids: HashSet<&str> = docs.iter().map(|d| d.id.as_str()).collect();
    let mut by_doc: HashMap<&str, Vec<&MentionAnnotation>> = HashMap::new();
    for a in annotations {
        if !ids.contains(a.doc_id.as_str()) {
            return Err(CorpusError::UnknownDocument {
                mention_id: a.mention_id.clone(),
                doc_id: a.doc_id.clone(),
            });
        }
        by_doc.entry(a.doc_id.as_str()).or_default().push(a);
    }
    Ok(by_doc)
}

/// Check every annotation against its document's tokenization.
pub fn validate_annotations(
    docs: &[Document],
    annotations: &[MentionAnnotation],
) -> Result<(), CorpusError> {
    markup_corpus(docs, annotations).map(|_| ())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (line, text) in read_jsonl_lines(path)? {
        let doc: Document = serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
            path: path.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId {
                kind: "document",
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Deserialize)]
struct RawAnnotation {
    mention_id: String,
    doc_id: String,
    start: usize,
    end: usize,
    concept: String,
    context: String,
    #[serde(default)]
    gold_correct: Option<bool>,
    #[serde(default)]
    pattern_id: Option<String>,
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<MentionAnnotation>, CorpusError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, text) in read_jsonl_lines(path)? {
        let raw: RawAnnotation =
            serde_json::from_str(&text).map_err(|e| CorpusError::Malformed {
                path: shown.clone(),
                line,
                message: e.to_string(),
            })?;
        let field_err = |field: &'static str, message: String| CorpusError::InvalidField {
            path: shown.clone(),
            line,
            field,
            message,
        };
        let context: Context = raw
            .context
            .parse()
            .map_err(|e: CorpusError| field_err("context", e.to_string()))?;
        let concept =
            ConceptId::new(raw.concept).map_err(|e| field_err("concept", e.to_string()))?;
        if raw.start >= raw.end {
            return Err(field_err(
                "end",
                format!("span {}..{} is empty or reversed", raw.start, raw.end),
            ));
        }
        if !seen.insert(raw.mention_id.clone()) {
            return Err(CorpusError::DuplicateId {
                kind: "mention",
                id: raw.mention_id,
            });
        }
        out.push(MentionAnnotation {
            mention_id: raw.mention_id,
            doc_id: raw.doc_id,
            start: raw.start,
            end: raw.end,
            concept,
            context,
            gold_correct: raw.gold_correct,
            pattern_id: raw.pattern_id,
        });
    }
    Ok(out)
}

/// Write any serializable records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize to JSON");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
