//! Linguistic-marker discovery: per-transcript normalized unigram or
//! part-of-speech frequency features, point-biserial correlation of each
//! feature against the diagnosis label, and multiple-comparison filtering.
//!
//! Positive correlations mark features over-represented in dementia
//! speech, negative ones mark control speech (labels are encoded
//! control = 0, dementia = 1). On clinical picture-description corpora
//! this style of analysis surfaces adverbs, pronouns, past-tense verbs,
//! and interjections on the dementia side, with participles, determiners,
//! and nouns on the control side.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Transcript};
use crate::stats::{self, StatsError};
use crate::textstats::is_word;

/// Bundled word → Penn Treebank tag lexicon (`word<TAB>tag` lines, `#`
/// comments). Covers the closed classes and common irregular verbs.
const POS_LEXICON_RAW: &str = include_str!("../data/pos_lexicon.tsv");

/// Errors from tagging, feature extraction, and correlation.
#[derive(Debug, Error)]
pub enum MarkerError {
    #[error("unknown tagger backend {0:?} (expected \"bundled\" or \"sidecar\")")]
    UnknownBackend(String),
    /// The sidecar file has no tags for a transcript.
    #[error("sidecar has no tags for transcript {0:?}")]
    MissingTags(String),
    /// No feature survived the document-frequency threshold.
    #[error("no features left at min_doc_freq {0}")]
    NoFeatures(usize),
    /// Correlation needs both classes among the usable transcripts.
    #[error("all usable transcripts have the same label")]
    SingleClass,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("sidecar format error at line {line}: {reason}")]
    SidecarFormat { line: usize, reason: String },
    #[error("statistics error: {0}")]
    Stats(#[from] StatsError),
}

/// A token with its Penn Treebank part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub token: String,
    pub tag: String,
}

/// Which feature family to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// Word identities.
    Unigram,
    /// Part-of-speech tags.
    Pos,
}

/// Which group a marker leans toward (sign of the correlation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Control,
    Dementia,
}

/// One significant marker: a feature, its signed correlation with the
/// dementia label, and the adjusted significance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerResult {
    pub feature: String,
    pub kind: FeatureKind,
    /// Signed point-biserial correlation; negative means control-typical.
    pub r: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub direction: Direction,
}

/// Source of part-of-speech tags.
#[derive(Debug, Clone)]
pub enum TagBackend {
    /// The built-in lexicon + suffix tagger.
    Bundled,
    /// Externally produced tags, keyed by transcript id.
    Sidecar(BTreeMap<String, Vec<TaggedToken>>),
}

impl TagBackend {
    /// Resolves a backend by name; `"sidecar"` requires a tags file.
    pub fn from_name(name: &str, sidecar: Option<&Path>) -> Result<Self, MarkerError> {
        match name {
            "bundled" => Ok(TagBackend::Bundled),
            "sidecar" => {
                let path =
                    sidecar.ok_or_else(|| MarkerError::UnknownBackend("sidecar (no file)".into()))?;
                Ok(TagBackend::Sidecar(load_sidecar_tags(path)?))
            }
            other => Err(MarkerError::UnknownBackend(other.to_string())),
        }
    }

    fn tags_for(&self, t: &Transcript) -> Result<Vec<TaggedToken>, MarkerError> {
        match self {
            TagBackend::Bundled => Ok(pos_tag(&t.tokens)),
            TagBackend::Sidecar(map) => map
                .get(&t.id)
                .cloned()
                .ok_or_else(|| MarkerError::MissingTags(t.id.clone())),
        }
    }
}

fn lexicon() -> &'static BTreeMap<&'static str, &'static str> {
    static LEXICON: OnceLock<BTreeMap<&'static str, &'static str>> = OnceLock::new();
    LEXICON.get_or_init(|| {
        POS_LEXICON_RAW
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once('\t').expect("lexicon lines are word<TAB>tag"))
            .collect()
    })
}

/// Tags every token with a Penn Treebank tag: closed classes and common
/// irregular verbs come from the bundled lexicon, then suffix rules
/// (`-ing` → VBG, `-ed` → VBD, `-ly` → RB), sentence terminators get
/// `.`, and everything else defaults to NN.
///
/// ```
/// use adlex::markers::pos_tag;
///
/// let tags = pos_tag(&["the".into(), "boy".into(), "was".into(), "watching".into()]);
/// let tags: Vec<&str> = tags.iter().map(|t| t.tag.as_str()).collect();
/// assert_eq!(tags, ["DT", "NN", "VBD", "VBG"]);
/// ```
pub fn pos_tag(tokens: &[String]) -> Vec<TaggedToken> {
    tokens
        .iter()
        .map(|token| {
            let tag = tag_one(token);
            TaggedToken {
                token: token.clone(),
                tag: tag.to_string(),
            }
        })
        .collect()
}

fn tag_one(token: &str) -> &'static str {
    if matches!(token, "." | "?" | "!") {
        return ".";
    }
    let lower = token.to_ascii_lowercase();
    if let Some(tag) = lexicon().get(lower.as_str()) {
        return tag;
    }
    if lower.len() > 4 && lower.ends_with("ing") {
        return "VBG";
    }
    if lower.len() > 3 && lower.ends_with("ed") {
        return "VBD";
    }
    if lower.len() > 3 && lower.ends_with("ly") {
        return "RB";
    }
    "NN"
}

/// Loads sidecar tags: JSONL with one `{"id": ..., "tags": [[token, tag],
/// ...]}` object per line.
pub fn load_sidecar_tags(
    path: &Path,
) -> Result<BTreeMap<String, Vec<TaggedToken>>, MarkerError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        tags: Vec<(String, String)>,
    }
    let file = fs::File::open(path).map_err(|source| MarkerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MarkerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| MarkerError::SidecarFormat {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let tags = row
            .tags
            .into_iter()
            .map(|(token, tag)| TaggedToken { token, tag })
            .collect();
        if out.insert(row.id.clone(), tags).is_some() {
            return Err(MarkerError::SidecarFormat {
                line: idx + 1,
                reason: format!("duplicate id {:?}", row.id),
            });
        }
    }
    Ok(out)
}

/// Row-normalized feature frequencies for the usable transcripts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureMatrix {
    pub kind: FeatureKind,
    /// Column names, sorted.
    pub features: Vec<String>,
    /// One row per kept transcript, summing to 1.
    pub rows: Vec<Vec<f64>>,
    /// Transcript ids aligned with `rows`.
    pub kept_ids: Vec<String>,
    /// Labels aligned with `rows`.
    pub kept_labels: Vec<Label>,
    /// Transcripts with no feature occurrences after filtering.
    pub excluded_ids: Vec<String>,
}

/// Builds the per-transcript relative-frequency matrix for one feature
/// family.
///
/// Only word tokens are counted (terminators and other punctuation carry
/// no lexical information here). Features occurring in fewer than
/// `min_doc_freq` transcripts are dropped, then each row is normalized to
/// sum to one over the surviving features; transcripts left without any
/// counted feature are excluded from the matrix and listed in
/// `excluded_ids`.
pub fn feature_matrix(
    dataset: &[Transcript],
    kind: FeatureKind,
    min_doc_freq: usize,
    backend: &TagBackend,
) -> Result<FeatureMatrix, MarkerError> {
    let per_transcript: Result<Vec<BTreeMap<String, u64>>, MarkerError> = dataset
        .par_iter()
        .map(|t| {
            let mut counts = BTreeMap::new();
            match kind {
                FeatureKind::Unigram => {
                    for token in t.tokens.iter().filter(|t| is_word(t)) {
                        *counts.entry(token.clone()).or_insert(0u64) += 1;
                    }
                }
                FeatureKind::Pos => {
                    for tagged in backend.tags_for(t)? {
                        if is_word(&tagged.token) {
                            *counts.entry(tagged.tag).or_insert(0u64) += 1;
                        }
                    }
                }
            }
            Ok(counts)
        })
        .collect();
    let per_transcript = per_transcript?;

    // Document frequency over all transcripts, then threshold.
    let mut doc_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for counts in &per_transcript {
        for feature in counts.keys() {
            *doc_freq.entry(feature).or_insert(0) += 1;
        }
    }
    let features: Vec<String> = doc_freq
        .iter()
        .filter(|(_, &df)| df >= min_doc_freq)
        .map(|(f, _)| f.to_string())
        .collect();
    if features.is_empty() {
        return Err(MarkerError::NoFeatures(min_doc_freq));
    }
    let index: BTreeMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();

    let mut rows = Vec::new();
    let mut kept_ids = Vec::new();
    let mut kept_labels = Vec::new();
    let mut excluded_ids = Vec::new();
    for (t, counts) in dataset.iter().zip(per_transcript) {
        let mut row = vec![0.0; features.len()];
        let mut total = 0u64;
        for (feature, count) in counts {
            if let Some(&col) = index.get(feature.as_str()) {
                row[col] = count as f64;
                total += count;
            }
        }
        if total == 0 {
            log::warn!(
                "transcript {:?} has no features above min_doc_freq {min_doc_freq}; excluded",
                t.id
            );
            excluded_ids.push(t.id.clone());
            continue;
        }
        for v in &mut row {
            *v /= total as f64;
        }
        rows.push(row);
        kept_ids.push(t.id.clone());
        kept_labels.push(t.label);
    }

    Ok(FeatureMatrix {
        kind,
        features,
        rows,
        kept_ids,
        kept_labels,
        excluded_ids,
    })
}

/// Correlates every feature with the diagnosis label and keeps the
/// significant markers.
///
/// Each feature column is tested with the point-biserial correlation
/// (dementia = 1), all p-values of the family are Benjamini-Hochberg
/// adjusted together, and rows with `p_adjusted < alpha_level` are
/// returned sorted by |r| descending (ties by feature name). A negative
/// `r` marks a control-side feature.
pub fn correlate_markers(
    dataset: &[Transcript],
    kind: FeatureKind,
    min_doc_freq: usize,
    alpha_level: f64,
    backend: &TagBackend,
) -> Result<Vec<MarkerResult>, MarkerError> {
    let matrix = feature_matrix(dataset, kind, min_doc_freq, backend)?;
    let labels: Vec<bool> = matrix
        .kept_labels
        .iter()
        .map(|l| *l == Label::Dementia)
        .collect();
    if !labels.iter().any(|&d| d) || labels.iter().all(|&d| d) {
        return Err(MarkerError::SingleClass);
    }

    let correlations: Result<Vec<stats::PointBiserial>, StatsError> = (0..matrix.features.len())
        .into_par_iter()
        .map(|col| {
            let column: Vec<f64> = matrix.rows.iter().map(|row| row[col]).collect();
            stats::point_biserial(&column, &labels)
        })
        .collect();
    let correlations = correlations?;

    let pvalues: Vec<f64> = correlations.iter().map(|c| c.p).collect();
    let adjusted = stats::bh_adjust(&pvalues);

    let mut results: Vec<MarkerResult> = matrix
        .features
        .iter()
        .zip(&correlations)
        .zip(&adjusted)
        .filter(|(_, &padj)| padj < alpha_level)
        .map(|((feature, corr), &padj)| MarkerResult {
            feature: feature.clone(),
            kind,
            r: corr.r,
            p: corr.p,
            p_adjusted: padj,
            direction: if corr.r < 0.0 {
                Direction::Control
            } else {
                Direction::Dementia
            },
        })
        .collect();
    results.sort_by(|a, b| {
        b.r.abs()
            .partial_cmp(&a.r.abs())
            .unwrap()
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(results)
}
