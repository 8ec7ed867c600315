//! Dataset model and corpus plumbing: labeled transcripts with MMSE
//! scores, severity bucketing, directory loading, stratified repeated
//! cross-validation planning, and a synthetic corpus generator.
//!
//! Real clinical picture-description corpora are access-restricted, so the
//! test suite and the examples run on [`generate_synthetic`] output, which
//! is built to exhibit the same linguistic contrasts reported on clinical
//! data: control speakers produce longer, noun- and participle-heavy
//! descriptions, while speakers with dementia produce shorter, pronoun-
//! and interjection-heavy narration with frequent "and"-initial bursts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::chat::{self, CleanPolicy};
use crate::seed;

/// Errors from corpus construction, loading, and CV planning.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// An MMSE value outside the instrument's 0-30 range.
    #[error("MMSE score {0} is outside 0..=30")]
    OutOfRange(u32),
    /// A class had too few members for the requested fold count.
    #[error("too few samples: {0}")]
    TooFewSamples(String),
    /// A `.cha` file had no metadata row.
    #[error("no metadata row for transcript {0:?}")]
    MissingMetadata(String),
    /// The same id appeared twice (in the metadata or on disk).
    #[error("duplicate transcript id {0:?}")]
    DuplicateId(String),
    /// A transcript violated its type invariants.
    #[error("invalid transcript {id:?}: {reason}")]
    InvalidTranscript { id: String, reason: String },
    #[error("CHAT parse error in {path}: {source}")]
    Chat {
        path: String,
        source: chat::ChatError,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("metadata error: {0}")]
    Metadata(String),
    #[error("cache format error at line {line}: {reason}")]
    CacheFormat { line: usize, reason: String },
}

/// Diagnosis label. Serialized as `0` (control) / `1` (dementia); dementia
/// is the positive class throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Control = 0,
    Dementia = 1,
}

impl Label {
    /// Numeric encoding used by the statistics and the loss functions.
    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(Label::Control),
            1 => Ok(Label::Dementia),
            other => Err(D::Error::custom(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// One participant's cleaned utterance stream with its diagnosis label and
/// optional MMSE score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub tokens: Vec<String>,
    pub label: Label,
    pub mmse: Option<u8>,
}

impl Transcript {
    /// Checked constructor: tokens must be non-empty and MMSE, when
    /// present, must lie in `0..=30`.
    pub fn new(
        id: String,
        tokens: Vec<String>,
        label: Label,
        mmse: Option<u8>,
    ) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::InvalidTranscript {
                id,
                reason: "token stream is empty".into(),
            });
        }
        if let Some(m) = mmse {
            if m > 30 {
                return Err(CorpusError::OutOfRange(m as u32));
            }
        }
        Ok(Transcript {
            id,
            tokens,
            label,
            mmse,
        })
    }

    /// Severity bucket of this transcript's MMSE score, if recorded.
    pub fn severity(&self) -> Option<SeverityClass> {
        self.mmse.map(|m| mmse_to_severity(m).expect("constructor validated range"))
    }
}

/// Four-way cognitive severity bucketing of the MMSE score.
///
/// The discriminant doubles as the class index of the severity head:
/// healthy = 0, mild = 1, moderate = 2, severe = 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SeverityClass {
    Healthy = 0,
    Mild = 1,
    Moderate = 2,
    Severe = 3,
}

impl SeverityClass {
    /// Index into the 4-way severity head.
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Buckets an MMSE score: `>= 25` healthy, `21..=24` mild, `10..=20`
/// moderate, `<= 9` severe.
///
/// ```
/// use adlex::corpus::{mmse_to_severity, SeverityClass};
///
/// assert_eq!(mmse_to_severity(25).unwrap(), SeverityClass::Healthy);
/// assert_eq!(mmse_to_severity(20).unwrap(), SeverityClass::Moderate);
/// ```
pub fn mmse_to_severity(mmse: u8) -> Result<SeverityClass, CorpusError> {
    match mmse {
        0..=9 => Ok(SeverityClass::Severe),
        10..=20 => Ok(SeverityClass::Moderate),
        21..=24 => Ok(SeverityClass::Mild),
        25..=30 => Ok(SeverityClass::Healthy),
        other => Err(CorpusError::OutOfRange(other as u32)),
    }
}

/// One fold of a cross-validation plan: disjoint id sets, with the
/// validation ids carved out of the fold's training portion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub repeat: usize,
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// A repeated stratified cross-validation plan over transcript ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CVPlan {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Builds a repeated, stratified, seeded cross-validation plan.
///
/// Per repeat, each class is shuffled and dealt into `k` test folds whose
/// sizes differ by at most one; the leftover samples of successive classes
/// start at rotating fold offsets so the *total* fold sizes also differ by
/// at most one. Out of each fold's training portion, a stratified
/// validation split of `round(val_frac * |portion|)` ids is drawn. Within
/// every fold the id lists are sorted, so equal seeds give byte-identical
/// plans.
pub fn stratified_cv(
    dataset: &[Transcript],
    k: usize,
    repeats: usize,
    val_frac: f64,
    master_seed: u64,
) -> Result<CVPlan, CorpusError> {
    if k < 2 {
        return Err(CorpusError::TooFewSamples(format!("k must be >= 2, got {k}")));
    }
    if repeats == 0 {
        return Err(CorpusError::TooFewSamples("repeats must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&val_frac) {
        return Err(CorpusError::TooFewSamples(format!(
            "val_frac must be in [0, 1), got {val_frac}"
        )));
    }

    // Class membership in a fixed order: all controls, then all dementia.
    let mut by_class: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for t in dataset {
        by_class.entry(t.label.as_u8()).or_default().push(&t.id);
    }
    for (class, ids) in &by_class {
        if ids.len() < k {
            return Err(CorpusError::TooFewSamples(format!(
                "class {class} has {} members but k = {k}",
                ids.len()
            )));
        }
        let unique: BTreeSet<&&str> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(CorpusError::DuplicateId(
                "dataset ids must be unique for CV planning".into(),
            ));
        }
    }

    let label_of: BTreeMap<&str, u8> = dataset
        .iter()
        .map(|t| (t.id.as_str(), t.label.as_u8()))
        .collect();

    let mut folds = Vec::with_capacity(k * repeats);
    for repeat in 0..repeats {
        // Deal each class into k test chunks; extras rotate across classes.
        let mut test_sets: Vec<Vec<&str>> = vec![Vec::new(); k];
        let mut extra_offset = 0usize;
        for (class, ids) in &by_class {
            let mut shuffled = ids.clone();
            shuffled.shuffle(&mut seed::rng(
                master_seed,
                "cv-shuffle",
                &[repeat as u64, *class as u64],
            ));
            let base = shuffled.len() / k;
            let extras = shuffled.len() % k;
            let mut cursor = 0;
            for (f, test) in test_sets.iter_mut().enumerate() {
                let mut size = base;
                // Fold f takes one extra iff it falls in this class's
                // rotating window of `extras` folds.
                if (f + k - extra_offset % k) % k < extras {
                    size += 1;
                }
                test.extend(&shuffled[cursor..cursor + size]);
                cursor += size;
            }
            debug_assert_eq!(cursor, shuffled.len());
            extra_offset += extras;
        }

        for (fold_idx, test) in test_sets.iter().enumerate() {
            let test_set: BTreeSet<&str> = test.iter().copied().collect();
            let trainval: Vec<&str> = dataset
                .iter()
                .map(|t| t.id.as_str())
                .filter(|id| !test_set.contains(id))
                .collect();

            // Stratified validation split by largest-remainder allocation.
            let val_total = (val_frac * trainval.len() as f64).round() as usize;
            let mut class_ids: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
            for id in &trainval {
                class_ids.entry(label_of[id]).or_default().push(id);
            }
            let mut quotas: Vec<(u8, usize, f64)> = class_ids
                .iter()
                .map(|(class, ids)| {
                    let exact = val_frac * ids.len() as f64;
                    (*class, exact.floor() as usize, exact - exact.floor())
                })
                .collect();
            let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
            // Hand remaining slots to the largest fractional parts.
            quotas.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
            let mut qi = 0;
            while assigned < val_total && !quotas.is_empty() {
                let class_len = class_ids[&quotas[qi].0].len();
                if quotas[qi].1 < class_len {
                    quotas[qi].1 += 1;
                    assigned += 1;
                }
                qi = (qi + 1) % quotas.len();
            }

            let mut val_ids: Vec<String> = Vec::new();
            let mut train_ids: Vec<String> = Vec::new();
            for (class, ids) in &class_ids {
                let quota = quotas.iter().find(|q| q.0 == *class).map(|q| q.1).unwrap_or(0);
                let mut shuffled = ids.clone();
                shuffled.shuffle(&mut seed::rng(
                    master_seed,
                    "cv-val",
                    &[repeat as u64, fold_idx as u64, *class as u64],
                ));
                for (i, id) in shuffled.iter().enumerate() {
                    if i < quota {
                        val_ids.push(id.to_string());
                    } else {
                        train_ids.push(id.to_string());
                    }
                }
            }
            let mut test_ids: Vec<String> = test.iter().map(|s| s.to_string()).collect();
            train_ids.sort();
            val_ids.sort();
            test_ids.sort();
            folds.push(Fold {
                repeat,
                fold: fold_idx,
                train_ids,
                val_ids,
                test_ids,
            });
        }
    }

    Ok(CVPlan {
        k,
        repeats,
        seed: master_seed,
        folds,
    })
}

/// Loads a corpus from a directory tree of `.cha` files plus a metadata
/// CSV with columns `id,label,mmse` (mmse may be blank).
///
/// Each file contributes one transcript: the participant's (`PAR`)
/// utterances, cleaned with the default policy, concatenated in file
/// order. The transcript id is the file stem. Metadata rows without a
/// matching file are skipped with a warning; files without metadata and
/// duplicate ids are errors.
pub fn load_corpus(root: &Path, labels_file: &Path) -> Result<Vec<Transcript>, CorpusError> {
    let meta = read_metadata(labels_file)?;

    let mut paths: Vec<_> = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| p.extension().map(|x| x == "cha").unwrap_or(false))
        .collect();
    paths.sort();

    let mut seen = BTreeSet::new();
    for p in &paths {
        let id = file_stem(p);
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
    }

    let transcripts: Result<Vec<Transcript>, CorpusError> = paths
        .par_iter()
        .map(|path| {
            let id = file_stem(path);
            let (label, mmse) = meta
                .get(&id)
                .copied()
                .ok_or_else(|| CorpusError::MissingMetadata(id.clone()))?;
            let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let doc = chat::parse_chat(&text).map_err(|source| CorpusError::Chat {
                path: path.display().to_string(),
                source,
            })?;
            let policy = CleanPolicy::default();
            let mut tokens = Vec::new();
            for utterance in chat::participant_utterances(&doc, "PAR") {
                let cleaned =
                    chat::clean_utterance(&utterance, &policy).map_err(|source| CorpusError::Chat {
                        path: path.display().to_string(),
                        source,
                    })?;
                tokens.extend(cleaned);
            }
            Transcript::new(id, tokens, label, mmse)
        })
        .collect();
    let transcripts = transcripts?;

    for id in meta.keys() {
        if !seen.contains(id) {
            log::warn!("metadata row {id:?} has no .cha file; skipping");
        }
    }
    Ok(transcripts)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_metadata(path: &Path) -> Result<BTreeMap<String, (Label, Option<u8>)>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CorpusError::Metadata(format!("{}: {e}", path.display())))?;
    let mut meta = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CorpusError::Metadata(format!("row {}: {e}", line + 2)))?;
        if row.len() < 2 {
            return Err(CorpusError::Metadata(format!(
                "row {}: expected id,label[,mmse]",
                line + 2
            )));
        }
        let id = row[0].to_string();
        let label = match &row[1] {
            "0" => Label::Control,
            "1" => Label::Dementia,
            other => {
                return Err(CorpusError::Metadata(format!(
                    "row {}: label must be 0 or 1, got {other:?}",
                    line + 2
                )))
            }
        };
        let mmse = match row.get(2).unwrap_or("") {
            "" => None,
            s => {
                let v: u8 = s.parse().map_err(|_| {
                    CorpusError::Metadata(format!("row {}: bad mmse {s:?}", line + 2))
                })?;
                if v > 30 {
                    return Err(CorpusError::OutOfRange(v as u32));
                }
                Some(v)
            }
        };
        if meta.insert(id.clone(), (label, mmse)).is_some() {
            return Err(CorpusError::DuplicateId(id));
        }
    }
    Ok(meta)
}

/// Writes a dataset as JSONL (one transcript object per line, dataset
/// order, compact JSON). The inverse of [`read_cache`].
pub fn write_cache(path: &Path, dataset: &[Transcript]) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for t in dataset {
        serde_json::to_writer(&mut buf, t)
            .map_err(|e| CorpusError::Metadata(format!("serialize {}: {e}", t.id)))?;
        buf.push(b'\n');
    }
    crate::write_atomic(path, &buf).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a JSONL dataset cache, re-validating every transcript invariant.
pub fn read_cache(path: &Path) -> Result<Vec<Transcript>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line).map_err(|e| CorpusError::CacheFormat {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        let t = Transcript::new(t.id, t.tokens, t.label, t.mmse)?;
        if !seen.insert(t.id.clone()) {
            return Err(CorpusError::DuplicateId(t.id));
        }
        out.push(t);
    }
    Ok(out)
}

/// Tunables of the synthetic corpus generator.
#[derive(Debug, Clone)]
pub struct SyntheticProfile {
    /// Inclusive range of sentences per transcript, same for both classes
    /// (so sentence *counts* do not separate the groups).
    pub sentences_range: (usize, usize),
    /// Probability that a dementia sentence acquires an "and" prefix.
    pub and_burst_prob: f64,
    /// Probability that a dementia sentence opens with an interjection.
    pub interjection_prob: f64,
    /// Probability that a control noun/participle slot uses a hard
    /// (3+ syllable) word.
    pub hard_word_prob: f64,
    /// Probability that a dementia transcript's MMSE is missing.
    pub mmse_missing_rate: f64,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        SyntheticProfile {
            sentences_range: (9, 14),
            and_burst_prob: 0.35,
            interjection_prob: 0.5,
            hard_word_prob: 0.35,
            mmse_missing_rate: 0.0,
        }
    }
}

const CONTROL_NOUNS: &[&str] = &[
    "boy", "girl", "mother", "cookie", "jar", "stool", "sink", "water", "window", "curtain",
    "plate", "dish", "garden", "kitchen", "counter",
];
const CONTROL_NOUNS_HARD: &[&str] = &[
    "refrigerator", "television", "newspaper", "dishwasher", "windowsill",
];
const CONTROL_PLACES: &[&str] = &["kitchen", "garden", "window", "corner", "house"];
const CONTROL_VBG: &[&str] = &[
    "watching", "reaching", "standing", "washing", "falling", "running", "looking", "smiling",
    "playing", "drying",
];
const CONTROL_VBG_HARD: &[&str] = &["overflowing", "daydreaming", "motioning", "balancing"];
const CONTROL_ADJ: &[&str] = &["little", "busy", "happy", "tall"];

const DEMENTIA_PRP: &[&str] = &["he", "she", "i", "it", "they", "we"];
const DEMENTIA_VBD: &[&str] = &[
    "fell", "forgot", "went", "said", "was", "got", "saw", "came", "took", "looked", "dropped",
    "stopped",
];
const DEMENTIA_UH: &[&str] = &["oh", "yeah", "hm", "huh", "wow", "gosh"];
const DEMENTIA_RB: &[&str] = &[
    "really", "maybe", "here", "there", "now", "then", "again", "down", "just", "so",
];
const DEMENTIA_NOUNS: &[&str] = &["thing", "man", "dog", "cat", "hand", "door", "house"];

/// Generates a deterministic synthetic corpus of `n_per_class` control and
/// `n_per_class` dementia transcripts.
///
/// By construction the classes are linearly separable from their bags of
/// words (each side has exclusive vocabulary), control texts are longer
/// with more syllables and more difficult words, and the part-of-speech
/// profile mirrors clinical findings: participles (VBG), determiners (DT)
/// and nouns (NN) mark controls, while pronouns (PRP), past-tense verbs
/// (VBD), interjections (UH) and adverbs (RB) mark dementia. Control MMSE
/// is drawn from 26..=30, dementia MMSE from 5..=26.
pub fn generate_synthetic(
    master_seed: u64,
    n_per_class: usize,
    profile: &SyntheticProfile,
) -> Vec<Transcript> {
    let mut out = Vec::with_capacity(2 * n_per_class);
    let width = n_per_class.saturating_sub(1).max(1).to_string().len();

    for i in 0..n_per_class {
        let mut rng = seed::rng(master_seed, "synth-control", &[i as u64]);
        let tokens = control_transcript(&mut rng, profile);
        let mmse = rng.gen_range(26..=30u8);
        out.push(
            Transcript::new(
                format!("control_{i:0width$}"),
                tokens,
                Label::Control,
                Some(mmse),
            )
            .expect("generator output satisfies invariants"),
        );
    }
    for i in 0..n_per_class {
        let mut rng = seed::rng(master_seed, "synth-dementia", &[i as u64]);
        let tokens = dementia_transcript(&mut rng, profile);
        let mmse = if rng.gen_bool(profile.mmse_missing_rate.clamp(0.0, 1.0)) {
            None
        } else {
            Some(rng.gen_range(5..=26u8))
        };
        out.push(
            Transcript::new(
                format!("dementia_{i:0width$}"),
                tokens,
                Label::Dementia,
                mmse,
            )
            .expect("generator output satisfies invariants"),
        );
    }
    out
}

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("pools are non-empty")
}

fn control_transcript<R: Rng>(rng: &mut R, profile: &SyntheticProfile) -> Vec<String> {
    let (lo, hi) = profile.sentences_range;
    let n_sentences = rng.gen_range(lo..=hi);
    let mut tokens = Vec::new();
    for _ in 0..n_sentences {
        let noun = |rng: &mut R| {
            if rng.gen_bool(profile.hard_word_prob) {
                pick(rng, CONTROL_NOUNS_HARD)
            } else {
                pick(rng, CONTROL_NOUNS)
            }
        };
        let vbg = |rng: &mut R| {
            if rng.gen_bool(profile.hard_word_prob) {
                pick(rng, CONTROL_VBG_HARD)
            } else {
                pick(rng, CONTROL_VBG)
            }
        };
        let sentence: Vec<String> = match rng.gen_range(0..5) {
            0 => vec![
                "the".into(),
                noun(rng).into(),
                "is".into(),
                vbg(rng).into(),
            ],
            1 => vec![
                "the".into(),
                noun(rng).into(),
                "is".into(),
                vbg(rng).into(),
                "the".into(),
                noun(rng).into(),
            ],
            2 => vec![
                "the".into(),
                noun(rng).into(),
                "and".into(),
                "the".into(),
                noun(rng).into(),
                "are".into(),
                vbg(rng).into(),
            ],
            3 => vec![
                "the".into(),
                noun(rng).into(),
                "is".into(),
                vbg(rng).into(),
                "in".into(),
                "the".into(),
                pick(rng, CONTROL_PLACES).into(),
            ],
            _ => vec![
                "a".into(),
                pick(rng, CONTROL_ADJ).into(),
                noun(rng).into(),
                "is".into(),
                vbg(rng).into(),
                "the".into(),
                noun(rng).into(),
            ],
        };
        tokens.extend(sentence);
        tokens.push(".".into());
    }
    tokens
}

fn dementia_transcript<R: Rng>(rng: &mut R, profile: &SyntheticProfile) -> Vec<String> {
    let (lo, hi) = profile.sentences_range;
    let n_sentences = rng.gen_range(lo..=hi);
    let mut tokens = Vec::new();
    for _ in 0..n_sentences {
        let mut sentence: Vec<String> = match rng.gen_range(0..5) {
            0 => vec![
                pick(rng, DEMENTIA_PRP).into(),
                pick(rng, DEMENTIA_VBD).into(),
                pick(rng, DEMENTIA_RB).into(),
            ],
            1 => vec![
                pick(rng, DEMENTIA_PRP).into(),
                pick(rng, DEMENTIA_VBD).into(),
                "the".into(),
                pick(rng, DEMENTIA_NOUNS).into(),
            ],
            2 => vec![
                pick(rng, DEMENTIA_PRP).into(),
                pick(rng, DEMENTIA_VBD).into(),
                "it".into(),
                pick(rng, DEMENTIA_RB).into(),
            ],
            3 => vec![
                "then".into(),
                pick(rng, DEMENTIA_PRP).into(),
                pick(rng, DEMENTIA_VBD).into(),
            ],
            _ => vec![
                pick(rng, DEMENTIA_PRP).into(),
                pick(rng, DEMENTIA_VBD).into(),
                pick(rng, DEMENTIA_RB).into(),
                pick(rng, DEMENTIA_RB).into(),
            ],
        };
        if rng.gen_bool(profile.interjection_prob) {
            sentence.insert(0, pick(rng, DEMENTIA_UH).into());
        }
        if rng.gen_bool(profile.and_burst_prob) {
            sentence.insert(0, "and".into());
        }
        tokens.extend(sentence);
        tokens.push(".".into());
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_dataset(n_control: usize, n_dementia: usize) -> Vec<Transcript> {
        let mut out = Vec::new();
        for i in 0..n_control {
            out.push(
                Transcript::new(format!("c{i:03}"), vec!["a".into()], Label::Control, Some(28))
                    .unwrap(),
            );
        }
        for i in 0..n_dementia {
            out.push(
                Transcript::new(format!("d{i:03}"), vec!["b".into()], Label::Dementia, Some(18))
                    .unwrap(),
            );
        }
        out
    }

    #[test]
    fn severity_boundaries_are_exact() {
        let cases = [
            (30, SeverityClass::Healthy),
            (25, SeverityClass::Healthy),
            (24, SeverityClass::Mild),
            (21, SeverityClass::Mild),
            (20, SeverityClass::Moderate),
            (10, SeverityClass::Moderate),
            (9, SeverityClass::Severe),
            (0, SeverityClass::Severe),
        ];
        for (mmse, want) in cases {
            assert_eq!(mmse_to_severity(mmse).unwrap(), want, "mmse {mmse}");
        }
        assert!(matches!(mmse_to_severity(31), Err(CorpusError::OutOfRange(31))));
        // Severity strictly increases as MMSE decreases across buckets.
        assert!(SeverityClass::Healthy < SeverityClass::Mild);
        assert!(SeverityClass::Mild < SeverityClass::Moderate);
        assert!(SeverityClass::Moderate < SeverityClass::Severe);
    }

    #[test]
    fn transcript_invariants_are_checked() {
        assert!(Transcript::new("x".into(), vec![], Label::Control, None).is_err());
        assert!(Transcript::new("x".into(), vec!["a".into()], Label::Control, Some(31)).is_err());
    }

    #[test]
    fn cv_fold_sizes_for_balanced_78_78() {
        let data = toy_dataset(78, 78);
        let plan = stratified_cv(&data, 10, 3, 0.2, 7).unwrap();
        assert_eq!(plan.folds.len(), 30);
        for fold in &plan.folds {
            let n = fold.test_ids.len();
            assert!(n == 15 || n == 16, "test fold size {n}");
        }
        // Per repeat the test folds partition the corpus.
        for r in 0..3 {
            let mut all: Vec<&String> = plan
                .folds
                .iter()
                .filter(|f| f.repeat == r)
                .flat_map(|f| &f.test_ids)
                .collect();
            all.sort();
            assert_eq!(all.len(), 156);
            all.dedup();
            assert_eq!(all.len(), 156);
        }
    }

    #[test]
    fn cv_k2_on_four_balanced_samples() {
        let data = toy_dataset(2, 2);
        let plan = stratified_cv(&data, 2, 1, 0.0, 1).unwrap();
        for fold in &plan.folds {
            let controls = fold.test_ids.iter().filter(|id| id.starts_with('c')).count();
            let dementias = fold.test_ids.iter().filter(|id| id.starts_with('d')).count();
            assert_eq!((controls, dementias), (1, 1));
        }
    }

    #[test]
    fn cv_is_deterministic() {
        let data = toy_dataset(20, 15);
        let a = stratified_cv(&data, 5, 2, 0.2, 99).unwrap();
        let b = stratified_cv(&data, 5, 2, 0.2, 99).unwrap();
        assert_eq!(a, b);
        let c = stratified_cv(&data, 5, 2, 0.2, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cv_rejects_small_classes() {
        let data = toy_dataset(3, 10);
        assert!(matches!(
            stratified_cv(&data, 5, 1, 0.2, 1),
            Err(CorpusError::TooFewSamples(_))
        ));
    }

    proptest! {
        /// Train/val/test are disjoint, test folds partition each repeat,
        /// validation size follows the rounding rule, and stratification
        /// keeps each class within one sample of proportionality.
        #[test]
        fn cv_invariants(
            n_control in 6usize..40,
            n_dementia in 6usize..40,
            k in 2usize..6,
            repeats in 1usize..3,
            seed in 0u64..1000,
        ) {
            let data = toy_dataset(n_control, n_dementia);
            prop_assume!(n_control >= k && n_dementia >= k);
            let plan = stratified_cv(&data, k, repeats, 0.2, seed).unwrap();
            prop_assert_eq!(plan.folds.len(), k * repeats);

            let n = n_control + n_dementia;
            for fold in &plan.folds {
                let train: BTreeSet<_> = fold.train_ids.iter().collect();
                let val: BTreeSet<_> = fold.val_ids.iter().collect();
                let test: BTreeSet<_> = fold.test_ids.iter().collect();
                prop_assert!(train.is_disjoint(&val));
                prop_assert!(train.is_disjoint(&test));
                prop_assert!(val.is_disjoint(&test));
                prop_assert_eq!(train.len() + val.len() + test.len(), n);

                let trainval = train.len() + val.len();
                let want_val = (0.2 * trainval as f64).round() as usize;
                prop_assert_eq!(val.len(), want_val);

                // Test-fold class counts within one of exact proportion.
                let c_test = fold.test_ids.iter().filter(|id| id.starts_with('c')).count();
                let exact = n_control as f64 * fold.test_ids.len() as f64 / n as f64;
                prop_assert!((c_test as f64 - exact).abs() <= 1.0 + 1e-9);
            }
            for r in 0..repeats {
                let mut all: Vec<_> = plan.folds.iter()
                    .filter(|f| f.repeat == r)
                    .flat_map(|f| f.test_ids.iter())
                    .collect();
                all.sort();
                let total = all.len();
                all.dedup();
                prop_assert_eq!(all.len(), total);
                prop_assert_eq!(total, n);
            }
        }
    }

    #[test]
    fn synthetic_corpus_shape_and_determinism() {
        let a = generate_synthetic(1, 39, &SyntheticProfile::default());
        assert_eq!(a.len(), 78);
        assert_eq!(a.iter().filter(|t| t.label == Label::Control).count(), 39);
        for t in &a {
            assert!(!t.tokens.is_empty());
            match t.label {
                Label::Control => assert!(t.mmse.unwrap() >= 26),
                Label::Dementia => assert!(t.mmse.unwrap() <= 26),
            }
        }
        let b = generate_synthetic(1, 39, &SyntheticProfile::default());
        assert_eq!(a, b);
        let c = generate_synthetic(2, 39, &SyntheticProfile::default());
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_dementia_texts_are_pronoun_heavy() {
        let data = generate_synthetic(3, 30, &SyntheticProfile::default());
        let prp_rate = |t: &Transcript| {
            let prp = t
                .tokens
                .iter()
                .filter(|w| DEMENTIA_PRP.contains(&w.as_str()))
                .count();
            prp as f64 / t.tokens.len() as f64
        };
        let mean = |label: Label| {
            let rates: Vec<f64> = data
                .iter()
                .filter(|t| t.label == label)
                .map(prp_rate)
                .collect();
            rates.iter().sum::<f64>() / rates.len() as f64
        };
        assert!(mean(Label::Dementia) > mean(Label::Control) + 0.05);
    }

    #[test]
    fn cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let data = generate_synthetic(5, 4, &SyntheticProfile::default());
        write_cache(&path, &data).unwrap();
        let back = read_cache(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn load_corpus_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for (id, text) in [
            ("s01", "@Begin\n*PAR:\tthe boy fell .\n@End\n"),
            ("s02", "@Begin\n*PAR:\t&uh the [//] the stool .\n*INV:\tgo on .\n@End\n"),
            ("s03", "@Begin\n*PAR:\tshe was washing dishes .\n@End\n"),
        ] {
            fs::write(dir.path().join(format!("{id}.cha")), text).unwrap();
        }
        let meta_path = dir.path().join("meta.csv");
        fs::write(
            &meta_path,
            "id,label,mmse\ns01,1,18\ns02,1,\ns03,0,29\nghost,0,30\n",
        )
        .unwrap();

        let data = load_corpus(dir.path(), &meta_path).unwrap();
        assert_eq!(data.len(), 3, "metadata row without a file is skipped");
        assert_eq!(data[0].id, "s01");
        assert_eq!(data[0].tokens, vec!["the", "boy", "fell", "."]);
        assert_eq!(data[0].label, Label::Dementia);
        assert_eq!(data[0].mmse, Some(18));
        assert_eq!(data[1].tokens, vec!["the", "stool", "."]);
        assert_eq!(data[1].mmse, None);

        // A file without metadata is an error.
        fs::write(dir.path().join("s04.cha"), "*PAR:\thello .\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path(), &meta_path),
            Err(CorpusError::MissingMetadata(id)) if id == "s04"
        ));
    }

    #[test]
    fn metadata_duplicate_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let meta_path = dir.path().join("meta.csv");
        fs::write(&meta_path, "id,label,mmse\ns01,1,18\ns01,0,29\n").unwrap();
        fs::write(dir.path().join("s01.cha"), "*PAR:\thello .\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path(), &meta_path),
            Err(CorpusError::DuplicateId(_))
        ));
    }
}
