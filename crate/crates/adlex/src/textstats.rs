//! Per-transcript surface statistics (syllables, word count, difficult
//! words, sentence count) and the control-vs-dementia group comparison
//! built on top of them.
//!
//! Clinical picture-description studies consistently find that speakers
//! with dementia produce fewer syllables, fewer words, and fewer hard
//! words per narrative; this module measures exactly those quantities and
//! tests each gap with an independent t-test, correcting the four p-values
//! for multiple comparisons.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Transcript};
use crate::stats::{self, TTestVariant};

/// Bundled common-words list used to decide which polysyllabic words
/// count as "difficult" (one word per line, `#` comments).
const EASY_WORDS_RAW: &str = include_str!("../data/easy_words.txt");

/// Bundled dictionary-syllabification fixture the heuristic is validated
/// against (`word<TAB>count` per line, `#` comments).
#[cfg(test)]
const SYLLABLE_FIXTURE_RAW: &str = include_str!("../data/syllables.tsv");

/// Errors from group comparison and list loading.
#[derive(Debug, Error)]
pub enum TextStatsError {
    /// A diagnostic class had fewer than two members, so no group
    /// statistics can be formed.
    #[error("group {0:?} has fewer than 2 members")]
    DegenerateGroup(&'static str),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("statistics error: {0}")]
    Stats(#[from] stats::StatsError),
}

/// Surface statistics of one cleaned transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct TranscriptStats {
    /// Total syllables over all word tokens.
    pub syllables: usize,
    /// Number of word tokens (tokens containing an ASCII letter).
    pub lexicon: usize,
    /// Word tokens with more than two syllables that are not on the
    /// easy-word list.
    pub difficult: usize,
    /// Terminator tokens (`.`, `?`, `!`), at least 1 for non-empty input.
    pub sentences: usize,
}

/// One row of the four-metric group comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub metric_name: String,
    pub control_mean: f64,
    pub control_std: f64,
    pub dementia_mean: f64,
    pub dementia_std: f64,
    pub t: f64,
    pub p: f64,
    pub p_adjusted: f64,
    /// `p_adjusted < 0.05`.
    pub significant: bool,
}

/// True for tokens that count as words (at least one ASCII letter), false
/// for terminators and other punctuation.
pub fn is_word(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_alphabetic())
}

/// Heuristic syllable count: the number of vowel-group runs (`aeiouy`)
/// after stripping a silent terminal `e` — kept when the word ends in
/// `le` after a consonant — with a minimum of one for any word. Tokens
/// without letters count zero.
///
/// Validated against a bundled dictionary-syllabification fixture of 226
/// words at over 95% exact agreement (see the module tests).
///
/// ```
/// use adlex::textstats::count_syllables;
///
/// assert_eq!(count_syllables("a"), 1);
/// assert_eq!(count_syllables("cookie"), 2);
/// assert_eq!(count_syllables("overflowing"), 4);
/// assert_eq!(count_syllables("little"), 2);
/// assert_eq!(count_syllables("."), 0);
/// ```
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<u8> = word
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_lowercase() as u8)
        .collect();
    if w.is_empty() {
        return 0;
    }
    let is_vowel = |b: u8| matches!(b, b'a' | b'e' | b'i' | b'o' | b'u' | b'y');
    let mut end = w.len();
    // Silent terminal "e" ("make", "cookie"), except the syllabic "-le"
    // of "little" / "able" where a consonant precedes the "l".
    if end >= 2 && w[end - 1] == b'e' {
        let syllabic_le = end >= 3 && w[end - 2] == b'l' && !is_vowel(w[end - 3]);
        if !syllabic_le {
            end -= 1;
        }
    }
    let mut groups = 0;
    let mut in_group = false;
    for &b in &w[..end] {
        let v = is_vowel(b);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    groups.max(1)
}

/// Computes the four surface statistics of a cleaned token stream.
///
/// `easy_words` should hold lowercase entries; the difficult-word check is
/// case-insensitive. Sentences are counted from terminator tokens, with a
/// minimum of one whenever the transcript has any token at all (an
/// unterminated utterance is still one sentence).
///
/// ```
/// use std::collections::BTreeSet;
/// use adlex::textstats::transcript_stats;
///
/// let tokens: Vec<String> = ["the", "boy", "."].iter().map(|s| s.to_string()).collect();
/// let stats = transcript_stats(&tokens, &BTreeSet::new());
/// assert_eq!(stats.lexicon, 2);
/// assert_eq!(stats.sentences, 1);
/// ```
pub fn transcript_stats(tokens: &[String], easy_words: &BTreeSet<String>) -> TranscriptStats {
    let mut out = TranscriptStats::default();
    for token in tokens {
        if is_word(token) {
            let syl = count_syllables(token);
            out.lexicon += 1;
            out.syllables += syl;
            if syl > 2 && !easy_words.contains(&token.to_ascii_lowercase()) {
                out.difficult += 1;
            }
        } else if matches!(token.as_str(), "." | "?" | "!") {
            out.sentences += 1;
        }
    }
    if !tokens.is_empty() {
        out.sentences = out.sentences.max(1);
    }
    out
}

/// Compares the two diagnostic groups on all four metrics.
///
/// Per metric: group mean and sample standard deviation, an independent
/// t-test (`variant`), then Benjamini-Hochberg adjustment across the four
/// p-values. Row order is fixed: syllables, lexicon, difficult words,
/// sentences. Requires at least two transcripts per class.
pub fn compare_groups(
    dataset: &[Transcript],
    easy_words: &BTreeSet<String>,
    variant: TTestVariant,
) -> Result<Vec<GroupComparison>, TextStatsError> {
    let per_metric = |label: Label, pick: fn(&TranscriptStats) -> usize| -> Vec<f64> {
        dataset
            .iter()
            .filter(|t| t.label == label)
            .map(|t| pick(&transcript_stats(&t.tokens, easy_words)) as f64)
            .collect()
    };

    let metrics: [(&str, fn(&TranscriptStats) -> usize); 4] = [
        ("syllables", |s| s.syllables),
        ("lexicon", |s| s.lexicon),
        ("difficult_words", |s| s.difficult),
        ("sentences", |s| s.sentences),
    ];

    let mut rows = Vec::with_capacity(4);
    let mut pvalues = Vec::with_capacity(4);
    for (name, pick) in metrics {
        let control = per_metric(Label::Control, pick);
        let dementia = per_metric(Label::Dementia, pick);
        if control.len() < 2 {
            return Err(TextStatsError::DegenerateGroup("control"));
        }
        if dementia.len() < 2 {
            return Err(TextStatsError::DegenerateGroup("dementia"));
        }
        let test = stats::t_test_independent(&control, &dementia, variant)?;
        pvalues.push(test.p);
        rows.push(GroupComparison {
            metric_name: name.to_string(),
            control_mean: mean(&control),
            control_std: stats::sample_std(&control),
            dementia_mean: mean(&dementia),
            dementia_std: stats::sample_std(&dementia),
            t: test.t,
            p: test.p,
            p_adjusted: 0.0,
            significant: false,
        });
    }
    let adjusted = stats::bh_adjust(&pvalues);
    for (row, padj) in rows.iter_mut().zip(adjusted) {
        row.p_adjusted = padj;
        row.significant = padj < 0.05;
    }
    Ok(rows)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Parses an easy-word list: one word per line, blank lines and `#`
/// comments skipped, entries lowercased.
pub fn parse_easy_words(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_ascii_lowercase)
        .collect()
}

/// Loads an easy-word list from a file (same format as the bundled one).
pub fn load_easy_words(path: &Path) -> Result<BTreeSet<String>, TextStatsError> {
    let text = fs::read_to_string(path).map_err(|source| TextStatsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(parse_easy_words(&text))
}

/// The bundled common-words list (about 2,500 entries).
pub fn bundled_easy_words() -> BTreeSet<String> {
    parse_easy_words(EASY_WORDS_RAW)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticProfile};
    use proptest::prelude::*;

    #[test]
    fn syllable_examples() {
        let cases = [
            ("a", 1),
            ("the", 1),
            ("boy", 1),
            ("cookie", 2),
            ("water", 2),
            ("window", 2),
            ("overflowing", 4),
            ("refrigerator", 5),
            ("little", 2),
            ("able", 2),
            ("tale", 1),
            ("make", 1),
            ("rhythm", 1),
        ];
        for (word, want) in cases {
            assert_eq!(count_syllables(word), want, "word {word:?}");
        }
        assert_eq!(count_syllables("."), 0);
        assert_eq!(count_syllables("?"), 0);
        assert_eq!(count_syllables("it's"), 1, "apostrophe stripped");
    }

    #[test]
    fn syllable_heuristic_matches_dictionary_fixture() {
        let mut total = 0usize;
        let mut mismatches = Vec::new();
        for line in SYLLABLE_FIXTURE_RAW.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, count) = line.split_once('\t').expect("word<TAB>count");
            let want: usize = count.parse().unwrap();
            total += 1;
            if count_syllables(word) != want {
                mismatches.push(word.to_string());
            }
        }
        assert!(total >= 200, "fixture has {total} entries");
        let agreement = (total - mismatches.len()) as f64 / total as f64;
        assert!(
            agreement >= 0.95,
            "agreement {agreement:.4} below 0.95; mismatches: {mismatches:?}"
        );
        // The heuristic's known hard cases; anything beyond these is a
        // regression.
        assert_eq!(
            mismatches,
            ["dropped", "idea", "lion", "maybe", "poem", "quiet"]
        );
    }

    #[test]
    fn transcript_stats_examples() {
        let tok = |words: &[&str]| -> Vec<String> { words.iter().map(|s| s.to_string()).collect() };
        let empty = BTreeSet::new();

        let s = transcript_stats(&tok(&["the", "boy", "."]), &empty);
        assert_eq!(
            s,
            TranscriptStats {
                syllables: 2,
                lexicon: 2,
                difficult: 0,
                sentences: 1
            }
        );

        assert_eq!(transcript_stats(&[], &empty), TranscriptStats::default());

        let s = transcript_stats(&tok(&["overflowing", "."]), &empty);
        assert_eq!(s.difficult, 1);
        assert_eq!(s.syllables, 4);

        // The easy list suppresses the difficult count, case-insensitively.
        let easy: BTreeSet<String> = ["overflowing".to_string()].into();
        let s = transcript_stats(&tok(&["Overflowing", "."]), &easy);
        assert_eq!(s.difficult, 0);

        // Unterminated stream still counts one sentence.
        let s = transcript_stats(&tok(&["hello", "there"]), &empty);
        assert_eq!(s.sentences, 1);

        // Terminators beyond the first are all counted.
        let s = transcript_stats(&tok(&["hi", ".", "bye", ".", "!"]), &empty);
        assert_eq!(s.sentences, 3);
    }

    #[test]
    fn stats_invariants_hold_on_synthetic_text() {
        let easy = bundled_easy_words();
        for t in generate_synthetic(11, 20, &SyntheticProfile::default()) {
            let s = transcript_stats(&t.tokens, &easy);
            assert!(s.difficult <= s.lexicon);
            assert!(s.lexicon == 0 || s.syllables >= s.lexicon);
        }
    }

    #[test]
    fn bundled_easy_words_load() {
        let easy = bundled_easy_words();
        assert!(easy.len() >= 2000, "got {}", easy.len());
        for w in ["the", "water", "cookie", "making", "stopped"] {
            assert!(easy.contains(w), "missing {w:?}");
        }
        // Hard words deliberately absent so they register as difficult.
        for w in ["overflowing", "refrigerator", "daydreaming"] {
            assert!(!easy.contains(w), "unexpectedly easy: {w:?}");
        }
    }

    #[test]
    fn load_easy_words_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("words.txt");
        std::fs::write(&path, "# comment\nAlpha\n\nbeta\n").unwrap();
        let words = load_easy_words(&path).unwrap();
        assert_eq!(words.len(), 2);
        assert!(words.contains("alpha") && words.contains("beta"));
    }

    #[test]
    fn group_comparison_on_separable_synthetic_corpus() {
        let easy = bundled_easy_words();
        let data = generate_synthetic(17, 40, &SyntheticProfile::default());
        let rows = compare_groups(&data, &easy, TTestVariant::Student).unwrap();
        assert_eq!(rows.len(), 4);
        let names: Vec<&str> = rows.iter().map(|r| r.metric_name.as_str()).collect();
        assert_eq!(
            names,
            ["syllables", "lexicon", "difficult_words", "sentences"]
        );
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.p));
            assert!(row.p_adjusted >= row.p - 1e-15);
            assert_eq!(row.significant, row.p_adjusted < 0.05);
        }
        // The generator separates length-based metrics but draws sentence
        // counts from one distribution for both classes.
        assert!(rows[0].significant, "syllables: {:?}", rows[0]);
        assert!(rows[1].significant, "lexicon: {:?}", rows[1]);
        assert!(rows[2].significant, "difficult words: {:?}", rows[2]);
        assert!(!rows[3].significant, "sentences: {:?}", rows[3]);
        assert!(rows[0].control_mean > rows[0].dementia_mean);
        assert!(rows[2].dementia_mean < 1.0, "dementia text stays simple");
    }

    #[test]
    fn group_comparison_rejects_tiny_groups() {
        let data = generate_synthetic(5, 1, &SyntheticProfile::default());
        let easy = BTreeSet::new();
        assert!(matches!(
            compare_groups(&data, &easy, TTestVariant::Student),
            Err(TextStatsError::DegenerateGroup(_))
        ));
    }

    proptest! {
        /// Any purely alphabetic word has at least one syllable.
        #[test]
        fn syllables_at_least_one(word in "[a-zA-Z]{1,20}") {
            prop_assert!(count_syllables(&word) >= 1);
        }

        /// Stats are additive over concatenation when both chunks carry
        /// their own terminator (so the minimum-one rule never fires).
        #[test]
        fn stats_additive_over_concatenation(
            a in proptest::collection::vec("[a-z]{1,10}", 1..20),
            b in proptest::collection::vec("[a-z]{1,10}", 1..20),
        ) {
            let easy = BTreeSet::new();
            let term = |v: &[String]| {
                let mut v = v.to_vec();
                v.push(".".to_string());
                v
            };
            let (a, b) = (term(&a), term(&b));
            let mut ab = a.clone();
            ab.extend(b.iter().cloned());
            let (sa, sb, sab) = (
                transcript_stats(&a, &easy),
                transcript_stats(&b, &easy),
                transcript_stats(&ab, &easy),
            );
            prop_assert_eq!(sab.syllables, sa.syllables + sb.syllables);
            prop_assert_eq!(sab.lexicon, sa.lexicon + sb.lexicon);
            prop_assert_eq!(sab.difficult, sa.difficult + sb.difficult);
            prop_assert_eq!(sab.sentences, sa.sentences + sb.sentences);
        }
    }
}
