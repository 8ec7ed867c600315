//! Parser for a pragmatic subset of the CHAT (`.cha`) transcript format.
//!
//! CHAT files interleave `@` header lines, `*XXX:` main speaker tiers, and
//! `%xxx:` dependent annotation tiers; long tiers continue onto following
//! lines that begin with a tab. This module parses that structure, exposes
//! the utterances of a chosen speaker, and normalizes the inline annotation
//! codes (retracings, repetitions, fillers, pauses, shortenings, timing
//! bullets) into a clean token stream ready for linguistic analysis.
//!
//! The subset covers exactly what the downstream pipeline consumes: full
//! CHAT has hundreds of codes, and unknown bracketed codes are dropped with
//! a warning rather than rejected, so real-world files degrade gracefully.
//!
//! # Example
//!
//! ```
//! use adlex::chat::{parse_chat, participant_utterances, clean_utterance, CleanPolicy};
//!
//! let doc = parse_chat("@Begin\n*PAR:\t&uh the [//] the stool .\n@End").unwrap();
//! let raw = participant_utterances(&doc, "PAR");
//! let tokens = clean_utterance(&raw[0], &CleanPolicy::default()).unwrap();
//! assert_eq!(tokens, vec!["the", "stool", "."]);
//! ```

use thiserror::Error;

/// Errors produced while parsing or cleaning CHAT text.
#[derive(Debug, Error, PartialEq)]
pub enum ChatError {
    /// A line that is not a header, tier, or continuation, or a tier line
    /// whose prefix is not `*XXX:` / `%xxx:` where expected.
    #[error("malformed tier at line {line_no}: {line:?}")]
    MalformedTier { line_no: usize, line: String },
    /// The document contained no main tiers at all.
    #[error("document contains no speaker tiers")]
    EmptyDocument,
    /// An opening `[` or `<` without its matching closer.
    #[error("unbalanced {bracket:?} in utterance {utterance:?}")]
    UnbalancedBracket { bracket: char, utterance: String },
}

/// A parsed CHAT document: the `@` headers and the ordered speaker tiers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatDocument {
    /// `(key, value)` pairs from `@`-lines, in file order. The key includes
    /// the leading `@`; the value is everything after the first colon,
    /// verbatim (typically starting with a tab), or empty for marker
    /// headers like `@Begin`.
    pub headers: Vec<(String, String)>,
    /// Main tiers in file order, with their dependent tiers attached.
    pub tiers: Vec<Tier>,
}

/// One main speaker tier and the dependent tiers that follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tier {
    /// Three-letter speaker code (`PAR`, `INV`, ...).
    pub speaker: String,
    /// Utterance text with continuation lines joined by single spaces.
    pub raw_text: String,
    /// `(code, text)` pairs from `%`-lines (e.g. `("mor", ...)`).
    pub dependent_tiers: Vec<(String, String)>,
}

/// Controls which annotation classes [`clean_utterance`] removes.
///
/// Every flag is independent. The bracketed codes themselves (`[//]`,
/// `[: ...]`, `[x 3]`, ...) never survive cleaning; the flags decide what
/// happens to the *material* they annotate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanPolicy {
    /// Delete the word or `<...>` group preceding a retracing mark `[//]`.
    pub drop_retracings: bool,
    /// Delete the word or `<...>` group preceding a repetition mark `[/]`.
    pub drop_repetition_marks: bool,
    /// Drop filler tokens beginning with `&` (`&uh`, `&-um`, `&=laughs`).
    pub drop_fillers: bool,
    /// Drop the unintelligible-speech placeholders `xxx` and `yyy`.
    pub drop_unintelligible: bool,
    /// Lowercase every surviving token.
    pub lowercase: bool,
    /// Keep utterance terminators (`.`, `?`, `!`) as standalone tokens.
    pub keep_terminators: bool,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        CleanPolicy {
            drop_retracings: true,
            drop_repetition_marks: true,
            drop_fillers: true,
            drop_unintelligible: true,
            lowercase: true,
            keep_terminators: true,
        }
    }
}

/// Parses CHAT text into headers and speaker tiers.
///
/// Lines beginning with `@` are headers, `*` main tiers, `%` dependent
/// tiers; lines beginning with a tab continue the most recent (main or
/// dependent) tier and are joined with a single space. Blank lines are
/// ignored.
pub fn parse_chat(text: &str) -> Result<ChatDocument, ChatError> {
    let mut headers = Vec::new();
    let mut tiers: Vec<Tier> = Vec::new();

    /// What a continuation line attaches to.
    enum Target {
        None,
        Main,
        Dependent,
    }
    let mut target = Target::None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |line: &str| ChatError::MalformedTier {
            line_no,
            line: line.to_string(),
        };

        if let Some(rest) = line.strip_prefix('@') {
            match rest.split_once(':') {
                Some((key, value)) => headers.push((format!("@{key}"), value.to_string())),
                None => headers.push((line.to_string(), String::new())),
            }
            target = Target::None;
        } else if let Some(rest) = line.strip_prefix('*') {
            let (speaker, text) = rest.split_once(':').ok_or_else(|| malformed(line))?;
            if speaker.len() != 3 || !speaker.chars().all(|c| c.is_ascii_uppercase()) {
                return Err(malformed(line));
            }
            tiers.push(Tier {
                speaker: speaker.to_string(),
                raw_text: strip_tier_indent(text).to_string(),
                dependent_tiers: Vec::new(),
            });
            target = Target::Main;
        } else if let Some(rest) = line.strip_prefix('%') {
            let (code, text) = rest.split_once(':').ok_or_else(|| malformed(line))?;
            let tier = tiers.last_mut().ok_or_else(|| malformed(line))?;
            tier.dependent_tiers
                .push((code.to_string(), strip_tier_indent(text).to_string()));
            target = Target::Dependent;
        } else if let Some(rest) = line.strip_prefix('\t') {
            let tier = tiers.last_mut().ok_or_else(|| malformed(line))?;
            let joined = match target {
                Target::Main => &mut tier.raw_text,
                Target::Dependent => {
                    &mut tier
                        .dependent_tiers
                        .last_mut()
                        .expect("dependent target implies a dependent tier")
                        .1
                }
                Target::None => return Err(malformed(line)),
            };
            if !joined.is_empty() {
                joined.push(' ');
            }
            joined.push_str(rest.trim_end());
        } else {
            return Err(malformed(line));
        }
    }

    for (i, t) in tiers.iter().enumerate() {
        if t.raw_text.is_empty() {
            return Err(ChatError::MalformedTier {
                line_no: 0,
                line: format!("tier {} (*{}) has no utterance text", i + 1, t.speaker),
            });
        }
    }
    if tiers.is_empty() {
        return Err(ChatError::EmptyDocument);
    }
    Ok(ChatDocument { headers, tiers })
}

/// Tier text follows `*XXX:` after a single tab (canonically) or space.
fn strip_tier_indent(text: &str) -> &str {
    text.strip_prefix('\t')
        .or_else(|| text.strip_prefix(' '))
        .unwrap_or(text)
        .trim_end()
}

impl ChatDocument {
    /// Re-serializes the headers and tiers in the canonical tab-separated
    /// layout: headers, then tiers, with `@End` (when present) closing the
    /// file. For documents parsed from canonically formatted text (tab
    /// after the colon, no continuation lines) this reproduces the input
    /// lines byte for byte; joined continuations serialize as one line.
    pub fn to_chat_text(&self) -> String {
        let mut out = String::new();
        let mut saw_end = false;
        for (key, value) in &self.headers {
            if key == "@End" && value.is_empty() {
                saw_end = true;
                continue;
            }
            if value.is_empty() {
                out.push_str(key);
            } else {
                out.push_str(key);
                out.push(':');
                out.push_str(value);
            }
            out.push('\n');
        }
        for tier in &self.tiers {
            out.push_str(&format!("*{}:\t{}\n", tier.speaker, tier.raw_text));
            for (code, text) in &tier.dependent_tiers {
                out.push_str(&format!("%{code}:\t{text}\n"));
            }
        }
        if saw_end {
            out.push_str("@End\n");
        }
        out
    }
}

/// Returns the raw utterances of `speaker` in file order.
///
/// An empty result is valid (the speaker simply never talks).
pub fn participant_utterances(doc: &ChatDocument, speaker: &str) -> Vec<String> {
    doc.tiers
        .iter()
        .filter(|t| t.speaker == speaker)
        .map(|t| t.raw_text.clone())
        .collect()
}

/// One lexed item of an utterance, before annotation resolution.
enum Item {
    Word(String),
    /// Content of a `[...]` code, without the brackets.
    Bracket(String),
    /// Words of a `<...>` group, which retracing marks treat as a unit.
    Angle(Vec<String>),
}

/// Material pending output; retracing/repetition marks pop one entry.
enum Pending {
    Word(String),
    Group(Vec<String>),
}

/// Cleans one raw utterance into a token stream.
///
/// Processing order:
/// 1. timing bullets (`\u{15}...\u{15}` spans) are removed;
/// 2. `[//]` and `[/]` delete the preceding word or `<...>` group (per
///    policy) — the final, intended wording survives;
/// 3. `[: ...]` replacements, `[* ...]` error codes, `[+ ...]` postcodes,
///    and `[x N]` repetition counts are dropped; unknown bracketed codes
///    are dropped with a warning;
/// 4. `&`-prefixed fillers, pause marks (`(.)`, `(..)`, `(...)`), and
///    `xxx`/`yyy` unintelligible placeholders are dropped per policy;
/// 5. shortenings expand by deleting parentheses (`(be)cause` → `because`,
///    `doin(g)` → `doing`);
/// 6. tokens are lowercased per policy; terminators `.` `?` `!` stay as
///    standalone tokens when `keep_terminators` is set.
///
/// Cleaning is idempotent: re-cleaning a cleaned stream (re-joined with
/// spaces) under the same policy changes nothing.
pub fn clean_utterance(raw: &str, policy: &CleanPolicy) -> Result<Vec<String>, ChatError> {
    let without_bullets = strip_timing_bullets(raw);
    let items = lex_utterance(&without_bullets, raw)?;

    // Resolve retracing/repetition marks against the pending material.
    let mut pending: Vec<Pending> = Vec::new();
    for item in items {
        match item {
            Item::Word(w) => pending.push(Pending::Word(w)),
            Item::Angle(ws) => pending.push(Pending::Group(ws)),
            Item::Bracket(code) => {
                let code_trim = code.trim();
                if code_trim == "//" {
                    if policy.drop_retracings {
                        pending.pop();
                    }
                } else if code_trim == "/" {
                    if policy.drop_repetition_marks {
                        pending.pop();
                    }
                } else if code_trim.starts_with(':')
                    || code_trim.starts_with('*')
                    || code_trim.starts_with('+')
                    || is_repetition_count(code_trim)
                {
                    // Replacement text, error codes, postcodes, and
                    // repetition counts annotate the preceding material,
                    // which stays; the code itself is dropped.
                } else {
                    log::warn!("dropping unknown CHAT code [{code_trim}]");
                }
            }
        }
    }

    let mut tokens = Vec::new();
    for p in pending {
        match p {
            Pending::Word(w) => tokens.push(w),
            Pending::Group(ws) => tokens.extend(ws),
        }
    }

    // Per-token normalization.
    let mut out = Vec::new();
    for token in tokens {
        if token.starts_with('&') {
            if policy.drop_fillers {
                continue;
            }
            out.push(finish_token(token, policy));
            continue;
        }
        if matches!(token.as_str(), "(.)" | "(..)" | "(...)") {
            continue;
        }
        if matches!(token.as_str(), "." | "?" | "!") {
            if policy.keep_terminators {
                out.push(token);
            }
            continue;
        }
        let expanded: String = token.chars().filter(|&c| c != '(' && c != ')').collect();
        if expanded.is_empty() {
            continue;
        }
        if policy.drop_unintelligible && matches!(expanded.as_str(), "xxx" | "yyy") {
            continue;
        }
        out.push(finish_token(expanded, policy));
    }
    Ok(out)
}

fn finish_token(token: String, policy: &CleanPolicy) -> String {
    if policy.lowercase {
        token.to_lowercase()
    } else {
        token
    }
}

/// `[x N]` marks N-fold repetition of the preceding word.
fn is_repetition_count(code: &str) -> bool {
    code.strip_prefix('x')
        .map(|rest| !rest.trim().is_empty() && rest.trim().chars().all(|c| c.is_ascii_digit()))
        .unwrap_or(false)
}

/// Removes `\u{15}...\u{15}` media timing spans (an unpaired marker drops
/// the rest of the line, with a warning).
fn strip_timing_bullets(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c == '\u{15}' {
            let mut closed = false;
            for inner in chars.by_ref() {
                if inner == '\u{15}' {
                    closed = true;
                    break;
                }
            }
            if !closed {
                log::warn!("unterminated timing bullet in {raw:?}");
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// Splits an utterance into words, `[...]` codes, and `<...>` groups.
fn lex_utterance(text: &str, original: &str) -> Result<Vec<Item>, ChatError> {
    let mut items = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let unbalanced = |bracket| ChatError::UnbalancedBracket {
        bracket,
        utterance: original.to_string(),
    };

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '[' {
            let close = find_char(&chars, i + 1, ']').ok_or_else(|| unbalanced('['))?;
            items.push(Item::Bracket(chars[i + 1..close].iter().collect()));
            i = close + 1;
        } else if c == '<' {
            let close = find_char(&chars, i + 1, '>').ok_or_else(|| unbalanced('<'))?;
            let inner: String = chars[i + 1..close].iter().collect();
            items.push(Item::Angle(
                inner.split_whitespace().map(str::to_string).collect(),
            ));
            i = close + 1;
        } else {
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() && chars[i] != '[' && chars[i] != '<'
            {
                i += 1;
            }
            items.push(Item::Word(chars[start..i].iter().collect()));
        }
    }
    Ok(items)
}

fn find_char(chars: &[char], from: usize, needle: char) -> Option<usize> {
    chars[from..].iter().position(|&c| c == needle).map(|p| from + p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn clean_default(raw: &str) -> Vec<String> {
        clean_utterance(raw, &CleanPolicy::default()).unwrap()
    }

    #[test]
    fn empty_input_is_an_empty_document() {
        assert_eq!(parse_chat(""), Err(ChatError::EmptyDocument));
        assert_eq!(
            parse_chat("@Begin\n@End"),
            Err(ChatError::EmptyDocument),
            "headers alone do not make a document"
        );
    }

    #[test]
    fn parses_single_tier() {
        let doc = parse_chat("@Begin\n*PAR:\tthe boy .\n@End").unwrap();
        assert_eq!(doc.tiers.len(), 1);
        assert_eq!(doc.tiers[0].speaker, "PAR");
        assert_eq!(doc.tiers[0].raw_text, "the boy .");
        assert_eq!(doc.headers, vec![("@Begin".into(), String::new()), ("@End".into(), String::new())]);
    }

    #[test]
    fn dependent_tier_attaches_to_preceding_main_tier() {
        let doc = parse_chat("*PAR:\tthe boy .\n%mor:\tdet|the n|boy .\n").unwrap();
        assert_eq!(
            doc.tiers[0].dependent_tiers,
            vec![("mor".to_string(), "det|the n|boy .".to_string())]
        );
    }

    #[test]
    fn continuation_lines_join_with_spaces() {
        let doc = parse_chat("*PAR:\tthe boy is\n\treaching for the jar .\n").unwrap();
        assert_eq!(doc.tiers[0].raw_text, "the boy is reaching for the jar .");

        let doc = parse_chat("*PAR:\tok .\n%mor:\tfirst\n\tsecond\n").unwrap();
        assert_eq!(doc.tiers[0].dependent_tiers[0].1, "first second");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(
            parse_chat("*PARTICIPANT:\thello .\n"),
            Err(ChatError::MalformedTier { line_no: 1, .. })
        ));
        assert!(matches!(
            parse_chat("*PAR hello\n"),
            Err(ChatError::MalformedTier { .. })
        ));
        assert!(matches!(
            parse_chat("%mor:\torphan\n"),
            Err(ChatError::MalformedTier { .. })
        ));
        assert!(matches!(
            parse_chat("\tcontinuation without a tier\n"),
            Err(ChatError::MalformedTier { .. })
        ));
        assert!(matches!(
            parse_chat("plain prose line\n"),
            Err(ChatError::MalformedTier { .. })
        ));
    }

    #[test]
    fn round_trips_canonical_text() {
        let text = "@UTF8\n@Begin\n@Participants:\tPAR Participant, INV Investigator\n\
                    *PAR:\tthe boy fell .\n%mor:\tdet|the n|boy v|fall&PAST .\n\
                    *INV:\tgo on .\n@End\n";
        let doc = parse_chat(text).unwrap();
        assert_eq!(doc.to_chat_text(), text);
    }

    #[test]
    fn participant_utterances_filters_and_preserves_order() {
        let doc = parse_chat("*PAR:\tone .\n*INV:\ttwo .\n*PAR:\tthree .\n").unwrap();
        assert_eq!(participant_utterances(&doc, "PAR"), vec!["one .", "three ."]);
        assert_eq!(participant_utterances(&doc, "INV"), vec!["two ."]);
        assert!(participant_utterances(&doc, "MOT").is_empty());
    }

    #[test]
    fn clean_passthrough() {
        assert_eq!(clean_default("the boy ."), vec!["the", "boy", "."]);
    }

    #[test]
    fn clean_retracing_and_filler() {
        assert_eq!(clean_default("&uh the [//] the stool ."), vec!["the", "stool", "."]);
    }

    #[test]
    fn clean_repetition_count_and_replacement() {
        assert_eq!(clean_default("he [x 3] fell [: fell down] ."), vec!["he", "fell", "."]);
    }

    #[test]
    fn clean_angle_group_retracing() {
        assert_eq!(
            clean_default("<the big boy> [//] the girl ."),
            vec!["the", "girl", "."]
        );
        // A plain angle group (no following mark) unwraps in place.
        assert_eq!(clean_default("<the boy> ran ."), vec!["the", "boy", "ran", "."]);
    }

    #[test]
    fn clean_repetition_mark() {
        assert_eq!(clean_default("the [/] the dog ."), vec!["the", "dog", "."]);
    }

    #[test]
    fn clean_pauses_unintelligible_and_bullets() {
        assert_eq!(clean_default("well (.) xxx the sink \u{15}1200_3400\u{15} ."), vec!["well", "the", "sink", "."]);
    }

    #[test]
    fn clean_expands_shortenings() {
        assert_eq!(clean_default("(be)cause doin(g) fine ."), vec!["because", "doing", "fine", "."]);
    }

    #[test]
    fn clean_error_codes_and_postcodes() {
        assert_eq!(
            clean_default("the gut [* s:r] fell [+ gram] ."),
            vec!["the", "gut", "fell", "."]
        );
    }

    #[test]
    fn clean_respects_policy_flags() {
        let keep_all = CleanPolicy {
            drop_retracings: false,
            drop_repetition_marks: false,
            drop_fillers: false,
            drop_unintelligible: false,
            lowercase: false,
            keep_terminators: false,
        };
        assert_eq!(
            clean_utterance("&uh The [//] the xxx Stool .", &keep_all).unwrap(),
            vec!["&uh", "The", "the", "xxx", "Stool"]
        );
    }

    #[test]
    fn clean_reports_unbalanced_brackets() {
        assert!(matches!(
            clean_utterance("the [// stool .", &CleanPolicy::default()),
            Err(ChatError::UnbalancedBracket { bracket: '[', .. })
        ));
        assert!(matches!(
            clean_utterance("<the stool .", &CleanPolicy::default()),
            Err(ChatError::UnbalancedBracket { bracket: '<', .. })
        ));
    }

    #[test]
    fn clean_output_is_free_of_annotation_syntax() {
        let raw = "&uh <the big> [//] the (.) stool [x 2] fell [: fall] [+ exc] xxx .";
        for token in clean_default(raw) {
            assert!(!token.starts_with('&'));
            assert!(!token.contains('[') && !token.contains(']'));
            assert!(!token.contains('<') && !token.contains('>'));
        }
    }

    proptest! {
        /// Cleaning an already-cleaned utterance changes nothing.
        #[test]
        fn cleaning_is_idempotent(
            words in proptest::collection::vec("[a-z]{1,8}", 1..12),
            annotated in proptest::bool::ANY,
        ) {
            let mut raw = String::new();
            for (i, w) in words.iter().enumerate() {
                if annotated && i % 3 == 1 {
                    raw.push_str("&um ");
                }
                raw.push_str(w);
                if annotated && i % 4 == 2 {
                    raw.push_str(" [//] ");
                    raw.push_str(w);
                }
                raw.push(' ');
            }
            raw.push('.');

            let once = clean_default(&raw);
            let twice = clean_default(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        /// Utterance lists of two distinct speakers never share a tier.
        #[test]
        fn speakers_partition_tiers(pattern in proptest::collection::vec(0usize..2, 1..10)) {
            let mut text = String::new();
            for (i, p) in pattern.iter().enumerate() {
                let speaker = if *p == 0 { "PAR" } else { "INV" };
                text.push_str(&format!("*{speaker}:\tutterance number {i} .\n"));
            }
            let doc = parse_chat(&text).unwrap();
            let par = participant_utterances(&doc, "PAR");
            let inv = participant_utterances(&doc, "INV");
            prop_assert_eq!(par.len() + inv.len(), pattern.len());
            for u in &par {
                prop_assert!(!inv.contains(u));
            }
        }
    }
}
