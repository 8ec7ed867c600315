//! Dementia-screening analysis of clinical speech transcripts.
//!
//! `adlex` is a self-contained pipeline for studying the language of
//! picture-description interviews (Cookie Theft style) and for training
//! small neural classifiers that separate dementia from control speakers.
//! Everything runs at desk scale on a CPU with no external services and
//! no pretrained weights.
//!
//! # Pipeline
//!
//! 1. [`chat`] — parse CHAT (`.cha`) transcript files and normalize the
//!    annotation codes into clean token streams.
//! 2. [`corpus`] — attach labels and MMSE scores, plan stratified
//!    cross-validation, and synthesize test corpora.
//! 3. [`textstats`] — per-transcript readability statistics (syllables,
//!    lexicon, difficult words, sentences) with group significance tests.
//! 4. [`divergence`] — vocabulary overlap (Jaccard) and smoothed unigram
//!    language-model divergence (Kullback-Leibler) between groups.
//! 5. [`markers`] — per-feature point-biserial correlation of unigram and
//!    part-of-speech frequencies against the diagnosis label.
//! 6. [`tensor`] — a minimal dense `f64` matrix type with reverse-mode
//!    automatic differentiation, just large enough for the models here.
//! 7. [`model`] — the classifier architectures: single-task pooled
//!    classifier, siamese co-attention classifier, and multi-task heads
//!    with a joint loss over diagnosis and severity.
//! 8. [`trainer`] — Adam, early stopping, learning-rate reduction,
//!    two-phase freeze/unfreeze schedules, and repeated stratified
//!    cross-validation with the standard evaluation metrics.
//! 9. [`lime`] — perturbation-based local explanations of a trained
//!    model's prediction for one transcript.
//! 10. [`stats`] — the shared statistical primitives (t-test,
//!     Benjamini-Hochberg, point-biserial, incomplete beta).
//!
//! The [`cli`] module wires all of the above into the `adlex` binary;
//! each stage is also exercised by a runnable example in `examples/`.
//!
//! # Determinism
//!
//! Every randomized component takes an explicit seed and derives its
//! random stream from a counter-based generator, so identical seeds
//! produce byte-identical artifacts on every platform. Collections that
//! feed output files iterate in sorted order.

pub mod chat;
pub mod cli;
pub mod corpus;
pub mod divergence;
pub mod lime;
pub mod markers;
pub mod model;
pub mod seed;
pub mod stats;
pub mod tensor;
pub mod textstats;
pub mod trainer;

mod io_util;

pub use io_util::write_atomic;
