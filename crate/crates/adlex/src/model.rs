//! The classifier architectures: a pluggable per-token encoder, a
//! single-task head (global average pooling → dense-128 ReLU → sigmoid),
//! a siamese co-attention variant that compares the two halves of a
//! transcript, and a multi-task variant that predicts diagnosis and
//! cognitive severity jointly.
//!
//! All parameters live in a flat `BTreeMap<String, Matrix>` keyed by
//! dotted names (`encoder.embed`, `coattn.w_l`, `head.w1`, ...); a
//! forward pass records onto a [`Tape`] through [`Var`] leaves created by
//! [`leaves_on_tape`]. The same parameter map serializes into a versioned
//! JSON checkpoint with exact float64 round-tripping.
//!
//! Token encodings are matrices with one column per token (`d × N`), so
//! attention maps are row vectors and pooled features are `1 × d` rows.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SeverityClass;
use crate::seed;
use crate::tensor::{Matrix, Tape, Var};

/// Errors from configuration, encoding, and checkpoint handling.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    /// Siamese splitting needs at least two tokens.
    #[error("transcript {id:?} has {len} token(s); need at least 2 to split")]
    TooShort { id: String, len: usize },
    /// A precomputed-embedding id was not in the store.
    #[error("no precomputed embedding for transcript {0:?}")]
    MissingEmbedding(String),
    #[error("severity index {0} out of range 0..=3")]
    InvalidSeverity(usize),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// How the toy encoder mixes context into per-token embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContextLayer {
    /// Blends each embedding halfway toward the transcript mean.
    MeanContext,
    /// One scaled dot-product self-attention mixing layer.
    SelfAttnLayer,
}

/// Where token encodings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// A trainable embedding table plus a context layer.
    ToyTrainable,
    /// Fixed per-transcript matrices loaded from a file.
    PrecomputedFile,
}

/// Encoder configuration shared by every architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Known tokens (sorted, deduplicated); everything else maps to a
    /// reserved UNK slot. Ignored by [`EncoderKind::PrecomputedFile`].
    pub vocab: Vec<String>,
    /// Embedding width `d`.
    pub embed_dim: usize,
    pub context: ContextLayer,
    /// Token sequences are truncated to this many positions.
    pub max_len: usize,
}

/// Fixed per-transcript encodings: a versioned JSON file holding one
/// `d × N` matrix per transcript id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecomputedStore {
    pub version: u32,
    pub dim: usize,
    pub embeddings: BTreeMap<String, Matrix>,
}

impl PrecomputedStore {
    pub const VERSION: u32 = 1;

    /// Loads and validates a store file.
    pub fn load(path: &Path) -> Result<PrecomputedStore, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let store: PrecomputedStore = serde_json::from_str(&text)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        if store.version != Self::VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported embedding store version {} (expected {})",
                store.version,
                Self::VERSION
            )));
        }
        for (id, m) in &store.embeddings {
            if m.rows() != store.dim {
                return Err(ModelError::Checkpoint(format!(
                    "embedding for {id:?} has {} rows, store dim is {}",
                    m.rows(),
                    store.dim
                )));
            }
        }
        Ok(store)
    }

    /// Writes the store as JSON (pretty, atomic).
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        crate::write_atomic(path, &json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// A configured encoder: resolves tokens (or stored ids) to `d × N`
/// encoding matrices on a tape.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// token → embedding column (column 0 is reserved for UNK).
    token_index: BTreeMap<String, usize>,
    store: Option<PrecomputedStore>,
}

impl Encoder {
    pub fn new(
        mut config: EncoderConfig,
        store: Option<PrecomputedStore>,
    ) -> Result<Encoder, ModelError> {
        if config.embed_dim < 2 {
            return Err(ModelError::BadConfig(format!(
                "embed_dim must be >= 2, got {}",
                config.embed_dim
            )));
        }
        if config.max_len == 0 {
            return Err(ModelError::BadConfig("max_len must be >= 1".into()));
        }
        match config.kind {
            EncoderKind::ToyTrainable => {
                if config.vocab.is_empty() {
                    return Err(ModelError::BadConfig(
                        "ToyTrainable encoder needs a non-empty vocab".into(),
                    ));
                }
                config.vocab.sort();
                config.vocab.dedup();
            }
            EncoderKind::PrecomputedFile => {
                let store = store
                    .as_ref()
                    .ok_or_else(|| ModelError::BadConfig("PrecomputedFile needs a store".into()))?;
                if store.dim != config.embed_dim {
                    return Err(ModelError::BadConfig(format!(
                        "store dim {} does not match embed_dim {}",
                        store.dim, config.embed_dim
                    )));
                }
            }
        }
        let token_index = config
            .vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 1))
            .collect();
        Ok(Encoder {
            config,
            token_index,
            store,
        })
    }

    /// Embedding-table width: vocab plus the UNK column.
    pub fn table_cols(&self) -> usize {
        self.config.vocab.len() + 1
    }

    /// Fresh encoder parameters (empty for precomputed stores).
    pub fn init_params(&self, master_seed: u64) -> BTreeMap<String, Matrix> {
        let mut params = BTreeMap::new();
        if self.config.kind == EncoderKind::ToyTrainable {
            let d = self.config.embed_dim;
            params.insert(
                "encoder.embed".to_string(),
                Matrix::glorot_uniform(
                    d,
                    self.table_cols(),
                    &mut seed::rng(master_seed, "init/encoder.embed", &[]),
                ),
            );
            if self.config.context == ContextLayer::SelfAttnLayer {
                params.insert(
                    "encoder.attn_v".to_string(),
                    Matrix::glorot_uniform(
                        d,
                        d,
                        &mut seed::rng(master_seed, "init/encoder.attn_v", &[]),
                    ),
                );
            }
        }
        params
    }

    /// Encodes a token sequence (or fetches the stored matrix for `id`)
    /// as a `d × N` variable, truncated to `max_len` positions. Unknown
    /// tokens map to the reserved UNK column; an empty sequence encodes
    /// as a single UNK column, so heavily masked inputs (as produced by
    /// perturbation-based explainers) still yield a prediction.
    pub fn encode(
        &self,
        tape: &Tape,
        vars: &BTreeMap<String, Var>,
        tokens: &[String],
        id: &str,
    ) -> Result<Var, ModelError> {
        match self.config.kind {
            EncoderKind::ToyTrainable => {
                let mut ids: Vec<usize> = tokens
                    .iter()
                    .take(self.config.max_len)
                    .map(|t| self.token_index.get(t).copied().unwrap_or(0))
                    .collect();
                if ids.is_empty() {
                    ids.push(0);
                }
                let x = vars["encoder.embed"].pick_cols(&ids);
                Ok(self.contextualize(tape, vars, &x))
            }
            EncoderKind::PrecomputedFile => {
                let store = self.store.as_ref().expect("validated at construction");
                let m = store
                    .embeddings
                    .get(id)
                    .ok_or_else(|| ModelError::MissingEmbedding(id.to_string()))?;
                let n = m.cols().min(self.config.max_len);
                let mut truncated = Matrix::zeros(m.rows(), n);
                for r in 0..m.rows() {
                    for c in 0..n {
                        truncated.set(r, c, m.get(r, c));
                    }
                }
                Ok(tape.constant(truncated))
            }
        }
    }

    fn contextualize(&self, _tape: &Tape, vars: &BTreeMap<String, Var>, x: &Var) -> Var {
        match self.config.context {
            ContextLayer::MeanContext => {
                // C = 0.5·X + 0.5·mean(X) in every column.
                let mean = x.mean_over_columns().scale(0.5);
                x.scale(0.5).add_col_broadcast(&mean)
            }
            ContextLayer::SelfAttnLayer => {
                // A = softmax(XᵀX / √d) row-wise; C = tanh(X + V·(X·Aᵀ)).
                let d = self.config.embed_dim as f64;
                let scores = x.transpose().matmul(x).scale(1.0 / d.sqrt());
                let attn = scores.row_softmax();
                let mixed = x.matmul(&attn.transpose());
                x.add(&vars["encoder.attn_v"].matmul(&mixed)).tanh()
            }
        }
    }
}

/// Splits a transcript into its two halves: the first `⌈n/2⌉` tokens and
/// the rest, so the halves differ in length by at most one.
///
/// ```
/// use adlex::model::split_transcript;
///
/// let tokens: Vec<String> = (0..11).map(|i| i.to_string()).collect();
/// let (s1, s2) = split_transcript("t", &tokens).unwrap();
/// assert_eq!((s1.len(), s2.len()), (6, 5));
/// ```
pub fn split_transcript<'a>(
    id: &str,
    tokens: &'a [String],
) -> Result<(&'a [String], &'a [String]), ModelError> {
    if tokens.len() < 2 {
        return Err(ModelError::TooShort {
            id: id.to_string(),
            len: tokens.len(),
        });
    }
    let mid = tokens.len().div_ceil(2);
    Ok(tokens.split_at(mid))
}

/// Attention outputs of [`coattention`].
pub struct CoAttentionOut {
    /// Concatenated attended summaries `[ŝ, ĉ]`, shape `1 × 2d`.
    pub p: Var,
    /// Attention over the second half's positions, `1 × T`, sums to 1.
    pub a_s: Var,
    /// Attention over the first half's positions, `1 × N`, sums to 1.
    pub a_c: Var,
}

/// Co-attention between two encodings `C (d×N)` and `S (d×T)`.
///
/// An affinity map `F = tanh(Cᵀ W_l S)` couples the two halves; each
/// half's hidden map attends over the other through it, and the resulting
/// attention rows produce one convex combination of each half's columns:
///
/// * `Hˢ = tanh(W_s S + (W_c C) F)`, `Hᶜ = tanh(W_c C + (W_s S) Fᵀ)`
/// * `aˢ = softmax(w_hsᵀ Hˢ)`, `aᶜ = softmax(w_hcᵀ Hᶜ)`
/// * `ŝ = aˢ Sᵀ`, `ĉ = aᶜ Cᵀ`, `p = [ŝ, ĉ]`
///
/// `W_l` is `d×d`, `W_s`/`W_c` are `k×d`, and `w_hs`/`w_hc` are `k×1`.
pub fn coattention(
    c: &Var,
    s: &Var,
    w_l: &Var,
    w_s: &Var,
    w_c: &Var,
    w_hs: &Var,
    w_hc: &Var,
) -> CoAttentionOut {
    let f = c.transpose().matmul(&w_l.matmul(s)).tanh(); // N×T
    let ws_s = w_s.matmul(s); // k×T
    let wc_c = w_c.matmul(c); // k×N
    let h_s = ws_s.add(&wc_c.matmul(&f)).tanh(); // k×T
    let h_c = wc_c.add(&ws_s.matmul(&f.transpose())).tanh(); // k×N
    let a_s = w_hs.transpose().matmul(&h_s).row_softmax(); // 1×T
    let a_c = w_hc.transpose().matmul(&h_c).row_softmax(); // 1×N
    let s_hat = a_s.matmul(&s.transpose()); // 1×d
    let c_hat = a_c.matmul(&c.transpose()); // 1×d
    CoAttentionOut {
        p: s_hat.concat_rows(&c_hat),
        a_s,
        a_c,
    }
}

/// Which architecture a [`Model`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Pool → dense-128 ReLU → sigmoid.
    Stl,
    /// Split → shared encoder → co-attention → dropout → dense head.
    Siamese,
    /// Pooled representation with 2-way and 4-way softmax heads.
    Mtl(MtlVariant),
}

/// Multi-task head wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MtlVariant {
    /// Both heads read the shared pooled representation directly.
    Shared,
    /// Each task first applies its own `d×d` mixing layer (the shared
    /// encoder stays frozen during training).
    DoubleEncoder,
}

/// Joint-loss configuration for the multi-task heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the severity term; the diagnosis term gets `1 - alpha`.
    pub alpha: f64,
    /// Per-severity-class weights (healthy, mild, moderate, severe).
    pub severity_class_weights: [f64; 4],
}

impl LossConfig {
    pub fn new(alpha: f64, severity_class_weights: [f64; 4]) -> Result<LossConfig, ModelError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ModelError::BadConfig(format!(
                "alpha must be in [0,1], got {alpha}"
            )));
        }
        if severity_class_weights.iter().any(|&w| !(w > 0.0)) {
            return Err(ModelError::BadConfig(format!(
                "severity class weights must be positive, got {severity_class_weights:?}"
            )));
        }
        Ok(LossConfig {
            alpha,
            severity_class_weights,
        })
    }
}

/// Balanced class weights `w_c = n_total / (4 · n_c)` over the samples
/// with a known severity; classes absent from the fold get weight 1.
pub fn balanced_severity_weights<'a, I>(severities: I) -> [f64; 4]
where
    I: IntoIterator<Item = &'a SeverityClass>,
{
    let mut counts = [0usize; 4];
    for s in severities {
        counts[s.index()] += 1;
    }
    let total: usize = counts.iter().sum();
    let mut weights = [1.0; 4];
    for (w, &n) in weights.iter_mut().zip(&counts) {
        if n > 0 {
            *w = total as f64 / (4.0 * n as f64);
        }
    }
    weights
}

/// The hidden width of the dense classification head.
pub const HEAD_HIDDEN: usize = 128;

/// Filler token for padding too-short siamese inputs. The angle brackets
/// keep it out of any real vocabulary (cleaned transcripts never contain
/// them), so it always encodes as the UNK column.
pub const PAD_TOKEN: &str = "<pad>";

/// A complete architecture: encoder plus head configuration.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub kind: ModelKind,
    /// Co-attention hidden size (siamese only); defaults to `d / 2`.
    pub k: usize,
    /// Dropout rate applied to the co-attended features while training.
    pub dropout_rate: f64,
}

impl Model {
    /// Builds a model with the default attention bottleneck `k = d/2`.
    pub fn new(encoder: Encoder, kind: ModelKind) -> Model {
        let k = (encoder.config.embed_dim / 2).max(1);
        Model {
            encoder,
            kind,
            k,
            dropout_rate: 0.4,
        }
    }

    fn head_input_dim(&self) -> usize {
        let d = self.encoder.config.embed_dim;
        match self.kind {
            ModelKind::Siamese => 2 * d,
            _ => d,
        }
    }

    /// Fresh parameters for every component of this architecture, each
    /// drawn from its own named seed stream.
    pub fn init_params(&self, master_seed: u64) -> BTreeMap<String, Matrix> {
        let d = self.encoder.config.embed_dim;
        let mut params = self.encoder.init_params(master_seed);
        let glorot = |name: &str, rows: usize, cols: usize| {
            Matrix::glorot_uniform(
                rows,
                cols,
                &mut seed::rng(master_seed, &format!("init/{name}"), &[]),
            )
        };
        match self.kind {
            ModelKind::Stl | ModelKind::Siamese => {
                if self.kind == ModelKind::Siamese {
                    params.insert("coattn.w_l".into(), glorot("coattn.w_l", d, d));
                    params.insert("coattn.w_s".into(), glorot("coattn.w_s", self.k, d));
                    params.insert("coattn.w_c".into(), glorot("coattn.w_c", self.k, d));
                    params.insert("coattn.w_hs".into(), glorot("coattn.w_hs", self.k, 1));
                    params.insert("coattn.w_hc".into(), glorot("coattn.w_hc", self.k, 1));
                }
                let input = self.head_input_dim();
                params.insert("head.w1".into(), glorot("head.w1", input, HEAD_HIDDEN));
                params.insert("head.b1".into(), Matrix::zeros(1, HEAD_HIDDEN));
                params.insert("head.w2".into(), glorot("head.w2", HEAD_HIDDEN, 1));
                params.insert("head.b2".into(), Matrix::zeros(1, 1));
            }
            ModelKind::Mtl(variant) => {
                if variant == MtlVariant::DoubleEncoder {
                    params.insert("mix.dem".into(), Matrix::identity(d));
                    params.insert("mix.sev".into(), Matrix::identity(d));
                }
                params.insert("head.dem_w".into(), glorot("head.dem_w", d, 2));
                params.insert("head.dem_b".into(), Matrix::zeros(1, 2));
                params.insert("head.sev_w".into(), glorot("head.sev_w", d, 4));
                params.insert("head.sev_b".into(), Matrix::zeros(1, 4));
            }
        }
        params
    }

    /// Pooled `1 × d` representation of a transcript.
    fn pooled(
        &self,
        tape: &Tape,
        vars: &BTreeMap<String, Var>,
        tokens: &[String],
        id: &str,
    ) -> Result<Var, ModelError> {
        let c = self.encoder.encode(tape, vars, tokens, id)?;
        Ok(c.mean_over_columns().transpose())
    }

    fn dense_head(&self, vars: &BTreeMap<String, Var>, features: &Var) -> Var {
        let h = features
            .matmul(&vars["head.w1"])
            .add(&vars["head.b1"])
            .relu();
        h.matmul(&vars["head.w2"]).add(&vars["head.b2"]).sigmoid()
    }

    /// Single-task forward: pooled encoding through the dense head,
    /// returning a `1 × 1` dementia probability.
    pub fn stl_forward(
        &self,
        tape: &Tape,
        vars: &BTreeMap<String, Var>,
        tokens: &[String],
        id: &str,
    ) -> Result<Var, ModelError> {
        let pooled = self.pooled(tape, vars, tokens, id)?;
        Ok(self.dense_head(vars, &pooled))
    }

    /// Siamese forward: both transcript halves go through the *same*
    /// encoder parameters, the co-attention couples them, and the
    /// concatenated summary (after dropout while training) feeds the
    /// dense head. Returns a `1 × 1` dementia probability.
    pub fn siamese_forward<R: Rng>(
        &self,
        tape: &Tape,
        vars: &BTreeMap<String, Var>,
        tokens: &[String],
        id: &str,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, ModelError> {
        let (c, s) = match self.encoder.config.kind {
            EncoderKind::ToyTrainable => {
                // Degenerate inputs (heavily masked texts from an
                // explainer, single-word utterances) are padded with an
                // UNK-mapped token so both halves are non-empty.
                let padded;
                let splittable: &[String] = if tokens.len() < 2 {
                    let mut v = tokens.to_vec();
                    while v.len() < 2 {
                        v.push(PAD_TOKEN.to_string());
                    }
                    padded = v;
                    &padded
                } else {
                    tokens
                };
                let (first, second) = split_transcript(id, splittable)?;
                (
                    self.encoder.encode(tape, vars, first, id)?,
                    self.encoder.encode(tape, vars, second, id)?,
                )
            }
            EncoderKind::PrecomputedFile => {
                // Stored encodings split by column instead of by token.
                let full = self.encoder.encode(tape, vars, tokens, id)?;
                let n = full.shape().1;
                if n < 2 {
                    return Err(ModelError::TooShort {
                        id: id.to_string(),
                        len: n,
                    });
                }
                let mid = n.div_ceil(2);
                (
                    full.pick_cols(&(0..mid).collect::<Vec<_>>()),
                    full.pick_cols(&(mid..n).collect::<Vec<_>>()),
                )
            }
        };
        let out = coattention(
            &c,
            &s,
            &vars["coattn.w_l"],
            &vars["coattn.w_s"],
            &vars["coattn.w_c"],
            &vars["coattn.w_hs"],
            &vars["coattn.w_hc"],
        );
        let p = out.p.dropout(self.dropout_rate, training, rng);
        Ok(self.dense_head(vars, &p))
    }

    /// Multi-task forward: pooled encoding into a 2-way diagnosis head
    /// and a 4-way severity head (each a softmax row). The double-encoder
    /// variant first passes the pooled row through a per-task mixing
    /// layer; with identity mixing it reproduces the shared variant
    /// exactly.
    pub fn mtl_forward(
        &self,
        tape: &Tape,
        vars: &BTreeMap<String, Var>,
        tokens: &[String],
        id: &str,
    ) -> Result<(Var, Var), ModelError> {
        let ModelKind::Mtl(variant) = self.kind else {
            return Err(ModelError::BadConfig(
                "mtl_forward on a non-MTL model".into(),
            ));
        };
        let pooled = self.pooled(tape, vars, tokens, id)?;
        let (dem_in, sev_in) = match variant {
            MtlVariant::Shared => (pooled.clone(), pooled),
            MtlVariant::DoubleEncoder => (
                pooled.matmul(&vars["mix.dem"]),
                pooled.matmul(&vars["mix.sev"]),
            ),
        };
        let dem = dem_in
            .matmul(&vars["head.dem_w"])
            .add(&vars["head.dem_b"])
            .row_softmax();
        let sev = sev_in
            .matmul(&vars["head.sev_w"])
            .add(&vars["head.sev_b"])
            .row_softmax();
        Ok((dem, sev))
    }

    /// Evaluation-mode dementia probability (STL or siamese), on a fresh
    /// throwaway tape with no gradients.
    pub fn predict_binary(
        &self,
        params: &BTreeMap<String, Matrix>,
        tokens: &[String],
        id: &str,
    ) -> Result<f64, ModelError> {
        let tape = Tape::new();
        let vars = leaves_on_tape(&tape, params, &BTreeSet::new(), false);
        let prob = match self.kind {
            ModelKind::Stl => self.stl_forward(&tape, &vars, tokens, id)?,
            ModelKind::Siamese => {
                // Eval mode: dropout is inert, the rng is never used.
                let mut rng = seed::rng(0, "eval", &[]);
                self.siamese_forward(&tape, &vars, tokens, id, false, &mut rng)?
            }
            ModelKind::Mtl(_) => {
                let (dem, _) = self.mtl_forward(&tape, &vars, tokens, id)?;
                return Ok(dem.value().get(0, 1));
            }
        };
        Ok(prob.scalar())
    }

    /// Evaluation-mode class distributions of the multi-task model.
    pub fn predict_mtl(
        &self,
        params: &BTreeMap<String, Matrix>,
        tokens: &[String],
        id: &str,
    ) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let tape = Tape::new();
        let vars = leaves_on_tape(&tape, params, &BTreeSet::new(), false);
        let (dem, sev) = self.mtl_forward(&tape, &vars, tokens, id)?;
        Ok((dem.value().data().to_vec(), sev.value().data().to_vec()))
    }
}

/// Joint multi-task loss `(1-α)·CE(diagnosis) + α·w_c·CE(severity)`.
///
/// The diagnosis term is the cross-entropy of the true label under the
/// 2-way head; the severity term is the class-weighted cross-entropy
/// under the 4-way head, and drops to zero when the severity is unknown
/// (transcripts without a recorded MMSE still train the diagnosis task).
pub fn joint_loss(
    dem_probs: &Var,
    sev_probs: &Var,
    label: u8,
    severity: Option<SeverityClass>,
    config: &LossConfig,
) -> Result<Var, ModelError> {
    assert!(label <= 1, "label must be 0 or 1, got {label}");
    let dem_ce = dem_probs.ce_from_probs(&[(0, label as usize, 1.0)]);
    let sev_ce = match severity {
        Some(s) => {
            let idx = s.index();
            if idx > 3 {
                return Err(ModelError::InvalidSeverity(idx));
            }
            sev_probs.ce_from_probs(&[(0, idx, config.severity_class_weights[idx])])
        }
        None => sev_probs.ce_from_probs(&[]),
    };
    Ok(dem_ce
        .scale(1.0 - config.alpha)
        .add(&sev_ce.scale(config.alpha)))
}

/// Puts every parameter on the tape as a leaf. Names in `frozen` (or all
/// names, when `freeze_all` is set) record without gradient tracking.
pub fn leaves_on_tape(
    tape: &Tape,
    params: &BTreeMap<String, Matrix>,
    frozen: &BTreeSet<String>,
    freeze_all: bool,
) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(name, m)| {
            let requires = !freeze_all && !frozen.contains(name);
            (name.clone(), tape.leaf(m.clone(), requires))
        })
        .collect()
}

/// All parameter names starting with `prefix` (e.g. `"encoder."`).
pub fn names_with_prefix(params: &BTreeMap<String, Matrix>, prefix: &str) -> BTreeSet<String> {
    params
        .keys()
        .filter(|n| n.starts_with(prefix))
        .cloned()
        .collect()
}

/// A trained model frozen to disk: versioned JSON with exact float64
/// parameter round-tripping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    pub k: usize,
    pub dropout_rate: f64,
    pub params: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    pub const VERSION: u32 = 1;

    /// Captures a model and its parameters.
    pub fn new(model: &Model, params: BTreeMap<String, Matrix>) -> Checkpoint {
        Checkpoint {
            version: Self::VERSION,
            kind: model.kind,
            encoder: model.encoder.config.clone(),
            k: model.k,
            dropout_rate: model.dropout_rate,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json =
            serde_json::to_vec(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        crate::write_atomic(path, &json).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        if ckpt.version != Self::VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {})",
                ckpt.version,
                Self::VERSION
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model and verifies the stored parameters have exactly
    /// the shapes a fresh model of this configuration would create.
    pub fn into_model(self) -> Result<(Model, BTreeMap<String, Matrix>), ModelError> {
        if self.encoder.kind == EncoderKind::PrecomputedFile {
            return Err(ModelError::Checkpoint(
                "checkpoints with precomputed encoders must be paired with their store; \
                 rebuild the model directly instead"
                    .into(),
            ));
        }
        let encoder = Encoder::new(self.encoder, None)?;
        let mut model = Model::new(encoder, self.kind);
        model.k = self.k;
        model.dropout_rate = self.dropout_rate;
        let expected = model.init_params(0);
        if expected.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (name, m) in &expected {
            let got = self
                .params
                .get(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name:?}")))?;
            if got.shape() != m.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {name:?} has shape {:?}, expected {:?}",
                    got.shape(),
                    m.shape()
                )));
            }
        }
        Ok((model, self.params))
    }
}
