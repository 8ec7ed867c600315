//! The training protocol: Adam optimization, early stopping on
//! validation loss, learning-rate reduction on plateau, a two-phase
//! freeze/unfreeze schedule for the single-task and siamese models, and
//! repeated stratified cross-validation with metric aggregation.
//!
//! Everything is seeded: epoch shuffles, dropout, and per-fold
//! initializations all derive from named seed streams, so identical runs
//! produce identical parameter trajectories.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CVPlan, Label, Transcript};
use crate::model::{
    balanced_severity_weights, joint_loss, leaves_on_tape, names_with_prefix, ContextLayer,
    Encoder, EncoderConfig, EncoderKind, LossConfig, Model, ModelError, ModelKind,
};
use crate::seed;
use crate::tensor::{Matrix, Tape, TensorError, Var};

/// Errors from schedule validation, optimization, and fold assembly.
#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("no parameter named {0:?}")]
    UnknownParameter(String),
    #[error("gradient for {name:?} has shape {got:?}, parameter is {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("fold references unknown transcript id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Learning-rate and patience settings for a full training run.
///
/// Two-phase models read both phase blocks; single-phase (multi-task)
/// models read only the `phase1` fields. `max_epochs` caps the *total*
/// epoch count across phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub phase1_lr: f64,
    pub phase2_lr: f64,
    pub es_patience_phase1: usize,
    pub es_patience_phase2: usize,
    pub rlrop_factor: f64,
    pub rlrop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
}

impl TrainSchedule {
    /// Protocol defaults for each architecture: the head-only phase runs
    /// at 1e-4 (single-task) or 1e-3 (siamese, whose co-attention block
    /// trains from scratch) with patience 9, the fine-tuning phase at
    /// 1e-5 with patience 3; the multi-task models train in a single
    /// phase at 1e-6 with patience 8.
    pub fn for_kind(kind: ModelKind) -> TrainSchedule {
        let (phase1_lr, es_patience_phase1) = match kind {
            ModelKind::Stl => (1e-4, 9),
            ModelKind::Siamese => (1e-3, 9),
            ModelKind::Mtl(_) => (1e-6, 8),
        };
        TrainSchedule {
            phase1_lr,
            phase2_lr: 1e-5,
            es_patience_phase1,
            es_patience_phase2: 3,
            rlrop_factor: 0.2,
            rlrop_patience: 3,
            max_epochs: 500,
            batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if !(self.phase1_lr > 0.0) || !(self.phase2_lr > 0.0) {
            return Err(TrainerError::BadSchedule(format!(
                "learning rates must be > 0, got {} and {}",
                self.phase1_lr, self.phase2_lr
            )));
        }
        if !(self.rlrop_factor > 0.0 && self.rlrop_factor < 1.0) {
            return Err(TrainerError::BadSchedule(format!(
                "reduction factor must be in (0,1), got {}",
                self.rlrop_factor
            )));
        }
        if self.es_patience_phase1 == 0 || self.es_patience_phase2 == 0 || self.rlrop_patience == 0
        {
            return Err(TrainerError::BadSchedule("patiences must be >= 1".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(TrainerError::BadSchedule(
                "max_epochs and batch_size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Binary classification metrics with dementia as the positive class.
/// Every zero-denominator ratio is reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub specificity: f64,
}

impl Metrics {
    /// Metrics from a confusion matrix (positive = dementia).
    ///
    /// ```
    /// use adlex::trainer::Metrics;
    ///
    /// let m = Metrics::from_counts(3, 1, 4, 2);
    /// assert_eq!((m.precision, m.recall), (0.75, 0.6));
    /// assert_eq!((m.accuracy, m.specificity), (0.7, 0.8));
    /// ```
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Metrics {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            precision,
            recall,
            f1,
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            specificity: ratio(tn, tn + fp),
        }
    }
}

/// Per-field arithmetic mean and sample standard deviation over fold
/// metrics (std is 0 for a single fold).
pub fn aggregate_metrics(folds: &[Metrics]) -> (Metrics, Metrics) {
    fn stats(values: Vec<f64>) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (mean, std)
    }
    let field = |get: fn(&Metrics) -> f64| stats(folds.iter().map(get).collect());
    let (p, ps) = field(|m| m.precision);
    let (r, rs) = field(|m| m.recall);
    let (f, fs) = field(|m| m.f1);
    let (a, as_) = field(|m| m.accuracy);
    let (s, ss) = field(|m| m.specificity);
    (
        Metrics {
            precision: p,
            recall: r,
            f1: f,
            accuracy: a,
            specificity: s,
        },
        Metrics {
            precision: ps,
            recall: rs,
            f1: fs,
            accuracy: as_,
            specificity: ss,
        },
    )
}

/// Adam optimizer state: per-parameter first/second moment estimates and
/// a shared step counter, with bias-corrected updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &BTreeMap<String, Matrix>) -> AdamState {
        let zeros: BTreeMap<String, Matrix> = params
            .iter()
            .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update. Only the parameters named in `grads`
/// move (frozen parameters simply have no gradient entry); the step
/// counter increments once per call.
pub fn adam_step(
    params: &mut BTreeMap<String, Matrix>,
    grads: &BTreeMap<String, Matrix>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainerError> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, g) in grads {
        let p = params
            .get_mut(name)
            .ok_or_else(|| TrainerError::UnknownParameter(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(TrainerError::ShapeMismatch {
                name: name.clone(),
                expected: p.shape(),
                got: g.shape(),
            });
        }
        let m = state.m.get_mut(name).expect("state covers all parameters");
        let v = state.v.get_mut(name).expect("state covers all parameters");
        for ((pi, mi), (vi, gi)) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut().iter_mut().zip(g.data()))
        {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// One phase of the training plan.
#[derive(Debug, Clone, Copy)]
struct Phase {
    lr: f64,
    patience: usize,
    /// (factor, patience) of learning-rate reduction on plateau.
    rlrop: Option<(f64, usize)>,
    freeze_encoder: bool,
}

/// The per-architecture phase plan: two-phase (frozen encoder with LR
/// reduction, then full fine-tuning) for the single-task and siamese
/// models; one phase for the multi-task models, with the encoder frozen
/// in the double-encoder variant.
fn phases_for(kind: ModelKind, s: &TrainSchedule) -> Vec<Phase> {
    match kind {
        ModelKind::Stl | ModelKind::Siamese => vec![
            Phase {
                lr: s.phase1_lr,
                patience: s.es_patience_phase1,
                rlrop: Some((s.rlrop_factor, s.rlrop_patience)),
                freeze_encoder: true,
            },
            Phase {
                lr: s.phase2_lr,
                patience: s.es_patience_phase2,
                rlrop: None,
                freeze_encoder: false,
            },
        ],
        ModelKind::Mtl(variant) => vec![Phase {
            lr: s.phase1_lr,
            patience: s.es_patience_phase1,
            rlrop: None,
            freeze_encoder: variant == crate::model::MtlVariant::DoubleEncoder,
        }],
    }
}

/// Minimum tracker for early stopping and plateau detection: a value
/// counts as an improvement only when it beats the running minimum by
/// more than the tolerance.
struct MinTracker {
    best: f64,
    since: usize,
    tol: f64,
}

impl MinTracker {
    fn new(tol: f64) -> MinTracker {
        MinTracker {
            best: f64::INFINITY,
            since: 0,
            tol,
        }
    }

    /// Records a value; returns whether it set a new strict minimum.
    fn observe(&mut self, value: f64) -> bool {
        if value < self.best - self.tol {
            self.best = value;
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }
}

const MIN_TOL: f64 = 1e-6;

/// One epoch of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based phase number.
    pub phase: usize,
    /// 1-based epoch within the phase.
    pub epoch: usize,
    /// Learning rate used for this epoch's updates.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A finished training run: final parameters (the best-validation
/// weights of the last phase) and the full epoch history.
pub struct FitResult {
    pub params: BTreeMap<String, Matrix>,
    pub history: Vec<EpochRecord>,
}

fn sample_loss<R: rand::Rng>(
    model: &Model,
    tape: &Tape,
    vars: &BTreeMap<String, Var>,
    t: &Transcript,
    training: bool,
    rng: &mut R,
    loss_cfg: Option<&LossConfig>,
) -> Result<Var, TrainerError> {
    let target = t.label.as_u8() as f64;
    match model.kind {
        ModelKind::Stl => Ok(model
            .stl_forward(tape, vars, &t.tokens, &t.id)?
            .bce_loss(&[target])),
        ModelKind::Siamese => Ok(model
            .siamese_forward(tape, vars, &t.tokens, &t.id, training, rng)?
            .bce_loss(&[target])),
        ModelKind::Mtl(_) => {
            let cfg = loss_cfg.expect("multi-task fit always builds a loss config");
            let (dem, sev) = model.mtl_forward(tape, vars, &t.tokens, &t.id)?;
            Ok(joint_loss(&dem, &sev, t.label.as_u8(), t.severity(), cfg)?)
        }
    }
}

fn batch_loss<R: rand::Rng>(
    model: &Model,
    tape: &Tape,
    vars: &BTreeMap<String, Var>,
    data: &[Transcript],
    idxs: &[usize],
    training: bool,
    rng: &mut R,
    loss_cfg: Option<&LossConfig>,
) -> Result<Var, TrainerError> {
    let mut total: Option<Var> = None;
    for &i in idxs {
        let loss = sample_loss(model, tape, vars, &data[i], training, rng, loss_cfg)?;
        total = Some(match total {
            Some(acc) => acc.add(&loss),
            None => loss,
        });
    }
    Ok(total
        .expect("batches are never empty")
        .scale(1.0 / idxs.len() as f64))
}

/// Evaluation-mode mean loss over a dataset (no dropout, no gradients).
/// Pass the same [`LossConfig`] the model was trained with for the
/// multi-task variants, `None` otherwise.
pub fn mean_loss(
    model: &Model,
    params: &BTreeMap<String, Matrix>,
    data: &[Transcript],
    loss_cfg: Option<&LossConfig>,
) -> Result<f64, TrainerError> {
    if data.is_empty() {
        return Err(TrainerError::EmptySplit("loss"));
    }
    let tape = Tape::new();
    let vars = leaves_on_tape(&tape, params, &BTreeSet::new(), true);
    let idxs: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::rng(0, "eval-loss", &[]);
    let loss = batch_loss(model, &tape, &vars, data, &idxs, false, &mut rng, loss_cfg)?;
    Ok(loss.scalar())
}

/// Builds the multi-task loss configuration for a training fold:
/// severity classes weighted inversely to their fold frequency.
fn fold_loss_config(model: &Model, train: &[Transcript], alpha: f64) -> Option<LossConfig> {
    match model.kind {
        ModelKind::Mtl(_) => {
            let severities: Vec<_> = train.iter().filter_map(|t| t.severity()).collect();
            let weights = balanced_severity_weights(severities.iter());
            Some(LossConfig::new(alpha, weights).expect("weights are positive by construction"))
        }
        _ => None,
    }
}

/// Trains a model through its phase plan.
///
/// Each epoch shuffles the training set (seeded), takes mini-batch Adam
/// steps on the mean batch loss, then measures the validation loss in
/// evaluation mode. A phase ends when the validation loss has not set a
/// new minimum for `patience` consecutive epochs (or the total epoch
/// budget runs out), and the parameters that achieved the phase's best
/// validation loss are restored before the next phase begins. Phases
/// with a plateau rule multiply the learning rate by the configured
/// factor after `rlrop_patience` stagnant epochs.
pub fn fit(
    model: &Model,
    init_params: BTreeMap<String, Matrix>,
    train: &[Transcript],
    val: &[Transcript],
    schedule: &TrainSchedule,
    alpha: f64,
    seed_value: u64,
) -> Result<FitResult, TrainerError> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(TrainerError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainerError::EmptySplit("val"));
    }
    let loss_cfg = fold_loss_config(model, train, alpha);

    let mut params = init_params;
    let mut history = Vec::new();
    let mut total_epochs = 0usize;

    for (pi, phase) in phases_for(model.kind, schedule).iter().enumerate() {
        let frozen = if phase.freeze_encoder {
            names_with_prefix(&params, "encoder.")
        } else {
            BTreeSet::new()
        };
        let mut opt = AdamState::new(&params);
        let mut lr = phase.lr;
        let mut stopper = MinTracker::new(MIN_TOL);
        let mut plateau = MinTracker::new(MIN_TOL);
        let mut best_params: Option<BTreeMap<String, Matrix>> = None;
        let mut epoch = 0usize;

        while total_epochs < schedule.max_epochs {
            epoch += 1;
            total_epochs += 1;

            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut seed::rng(
                seed_value,
                "epoch-shuffle",
                &[pi as u64, epoch as u64],
            ));

            let mut train_loss_sum = 0.0;
            for (bi, chunk) in order.chunks(schedule.batch_size).enumerate() {
                let tape = Tape::new();
                let vars = leaves_on_tape(&tape, &params, &frozen, false);
                let mut rng = seed::rng(
                    seed_value,
                    "dropout",
                    &[pi as u64, epoch as u64, bi as u64],
                );
                let loss = batch_loss(
                    model,
                    &tape,
                    &vars,
                    train,
                    chunk,
                    true,
                    &mut rng,
                    loss_cfg.as_ref(),
                )?;
                loss.backward()?;
                let mut grads = BTreeMap::new();
                for (name, var) in &vars {
                    if let Some(g) = var.grad() {
                        grads.insert(name.clone(), g);
                    }
                }
                train_loss_sum += loss.scalar() * chunk.len() as f64;
                adam_step(&mut params, &grads, &mut opt, lr)?;
            }

            let val_loss = mean_loss(model, &params, val, loss_cfg.as_ref())?;
            history.push(EpochRecord {
                phase: pi + 1,
                epoch,
                lr,
                train_loss: train_loss_sum / train.len() as f64,
                val_loss,
            });

            if stopper.observe(val_loss) {
                best_params = Some(params.clone());
            }
            if let Some((factor, rlrop_patience)) = phase.rlrop {
                if !plateau.observe(val_loss) && plateau.since >= rlrop_patience {
                    lr *= factor;
                    plateau.since = 0;
                }
            }
            if stopper.since >= phase.patience {
                break;
            }
        }

        if let Some(best) = best_params {
            params = best;
        }
    }

    Ok(FitResult { params, history })
}

/// Classifies a test set and reports the confusion-matrix metrics, with
/// dementia as the positive class. Sigmoid outputs threshold at 0.5
/// (ties go positive); softmax outputs take the argmax (ties go to the
/// lower class index).
pub fn evaluate(
    model: &Model,
    params: &BTreeMap<String, Matrix>,
    test: &[Transcript],
) -> Result<Metrics, TrainerError> {
    if test.is_empty() {
        return Err(TrainerError::EmptySplit("test"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for t in test {
        let predicted_dementia = match model.kind {
            ModelKind::Mtl(_) => {
                let (dem, _) = model.predict_mtl(params, &t.tokens, &t.id)?;
                dem[1] > dem[0]
            }
            _ => model.predict_binary(params, &t.tokens, &t.id)? >= 0.5,
        };
        match (t.label, predicted_dementia) {
            (Label::Dementia, true) => tp += 1,
            (Label::Dementia, false) => fn_ += 1,
            (Label::Control, true) => fp += 1,
            (Label::Control, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}

/// Architecture settings that can be rebuilt per fold: the vocabulary
/// always comes from the fold's own training split, so test tokens the
/// model never saw map to UNK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub context: ContextLayer,
    pub embed_dim: usize,
    pub max_len: usize,
    /// Co-attention width; `None` keeps the `embed_dim / 2` default.
    pub k: Option<usize>,
    /// Dropout rate on the co-attended features.
    pub dropout: f64,
}

impl ModelConfig {
    pub fn build(&self, train: &[Transcript]) -> Result<Model, ModelError> {
        let vocab: BTreeSet<String> = train
            .iter()
            .flat_map(|t| t.tokens.iter().cloned())
            .collect();
        let encoder = Encoder::new(
            EncoderConfig {
                kind: EncoderKind::ToyTrainable,
                vocab: vocab.into_iter().collect(),
                embed_dim: self.embed_dim,
                context: self.context,
                max_len: self.max_len,
            },
            None,
        )?;
        let mut model = Model::new(encoder, self.kind);
        if let Some(k) = self.k {
            model.k = k;
        }
        model.dropout_rate = self.dropout;
        Ok(model)
    }
}

/// One fold's training outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldReport {
    pub repeat: usize,
    pub fold: usize,
    pub train_metrics: Metrics,
    pub test_metrics: Metrics,
    pub history: Vec<EpochRecord>,
}

/// A full cross-validation run: configuration echo, per-fold outcomes,
/// and the mean ± sample-std aggregate over all test folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub alpha: f64,
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean: Metrics,
    pub std: Metrics,
}

/// Trains and evaluates one independent model per fold of the plan.
///
/// Folds run in parallel (rayon); each derives its own seed from
/// `(master_seed, repeat, fold)`, so results are reproducible regardless
/// of thread count, and aggregation runs in plan order.
pub fn cross_validate(
    dataset: &[Transcript],
    config: &ModelConfig,
    schedule: &TrainSchedule,
    alpha: f64,
    plan: &CVPlan,
    master_seed: u64,
) -> Result<CvReport, TrainerError> {
    schedule.validate()?;
    let by_id: BTreeMap<&str, &Transcript> = dataset.iter().map(|t| (t.id.as_str(), t)).collect();
    let gather = |ids: &[String]| -> Result<Vec<Transcript>, TrainerError> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|&t| t.clone())
                    .ok_or_else(|| TrainerError::UnknownId(id.clone()))
            })
            .collect()
    };

    let folds: Vec<FoldReport> = plan
        .folds
        .par_iter()
        .map(|fold| {
            let train = gather(&fold.train_ids)?;
            let val = gather(&fold.val_ids)?;
            let test = gather(&fold.test_ids)?;
            let model = config.build(&train)?;
            let fold_seed = seed::mix(
                master_seed,
                "fold-train",
                &[fold.repeat as u64, fold.fold as u64],
            );
            let init = model.init_params(fold_seed);
            let fitted = fit(&model, init, &train, &val, schedule, alpha, fold_seed)?;
            let train_metrics = evaluate(&model, &fitted.params, &train)?;
            let test_metrics = evaluate(&model, &fitted.params, &test)?;
            Ok(FoldReport {
                repeat: fold.repeat,
                fold: fold.fold,
                train_metrics,
                test_metrics,
                history: fitted.history,
            })
        })
        .collect::<Result<_, TrainerError>>()?;

    let test_metrics: Vec<Metrics> = folds.iter().map(|f| f.test_metrics).collect();
    let (mean, std) = aggregate_metrics(&test_metrics);
    Ok(CvReport {
        model: config.clone(),
        schedule: schedule.clone(),
        alpha,
        k: plan.k,
        repeats: plan.repeats,
        seed: master_seed,
        folds,
        mean,
        std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, stratified_cv, SyntheticProfile};
    use approx::assert_abs_diff_eq;

    fn single(name: &str, value: f64) -> BTreeMap<String, Matrix> {
        [(name.to_string(), Matrix::from_vec(1, 1, vec![value]))].into()
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut params = single("w", 1.0);
        let grads = single("w", 0.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params["w"].get(0, 0), 1.0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_is_bias_corrected() {
        let mut params = single("w", 1.0);
        let grads = single("w", 1.0);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        // m̂ = v̂ = 1 after bias correction, so the step is lr/(1+ε).
        assert_abs_diff_eq!(params["w"].get(0, 0), 0.9, epsilon = 1e-6);
    }

    #[test]
    fn adam_rejects_mismatches() {
        let mut params = single("w", 1.0);
        let mut state = AdamState::new(&params);
        let bad_name = single("nope", 0.0);
        assert!(matches!(
            adam_step(&mut params, &bad_name, &mut state, 0.1),
            Err(TrainerError::UnknownParameter(_))
        ));
        let bad_shape: BTreeMap<String, Matrix> =
            [("w".to_string(), Matrix::zeros(2, 1))].into();
        assert!(matches!(
            adam_step(&mut params, &bad_shape, &mut state, 0.1),
            Err(TrainerError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn metrics_hand_case_and_degenerates() {
        let m = Metrics::from_counts(3, 1, 4, 2);
        assert_abs_diff_eq!(m.f1, 2.0 / 3.0, epsilon = 1e-12);

        let perfect = Metrics::from_counts(5, 0, 5, 0);
        for v in [
            perfect.precision,
            perfect.recall,
            perfect.f1,
            perfect.accuracy,
            perfect.specificity,
        ] {
            assert_eq!(v, 1.0);
        }

        // All-positive predictor on balanced data.
        let all_pos = Metrics::from_counts(5, 5, 0, 0);
        assert_eq!(all_pos.recall, 1.0);
        assert_eq!(all_pos.specificity, 0.0);
        assert_eq!(all_pos.accuracy, 0.5);

        // Never-positive predictor: zero-denominator conventions.
        let none = Metrics::from_counts(0, 0, 5, 5);
        assert_eq!((none.precision, none.recall, none.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        let accs = [0.8, 0.9, 1.0, 0.7, 0.85, 0.95];
        let folds: Vec<Metrics> = accs
            .iter()
            .map(|&a| Metrics {
                precision: a,
                recall: a,
                f1: a,
                accuracy: a,
                specificity: a,
            })
            .collect();
        let (mean, std) = aggregate_metrics(&folds);
        assert_abs_diff_eq!(mean.accuracy, 0.8666666666666667, epsilon = 1e-12);
        assert_abs_diff_eq!(std.accuracy, 0.10801234497346433, epsilon = 1e-12);

        let (_, lone_std) = aggregate_metrics(&folds[..1]);
        assert_eq!(lone_std.accuracy, 0.0, "single fold has zero spread");
    }

    fn tiny_corpus(n_per_class: usize) -> Vec<Transcript> {
        generate_synthetic(99, n_per_class, &SyntheticProfile::default())
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Stl,
            context: ContextLayer::MeanContext,
            embed_dim: 4,
            max_len: 40,
            k: None,
            dropout: 0.4,
        }
    }

    fn frozen_schedule() -> TrainSchedule {
        // A learning rate this small changes nothing measurably, so the
        // validation loss is constant after the first epoch: the phase
        // must stop at exactly patience + 1 epochs.
        TrainSchedule {
            phase1_lr: 1e-30,
            phase2_lr: 1e-30,
            es_patience_phase1: 3,
            es_patience_phase2: 2,
            rlrop_factor: 0.2,
            rlrop_patience: 2,
            max_epochs: 50,
            batch_size: 4,
        }
    }

    #[test]
    fn constant_val_loss_stops_at_patience_plus_one() {
        let data = tiny_corpus(6);
        let (train, val) = data.split_at(8);
        let config = tiny_config();
        let model = config.build(train).unwrap();
        let result = fit(
            &model,
            model.init_params(7),
            train,
            val,
            &frozen_schedule(),
            0.1,
            7,
        )
        .unwrap();

        let phase1: Vec<_> = result.history.iter().filter(|e| e.phase == 1).collect();
        let phase2: Vec<_> = result.history.iter().filter(|e| e.phase == 2).collect();
        assert_eq!(phase1.len(), 4, "patience 3 + the initial minimum");
        assert_eq!(phase2.len(), 3, "patience 2 + the initial minimum");

        // The plateau rule fired once in phase 1: epochs 1-3 at the base
        // rate, epoch 4 at exactly factor × base.
        let lrs: Vec<f64> = phase1.iter().map(|e| e.lr).collect();
        assert_eq!(lrs, vec![1e-30, 1e-30, 1e-30, 0.2 * 1e-30]);
        // Non-increasing throughout each phase.
        for w in lrs.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn fit_restores_best_validation_weights() {
        let data = tiny_corpus(8);
        let (train, val) = data.split_at(12);
        let config = tiny_config();
        let model = config.build(train).unwrap();
        let schedule = TrainSchedule {
            phase1_lr: 0.05,
            phase2_lr: 0.01,
            es_patience_phase1: 4,
            es_patience_phase2: 3,
            rlrop_factor: 0.5,
            rlrop_patience: 2,
            max_epochs: 25,
            batch_size: 4,
        };
        let result = fit(&model, model.init_params(3), train, val, &schedule, 0.1, 3).unwrap();

        let min_val = result
            .history
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        let restored = mean_loss(&model, &result.params, val, None).unwrap();
        // The final parameters are the ones behind the recorded minimum
        // of the *last* phase; phase 2 starts from phase 1's best, so its
        // minimum can never exceed phase 1's.
        let last_phase = result.history.last().unwrap().phase;
        let min_last: f64 = result
            .history
            .iter()
            .filter(|e| e.phase == last_phase)
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_abs_diff_eq!(restored, min_last, epsilon = 1e-9);
        assert!(restored <= min_val + 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = tiny_corpus(5);
        let (train, val) = data.split_at(7);
        let config = ModelConfig {
            kind: ModelKind::Siamese,
            ..tiny_config()
        };
        let model = config.build(train).unwrap();
        let schedule = TrainSchedule {
            max_epochs: 4,
            es_patience_phase1: 2,
            es_patience_phase2: 2,
            ..TrainSchedule::for_kind(ModelKind::Siamese)
        };
        let run = || {
            fit(&model, model.init_params(11), train, val, &schedule, 0.1, 11)
                .unwrap()
                .params
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), b.len());
        for (name, m) in &a {
            for (x, y) in m.data().iter().zip(b[name].data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "parameter {name}");
            }
        }
    }

    #[test]
    fn fit_rejects_empty_splits() {
        let data = tiny_corpus(3);
        let config = tiny_config();
        let model = config.build(&data).unwrap();
        let schedule = TrainSchedule::for_kind(ModelKind::Stl);
        assert!(matches!(
            fit(&model, model.init_params(1), &[], &data, &schedule, 0.1, 1),
            Err(TrainerError::EmptySplit("train"))
        ));
        assert!(matches!(
            fit(&model, model.init_params(1), &data, &[], &schedule, 0.1, 1),
            Err(TrainerError::EmptySplit("val"))
        ));
    }

    #[test]
    fn evaluate_all_positive_with_zeroed_head() {
        // Zeroed dense head → every probability is exactly 0.5, and the
        // ≥ 0.5 threshold makes the model an all-positive predictor.
        let data = tiny_corpus(6);
        let config = tiny_config();
        let model = config.build(&data).unwrap();
        let mut params = model.init_params(2);
        for name in ["head.w1", "head.w2"] {
            let m = params.get_mut(name).unwrap();
            *m = Matrix::zeros(m.rows(), m.cols());
        }
        let metrics = evaluate(&model, &params, &data).unwrap();
        assert_eq!(metrics.recall, 1.0);
        assert_eq!(metrics.specificity, 0.0);
        assert_eq!(metrics.accuracy, 0.5);
    }

    #[test]
    fn cross_validate_isolates_folds_and_aggregates() {
        let data = tiny_corpus(8);
        let plan = stratified_cv(&data, 2, 1, 0.25, 5).unwrap();
        // Fold isolation: test ids never leak into train or val.
        for fold in &plan.folds {
            let train: BTreeSet<_> = fold.train_ids.iter().collect();
            let val: BTreeSet<_> = fold.val_ids.iter().collect();
            for id in &fold.test_ids {
                assert!(!train.contains(id) && !val.contains(id));
            }
        }

        let schedule = TrainSchedule {
            phase1_lr: 0.05,
            phase2_lr: 0.01,
            es_patience_phase1: 3,
            es_patience_phase2: 2,
            rlrop_factor: 0.5,
            rlrop_patience: 2,
            max_epochs: 10,
            batch_size: 4,
        };
        let report =
            cross_validate(&data, &tiny_config(), &schedule, 0.1, &plan, 5).unwrap();
        assert_eq!(report.folds.len(), 2);
        assert_eq!(report.k, 2);
        let (mean, _) = aggregate_metrics(
            &report
                .folds
                .iter()
                .map(|f| f.test_metrics)
                .collect::<Vec<_>>(),
        );
        assert_eq!(mean.accuracy, report.mean.accuracy);

        // Same seed, same report (including histories).
        let again = cross_validate(&data, &tiny_config(), &schedule, 0.1, &plan, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&report).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn mtl_fit_runs_with_and_without_severity() {
        let mut data = tiny_corpus(6);
        // Strip some MMSE scores: the severity term must simply vanish.
        for t in data.iter_mut().take(3) {
            t.mmse = None;
        }
        let config = ModelConfig {
            kind: ModelKind::Mtl(crate::model::MtlVariant::DoubleEncoder),
            ..tiny_config()
        };
        let (train, val) = data.split_at(8);
        let model = config.build(train).unwrap();
        let schedule = TrainSchedule {
            max_epochs: 3,
            ..TrainSchedule::for_kind(config.kind)
        };
        let result = fit(&model, model.init_params(13), train, val, &schedule, 0.1, 13).unwrap();
        assert!(!result.history.is_empty());
        assert!(result.history.iter().all(|e| e.val_loss.is_finite()));
        // Frozen encoder: the embedding never moves in the single phase.
        let init = model.init_params(13);
        assert_eq!(
            init["encoder.embed"].data(),
            result.params["encoder.embed"].data()
        );
    }
}
