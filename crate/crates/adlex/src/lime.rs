//! Local surrogate explanations: perturb a transcript by masking token
//! types, query the classifier on each variant, and fit a locally
//! weighted sparse ridge surrogate whose coefficients become signed
//! per-token importances (positive pushes toward dementia, negative
//! toward control).
//!
//! Features are unique token types — masking a feature removes *every*
//! occurrence of that token. Sample weights come from an exponential
//! kernel over the cosine distance between a mask and the all-ones mask,
//! and the surrogate is a ridge regression (λ = 1, intercept
//! unpenalized) refit on the ten largest-magnitude coefficients.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Transcript;
use crate::model::{Model, ModelError};
use crate::seed;
use crate::tensor::Matrix;

/// Kernel width of the exponential similarity kernel.
pub const KERNEL_WIDTH: f64 = 25.0;
/// Ridge regularization strength of the surrogate fit.
pub const RIDGE_LAMBDA: f64 = 1.0;
/// How many features the sparse refit keeps.
pub const FEATURES_KEPT: usize = 10;
/// Model queries run in chunks of this many perturbed texts.
pub const BATCH: usize = 256;
/// Stand-in token for a fully masked text; it contains a character no
/// cleaned token can, so every encoder maps it to UNK.
pub const EMPTY_TEXT_TOKEN: &str = "<unk>";

/// Errors from perturbation and surrogate fitting.
#[derive(Debug, Error)]
pub enum LimeError {
    #[error("transcript {0:?} has no token features")]
    NoFeatures(String),
    #[error("surrogate fit needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("surrogate normal equations are singular")]
    SingularSystem,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One explained feature: a token type and its signed importance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub weight: f64,
}

/// A local explanation of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub id: String,
    /// The model's dementia probability on the unperturbed transcript.
    pub prob: f64,
    pub intercept: f64,
    /// Retained features, largest |weight| first (ties by token).
    pub tokens: Vec<TokenWeight>,
    /// |prob − surrogate(original)|: how far the local fit is from the
    /// model on the unperturbed row. Reported, not bounded.
    pub surrogate_gap: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// The sorted unique token types of a transcript — the feature axis of
/// every mask.
pub fn token_features(tokens: &[String]) -> Vec<String> {
    let set: std::collections::BTreeSet<&String> = tokens.iter().collect();
    set.into_iter().cloned().collect()
}

/// Draws `n_samples` binary masks over `features` and reconstructs the
/// corresponding texts.
///
/// Row 0 is all-ones (the original text, verbatim). Every other row
/// masks a uniformly drawn number of features (1..=m, all occurrences
/// removed). Each row has its own seed stream, so growing `n_samples`
/// extends the sample set without changing existing rows.
pub fn perturb(
    tokens: &[String],
    features: &[String],
    n_samples: usize,
    seed_value: u64,
) -> (Matrix, Vec<Vec<String>>) {
    assert!(!features.is_empty(), "need at least one feature");
    assert!(n_samples >= 1, "need at least one sample");
    let m = features.len();
    let index: BTreeMap<&str, usize> = features
        .iter()
        .enumerate()
        .map(|(i, f)| (f.as_str(), i))
        .collect();

    let mut masks = Matrix::zeros(n_samples, m);
    let mut texts = Vec::with_capacity(n_samples);
    for j in 0..m {
        masks.set(0, j, 1.0);
    }
    texts.push(tokens.to_vec());

    for row in 1..n_samples {
        let mut rng = seed::rng(seed_value, "lime-mask", &[row as u64]);
        let k = rand::Rng::gen_range(&mut rng, 1..=m);
        let mut order: Vec<usize> = (0..m).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut keep = vec![true; m];
        for &j in order.iter().take(k) {
            keep[j] = false;
        }
        for (j, &kept) in keep.iter().enumerate() {
            masks.set(row, j, if kept { 1.0 } else { 0.0 });
        }
        let text: Vec<String> = tokens
            .iter()
            .filter(|t| keep[index[t.as_str()]])
            .cloned()
            .collect();
        texts.push(if text.is_empty() {
            vec![EMPTY_TEXT_TOKEN.to_string()]
        } else {
            text
        });
    }
    (masks, texts)
}

/// Similarity weight of a mask row: `exp(−d²/width²)` where `d` is the
/// cosine distance to the all-ones mask, `1 − √(s/m)` for `s` kept
/// features out of `m`. The all-zero mask gets distance 1.
pub fn kernel_weight(mask: &[f64], width: f64) -> f64 {
    let m = mask.len() as f64;
    let s: f64 = mask.iter().sum();
    let dist = if s == 0.0 { 1.0 } else { 1.0 - (s / m).sqrt() };
    (-dist * dist / (width * width)).exp()
}

/// Solves a dense symmetric linear system by Gaussian elimination with
/// partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, LimeError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(LimeError::SingularSystem);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Weighted ridge regression of `y` on the selected mask columns plus an
/// unpenalized intercept, via the normal equations
/// `(XᵀWX + λI')β = XᵀWy` with `I'` zeroed at the intercept.
fn weighted_ridge(
    masks: &Matrix,
    cols: &[usize],
    y: &[f64],
    sample_weights: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>), LimeError> {
    let n = masks.rows();
    let p = cols.len() + 1;
    // Design entry: column 0 is the intercept.
    let x = |row: usize, j: usize| {
        if j == 0 {
            1.0
        } else {
            masks.get(row, cols[j - 1])
        }
    };
    let mut g = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for row in 0..n {
        let w = sample_weights[row];
        for i in 0..p {
            let xi = x(row, i);
            rhs[i] += w * xi * y[row];
            for j in i..p {
                g[i][j] += w * xi * x(row, j);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            g[i][j] = g[j][i];
        }
    }
    for (i, row) in g.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }
    let beta = solve(g, rhs)?;
    Ok((beta[0], beta[1..].to_vec()))
}

/// Fits the sparse local surrogate: a full weighted ridge fit ranks the
/// features by coefficient magnitude, then the top `n_keep` are refit
/// alone. Returns the intercept and `(feature index, weight)` pairs of
/// the kept features.
pub fn fit_surrogate(
    masks: &Matrix,
    probs: &[f64],
    sample_weights: &[f64],
    n_keep: usize,
) -> Result<(f64, Vec<(usize, f64)>), LimeError> {
    let m = masks.cols();
    let kept_count = n_keep.min(m);
    if masks.rows() < kept_count + 1 {
        return Err(LimeError::TooFewSamples {
            needed: kept_count + 1,
            got: masks.rows(),
        });
    }
    let all: Vec<usize> = (0..m).collect();
    let (_, full) = weighted_ridge(masks, &all, probs, sample_weights, RIDGE_LAMBDA)?;

    let mut ranked: Vec<usize> = (0..m).collect();
    ranked.sort_by(|&i, &j| {
        full[j]
            .abs()
            .total_cmp(&full[i].abs())
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = ranked.into_iter().take(kept_count).collect();
    kept.sort_unstable();

    let (intercept, weights) = weighted_ridge(masks, &kept, probs, sample_weights, RIDGE_LAMBDA)?;
    Ok((intercept, kept.into_iter().zip(weights).collect()))
}

/// Explains an arbitrary black-box text classifier around one
/// transcript. `predict` maps a token sequence to the positive-class
/// probability; queries run in parallel chunks of [`BATCH`].
pub fn explain_with<F>(
    predict: F,
    transcript: &Transcript,
    n_samples: usize,
    seed_value: u64,
) -> Result<Explanation, LimeError>
where
    F: Fn(&[String]) -> Result<f64, LimeError> + Sync,
{
    let features = token_features(&transcript.tokens);
    if features.is_empty() {
        return Err(LimeError::NoFeatures(transcript.id.clone()));
    }
    let (masks, texts) = perturb(&transcript.tokens, &features, n_samples, seed_value);

    let probs: Vec<f64> = texts
        .par_chunks(BATCH)
        .map(|chunk| {
            chunk
                .iter()
                .map(|text| predict(text))
                .collect::<Result<Vec<f64>, LimeError>>()
        })
        .collect::<Result<Vec<Vec<f64>>, LimeError>>()?
        .into_iter()
        .flatten()
        .collect();

    let sample_weights: Vec<f64> = (0..masks.rows())
        .map(|row| {
            let mask: Vec<f64> = (0..masks.cols()).map(|j| masks.get(row, j)).collect();
            kernel_weight(&mask, KERNEL_WIDTH)
        })
        .collect();

    let (intercept, kept) = fit_surrogate(&masks, &probs, &sample_weights, FEATURES_KEPT)?;

    let mut tokens: Vec<TokenWeight> = kept
        .into_iter()
        .map(|(idx, weight)| TokenWeight {
            token: features[idx].clone(),
            weight,
        })
        .collect();
    tokens.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then_with(|| a.token.cmp(&b.token))
    });

    let prob = probs[0];
    let surrogate_on_original = intercept + tokens.iter().map(|t| t.weight).sum::<f64>();
    Ok(Explanation {
        id: transcript.id.clone(),
        prob,
        intercept,
        tokens,
        surrogate_gap: (prob - surrogate_on_original).abs(),
        n_samples,
        seed: seed_value,
    })
}

/// Explains a trained model's prediction on one transcript.
pub fn explain(
    model: &Model,
    params: &BTreeMap<String, Matrix>,
    transcript: &Transcript,
    n_samples: usize,
    seed_value: u64,
) -> Result<Explanation, LimeError> {
    explain_with(
        |text| Ok(model.predict_binary(params, text, &transcript.id)?),
        transcript,
        n_samples,
        seed_value,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::stats::spearman;
    use approx::assert_abs_diff_eq;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perturb_row_zero_is_original() {
        let tokens = toks(&["the", "boy", "the", "fell", "."]);
        let features = token_features(&tokens);
        assert_eq!(features, toks(&[".", "boy", "fell", "the"]));
        let (masks, texts) = perturb(&tokens, &features, 6, 42);
        assert_eq!(masks.shape(), (6, 4));
        for j in 0..4 {
            assert_eq!(masks.get(0, j), 1.0);
        }
        assert_eq!(texts[0], tokens);

        // Every perturbed row masks at least one feature, and masking a
        // feature removes all its occurrences.
        for row in 1..6 {
            let kept: Vec<bool> = (0..4).map(|j| masks.get(row, j) == 1.0).collect();
            assert!(kept.iter().any(|&k| !k));
            let expect: Vec<String> = tokens
                .iter()
                .filter(|t| kept[features.iter().position(|f| f == *t).unwrap()])
                .cloned()
                .collect();
            if expect.is_empty() {
                assert_eq!(texts[row], vec![EMPTY_TEXT_TOKEN.to_string()]);
            } else {
                assert_eq!(texts[row], expect);
            }
        }
    }

    #[test]
    fn perturb_prefix_is_stable_under_more_samples() {
        let tokens = toks(&["a", "b", "c", "d", "e"]);
        let features = token_features(&tokens);
        let (small, small_texts) = perturb(&tokens, &features, 10, 7);
        let (large, large_texts) = perturb(&tokens, &features, 20, 7);
        for row in 0..10 {
            for j in 0..features.len() {
                assert_eq!(small.get(row, j), large.get(row, j));
            }
            assert_eq!(small_texts[row], large_texts[row]);
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(kernel_weight(&[1.0, 1.0, 1.0], KERNEL_WIDTH), 1.0);

        // Half of four features masked: d = 1 − √½.
        let w = kernel_weight(&[1.0, 0.0, 1.0, 0.0], KERNEL_WIDTH);
        assert_abs_diff_eq!(w, 0.99986275112, epsilon = 1e-9);

        // All masked: d = 1 by convention.
        let w0 = kernel_weight(&[0.0; 4], KERNEL_WIDTH);
        assert_abs_diff_eq!(w0, 0.9984012793, epsilon = 1e-9);

        // Strictly decreasing as more features are masked.
        let m = 8;
        let mut prev = f64::INFINITY;
        for masked in 0..=m {
            let mask: Vec<f64> = (0..m).map(|j| if j < m - masked { 1.0 } else { 0.0 }).collect();
            let w = kernel_weight(&mask, KERNEL_WIDTH);
            assert!(w < prev, "masking {masked} features");
            prev = w;
        }
    }

    #[test]
    fn surrogate_recovers_constant_model() {
        let tokens = toks(&["a", "b", "c"]);
        let features = token_features(&tokens);
        let (masks, _) = perturb(&tokens, &features, 50, 3);
        let probs = vec![0.7; 50];
        let weights = vec![1.0; 50];
        let (intercept, kept) = fit_surrogate(&masks, &probs, &weights, 10).unwrap();
        assert_abs_diff_eq!(intercept, 0.7, epsilon = 1e-9);
        for (_, w) in kept {
            assert_abs_diff_eq!(w, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn surrogate_recovers_linear_model_at_high_weight() {
        // With huge sample weights the λ=1 shrinkage becomes negligible
        // and the exact linear coefficients come back.
        let tokens = toks(&["a", "b", "c", "d"]);
        let features = token_features(&tokens);
        let (masks, _) = perturb(&tokens, &features, 200, 5);
        let coef = [0.3, -0.2, 0.5, -0.4];
        let probs: Vec<f64> = (0..200)
            .map(|r| 0.1 + (0..4).map(|j| coef[j] * masks.get(r, j)).sum::<f64>())
            .collect();
        let weights = vec![1e8; 200];
        let (intercept, kept) = fit_surrogate(&masks, &probs, &weights, 10).unwrap();
        assert_abs_diff_eq!(intercept, 0.1, epsilon = 1e-6);
        for (idx, w) in kept {
            assert_abs_diff_eq!(w, coef[idx], epsilon = 1e-6);
        }
    }

    #[test]
    fn doubled_weight_equals_duplicated_row() {
        let masks_a = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]);
        let probs_a = vec![0.9, 0.4, 0.6];
        let weights_a = vec![2.0, 1.0, 1.0];

        let masks_b = Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ]);
        let probs_b = vec![0.9, 0.9, 0.4, 0.6];
        let weights_b = vec![1.0; 4];

        let (ia, wa) = fit_surrogate(&masks_a, &probs_a, &weights_a, 2).unwrap();
        let (ib, wb) = fit_surrogate(&masks_b, &probs_b, &weights_b, 2).unwrap();
        assert_abs_diff_eq!(ia, ib, epsilon = 1e-10);
        for ((_, a), (_, b)) in wa.iter().zip(&wb) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn zero_weights_make_system_singular() {
        let masks = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let probs = vec![0.5; 3];
        let weights = vec![0.0; 3];
        assert!(matches!(
            fit_surrogate(&masks, &probs, &weights, 2),
            Err(LimeError::SingularSystem)
        ));
    }

    #[test]
    fn too_few_samples_is_reported() {
        let masks = Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]);
        assert!(matches!(
            fit_surrogate(&masks, &[0.5], &[1.0], 3),
            Err(LimeError::TooFewSamples { needed: 4, got: 1 })
        ));
    }

    fn linear_oracle_transcript() -> (Transcript, BTreeMap<String, f64>) {
        let words = ["ah", "boy", "cat", "dog", "elm", "fig", "gap", "hat", "ivy", "jar"];
        let coef: BTreeMap<String, f64> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.to_string(), (i as f64 - 4.5) / 10.0))
            .collect();
        let tokens = toks(&words);
        let t = Transcript::new("oracle".into(), tokens, Label::Dementia, None).unwrap();
        (t, coef)
    }

    #[test]
    fn explanation_ranks_match_linear_oracle() {
        let (t, coef) = linear_oracle_transcript();
        let expl = explain_with(
            |text| {
                let mut p = 0.5;
                let present: std::collections::BTreeSet<&String> = text.iter().collect();
                for (w, c) in &coef {
                    if present.contains(w) {
                        p += c * 0.1;
                    }
                }
                Ok(p)
            },
            &t,
            600,
            9,
        )
        .unwrap();
        assert_eq!(expl.tokens.len(), 10);

        let mut truth = Vec::new();
        let mut recovered = Vec::new();
        for tw in &expl.tokens {
            truth.push(coef[&tw.token]);
            recovered.push(tw.weight);
        }
        let rho = spearman(&recovered, &truth).unwrap();
        assert!(rho > 0.9, "spearman {rho}");
        assert!(expl.surrogate_gap.is_finite());
    }

    #[test]
    fn explanations_are_deterministic() {
        let (t, _) = linear_oracle_transcript();
        let run = || {
            let e = explain_with(|text| Ok(0.2 + 0.01 * text.len() as f64), &t, 200, 4).unwrap();
            serde_json::to_string(&e).unwrap()
        };
        assert_eq!(run(), run());
    }
}
