//! Train a small classifier, then explain one of its predictions with a
//! local perturbation surrogate: tokens are masked at random, the model
//! is re-queried, and a weighted ridge fit ranks each token's pull on
//! the predicted probability.
//!
//! ```sh
//! cargo run --release --example explain_prediction
//! ```

use adlex::corpus::{generate_synthetic, stratified_cv, SyntheticProfile};
use adlex::lime;
use adlex::model::{ContextLayer, ModelKind};
use adlex::trainer::{fit, ModelConfig, TrainSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(5, 40, &SyntheticProfile::default());
    let plan = stratified_cv(&dataset, 4, 1, 0.2, 5)?;
    let fold = &plan.folds[0];
    let by_id: std::collections::BTreeMap<&str, _> =
        dataset.iter().map(|t| (t.id.as_str(), t.clone())).collect();
    let gather = |ids: &[String]| -> Vec<_> { ids.iter().map(|i| by_id[i.as_str()].clone()).collect() };
    let (train, val) = (gather(&fold.train_ids), gather(&fold.val_ids));

    let config = ModelConfig {
        kind: ModelKind::Stl,
        context: ContextLayer::MeanContext,
        embed_dim: 12,
        max_len: 128,
        k: None,
        dropout: 0.1,
    };
    let schedule = TrainSchedule {
        phase1_lr: 0.05,
        phase2_lr: 0.01,
        max_epochs: 60,
        ..TrainSchedule::for_kind(ModelKind::Stl)
    };
    let model = config.build(&train)?;
    let result = fit(&model, model.init_params(5), &train, &val, &schedule, 0.1, 5)?;

    let target = &by_id["dementia_00"];
    let explanation = lime::explain(&model, &result.params, target, 2000, 5)?;
    println!(
        "{}: predicted P(dementia) = {:.3}\n",
        target.id, explanation.prob
    );
    println!("token        weight");
    for tw in &explanation.tokens {
        let bar_len = (tw.weight.abs() * 200.0).min(30.0) as usize;
        let bar: String = std::iter::repeat('#').take(bar_len).collect();
        println!("{:<12} {:>7.4}  {}", tw.token, tw.weight, bar);
    }
    println!(
        "\nsurrogate fit gap {:.4} over {} samples",
        explanation.surrogate_gap, explanation.n_samples
    );
    Ok(())
}
