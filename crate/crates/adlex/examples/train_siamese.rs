//! Train the siamese co-attention classifier on one train/val/test split
//! and watch the two-phase schedule at work: a frozen-encoder phase for
//! the attention block and head, then full fine-tuning.
//!
//! ```sh
//! cargo run --release --example train_siamese
//! ```

use adlex::corpus::{generate_synthetic, stratified_cv, SyntheticProfile};
use adlex::model::{ContextLayer, ModelKind};
use adlex::trainer::{evaluate, fit, ModelConfig, TrainSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(5, 40, &SyntheticProfile::default());
    let plan = stratified_cv(&dataset, 4, 1, 0.2, 5)?;
    let fold = &plan.folds[0];
    let by_id: std::collections::BTreeMap<&str, _> =
        dataset.iter().map(|t| (t.id.as_str(), t.clone())).collect();
    let gather = |ids: &[String]| -> Vec<_> { ids.iter().map(|i| by_id[i.as_str()].clone()).collect() };
    let (train, val, test) = (
        gather(&fold.train_ids),
        gather(&fold.val_ids),
        gather(&fold.test_ids),
    );

    let config = ModelConfig {
        kind: ModelKind::Siamese,
        context: ContextLayer::MeanContext,
        embed_dim: 12,
        max_len: 128,
        k: None,
        dropout: 0.1,
    };
    let schedule = TrainSchedule {
        phase1_lr: 0.05,
        phase2_lr: 0.01,
        es_patience_phase1: 6,
        es_patience_phase2: 3,
        max_epochs: 60,
        ..TrainSchedule::for_kind(ModelKind::Siamese)
    };

    let model = config.build(&train)?;
    let result = fit(&model, model.init_params(5), &train, &val, &schedule, 0.1, 5)?;

    println!("phase  epoch      lr  train_loss  val_loss");
    for r in &result.history {
        println!(
            "{:>5} {:>6} {:>7.4} {:>11.4} {:>9.4}",
            r.phase, r.epoch, r.lr, r.train_loss, r.val_loss
        );
    }
    let metrics = evaluate(&model, &result.params, &test)?;
    println!(
        "\ntest: accuracy {:.3}, precision {:.3}, recall {:.3}, f1 {:.3}",
        metrics.accuracy, metrics.precision, metrics.recall, metrics.f1
    );
    Ok(())
}
