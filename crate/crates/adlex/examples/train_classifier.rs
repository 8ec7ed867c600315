//! Cross-validate the single-task pooled classifier on a synthetic
//! corpus.
//!
//! ```sh
//! cargo run --release --example train_classifier
//! ```

use adlex::corpus::{generate_synthetic, stratified_cv, SyntheticProfile};
use adlex::model::{ContextLayer, ModelKind};
use adlex::trainer::{cross_validate, ModelConfig, TrainSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(3, 50, &SyntheticProfile::default());
    let plan = stratified_cv(&dataset, 5, 1, 0.2, 3)?;

    let config = ModelConfig {
        kind: ModelKind::Stl,
        context: ContextLayer::MeanContext,
        embed_dim: 12,
        max_len: 128,
        k: None,
        dropout: 0.1,
    };
    // The bundled toy encoder trains from scratch, so it wants larger
    // steps than the published fine-tuning protocol.
    let schedule = TrainSchedule {
        phase1_lr: 0.05,
        phase2_lr: 0.01,
        max_epochs: 100,
        ..TrainSchedule::for_kind(ModelKind::Stl)
    };

    let report = cross_validate(&dataset, &config, &schedule, 0.1, &plan, 3)?;
    println!("fold  epochs  train_acc  test_acc     f1");
    for f in &report.folds {
        println!(
            "{:>4}  {:>6}  {:>9.3} {:>9.3} {:>6.3}",
            f.fold,
            f.history.len(),
            f.train_metrics.accuracy,
            f.test_metrics.accuracy,
            f.test_metrics.f1
        );
    }
    println!(
        "\nmean test accuracy {:.3} ± {:.3}, f1 {:.3}",
        report.mean.accuracy, report.std.accuracy, report.mean.f1
    );
    Ok(())
}
