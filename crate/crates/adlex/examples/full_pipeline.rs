//! The whole pipeline in one program: synthesize, analyze, train,
//! explain — the library-level equivalent of chaining every `adlex`
//! subcommand.
//!
//! ```sh
//! cargo run --release --example full_pipeline
//! ```

use adlex::corpus::{generate_synthetic, stratified_cv, Label, SyntheticProfile};
use adlex::divergence::{group_divergence, LogBase};
use adlex::lime;
use adlex::markers::{correlate_markers, FeatureKind, TagBackend};
use adlex::model::{Checkpoint, ContextLayer, ModelKind};
use adlex::stats::TTestVariant;
use adlex::textstats::{bundled_easy_words, compare_groups};
use adlex::trainer::{cross_validate, fit, ModelConfig, TrainSchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 11;
    let dataset = generate_synthetic(seed, 30, &SyntheticProfile::default());
    println!("[1/6] corpus: {} transcripts", dataset.len());

    let significant = compare_groups(&dataset, &bundled_easy_words(), TTestVariant::Student)?
        .into_iter()
        .filter(|c| c.significant)
        .map(|c| c.metric_name)
        .collect::<Vec<_>>();
    println!("[2/6] readability: group differences in {significant:?}");

    let div = group_divergence(&dataset, 0.2, LogBase::Natural)?;
    println!(
        "[3/6] divergence: jaccard {:.3}, KL {:.3}/{:.3} nats",
        div.jaccard, div.kl_control_dementia, div.kl_dementia_control
    );

    let backend = TagBackend::from_name("bundled", None)?;
    let markers = correlate_markers(&dataset, FeatureKind::Pos, 5, 0.05, &backend)?;
    let toward = |d| {
        markers
            .iter()
            .filter(|m| m.direction == d)
            .map(|m| m.feature.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!(
        "[4/6] markers: dementia [{}], control [{}]",
        toward(adlex::markers::Direction::Dementia),
        toward(adlex::markers::Direction::Control)
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
    let plan = stratified_cv(&dataset, 2, 1, 0.2, seed)?;
    let report = cross_validate(&dataset, &config, &schedule, 0.1, &plan, seed)?;
    println!(
        "[5/6] siamese 2-fold CV: accuracy {:.3} ± {:.3}",
        report.mean.accuracy, report.std.accuracy
    );

    // Refit on the first fold's split and explain one held-out case.
    let by_id: std::collections::BTreeMap<&str, _> =
        dataset.iter().map(|t| (t.id.as_str(), t.clone())).collect();
    let gather = |ids: &[String]| -> Vec<_> { ids.iter().map(|i| by_id[i.as_str()].clone()).collect() };
    let fold = &plan.folds[0];
    let model = config.build(&gather(&fold.train_ids))?;
    let fitted = fit(
        &model,
        model.init_params(seed),
        &gather(&fold.train_ids),
        &gather(&fold.val_ids),
        &schedule,
        0.1,
        seed,
    )?;
    let ckpt_path = std::env::temp_dir().join("adlex_pipeline_demo.ckpt.json");
    Checkpoint::new(&model, fitted.params.clone()).save(&ckpt_path)?;

    let target = fold
        .test_ids
        .iter()
        .map(|id| &by_id[id.as_str()])
        .find(|t| t.label == Label::Dementia)
        .expect("a dementia case in the test fold");
    let explanation = lime::explain(&model, &fitted.params, target, 2000, seed)?;
    let top: Vec<&str> = explanation
        .tokens
        .iter()
        .take(5)
        .map(|tw| tw.token.as_str())
        .collect();
    println!(
        "[6/6] explain {}: P(dementia) {:.3}, strongest tokens {:?} (checkpoint: {})",
        target.id,
        explanation.prob,
        top,
        ckpt_path.display()
    );
    Ok(())
}
