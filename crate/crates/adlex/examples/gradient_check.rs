//! Verify the reverse-mode gradients of the twin-encoder forward pass
//! against central finite differences.
//!
//! ```sh
//! cargo run --example gradient_check
//! ```

use adlex::model::{ContextLayer, Encoder, EncoderConfig, EncoderKind, Model, ModelKind};
use adlex::seed;
use adlex::tensor::fd_check;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let vocab = ["boy", "cookie", "fell", "jar", "she", "stool"];
    let config = EncoderConfig {
        kind: EncoderKind::ToyTrainable,
        vocab: vocab.iter().map(|w| w.to_string()).collect(),
        embed_dim: 6,
        context: ContextLayer::MeanContext,
        max_len: 32,
    };
    let model = Model::new(Encoder::new(config, None)?, ModelKind::Siamese);
    let params = model.init_params(99);

    let tokens: Vec<String> = ["the boy fell", "off the stool"]
        .join(" ")
        .split_whitespace()
        .map(str::to_string)
        .collect();

    let n_coords: usize = params.values().map(|m| m.data().len()).sum();
    println!(
        "checking {} parameters ({} coordinates) ...",
        params.len(),
        n_coords
    );
    let worst = fd_check(&params, 1e-5, |tape, vars| {
        let mut rng = seed::rng(0, "eval", &[]);
        model
            .siamese_forward(tape, vars, &tokens, "demo", false, &mut rng)
            .expect("forward")
            .bce_loss(&[1.0])
    })?;
    println!("worst relative error vs finite differences: {worst:.3e}");
    assert!(worst < 1e-4);
    Ok(())
}
