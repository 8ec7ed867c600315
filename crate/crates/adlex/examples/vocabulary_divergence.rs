//! Vocabulary overlap and smoothed language-model divergence between the
//! control and dementia groups.
//!
//! ```sh
//! cargo run --example vocabulary_divergence
//! ```

use adlex::corpus::{generate_synthetic, SyntheticProfile};
use adlex::divergence::{group_divergence, LogBase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(7, 30, &SyntheticProfile::default());
    let div = group_divergence(&dataset, 0.2, LogBase::Natural)?;

    println!("control vocabulary   {:>5}", div.control_vocab);
    println!("dementia vocabulary  {:>5}", div.dementia_vocab);
    println!("combined vocabulary  {:>5}", div.collection_vocab);
    println!("jaccard overlap      {:>8.4}", div.jaccard);
    println!("KL(control‖dementia) {:>8.4} nats", div.kl_control_dementia);
    println!("KL(dementia‖control) {:>8.4} nats", div.kl_dementia_control);
    Ok(())
}
