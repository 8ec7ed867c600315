//! Generate a labeled synthetic interview corpus and cache it as JSONL.
//!
//! The two classes use disjoint content vocabularies with distinct
//! part-of-speech profiles, so the corpus is a clean testbed for the
//! statistics and training stages.
//!
//! ```sh
//! cargo run --example synthesize_corpus
//! ```

use adlex::corpus::{generate_synthetic, write_cache, Label, SyntheticProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(42, 10, &SyntheticProfile::default());

    let dementia = dataset.iter().filter(|t| t.label == Label::Dementia).count();
    println!(
        "{} transcripts ({} control, {} dementia)\n",
        dataset.len(),
        dataset.len() - dementia,
        dementia
    );
    for t in dataset.iter().take(2).chain(dataset.iter().rev().take(2)) {
        let preview: Vec<&str> = t.tokens.iter().take(12).map(String::as_str).collect();
        println!(
            "{:<12} label={:<8} mmse={:<4} {} ...",
            t.id,
            format!("{:?}", t.label),
            t.mmse.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            preview.join(" ")
        );
    }

    let out = std::env::temp_dir().join("adlex_synth_demo.jsonl");
    write_cache(&out, &dataset)?;
    println!("\ncached to {}", out.display());
    Ok(())
}
