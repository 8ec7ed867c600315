//! Correlate part-of-speech frequencies with the diagnosis label to find
//! significant linguistic markers.
//!
//! ```sh
//! cargo run --example linguistic_markers
//! ```

use adlex::corpus::{generate_synthetic, SyntheticProfile};
use adlex::markers::{correlate_markers, FeatureKind, TagBackend};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(7, 50, &SyntheticProfile::default());
    let backend = TagBackend::from_name("bundled", None)?;
    let markers = correlate_markers(&dataset, FeatureKind::Pos, 5, 0.05, &backend)?;

    println!(
        "{:<8} {:>8} {:>11} {:>11}  leans toward",
        "tag", "r", "p", "p_adj"
    );
    for m in &markers {
        println!(
            "{:<8} {:>8.4} {:>11.3e} {:>11.3e}  {:?}",
            m.feature, m.r, m.p, m.p_adjusted, m.direction
        );
    }
    println!("\n{} significant markers after adjustment", markers.len());
    Ok(())
}
