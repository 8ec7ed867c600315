//! Per-transcript readability statistics and group significance tests.
//!
//! ```sh
//! cargo run --example readability_stats
//! ```

use adlex::corpus::{generate_synthetic, SyntheticProfile};
use adlex::stats::TTestVariant;
use adlex::textstats::{bundled_easy_words, compare_groups, transcript_stats};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dataset = generate_synthetic(7, 30, &SyntheticProfile::default());
    let easy = bundled_easy_words();

    let t = &dataset[0];
    let s = transcript_stats(&t.tokens, &easy);
    println!("{}:", t.id);
    println!("  syllables       {}", s.syllables);
    println!("  word tokens     {}", s.lexicon);
    println!("  difficult words {}", s.difficult);
    println!("  sentences       {}\n", s.sentences);

    println!(
        "{:<16} {:>9} {:>9} {:>8} {:>10}  significant",
        "metric", "control", "dementia", "t", "p_adj"
    );
    for c in compare_groups(&dataset, &easy, TTestVariant::Student)? {
        println!(
            "{:<16} {:>9.2} {:>9.2} {:>8.3} {:>10.3e}  {}",
            c.metric_name, c.control_mean, c.dementia_mean, c.t, c.p_adjusted, c.significant
        );
    }
    Ok(())
}
