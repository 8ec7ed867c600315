//! Parse a CHAT transcript and normalize the participant's speech.
//!
//! ```sh
//! cargo run --example parse_transcript
//! ```

use adlex::chat::{self, CleanPolicy};

const TRANSCRIPT: &str = "\
@Begin
@Languages:\teng
@Participants:\tPAR Participant, INV Investigator
*INV:\tcan you tell me what you see ?
*PAR:\t&uh the boy is takin(g) <the the> [/] the cookies .
*PAR:\tthe stool is [//] was falling over xxx .
%mor:\tdet:art|the n|stool cop|be&3S part|fall-PRESP adv|over .
*PAR:\tand the water goed [: went] [* m:vsl] on the floor .
@End
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let doc = chat::parse_chat(TRANSCRIPT)?;
    let policy = CleanPolicy::default();

    println!("participant utterances:");
    for raw in chat::participant_utterances(&doc, "PAR") {
        let tokens = chat::clean_utterance(&raw, &policy)?;
        println!("  raw:     {raw}");
        println!("  cleaned: {}", tokens.join(" "));
    }
    Ok(())
}
