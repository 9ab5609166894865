//! Builds the masked prompt for a few sentences and strips it again.

use metaphor_detect::corpus::{Label, Sample};
use metaphor_detect::prompting::{build_prompt, strip_prompt};

fn main() {
    let cases = [
        (
            "We must bridge the gap between employees and management.",
            2,
        ),
        ("Prices soared after the announcement", 1),
        ("She devoured the novel in one sitting", 1),
    ];
    for (i, (sentence, target)) in cases.into_iter().enumerate() {
        let sample =
            Sample::from_sentence(format!("ex{i}"), sentence, target, "VERB", Label::Metaphor)
                .unwrap();
        let prompt = build_prompt(&sample);
        println!("{}", prompt.render());
        println!(
            "  mask at {}, target copies at {:?}, {} slots",
            prompt.mask_position,
            prompt.tar_positions,
            prompt.len()
        );
        let restored = strip_prompt(&prompt, sample.target_word()).unwrap();
        assert_eq!(restored, sample.tokens);
        let swapped = strip_prompt(&prompt, "changed").unwrap();
        println!("  with another filler: {}\n", swapped.join(" "));
    }
}
