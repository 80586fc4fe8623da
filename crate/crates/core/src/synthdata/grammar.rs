//! Fixed word grammar for class prompts, captions and LVLM queries.

use super::skeleton::{Limb, Motion, MotionSample};
use crate::error::{Result, SkiError};

pub const END_TOKEN: &str = "<eos>";
pub const PAD_TOKEN: &str = "<pad>";
pub const USER_TOKEN: &str = "user:";
pub const ASSISTANT_TOKEN: &str = "assistant:";

pub const PROMPT_TEMPLATE_ID: &str = "a-person-doing";

pub const QUERIES: [&str; 2] = ["describe the action", "what is the person doing"];

const AMPLITUDE_ADVERBS: [&str; 3] = ["slightly", "moderately", "widely"];
const SPEED_ADVERBS: [&str; 3] = ["slowly", "steadily", "quickly"];
const FACINGS: [&str; 3] = ["left", "forward", "right"];

/// Every word any grammar production can emit, in a fixed order.
pub fn vocabulary() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = vec![PAD_TOKEN, END_TOKEN, USER_TOKEN, ASSISTANT_TOKEN];
    let fixed = [
        "a", "person", "doing", "with", "the", "does", "and", "while", "facing", "describe", "action", "what", "is",
    ];
    words.extend(fixed);
    words.extend(Motion::ALL.map(Motion::word));
    words.extend(["left", "right", "arm", "leg"]);
    words.extend(AMPLITUDE_ADVERBS);
    words.extend(SPEED_ADVERBS);
    words.extend(FACINGS);
    let mut seen = std::collections::HashSet::new();
    words.retain(|w| seen.insert(*w));
    words
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Maps words to ids, erroring on the first out-of-vocabulary word.
pub fn encode_words(vocab: &[&str], text: &str) -> Result<Vec<usize>> {
    tokenize(text)
        .into_iter()
        .map(|w| vocab.iter().position(|v| *v == w).ok_or(SkiError::OutOfVocabulary(w)))
        .collect()
}

pub fn class_label(motion: Motion, limb: Limb) -> String {
    format!("{} {} {}", motion.word(), limb.side_word(), limb.limb_word())
}

pub fn class_prompt(motion: Motion, limb: Limb) -> String {
    format!("a person doing a {} with the {} {}", motion.word(), limb.side_word(), limb.limb_word())
}

fn bucket(ratio: f64, low: f64, high: f64) -> usize {
    if ratio < low {
        0
    } else if ratio > high {
        2
    } else {
        1
    }
}

/// Describes one sampled trajectory. `base_amplitude` and the motion's base
/// frequency are the class-level values the sample was jittered from.
pub fn make_caption(sample: &MotionSample, base_amplitude: f64, azimuth: f64) -> String {
    let amp = AMPLITUDE_ADVERBS[bucket(sample.amplitude / base_amplitude, 0.92, 1.08)];
    let speed = SPEED_ADVERBS[bucket(sample.frequency / sample.motion.base_frequency(), 0.95, 1.05)];
    let facing = FACINGS[bucket(azimuth, -0.25, 0.25)];
    format!(
        "the person does a {} with the {} {} {amp} and {speed} while facing {facing}",
        sample.motion.word(),
        sample.limb.side_word(),
        sample.limb.limb_word()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(amplitude: f64) -> MotionSample {
        MotionSample {
            motion: Motion::Wave,
            limb: Limb::RightLeg,
            amplitude,
            frequency: 2.0,
            phase: 0.0,
        }
    }

    #[test]
    fn caption_names_motion_and_limb() {
        let c = make_caption(&sample(0.5), 0.5, 0.0);
        let words = tokenize(&c);
        assert!(words.contains(&"wave".to_string()));
        assert!(words.contains(&"leg".to_string()) && words.contains(&"right".to_string()));
    }

    #[test]
    fn amplitude_changes_the_adverb() {
        let small = make_caption(&sample(0.4), 0.5, 0.0);
        let large = make_caption(&sample(0.6), 0.5, 0.0);
        assert_ne!(small, large);
        assert!(small.contains("slightly") && large.contains("widely"));
    }

    #[test]
    fn every_production_is_in_vocabulary() {
        let vocab = vocabulary();
        for m in Motion::ALL {
            for l in Limb::ALL {
                encode_words(&vocab, &class_prompt(m, l)).unwrap();
                for (amp, freq, az) in [(0.1, 1.0, -1.0), (1.0, 2.0, 0.0), (9.0, 9.0, 1.0)] {
                    let s = MotionSample {
                        motion: m,
                        limb: l,
                        amplitude: amp,
                        frequency: freq,
                        phase: 0.0,
                    };
                    encode_words(&vocab, &make_caption(&s, 1.0, az)).unwrap();
                }
            }
        }
        for q in QUERIES {
            encode_words(&vocab, q).unwrap();
        }
        assert!(matches!(encode_words(&vocab, "a person juggling"), Err(SkiError::OutOfVocabulary(w)) if w == "juggling"));
    }
}
