//! Non-neural reference systems: the copy-through baseline and aggressive
//! word-for-word dictionary replacement.

use std::collections::HashMap;

use crate::lexicon::{InverseDictionary, Lexicon};
use crate::text::Sentence;

/// Replicate the input on the target side.
pub fn as_it_is(source: &Sentence) -> Sentence {
    source.clone()
}

/// Translate every sentence by context-free dictionary replacement:
/// tokens with a lexicon hit are swapped for their highest-frequency
/// original-side counterpart, everything else passes through.
pub fn dictionary_baseline(
    sources: &[Sentence],
    lexicon: &Lexicon,
    target_freq: &HashMap<String, u64>,
) -> Vec<Sentence> {
    let dict = InverseDictionary::build(lexicon, target_freq);
    sources.iter().map(|s| dict.translate(s)).collect()
}
