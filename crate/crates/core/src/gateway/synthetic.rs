use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Encoding, MaskedInput, MaskedLanguageModel, Result, WordPieceTokenizer};

const SPECIALS: &[&str] = &["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

const WORDS: &[&str] = &[
    ".", ",", "'", "\"", "!", "?", ";", ":", "-", "(", ")", "a", "an", "the", "this", "that",
    "it", "she", "he", "they", "we", "i", "you", "who", "which", "whose", "whom", "is", "was",
    "are", "were", "be", "been", "has", "had", "have", "of", "in", "on", "at", "to", "from",
    "with", "by", "for", "and", "or", "but", "not", "no", "my", "his", "her", "their", "its",
    "there", "here", "very", "so", "too", "all", "one", "two", "old", "young", "little", "big",
    "small", "large", "black", "white", "brown", "red", "horse", "turkey", "fox", "human",
    "fish", "dog", "bird", "moth", "buffalo", "robin", "cat", "wolf", "eagle", "bear", "lion",
    "tiger", "beetle", "bat", "mouse", "fly", "newfoundland", "tang", "butterfly", "deer", "seal",
    "snake", "persian", "duck", "swan", "sheep", "chicken", "snail", "bombay", "frog", "crane",
    "penguin", "rat", "monkey", "falcon", "rabbit", "beaver", "pike", "pig", "elephant", "cow",
    "molly", "farm", "field", "house", "forest", "water", "man", "woman", "child", "friend",
    "slaughtered", "killed", "harvested", "dried", "processed", "ripe", "stamped", "reproduced",
    "cooked", "eaten", "sold", "caught", "hunted", "raised", "kept", "fed", "owned", "trained",
    "happy", "sad", "angry", "cheerful", "clumsy", "mute", "deaf", "blind", "sarcastic",
    "psychic", "jealous", "optimistic", "pessimistic", "romantic", "compassionate", "beautiful",
    "ugly", "cute", "lovely", "friendly", "dangerous", "wild", "tame", "dead", "alive", "sick",
    "healthy", "hungry", "tired", "lonely", "brave", "smart", "stupid", "kind", "cruel", "gentle",
    "loyal", "extinct", "extant", "edible", "invasive", "rare", "common", "pictured", "listening",
    "waking", "arriving", "running", "sleeping", "barking", "singing", "flying", "swimming",
    "walking", "watching", "waiting", "looking", "said", "saw", "ran", "ate", "looked", "came",
];

/// Deterministic pseudo-random masked LM over a small built-in vocabulary.
///
/// The distribution at a masked slot is a softmax of logits drawn from a
/// ChaCha stream seeded by a hash of the full masked input, so it depends on
/// every token of the context. Useful for end-to-end runs without weights.
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    seed: u64,
    temperature: f64,
    vocab: Vec<String>,
    tokenizer: WordPieceTokenizer,
}

impl SyntheticModel {
    pub fn new(seed: u64) -> Self {
        let vocab: Vec<String> = SPECIALS
            .iter()
            .chain(WORDS)
            .map(|s| s.to_string())
            .collect();
        let tokenizer = WordPieceTokenizer::new(&vocab, "[MASK]");
        Self {
            seed,
            temperature: 2.5,
            vocab,
            tokenizer,
        }
    }

    fn input_seed(&self, input: &MaskedInput) -> u64 {
        // FNV-1a over the seed, position and token ids.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.seed);
        feed(input.position as u64);
        for &id in &input.ids {
            feed(u64::from(id));
        }
        h
    }
}

impl MaskedLanguageModel for SyntheticModel {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn mask_token(&self) -> &str {
        "[MASK]"
    }

    fn max_sequence_length(&self) -> usize {
        512
    }

    fn encode(&self, text: &str) -> Result<Encoding> {
        self.tokenizer.encode(text)
    }

    fn predict(&self, inputs: &[MaskedInput]) -> Result<Vec<Vec<f64>>> {
        Ok(inputs
            .iter()
            .map(|input| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.input_seed(input));
                let logits: Vec<f64> = (0..self.vocab.len())
                    .map(|i| {
                        // [UNK] stays predictable, as in trained models.
                        if i < SPECIALS.len() && SPECIALS[i] != "[UNK]" {
                            f64::NEG_INFINITY
                        } else {
                            self.temperature * rng.gen_range(-1.0..1.0)
                        }
                    })
                    .collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                exp.into_iter().map(|e| e / z).collect()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ModelHandle;
    use std::sync::Arc;

    #[test]
    fn vocabulary_is_unique_and_valid() {
        let h = ModelHandle::new("synthetic", Arc::new(SyntheticModel::new(7))).unwrap();
        assert_eq!(h.mask_token(), "[MASK]");
    }

    #[test]
    fn deterministic_and_normalized() {
        let h = ModelHandle::new("synthetic", Arc::new(SyntheticModel::new(7))).unwrap();
        let a = h.mask_distribution("She is a cat who is [MASK].").unwrap();
        let b = h.mask_distribution("She is a cat who is [MASK].").unwrap();
        assert_eq!(a, b);
        assert!((a.total() - 1.0).abs() < 1e-12);
        let c = h.mask_distribution("He is a cat who is [MASK].").unwrap();
        assert_ne!(a.probs, c.probs);
    }
}
