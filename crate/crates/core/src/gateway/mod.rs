//! Uniform access to fill-mask models.
//!
//! A backend implements [`MaskedLanguageModel`]: it exposes its vocabulary,
//! tokenizes text and returns full probability vectors at masked positions.
//! [`ModelHandle`] wraps a backend and implements every higher-level query on
//! top of that single primitive, so stub models and real checkpoints go
//! through exactly the same scoring code.

mod stub;
mod synthetic;

pub use stub::{StubModel, WordPieceTokenizer};
pub use synthetic::SyntheticModel;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Placeholder used by template patterns and callers for the masked slot.
///
/// It is rewritten to the model's own mask token (e.g. `<mask>`) before
/// tokenization.
pub const MASK_PLACEHOLDER: &str = "[MASK]";

/// Largest number of masked copies sent to a backend in one call.
const PREDICT_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unresolvable model id `{0}`")]
    UnresolvableModel(String),
    #[error("model `{0}` has no mask token")]
    MissingMaskToken(String),
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("expected exactly one mask slot, found {0}")]
    MaskCount(usize),
    #[error("sequence of {len} tokens exceeds the model limit of {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty word")]
    EmptyWord,
    #[error("word `{0}` produced no tokens")]
    NoTokens(String),
    #[error("sentence has no scorable tokens")]
    EmptySentence,
    #[error("no sentences to score")]
    EmptyInput,
    #[error("backend returned {got} probabilities, vocabulary has {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("backend failure: {0}")]
    Backend(String),
}

pub type Result<T> = std::result::Result<T, GatewayError>;

/// Token ids of one tokenized text.
///
/// `offsets` are byte ranges into the encoded text; special tokens carry
/// `(0, 0)` and are flagged in `special`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
    pub special: Vec<bool>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions of ordinary (non-special) tokens.
    pub fn content_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.special
            .iter()
            .enumerate()
            .filter(|(_, &special)| !special)
            .map(|(i, _)| i)
    }
}

/// One forward query: a token sequence whose `position` holds the mask id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub ids: Vec<u32>,
    pub position: usize,
}

/// A fill-mask backend.
///
/// Implementations must be deterministic: identical inputs produce
/// bitwise-identical outputs within a process.
pub trait MaskedLanguageModel: Send + Sync {
    /// Token strings indexed by id.
    fn vocab(&self) -> &[String];

    fn mask_token(&self) -> &str;

    fn max_sequence_length(&self) -> usize;

    /// Tokenize `text`, adding whatever special tokens the model expects.
    fn encode(&self, text: &str) -> Result<Encoding>;

    /// Probability vector over the vocabulary at each input's masked position.
    fn predict(&self, inputs: &[MaskedInput]) -> Result<Vec<Vec<f64>>>;
}

/// Probability vector at one masked slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskDistribution {
    pub probs: Vec<f64>,
    /// Index of the masked slot in the tokenized sentence.
    pub position: usize,
}

impl MaskDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Pseudo-log-likelihood of one sentence in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceScore {
    pub pll: f64,
    pub token_count: usize,
}

/// Denominator used when turning summed PLL into a pseudo-perplexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerplexityNormalization {
    /// Divide by the number of scored tokens.
    #[default]
    Tokens,
    /// Divide by the number of sentences.
    Sentences,
}

/// `exp(-Σ pll / N)` over already-scored sentences.
pub fn pseudo_perplexity_from_scores(
    scores: &[SentenceScore],
    normalization: PerplexityNormalization,
) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let total: f64 = scores.iter().map(|s| s.pll).sum();
    let n = match normalization {
        PerplexityNormalization::Tokens => scores.iter().map(|s| s.token_count).sum::<usize>(),
        PerplexityNormalization::Sentences => scores.len(),
    };
    if n == 0 {
        return None;
    }
    Some((-total / n as f64).exp())
}

/// A loaded model: immutable, cheap to clone, safe to share across threads.
#[derive(Clone)]
pub struct ModelHandle {
    model_id: String,
    mask_token_id: u32,
    token_index: Arc<HashMap<String, u32>>,
    model: Arc<dyn MaskedLanguageModel>,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("model_id", &self.model_id)
            .field("vocab_size", &self.vocab_size())
            .field("mask_token", &self.mask_token())
            .field("max_sequence_length", &self.max_sequence_length())
            .finish()
    }
}

impl ModelHandle {
    /// Wrap a backend, checking the vocabulary invariants.
    pub fn new(model_id: impl Into<String>, model: Arc<dyn MaskedLanguageModel>) -> Result<Self> {
        let model_id = model_id.into();
        let vocab = model.vocab();
        if vocab.is_empty() {
            return Err(GatewayError::InvalidVocab("vocabulary is empty".into()));
        }
        let mut token_index = HashMap::with_capacity(vocab.len());
        for (id, token) in vocab.iter().enumerate() {
            if token_index.insert(token.clone(), id as u32).is_some() {
                return Err(GatewayError::InvalidVocab(format!("duplicate token `{token}`")));
            }
        }
        let mask = model.mask_token();
        let mask_token_id = match token_index.get(mask) {
            Some(&id) if !mask.is_empty() => id,
            _ => return Err(GatewayError::MissingMaskToken(model_id)),
        };
        if model.max_sequence_length() == 0 {
            return Err(GatewayError::Backend("max_sequence_length must be positive".into()));
        }
        Ok(Self {
            model_id,
            mask_token_id,
            token_index: Arc::new(token_index),
            model,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn vocab(&self) -> &[String] {
        self.model.vocab()
    }

    pub fn vocab_size(&self) -> usize {
        self.model.vocab().len()
    }

    pub fn mask_token(&self) -> &str {
        self.model.mask_token()
    }

    pub fn mask_token_id(&self) -> u32 {
        self.mask_token_id
    }

    pub fn max_sequence_length(&self) -> usize {
        self.model.max_sequence_length()
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.token_index.get(token).copied()
    }

    /// Tokenize with the backend and enforce the length limit.
    pub fn encode(&self, text: &str) -> Result<Encoding> {
        let encoding = self.model.encode(text)?;
        let max = self.max_sequence_length();
        if encoding.len() > max {
            return Err(GatewayError::TooLong {
                len: encoding.len(),
                max,
            });
        }
        Ok(encoding)
    }

    /// Rewrite the generic placeholder into this model's mask token.
    pub fn with_model_mask(&self, sentence: &str) -> String {
        let mask = self.mask_token();
        if mask == MASK_PLACEHOLDER {
            sentence.to_string()
        } else {
            sentence.replace(MASK_PLACEHOLDER, mask)
        }
    }

    /// Returns the rewritten sentence and the byte offset of its single mask.
    fn locate_mask(&self, sentence: &str) -> Result<(String, usize)> {
        let text = self.with_model_mask(sentence);
        let mask = self.mask_token();
        let found: Vec<usize> = text.match_indices(mask).map(|(i, _)| i).collect();
        match found.as_slice() {
            [start] => Ok((text, *start)),
            other => Err(GatewayError::MaskCount(other.len())),
        }
    }

    fn predict_checked(&self, inputs: &[MaskedInput]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let probs = self.model.predict(chunk)?;
            if probs.len() != chunk.len() {
                return Err(GatewayError::Backend(format!(
                    "asked for {} distributions, got {}",
                    chunk.len(),
                    probs.len()
                )));
            }
            for p in &probs {
                if p.len() != self.vocab_size() {
                    return Err(GatewayError::ShapeMismatch {
                        expected: self.vocab_size(),
                        got: p.len(),
                    });
                }
            }
            out.extend(probs);
        }
        Ok(out)
    }

    /// Full distribution over the vocabulary at the sentence's single mask.
    pub fn mask_distribution(&self, sentence: &str) -> Result<MaskDistribution> {
        let (text, _) = self.locate_mask(sentence)?;
        let encoding = self.encode(&text)?;
        let positions: Vec<usize> = encoding
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == self.mask_token_id)
            .map(|(i, _)| i)
            .collect();
        let position = match positions.as_slice() {
            [p] => *p,
            other => return Err(GatewayError::MaskCount(other.len())),
        };
        let input = MaskedInput {
            ids: encoding.ids,
            position,
        };
        let probs = self
            .predict_checked(std::slice::from_ref(&input))?
            .pop()
            .expect("one distribution per input");
        Ok(MaskDistribution { probs, position })
    }

    /// Probability of `word` filling the mask slot.
    ///
    /// A word that tokenizes to several tokens occupies that many slots; its
    /// score is the product over slots of each token's probability with only
    /// that slot masked and the word's other tokens in place.
    pub fn score_word_at_mask(&self, sentence: &str, word: &str) -> Result<f64> {
        let mut cached = None;
        self.score_with_cache(sentence, word, &mut cached)
    }

    /// [`Self::score_word_at_mask`] for several words, sharing one forward
    /// pass among the single-token words.
    pub fn score_words_at_mask<S: AsRef<str>>(&self, sentence: &str, words: &[S]) -> Result<Vec<f64>> {
        let mut cached = None;
        words
            .iter()
            .map(|w| self.score_with_cache(sentence, w.as_ref(), &mut cached))
            .collect()
    }

    fn score_with_cache(
        &self,
        sentence: &str,
        word: &str,
        cached: &mut Option<MaskDistribution>,
    ) -> Result<f64> {
        if word.trim().is_empty() {
            return Err(GatewayError::EmptyWord);
        }
        let (text, mask_start) = self.locate_mask(sentence)?;
        let mask_end = mask_start + self.mask_token().len();
        let filled = format!("{}{}{}", &text[..mask_start], word, &text[mask_end..]);
        let span = (mask_start, mask_start + word.len());
        let encoding = self.encode(&filled)?;
        let slots: Vec<usize> = encoding
            .content_positions()
            .filter(|&i| {
                let (s, e) = encoding.offsets[i];
                s < span.1 && e > span.0
            })
            .collect();
        match slots.as_slice() {
            [] => Err(GatewayError::NoTokens(word.to_string())),
            [slot] => {
                let id = encoding.ids[*slot] as usize;
                if cached.is_none() {
                    *cached = Some(self.mask_distribution(sentence)?);
                }
                Ok(cached.as_ref().expect("filled above").probs[id])
            }
            _ => {
                let inputs: Vec<MaskedInput> = slots
                    .iter()
                    .map(|&slot| {
                        let mut ids = encoding.ids.clone();
                        ids[slot] = self.mask_token_id;
                        MaskedInput { ids, position: slot }
                    })
                    .collect();
                let probs = self.predict_checked(&inputs)?;
                Ok(slots
                    .iter()
                    .zip(&probs)
                    .map(|(&slot, p)| p[encoding.ids[slot] as usize])
                    .product())
            }
        }
    }

    /// Sum over content tokens of `ln p(token | sentence with it masked)`.
    pub fn pseudo_log_likelihood(&self, sentence: &str) -> Result<SentenceScore> {
        let encoding = self.encode(sentence)?;
        let positions: Vec<usize> = encoding.content_positions().collect();
        if positions.is_empty() {
            return Err(GatewayError::EmptySentence);
        }
        let inputs: Vec<MaskedInput> = positions
            .iter()
            .map(|&position| {
                let mut ids = encoding.ids.clone();
                ids[position] = self.mask_token_id;
                MaskedInput { ids, position }
            })
            .collect();
        let probs = self.predict_checked(&inputs)?;
        let pll = positions
            .iter()
            .zip(&probs)
            .map(|(&pos, p)| p[encoding.ids[pos] as usize].ln())
            .sum();
        Ok(SentenceScore {
            pll,
            token_count: positions.len(),
        })
    }

    /// Per-token pseudo-perplexity over a set of sentences.
    pub fn pseudo_perplexity<S: AsRef<str>>(&self, sentences: &[S]) -> Result<f64> {
        self.pseudo_perplexity_with(sentences, PerplexityNormalization::Tokens)
    }

    pub fn pseudo_perplexity_with<S: AsRef<str>>(
        &self,
        sentences: &[S],
        normalization: PerplexityNormalization,
    ) -> Result<f64> {
        if sentences.is_empty() {
            return Err(GatewayError::EmptyInput);
        }
        let scores = sentences
            .iter()
            .map(|s| self.pseudo_log_likelihood(s.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        pseudo_perplexity_from_scores(&scores, normalization).ok_or(GatewayError::EmptyInput)
    }
}

/// Strip subword markers (`##`, `Ġ`, `▁`) from a vocabulary token.
pub fn surface_form(token: &str) -> &str {
    token
        .strip_prefix("##")
        .or_else(|| token.strip_prefix('Ġ'))
        .or_else(|| token.strip_prefix('▁'))
        .unwrap_or(token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vocab(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn base_vocab() -> Vec<String> {
        vocab(&[
            "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "she", "is", "a", "cat", "who", "that",
            "which", ".", "the", "dog", "barked", "pen", "##guin", "whom",
        ])
    }

    fn uniform() -> ModelHandle {
        ModelHandle::new("uniform", Arc::new(StubModel::uniform(base_vocab()))).unwrap()
    }

    #[test]
    fn handle_rejects_bad_vocab() {
        let err = ModelHandle::new("x", Arc::new(StubModel::uniform(vocab(&["a", "b"]))));
        assert!(matches!(err, Err(GatewayError::MissingMaskToken(_))));
        let err = ModelHandle::new(
            "x",
            Arc::new(StubModel::uniform(vocab(&["[MASK]", "a", "a"]))),
        );
        assert!(matches!(err, Err(GatewayError::InvalidVocab(_))));
    }

    #[test]
    fn uniform_distribution() {
        let h = uniform();
        let d = h.mask_distribution("she is a cat who is [MASK] .").unwrap();
        let expected = 1.0 / h.vocab_size() as f64;
        assert!(d.probs.iter().all(|&p| p == expected));
        assert_relative_eq!(d.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mask_count_is_checked() {
        let h = uniform();
        assert!(matches!(
            h.mask_distribution("she is [MASK] [MASK] ."),
            Err(GatewayError::MaskCount(2))
        ));
        assert!(matches!(
            h.mask_distribution("she is a cat ."),
            Err(GatewayError::MaskCount(0))
        ));
    }

    #[test]
    fn over_length_is_rejected() {
        let model = StubModel::uniform(base_vocab()).with_max_sequence_length(4);
        let h = ModelHandle::new("short", Arc::new(model)).unwrap();
        assert!(matches!(
            h.mask_distribution("she is a cat who is [MASK] ."),
            Err(GatewayError::TooLong { .. })
        ));
        assert!(matches!(
            h.pseudo_log_likelihood("she is a cat who is ."),
            Err(GatewayError::TooLong { .. })
        ));
    }

    #[test]
    fn uniform_word_score() {
        let h = uniform();
        let p = h.score_word_at_mask("the dog [MASK] barked .", "who").unwrap();
        assert_eq!(p, 1.0 / h.vocab_size() as f64);
    }

    #[test]
    fn direct_lookup_word_score() {
        let v = base_vocab();
        let who = v.iter().position(|t| t == "who").unwrap();
        let n = v.len();
        let model = StubModel::scripted(v, move |_, _| {
            let mut p = vec![0.7 / (n - 1) as f64; n];
            p[who] = 0.3;
            p
        });
        let h = ModelHandle::new("scripted", Arc::new(model)).unwrap();
        let p = h.score_word_at_mask("the dog [MASK] barked .", "who").unwrap();
        assert_eq!(p, 0.3);
        let d = h.mask_distribution("the dog [MASK] barked .").unwrap();
        assert_eq!(p, d.probs[who]);
    }

    #[test]
    fn multi_token_word_is_product_over_slots() {
        // "penguin" -> ["pen", "##guin"]; slot probabilities 0.5 then 0.2.
        let v = base_vocab();
        let wh = v.iter().position(|t| t == "pen").unwrap();
        let ose = v.iter().position(|t| t == "##guin").unwrap();
        let n = v.len();
        let model = StubModel::scripted(v, move |ids, pos| {
            let mut p = vec![0.0; n];
            let (target, prob) = if ids[pos + 1] as usize == ose { (wh, 0.5) } else { (ose, 0.2) };
            p[target] = prob;
            let rest = (1.0 - prob) / (n - 1) as f64;
            for (i, x) in p.iter_mut().enumerate() {
                if i != target {
                    *x = rest;
                }
            }
            p
        });
        let h = ModelHandle::new("scripted", Arc::new(model)).unwrap();
        let p = h.score_word_at_mask("the dog [MASK] barked .", "penguin").unwrap();
        assert_relative_eq!(p, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn empty_word_and_untokenizable_word() {
        let h = uniform();
        assert!(matches!(
            h.score_word_at_mask("the dog [MASK] .", "  "),
            Err(GatewayError::EmptyWord)
        ));
    }

    #[test]
    fn pll_uniform_and_perfect() {
        let h = uniform();
        let s = h.pseudo_log_likelihood("the dog barked .").unwrap();
        assert_eq!(s.token_count, 4);
        assert_relative_eq!(s.pll, 4.0 * (1.0 / h.vocab_size() as f64).ln(), epsilon = 1e-12);

        // Knows the sentence: one-hot on the true token at every position.
        let v = base_vocab();
        let n = v.len();
        let truth = [2usize, 13, 14, 15, 12, 3];
        let perfect = StubModel::scripted(v, move |_, pos| {
            let mut p = vec![0.0; n];
            p[truth[pos]] = 1.0;
            p
        });
        let h = ModelHandle::new("perfect", Arc::new(perfect)).unwrap();
        let s = h.pseudo_log_likelihood("the dog barked .").unwrap();
        assert_eq!(s.pll, 0.0);
        assert_eq!(h.pseudo_perplexity(&["the dog barked ."]).unwrap(), 1.0);
    }

    #[test]
    fn pll_hand_sum() {
        // Three content tokens scored at 0.5, 0.25 and 0.8: ln(0.1).
        let v = base_vocab();
        let n = v.len();
        let per_position = [0.5, 0.25, 0.8];
        let model = StubModel::scripted(v, move |ids, pos| {
            let mut p = vec![0.0; n];
            let truth = match pos {
                1 => 13, // the
                2 => 14, // dog
                _ => 15, // barked
            };
            assert_eq!(ids[pos], 4, "scored slot must be masked");
            let q = per_position[pos - 1];
            p[truth] = q;
            let other = if truth == 1 { 0 } else { 1 };
            p[other] = 1.0 - q;
            p
        });
        let h = ModelHandle::new("scripted", Arc::new(model)).unwrap();
        let s = h.pseudo_log_likelihood("the dog barked").unwrap();
        assert_eq!(s.token_count, 3);
        assert_relative_eq!(s.pll, 0.1f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn uniform_pppl_equals_vocab_size() {
        let h = uniform();
        let ppl = h
            .pseudo_perplexity(&["the dog barked .", "she is a cat ."])
            .unwrap();
        assert_relative_eq!(ppl, h.vocab_size() as f64, max_relative = 1e-12);
        assert!(matches!(
            h.pseudo_perplexity::<&str>(&[]),
            Err(GatewayError::EmptyInput)
        ));
    }

    #[test]
    fn normalization_variants() {
        let scores = [
            SentenceScore { pll: -2.0, token_count: 4 },
            SentenceScore { pll: -1.0, token_count: 2 },
        ];
        let per_token =
            pseudo_perplexity_from_scores(&scores, PerplexityNormalization::Tokens).unwrap();
        let per_sentence =
            pseudo_perplexity_from_scores(&scores, PerplexityNormalization::Sentences).unwrap();
        assert_relative_eq!(per_token, 0.5f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(per_sentence, 1.5f64.exp(), epsilon = 1e-12);
        assert!(pseudo_perplexity_from_scores(&[], PerplexityNormalization::Tokens).is_none());
    }

    #[test]
    fn placeholder_is_rewritten_for_other_mask_tokens() {
        let v = vocab(&["<s>", "</s>", "<mask>", "the", "dog", "who", "barked"]);
        let model = StubModel::uniform(v).with_mask_token("<mask>");
        let h = ModelHandle::new("roberta-like", Arc::new(model)).unwrap();
        let d = h.mask_distribution("the dog [MASK] barked").unwrap();
        assert_eq!(d.position, 3);
        assert!(matches!(
            h.mask_distribution("the [MASK] <mask> barked"),
            Err(GatewayError::MaskCount(2))
        ));
    }

    #[test]
    fn surface_forms() {
        assert_eq!(surface_form("##olate"), "olate");
        assert_eq!(surface_form("Ġslaughtered"), "slaughtered");
        assert_eq!(surface_form("▁ripe"), "ripe");
        assert_eq!(surface_form("cat"), "cat");
    }
}
