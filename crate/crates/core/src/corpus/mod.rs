//! Corpus extraction of relative-pronoun sentences about lexicon names.
//!
//! Raw text is streamed paragraph by paragraph, split into sentences and
//! scanned for `that`/`which`/`who`/`whose`/`whom` whose antecedent is a
//! lexicon name. Offline parser output can be ingested instead.

mod extract;
mod heuristic;
mod preparsed;
mod segment;
mod table;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::ModelHandle;
use crate::templates::SentenceClass;

pub use extract::{
    collect_text_files, extract_path, extract_reader, ExtractionBackend, ExtractionStats,
    Extractor, MAX_PARAGRAPH_BYTES,
};
pub use heuristic::{HeuristicExtractor, HUMAN_TERM};
pub use preparsed::{parse_preparsed_line, PreparsedRecord};
pub use segment::{normalize_whitespace, split_sentences};
pub use table::{tabulate, FrequencyTable, PronounCounts};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown relative pronoun `{0}`")]
    UnknownPronoun(String),
    #[error("span {start}..{end} is outside a {len}-character sentence")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("span text `{found}` is not the pronoun `{expected}`")]
    SpanMismatch { expected: String, found: String },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("bad frequency table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pronoun {
    That,
    Which,
    Who,
    Whose,
    Whom,
}

impl Pronoun {
    pub const ALL: [Pronoun; 5] = [
        Pronoun::That,
        Pronoun::Which,
        Pronoun::Who,
        Pronoun::Whose,
        Pronoun::Whom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pronoun::That => "that",
            Pronoun::Which => "which",
            Pronoun::Who => "who",
            Pronoun::Whose => "whose",
            Pronoun::Whom => "whom",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// `that`/`which` describe things, the rest describe people.
    pub fn class(self) -> SentenceClass {
        match self {
            Pronoun::That | Pronoun::Which => SentenceClass::Object,
            Pronoun::Who | Pronoun::Whose | Pronoun::Whom => SentenceClass::Human,
        }
    }

    /// Case-insensitive match of a whole token.
    pub fn parse_token(token: &str) -> Option<Pronoun> {
        Pronoun::ALL
            .into_iter()
            .find(|p| token.eq_ignore_ascii_case(p.as_str()))
    }
}

impl fmt::Display for Pronoun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pronoun {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        Pronoun::parse_token(s.trim()).ok_or_else(|| CorpusError::UnknownPronoun(s.to_string()))
    }
}

/// A sentence whose relative pronoun refers to a lexicon name.
///
/// `span` holds character (not byte) offsets of the pronoun in `text`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractedSentence {
    pub text: String,
    pub animal: String,
    pub pronoun: Pronoun,
    pub span: (usize, usize),
    pub source_id: String,
}

fn char_to_byte(text: &str, char_idx: usize) -> Option<usize> {
    if char_idx == text.chars().count() {
        return Some(text.len());
    }
    text.char_indices().nth(char_idx).map(|(b, _)| b)
}

impl ExtractedSentence {
    /// Byte range of the pronoun.
    pub fn byte_span(&self) -> Result<(usize, usize)> {
        let (start, end) = self.span;
        let out_of_bounds = || CorpusError::SpanOutOfBounds {
            start,
            end,
            len: self.text.chars().count(),
        };
        if start >= end {
            return Err(out_of_bounds());
        }
        let b0 = char_to_byte(&self.text, start).ok_or_else(out_of_bounds)?;
        let b1 = char_to_byte(&self.text, end).ok_or_else(out_of_bounds)?;
        Ok((b0, b1))
    }

    /// Check that the span covers the recorded pronoun.
    pub fn validate(&self) -> Result<()> {
        let (b0, b1) = self.byte_span()?;
        let found = &self.text[b0..b1];
        if Pronoun::parse_token(found) != Some(self.pronoun) {
            return Err(CorpusError::SpanMismatch {
                expected: self.pronoun.to_string(),
                found: found.to_string(),
            });
        }
        Ok(())
    }

    /// Replace the pronoun with `mask`, leaving every other byte as is.
    pub fn masked_with(&self, mask: &str) -> Result<String> {
        let (b0, b1) = self.byte_span()?;
        Ok(format!("{}{}{}", &self.text[..b0], mask, &self.text[b1..]))
    }

    /// The pronoun exactly as written in the text.
    pub fn original_pronoun(&self) -> Result<&str> {
        let (b0, b1) = self.byte_span()?;
        Ok(&self.text[b0..b1])
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }
}

/// The sentence with its pronoun replaced by the model's mask token.
pub fn mask_pronoun(sentence: &ExtractedSentence, handle: &ModelHandle) -> Result<String> {
    sentence.masked_with(handle.mask_token())
}

/// Undo [`ExtractedSentence::masked_with`]: put `word` back at the mask that
/// starts at character `start`.
pub fn unmask(masked: &str, start: usize, mask: &str, word: &str) -> Result<String> {
    let len = masked.chars().count();
    let out_of_bounds = || CorpusError::SpanOutOfBounds {
        start,
        end: start + mask.chars().count(),
        len,
    };
    let b0 = char_to_byte(masked, start).ok_or_else(out_of_bounds)?;
    if !masked[b0..].starts_with(mask) {
        return Err(out_of_bounds());
    }
    let b1 = b0 + mask.len();
    Ok(format!("{}{}{}", &masked[..b0], word, &masked[b1..]))
}

/// Fixed-size uniform sample of a stream (Algorithm R).
#[derive(Debug, Clone)]
pub struct Reservoir<T> {
    capacity: usize,
    seen: u64,
    items: Vec<(u64, T)>,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            seen: 0,
            items: Vec::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn offer<R: Rng>(&mut self, item: T, rng: &mut R) {
        let index = self.seen;
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push((index, item));
        } else if self.capacity > 0 {
            let j = rng.gen_range(0..self.seen);
            if (j as usize) < self.capacity {
                self.items[j as usize] = (index, item);
            }
        }
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Sampled items in stream order.
    pub fn into_vec(mut self) -> Vec<T> {
        self.items.sort_by_key(|(i, _)| *i);
        self.items.into_iter().map(|(_, t)| t).collect()
    }
}

/// Seeded uniform sample of up to `per_pronoun` sentences for each pronoun,
/// grouped by pronoun and in stream order within a group.
pub fn sample_for_validation<I>(sentences: I, per_pronoun: usize, seed: u64) -> Vec<ExtractedSentence>
where
    I: IntoIterator<Item = ExtractedSentence>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Reservoir<ExtractedSentence>> =
        (0..Pronoun::ALL.len()).map(|_| Reservoir::new(per_pronoun)).collect();
    for s in sentences {
        let k = s.pronoun.index();
        pools[k].offer(s, &mut rng);
    }
    pools.into_iter().flat_map(Reservoir::into_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubModel;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn sentence(text: &str, animal: &str, pronoun: Pronoun, span: (usize, usize)) -> ExtractedSentence {
        ExtractedSentence {
            text: text.into(),
            animal: animal.into(),
            pronoun,
            span,
            source_id: "t".into(),
        }
    }

    #[test]
    fn pronoun_parsing_and_classes() {
        assert_eq!("Who".parse::<Pronoun>().unwrap(), Pronoun::Who);
        assert!("what".parse::<Pronoun>().is_err());
        assert_eq!(Pronoun::Which.class(), SentenceClass::Object);
        assert_eq!(Pronoun::Whom.class(), SentenceClass::Human);
        assert_eq!(Pronoun::ALL.map(|p| p.index()), [0, 1, 2, 3, 4]);
    }

    #[test]
    fn masking_substitutes_once() {
        let s = sentence("The dog who barked was mine.", "dog", Pronoun::Who, (8, 11));
        s.validate().unwrap();
        assert_eq!(s.masked_with("[MASK]").unwrap(), "The dog [MASK] barked was mine.");
        let start = sentence("Who knows the cat.", "cat", Pronoun::Who, (0, 3));
        assert_eq!(start.masked_with("<mask>").unwrap(), "<mask> knows the cat.");
        let bad = sentence("The dog who barked.", "dog", Pronoun::Who, (8, 40));
        assert!(matches!(bad.masked_with("[MASK]"), Err(CorpusError::SpanOutOfBounds { .. })));
        let wrong = sentence("The dog who barked.", "dog", Pronoun::Which, (8, 11));
        assert!(matches!(wrong.validate(), Err(CorpusError::SpanMismatch { .. })));
    }

    #[test]
    fn mask_uses_the_handle_token() {
        let vocab: Vec<String> = ["<s>", "</s>", "<unk>", "<mask>", "dog"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let h = ModelHandle::new("r", Arc::new(StubModel::uniform(vocab).with_mask_token("<mask>")))
            .unwrap();
        let s = sentence("Le chién, which ran.", "chién", Pronoun::Which, (10, 15));
        let masked = mask_pronoun(&s, &h).unwrap();
        assert_eq!(masked, "Le chién, <mask> ran.");
        assert_eq!(unmask(&masked, 10, "<mask>", "which").unwrap(), s.text);
    }

    #[test]
    fn validation_sample_is_seeded_and_capped() {
        let mut stream = Vec::new();
        for i in 0..30 {
            stream.push(sentence(&format!("A cat that {i}."), "cat", Pronoun::That, (6, 10)));
        }
        for i in 0..3 {
            stream.push(sentence(&format!("A man whom {i}."), "human", Pronoun::Whom, (6, 10)));
        }
        let a = sample_for_validation(stream.clone(), 10, 7);
        let b = sample_for_validation(stream.clone(), 10, 7);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|s| s.pronoun == Pronoun::That).count(), 10);
        assert_eq!(a.iter().filter(|s| s.pronoun == Pronoun::Whom).count(), 3);
        assert!(a.len() <= 50);
        let c = sample_for_validation(stream, 10, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn json_line_schema() {
        let s = sentence("The dog who barked.", "dog", Pronoun::Who, (8, 11));
        let v: serde_json::Value = serde_json::from_str(&s.to_json_line()).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"text": "The dog who barked.", "animal": "dog",
                "pronoun": "who", "span": [8, 11], "source_id": "t"})
        );
    }

    proptest! {
        #[test]
        fn mask_round_trip(
            prefix in "[a-zA-Zé ,]{0,20}",
            suffix in "[a-zA-Zü .]{0,20}",
            p in 0usize..5,
            mask in prop::sample::select(vec!["[MASK]", "<mask>"]),
        ) {
            let pronoun = Pronoun::ALL[p];
            let text = format!("{prefix}{}{suffix}", pronoun.as_str());
            let start = prefix.chars().count();
            let s = sentence(&text, "cat", pronoun, (start, start + pronoun.as_str().len()));
            s.validate().unwrap();
            let masked = s.masked_with(mask).unwrap();
            prop_assert_eq!(masked.matches(mask).count(), 1);
            prop_assert_eq!(unmask(&masked, start, mask, pronoun.as_str()).unwrap(), text);
        }

        #[test]
        fn reservoir_keeps_min_of_capacity_and_stream(n in 0usize..200, cap in 0usize..20, seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = Reservoir::new(cap);
            for i in 0..n {
                r.offer(i, &mut rng);
            }
            let v = r.into_vec();
            prop_assert_eq!(v.len(), n.min(cap));
            prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
