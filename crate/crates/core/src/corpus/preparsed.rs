//! Ingest of relative-clause annotations produced by an external parser.

use serde::{Deserialize, Serialize};

use super::heuristic::HeuristicExtractor;
use super::{CorpusError, ExtractedSentence, Pronoun, Result};

/// One JSONL line. Spans are character offsets into `sentence`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparsedRecord {
    pub sentence: String,
    pub pronoun_span: (usize, usize),
    pub antecedent_span: (usize, usize),
    pub antecedent_lemma: String,
}

/// Parse a line and keep it if the lemma names a lexicon entry.
///
/// `Ok(None)` means a well-formed record about something else.
pub fn parse_preparsed_line(
    line: &str,
    names: &HeuristicExtractor,
    source_id: &str,
) -> Result<Option<ExtractedSentence>> {
    let rec: PreparsedRecord = serde_json::from_str(line)?;
    let len = rec.sentence.chars().count();
    for (start, end) in [rec.pronoun_span, rec.antecedent_span] {
        if start >= end || end > len {
            return Err(CorpusError::SpanOutOfBounds { start, end, len });
        }
    }
    let (s, e) = rec.pronoun_span;
    let word: String = rec.sentence.chars().skip(s).take(e - s).collect();
    let pronoun = Pronoun::parse_token(&word)
        .ok_or_else(|| CorpusError::Malformed(format!("`{word}` is not a relative pronoun")))?;
    let Some(animal) = names.resolve(rec.antecedent_lemma.trim()) else {
        return Ok(None);
    };
    let out = ExtractedSentence {
        animal: animal.to_string(),
        text: rec.sentence,
        pronoun,
        span: rec.pronoun_span,
        source_id: source_id.to_string(),
    };
    out.validate()?;
    Ok(Some(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> HeuristicExtractor {
        HeuristicExtractor::new(["dog", "cat"])
    }

    #[test]
    fn accepts_lexicon_lemmas() {
        let line = r#"{"sentence": "The owner of the dog who barked.", "pronoun_span": [21, 24],
            "antecedent_span": [17, 20], "antecedent_lemma": "dog"}"#;
        let e = parse_preparsed_line(line, &names(), "f:1").unwrap().unwrap();
        assert_eq!((e.animal.as_str(), e.pronoun, e.span), ("dog", Pronoun::Who, (21, 24)));
    }

    #[test]
    fn skips_other_lemmas_and_rejects_garbage() {
        let other = r#"{"sentence": "The owner of the dog who barked.", "pronoun_span": [21, 24],
            "antecedent_span": [4, 9], "antecedent_lemma": "owner"}"#;
        assert_eq!(parse_preparsed_line(other, &names(), "f").unwrap(), None);
        let person = other.replace("owner\"}", "person\"}");
        assert_eq!(parse_preparsed_line(&person, &names(), "f").unwrap(), None);
        let human = other.replace("\"owner\"}", "\"human\"}");
        assert!(parse_preparsed_line(&human, &names(), "f").unwrap().is_some());
        assert!(parse_preparsed_line("{not json", &names(), "f").is_err());
        let bad_span = other.replace("[21, 24]", "[21, 99]");
        assert!(matches!(
            parse_preparsed_line(&bad_span, &names(), "f"),
            Err(CorpusError::SpanOutOfBounds { .. })
        ));
        let not_pronoun = other.replace("[21, 24]", "[17, 20]");
        assert!(matches!(
            parse_preparsed_line(&not_pronoun, &names(), "f"),
            Err(CorpusError::Malformed(_))
        ));
    }
}
