use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::{Encoding, GatewayError, MaskedInput, MaskedLanguageModel, Result};

/// Small greedy WordPiece tokenizer for in-memory vocabularies.
///
/// Text is split into alphanumeric runs and single punctuation characters;
/// special tokens (mask, unknown, sentence markers) are matched literally.
/// A word missing from the vocabulary is tried lowercased, then split into
/// the longest known prefix followed by `##` continuations.
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    index: HashMap<String, u32>,
    specials: Vec<String>,
    bos: Option<u32>,
    eos: Option<u32>,
    unk: Option<u32>,
}

impl WordPieceTokenizer {
    pub fn new(vocab: &[String], mask_token: &str) -> Self {
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let pick = |names: &[&str]| names.iter().find_map(|n| index.get(*n).copied());
        let bos = pick(&["[CLS]", "<s>"]);
        let eos = pick(&["[SEP]", "</s>"]);
        let unk = pick(&["[UNK]", "<unk>"]);
        let mut specials: Vec<String> = vocab
            .iter()
            .filter(|t| {
                (t.starts_with('[') && t.ends_with(']') || t.starts_with('<') && t.ends_with('>'))
                    && t.len() > 2
            })
            .cloned()
            .collect();
        if !specials.iter().any(|s| s == mask_token) {
            specials.push(mask_token.to_string());
        }
        // Longest first so that e.g. `[MASK]` wins over a shorter prefix.
        specials.sort_by_key(|s| std::cmp::Reverse(s.len()));
        Self {
            index,
            specials,
            bos,
            eos,
            unk,
        }
    }

    fn lookup_word(&self, word: &str, start: usize, enc: &mut Encoding) -> Result<()> {
        if let Some(&id) = self.index.get(word) {
            push(enc, id, (start, start + word.len()));
            return Ok(());
        }
        let lower = word.to_lowercase();
        if lower.len() == word.len() {
            if let Some(&id) = self.index.get(&lower) {
                push(enc, id, (start, start + word.len()));
                return Ok(());
            }
        }
        let mut pieces = Vec::new();
        let mut from = 0;
        while from < word.len() {
            let mut to = word.len();
            let mut found = None;
            while to > from {
                if word.is_char_boundary(to) {
                    let piece = &word[from..to];
                    let key = if from == 0 {
                        piece.to_string()
                    } else {
                        format!("##{piece}")
                    };
                    if let Some(&id) = self.index.get(&key) {
                        found = Some(id);
                        break;
                    }
                }
                to -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push((id, (start + from, start + to)));
                    from = to;
                }
                None => {
                    pieces.clear();
                    break;
                }
            }
        }
        if pieces.is_empty() {
            match self.unk {
                Some(id) => push(enc, id, (start, start + word.len())),
                None => {
                    return Err(GatewayError::Backend(format!(
                        "cannot tokenize `{word}` and vocabulary has no unknown token"
                    )))
                }
            }
        } else {
            for (id, span) in pieces {
                push(enc, id, span);
            }
        }
        Ok(())
    }

    pub fn encode(&self, text: &str) -> Result<Encoding> {
        let mut enc = Encoding::default();
        if let Some(bos) = self.bos {
            push_special(&mut enc, bos);
        }
        let mut i = 0;
        'outer: while i < text.len() {
            let rest = &text[i..];
            let c = rest.chars().next().expect("non-empty remainder");
            if c.is_whitespace() {
                i += c.len_utf8();
                continue;
            }
            for special in &self.specials {
                if rest.starts_with(special.as_str()) {
                    let id = self.index[special];
                    push(&mut enc, id, (i, i + special.len()));
                    i += special.len();
                    continue 'outer;
                }
            }
            if c.is_alphanumeric() {
                let len: usize = rest
                    .chars()
                    .take_while(|c| c.is_alphanumeric())
                    .map(char::len_utf8)
                    .sum();
                self.lookup_word(&rest[..len], i, &mut enc)?;
                i += len;
            } else {
                let len = c.len_utf8();
                self.lookup_word(&rest[..len], i, &mut enc)?;
                i += len;
            }
        }
        if let Some(eos) = self.eos {
            push_special(&mut enc, eos);
        }
        Ok(enc)
    }
}

fn push(enc: &mut Encoding, id: u32, span: (usize, usize)) {
    enc.ids.push(id);
    enc.offsets.push(span);
    enc.special.push(false);
}

fn push_special(enc: &mut Encoding, id: u32) {
    enc.ids.push(id);
    enc.offsets.push((0, 0));
    enc.special.push(true);
}

type Script = dyn Fn(&[u32], usize) -> Vec<f64> + Send + Sync;

/// In-memory model driven by a closure over `(masked ids, position)`.
#[derive(Clone)]
pub struct StubModel {
    vocab: Vec<String>,
    mask_token: String,
    max_len: usize,
    tokenizer: WordPieceTokenizer,
    script: Arc<Script>,
}

impl fmt::Debug for StubModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StubModel")
            .field("vocab_size", &self.vocab.len())
            .field("mask_token", &self.mask_token)
            .field("max_len", &self.max_len)
            .finish()
    }
}

impl StubModel {
    /// Every token gets probability `1/|V|` everywhere.
    pub fn uniform(vocab: Vec<String>) -> Self {
        let n = vocab.len();
        Self::scripted(vocab, move |_, _| vec![1.0 / n as f64; n])
    }

    pub fn scripted<F>(vocab: Vec<String>, script: F) -> Self
    where
        F: Fn(&[u32], usize) -> Vec<f64> + Send + Sync + 'static,
    {
        let mask_token = "[MASK]".to_string();
        let tokenizer = WordPieceTokenizer::new(&vocab, &mask_token);
        Self {
            vocab,
            mask_token,
            max_len: 512,
            tokenizer,
            script: Arc::new(script),
        }
    }

    pub fn with_mask_token(mut self, mask_token: &str) -> Self {
        self.mask_token = mask_token.to_string();
        self.tokenizer = WordPieceTokenizer::new(&self.vocab, mask_token);
        self
    }

    pub fn with_max_sequence_length(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }
}

impl MaskedLanguageModel for StubModel {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn max_sequence_length(&self) -> usize {
        self.max_len
    }

    fn encode(&self, text: &str) -> Result<Encoding> {
        self.tokenizer.encode(text)
    }

    fn predict(&self, inputs: &[MaskedInput]) -> Result<Vec<Vec<f64>>> {
        Ok(inputs
            .iter()
            .map(|input| (self.script)(&input.ids, input.position))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vec<String> {
        ["[CLS]", "[SEP]", "[UNK]", "[MASK]", "the", "dog", "wh", "##o", "##ose", ",", "."]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn encodes_with_offsets_and_specials() {
        let tok = WordPieceTokenizer::new(&vocab(), "[MASK]");
        let text = "The dog, whose [MASK].";
        let enc = tok.encode(text).unwrap();
        assert_eq!(enc.ids, vec![0, 4, 5, 9, 6, 8, 3, 10, 1]);
        assert_eq!(enc.special, vec![true, false, false, false, false, false, false, false, true]);
        assert_eq!(&text[enc.offsets[4].0..enc.offsets[4].1], "wh");
        assert_eq!(&text[enc.offsets[5].0..enc.offsets[5].1], "ose");
        assert_eq!(&text[enc.offsets[6].0..enc.offsets[6].1], "[MASK]");
    }

    #[test]
    fn unknown_words_fall_back() {
        let tok = WordPieceTokenizer::new(&vocab(), "[MASK]");
        let enc = tok.encode("zebra").unwrap();
        assert_eq!(enc.ids, vec![0, 2, 1]);
    }
}
