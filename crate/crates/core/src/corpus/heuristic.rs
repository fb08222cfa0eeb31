//! Self-contained antecedent heuristic.
//!
//! The antecedent of a relative pronoun is taken to be the word right before
//! it (a comma may sit in between for `which`/`who`/`whom`/`whose`). Only
//! lexicon names, their regular plurals and the literal `human`/`humans`
//! qualify. Several patterns where `that` is not a relative pronoun are
//! rejected; sentences the rule cannot vouch for are skipped.

use std::collections::HashMap;

use super::{ExtractedSentence, Pronoun};

/// Antecedent term always mapped to the human row.
pub const HUMAN_TERM: &str = "human";

/// Words after which a following noun + `that` usually opens a result clause.
const DEGREE_WORDS: &[&str] = &["so", "such"];

/// Verbs that take a `that` complement after their object.
const COMMUNICATION_VERBS: &[&str] = &[
    "told", "tell", "tells", "telling", "said", "showed", "shown", "convinced", "assured",
    "promised", "reminded", "informed", "warned", "taught", "persuaded", "notified", "asked",
];

/// Nouns that turn `that` into a determiner (`the dog that day`).
const THAT_DETERMINED: &[&str] = &[
    "day", "night", "morning", "afternoon", "evening", "time", "year", "week", "month", "moment",
    "way", "summer", "winter", "spring", "autumn", "fall", "one", "kind", "sort", "much", "many",
];

const IRREGULAR_PLURALS: &[(&str, &str)] = &[
    ("mice", "mouse"),
    ("geese", "goose"),
    ("oxen", "ox"),
    ("lice", "louse"),
    ("wolves", "wolf"),
    ("calves", "calf"),
    ("halves", "half"),
    ("humans", "human"),
];

#[derive(Debug, Clone, PartialEq)]
struct Token<'a> {
    text: &'a str,
    /// Character offset of the first character.
    start: usize,
    chars: usize,
    word: bool,
}

/// Cheap byte scan for `that`, `which` or `who*` in any letter case.
fn may_contain_pronoun(sentence: &str) -> bool {
    let b = sentence.as_bytes();
    let at = |i: usize, word: &[u8]| {
        b.len() >= i + word.len() && b[i..i + word.len()].eq_ignore_ascii_case(word)
    };
    (0..b.len()).any(|i| match b[i] | 0x20 {
        b't' => at(i, b"that"),
        b'w' => at(i, b"who") || at(i, b"which"),
        _ => false,
    })
}

fn tokenize(sentence: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut iter = sentence.char_indices().enumerate().peekable();
    while let Some((ci, (bi, c))) = iter.next() {
        if c.is_whitespace() {
            continue;
        }
        if c.is_alphanumeric() {
            let mut end_b = bi + c.len_utf8();
            let mut n = 1;
            while let Some(&(_, (b, d))) = iter.peek() {
                let inner_apostrophe = (d == '\'' || d == '’' || d == '-')
                    && sentence[b + d.len_utf8()..]
                        .chars()
                        .next()
                        .is_some_and(char::is_alphanumeric);
                if d.is_alphanumeric() || inner_apostrophe {
                    end_b = b + d.len_utf8();
                    n += 1;
                    iter.next();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                text: &sentence[bi..end_b],
                start: ci,
                chars: n,
                word: true,
            });
        } else {
            tokens.push(Token {
                text: &sentence[bi..bi + c.len_utf8()],
                start: ci,
                chars: 1,
                word: false,
            });
        }
    }
    tokens
}

/// Heuristic extractor over a fixed set of names.
#[derive(Debug, Clone)]
pub struct HeuristicExtractor {
    /// Surface form (lowercase) to canonical name.
    forms: HashMap<String, String>,
}

impl HeuristicExtractor {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut forms = HashMap::new();
        let mut add = |form: String, name: &str| {
            forms.entry(form).or_insert_with(|| name.to_string());
        };
        let mut names: Vec<String> = names.into_iter().map(|n| n.as_ref().to_lowercase()).collect();
        names.push(HUMAN_TERM.to_string());
        // Singular forms win over plurals that collide with another name.
        for name in &names {
            add(name.clone(), name);
        }
        for name in &names {
            add(format!("{name}s"), name);
            if name.ends_with(['s', 'x', 'z']) || name.ends_with("ch") || name.ends_with("sh") {
                add(format!("{name}es"), name);
            }
            if let Some(stem) = name.strip_suffix('y') {
                if !stem.ends_with(['a', 'e', 'o', 'u']) {
                    add(format!("{stem}ies"), name);
                }
            }
        }
        for (plural, singular) in IRREGULAR_PLURALS {
            if names.iter().any(|n| n == singular) {
                add(plural.to_string(), singular);
            }
        }
        Self { forms }
    }

    /// Canonical name for a surface word, if it is one.
    pub fn resolve(&self, word: &str) -> Option<&str> {
        self.forms.get(&word.to_lowercase()).map(String::as_str)
    }

    /// Every (name, pronoun) match in one sentence.
    pub fn extract_sentence(&self, sentence: &str, source_id: &str) -> Vec<ExtractedSentence> {
        if !may_contain_pronoun(sentence) {
            return Vec::new();
        }
        let tokens = tokenize(sentence);
        let mut out = Vec::new();
        for (i, tok) in tokens.iter().enumerate() {
            let Some(pronoun) = tok.word.then(|| Pronoun::parse_token(tok.text)).flatten() else {
                continue;
            };
            let Some(name) = self.antecedent(&tokens, i, pronoun) else {
                continue;
            };
            out.push(ExtractedSentence {
                text: sentence.to_string(),
                animal: name.to_string(),
                pronoun,
                span: (tok.start, tok.start + tok.chars),
                source_id: source_id.to_string(),
            });
        }
        out
    }

    fn antecedent(&self, tokens: &[Token<'_>], i: usize, pronoun: Pronoun) -> Option<&str> {
        let mut j = i.checked_sub(1)?;
        if tokens[j].text == "," {
            if pronoun == Pronoun::That {
                return None;
            }
            j = j.checked_sub(1)?;
        }
        let head = &tokens[j];
        if !head.word {
            return None;
        }
        // Mid-sentence capitals are proper nouns: Turkey, Bombay, Persian.
        let sentence_initial = tokens[..j].iter().all(|t| !t.word);
        if !sentence_initial && head.text.chars().next().is_some_and(char::is_uppercase) {
            return None;
        }
        let name = self.resolve(head.text)?;
        let lower = |t: &Token<'_>| t.text.to_lowercase();
        let window = &tokens[j.saturating_sub(3)..j];
        if window.iter().any(|t| DEGREE_WORDS.contains(&lower(t).as_str())) {
            return None;
        }
        if pronoun == Pronoun::That {
            if window
                .iter()
                .any(|t| COMMUNICATION_VERBS.contains(&lower(t).as_str()))
            {
                return None;
            }
            match tokens.get(i + 1) {
                None => return None,
                Some(next) if !next.word => return None,
                Some(next) if THAT_DETERMINED.contains(&lower(next).as_str()) => return None,
                _ => {}
            }
        }
        Some(name)
    }
}
