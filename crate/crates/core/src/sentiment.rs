//! Valence-lexicon sentiment of shifted words.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::surface_form;
use crate::shifts::{Direction, ShiftedWordSet};

const VADER_LEXICON: &str = include_str!("../data/vader_lexicon.txt");

#[derive(Debug, Error)]
pub enum SentimentError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{sets} word sets but {labels} cluster labels")]
    LabelMismatch { sets: usize, labels: usize },
}

pub type Result<T> = std::result::Result<T, SentimentError>;

/// Word valences. Lookups are case-insensitive; missing words score 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SentimentLexicon {
    scores: HashMap<String, f64>,
}

impl SentimentLexicon {
    /// Reads `token<TAB>valence[<TAB>...]` lines; extra columns are ignored.
    pub fn from_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut scores = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let token = cols.next().unwrap_or_default();
            let value = cols.next().ok_or_else(|| SentimentError::Parse {
                line: i + 1,
                message: "missing valence column".into(),
            })?;
            let value: f64 = value.trim().parse().map_err(|_| SentimentError::Parse {
                line: i + 1,
                message: format!("bad valence `{value}`"),
            })?;
            scores.insert(token.to_lowercase(), value);
        }
        Ok(Self { scores })
    }

    /// The bundled VADER lexicon.
    pub fn vader() -> Self {
        Self::from_tsv(VADER_LEXICON.as_bytes()).expect("bundled lexicon parses")
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        Self {
            scores: pairs
                .into_iter()
                .map(|(w, v)| (w.as_ref().to_lowercase(), v))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.scores.get(&word.to_lowercase()).copied()
    }
}

/// Valence of a single word, context-free. Subword markers are stripped.
pub fn score_word(lex: &SentimentLexicon, word: &str) -> f64 {
    lex.get(surface_form(word)).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

impl Polarity {
    pub fn of(score: f64) -> Self {
        if score < 0.0 {
            Polarity::Negative
        } else if score > 0.0 {
            Polarity::Positive
        } else {
            Polarity::Neutral
        }
    }
}

/// Share of negative, neutral and positive words in one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentProfile {
    pub model: String,
    /// `None` for the group pooling every cluster of the model.
    pub cluster: Option<usize>,
    pub direction: Direction,
    pub n_words: usize,
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
}

impl SentimentProfile {
    pub fn total(&self) -> f64 {
        self.negative + self.neutral + self.positive
    }
}

/// Bucket a group of words. `None` for an empty group.
pub fn ratios<'a, I>(lex: &SentimentLexicon, words: I) -> Option<(usize, [f64; 3])>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = [0usize; 3];
    let mut n = 0usize;
    for w in words {
        let slot = match Polarity::of(score_word(lex, w)) {
            Polarity::Negative => 0,
            Polarity::Neutral => 1,
            Polarity::Positive => 2,
        };
        counts[slot] += 1;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let total = n as f64;
    Some((n, counts.map(|c| c as f64 / total)))
}

/// Profiles per cluster and direction, followed by one model-wide profile
/// per direction.
///
/// Each group is the distinct union of the surface forms (lowercased, subword
/// markers stripped) of the words its names shifted in that direction.
/// `labels[i]` is the cluster of `sets[i]`. Empty groups are omitted.
pub fn profile(
    lex: &SentimentLexicon,
    model: &str,
    sets: &[ShiftedWordSet],
    labels: &[usize],
) -> Result<Vec<SentimentProfile>> {
    if sets.len() != labels.len() {
        return Err(SentimentError::LabelMismatch {
            sets: sets.len(),
            labels: labels.len(),
        });
    }
    let mut groups: BTreeMap<(Option<usize>, Direction), BTreeSet<String>> = BTreeMap::new();
    for (set, &label) in sets.iter().zip(labels) {
        for direction in Direction::BOTH {
            for (word, _) in set.in_direction(direction) {
                let surface = surface_form(word).to_lowercase();
                if surface.is_empty() {
                    continue;
                }
                for cluster in [Some(label), None] {
                    groups
                        .entry((cluster, direction))
                        .or_default()
                        .insert(surface.clone());
                }
            }
        }
    }
    let mut out: Vec<SentimentProfile> = groups
        .into_iter()
        .filter_map(|((cluster, direction), words)| {
            let (n, [negative, neutral, positive]) = ratios(lex, words.iter().map(String::as_str))?;
            Some(SentimentProfile {
                model: model.to_string(),
                cluster,
                direction,
                n_words: n,
                negative,
                neutral,
                positive,
            })
        })
        .collect();
    // Per-cluster rows first, the pooled rows last.
    out.sort_by_key(|p| (p.cluster.is_none(), p.cluster, p.direction));
    Ok(out)
}

pub fn write_profiles_csv<W: Write>(profiles: &[SentimentProfile], mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,cluster,direction,n_words,negative,neutral,positive")?;
    for p in profiles {
        let cluster = p.cluster.map_or_else(|| "all".to_string(), |c| c.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            p.model,
            cluster,
            p.direction.as_str(),
            p.n_words,
            p.negative,
            p.neutral,
            p.positive
        )?;
    }
    Ok(())
}
