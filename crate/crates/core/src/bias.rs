//! Pronoun-prediction bias of a model on corpus sentences, and its
//! correlation with how often a corpus uses object pronouns for each name.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FrequencyTable, Pronoun, PronounCounts};
use crate::gateway::{GatewayError, ModelHandle};

/// Below this many sentences in either class a score is flagged.
pub const MIN_CLASS_SIZE: usize = 5;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("`{animal}` has {n_human} human and {n_object} object sentences; both must be non-empty")]
    EmptyClass {
        animal: String,
        n_human: usize,
        n_object: usize,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorrelationError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("a vector is constant")]
    Constant,
}

/// Probability of each relative pronoun at the mask.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PronounProbabilities {
    pub that: f64,
    pub which: f64,
    pub who: f64,
    pub whose: f64,
    pub whom: f64,
}

impl PronounProbabilities {
    pub fn from_array(p: [f64; 5]) -> Self {
        Self {
            that: p[0],
            which: p[1],
            who: p[2],
            whose: p[3],
            whom: p[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.that, self.which, self.who, self.whose, self.whom]
    }
}

/// `(p_object, p_human)`: the best object pronoun and the best human one.
pub fn class_scores(p: &PronounProbabilities) -> (f64, f64) {
    (p.that.max(p.which), p.who.max(p.whose).max(p.whom))
}

/// Score the five pronouns at the single mask of `masked`.
pub fn pronoun_probabilities(
    handle: &ModelHandle,
    masked: &str,
) -> Result<PronounProbabilities, GatewayError> {
    let words = Pronoun::ALL.map(Pronoun::as_str);
    let scores = handle.score_words_at_mask(masked, &words)?;
    Ok(PronounProbabilities::from_array([
        scores[0], scores[1], scores[2], scores[3], scores[4],
    ]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasScore {
    pub animal: String,
    pub bias: f64,
    pub n_human: usize,
    pub n_object: usize,
}

impl BiasScore {
    pub fn low_confidence(&self) -> bool {
        self.n_human < MIN_CLASS_SIZE || self.n_object < MIN_CLASS_SIZE
    }
}

/// Share of human sentences where the object class wins, minus the share of
/// object sentences where the human class wins. Ties count for neither.
///
/// Inputs are `(p_object, p_human)` pairs; `None` if either side is empty.
pub fn bias_from_class_scores(human: &[(f64, f64)], object: &[(f64, f64)]) -> Option<f64> {
    if human.is_empty() || object.is_empty() {
        return None;
    }
    let object_wins = human.iter().filter(|(o, h)| o > h).count() as f64;
    let human_wins = object.iter().filter(|(o, h)| h > o).count() as f64;
    Some(object_wins / human.len() as f64 - human_wins / object.len() as f64)
}

pub fn bias_from_probabilities(
    animal: &str,
    human: &[PronounProbabilities],
    object: &[PronounProbabilities],
) -> Result<BiasScore, BiasError> {
    let h: Vec<(f64, f64)> = human.iter().map(class_scores).collect();
    let o: Vec<(f64, f64)> = object.iter().map(class_scores).collect();
    let bias = bias_from_class_scores(&h, &o).ok_or_else(|| BiasError::EmptyClass {
        animal: animal.to_string(),
        n_human: human.len(),
        n_object: object.len(),
    })?;
    Ok(BiasScore {
        animal: animal.to_string(),
        bias,
        n_human: human.len(),
        n_object: object.len(),
    })
}

/// Bias of `handle` for one name from masked human and object sentences.
pub fn bias<S: AsRef<str>>(
    handle: &ModelHandle,
    animal: &str,
    human: &[S],
    object: &[S],
) -> Result<BiasScore, BiasError> {
    if human.is_empty() || object.is_empty() {
        return Err(BiasError::EmptyClass {
            animal: animal.to_string(),
            n_human: human.len(),
            n_object: object.len(),
        });
    }
    let score = |s: &[S]| {
        s.iter()
            .map(|x| pronoun_probabilities(handle, x.as_ref()))
            .collect::<Result<Vec<_>, _>>()
    };
    bias_from_probabilities(animal, &score(human)?, &score(object)?)
}

/// `(that + which) / total`; `None` when the name has no pronoun counts.
pub fn frequency_skew(counts: &PronounCounts) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    (total > 0).then(|| (counts[0] + counts[1]) as f64 / total as f64)
}

/// Skew of `animal` over the given corpora of `table`.
pub fn table_skew(table: &FrequencyTable, corpora: &[&str], animal: &str) -> Option<f64> {
    let mut counts = [0u64; 5];
    for corpus in corpora {
        let cell = table.cell(corpus, animal);
        counts.iter_mut().zip(cell).for_each(|(c, x)| *c += x);
    }
    frequency_skew(&counts)
}

/// Product-moment correlation coefficient.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, CorrelationError> {
    if x.len() != y.len() {
        return Err(CorrelationError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(CorrelationError::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::Constant);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPoint {
    pub animal: String,
    pub bias: f64,
    pub skew: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedAnimal {
    pub animal: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub model: String,
    pub frequency_corpora: Vec<String>,
    /// `None` when the coefficient is undefined; see `error`.
    pub r: Option<f64>,
    pub error: Option<String>,
    pub n: usize,
    pub points: Vec<CorrelationPoint>,
    pub excluded: Vec<ExcludedAnimal>,
}

/// Pair each score with its name's skew and correlate.
pub fn correlate(
    model: &str,
    scores: &[BiasScore],
    table: &FrequencyTable,
    corpora: &[&str],
) -> CorrelationReport {
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for s in scores {
        match table_skew(table, corpora, &s.animal) {
            Some(skew) => points.push(CorrelationPoint {
                animal: s.animal.clone(),
                bias: s.bias,
                skew,
            }),
            None => excluded.push(ExcludedAnimal {
                animal: s.animal.clone(),
                reason: "no pronoun counts in the frequency corpora".into(),
            }),
        }
    }
    let x: Vec<f64> = points.iter().map(|p| p.bias).collect();
    let y: Vec<f64> = points.iter().map(|p| p.skew).collect();
    let (r, error) = match pearson_r(&x, &y) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CorrelationReport {
        model: model.to_string(),
        frequency_corpora: corpora.iter().map(|c| c.to_string()).collect(),
        r,
        error,
        n: points.len(),
        points,
        excluded,
    }
}

/// Rows `model,animal,bias,n_human,n_object`.
pub fn write_bias_csv<W: Write>(model: &str, scores: &[BiasScore], mut w: W) -> std::io::Result<()> {
    writeln!(w, "model,animal,bias,n_human,n_object")?;
    for s in scores {
        writeln!(w, "{model},{},{},{},{}", s.animal, s.bias, s.n_human, s.n_object)?;
    }
    Ok(())
}
