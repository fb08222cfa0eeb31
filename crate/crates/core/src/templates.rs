//! Human/object template sentences and per-name mean mask distributions.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{GatewayError, ModelHandle, MASK_PLACEHOLDER};

pub const ANIMAL_SLOT: &str = "[ANIMAL]";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("empty animal name")]
    EmptyAnimal,
    #[error("invalid template family: {0}")]
    InvalidFamily(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TemplateError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceClass {
    Human,
    Object,
}

impl SentenceClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SentenceClass::Human => "human",
            SentenceClass::Object => "object",
        }
    }
}

/// How the indefinite article before the name is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArticleMode {
    /// Always `a`, even before vowels (`a elephant`).
    #[default]
    Verbatim,
    /// `an` before a vowel-initial name.
    Agreement,
}

/// Sentence patterns, each with one `[ANIMAL]` and one `[MASK]` slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateFamily {
    pub human: Vec<String>,
    pub object: Vec<String>,
}

impl Default for TemplateFamily {
    fn default() -> Self {
        let human = ["She", "He"]
            .iter()
            .map(|p| format!("{p} is a {ANIMAL_SLOT} who is {MASK_PLACEHOLDER}."))
            .collect();
        let object = ["which", "that"]
            .iter()
            .flat_map(|rel| {
                ["This", "That", "It"]
                    .iter()
                    .map(move |p| format!("{p} is a {ANIMAL_SLOT} {rel} is {MASK_PLACEHOLDER}."))
            })
            .collect();
        Self { human, object }
    }
}

/// One concrete probe sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSentence {
    pub text: String,
    pub class: SentenceClass,
}

impl TemplateFamily {
    pub fn validate(&self) -> Result<()> {
        if self.human.is_empty() || self.object.is_empty() {
            return Err(TemplateError::InvalidFamily(
                "both human and object patterns are required".into(),
            ));
        }
        for pattern in self.human.iter().chain(&self.object) {
            let animals = pattern.matches(ANIMAL_SLOT).count();
            let masks = pattern.matches(MASK_PLACEHOLDER).count();
            if animals != 1 || masks != 1 {
                return Err(TemplateError::InvalidFamily(format!(
                    "`{pattern}` needs one {ANIMAL_SLOT} and one {MASK_PLACEHOLDER} slot"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let family: Self = serde_json::from_reader(reader)?;
        family.validate()?;
        Ok(family)
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn patterns(&self, class: SentenceClass) -> &[String] {
        match class {
            SentenceClass::Human => &self.human,
            SentenceClass::Object => &self.object,
        }
    }

    /// Fill every pattern with `animal`: human sentences first, then object.
    pub fn generate(&self, animal: &str, article: ArticleMode) -> Result<Vec<TemplateSentence>> {
        if animal.trim().is_empty() {
            return Err(TemplateError::EmptyAnimal);
        }
        let use_an = article == ArticleMode::Agreement
            && animal
                .chars()
                .next()
                .is_some_and(|c| "aeiouAEIOU".contains(c));
        let fill = |pattern: &str| {
            let pattern = if use_an {
                pattern
                    .replace(&format!("a {ANIMAL_SLOT}"), &format!("an {ANIMAL_SLOT}"))
                    .replace(&format!("A {ANIMAL_SLOT}"), &format!("An {ANIMAL_SLOT}"))
            } else {
                pattern.to_string()
            };
            pattern.replace(ANIMAL_SLOT, animal)
        };
        Ok([SentenceClass::Human, SentenceClass::Object]
            .into_iter()
            .flat_map(|class| {
                self.patterns(class).iter().map(move |p| TemplateSentence {
                    text: fill(p),
                    class,
                })
            })
            .collect())
    }
}

/// Eight default sentences for `animal`, article written verbatim.
pub fn generate_templates(animal: &str) -> Result<Vec<TemplateSentence>> {
    TemplateFamily::default().generate(animal, ArticleMode::Verbatim)
}

/// Mean mask distributions over the human and the object sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDistributionPair {
    pub animal: String,
    pub human: Vec<f64>,
    pub object: Vec<f64>,
}

impl MeanDistributionPair {
    pub fn mean(&self, class: SentenceClass) -> &[f64] {
        match class {
            SentenceClass::Human => &self.human,
            SentenceClass::Object => &self.object,
        }
    }

    /// Same pair with the two classes exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            animal: self.animal.clone(),
            human: self.object.clone(),
            object: self.human.clone(),
        }
    }
}

/// Element-wise mean of equally long vectors.
pub fn mean_vector<'a, I>(vectors: I) -> Option<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next()?;
    let mut sum = first.to_vec();
    let mut n = 1usize;
    for v in iter {
        assert_eq!(v.len(), sum.len(), "vectors must share a length");
        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        n += 1;
    }
    let n = n as f64;
    sum.iter_mut().for_each(|s| *s /= n);
    Some(sum)
}

pub fn mean_mask_distribution(
    handle: &ModelHandle,
    family: &TemplateFamily,
    animal: &str,
    article: ArticleMode,
) -> Result<MeanDistributionPair> {
    let sentences = family.generate(animal, article)?;
    let mut human = Vec::new();
    let mut object = Vec::new();
    for sentence in &sentences {
        let dist = handle.mask_distribution(&sentence.text)?;
        match sentence.class {
            SentenceClass::Human => human.push(dist.probs),
            SentenceClass::Object => object.push(dist.probs),
        }
    }
    let mean = |v: &[Vec<f64>]| mean_vector(v.iter().map(Vec::as_slice)).expect("validated family");
    Ok(MeanDistributionPair {
        animal: animal.to_string(),
        human: mean(&human),
        object: mean(&object),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubModel;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn default_family_matches_the_probe_set() {
        let sentences = generate_templates("cat").unwrap();
        let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "She is a cat who is [MASK].",
                "He is a cat who is [MASK].",
                "This is a cat which is [MASK].",
                "That is a cat which is [MASK].",
                "It is a cat which is [MASK].",
                "This is a cat that is [MASK].",
                "That is a cat that is [MASK].",
                "It is a cat that is [MASK].",
            ]
        );
        let humans = sentences.iter().filter(|s| s.class == SentenceClass::Human).count();
        assert_eq!((humans, sentences.len() - humans), (2, 6));
    }

    #[test]
    fn article_modes() {
        let verbatim = generate_templates("elephant").unwrap();
        assert_eq!(verbatim[0].text, "She is a elephant who is [MASK].");
        let agreeing = TemplateFamily::default()
            .generate("elephant", ArticleMode::Agreement)
            .unwrap();
        assert_eq!(agreeing[0].text, "She is an elephant who is [MASK].");
        let consonant = TemplateFamily::default()
            .generate("cow", ArticleMode::Agreement)
            .unwrap();
        assert_eq!(consonant[0].text, "She is a cow who is [MASK].");
        assert!(matches!(
            generate_templates(" "),
            Err(TemplateError::EmptyAnimal)
        ));
    }

    #[test]
    fn only_the_animal_slot_varies() {
        let a = generate_templates("cat").unwrap();
        let b = generate_templates("newfoundland").unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.class, y.class);
            assert_eq!(x.text.replace("cat", "[ANIMAL]"), y.text.replace("newfoundland", "[ANIMAL]"));
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let family = TemplateFamily::default();
        let mut buf = Vec::new();
        family.to_json(&mut buf).unwrap();
        assert_eq!(TemplateFamily::from_json(buf.as_slice()).unwrap(), family);
        let bad = r#"{"human": ["She is [MASK]."], "object": ["It is a [ANIMAL] [MASK]."]}"#;
        assert!(matches!(
            TemplateFamily::from_json(bad.as_bytes()),
            Err(TemplateError::InvalidFamily(_))
        ));
    }

    fn vocab() -> Vec<String> {
        [
            "[CLS]", "[SEP]", "[UNK]", "[MASK]", "she", "he", "this", "that", "it", "is", "a",
            "cat", "who", "which", ".", "w",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    #[test]
    fn uniform_means_are_uniform() {
        let h = ModelHandle::new("u", Arc::new(StubModel::uniform(vocab()))).unwrap();
        let pair =
            mean_mask_distribution(&h, &TemplateFamily::default(), "cat", ArticleMode::Verbatim)
                .unwrap();
        let u = 1.0 / 16.0;
        assert!(pair.human.iter().all(|&p| (p - u).abs() < 1e-15));
        assert!(pair.object.iter().all(|&p| (p - u).abs() < 1e-15));
    }

    #[test]
    fn object_mean_is_hand_average() {
        // "w" gets 0.4 in "This ... which" and 0.1 in the other five object sentences.
        let v = vocab();
        let w = 15usize;
        let this = 6u32;
        let which = 13u32;
        let n = v.len();
        let model = StubModel::scripted(v, move |ids, _| {
            let q = if ids[1] == this && ids.contains(&which) { 0.4 } else { 0.1 };
            let mut p = vec![(1.0 - q) / (n - 1) as f64; n];
            p[w] = q;
            p
        });
        let h = ModelHandle::new("s", Arc::new(model)).unwrap();
        let pair =
            mean_mask_distribution(&h, &TemplateFamily::default(), "cat", ArticleMode::Verbatim)
                .unwrap();
        assert_relative_eq!(pair.object[w], 0.15, epsilon = 1e-15);
        assert_relative_eq!(pair.human[w], 0.1, epsilon = 1e-15);
        assert_relative_eq!(pair.object.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
