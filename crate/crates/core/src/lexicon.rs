//! Category lexicon: candidate names filtered by corpus frequency.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default frequency cut: names must occur more than this many times.
pub const DEFAULT_THRESHOLD: u64 = 20_000;

const WIKIPEDIA_ANIMALS: &str = include_str!("../data/wikipedia_animals.tsv");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("empty name")]
    EmptyName,
    #[error("`{0}` is not a single lowercase word")]
    InvalidName(String),
    #[error("no category for `{0}`")]
    MissingCategory(String),
    #[error("duplicate entry `{0}`")]
    Duplicate(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LexiconError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Animals kept on farms for their flesh.
    Farm,
    /// Popular nonhuman companions.
    Companion,
    Other,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Farm, Category::Companion, Category::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Farm => "farm",
            Category::Companion => "companion",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "farm" => Ok(Category::Farm),
            "companion" => Ok(Category::Companion),
            "other" => Ok(Category::Other),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimalEntry {
    pub name: String,
    pub category: Category,
    pub corpus_frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnimalLexicon {
    entries: Vec<AnimalEntry>,
    threshold: u64,
}

/// Word chars are alphanumerics and `_`, matching a regex `\b` boundary.
fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Maximal word-character runs of `text`.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !is_word_char(c)).filter(|w| !w.is_empty())
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(LexiconError::EmptyName);
    }
    if !name.chars().all(is_word_char) || name.to_lowercase() != name {
        return Err(LexiconError::InvalidName(name.to_string()));
    }
    Ok(())
}

/// Case-insensitive whole-word counter for a fixed set of names.
///
/// Counts are additive: feeding shards to separate counters and merging
/// gives the same totals as one counter over the concatenation, as long as
/// shards split between words.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrequencyCounter {
    counts: HashMap<String, u64>,
    max_len: usize,
}

impl FrequencyCounter {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts = HashMap::new();
        let mut max_len = 0;
        for name in names {
            let name = name.as_ref();
            validate_name(name)?;
            max_len = max_len.max(name.len());
            counts.insert(name.to_string(), 0);
        }
        Ok(Self { counts, max_len })
    }

    pub fn feed(&mut self, text: &str) {
        let mut lower = String::new();
        for word in words(text) {
            // Far longer than any name, even allowing for case-folding growth.
            if word.len() > self.max_len * 2 {
                continue;
            }
            lower.clear();
            lower.extend(word.chars().flat_map(char::to_lowercase));
            if let Some(c) = self.counts.get_mut(lower.as_str()) {
                *c += 1;
            }
        }
    }

    /// Add another counter's totals; names missing here are adopted.
    pub fn merge(&mut self, other: &FrequencyCounter) {
        for (name, &c) in &other.counts {
            *self.counts.entry(name.clone()).or_insert(0) += c;
        }
        self.max_len = self.max_len.max(other.max_len);
    }

    pub fn count(&self, name: &str) -> u64 {
        self.counts.get(name).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &HashMap<String, u64> {
        &self.counts
    }
}

/// Whole-word, case-insensitive occurrences of `name` over text chunks.
pub fn count_name_frequency<I, S>(corpus: I, name: &str) -> Result<u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counter = FrequencyCounter::new([name])?;
    for chunk in corpus {
        counter.feed(chunk.as_ref());
    }
    Ok(counter.count(name))
}

/// Keep candidates occurring more than `threshold` times.
///
/// Entries are sorted by descending frequency, ties by name.
pub fn build_lexicon_from_counts<S: AsRef<str>>(
    candidates: &[S],
    counts: &HashMap<String, u64>,
    threshold: u64,
    categories: &HashMap<String, Category>,
) -> Result<AnimalLexicon> {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for candidate in candidates {
        let name = candidate.as_ref();
        if !seen.insert(name) {
            continue;
        }
        let frequency = counts.get(name).copied().unwrap_or(0);
        if frequency <= threshold {
            continue;
        }
        let category = *categories
            .get(name)
            .ok_or_else(|| LexiconError::MissingCategory(name.to_string()))?;
        entries.push(AnimalEntry {
            name: name.to_string(),
            category,
            corpus_frequency: frequency,
        });
    }
    entries.sort_by(|a, b| {
        b.corpus_frequency
            .cmp(&a.corpus_frequency)
            .then_with(|| a.name.cmp(&b.name))
    });
    Ok(AnimalLexicon { entries, threshold })
}

/// Count every candidate over `corpus` in one pass, then filter.
pub fn build_lexicon<S, I, T>(
    candidates: &[S],
    corpus: I,
    threshold: u64,
    categories: &HashMap<String, Category>,
) -> Result<AnimalLexicon>
where
    S: AsRef<str>,
    I: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    let mut counter = FrequencyCounter::new(candidates.iter().map(AsRef::as_ref))?;
    for chunk in corpus {
        counter.feed(chunk.as_ref());
    }
    build_lexicon_from_counts(candidates, counter.counts(), threshold, categories)
}

/// Read a candidate list: one name per line.
///
/// Names are lowercased; blank lines and `#` comments are ignored and
/// multi-word names are dropped.
pub fn read_candidates<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let name = line.trim();
        if name.is_empty() || name.starts_with('#') {
            continue;
        }
        let name = name.to_lowercase();
        if validate_name(&name).is_err() {
            log::debug!("skipping multi-term candidate `{name}`");
            continue;
        }
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    Ok(out)
}

/// Read `name<TAB>category[<TAB>...]` rows into a category map.
pub fn read_categories<R: BufRead>(reader: R) -> Result<HashMap<String, Category>> {
    let mut out = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let name = cols.next().unwrap_or_default().trim().to_lowercase();
        let category = cols
            .next()
            .ok_or_else(|| LexiconError::Parse {
                line: i + 1,
                message: "missing category column".into(),
            })?
            .parse()
            .map_err(|message| LexiconError::Parse {
                line: i + 1,
                message,
            })?;
        out.insert(name, category);
    }
    Ok(out)
}

impl AnimalLexicon {
    pub fn new(entries: Vec<AnimalEntry>, threshold: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            validate_name(&e.name)?;
            if !seen.insert(e.name.as_str()) {
                return Err(LexiconError::Duplicate(e.name.clone()));
            }
        }
        Ok(Self { entries, threshold })
    }

    /// The 46 names and English Wikipedia counts the toolkit ships with.
    pub fn wikipedia_reference() -> Self {
        Self::read_tsv(WIKIPEDIA_ANIMALS.as_bytes(), DEFAULT_THRESHOLD)
            .expect("bundled lexicon is well-formed")
    }

    pub fn entries(&self) -> &[AnimalEntry] {
        &self.entries
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&AnimalEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn categories(&self) -> BTreeMap<String, Category> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.category))
            .collect()
    }

    /// Parse `name<TAB>category<TAB>frequency` rows.
    pub fn read_tsv<R: BufRead>(reader: R, threshold: u64) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| LexiconError::Parse {
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(parse_err(format!("expected 3 columns, found {}", cols.len())));
            }
            let category = cols[1].parse().map_err(parse_err)?;
            let corpus_frequency = cols[2]
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad frequency: {e}")))?;
            entries.push(AnimalEntry {
                name: cols[0].trim().to_string(),
                category,
                corpus_frequency,
            });
        }
        Self::new(entries, threshold)
    }

    pub fn write_tsv<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for e in &self.entries {
            writeln!(writer, "{}\t{}\t{}", e.name, e.category, e.corpus_frequency)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cats(pairs: &[(&str, Category)]) -> HashMap<String, Category> {
        pairs.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    }

    #[test]
    fn counts_whole_words_case_insensitively() {
        let corpus = ["The Horse and the horses.", "A seahorse; HORSE! horse's saddle"];
        assert_eq!(count_name_frequency(corpus, "horse").unwrap(), 3);
        assert_eq!(count_name_frequency(Vec::<String>::new(), "cow").unwrap(), 0);
        assert!(matches!(
            count_name_frequency(corpus, ""),
            Err(LexiconError::EmptyName)
        ));
    }

    #[test]
    fn filters_on_strictly_greater() {
        let counts: HashMap<String, u64> =
            [("horse".to_string(), 5), ("unicorn".to_string(), 3)].into();
        let categories = cats(&[("horse", Category::Other), ("unicorn", Category::Other)]);
        let lex = build_lexicon_from_counts(&["horse", "unicorn"], &counts, 4, &categories).unwrap();
        assert_eq!(lex.names().collect::<Vec<_>>(), vec!["horse"]);
        let lex = build_lexicon_from_counts(&["horse", "unicorn"], &counts, 5, &categories).unwrap();
        assert!(lex.is_empty());
    }

    #[test]
    fn survivor_without_category_is_an_error() {
        let counts: HashMap<String, u64> = [("horse".to_string(), 5)].into();
        let err = build_lexicon_from_counts(&["horse"], &counts, 1, &HashMap::new());
        assert!(matches!(err, Err(LexiconError::MissingCategory(n)) if n == "horse"));
        // A filtered-out name needs no category.
        assert!(build_lexicon_from_counts(&["horse"], &counts, 9, &HashMap::new()).is_ok());
    }

    #[test]
    fn builds_from_corpus_sorted_by_frequency() {
        let corpus = ["cat dog dog", "dog cat bird", "Dog"];
        let categories = cats(&[
            ("cat", Category::Companion),
            ("dog", Category::Companion),
            ("bird", Category::Other),
        ]);
        let lex = build_lexicon(&["bird", "cat", "dog"], corpus, 1, &categories).unwrap();
        let got: Vec<_> = lex
            .entries()
            .iter()
            .map(|e| (e.name.as_str(), e.corpus_frequency))
            .collect();
        assert_eq!(got, vec![("dog", 4), ("cat", 2)]);
    }

    #[test]
    fn reference_lexicon_has_46_entries() {
        let lex = AnimalLexicon::wikipedia_reference();
        assert_eq!(lex.len(), 46);
        assert_eq!(lex.get("horse").unwrap().corpus_frequency, 194_363);
        assert_eq!(lex.get("cow").unwrap().corpus_frequency, 22_563);
        assert!(lex.entries().iter().all(|e| e.corpus_frequency > DEFAULT_THRESHOLD));
        let farm: Vec<_> = lex
            .entries()
            .iter()
            .filter(|e| e.category == Category::Farm)
            .map(|e| e.name.as_str())
            .collect();
        assert_eq!(farm, vec!["turkey", "duck", "sheep", "chicken", "pig", "cow"]);

        // Refiltering the reference counts at the same threshold is a no-op.
        let counts: HashMap<String, u64> = lex
            .entries()
            .iter()
            .map(|e| (e.name.clone(), e.corpus_frequency))
            .collect();
        let mut candidates: Vec<&str> = lex.names().collect();
        candidates.push("aardvark");
        let mut categories: HashMap<String, Category> = lex.categories().into_iter().collect();
        categories.remove("aardvark");
        let rebuilt =
            build_lexicon_from_counts(&candidates, &counts, DEFAULT_THRESHOLD, &categories).unwrap();
        assert_eq!(rebuilt, lex);
    }

    #[test]
    fn tsv_round_trip() {
        let lex = AnimalLexicon::wikipedia_reference();
        let mut buf = Vec::new();
        lex.write_tsv(&mut buf).unwrap();
        let back = AnimalLexicon::read_tsv(buf.as_slice(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(back, lex);
    }

    #[test]
    fn candidate_file_keeps_single_terms() {
        let text = "Aardvark\n\n# comment\nAfrican Elephant\nhorse\nHorse\n";
        let names = read_candidates(text.as_bytes()).unwrap();
        assert_eq!(names, vec!["aardvark", "horse"]);
    }

    #[test]
    fn bad_rows_are_reported() {
        let err = AnimalLexicon::read_tsv("cat\tpet\t3\n".as_bytes(), 1).unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 1, .. }));
        let err = AnimalLexicon::read_tsv("cat\tother\t3\ncat\tother\t4\n".as_bytes(), 1);
        assert!(matches!(err, Err(LexiconError::Duplicate(_))));
    }

    proptest! {
        #[test]
        fn raising_threshold_never_adds(
            freqs in prop::collection::vec(0u64..100, 1..12),
            t1 in 0u64..100,
            dt in 0u64..50,
        ) {
            let names: Vec<String> = (0..freqs.len()).map(|i| format!("n{i}")).collect();
            let counts: HashMap<String, u64> =
                names.iter().cloned().zip(freqs.iter().copied()).collect();
            let categories: HashMap<String, Category> =
                names.iter().map(|n| (n.clone(), Category::Other)).collect();
            let low = build_lexicon_from_counts(&names, &counts, t1, &categories).unwrap();
            let high = build_lexicon_from_counts(&names, &counts, t1 + dt, &categories).unwrap();
            for name in high.names() {
                prop_assert!(low.contains(name));
            }
        }

        #[test]
        fn counting_is_additive_over_shards(
            docs in prop::collection::vec("(cat|Dog|the|CAT|catdog| |,|\\.){0,12}", 0..10),
            split in 0usize..10,
        ) {
            let split = split.min(docs.len());
            let whole = count_name_frequency(&docs, "cat").unwrap();
            let mut a = FrequencyCounter::new(["cat"]).unwrap();
            let mut b = FrequencyCounter::new(["cat"]).unwrap();
            docs[..split].iter().for_each(|d| a.feed(d));
            docs[split..].iter().for_each(|d| b.feed(d));
            a.merge(&b);
            prop_assert_eq!(a.count("cat"), whole);
        }
    }
}
