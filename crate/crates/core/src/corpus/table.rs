//! Pronoun frequency tables per corpus and name.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::heuristic::HUMAN_TERM;
use super::{CorpusError, ExtractedSentence, Pronoun, Result};

/// Counts for the five pronouns, indexed by [`Pronoun::index`].
pub type PronounCounts = [u64; 5];

/// Exact counts per (corpus, name, pronoun).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FrequencyTable {
    cells: BTreeMap<(String, String), PronounCounts>,
}

impl FrequencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, corpus: &str, animal: &str, pronoun: Pronoun, n: u64) {
        self.cells
            .entry((corpus.to_string(), animal.to_string()))
            .or_default()[pronoun.index()] += n;
    }

    pub fn record(&mut self, corpus: &str, sentence: &ExtractedSentence) {
        self.add(corpus, &sentence.animal, sentence.pronoun, 1);
    }

    /// Cell-wise sum; shard tables merge into the single-pass table.
    pub fn merge(&mut self, other: &FrequencyTable) {
        for (key, counts) in &other.cells {
            let cell = self.cells.entry(key.clone()).or_default();
            for (c, o) in cell.iter_mut().zip(counts) {
                *c += o;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.values().all(|c| c.iter().all(|&n| n == 0))
    }

    pub fn corpora(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.cells.keys().map(|(c, _)| c.as_str()).collect();
        v.dedup();
        v
    }

    pub fn animals(&self, corpus: &str) -> Vec<&str> {
        self.cells
            .keys()
            .filter(|(c, _)| c == corpus)
            .map(|(_, a)| a.as_str())
            .collect()
    }

    pub fn cell(&self, corpus: &str, animal: &str) -> PronounCounts {
        self.cells
            .get(&(corpus.to_string(), animal.to_string()))
            .copied()
            .unwrap_or_default()
    }

    /// Counts for a name summed over every corpus.
    pub fn animal_counts(&self, animal: &str) -> PronounCounts {
        let mut out = [0; 5];
        for ((_, a), counts) in &self.cells {
            if a == animal {
                out.iter_mut().zip(counts).for_each(|(o, c)| *o += c);
            }
        }
        out
    }

    /// Per-pronoun totals of one corpus, optionally without the human row.
    pub fn marginal(&self, corpus: &str, include_human: bool) -> PronounCounts {
        let mut out = [0; 5];
        for ((c, a), counts) in &self.cells {
            if c == corpus && (include_human || a != HUMAN_TERM) {
                out.iter_mut().zip(counts).for_each(|(o, n)| *o += n);
            }
        }
        out
    }

    /// Rows `corpus,measure,that,which,who,whose,whom` with measures
    /// `total` and `minus_human`.
    pub fn write_marginals_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "corpus,measure,that,which,who,whose,whom")?;
        for corpus in self.corpora() {
            for (measure, include) in [("total", true), ("minus_human", false)] {
                let m = self.marginal(corpus, include);
                writeln!(w, "{corpus},{measure},{},{},{},{},{}", m[0], m[1], m[2], m[3], m[4])?;
            }
        }
        Ok(())
    }

    /// Rows `corpus,animal,that,which,who,whose,whom`.
    pub fn write_cells_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "corpus,animal,that,which,who,whose,whom")?;
        for ((corpus, animal), m) in &self.cells {
            writeln!(w, "{corpus},{animal},{},{},{},{},{}", m[0], m[1], m[2], m[3], m[4])?;
        }
        Ok(())
    }

    pub fn read_cells_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let headers = reader.headers()?.clone();
        let expected = ["corpus", "animal", "that", "which", "who", "whose", "whom"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(CorpusError::Table(format!("unexpected header {headers:?}")));
        }
        let mut table = Self::new();
        for row in reader.records() {
            let row = row?;
            for (k, p) in Pronoun::ALL.into_iter().enumerate() {
                let n: u64 = row[k + 2]
                    .trim()
                    .parse()
                    .map_err(|_| CorpusError::Table(format!("bad count `{}`", &row[k + 2])))?;
                table.add(&row[0], &row[1], p, n);
            }
        }
        Ok(table)
    }
}

pub fn tabulate<'a, I>(corpus: &str, sentences: I) -> FrequencyTable
where
    I: IntoIterator<Item = &'a ExtractedSentence>,
{
    let mut t = FrequencyTable::new();
    for s in sentences {
        t.record(corpus, s);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(animal: &str, pronoun: Pronoun) -> ExtractedSentence {
        ExtractedSentence {
            text: String::new(),
            animal: animal.into(),
            pronoun,
            span: (0, 1),
            source_id: String::new(),
        }
    }

    #[test]
    fn marginals_with_and_without_human() {
        let stream = vec![
            s("dog", Pronoun::That),
            s("human", Pronoun::That),
            s("human", Pronoun::Who),
            s("cat", Pronoun::Who),
            s("cat", Pronoun::Whose),
        ];
        let t = tabulate("books", &stream);
        assert_eq!(t.marginal("books", true), [2, 0, 2, 1, 0]);
        assert_eq!(t.marginal("books", false), [1, 0, 1, 1, 0]);
        let mut out = Vec::new();
        t.write_marginals_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "corpus,measure,that,which,who,whose,whom\n\
             books,total,2,0,2,1,0\nbooks,minus_human,1,0,1,1,0\n"
        );
    }

    #[test]
    fn empty_stream_is_all_zero() {
        let t = tabulate("x", &[]);
        assert!(t.is_empty());
        assert_eq!(t.marginal("x", true), [0; 5]);
    }

    #[test]
    fn cells_csv_round_trip() {
        let mut t = FrequencyTable::new();
        t.add("wiki", "cow", Pronoun::That, 3);
        t.add("books", "cow", Pronoun::Who, 4);
        let mut out = Vec::new();
        t.write_cells_csv(&mut out).unwrap();
        let back = FrequencyTable::read_cells_csv(out.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.animal_counts("cow"), [3, 0, 4, 0, 0]);
        assert!(FrequencyTable::read_cells_csv("a,b\n".as_bytes()).is_err());
    }

    fn arb_stream() -> impl Strategy<Value = Vec<ExtractedSentence>> {
        prop::collection::vec(
            (prop::sample::select(vec!["dog", "cat", "human"]), 0usize..5)
                .prop_map(|(a, p)| s(a, Pronoun::ALL[p])),
            0..60,
        )
    }

    proptest! {
        #[test]
        fn tabulate_is_shard_associative(stream in arb_stream(), cut in 0usize..60) {
            let cut = cut.min(stream.len());
            let whole = tabulate("c", &stream);
            let mut merged = tabulate("c", &stream[..cut]);
            merged.merge(&tabulate("c", &stream[cut..]));
            prop_assert_eq!(&merged, &whole);
            let total: u64 = whole.marginal("c", true).iter().sum();
            prop_assert_eq!(total, stream.len() as u64);
            let sum_cells: PronounCounts = ["dog", "cat", "human"].iter().fold([0; 5], |mut acc, a| {
                acc.iter_mut().zip(whole.cell("c", a)).for_each(|(x, y)| *x += y);
                acc
            });
            prop_assert_eq!(sum_cells, whole.marginal("c", true));
        }
    }
}
