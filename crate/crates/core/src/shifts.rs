//! Word shifts between human and object sentences, token match rate and
//! UPGMA clustering of the names.
//!
//! For each name the mean object and human mask distributions are compared
//! word by word with `ln(p_object / p_human)`. Words that are improbable in
//! both means are dropped, then words whose ratio is not an outlier of that
//! name's ratio population (by z-score) are dropped. The survivors form the
//! name's shifted-word set. Names are compared by the overlap of their sets
//! (token match rate) and clustered with average linkage on `1 - TMR`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::surface_form;
use crate::templates::MeanDistributionPair;

/// Default |z| cut-off for the ratio outlier filter.
pub const DEFAULT_Z_THRESHOLD: f64 = 1.96;

/// Fraction of the highest merge used as the dendrogram colour cut.
pub const COLOR_THRESHOLD_FRACTION: f64 = 0.7;

#[derive(Debug, Error)]
pub enum ShiftError {
    #[error("clustering needs at least 2 leaves, got {0}")]
    TooFewLeaves(usize),
    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),
    #[error("mean vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, ShiftError>;

/// Which template class a word's probability moved toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Object,
    Human,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Object, Direction::Human];

    /// Positive ratios lean toward object sentences; zero leans nowhere.
    pub fn of(ratio: f64) -> Option<Direction> {
        if ratio > 0.0 {
            Some(Direction::Object)
        } else if ratio < 0.0 {
            Some(Direction::Human)
        } else {
            None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Object => "object",
            Direction::Human => "human",
        }
    }
}

/// `ln(p_object / p_human)` per vocabulary id; `None` where either is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioTable {
    pub animal: String,
    pub ratios: Vec<Option<f64>>,
}

pub fn log_ratio(pair: &MeanDistributionPair) -> Result<LogRatioTable> {
    if pair.object.len() != pair.human.len() {
        return Err(ShiftError::LengthMismatch(pair.object.len(), pair.human.len()));
    }
    let ratios = pair
        .object
        .iter()
        .zip(&pair.human)
        .map(|(&o, &h)| (o > 0.0 && h > 0.0).then(|| (o / h).ln()))
        .collect();
    Ok(LogRatioTable {
        animal: pair.animal.clone(),
        ratios,
    })
}

/// Toggles for the two word filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Drop words whose object and human means are both below `1/|V|`.
    pub vocab_filter: bool,
    /// Drop words with `|z| <` this; `None` disables the filter.
    pub z_threshold: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            vocab_filter: true,
            z_threshold: Some(DEFAULT_Z_THRESHOLD),
        }
    }
}

/// Words of one name that survived both filters, with their signed ratios.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShiftedWordSet {
    pub animal: String,
    pub words: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct WordRatio {
    word: String,
    ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct ShiftedWordSetJson {
    animal: String,
    words: Vec<WordRatio>,
}

impl ShiftedWordSet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(word)
    }

    /// Words leaning toward `direction`.
    pub fn in_direction(&self, direction: Direction) -> impl Iterator<Item = (&str, f64)> {
        self.words
            .iter()
            .filter(move |(_, &r)| Direction::of(r) == Some(direction))
            .map(|(w, &r)| (w.as_str(), r))
    }

    /// Words sorted by ratio, descending; ties by word.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.words.iter().map(|(w, &r)| (w.as_str(), r)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let doc = ShiftedWordSetJson {
            animal: self.animal.clone(),
            words: self
                .ranked()
                .into_iter()
                .map(|(word, ratio)| WordRatio {
                    word: word.to_string(),
                    ratio,
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("plain data serializes")
    }

    pub fn from_json_value(value: serde_json::Value) -> serde_json::Result<Self> {
        let doc: ShiftedWordSetJson = serde_json::from_value(value)?;
        Ok(Self {
            animal: doc.animal,
            words: doc.words.into_iter().map(|w| (w.word, w.ratio)).collect(),
        })
    }
}

/// Population mean and standard deviation.
fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Apply the vocabulary-probability filter, then the z-score filter.
///
/// z-scores use the population standard deviation of the ratios that
/// survived the first filter. A zero deviation means no word stands out and
/// yields an empty set.
pub fn filter_words(
    table: &LogRatioTable,
    pair: &MeanDistributionPair,
    vocab: &[String],
    config: FilterConfig,
) -> ShiftedWordSet {
    assert_eq!(table.animal, pair.animal, "table and means describe different names");
    assert_eq!(table.ratios.len(), vocab.len(), "ratio table does not match vocabulary");
    let floor = 1.0 / vocab.len() as f64;
    let candidates: Vec<(usize, f64)> = table
        .ratios
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .filter(|&(i, _)| {
            !config.vocab_filter || pair.object[i] >= floor || pair.human[i] >= floor
        })
        .collect();

    let survivors: Vec<(usize, f64)> = match config.z_threshold {
        None => candidates,
        Some(threshold) => {
            if candidates.is_empty() {
                Vec::new()
            } else {
                let ratios: Vec<f64> = candidates.iter().map(|&(_, r)| r).collect();
                let (mean, std) = mean_and_std(&ratios);
                if std == 0.0 || !std.is_finite() {
                    Vec::new()
                } else {
                    candidates
                        .into_iter()
                        .filter(|&(_, r)| ((r - mean) / std).abs() >= threshold)
                        .collect()
                }
            }
        }
    };
    ShiftedWordSet {
        animal: table.animal.clone(),
        words: survivors
            .into_iter()
            .map(|(i, r)| (vocab[i].clone(), r))
            .collect(),
    }
}

/// Convenience: ratios and both filters in one call.
pub fn shifted_words(
    pair: &MeanDistributionPair,
    vocab: &[String],
    config: FilterConfig,
) -> Result<ShiftedWordSet> {
    let table = log_ratio(pair)?;
    Ok(filter_words(&table, pair, vocab, config))
}

/// `k` words leaning toward `direction` with the largest |ratio|.
pub fn top_k_shifted(set: &ShiftedWordSet, direction: Direction, k: usize) -> Vec<(String, f64)> {
    let mut words: Vec<(&str, f64)> = set.in_direction(direction).collect();
    words.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(b.0)));
    words
        .into_iter()
        .take(k)
        .map(|(w, r)| (w.to_string(), r))
        .collect()
}

/// `|a ∩ b| / min(|a|, |b|)`; undefined when either set is empty.
pub fn token_match_rate(a: &ShiftedWordSet, b: &ShiftedWordSet) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let shared = small.words.keys().filter(|w| large.contains(w)).count();
    Some(shared as f64 / small.len() as f64)
}

/// Pairwise token match rates; `None` marks pairs involving an empty set.
#[derive(Debug, Clone, PartialEq)]
pub struct TmrMatrix {
    pub names: Vec<String>,
    pub tmr: Vec<Vec<Option<f64>>>,
}

impl TmrMatrix {
    pub fn from_sets(sets: &[ShiftedWordSet]) -> Self {
        let n = sets.len();
        let mut tmr = vec![vec![None; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = token_match_rate(&sets[i], &sets[j]);
                tmr[i][j] = v;
                tmr[j][i] = v;
            }
        }
        Self {
            names: sets.iter().map(|s| s.animal.clone()).collect(),
            tmr,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Off-diagonal pairs with an undefined rate, as `(i, j)` with `i < j`.
    pub fn missing_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.tmr[i][j].is_none())
            .collect()
    }

    /// `1 - TMR`, with undefined pairs at the maximum distance 1.
    pub fn distances(&self) -> Vec<Vec<f64>> {
        let missing = self.missing_pairs();
        if !missing.is_empty() {
            log::warn!(
                "{} name pairs have an empty shifted-word set; using distance 1.0",
                missing.len()
            );
        }
        let n = self.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            0.0
                        } else {
                            self.tmr[i][j].map_or(1.0, |t| 1.0 - t)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Square CSV with a header row of names; undefined cells are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "animal,{}", self.names.join(","))?;
        for (name, row) in self.names.iter().zip(&self.tmr) {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            writeln!(w, "{name},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// One agglomeration step. Clusters are numbered like SciPy: leaves are
/// `0..n`, the cluster made by step `k` is `n + k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

fn validate_distances(d: &[Vec<f64>]) -> Result<()> {
    let n = d.len();
    if n < 2 {
        return Err(ShiftError::TooFewLeaves(n));
    }
    for (i, row) in d.iter().enumerate() {
        if row.len() != n {
            return Err(ShiftError::InvalidMatrix(format!("row {i} has {} entries", row.len())));
        }
        for (j, &x) in row.iter().enumerate() {
            if !x.is_finite() || x < 0.0 {
                return Err(ShiftError::InvalidMatrix(format!("d[{i}][{j}] = {x}")));
            }
            if x != d[j][i] {
                return Err(ShiftError::InvalidMatrix(format!("d[{i}][{j}] != d[{j}][{i}]")));
            }
        }
    }
    Ok(())
}

/// Average-linkage (UPGMA) clustering of a symmetric distance matrix.
///
/// Ties at the minimum distance go to the lexicographically smallest
/// `(a, b)` pair of cluster ids.
pub fn upgma(distances: &[Vec<f64>]) -> Result<Dendrogram> {
    validate_distances(distances)?;
    let n = distances.len();
    let total = 2 * n - 1;
    let mut d = vec![vec![0.0; total]; total];
    for (i, row) in distances.iter().enumerate() {
        d[i][..n].copy_from_slice(row);
    }
    let mut size = vec![1usize; total];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for (x, &i) in active.iter().enumerate() {
            for &j in &active[x + 1..] {
                if best.is_none_or(|(_, _, h)| d[i][j] < h) {
                    best = Some((i, j, d[i][j]));
                }
            }
        }
        let (a, b, height) = best.expect("at least two active clusters");
        let new = n + step;
        size[new] = size[a] + size[b];
        let (wa, wb) = (size[a] as f64, size[b] as f64);
        for &k in &active {
            if k != a && k != b {
                let v = (wa * d[a][k] + wb * d[b][k]) / (wa + wb);
                d[new][k] = v;
                d[k][new] = v;
            }
        }
        active.retain(|&k| k != a && k != b);
        active.push(new);
        merges.push(Merge {
            a,
            b,
            height,
            size: size[new],
        });
    }
    Ok(Dendrogram {
        n_leaves: n,
        merges,
    })
}

impl Dendrogram {
    pub fn max_height(&self) -> f64 {
        self.merges.iter().map(|m| m.height).fold(0.0, f64::max)
    }

    /// Default colour cut, a fixed fraction of the highest merge.
    pub fn color_threshold(&self) -> f64 {
        COLOR_THRESHOLD_FRACTION * self.max_height()
    }

    fn children(&self, id: usize) -> Option<(usize, usize)> {
        (id >= self.n_leaves).then(|| {
            let m = &self.merges[id - self.n_leaves];
            (m.a, m.b)
        })
    }

    /// Leaves left to right, each merge drawing `a` before `b`.
    pub fn leaf_order(&self) -> Vec<usize> {
        if self.merges.is_empty() {
            return (0..self.n_leaves).collect();
        }
        let mut order = Vec::with_capacity(self.n_leaves);
        let mut stack = vec![self.n_leaves + self.merges.len() - 1];
        while let Some(id) = stack.pop() {
            match self.children(id) {
                Some((a, b)) => {
                    stack.push(b);
                    stack.push(a);
                }
                None => order.push(id),
            }
        }
        order
    }

    /// Cluster labels after applying only the merges accepted by `keep`.
    /// Labels are numbered in leaf order.
    fn components(&self, keep: impl Fn(usize, &Merge) -> bool) -> Vec<usize> {
        let total = self.n_leaves + self.merges.len();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (k, m) in self.merges.iter().enumerate() {
            if keep(k, m) {
                let new = self.n_leaves + k;
                let ra = find(&mut parent, m.a);
                let rb = find(&mut parent, m.b);
                parent[ra] = new;
                parent[rb] = new;
            }
        }
        let mut labels = vec![usize::MAX; self.n_leaves];
        let mut root_label = BTreeMap::new();
        for leaf in self.leaf_order() {
            let root = find(&mut parent, leaf);
            let next = root_label.len();
            labels[leaf] = *root_label.entry(root).or_insert(next);
        }
        labels
    }

    /// Flat clustering into at most `k` clusters by undoing the top merges.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let k = k.max(1);
        let keep = self.n_leaves.saturating_sub(k);
        self.components(|step, _| step < keep)
    }

    /// Flat clustering from merges strictly below `threshold`.
    pub fn clusters_below(&self, threshold: f64) -> Vec<usize> {
        self.components(|_, m| m.height < threshold)
    }

    /// Merge list with a header: `step,cluster_a,cluster_b,height,size`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,cluster_a,cluster_b,height,size\n");
        for (k, m) in self.merges.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{},{},{}", m.a, m.b, m.height, m.size);
        }
        out
    }
}

/// Display form of a shifted word: subword markers removed.
pub fn display_word(token: &str) -> &str {
    surface_form(token)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn set(animal: &str, words: &[&str]) -> ShiftedWordSet {
        ShiftedWordSet {
            animal: animal.into(),
            words: words.iter().map(|w| (w.to_string(), 1.0)).collect(),
        }
    }

    fn pair(object: Vec<f64>, human: Vec<f64>) -> MeanDistributionPair {
        MeanDistributionPair {
            animal: "x".into(),
            human,
            object,
        }
    }

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("w{i}")).collect()
    }

    #[test]
    fn log_ratio_cases() {
        let p = pair(vec![0.2, 0.1, 0.3, 0.0, 0.4], vec![0.1, 0.2, 0.3, 0.4, 0.0]);
        let t = log_ratio(&p).unwrap();
        assert_relative_eq!(t.ratios[0].unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(t.ratios[1].unwrap(), -(2f64.ln()), epsilon = 1e-15);
        assert_eq!(t.ratios[2], Some(0.0));
        assert_eq!(t.ratios[3], None);
        assert_eq!(t.ratios[4], None);
    }

    #[test]
    fn equal_ratios_give_empty_set() {
        let p = pair(vec![0.25; 4], vec![0.25; 4]);
        let s = shifted_words(&p, &vocab(4), FilterConfig::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn vocab_filter_drops_improbable_words() {
        // w0 has an extreme ratio but both means sit below 1/|V| = 0.25.
        let object = vec![0.2, 0.3, 0.25, 0.25];
        let human = vec![0.0001, 0.3, 0.25, 0.4499];
        let p = pair(object, human);
        let cfg = FilterConfig {
            vocab_filter: true,
            z_threshold: None,
        };
        let s = shifted_words(&p, &vocab(4), cfg).unwrap();
        assert!(!s.contains("w0"));
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn z_filter_keeps_the_outlier() {
        // Ratios {0 x7, 9}: population mean 1.125, sd ~2.976, z(9) ~2.65, z(0) ~-0.38.
        let n = 8;
        let base = 0.125;
        let mut object = vec![base; n];
        let mut human = vec![base; n];
        // Give w7 ratio 9 while keeping both entries above 1/|V|.
        object[7] = base * 9f64.exp().sqrt();
        human[7] = base / 9f64.exp().sqrt();
        let p = pair(object, human);
        let t = log_ratio(&p).unwrap();
        assert_relative_eq!(t.ratios[7].unwrap(), 9.0, epsilon = 1e-12);
        let ratios: Vec<f64> = t.ratios.iter().map(|r| r.unwrap()).collect();
        let (mu, sigma) = mean_and_std(&ratios);
        assert_relative_eq!(mu, 1.125, epsilon = 1e-12);
        assert_relative_eq!(sigma, 2.976_470_225_334_904, epsilon = 1e-9);
        let s = filter_words(&t, &p, &vocab(n), FilterConfig::default());
        assert_eq!(s.words.keys().collect::<Vec<_>>(), vec!["w7"]);
    }

    #[test]
    fn tmr_cases() {
        let a = set("a", &["x", "y", "z"]);
        assert_eq!(token_match_rate(&a, &a), Some(1.0));
        assert_eq!(token_match_rate(&a, &set("b", &["p", "q"])), Some(0.0));
        let t = token_match_rate(&set("a", &["a", "b", "c"]), &set("b", &["b", "c", "d"])).unwrap();
        assert_relative_eq!(t, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(token_match_rate(&a, &set("e", &[])), None);
        assert_eq!(token_match_rate(&a, &set("s", &["x"])), Some(1.0));
    }

    #[test]
    fn tmr_matrix_handles_empty_sets() {
        let sets = vec![set("a", &["x", "y"]), set("b", &["y"]), set("c", &[])];
        let m = TmrMatrix::from_sets(&sets);
        assert_eq!(m.tmr[0][0], Some(1.0));
        assert_eq!(m.tmr[2][2], None);
        assert_eq!(m.missing_pairs(), vec![(0, 2), (1, 2)]);
        let d = m.distances();
        assert_eq!(d[0][1], 0.0);
        assert_eq!(d[0][2], 1.0);
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "animal,a,b,c\na,1,1,\nb,1,1,\nc,,,\n"
        );
    }

    #[test]
    fn two_leaf_tree() {
        let d = upgma(&[vec![0.0, 0.6], vec![0.6, 0.0]]).unwrap();
        assert_eq!(d.merges, vec![Merge { a: 0, b: 1, height: 0.6, size: 2 }]);
        assert!(matches!(upgma(&[vec![0.0]]), Err(ShiftError::TooFewLeaves(1))));
    }

    #[test]
    fn three_leaf_hand_upgma() {
        let d = upgma(&[
            vec![0.0, 0.2, 0.8],
            vec![0.2, 0.0, 0.6],
            vec![0.8, 0.6, 0.0],
        ])
        .unwrap();
        assert_eq!((d.merges[0].a, d.merges[0].b), (0, 1));
        assert_relative_eq!(d.merges[0].height, 0.2);
        assert_eq!((d.merges[1].a, d.merges[1].b), (2, 3));
        assert_relative_eq!(d.merges[1].height, 0.7, epsilon = 1e-15);
        assert_eq!(d.merges[1].size, 3);
        assert_eq!(d.leaf_order(), vec![2, 0, 1]);
    }

    #[test]
    fn ties_take_the_smallest_pair() {
        let d = upgma(&[
            vec![0.0, 0.5, 0.5, 0.5],
            vec![0.5, 0.0, 0.5, 0.5],
            vec![0.5, 0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.5, 0.0],
        ])
        .unwrap();
        let pairs: Vec<_> = d.merges.iter().map(|m| (m.a, m.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (2, 3), (4, 5)]);
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(upgma(&[vec![0.0, 0.1], vec![0.2, 0.0]]).is_err());
        assert!(upgma(&[vec![0.0, f64::NAN], vec![f64::NAN, 0.0]]).is_err());
        assert!(upgma(&[vec![0.0, 0.1, 0.2], vec![0.1, 0.0]]).is_err());
    }

    #[test]
    fn cuts_and_colour_clusters() {
        // {0,1} close, {2,3} close, far apart.
        let d = upgma(&[
            vec![0.0, 0.1, 0.9, 0.9],
            vec![0.1, 0.0, 0.9, 0.9],
            vec![0.9, 0.9, 0.0, 0.2],
            vec![0.9, 0.9, 0.2, 0.0],
        ])
        .unwrap();
        assert_eq!(d.cut(1), vec![0, 0, 0, 0]);
        assert_eq!(d.cut(2), vec![0, 0, 1, 1]);
        assert_eq!(d.cut(4).iter().collect::<std::collections::BTreeSet<_>>().len(), 4);
        assert_relative_eq!(d.color_threshold(), 0.63, epsilon = 1e-12);
        assert_eq!(d.clusters_below(d.color_threshold()), vec![0, 0, 1, 1]);
        assert!(d.to_csv().starts_with("step,cluster_a,cluster_b,height,size\n0,0,1,0.1,2\n"));
    }

    #[test]
    fn top_k_by_direction() {
        let s = ShiftedWordSet {
            animal: "chicken".into(),
            words: [
                ("slaughtered", 3.0),
                ("ripe", 2.0),
                ("stamped", 2.5),
                ("clumsy", -4.0),
                ("mute", -1.0),
                ("flat", 0.0),
            ]
            .iter()
            .map(|(w, r)| (w.to_string(), *r))
            .collect(),
        };
        let obj: Vec<String> = top_k_shifted(&s, Direction::Object, 2)
            .into_iter()
            .map(|(w, _)| w)
            .collect();
        assert_eq!(obj, vec!["slaughtered", "stamped"]);
        let hum = top_k_shifted(&s, Direction::Human, 5);
        assert_eq!(hum.len(), 2);
        assert_eq!(hum[0].0, "clumsy");
        assert!(top_k_shifted(&ShiftedWordSet::default(), Direction::Object, 5).is_empty());
    }

    #[test]
    fn json_shape() {
        let s = ShiftedWordSet {
            animal: "pig".into(),
            words: [("a".to_string(), -1.0), ("b".to_string(), 2.0)].into(),
        };
        let v = s.to_json_value();
        assert_eq!(
            v,
            serde_json::json!({"animal": "pig", "words": [
                {"word": "b", "ratio": 2.0}, {"word": "a", "ratio": -1.0}
            ]})
        );
        assert_eq!(ShiftedWordSet::from_json_value(v).unwrap(), s);
    }

    fn word_sets() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (
            prop::collection::vec(0u8..12, 1..10),
            prop::collection::vec(0u8..12, 1..10),
        )
    }

    fn to_set(name: &str, ids: &[u8]) -> ShiftedWordSet {
        ShiftedWordSet {
            animal: name.into(),
            words: ids.iter().map(|i| (format!("t{i}"), 1.0)).collect(),
        }
    }

    fn distributions(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        let normalized = move || {
            prop::collection::vec(0.0f64..1.0, n).prop_filter_map("non-zero", |v| {
                let s: f64 = v.iter().sum();
                (s > 0.0).then(|| v.iter().map(|x| x / s).collect::<Vec<_>>())
            })
        };
        (normalized(), normalized())
    }

    proptest! {
        #[test]
        fn tmr_symmetric_and_bounded((a, b) in word_sets()) {
            let (sa, sb) = (to_set("a", &a), to_set("b", &b));
            let ab = token_match_rate(&sa, &sb).unwrap();
            let ba = token_match_rate(&sb, &sa).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            let union: Vec<u8> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(token_match_rate(&sa, &to_set("u", &union)), Some(1.0));
        }

        #[test]
        fn disabled_filters_keep_every_defined_ratio((o, h) in distributions(10)) {
            let p = pair(o, h);
            let t = log_ratio(&p).unwrap();
            let cfg = FilterConfig { vocab_filter: false, z_threshold: None };
            let s = filter_words(&t, &p, &vocab(10), cfg);
            prop_assert_eq!(s.len(), t.ratios.iter().filter(|r| r.is_some()).count());
            // Each filter only removes words.
            let full = filter_words(&t, &p, &vocab(10), FilterConfig::default());
            prop_assert!(full.words.keys().all(|w| s.contains(w)));
            let zero = filter_words(&t, &p, &vocab(10), FilterConfig { vocab_filter: false, z_threshold: Some(0.0) });
            let sd = mean_and_std(&s.words.values().copied().collect::<Vec<_>>()).1;
            if sd > 0.0 {
                prop_assert_eq!(zero.len(), s.len());
            }
        }

        #[test]
        fn swapping_classes_negates_ratios((o, h) in distributions(12)) {
            let p = pair(o, h);
            let s = shifted_words(&p, &vocab(12), FilterConfig::default()).unwrap();
            let q = shifted_words(&p.swapped(), &vocab(12), FilterConfig::default()).unwrap();
            prop_assert_eq!(s.len(), q.len());
            for (w, r) in &s.words {
                let back = q.words[w];
                prop_assert!((back + r).abs() < 1e-12);
            }
            let obj: Vec<&str> = s.in_direction(Direction::Object).map(|x| x.0).collect();
            let hum: Vec<&str> = q.in_direction(Direction::Human).map(|x| x.0).collect();
            prop_assert_eq!(obj, hum);
        }

        #[test]
        fn merge_heights_never_decrease(
            n in 2usize..9,
            raw in prop::collection::vec(0.0f64..1.0, 36),
        ) {
            let mut d = vec![vec![0.0; n]; n];
            let mut k = 0;
            for i in 0..n {
                for j in i + 1..n {
                    d[i][j] = raw[k];
                    d[j][i] = raw[k];
                    k += 1;
                }
            }
            let tree = upgma(&d).unwrap();
            prop_assert_eq!(tree.merges.len(), n - 1);
            for w in tree.merges.windows(2) {
                prop_assert!(w[1].height >= w[0].height - 1e-12);
            }
            let mut order = tree.leaf_order();
            order.sort();
            prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
        }
    }
}
