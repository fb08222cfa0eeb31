//! Audit stages.
//!
//! Shared outputs live under `<outdir>/shared/<stage>/`, per-model outputs
//! under `<outdir>/<model>/<stage>/` and combined tables under
//! `<outdir>/report/`. Model outputs are cached next to the stage outputs in
//! `cache/` and reused when the runner is in cached mode.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mlm_audit_core::bias::{
    bias_from_probabilities, correlate, pronoun_probabilities, write_bias_csv, BiasError, BiasScore,
    CorrelationReport, PronounProbabilities,
};
use mlm_audit_core::corpus::{
    collect_text_files, extract_path, mask_pronoun, sample_for_validation, ExtractedSentence,
    ExtractionBackend, ExtractionStats, Extractor, FrequencyTable, Reservoir, HUMAN_TERM,
};
use mlm_audit_core::gateway::{pseudo_perplexity_from_scores, GatewayError, ModelHandle, SentenceScore};
use mlm_audit_core::lexicon::{
    build_lexicon_from_counts, read_candidates, read_categories, AnimalLexicon, Category, FrequencyCounter,
};
use mlm_audit_core::sentiment::{profile, write_profiles_csv, SentimentLexicon, SentimentProfile};
use mlm_audit_core::shifts::{
    display_word, shifted_words, top_k_shifted, upgma, Dendrogram, Direction, ShiftedWordSet, TmrMatrix,
};
use mlm_audit_core::templates::{mean_vector, MeanDistributionPair, SentenceClass, TemplateFamily};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::AuditConfig;
use crate::figures;
use crate::{Error, Result};

pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const SENTENCES_FILE: &str = "sentences.jsonl";
pub const CELLS_FILE: &str = "frequency_cells.csv";
pub const PROBE_CORPUS: &str = "probe";

/// Directory name for a model id.
pub fn sanitize(model: &str) -> String {
    model.replace(['/', ':', '\\'], "_")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Stage(e.to_string());
    w.write_record(header).map_err(io)?;
    fill(&mut w).map_err(io)?;
    w.into_inner().map_err(|e| Error::Stage(e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// `key -> values` store for model outputs, one JSON object per line.
#[derive(Debug, Default)]
struct InferenceCache {
    entries: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    values: Vec<CacheValue>,
}

/// JSON has no infinities, so non-finite values are kept as `"-inf"` etc.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CacheValue {
    Finite(f64),
    Other(String),
}

impl From<f64> for CacheValue {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Self::Finite(v)
        } else {
            Self::Other(v.to_string())
        }
    }
}

impl CacheValue {
    fn value(&self) -> Result<f64> {
        match self {
            Self::Finite(v) => Ok(*v),
            Self::Other(s) => s.parse().map_err(|_| Error::Stage(format!("bad cached value `{s}`"))),
        }
    }
}

impl InferenceCache {
    fn load(path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if path.is_file() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line: CacheLine = serde_json::from_str(&line?)?;
                let values = line.values.iter().map(CacheValue::value).collect::<Result<_>>()?;
                entries.insert(line.key, values);
            }
        }
        Ok(Self { entries })
    }

    fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        for (key, values) in &self.entries {
            serde_json::to_writer(
                &mut w,
                &CacheLine {
                    key: key.clone(),
                    values: values.iter().map(|&v| v.into()).collect(),
                },
            )?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Template probe result for one name.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub pair: MeanDistributionPair,
    /// `(sentence, class, total probability)` for every template sentence.
    pub totals: Vec<(String, SentenceClass, f64)>,
}

#[derive(Debug, Clone)]
pub struct ShiftOutput {
    pub sets: Vec<ShiftedWordSet>,
    pub tree: Dendrogram,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BiasOutput {
    pub scores: Vec<BiasScore>,
    pub skipped: Vec<(String, usize, usize)>,
    pub correlation: Option<CorrelationReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpplRow {
    pub condition: &'static str,
    pub pppl: f64,
    pub n_sentences: usize,
    pub n_tokens: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageStatus {
    pub scope: String,
    pub stage: &'static str,
    pub status: &'static str,
    pub detail: String,
}

pub struct Runner {
    pub cfg: AuditConfig,
    /// Reuse cached model outputs instead of running inference.
    pub cached: bool,
    model_cache: Option<PathBuf>,
}

impl Runner {
    pub fn new(cfg: AuditConfig, cached: bool, model_cache: Option<PathBuf>) -> Self {
        Self {
            cfg,
            cached,
            model_cache,
        }
    }

    pub fn load_model(&self, id: &str) -> Result<ModelHandle> {
        Ok(mlm_audit_models::load_model_from(id, self.model_cache.as_deref())?)
    }

    pub fn shared_dir(&self, stage: &str) -> PathBuf {
        self.cfg.outdir.join("shared").join(stage)
    }

    pub fn model_dir(&self, model: &str, stage: &str) -> PathBuf {
        self.cfg.outdir.join(sanitize(model)).join(stage)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.cfg.outdir.join("report")
    }

    // ---- lexicon ----

    /// Lexicon used by the other stages: the configured file, else the one
    /// written by `lexicon build`, else the built-in reference list.
    pub fn lexicon(&self) -> Result<AnimalLexicon> {
        let threshold = self.cfg.lexicon.threshold;
        if let Some(path) = &self.cfg.lexicon.path {
            return Ok(AnimalLexicon::read_tsv(BufReader::new(File::open(path)?), threshold)?);
        }
        let built = self.shared_dir("lexicon").join(LEXICON_FILE);
        if built.is_file() {
            return Ok(AnimalLexicon::read_tsv(BufReader::new(File::open(built)?), threshold)?);
        }
        Ok(AnimalLexicon::wikipedia_reference())
    }

    pub fn lexicon_build(&self) -> Result<AnimalLexicon> {
        let lc = &self.cfg.lexicon;
        let lexicon = match (&lc.candidates, &lc.categories, &lc.frequency_corpus) {
            (Some(candidates), Some(categories), Some(corpus)) => {
                let candidates = read_candidates(BufReader::new(File::open(candidates)?))?;
                let categories = read_categories(BufReader::new(File::open(categories)?))?;
                let mut counter = FrequencyCounter::new(&candidates)?;
                for file in collect_text_files(corpus, ExtractionBackend::Heuristic)? {
                    for line in BufReader::new(File::open(&file)?).split(b'\n') {
                        counter.feed(&String::from_utf8_lossy(&line?));
                    }
                }
                build_lexicon_from_counts(&candidates, counter.counts(), lc.threshold, &categories)?
            }
            (None, None, None) => match &lc.path {
                Some(path) => AnimalLexicon::read_tsv(BufReader::new(File::open(path)?), lc.threshold)?,
                None => AnimalLexicon::wikipedia_reference(),
            },
            _ => {
                return Err(Error::Config(
                    "lexicon build needs candidates, categories and frequency_corpus together".into(),
                ))
            }
        };
        let dir = self.shared_dir("lexicon");
        let mut tsv = Vec::new();
        lexicon.write_tsv(&mut tsv)?;
        write_file(&dir.join(LEXICON_FILE), tsv)?;
        let counts = csv_bytes(&["category", "names"], |w| {
            for c in Category::ALL {
                let n = lexicon.entries().iter().filter(|e| e.category == c).count();
                w.write_record([c.as_str(), &n.to_string()])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("categories.csv"), counts)?;
        log::info!("lexicon: {} names", lexicon.len());
        Ok(lexicon)
    }

    // ---- templates ----

    fn family(&self) -> Result<TemplateFamily> {
        match &self.cfg.templates.family {
            Some(path) => Ok(TemplateFamily::from_json(File::open(path)?)?),
            None => Ok(TemplateFamily::default()),
        }
    }

    fn probe_one(&self, handle: &ModelHandle, family: &TemplateFamily, name: &str) -> Result<ProbeResult> {
        let sentences = family.generate(name, self.cfg.templates.article)?;
        let mut human = Vec::new();
        let mut object = Vec::new();
        let mut totals = Vec::new();
        for s in sentences {
            let dist = handle.mask_distribution(&s.text)?;
            totals.push((s.text, s.class, dist.total()));
            match s.class {
                SentenceClass::Human => human.push(dist.probs),
                SentenceClass::Object => object.push(dist.probs),
            }
        }
        let mean = |v: &[Vec<f64>]| mean_vector(v.iter().map(Vec::as_slice)).expect("validated family");
        Ok(ProbeResult {
            pair: MeanDistributionPair {
                animal: name.to_string(),
                human: mean(&human),
                object: mean(&object),
            },
            totals,
        })
    }

    /// Mean mask distributions over the template family for every name.
    pub fn probe_templates(&self, handle: &ModelHandle, lexicon: &AnimalLexicon) -> Result<Vec<ProbeResult>> {
        let model = handle.model_id();
        let dir = self.model_dir(model, "templates");
        let family = self.family()?;
        let vocab = handle.vocab();
        let floor = 1.0 / vocab.len() as f64;
        let mut results = Vec::new();
        for name in lexicon.names() {
            let cache_file = dir.join("cache").join(format!("{name}.bin"));
            let cached = if self.cached {
                read_probe_cache(&cache_file, &family, name, self.cfg.templates.article, vocab.len())?
            } else {
                None
            };
            let result = match cached {
                Some(r) => r,
                None => {
                    let r = self.probe_one(handle, &family, name)?;
                    write_probe_cache(&cache_file, &r)?;
                    r
                }
            };
            results.push(result);
        }

        let norm = csv_bytes(&["model", "animal", "class", "sentence", "total"], |w| {
            for r in &results {
                for (text, class, total) in &r.totals {
                    w.write_record([model, &r.pair.animal, class.as_str(), text, &total.to_string()])?;
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("normalization.csv"), norm)?;
        let means = csv_bytes(&["animal", "word", "p_object", "p_human"], |w| {
            for r in &results {
                for (i, token) in vocab.iter().enumerate() {
                    let (po, ph) = (r.pair.object[i], r.pair.human[i]);
                    if po >= floor || ph >= floor {
                        w.write_record([&r.pair.animal, token, &po.to_string(), &ph.to_string()])?;
                    }
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("mean_probabilities.csv"), means)?;
        Ok(results)
    }

    // ---- shifts ----

    pub fn analyze_shifts(
        &self,
        handle: &ModelHandle,
        lexicon: &AnimalLexicon,
        probes: &[ProbeResult],
    ) -> Result<ShiftOutput> {
        let model = handle.model_id();
        let dir = self.model_dir(model, "shifts");
        let filter = self.cfg.shifts.filter();
        let sets = probes
            .iter()
            .map(|p| shifted_words(&p.pair, handle.vocab(), filter))
            .collect::<std::result::Result<Vec<_>, _>>()?;

        let json: Vec<serde_json::Value> = sets.iter().map(ShiftedWordSet::to_json_value).collect();
        write_json(&dir.join("shifted_words.json"), &json)?;

        let k = self.cfg.shifts.top_k;
        let top = csv_bytes(&["model", "animal", "direction", "rank", "word", "log_ratio"], |w| {
            for set in &sets {
                for direction in Direction::BOTH {
                    for (rank, (word, ratio)) in top_k_shifted(set, direction, k).iter().enumerate() {
                        w.write_record([
                            model,
                            &set.animal,
                            direction.as_str(),
                            &(rank + 1).to_string(),
                            display_word(word),
                            &ratio.to_string(),
                        ])?;
                    }
                }
            }
            Ok(())
        })?;
        write_file(&dir.join("top_k.csv"), top)?;

        let tmr = TmrMatrix::from_sets(&sets);
        let mut tmr_csv = Vec::new();
        tmr.write_csv(&mut tmr_csv)?;
        write_file(&dir.join("tmr.csv"), tmr_csv)?;

        let tree = upgma(&tmr.distances())?;
        let labels = tree.cut(self.cfg.shifts.cluster_count(model));
        let order = tree.leaf_order();
        let categories: Vec<Option<Category>> = tmr
            .names
            .iter()
            .map(|n| lexicon.get(n).map(|e| e.category))
            .collect();
        let mut position = vec![0; order.len()];
        for (slot, &leaf) in order.iter().enumerate() {
            position[leaf] = slot;
        }
        let clusters = csv_bytes(&["model", "animal", "category", "cluster", "leaf_position"], |w| {
            for (i, name) in tmr.names.iter().enumerate() {
                let category = categories[i].map_or("", Category::as_str);
                w.write_record([model, name, category, &labels[i].to_string(), &position[i].to_string()])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("clusters.csv"), clusters)?;

        // Figures and their sidecar tables.
        let title = format!("{model}: shifted-word overlap (UPGMA)");
        write_file(
            &dir.join("dendrogram.svg"),
            figures::dendrogram_svg(&tree, &tmr.names, &categories, &self.cfg.figures, &title),
        )?;
        let mut dendro_csv = String::from("step,cluster_a,cluster_b,height,size,label_a,label_b\n");
        for (step, m) in tree.merges.iter().enumerate() {
            let label = |id: usize| tmr.names.get(id).cloned().unwrap_or_default();
            let _ = writeln!(
                dendro_csv,
                "{step},{},{},{},{},{},{}",
                m.a,
                m.b,
                m.height,
                m.size,
                label(m.a),
                label(m.b)
            );
        }
        write_file(&dir.join("dendrogram.csv"), dendro_csv)?;
        write_file(
            &dir.join("tmr_heatmap.svg"),
            figures::heatmap_svg(&tmr.tmr, &tmr.names, &order, &format!("{model}: token match rate")),
        )?;
        let ordered = TmrMatrix {
            names: order.iter().map(|&i| tmr.names[i].clone()).collect(),
            tmr: order
                .iter()
                .map(|&i| order.iter().map(|&j| tmr.tmr[i][j]).collect())
                .collect(),
        };
        let mut heat_csv = Vec::new();
        ordered.write_csv(&mut heat_csv)?;
        write_file(&dir.join("tmr_heatmap.csv"), heat_csv)?;

        Ok(ShiftOutput { sets, tree, labels })
    }

    // ---- sentiment ----

    pub fn sentiment_lexicon(&self) -> Result<SentimentLexicon> {
        match &self.cfg.sentiment.lexicon {
            Some(path) => Ok(SentimentLexicon::from_tsv(BufReader::new(File::open(path)?))?),
            None => Ok(SentimentLexicon::vader()),
        }
    }

    pub fn analyze_sentiment(&self, model: &str, shifts: &ShiftOutput) -> Result<Vec<SentimentProfile>> {
        let dir = self.model_dir(model, "sentiment");
        let lex = self.sentiment_lexicon()?;
        let profiles = profile(&lex, model, &shifts.sets, &shifts.labels)?;
        let mut table = Vec::new();
        write_profiles_csv(&profiles, &mut table)?;
        write_file(&dir.join("profiles.csv"), &table)?;
        write_file(
            &dir.join("sentiment_bars.svg"),
            figures::sentiment_bars_svg(&profiles, &format!("{model}: sentiment of shifted words")),
        )?;
        write_file(&dir.join("sentiment_bars.csv"), &table)?;
        Ok(profiles)
    }

    // ---- corpus ----

    pub fn sentences_path(&self) -> PathBuf {
        self.shared_dir("corpus").join(SENTENCES_FILE)
    }

    pub fn corpus_extract(&self, lexicon: &AnimalLexicon) -> Result<BTreeMap<String, ExtractionStats>> {
        let probe = self
            .cfg
            .corpus
            .probe
            .as_ref()
            .ok_or_else(|| Error::Config("corpus.probe is not configured".into()))?;
        let dir = self.shared_dir("corpus");
        let extractor = Extractor::new(lexicon.names(), self.cfg.corpus.backend);
        let mut table = FrequencyTable::new();
        let mut stats = BTreeMap::new();

        let mut out = create(&dir.join(SENTENCES_FILE))?;
        let mut write_err = None;
        let probe_stats = extract_path(&extractor, probe, |s| {
            table.record(PROBE_CORPUS, &s);
            if write_err.is_none() {
                if let Err(e) = writeln!(out, "{}", s.to_json_line()) {
                    write_err = Some(e);
                }
            }
        })?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        out.flush()?;
        drop(out);
        stats.insert(PROBE_CORPUS.to_string(), probe_stats);

        for (name, path) in &self.cfg.corpus.frequency {
            let s = extract_path(&extractor, path, |s| table.record(name, &s))?;
            stats.insert(name.clone(), s);
        }

        let mut cells = Vec::new();
        table.write_cells_csv(&mut cells)?;
        write_file(&dir.join(CELLS_FILE), cells)?;
        let mut marginals = Vec::new();
        table.write_marginals_csv(&mut marginals)?;
        write_file(&dir.join("frequency_marginals.csv"), marginals)?;

        let sample = sample_for_validation(
            read_sentences(&dir.join(SENTENCES_FILE))?.collect::<Result<Vec<_>>>()?,
            self.cfg.corpus.validation_per_pronoun,
            self.cfg.seed,
        );
        let mut lines = String::new();
        for s in &sample {
            lines.push_str(&s.to_json_line());
            lines.push('\n');
        }
        write_file(&dir.join("validation_sample.jsonl"), lines)?;
        write_json(&dir.join("stats.json"), &stats)?;
        Ok(stats)
    }

    fn require_sentences(&self) -> Result<PathBuf> {
        let path = self.sentences_path();
        if path.is_file() {
            Ok(path)
        } else {
            Err(Error::Stage(format!(
                "{} not found; run `corpus extract` first",
                path.display()
            )))
        }
    }

    /// Seeded sample of at most `max_per_class` sentences per name and class.
    fn bias_sample(&self) -> Result<BTreeMap<(String, SentenceClass), Vec<ExtractedSentence>>> {
        let cap = match self.cfg.bias.max_per_class {
            0 => usize::MAX,
            n => n,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut pools: BTreeMap<(String, SentenceClass), Reservoir<ExtractedSentence>> = BTreeMap::new();
        for s in read_sentences(&self.require_sentences()?)? {
            let s = s?;
            pools
                .entry((s.animal.clone(), s.pronoun.class()))
                .or_insert_with(|| Reservoir::new(cap))
                .offer(s, &mut rng);
        }
        Ok(pools.into_iter().map(|(k, r)| (k, r.into_vec())).collect())
    }

    pub fn corpus_bias(&self, handle: &ModelHandle, lexicon: &AnimalLexicon) -> Result<BiasOutput> {
        let model = handle.model_id();
        let dir = self.model_dir(model, "bias");
        let cache_path = dir.join("cache").join("probabilities.jsonl");
        let mut cache = if self.cached {
            InferenceCache::load(&cache_path)?
        } else {
            InferenceCache::default()
        };
        let sample = self.bias_sample()?;
        let mut too_long = 0usize;
        let mut score = |s: &ExtractedSentence| -> Result<Option<PronounProbabilities>> {
            let key = format!("{}\u{1f}{}", s.text, s.span.0);
            if let Some(v) = cache.entries.get(&key) {
                return Ok(Some(PronounProbabilities::from_array([v[0], v[1], v[2], v[3], v[4]])));
            }
            let masked = mask_pronoun(s, handle)?;
            match pronoun_probabilities(handle, &masked) {
                Ok(p) => {
                    cache.entries.insert(key, p.as_array().to_vec());
                    Ok(Some(p))
                }
                Err(GatewayError::TooLong { .. }) => {
                    too_long += 1;
                    Ok(None)
                }
                Err(e) => Err(e.into()),
            }
        };

        let mut names: Vec<&str> = lexicon.names().collect();
        if !names.contains(&HUMAN_TERM) {
            names.push(HUMAN_TERM);
        }
        let empty = Vec::new();
        let mut scores = Vec::new();
        let mut skipped = Vec::new();
        for name in names {
            let mut probs = |class| -> Result<Vec<PronounProbabilities>> {
                let mut out = Vec::new();
                for s in sample.get(&(name.to_string(), class)).unwrap_or(&empty) {
                    out.extend(score(s)?);
                }
                Ok(out)
            };
            let human = probs(SentenceClass::Human)?;
            let object = probs(SentenceClass::Object)?;
            match bias_from_probabilities(name, &human, &object) {
                Ok(b) => scores.push(b),
                Err(BiasError::EmptyClass { n_human, n_object, .. }) => {
                    skipped.push((name.to_string(), n_human, n_object))
                }
                Err(e) => return Err(e.into()),
            }
        }
        if too_long > 0 {
            log::warn!("{model}: {too_long} sentences exceed the model length limit and were skipped");
        }
        cache.save(&cache_path)?;

        let mut table = Vec::new();
        write_bias_csv(model, &scores, &mut table)?;
        write_file(&dir.join("bias.csv"), table)?;
        let skipped_csv = csv_bytes(&["model", "animal", "n_human", "n_object"], |w| {
            for (name, h, o) in &skipped {
                w.write_record([model, name, &h.to_string(), &o.to_string()])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("skipped.csv"), skipped_csv)?;

        let mut sorted: Vec<(String, f64, Option<Category>)> = scores
            .iter()
            .map(|s| (s.animal.clone(), s.bias, lexicon.get(&s.animal).map(|e| e.category)))
            .collect();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        write_file(
            &dir.join("bias_sorted.svg"),
            figures::bias_bars_svg(&sorted, &self.cfg.figures, &format!("{model}: corpus bias")),
        )?;
        let sidecar = csv_bytes(&["animal", "category", "bias"], |w| {
            for (name, bias, cat) in &sorted {
                w.write_record([name.as_str(), cat.map_or("", Category::as_str), &bias.to_string()])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("bias_sorted.csv"), sidecar)?;

        let cells = self.shared_dir("corpus").join(CELLS_FILE);
        let correlation = if cells.is_file() {
            let table = FrequencyTable::read_cells_csv(File::open(&cells)?)?;
            let corpora: Vec<&str> = if self.cfg.corpus.frequency.is_empty() {
                table.corpora()
            } else {
                self.cfg.corpus.frequency.keys().map(String::as_str).collect()
            };
            let animals: Vec<BiasScore> = scores.iter().filter(|s| s.animal != HUMAN_TERM).cloned().collect();
            let report = correlate(model, &animals, &table, &corpora);
            write_json(&dir.join("correlation.json"), &report)?;
            Some(report)
        } else {
            None
        };
        Ok(BiasOutput {
            scores,
            skipped,
            correlation,
        })
    }

    // ---- pseudo-perplexity ----

    /// Seeded sentence sample and its word-shuffled counterpart.
    pub fn pppl_sentences(&self) -> Result<(Vec<String>, Vec<String>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut pool = Reservoir::new(self.cfg.pppl.sample_size);
        for s in read_sentences(&self.require_sentences()?)? {
            pool.offer(s?.text, &mut rng);
        }
        let natural = pool.into_vec();
        let shuffled = natural
            .iter()
            .map(|text| {
                let mut words: Vec<&str> = text.split_whitespace().collect();
                words.shuffle(&mut rng);
                words.join(" ")
            })
            .collect();
        Ok((natural, shuffled))
    }

    pub fn score_pppl(&self, handle: &ModelHandle) -> Result<Vec<PpplRow>> {
        let model = handle.model_id();
        let dir = self.model_dir(model, "pppl");
        let cache_path = dir.join("cache").join("pll.jsonl");
        let mut cache = if self.cached {
            InferenceCache::load(&cache_path)?
        } else {
            InferenceCache::default()
        };
        let (natural, shuffled) = self.pppl_sentences()?;
        let mut score = |text: &str| -> Result<Option<SentenceScore>> {
            if let Some(v) = cache.entries.get(text) {
                return Ok(Some(SentenceScore {
                    pll: v[0],
                    token_count: v[1] as usize,
                }));
            }
            match handle.pseudo_log_likelihood(text) {
                Ok(s) => {
                    cache.entries.insert(text.to_string(), vec![s.pll, s.token_count as f64]);
                    Ok(Some(s))
                }
                Err(GatewayError::TooLong { .. } | GatewayError::EmptySentence) => Ok(None),
                Err(e) => Err(e.into()),
            }
        };
        // A pair is kept only when both versions can be scored.
        let mut nat = Vec::new();
        let mut shuf = Vec::new();
        for (a, b) in natural.iter().zip(&shuffled) {
            if let (Some(x), Some(y)) = (score(a)?, score(b)?) {
                nat.push(x);
                shuf.push(y);
            }
        }
        cache.save(&cache_path)?;
        let norm = self.cfg.pppl.normalization.into();
        let mut rows = Vec::new();
        for (condition, scores) in [("natural", &nat), ("shuffled", &shuf)] {
            let pppl = pseudo_perplexity_from_scores(scores, norm)
                .ok_or_else(|| Error::Stage(format!("{model}: no scorable sentences for pseudo-perplexity")))?;
            rows.push(PpplRow {
                condition,
                pppl,
                n_sentences: scores.len(),
                n_tokens: scores.iter().map(|s| s.token_count).sum(),
            });
        }
        write_file(&dir.join("pppl.csv"), pppl_csv(model, &rows)?)?;
        Ok(rows)
    }

    // ---- full run ----

    /// Every stage for every configured model. A failing model does not stop
    /// the others; the returned statuses say what failed.
    pub fn report_all(&self) -> Result<Vec<StageStatus>> {
        let mut statuses = Vec::new();
        let mut record = |scope: &str, stage: &'static str, outcome: std::result::Result<(), String>| {
            let (status, detail) = match outcome {
                Ok(()) => ("ok", String::new()),
                Err(e) if e.starts_with("skipped:") => ("skipped", e["skipped:".len()..].trim().to_string()),
                Err(e) => {
                    log::error!("{scope} {stage}: {e}");
                    ("failed", e)
                }
            };
            statuses.push(StageStatus {
                scope: scope.to_string(),
                stage,
                status,
                detail,
            });
            status == "ok"
        };

        let lexicon = match self.lexicon_build() {
            Ok(l) => {
                record("shared", "lexicon", Ok(()));
                l
            }
            Err(e) => {
                record("shared", "lexicon", Err(e.to_string()));
                drop(record);
                self.write_report(&statuses, &[], &[], &[], &[])?;
                return Ok(statuses);
            }
        };
        let corpus_ok = if self.cfg.corpus.probe.is_some() {
            let outcome = self.corpus_extract(&lexicon).map(|_| ()).map_err(|e| e.to_string());
            record("shared", "corpus", outcome)
        } else {
            record("shared", "corpus", Err("skipped: corpus.probe is not configured".into()));
            false
        };

        let mut bias_rows = Vec::new();
        let mut pppl_rows = Vec::new();
        let mut profiles = Vec::new();
        let mut correlations = Vec::new();
        for model in &self.cfg.models {
            log::info!("model {model}");
            let handle = match self.load_model(model) {
                Ok(h) => h,
                Err(e) => {
                    record(model, "load", Err(e.to_string()));
                    continue;
                }
            };
            record(model, "load", Ok(()));
            let shifts = self
                .probe_templates(&handle, &lexicon)
                .map_err(|e| e.to_string())
                .and_then(|probes| {
                    self.analyze_shifts(&handle, &lexicon, &probes)
                        .map_err(|e| format!("shifts: {e}"))
                });
            match shifts {
                Ok(shifts) => {
                    record(model, "templates+shifts", Ok(()));
                    match self.analyze_sentiment(model, &shifts) {
                        Ok(p) => {
                            record(model, "sentiment", Ok(()));
                            profiles.extend(p);
                        }
                        Err(e) => {
                            record(model, "sentiment", Err(e.to_string()));
                        }
                    }
                }
                Err(e) => {
                    record(model, "templates+shifts", Err(e));
                    record(model, "sentiment", Err("skipped: needs shifts".into()));
                }
            }
            if corpus_ok {
                match self.corpus_bias(&handle, &lexicon) {
                    Ok(out) => {
                        record(model, "bias", Ok(()));
                        bias_rows.push((model.clone(), out.scores));
                        correlations.extend(out.correlation);
                    }
                    Err(e) => {
                        record(model, "bias", Err(e.to_string()));
                    }
                }
                match self.score_pppl(&handle) {
                    Ok(rows) => {
                        record(model, "pppl", Ok(()));
                        pppl_rows.push((model.clone(), rows));
                    }
                    Err(e) => {
                        record(model, "pppl", Err(e.to_string()));
                    }
                }
            } else {
                record(model, "bias", Err("skipped: no corpus".into()));
                record(model, "pppl", Err("skipped: no corpus".into()));
            }
        }
        drop(record);
        self.write_report(&statuses, &bias_rows, &pppl_rows, &profiles, &correlations)?;
        Ok(statuses)
    }

    fn write_report(
        &self,
        statuses: &[StageStatus],
        bias_rows: &[(String, Vec<BiasScore>)],
        pppl_rows: &[(String, Vec<PpplRow>)],
        profiles: &[SentimentProfile],
        correlations: &[CorrelationReport],
    ) -> Result<()> {
        let dir = self.report_dir();
        let status = csv_bytes(&["scope", "stage", "status", "detail"], |w| {
            for s in statuses {
                w.write_record([&s.scope, s.stage, s.status, &s.detail])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("status.csv"), status)?;

        let mut bias = Vec::new();
        writeln!(bias, "model,animal,bias,n_human,n_object")?;
        for (model, scores) in bias_rows {
            let mut one = Vec::new();
            write_bias_csv(model, scores, &mut one)?;
            bias.extend(one.splitn(2, |&b| b == b'\n').nth(1).unwrap_or_default());
        }
        write_file(&dir.join("bias.csv"), bias)?;

        let mut pppl = String::from("model,condition,pppl,n_sentences,n_tokens\n");
        for (model, rows) in pppl_rows {
            for r in rows {
                let _ = writeln!(pppl, "{model},{},{},{},{}", r.condition, r.pppl, r.n_sentences, r.n_tokens);
            }
        }
        write_file(&dir.join("pppl.csv"), pppl)?;

        let mut sentiment = Vec::new();
        write_profiles_csv(profiles, &mut sentiment)?;
        write_file(&dir.join("sentiment.csv"), sentiment)?;

        let summary = csv_bytes(&["model", "r", "n", "excluded", "error"], |w| {
            for c in correlations {
                w.write_record([
                    c.model.as_str(),
                    &c.r.map(|r| r.to_string()).unwrap_or_default(),
                    &c.n.to_string(),
                    &c.excluded.len().to_string(),
                    c.error.as_deref().unwrap_or(""),
                ])?;
            }
            Ok(())
        })?;
        write_file(&dir.join("correlation.csv"), summary)?;
        write_json(&dir.join("correlation.json"), &correlations)?;
        Ok(())
    }
}

fn pppl_csv(model: &str, rows: &[PpplRow]) -> Result<String> {
    let mut out = String::from("model,condition,pppl,n_sentences,n_tokens\n");
    for r in rows {
        let _ = writeln!(out, "{model},{},{},{},{}", r.condition, r.pppl, r.n_sentences, r.n_tokens);
    }
    Ok(out)
}

/// Stream an `ExtractedSentence` JSONL file.
pub fn read_sentences(path: &Path) -> Result<impl Iterator<Item = Result<ExtractedSentence>>> {
    let reader = BufReader::new(File::open(path)?);
    Ok(reader.lines().filter_map(|line| match line {
        Ok(l) if l.trim().is_empty() => None,
        Ok(l) => Some(serde_json::from_str(&l).map_err(Error::from)),
        Err(e) => Some(Err(e.into())),
    }))
}

// Probe cache layout, little endian: vocab size (u64), sentence count (u64),
// the per-sentence totals, the human mean, the object mean.

fn write_probe_cache(path: &Path, r: &ProbeResult) -> Result<()> {
    let v = r.pair.human.len();
    let mut bytes = Vec::with_capacity(16 + 8 * (r.totals.len() + 2 * v));
    bytes.extend((v as u64).to_le_bytes());
    bytes.extend((r.totals.len() as u64).to_le_bytes());
    for x in r
        .totals
        .iter()
        .map(|t| t.2)
        .chain(r.pair.human.iter().copied())
        .chain(r.pair.object.iter().copied())
    {
        bytes.extend(x.to_le_bytes());
    }
    write_file(path, bytes)
}

fn read_probe_cache(
    path: &Path,
    family: &TemplateFamily,
    name: &str,
    article: mlm_audit_core::templates::ArticleMode,
    vocab_size: usize,
) -> Result<Option<ProbeResult>> {
    let Ok(bytes) = std::fs::read(path) else {
        return Ok(None);
    };
    let sentences = family.generate(name, article)?;
    let n = sentences.len();
    let expected = 16 + 8 * (n + 2 * vocab_size);
    let header = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes")) as usize;
    if bytes.len() != expected || header(0) != vocab_size || header(8) != n {
        log::warn!("ignoring stale cache {}", path.display());
        return Ok(None);
    }
    let floats: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let totals = sentences
        .into_iter()
        .zip(&floats[..n])
        .map(|(s, &t)| (s.text, s.class, t))
        .collect();
    Ok(Some(ProbeResult {
        pair: MeanDistributionPair {
            animal: name.to_string(),
            human: floats[n..n + vocab_size].to_vec(),
            object: floats[n + vocab_size..].to_vec(),
        },
        totals,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inference_cache_round_trips_non_finite_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut cache = InferenceCache::default();
        let values = vec![-0.1 - 0.2, f64::NEG_INFINITY, f64::INFINITY, 7.0];
        cache.entries.insert("a \"b\"".into(), values.clone());
        cache.save(&path).unwrap();
        let back = InferenceCache::load(&path).unwrap();
        assert_eq!(back.entries["a \"b\""], values);
        let nan = InferenceCache {
            entries: BTreeMap::from([("n".to_string(), vec![f64::NAN])]),
        };
        nan.save(&path).unwrap();
        assert!(InferenceCache::load(&path).unwrap().entries["n"][0].is_nan());
    }
}
