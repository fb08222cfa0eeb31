//! Audit configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mlm_audit_core::gateway::PerplexityNormalization;
use mlm_audit_core::lexicon::DEFAULT_THRESHOLD;
use mlm_audit_core::shifts::{FilterConfig, DEFAULT_Z_THRESHOLD};
use mlm_audit_core::templates::ArticleMode;
use mlm_audit_core::corpus::ExtractionBackend;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MODELS: &[&str] = &[
    "bert-large-cased",
    "roberta-large",
    "distilbert-base-cased",
    "albert-large-v2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub models: Vec<String>,
    pub outdir: PathBuf,
    pub seed: u64,
    pub lexicon: LexiconConfig,
    pub templates: TemplateConfig,
    pub shifts: ShiftConfig,
    pub sentiment: SentimentConfig,
    pub corpus: CorpusConfig,
    pub bias: BiasConfig,
    pub pppl: PpplConfig,
    pub figures: FigureConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            models: DEFAULT_MODELS.iter().map(|s| s.to_string()).collect(),
            outdir: PathBuf::from("audit-out"),
            seed: 20_220_512,
            lexicon: LexiconConfig::default(),
            templates: TemplateConfig::default(),
            shifts: ShiftConfig::default(),
            sentiment: SentimentConfig::default(),
            corpus: CorpusConfig::default(),
            bias: BiasConfig::default(),
            pppl: PpplConfig::default(),
            figures: FigureConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexiconConfig {
    /// Ready lexicon TSV (`name<TAB>category<TAB>frequency`); the built-in
    /// reference list when absent.
    pub path: Option<PathBuf>,
    /// Candidate names, one per line, for `lexicon build`.
    pub candidates: Option<PathBuf>,
    /// `name<TAB>category` lines for `lexicon build`.
    pub categories: Option<PathBuf>,
    /// Text corpus (file or directory of .txt) counted by `lexicon build`.
    pub frequency_corpus: Option<PathBuf>,
    pub threshold: u64,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            path: None,
            candidates: None,
            categories: None,
            frequency_corpus: None,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateConfig {
    /// JSON template family; the built-in family when absent.
    pub family: Option<PathBuf>,
    pub article: ArticleMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    pub vocab_filter: bool,
    /// `|z|` cut-off; a negative value disables the z filter.
    pub z_threshold: f64,
    pub top_k: usize,
    /// Flat clusters used for sentiment groups, by model id.
    pub clusters: BTreeMap<String, usize>,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            vocab_filter: true,
            z_threshold: DEFAULT_Z_THRESHOLD,
            top_k: 5,
            clusters: BTreeMap::new(),
        }
    }
}

impl ShiftConfig {
    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            vocab_filter: self.vocab_filter,
            z_threshold: (self.z_threshold >= 0.0).then_some(self.z_threshold),
        }
    }

    /// Configured count, else 5 for DistilBERT/ALBERT ids and 4 otherwise.
    pub fn cluster_count(&self, model: &str) -> usize {
        if let Some(&k) = self.clusters.get(model) {
            return k;
        }
        let lower = model.to_lowercase();
        if lower.contains("distilbert") || lower.contains("albert") {
            5
        } else {
            4
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SentimentConfig {
    /// Valence TSV; the bundled VADER lexicon when absent.
    pub lexicon: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Corpus the bias sentences are extracted from.
    pub probe: Option<PathBuf>,
    /// Corpora for the frequency side of the correlation, by name.
    pub frequency: BTreeMap<String, PathBuf>,
    pub backend: ExtractionBackend,
    pub validation_per_pronoun: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            probe: None,
            frequency: BTreeMap::new(),
            backend: ExtractionBackend::Heuristic,
            validation_per_pronoun: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasConfig {
    /// Sentences sampled per name and class; 0 keeps all.
    pub max_per_class: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self { max_per_class: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpplConfig {
    pub sample_size: usize,
    pub normalization: Normalization,
}

impl Default for PpplConfig {
    fn default() -> Self {
        Self {
            sample_size: 1000,
            normalization: Normalization::Tokens,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Tokens,
    Sentences,
}

impl From<Normalization> for PerplexityNormalization {
    fn from(n: Normalization) -> Self {
        match n {
            Normalization::Tokens => PerplexityNormalization::Tokens,
            Normalization::Sentences => PerplexityNormalization::Sentences,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FigureConfig {
    pub farm_color: String,
    pub companion_color: String,
    pub other_color: String,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            farm_color: "#FACCFA".into(),
            companion_color: "#818232".into(),
            other_color: "#011959".into(),
        }
    }
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.outdir);
        for p in [
            &mut self.lexicon.path,
            &mut self.lexicon.candidates,
            &mut self.lexicon.categories,
            &mut self.lexicon.frequency_corpus,
            &mut self.templates.family,
            &mut self.sentiment.lexicon,
            &mut self.corpus.probe,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for p in self.corpus.frequency.values_mut() {
            fix(p);
        }
    }

    /// Every configured input path must exist.
    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        let mut check = |p: &Path| {
            if !p.exists() {
                missing.push(p.display().to_string());
            }
        };
        for p in [
            &self.lexicon.path,
            &self.lexicon.candidates,
            &self.lexicon.categories,
            &self.lexicon.frequency_corpus,
            &self.templates.family,
            &self.sentiment.lexicon,
            &self.corpus.probe,
        ]
        .into_iter()
        .flatten()
        {
            check(p);
        }
        for p in self.corpus.frequency.values() {
            check(p);
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("missing input paths: {}", missing.join(", "))))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = AuditConfig::from_toml("").unwrap();
        assert_eq!(cfg.models.len(), 4);
        assert_eq!(cfg.lexicon.threshold, 20_000);
        assert_eq!(cfg.shifts.z_threshold, 1.96);
        assert_eq!(cfg.pppl.sample_size, 1000);
        assert_eq!(cfg.shifts.cluster_count("bert-large-cased"), 4);
        assert_eq!(cfg.shifts.cluster_count("roberta-large"), 4);
        assert_eq!(cfg.shifts.cluster_count("distilbert-base-cased"), 5);
        assert_eq!(cfg.shifts.cluster_count("albert-large-v2"), 5);
    }

    #[test]
    fn sections_and_overrides() {
        let cfg = AuditConfig::from_toml(
            r#"
            models = ["synthetic:1"]
            seed = 7
            [shifts]
            z_threshold = -1
            clusters = { "synthetic:1" = 3 }
            [corpus]
            backend = "preparsed_ingest"
            frequency = { wiki = "w" }
            [pppl]
            normalization = "sentences"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.shifts.filter().z_threshold, None);
        assert_eq!(cfg.shifts.cluster_count("synthetic:1"), 3);
        assert_eq!(cfg.corpus.backend, ExtractionBackend::PreparsedIngest);
        assert_eq!(cfg.pppl.normalization, Normalization::Sentences);
        assert!(AuditConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.txt"), "x").unwrap();
        let path = dir.path().join("audit.toml");
        std::fs::write(&path, "outdir = \"out\"\n[corpus]\nprobe = \"c.txt\"\n").unwrap();
        let cfg = AuditConfig::load(&path).unwrap();
        assert_eq!(cfg.outdir, dir.path().join("out"));
        cfg.validate().unwrap();
        let mut bad = cfg.clone();
        bad.corpus.probe = Some(dir.path().join("nope"));
        assert!(bad.validate().is_err());
    }
}
