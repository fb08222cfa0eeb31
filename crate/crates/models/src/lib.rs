//! Candle-backed fill-mask models for the audit toolkit.
//!
//! [`load_model`] resolves an identifier to a [`ModelHandle`]:
//!
//! * `synthetic:<seed>` gives the built-in pseudo-random model;
//! * an existing directory is loaded directly;
//! * anything else is looked up in the directory named by
//!   [`MODEL_CACHE_ENV`], either as `<dir>/<id>` or in the Hugging Face hub
//!   cache layout `<dir>/models--<org>--<name>/snapshots/<rev>`.
//!
//! A model directory needs `config.json`, `tokenizer.json` and
//! `model.safetensors`.

mod encoder;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Device;
use mlm_audit_core::gateway::{
    Encoding, GatewayError, MaskedInput, MaskedLanguageModel, ModelHandle, SyntheticModel,
};
use thiserror::Error;
use tokenizers::Tokenizer;

pub use encoder::{Architecture, Encoder, EncoderConfig};

/// Environment variable naming the local model cache directory.
pub const MODEL_CACHE_ENV: &str = "MLM_AUDIT_MODEL_DIR";

/// Sequences per forward pass.
const BATCH: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model `{0}` not found (set {MODEL_CACHE_ENV} or pass a model directory)")]
    NotFound(String),
    #[error("{path}: {message}")]
    Files { path: PathBuf, message: String },
    #[error("bad config: {0}")]
    Config(String),
    #[error("checkpoint lacks tensor `{0}`")]
    MissingTensor(String),
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error(transparent)]
    Candle(#[from] candle_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

const MASK_CANDIDATES: &[&str] = &["[MASK]", "<mask>"];

/// A checkpoint plus its tokenizer.
pub struct CandleModel {
    encoder: Encoder,
    tokenizer: Tokenizer,
    vocab: Vec<String>,
    mask_token: String,
}

impl CandleModel {
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let file = |name: &str| -> Result<PathBuf> {
            let p = dir.join(name);
            if p.is_file() {
                Ok(p)
            } else {
                Err(ModelError::Files {
                    path: dir.to_path_buf(),
                    message: format!("missing {name}"),
                })
            }
        };
        let cfg = EncoderConfig::from_json(&std::fs::read_to_string(file("config.json")?)?)?;
        let mut tokenizer =
            Tokenizer::from_file(file("tokenizer.json")?).map_err(|e| ModelError::Tokenizer(e.to_string()))?;
        tokenizer
            .with_truncation(None)
            .map_err(|e| ModelError::Tokenizer(e.to_string()))?;
        tokenizer.with_padding(None);
        let device = Device::Cpu;
        let tensors = candle_core::safetensors::load(file("model.safetensors")?, &device)?;
        let encoder = Encoder::load(cfg, tensors, device)?;

        let by_id: BTreeMap<u32, String> = tokenizer
            .get_vocab(true)
            .into_iter()
            .map(|(t, id)| (id, t))
            .collect();
        let vocab_size = encoder.config().vocab_size;
        if let Some((&max_id, _)) = by_id.iter().next_back() {
            if max_id as usize >= vocab_size {
                return Err(ModelError::Config(format!(
                    "tokenizer id {max_id} is outside the model vocabulary of {vocab_size}"
                )));
            }
        }
        // Ids the tokenizer never produces still get a unique placeholder.
        let vocab: Vec<String> = (0..vocab_size as u32)
            .map(|id| by_id.get(&id).cloned().unwrap_or_else(|| format!("<unused:{id}>")))
            .collect();
        let mask_token = MASK_CANDIDATES
            .iter()
            .find(|m| tokenizer.token_to_id(m).is_some())
            .ok_or_else(|| GatewayError::MissingMaskToken(dir.display().to_string()))?
            .to_string();
        Ok(Self {
            encoder,
            tokenizer,
            vocab,
            mask_token,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.encoder.config().architecture
    }
}

impl MaskedLanguageModel for CandleModel {
    fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn mask_token(&self) -> &str {
        &self.mask_token
    }

    fn max_sequence_length(&self) -> usize {
        self.encoder.config().max_sequence_length()
    }

    fn encode(&self, text: &str) -> mlm_audit_core::gateway::Result<Encoding> {
        let enc = self
            .tokenizer
            .encode(text, true)
            .map_err(|e| GatewayError::Backend(e.to_string()))?;
        Ok(Encoding {
            ids: enc.get_ids().to_vec(),
            offsets: enc.get_offsets().to_vec(),
            special: enc.get_special_tokens_mask().iter().map(|&m| m == 1).collect(),
        })
    }

    fn predict(&self, inputs: &[MaskedInput]) -> mlm_audit_core::gateway::Result<Vec<Vec<f64>>> {
        // Group by length so that no padding is needed.
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, input) in inputs.iter().enumerate() {
            by_len.entry(input.ids.len()).or_default().push(i);
        }
        let mut out: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
        for indices in by_len.values() {
            for chunk in indices.chunks(BATCH) {
                let batch: Vec<Vec<u32>> = chunk.iter().map(|&i| inputs[i].ids.clone()).collect();
                let positions: Vec<usize> = chunk.iter().map(|&i| inputs[i].position).collect();
                let probs = self
                    .encoder
                    .probabilities_at(&batch, &positions)
                    .map_err(|e| GatewayError::Backend(e.to_string()))?;
                for (&i, p) in chunk.iter().zip(probs) {
                    out[i] = Some(p);
                }
            }
        }
        Ok(out.into_iter().map(|p| p.expect("every input scored")).collect())
    }
}

fn is_model_dir(p: &Path) -> bool {
    p.join("config.json").is_file()
}

/// Directory holding the files for `id`, if any.
pub fn resolve_model_dir(id: &str, cache: Option<&Path>) -> Option<PathBuf> {
    let direct = Path::new(id);
    if is_model_dir(direct) {
        return Some(direct.to_path_buf());
    }
    let cache = cache?;
    let flat = id.replace('/', "--");
    for candidate in [cache.join(id), cache.join(&flat)] {
        if is_model_dir(&candidate) {
            return Some(candidate);
        }
    }
    let snapshots = cache.join(format!("models--{flat}")).join("snapshots");
    let mut revs: Vec<PathBuf> = std::fs::read_dir(snapshots)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_model_dir(p))
        .collect();
    revs.sort();
    revs.pop()
}

fn cache_from_env() -> Option<PathBuf> {
    std::env::var_os(MODEL_CACHE_ENV).map(PathBuf::from)
}

/// Load a model by identifier; see the crate docs for the lookup order.
pub fn load_model(id: &str) -> Result<ModelHandle> {
    load_model_from(id, cache_from_env().as_deref())
}

pub fn load_model_from(id: &str, cache: Option<&Path>) -> Result<ModelHandle> {
    if let Some(seed) = id.strip_prefix("synthetic:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| ModelError::Config(format!("bad synthetic seed in `{id}`")))?;
        return Ok(ModelHandle::new(id, Arc::new(SyntheticModel::new(seed)))?);
    }
    let dir = resolve_model_dir(id, cache).ok_or_else(|| ModelError::NotFound(id.to_string()))?;
    log::info!("loading {id} from {}", dir.display());
    let model = CandleModel::from_dir(&dir)?;
    Ok(ModelHandle::new(id, Arc::new(model))?)
}

/// Handles loaded so far, keyed by identifier.
#[derive(Default)]
pub struct ModelRegistry {
    cache: Option<PathBuf>,
    loaded: HashMap<String, ModelHandle>,
}

impl ModelRegistry {
    pub fn new(cache: Option<PathBuf>) -> Self {
        Self {
            cache,
            loaded: HashMap::new(),
        }
    }

    pub fn from_env() -> Self {
        Self::new(cache_from_env())
    }

    pub fn get(&mut self, id: &str) -> Result<ModelHandle> {
        if let Some(h) = self.loaded.get(id) {
            return Ok(h.clone());
        }
        let h = load_model_from(id, self.cache.as_deref())?;
        self.loaded.insert(id.to_string(), h.clone());
        Ok(h)
    }
}
