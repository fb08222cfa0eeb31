//! Post-LN transformer encoders with a masked-LM head.
//!
//! One implementation covers the BERT, RoBERTa, DistilBERT and ALBERT
//! checkpoint layouts; they differ only in tensor names, position ids,
//! activations and ALBERT's factorised, shared layers.

use std::collections::HashMap;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{LayerNorm, Linear};
use serde::Deserialize;

use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    Bert,
    Roberta,
    DistilBert,
    Albert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activation {
    GeluErf,
    GeluTanh,
    Relu,
}

impl Activation {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "gelu" => Ok(Activation::GeluErf),
            "gelu_new" | "gelu_pytorch_tanh" | "gelu_fast" => Ok(Activation::GeluTanh),
            "relu" => Ok(Activation::Relu),
            other => Err(ModelError::Config(format!("unsupported activation `{other}`"))),
        }
    }

    fn apply(self, x: &Tensor) -> Result<Tensor> {
        Ok(match self {
            Activation::GeluErf => x.gelu_erf()?,
            Activation::GeluTanh => x.gelu()?,
            Activation::Relu => x.relu()?,
        })
    }
}

#[derive(Debug, Deserialize)]
struct RawConfig {
    model_type: String,
    vocab_size: usize,
    // BERT family names.
    hidden_size: Option<usize>,
    num_hidden_layers: Option<usize>,
    num_attention_heads: Option<usize>,
    intermediate_size: Option<usize>,
    hidden_act: Option<String>,
    // DistilBERT names.
    dim: Option<usize>,
    n_layers: Option<usize>,
    n_heads: Option<usize>,
    hidden_dim: Option<usize>,
    activation: Option<String>,
    sinusoidal_pos_embds: Option<bool>,
    // ALBERT extras.
    embedding_size: Option<usize>,
    num_hidden_groups: Option<usize>,
    inner_group_num: Option<usize>,
    max_position_embeddings: usize,
    layer_norm_eps: Option<f64>,
    pad_token_id: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub embedding_size: usize,
    pub num_groups: usize,
    pub inner_group_num: usize,
    pub max_position_embeddings: usize,
    pub layer_norm_eps: f64,
    pub pad_token_id: u32,
    activation: Activation,
    head_activation: Activation,
}

impl EncoderConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text)?;
        let need = |v: Option<usize>, name: &str| {
            v.ok_or_else(|| ModelError::Config(format!("config.json lacks `{name}`")))
        };
        let architecture = match raw.model_type.as_str() {
            "bert" => Architecture::Bert,
            "roberta" | "xlm-roberta" | "camembert" => Architecture::Roberta,
            "distilbert" => Architecture::DistilBert,
            "albert" => Architecture::Albert,
            other => return Err(ModelError::Config(format!("unsupported model_type `{other}`"))),
        };
        let cfg = if architecture == Architecture::DistilBert {
            if raw.sinusoidal_pos_embds == Some(true) {
                return Err(ModelError::Config("sinusoidal position embeddings are not supported".into()));
            }
            let act = Activation::parse(raw.activation.as_deref().unwrap_or("gelu"))?;
            let hidden = need(raw.dim, "dim")?;
            let _ = need(raw.hidden_dim, "hidden_dim")?;
            Self {
                architecture,
                vocab_size: raw.vocab_size,
                hidden_size: hidden,
                num_layers: need(raw.n_layers, "n_layers")?,
                num_heads: need(raw.n_heads, "n_heads")?,
                embedding_size: hidden,
                num_groups: 1,
                inner_group_num: 1,
                max_position_embeddings: raw.max_position_embeddings,
                layer_norm_eps: 1e-12,
                pad_token_id: raw.pad_token_id.unwrap_or(0),
                activation: act,
                head_activation: Activation::GeluErf,
            }
        } else {
            let hidden = need(raw.hidden_size, "hidden_size")?;
            let _ = need(raw.intermediate_size, "intermediate_size")?;
            let act = Activation::parse(raw.hidden_act.as_deref().unwrap_or("gelu"))?;
            // BERT and RoBERTa heads use exact GELU regardless of hidden_act;
            // ALBERT's head follows hidden_act.
            let head_activation = if architecture == Architecture::Albert {
                act
            } else {
                Activation::GeluErf
            };
            Self {
                architecture,
                vocab_size: raw.vocab_size,
                hidden_size: hidden,
                num_layers: need(raw.num_hidden_layers, "num_hidden_layers")?,
                num_heads: need(raw.num_attention_heads, "num_attention_heads")?,
                embedding_size: raw.embedding_size.unwrap_or(hidden),
                num_groups: raw.num_hidden_groups.unwrap_or(1),
                inner_group_num: raw.inner_group_num.unwrap_or(1),
                max_position_embeddings: raw.max_position_embeddings,
                layer_norm_eps: raw.layer_norm_eps.unwrap_or(1e-12),
                pad_token_id: raw.pad_token_id.unwrap_or(match architecture {
                    Architecture::Roberta => 1,
                    _ => 0,
                }),
                activation: act,
                head_activation,
            }
        };
        if cfg.hidden_size % cfg.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "hidden size {} is not divisible by {} heads",
                cfg.hidden_size, cfg.num_heads
            )));
        }
        Ok(cfg)
    }

    /// Longest input in tokens, including special tokens.
    pub fn max_sequence_length(&self) -> usize {
        match self.architecture {
            // Positions start after the padding index.
            Architecture::Roberta => self.max_position_embeddings - self.pad_token_id as usize - 1,
            _ => self.max_position_embeddings,
        }
    }
}

/// Tensor store with the name fallbacks found across checkpoints.
struct Weights {
    tensors: HashMap<String, Tensor>,
    prefixes: Vec<&'static str>,
}

impl Weights {
    fn new(raw: HashMap<String, Tensor>, architecture: Architecture) -> Result<Self> {
        let mut tensors = HashMap::with_capacity(raw.len());
        for (name, t) in raw {
            // Old TF-converted checkpoints name LayerNorm parameters gamma/beta.
            let name = if let Some(stem) = name.strip_suffix(".gamma") {
                format!("{stem}.weight")
            } else if let Some(stem) = name.strip_suffix(".beta") {
                format!("{stem}.bias")
            } else {
                name
            };
            let t = if t.dtype() == DType::F32 { t } else { t.to_dtype(DType::F32)? };
            tensors.insert(name, t);
        }
        let prefixes = match architecture {
            Architecture::Bert => vec!["bert.", ""],
            Architecture::Roberta => vec!["roberta.", ""],
            Architecture::DistilBert => vec!["distilbert.", ""],
            Architecture::Albert => vec!["albert.", ""],
        };
        Ok(Self { tensors, prefixes })
    }

    fn try_get(&self, name: &str) -> Option<Tensor> {
        self.tensors.get(name).cloned()
    }

    /// Body tensor, with or without the model prefix.
    fn body(&self, name: &str) -> Result<Tensor> {
        self.prefixes
            .iter()
            .find_map(|p| self.try_get(&format!("{p}{name}")))
            .ok_or_else(|| ModelError::MissingTensor(name.to_string()))
    }

    fn any(&self, names: &[&str]) -> Result<Tensor> {
        names
            .iter()
            .find_map(|n| self.try_get(n))
            .ok_or_else(|| ModelError::MissingTensor(names.join(" | ")))
    }

    fn linear(&self, name: &str) -> Result<Linear> {
        Ok(Linear::new(
            self.body(&format!("{name}.weight"))?,
            Some(self.body(&format!("{name}.bias"))?),
        ))
    }

    fn head_linear(&self, name: &str) -> Result<Linear> {
        Ok(Linear::new(
            self.any(&[&format!("{name}.weight")])?,
            Some(self.any(&[&format!("{name}.bias")])?),
        ))
    }

    fn layer_norm(&self, name: &str, eps: f64) -> Result<LayerNorm> {
        Ok(LayerNorm::new(
            self.body(&format!("{name}.weight"))?,
            self.body(&format!("{name}.bias"))?,
            eps,
        ))
    }

    fn head_layer_norm(&self, name: &str, eps: f64) -> Result<LayerNorm> {
        Ok(LayerNorm::new(
            self.any(&[&format!("{name}.weight")])?,
            self.any(&[&format!("{name}.bias")])?,
            eps,
        ))
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNorm,
}

impl Layer {
    fn load(w: &Weights, cfg: &EncoderConfig, prefix: &str) -> Result<Self> {
        let eps = cfg.layer_norm_eps;
        let p = |s: &str| format!("{prefix}{s}");
        Ok(match cfg.architecture {
            Architecture::Bert | Architecture::Roberta => Self {
                query: w.linear(&p("attention.self.query"))?,
                key: w.linear(&p("attention.self.key"))?,
                value: w.linear(&p("attention.self.value"))?,
                attn_out: w.linear(&p("attention.output.dense"))?,
                attn_norm: w.layer_norm(&p("attention.output.LayerNorm"), eps)?,
                ffn_in: w.linear(&p("intermediate.dense"))?,
                ffn_out: w.linear(&p("output.dense"))?,
                ffn_norm: w.layer_norm(&p("output.LayerNorm"), eps)?,
            },
            Architecture::DistilBert => Self {
                query: w.linear(&p("attention.q_lin"))?,
                key: w.linear(&p("attention.k_lin"))?,
                value: w.linear(&p("attention.v_lin"))?,
                attn_out: w.linear(&p("attention.out_lin"))?,
                attn_norm: w.layer_norm(&p("sa_layer_norm"), eps)?,
                ffn_in: w.linear(&p("ffn.lin1"))?,
                ffn_out: w.linear(&p("ffn.lin2"))?,
                ffn_norm: w.layer_norm(&p("output_layer_norm"), eps)?,
            },
            Architecture::Albert => Self {
                query: w.linear(&p("attention.query"))?,
                key: w.linear(&p("attention.key"))?,
                value: w.linear(&p("attention.value"))?,
                attn_out: w.linear(&p("attention.dense"))?,
                attn_norm: w.layer_norm(&p("attention.LayerNorm"), eps)?,
                ffn_in: w.linear(&p("ffn"))?,
                ffn_out: w.linear(&p("ffn_output"))?,
                ffn_norm: w.layer_norm(&p("full_layer_layer_norm"), eps)?,
            },
        })
    }

    fn forward(&self, x: &Tensor, heads: usize, act: Activation) -> Result<Tensor> {
        let (b, l, h) = x.dims3()?;
        let d = h / heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, heads, d))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.query.forward(x)?)?;
        let k = split(self.key.forward(x)?)?;
        let v = split(self.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?)? / (d as f64).sqrt())?;
        let probs = candle_nn::ops::softmax_last_dim(&scores)?;
        let ctx = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, l, h))?;
        let x = self.attn_norm.forward(&(self.attn_out.forward(&ctx)? + x)?)?;
        let inner = act.apply(&self.ffn_in.forward(&x)?)?;
        Ok(self.ffn_norm.forward(&(self.ffn_out.forward(&inner)? + &x)?)?)
    }
}

struct Head {
    transform: Linear,
    norm: LayerNorm,
    decoder_weight: Tensor,
    decoder_bias: Tensor,
}

pub struct Encoder {
    cfg: EncoderConfig,
    device: Device,
    word: Tensor,
    position: Tensor,
    token_type: Option<Tensor>,
    embed_norm: LayerNorm,
    embed_project: Option<Linear>,
    layers: Vec<Layer>,
    head: Head,
}

impl Encoder {
    pub fn load(cfg: EncoderConfig, raw: HashMap<String, Tensor>, device: Device) -> Result<Self> {
        let w = Weights::new(raw, cfg.architecture)?;
        let eps = cfg.layer_norm_eps;
        let word = w.body("embeddings.word_embeddings.weight")?;
        let position = w.body("embeddings.position_embeddings.weight")?;
        let token_type = w.body("embeddings.token_type_embeddings.weight").ok();
        let embed_norm = w.layer_norm("embeddings.LayerNorm", eps)?;
        let embed_project = if cfg.architecture == Architecture::Albert {
            Some(w.linear("encoder.embedding_hidden_mapping_in")?)
        } else {
            None
        };
        let layers = match cfg.architecture {
            Architecture::Bert | Architecture::Roberta => (0..cfg.num_layers)
                .map(|i| Layer::load(&w, &cfg, &format!("encoder.layer.{i}.")))
                .collect::<Result<Vec<_>>>()?,
            Architecture::DistilBert => (0..cfg.num_layers)
                .map(|i| Layer::load(&w, &cfg, &format!("transformer.layer.{i}.")))
                .collect::<Result<Vec<_>>>()?,
            Architecture::Albert => {
                let mut shared = Vec::new();
                for g in 0..cfg.num_groups {
                    for k in 0..cfg.inner_group_num {
                        shared.push(Layer::load(
                            &w,
                            &cfg,
                            &format!("encoder.albert_layer_groups.{g}.albert_layers.{k}."),
                        )?);
                    }
                }
                shared
            }
        };
        let tied = || word.clone();
        let head = match cfg.architecture {
            Architecture::Bert => Head {
                transform: w.head_linear("cls.predictions.transform.dense")?,
                norm: w.head_layer_norm("cls.predictions.transform.LayerNorm", eps)?,
                decoder_weight: w.any(&["cls.predictions.decoder.weight"]).unwrap_or_else(|_| tied()),
                decoder_bias: w.any(&["cls.predictions.bias", "cls.predictions.decoder.bias"])?,
            },
            Architecture::Roberta => Head {
                transform: w.head_linear("lm_head.dense")?,
                norm: w.head_layer_norm("lm_head.layer_norm", eps)?,
                decoder_weight: w.any(&["lm_head.decoder.weight"]).unwrap_or_else(|_| tied()),
                decoder_bias: w.any(&["lm_head.bias", "lm_head.decoder.bias"])?,
            },
            Architecture::DistilBert => Head {
                transform: w.head_linear("vocab_transform")?,
                norm: w.head_layer_norm("vocab_layer_norm", eps)?,
                decoder_weight: w.any(&["vocab_projector.weight"]).unwrap_or_else(|_| tied()),
                decoder_bias: w.any(&["vocab_projector.bias"])?,
            },
            Architecture::Albert => Head {
                transform: w.head_linear("predictions.dense")?,
                norm: w.head_layer_norm("predictions.LayerNorm", eps)?,
                decoder_weight: w.any(&["predictions.decoder.weight"]).unwrap_or_else(|_| tied()),
                decoder_bias: w.any(&["predictions.bias", "predictions.decoder.bias"])?,
            },
        };
        if head.decoder_weight.dims2()?.0 != cfg.vocab_size {
            return Err(ModelError::Config(format!(
                "decoder has {} rows, config says vocab_size {}",
                head.decoder_weight.dims2()?.0,
                cfg.vocab_size
            )));
        }
        Ok(Self {
            cfg,
            device,
            word,
            position,
            token_type,
            embed_norm,
            embed_project,
            layers,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn embed(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        let e = self.word.dim(1)?;
        let words = self.word.index_select(&ids.flatten_all()?, 0)?.reshape((b, l, e))?;
        let offset = match self.cfg.architecture {
            Architecture::Roberta => self.cfg.pad_token_id as usize + 1,
            _ => 0,
        };
        let positions = self.position.narrow(0, offset, l)?;
        let mut x = words.broadcast_add(&positions)?;
        if let Some(tt) = &self.token_type {
            x = x.broadcast_add(&tt.narrow(0, 0, 1)?)?;
        }
        let x = self.embed_norm.forward(&x)?;
        Ok(match &self.embed_project {
            Some(p) => p.forward(&x)?,
            None => x,
        })
    }

    /// Final hidden states for a batch of equally long sequences.
    pub fn hidden_states(&self, batch: &[Vec<u32>]) -> Result<Tensor> {
        let l = batch.first().map_or(0, Vec::len);
        if l == 0 || batch.iter().any(|s| s.len() != l) {
            return Err(ModelError::Config("batch sequences must be non-empty and equally long".into()));
        }
        if l > self.cfg.max_sequence_length() {
            return Err(ModelError::Config(format!(
                "sequence of {l} tokens exceeds the limit of {}",
                self.cfg.max_sequence_length()
            )));
        }
        let flat: Vec<u32> = batch.iter().flatten().copied().collect();
        let ids = Tensor::from_vec(flat, (batch.len(), l), &self.device)?;
        let mut x = self.embed(&ids)?;
        let heads = self.cfg.num_heads;
        match self.cfg.architecture {
            Architecture::Albert => {
                let per_group = self.cfg.num_layers / self.cfg.num_groups;
                for i in 0..self.cfg.num_layers {
                    let g = i / per_group;
                    for k in 0..self.cfg.inner_group_num {
                        let layer = &self.layers[g * self.cfg.inner_group_num + k];
                        x = layer.forward(&x, heads, self.cfg.activation)?;
                    }
                }
            }
            _ => {
                for layer in &self.layers {
                    x = layer.forward(&x, heads, self.cfg.activation)?;
                }
            }
        }
        Ok(x)
    }

    /// Vocabulary logits at one position of each sequence, as `[n, vocab]`.
    pub fn logits_at(&self, batch: &[Vec<u32>], positions: &[usize]) -> Result<Tensor> {
        let hidden = self.hidden_states(batch)?;
        let (b, l, h) = hidden.dims3()?;
        let index: Vec<u32> = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| (i * l + p) as u32)
            .collect();
        let index = Tensor::from_vec(index, positions.len(), &self.device)?;
        let picked = hidden.reshape((b * l, h))?.index_select(&index, 0)?;
        let x = self.head.transform.forward(&picked)?;
        let x = self.head.norm.forward(&self.cfg.head_activation.apply(&x)?)?;
        Ok(x
            .matmul(&self.head.decoder_weight.t()?)?
            .broadcast_add(&self.head.decoder_bias)?)
    }

    /// Softmax of [`Self::logits_at`] in f64.
    pub fn probabilities_at(&self, batch: &[Vec<u32>], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let logits = self.logits_at(batch, positions)?.to_dtype(DType::F64)?;
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)?;
        Ok(probs.to_vec2::<f64>()?)
    }
}
