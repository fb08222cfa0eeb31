//! Stage runner behind the `mlm-audit` binary.

pub mod config;
pub mod figures;
pub mod pipeline;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Stage(String),
    #[error(transparent)]
    Gateway(#[from] mlm_audit_core::gateway::GatewayError),
    #[error(transparent)]
    Lexicon(#[from] mlm_audit_core::lexicon::LexiconError),
    #[error(transparent)]
    Template(#[from] mlm_audit_core::templates::TemplateError),
    #[error(transparent)]
    Shift(#[from] mlm_audit_core::shifts::ShiftError),
    #[error(transparent)]
    Sentiment(#[from] mlm_audit_core::sentiment::SentimentError),
    #[error(transparent)]
    Corpus(#[from] mlm_audit_core::corpus::CorpusError),
    #[error(transparent)]
    Bias(#[from] mlm_audit_core::bias::BiasError),
    #[error(transparent)]
    Model(#[from] mlm_audit_models::ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
