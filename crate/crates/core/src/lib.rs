//! Association-bias probes for masked language models.
//!
//! The crate measures how a fill-mask model treats the names in a category
//! lexicon (animal names) when they are described with personifying
//! (`she`/`he` ... `who`) versus objectifying (`it`/`this`/`that` ... `which`)
//! language:
//!
//! * [`gateway`]: the model interface, mask distributions and pseudo-log-likelihood.
//! * [`lexicon`]: candidate names, corpus frequency counting and filtering.
//! * [`templates`]: human/object template sentences and mean mask distributions.
//! * [`shifts`]: log-ratio word shifts, z-score filtering, token match rate and UPGMA.
//! * [`sentiment`]: valence-lexicon profiles of the shifted words.
//! * [`corpus`]: streaming extraction of relative-pronoun sentences and frequency tables.
//! * [`bias`]: pronoun-prediction bias scores and their correlation with corpus skew.

pub mod bias;
pub mod corpus;
pub mod gateway;
pub mod lexicon;
pub mod sentiment;
pub mod shifts;
pub mod templates;

pub use gateway::{MaskDistribution, ModelHandle, SentenceScore};
pub use lexicon::{AnimalEntry, AnimalLexicon, Category};
