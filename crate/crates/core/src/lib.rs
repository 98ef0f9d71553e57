//! Ontology-grounded text embeddings trained from scratch.
//!
//! The crate covers the whole training recipe at desk scale:
//!
//! * [`ontology`]: knowledge graphs, glossaries, relation templates, and the
//!   name/description corpora derived from them;
//! * [`encoder`]: a small embedding-bag encoder with exact gradients and a
//!   portable checkpoint format;
//! * [`losses`]: InfoNCE, MSE and cosine-similarity regression;
//! * [`trainer`]: AdamW with warmup-linear scheduling, PCA, and the
//!   STS-adaptation, contrastive, self-distillation and cross-lingual regimes;
//! * [`soup`]: uniform and greedy weight averaging;
//! * [`eval`]: STS, BCR, entity linking and NLI-triplet benchmarks;
//! * [`pipeline`]: the end-to-end run over a config file;
//! * [`synthetic`]: the generator behind the bundled demo fixtures.

pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod losses;
pub mod manifest;
pub mod ontology;
pub mod pipeline;
pub mod rng;
pub mod soup;
pub mod synthetic;
pub mod trainer;

pub use encoder::{Checkpoint, EncoderConfig, Phase};
pub use error::{Error, Result};
pub use eval::{Embedder, EvalReport};
pub use ontology::KnowledgeGraph;
pub use trainer::TrainConfig;
