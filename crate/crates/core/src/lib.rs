//! Character-level cross-lingual document classification.
//!
//! A character Bi-LSTM maps every word to a vector from its spelling alone,
//! and a deep averaging network classifies the mean of those vectors. Both
//! are trained on a labeled source-language corpus and applied unchanged to
//! a related target language; because the character inventory is shared,
//! cognates spelled alike land close together. Optional auxiliary losses
//! (dictionary pairs, mimicking pretrained vectors, distillation from a
//! reference classifier on parallel text) are added with fixed weights.

pub mod classifier;
pub mod config;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod store;
pub mod synth;
pub mod tensor;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
pub use exec::ExecMode;
pub use graph::{Gradients, Graph, NodeId, ParamId, ParamStore};
pub use model::{Model, ModelDims, Variant};
pub use tensor::Tensor;
