pub mod autodiff;
pub mod corpus;
pub mod decoder;
pub mod embeddings;
pub mod encoder;
pub mod eval;
pub mod error;
pub mod heads;
pub mod inspect;
pub mod memory;
pub mod model;
pub mod sharing;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub use corpus::{load_corpus, Annotation, Corpus, Sentence, TermKind};
pub use decoder::TermSpan;
pub use embeddings::{load_embeddings, EmbeddingTable};
pub use eval::{evaluate, EvalReport};
pub use model::{Model, ModelConfig};
pub use sharing::{SharingConfig, TensorSharing};
pub use train::{train, TrainConfig};
