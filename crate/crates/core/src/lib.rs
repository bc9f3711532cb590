//! Prompt-ensemble zero-shot classifiers and a residual self-attention
//! adapter over frozen vision-language embeddings.
//!
//! Embeddings are stored as `f32`; every reduction accumulates in `f64`.

pub mod adapters;
pub mod embedding;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod io;
pub mod synthetic;
pub mod training;
pub mod vdt;

pub use adapters::{
    adapted_classifier, attention_forward, mlp_adapter_text, mlp_adapter_visual, AdapterConfig, AttentionAdapter,
    MlpAdapterParams, Parameters, SelfAttentionParams,
};
pub use embedding::{
    accuracy, argmax, cosine_logits, l2_normalize, logits, predict, softmax, ClassifierWeights, EmbeddingMatrix,
    LabeledFeatures, ScoreMatrix, DEFAULT_TAU,
};
pub use ensemble::{mean_prototype, score_ensemble_eval, score_ensemble_probs, zero_shot_eval, ClassBlock, SentenceBank};
pub use error::{Error, ParseError, Result};
pub use evaluation::{evaluate_base_to_new, harmonic_mean, split_base_new, BaseToNewResult, SplitManifest};
pub use training::{sample_few_shot, train_adapter, tune_beta, TrainConfig, TrainReport};
