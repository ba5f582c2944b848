//! Prototype-based aleatoric uncertainty for cross-modal retrieval.
//!
//! Given frozen vision and text embeddings, this crate learns a bank of prototypes
//! per modality, scores each instance's ambiguity as an evidential (Dirichlet)
//! uncertainty against the *other* modality's prototypes, and uses those scores to
//! re-rank retrieval results. The evaluation harness (recall, ranks, correlation,
//! uncertainty-removal curves) and a seeded synthetic corpus generator live here
//! too, so the whole pipeline can be exercised without real encoders.

pub mod embed;
pub mod error;
pub mod evidence;
pub mod io;
pub mod matrix;
pub mod metrics;
pub mod optim;
pub mod proto;
pub mod rerank;
pub mod synth;

pub use embed::{
    batch_means, cosine, normalize_rows, similarity_matrix, EmbeddingSet, Modality, PairSet,
    SimilarityMatrix,
};
pub use error::{PauError, Result};
pub use evidence::{
    dirichlet_from_evidence, generate_evidence, uncertainty_from_similarities, uncertainty_scores,
    DirichletState, EvidenceConfig, EvidenceKind,
};
pub use io::Checkpoint;
pub use matrix::Matrix;
pub use metrics::{
    entropy, evaluate_retrieval, jsd, msvd_collision_logprob, pearson, removal_curve, softmax,
    Direction, RemovalCurve, RemovalMode, RemovalSide, RetrievalReport,
};
pub use optim::OptimizerKind;
pub use proto::{
    gradients, init_prototypes, loss_div, loss_uct, train, PrototypeBank, TargetMap, TrainConfig,
    TrainHistory, TrainOutcome,
};
pub use rerank::{apply_rerank, fit_betas, RerankParams, RerankProblem};
pub use synth::{generate_corpus, AmbiguityLabels, SyntheticCorpus, SyntheticSpec};
