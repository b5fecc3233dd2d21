//! Open card-sorting simulation toolkit: prompt rendering for LLM-driven
//! sorts, output validation and normalization, and agreement metrics
//! (similarity matrix → MDS → K-means with knee selection → NMI / ARI /
//! edit distance / Mantel) against real participant results.

pub mod cli;
pub mod cluster;
pub mod csvio;
pub mod llmgate;
pub mod metrics;
pub mod model;
pub mod percent;
pub mod pipeline;
pub mod prompts;
pub mod seed;
pub mod simmatrix;
pub mod validate;

pub use model::{Card, CardId, Clustering, ParticipantSort, StudyConfig, StudyResults};
pub use percent::Percent;
pub use simmatrix::{DistanceMatrix, SimilarityMatrix};
