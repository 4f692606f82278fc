//! Topology policies: spectral clustering with slice leaders, and the two baselines.

pub mod kmeans;
pub mod leaders;
pub mod spectral;
pub mod topology;

use thiserror::Error;

pub use kmeans::{kmeans, KMeans};
pub use leaders::{select_slice_leaders, LeaderOutcome, Member};
pub use spectral::{
    cluster_vehicles, eigengap_k, laplacian, similarity_matrix, spectral_embed, spectrum,
    ClusterOutcome, SimilarityMatrix, Spectrum,
};
pub use topology::{
    baseline1_topology, baseline2_topology, proposed_topology, ProposedParams, TopologyAssignment,
    TopologyRow, TopologyWarnings,
};

#[derive(Debug, Error, PartialEq)]
pub enum SlicingError {
    #[error("symmetric eigensolver did not converge on a {n}x{n} Laplacian")]
    EigenNoConvergence { n: usize },
    #[error("cannot embed {n} points in {k} dimensions")]
    BadDimension { k: usize, n: usize },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}
