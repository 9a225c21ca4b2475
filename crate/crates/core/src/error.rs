use thiserror::Error;

use crate::bgr::Node;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("price search did not converge after {iterations} iterations (clearing residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("bipartite graph contains a loop: {cycle:?}")]
    LoopDetected { cycle: Vec<Node> },

    #[error("negative demand {value:.3e} on edge (user {user}, provider {provider})")]
    NegativeDemand {
        user: usize,
        provider: usize,
        value: f64,
    },

    #[error("negative check-sum {value:.3e} at provider {provider}")]
    NegativeChecksum { provider: usize, value: f64 },

    #[error("terminal edge (user {user}, provider {provider}) is inconsistent: P = {user_checksum:.6e}, S*c = {provider_side:.6e}")]
    InconsistentChecksums {
        user: usize,
        provider: usize,
        user_checksum: f64,
        provider_side: f64,
    },

    #[error("decoded demands are infeasible: {0}")]
    InfeasibleChecksums(String),

    #[error("instance too large for the exhaustive oracle: {users} users, {providers} providers")]
    InstanceTooLarge { users: usize, providers: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
