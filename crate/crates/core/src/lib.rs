//! Deterministic simulator and analytical cost model for LSH-compressed
//! expert-parallel Mixture-of-Experts steps.
//!
//! The crate is organized around one forward step of a distributed MoE
//! layer:
//!
//! - [`rng`], [`linalg`], [`tokens`]: seeded numerics substrate and a
//!   synthetic clustered token generator.
//! - [`lsh`]: cross-polytope and spherical-plane hashing, bucket clustering
//!   with centroids and residuals, and residual-based reconstruction.
//! - [`moe`]: linear top-k gating, FFN experts, and the dense forward used
//!   as the correctness oracle.
//! - [`expert_parallel`]: the simulated multi-worker step with byte-exact
//!   all-to-all accounting, in baseline and LSH-compressed variants.
//! - [`cost_model`]: closed-form all-to-all/compute times, their ratio, and
//!   speedup prediction.
//!
//! Everything is deterministic given seeds: equal inputs produce
//! bit-identical outputs regardless of thread count.

pub mod cost_model;
pub mod error;
pub mod expert_parallel;
pub mod linalg;
pub mod lsh;
pub mod moe;
pub mod rng;
pub mod tokens;

pub use error::{Error, Result};
pub use expert_parallel::{
    all_to_all, dispatch, step_baseline, step_lsh, A2aBuffer, ClusterTopology, CommRecord,
    Dispatch, StepMetrics,
};
pub use linalg::{random_orthogonal, Matrix};
pub use lsh::{
    bucket_key, cluster, cp_hash, reconstruct, sp_hash, BucketKey, Clustering, HashFamily,
    HashFamilyConfig, LshFunctions,
};
pub use moe::{
    expert_forward, gate_topk, moe_forward_dense, Activation, Expert, GateConfig, MoeLayer,
};
pub use rng::{stream_seed, RngState};
pub use tokens::{gen_tokens, TokenGenSpec};
