//! Shared fixtures for the criterion benchmarks.

use lshmoe_core::{
    gen_tokens, Activation, ClusterTopology, HashFamily, HashFamilyConfig, Matrix, MoeLayer,
    RngState, TokenGenSpec,
};

pub fn bench_tokens(n: usize, dim: usize) -> Matrix {
    gen_tokens(&TokenGenSpec {
        n_tokens: n,
        dim,
        n_components: 20,
        spread: 0.05,
        seed: 1234,
    })
    .expect("bench token spec is valid")
}

pub fn bench_layer(n_experts: usize, k: usize, dim: usize, d_ffn: usize) -> MoeLayer {
    let mut gate_rng = RngState::new(1234, 2);
    let mut expert_rng = RngState::new(1234, 3);
    MoeLayer::random(
        n_experts,
        k,
        dim,
        d_ffn,
        Activation::Relu,
        &mut gate_rng,
        &mut expert_rng,
    )
    .expect("bench layer shape is valid")
}

pub fn bench_topology(workers: usize, experts_per_worker: usize) -> ClusterTopology {
    ClusterTopology {
        workers,
        experts_per_worker,
        b_intra_bytes_per_s: 1.2e11,
        b_inter_bytes_per_s: 1.25e10,
        wire_bytes_per_element: 2,
    }
}

pub fn hash_config(family: HashFamily, q: usize, dim: usize) -> HashFamilyConfig {
    HashFamilyConfig {
        family,
        q,
        dim,
        seed: 4321,
    }
}
