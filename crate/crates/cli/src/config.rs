//! JSON experiment configuration.
//!
//! One document drives all subcommands. Unknown keys are rejected so a
//! config that parses today parses identically tomorrow, and the single
//! master seed fans out to fixed sub-stream labels (tokens=1, gate=2,
//! experts=3, lsh=4, workers=100+i).

use std::path::Path;

use serde::Deserialize;

use lshmoe_core::cost_model::CostParams;
use lshmoe_core::{
    stream_seed, Activation, ClusterTopology, Expert, GateConfig, HashFamily, HashFamilyConfig,
    MoeLayer, RngState, TokenGenSpec,
};

use crate::CliError;

pub const SEED_TOKENS: u64 = 1;
pub const SEED_GATE: u64 = 2;
pub const SEED_EXPERTS: u64 = 3;
pub const SEED_LSH: u64 = 4;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub tokens: TokensSection,
    pub model: ModelSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub lsh: Option<LshSection>,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub output: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokensSection {
    pub n_tokens: usize,
    pub dim: usize,
    pub n_components: usize,
    pub spread: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_experts: usize,
    pub k: usize,
    pub d_ffn: usize,
    #[serde(default = "default_activation")]
    pub activation: String,
    /// "random" or "identity"; identity experts compute E(x) = x exactly,
    /// which makes the compressed path bit-near the baseline.
    #[serde(default = "default_experts")]
    pub experts: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub workers: usize,
    pub b_intra_bytes_per_s: f64,
    pub b_inter_bytes_per_s: f64,
    #[serde(default = "default_wire_bytes")]
    pub wire_bytes_per_element: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LshSection {
    pub family: String,
    pub q: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default = "default_layers")]
    pub layers: f64,
    /// Peak device compute, FLOP/s.
    #[serde(default = "default_peak_flops")]
    pub peak_flops: f64,
    /// Fraction of peak actually sustained.
    #[serde(default = "default_utilization")]
    pub utilization: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            layers: default_layers(),
            peak_flops: default_peak_flops(),
            utilization: default_utilization(),
        }
    }
}

fn default_activation() -> String {
    "relu".to_owned()
}

fn default_experts() -> String {
    "random".to_owned()
}

fn default_wire_bytes() -> u64 {
    2
}

fn default_layers() -> f64 {
    12.0
}

fn default_peak_flops() -> f64 {
    // V100-class fp16 peak.
    1.25e14
}

fn default_utilization() -> f64 {
    0.5
}

pub fn parse_family(s: &str) -> Result<HashFamily, CliError> {
    match s {
        "cp" | "cross_polytope" => Ok(HashFamily::CrossPolytope),
        "sp" | "spherical_plane" => Ok(HashFamily::SphericalPlane),
        other => Err(CliError::config(format!(
            "unknown hash family {other:?}, expected cp or sp"
        ))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            // serde_json's message carries the line and column.
            CliError::config(format!("invalid config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != 1 {
            return Err(CliError::config(format!(
                "unsupported schema_version {}, expected 1",
                self.schema_version
            )));
        }
        if self.tokens.n_tokens == 0 || self.tokens.dim == 0 || self.tokens.n_components == 0 {
            return Err(CliError::config(
                "tokens: n_tokens, dim and n_components must be >= 1",
            ));
        }
        if !(self.tokens.spread >= 0.0 && self.tokens.spread.is_finite()) {
            return Err(CliError::config("tokens.spread must be finite and >= 0"));
        }
        if self.model.n_experts == 0 || self.model.d_ffn == 0 {
            return Err(CliError::config("model: n_experts and d_ffn must be >= 1"));
        }
        if self.model.k == 0 || self.model.k > self.model.n_experts {
            return Err(CliError::config(format!(
                "model.k must satisfy 1 <= k <= n_experts, got {}",
                self.model.k
            )));
        }
        self.parse_activation()?;
        if self.model.experts != "random" && self.model.experts != "identity" {
            return Err(CliError::config(format!(
                "model.experts must be \"random\" or \"identity\", got {:?}",
                self.model.experts
            )));
        }
        if self.topology.workers == 0 {
            return Err(CliError::config("topology.workers must be >= 1"));
        }
        if !self.model.n_experts.is_multiple_of(self.topology.workers) {
            return Err(CliError::config(format!(
                "topology.workers ({}) must divide model.n_experts ({})",
                self.topology.workers, self.model.n_experts
            )));
        }
        if !(self.topology.b_intra_bytes_per_s > 0.0 && self.topology.b_inter_bytes_per_s > 0.0) {
            return Err(CliError::config("topology bandwidths must be positive"));
        }
        if self.topology.wire_bytes_per_element == 0 {
            return Err(CliError::config(
                "topology.wire_bytes_per_element must be >= 1",
            ));
        }
        if let Some(lsh) = &self.lsh {
            parse_family(&lsh.family)?;
            if lsh.q == 0 {
                return Err(CliError::config("lsh.q must be >= 1"));
            }
        }
        if !(self.cost.layers > 0.0 && self.cost.peak_flops > 0.0) {
            return Err(CliError::config(
                "cost.layers and cost.peak_flops must be positive",
            ));
        }
        if !(self.cost.utilization > 0.0 && self.cost.utilization <= 1.0) {
            return Err(CliError::config("cost.utilization must lie in (0, 1]"));
        }
        Ok(())
    }

    fn parse_activation(&self) -> Result<Activation, CliError> {
        match self.model.activation.as_str() {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(CliError::config(format!(
                "model.activation must be \"relu\" or \"gelu\", got {other:?}"
            ))),
        }
    }

    pub fn token_spec(&self, master_seed: u64) -> TokenGenSpec {
        TokenGenSpec {
            n_tokens: self.tokens.n_tokens,
            dim: self.tokens.dim,
            n_components: self.tokens.n_components,
            spread: self.tokens.spread,
            seed: stream_seed(master_seed, SEED_TOKENS),
        }
    }

    pub fn build_layer(&self, master_seed: u64) -> Result<MoeLayer, CliError> {
        let activation = self.parse_activation()?;
        let mut gate_rng = RngState::new(master_seed, SEED_GATE);
        let gate = GateConfig::random(
            self.model.n_experts,
            self.tokens.dim,
            self.model.k,
            &mut gate_rng,
        )?;
        let experts = match self.model.experts.as_str() {
            "identity" => (0..self.model.n_experts)
                .map(|_| Expert::identity(self.tokens.dim))
                .collect::<lshmoe_core::Result<Vec<_>>>()?,
            _ => {
                let mut expert_rng = RngState::new(master_seed, SEED_EXPERTS);
                (0..self.model.n_experts)
                    .map(|_| {
                        Expert::random(
                            self.tokens.dim,
                            self.model.d_ffn,
                            activation,
                            &mut expert_rng,
                        )
                    })
                    .collect::<lshmoe_core::Result<Vec<_>>>()?
            }
        };
        Ok(MoeLayer::new(gate, experts)?)
    }

    pub fn cluster_topology(&self) -> ClusterTopology {
        ClusterTopology {
            workers: self.topology.workers,
            experts_per_worker: self.model.n_experts / self.topology.workers,
            b_intra_bytes_per_s: self.topology.b_intra_bytes_per_s,
            b_inter_bytes_per_s: self.topology.b_inter_bytes_per_s,
            wire_bytes_per_element: self.topology.wire_bytes_per_element,
        }
    }

    pub fn hash_config(&self, master_seed: u64, family: HashFamily, q: usize) -> HashFamilyConfig {
        HashFamilyConfig {
            family,
            q,
            dim: self.tokens.dim,
            seed: stream_seed(master_seed, SEED_LSH),
        }
    }

    /// Effective compute rate: peak times utilization.
    pub fn effective_flops(&self) -> f64 {
        self.cost.peak_flops * self.cost.utilization
    }

    /// Closed-form model parameters. Bandwidths convert from bytes/s to
    /// elements/s here, and `n` is the per-worker share of the batch.
    pub fn cost_params(&self) -> CostParams {
        let wire = self.topology.wire_bytes_per_element as f64;
        CostParams {
            n: self.tokens.n_tokens as f64 / self.topology.workers as f64,
            k: self.model.k as f64,
            h: self.tokens.dim as f64,
            l: self.cost.layers,
            w: self.topology.workers as f64,
            b_intra: self.topology.b_intra_bytes_per_s / wire,
            b_inter: self.topology.b_inter_bytes_per_s / wire,
            flops: self.effective_flops(),
        }
    }
}
