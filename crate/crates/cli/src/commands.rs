//! Experiment orchestration behind the subcommands.

use lshmoe_core::cost_model::{
    predict_speedup, ratio, share_from_ratio, sweep, t_all_to_all, t_compute, SpeedupParams,
    SweepAxis,
};
use lshmoe_core::{
    gen_tokens, moe_forward_dense, step_baseline, step_lsh, HashFamily, Matrix, MoeLayer,
    StepMetrics,
};

use crate::config::ExperimentConfig;
use crate::report::{CostReport, CostRow, RunReport, RunRow};
use crate::CliError;

/// Modeled wall-clock pieces of one step, derived from the byte accounting
/// and the configured effective compute rate.
struct StepTimes {
    comm_s: f64,
    expert_s: f64,
    lsh_s: f64,
}

impl StepTimes {
    fn total(&self) -> f64 {
        self.comm_s + self.expert_s + self.lsh_s
    }
}

/// Flops for one expert application: two matvecs plus biases and activation.
fn expert_flops_per_item(d: usize, d_ffn: usize) -> f64 {
    (4 * d * d_ffn + 2 * d_ffn + d) as f64
}

fn step_times(cfg: &ExperimentConfig, metrics: &StepMetrics) -> StepTimes {
    let d = cfg.tokens.dim;
    let items = metrics.dispatch_comm.total_items() as f64;
    let effective = cfg.effective_flops();
    StepTimes {
        comm_s: metrics.dispatch_comm.modeled_time_s + metrics.return_comm.modeled_time_s,
        expert_s: items * expert_flops_per_item(d, cfg.model.d_ffn) / effective,
        lsh_s: metrics.lsh_overhead_flops as f64 / effective,
    }
}

/// Mean over tokens of the L2 distance between corresponding output rows.
fn mean_l2_error(a: &Matrix, b: &Matrix) -> Result<f64, CliError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(CliError::internal("output shape mismatch"));
    }
    let mut total = 0.0;
    for t in 0..a.rows() {
        let sq: f64 = a
            .row(t)
            .iter()
            .zip(b.row(t))
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        total += sq.sqrt();
    }
    Ok(total / a.rows() as f64)
}

struct BaselineRun {
    metrics: StepMetrics,
    times: StepTimes,
}

/// Everything a compressed run needs from the experiment setup.
struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    master_seed: u64,
    threads: usize,
    tokens: &'a Matrix,
    layer: &'a MoeLayer,
    baseline: &'a BaselineRun,
}

/// Run the uncompressed step and hold its byte/time profile for later rows.
/// The step output is cross-checked against the dense forward; disagreement
/// is an internal invariant violation, not a config problem.
fn run_baseline(
    cfg: &ExperimentConfig,
    tokens: &Matrix,
    layer: &MoeLayer,
    threads: usize,
) -> Result<BaselineRun, CliError> {
    let topo = cfg.cluster_topology();
    let metrics = step_baseline(tokens, layer, &topo, threads)?;
    let dense = moe_forward_dense(layer, tokens)?;
    let defect = metrics.output.max_abs_diff(&dense)?;
    if defect > 1e-12 {
        return Err(CliError::internal(format!(
            "baseline step deviates from dense forward by {defect:e}"
        )));
    }
    let times = step_times(cfg, &metrics);
    Ok(BaselineRun { metrics, times })
}

fn baseline_row(run: &BaselineRun) -> RunRow {
    RunRow {
        mode: "baseline".into(),
        q: None,
        family: None,
        compression_ratio: 1.0,
        mean_l2_error_vs_baseline: 0.0,
        dispatch_bytes: run.metrics.dispatch_comm.total_bytes(),
        return_bytes: run.metrics.return_comm.total_bytes(),
        modeled_step_time_s: run.times.total(),
        predicted_speedup: 1.0,
    }
}

fn lsh_row(ctx: &RunContext<'_>, family: HashFamily, q: usize) -> Result<RunRow, CliError> {
    let baseline = ctx.baseline;
    let topo = ctx.cfg.cluster_topology();
    let hash_cfg = ctx.cfg.hash_config(ctx.master_seed, family, q);
    let metrics = step_lsh(ctx.tokens, ctx.layer, &topo, &hash_cfg, ctx.threads)?;
    let times = step_times(ctx.cfg, &metrics);

    // Centroid bytes must track the measured compression ratio.
    let expected = metrics.compression_ratio * baseline.metrics.dispatch_comm.total_bytes() as f64;
    let got = metrics.dispatch_comm.total_bytes() as f64;
    if (got - expected).abs() > 0.01 * expected.max(1.0) {
        return Err(CliError::internal(format!(
            "dispatch bytes {got} inconsistent with compression ratio (expected ~{expected})"
        )));
    }

    let error = mean_l2_error(&metrics.output, &baseline.metrics.output)?;
    let speedup = predict_speedup(&SpeedupParams {
        a2a_share: baseline.times.comm_s / (baseline.times.comm_s + baseline.times.expert_s),
        compression_ratio: metrics.compression_ratio,
        // Clamp: configs with extreme hashing cost leave the model's domain.
        overhead_share: (times.lsh_s / baseline.times.comm_s).min(1.0),
    })?;

    Ok(RunRow {
        mode: "lsh".into(),
        q: Some(q),
        family: Some(family.to_string()),
        compression_ratio: metrics.compression_ratio,
        mean_l2_error_vs_baseline: error,
        dispatch_bytes: metrics.dispatch_comm.total_bytes(),
        return_bytes: metrics.return_comm.total_bytes(),
        modeled_step_time_s: times.total(),
        predicted_speedup: speedup,
    })
}

/// `simulate`: a baseline row plus, when the config carries an `lsh`
/// section, one compressed row.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    master_seed: u64,
    threads: usize,
) -> Result<RunReport, CliError> {
    let tokens = gen_tokens(&cfg.token_spec(master_seed))?;
    let layer = cfg.build_layer(master_seed)?;
    let baseline = run_baseline(cfg, &tokens, &layer, threads)?;

    let mut rows = vec![baseline_row(&baseline)];
    if let Some(lsh) = &cfg.lsh {
        let family = crate::config::parse_family(&lsh.family)?;
        let ctx = RunContext {
            cfg,
            master_seed,
            threads,
            tokens: &tokens,
            layer: &layer,
            baseline: &baseline,
        };
        rows.push(lsh_row(&ctx, family, lsh.q)?);
    }
    Ok(RunReport { rows })
}

/// `sweep-hashes`: one row per (family, q), q ascending within each family.
/// Compression refinement is a hard invariant of the prefix-key
/// construction, so a non-monotone column aborts with an internal error.
pub fn sweep_hashes(
    cfg: &ExperimentConfig,
    master_seed: u64,
    q_values: &[usize],
    families: &[HashFamily],
    threads: usize,
) -> Result<RunReport, CliError> {
    if q_values.is_empty() || families.is_empty() {
        return Err(CliError::config(
            "sweep needs at least one q and one family",
        ));
    }
    if q_values.contains(&0) {
        return Err(CliError::config("q values must be >= 1"));
    }
    let mut qs = q_values.to_vec();
    qs.sort_unstable();
    qs.dedup();

    let tokens = gen_tokens(&cfg.token_spec(master_seed))?;
    let layer = cfg.build_layer(master_seed)?;
    let baseline = run_baseline(cfg, &tokens, &layer, threads)?;

    let ctx = RunContext {
        cfg,
        master_seed,
        threads,
        tokens: &tokens,
        layer: &layer,
        baseline: &baseline,
    };
    let mut rows = Vec::with_capacity(families.len() * qs.len());
    for &family in families {
        let mut prev_ratio = 0.0f64;
        for &q in &qs {
            let row = lsh_row(&ctx, family, q)?;
            if row.compression_ratio < prev_ratio {
                return Err(CliError::internal(format!(
                    "{family} q={q}: compression ratio {} dropped below {prev_ratio}",
                    row.compression_ratio
                )));
            }
            prev_ratio = row.compression_ratio;
            rows.push(row);
        }
    }
    Ok(RunReport { rows })
}

/// `cost-model`: the base evaluation plus any requested axis sweeps.
pub fn cost_report(
    cfg: &ExperimentConfig,
    sweeps: &[(SweepAxis, Vec<f64>)],
) -> Result<CostReport, CliError> {
    let params = cfg.cost_params();
    let base_ratio = ratio(&params)?;
    let mut rows = vec![CostRow {
        section: "base".into(),
        axis: None,
        value: None,
        ratio: base_ratio,
        share: share_from_ratio(base_ratio),
        t_a2a_exact_s: t_all_to_all(&params, true)?,
        t_a2a_approx_s: t_all_to_all(&params, false)?,
        t_compute_s: t_compute(&params)?,
    }];

    for (axis, values) in sweeps {
        for row in sweep(&params, *axis, values)? {
            let mut p = params;
            match axis {
                SweepAxis::Workers => p.w = row.value,
                SweepAxis::HiddenSize => p.h = row.value,
                SweepAxis::Layers => p.l = row.value,
                SweepAxis::ExpertsPerToken => p.k = row.value,
            }
            rows.push(CostRow {
                section: "sweep".into(),
                axis: Some(axis.label().to_owned()),
                value: Some(row.value),
                ratio: row.ratio,
                share: row.share,
                t_a2a_exact_s: t_all_to_all(&p, true)?,
                t_a2a_approx_s: t_all_to_all(&p, false)?,
                t_compute_s: t_compute(&p)?,
            });
        }
    }
    Ok(CostReport { rows })
}
