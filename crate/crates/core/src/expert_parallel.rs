//! Simulated expert-parallel execution of one MoE layer step.
//!
//! Tokens live on `w` workers (contiguous balanced split of the batch),
//! experts are placed in contiguous blocks, and the two all-to-all exchanges
//! move d-dimensional rows with byte-exact accounting against per-link
//! bandwidths. Two step variants are provided: the uncompressed baseline,
//! which must reproduce the dense forward exactly, and the LSH-compressed
//! step, which clusters each (source worker, expert) send group, ships only
//! bucket centroids, and adds the locally-held residuals back to the expert
//! outputs on the return path.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lsh::{cluster_with, reconstruct, Clustering, HashFamilyConfig, LshFunctions};
use crate::moe::{expert_forward, gate_topk, MoeLayer};

/// Worker/network shape: expert placement is contiguous blocks, worker `i`
/// hosting experts `[i*e, (i+1)*e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTopology {
    pub workers: usize,
    pub experts_per_worker: usize,
    /// Same-worker traffic bandwidth, bytes/s.
    pub b_intra_bytes_per_s: f64,
    /// Cross-worker traffic bandwidth, bytes/s.
    pub b_inter_bytes_per_s: f64,
    /// Bytes per transmitted element (wire precision), default 2.
    pub wire_bytes_per_element: u64,
}

impl ClusterTopology {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("workers must be >= 1"));
        }
        if self.experts_per_worker == 0 {
            return Err(Error::invalid("experts_per_worker must be >= 1"));
        }
        if !(self.b_intra_bytes_per_s > 0.0 && self.b_intra_bytes_per_s.is_finite()) {
            return Err(Error::invalid("intra bandwidth must be positive"));
        }
        if !(self.b_inter_bytes_per_s > 0.0 && self.b_inter_bytes_per_s.is_finite()) {
            return Err(Error::invalid("inter bandwidth must be positive"));
        }
        if self.wire_bytes_per_element == 0 {
            return Err(Error::invalid("wire_bytes_per_element must be >= 1"));
        }
        Ok(())
    }

    pub fn n_experts(&self) -> usize {
        self.workers * self.experts_per_worker
    }

    pub fn expert_worker(&self, expert: usize) -> usize {
        expert / self.experts_per_worker
    }

    pub fn experts_on(&self, worker: usize) -> std::ops::Range<usize> {
        worker * self.experts_per_worker..(worker + 1) * self.experts_per_worker
    }
}

/// Home worker of a token under the contiguous balanced split: the first
/// `n % w` workers hold one extra token.
pub fn token_home(token: usize, n_tokens: usize, workers: usize) -> usize {
    debug_assert!(token < n_tokens);
    let base = n_tokens / workers;
    let rem = n_tokens % workers;
    let boundary = (base + 1) * rem;
    if token < boundary {
        token / (base + 1)
    } else {
        rem + (token - boundary) / base
    }
}

/// Byte accounting for one all-to-all instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CommRecord {
    workers: usize,
    /// Item counts per (src, dst), row-major.
    send_counts: Vec<u64>,
    pub bytes_intra: u64,
    pub bytes_inter: u64,
    pub modeled_time_s: f64,
}

impl CommRecord {
    pub fn count(&self, src: usize, dst: usize) -> u64 {
        self.send_counts[src * self.workers + dst]
    }

    pub fn total_items(&self) -> u64 {
        self.send_counts.iter().sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_intra + self.bytes_inter
    }
}

/// One send buffer: `items` rows of width `dim`, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct A2aBuffer {
    pub src: usize,
    pub dst: usize,
    pub items: usize,
    pub data: Vec<f64>,
}

/// Deliver every buffer to its destination and account the traffic:
/// diagonal (src == dst) bytes at the intra bandwidth, off-diagonal at the
/// inter bandwidth. Buffers come back sorted by (dst, src) with row order
/// preserved within each (src, dst) pair.
pub fn all_to_all(
    buffers: Vec<A2aBuffer>,
    dim: usize,
    topo: &ClusterTopology,
) -> Result<(Vec<A2aBuffer>, CommRecord)> {
    topo.validate()?;
    let w = topo.workers;
    let mut counts = vec![0u64; w * w];
    let mut bytes_intra = 0u64;
    let mut bytes_inter = 0u64;
    for buf in &buffers {
        if buf.src >= w || buf.dst >= w {
            return Err(Error::invalid(format!(
                "buffer endpoint ({}, {}) out of range for {w} workers",
                buf.src, buf.dst
            )));
        }
        if buf.data.len() != buf.items * dim {
            return Err(Error::DimensionMismatch {
                what: "all-to-all buffer payload",
                expected: buf.items * dim,
                got: buf.data.len(),
            });
        }
        counts[buf.src * w + buf.dst] += buf.items as u64;
        let bytes = buf.items as u64 * dim as u64 * topo.wire_bytes_per_element;
        if buf.src == buf.dst {
            bytes_intra += bytes;
        } else {
            bytes_inter += bytes;
        }
    }
    let modeled_time_s = bytes_intra as f64 / topo.b_intra_bytes_per_s
        + bytes_inter as f64 / topo.b_inter_bytes_per_s;

    let mut delivered = buffers;
    delivered.sort_by_key(|b| (b.dst, b.src));

    Ok((
        delivered,
        CommRecord {
            workers: w,
            send_counts: counts,
            bytes_intra,
            bytes_inter,
            modeled_time_s,
        },
    ))
}

/// Routing result: per-token expert choices and per-expert token groups
/// (token ids in batch order, duplicated across groups when k > 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    pub routes: Vec<Vec<usize>>,
    pub expert_groups: Vec<Vec<usize>>,
}

impl Dispatch {
    /// Total routed token copies, `n * k`.
    pub fn total_copies(&self) -> usize {
        self.expert_groups.iter().map(Vec::len).sum()
    }
}

/// Gate every token and group the batch by destination expert.
pub fn dispatch(tokens: &Matrix, layer: &MoeLayer, topo: &ClusterTopology) -> Result<Dispatch> {
    topo.validate()?;
    if layer.n_experts() != topo.n_experts() {
        return Err(Error::DimensionMismatch {
            what: "experts vs topology placement",
            expected: topo.n_experts(),
            got: layer.n_experts(),
        });
    }
    if tokens.cols() != layer.dim() {
        return Err(Error::DimensionMismatch {
            what: "token dim vs layer dim",
            expected: layer.dim(),
            got: tokens.cols(),
        });
    }
    let mut routes = Vec::with_capacity(tokens.rows());
    let mut expert_groups: Vec<Vec<usize>> = vec![Vec::new(); layer.n_experts()];
    for t in 0..tokens.rows() {
        let chosen = gate_topk(&layer.gate, tokens.row(t))?;
        for &e in &chosen {
            expert_groups[e].push(t);
        }
        routes.push(chosen);
    }
    Ok(Dispatch {
        routes,
        expert_groups,
    })
}

/// Metrics and output of one simulated step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub dispatch_comm: CommRecord,
    pub return_comm: CommRecord,
    /// Centroids sent / tokens routed; 1.0 on the baseline path.
    pub compression_ratio: f64,
    /// Hashing work charged to the compressed path: q rotations per routed
    /// token copy at 2d² flops each. Zero on the baseline path.
    pub lsh_overhead_flops: u64,
    pub output: Matrix,
}

/// Per-(src, dst) row labels: (token, expert) pairs in expert-major order,
/// tokens in batch order within an expert. Fixes both buffer layout and the
/// reassembly order.
fn wire_labels(
    disp: &Dispatch,
    topo: &ClusterTopology,
    n_tokens: usize,
) -> Vec<Vec<(usize, usize)>> {
    let w = topo.workers;
    let mut labels: Vec<Vec<(usize, usize)>> = vec![Vec::new(); w * w];
    for dst in 0..w {
        for e in topo.experts_on(dst) {
            for &t in &disp.expert_groups[e] {
                labels[token_home(t, n_tokens, w) * w + dst].push((t, e));
            }
        }
    }
    labels
}

/// Run `f` once per worker, on up to `threads` OS threads. Results land in
/// worker order, so thread count cannot affect callers' output.
fn run_workers<T: Send>(workers: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let threads = threads.max(1).min(workers);
    if threads <= 1 {
        return (0..workers).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = (0..workers).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|tid| {
                let f = &f;
                scope.spawn(move || {
                    (tid..workers)
                        .step_by(threads)
                        .map(|wk| (wk, f(wk)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (wk, val) in h.join().expect("worker thread panicked") {
                slots[wk] = Some(val);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("worker result"))
        .collect()
}

/// Uncompressed step: dispatch, token all-to-all, expert forward, return
/// all-to-all, reassemble. The output equals the dense forward.
pub fn step_baseline(
    tokens: &Matrix,
    layer: &MoeLayer,
    topo: &ClusterTopology,
    threads: usize,
) -> Result<StepMetrics> {
    let disp = dispatch(tokens, layer, topo)?;
    let n = tokens.rows();
    let d = tokens.cols();
    let w = topo.workers;
    let labels = wire_labels(&disp, topo, n);

    let mut send = Vec::with_capacity(w * w);
    for src in 0..w {
        for dst in 0..w {
            let lab = &labels[src * w + dst];
            let mut data = Vec::with_capacity(lab.len() * d);
            for &(t, _) in lab {
                data.extend_from_slice(tokens.row(t));
            }
            send.push(A2aBuffer {
                src,
                dst,
                items: lab.len(),
                data,
            });
        }
    }
    let (delivered, dispatch_comm) = all_to_all(send, d, topo)?;

    // Expert compute on each hosting worker; outputs keyed by (worker, src).
    let computed: Vec<Result<Vec<Vec<f64>>>> = run_workers(w, threads, |wkr| {
        (0..w)
            .map(|src| {
                let buf = &delivered[wkr * w + src];
                let lab = &labels[src * w + wkr];
                let mut out = Vec::with_capacity(buf.data.len());
                for (r, &(_, e)) in lab.iter().enumerate() {
                    let y = expert_forward(&layer.experts[e], &buf.data[r * d..(r + 1) * d])?;
                    out.extend_from_slice(&y);
                }
                Ok(out)
            })
            .collect()
    });

    let mut returns = Vec::with_capacity(w * w);
    for (wkr, per_src) in computed.into_iter().enumerate() {
        for (src, data) in per_src?.into_iter().enumerate() {
            returns.push(A2aBuffer {
                src: wkr,
                dst: src,
                items: labels[src * w + wkr].len(),
                data,
            });
        }
    }
    let (returned, return_comm) = all_to_all(returns, d, topo)?;

    let mut output = Matrix::zeros(n, d)?;
    for home in 0..w {
        for ew in 0..w {
            let buf = &returned[home * w + ew];
            let lab = &labels[home * w + ew];
            for (r, &(t, _)) in lab.iter().enumerate() {
                let row = output.row_mut(t);
                for (o, v) in row.iter_mut().zip(&buf.data[r * d..(r + 1) * d]) {
                    *o += v;
                }
            }
        }
    }

    Ok(StepMetrics {
        dispatch_comm,
        return_comm,
        compression_ratio: 1.0,
        lsh_overhead_flops: 0,
        output,
    })
}

/// One clustered send group: the tokens a source worker routes to one expert.
struct SendGroup {
    expert: usize,
    tokens: Vec<usize>,
    clustering: Clustering,
}

/// Compressed step: cluster each (source worker, expert) send group, ship
/// centroids both ways, then add the retained residuals back to the expert
/// outputs before reassembly.
pub fn step_lsh(
    tokens: &Matrix,
    layer: &MoeLayer,
    topo: &ClusterTopology,
    cfg: &HashFamilyConfig,
    threads: usize,
) -> Result<StepMetrics> {
    if cfg.dim != tokens.cols() {
        return Err(Error::DimensionMismatch {
            what: "hash dim vs token dim",
            expected: tokens.cols(),
            got: cfg.dim,
        });
    }
    let funcs = LshFunctions::build(cfg)?;
    let disp = dispatch(tokens, layer, topo)?;
    let n = tokens.rows();
    let d = tokens.cols();
    let w = topo.workers;
    let labels = wire_labels(&disp, topo, n);

    let mut groups: Vec<Vec<SendGroup>> = Vec::with_capacity(w * w);
    let mut send = Vec::with_capacity(w * w);
    let mut total_centroids = 0usize;
    for src in 0..w {
        for dst in 0..w {
            let lab = &labels[src * w + dst];
            let mut pair_groups = Vec::new();
            let mut data = Vec::new();
            let mut items = 0usize;
            let mut i = 0;
            while i < lab.len() {
                let expert = lab[i].1;
                let mut j = i;
                while j < lab.len() && lab[j].1 == expert {
                    j += 1;
                }
                let group_tokens: Vec<usize> = lab[i..j].iter().map(|&(t, _)| t).collect();
                let rows: Vec<&[f64]> = group_tokens.iter().map(|&t| tokens.row(t)).collect();
                let sub = Matrix::from_rows(&rows)?;
                let clustering = cluster_with(&sub, &funcs)?;
                for b in 0..clustering.n_buckets() {
                    data.extend_from_slice(clustering.centroids().row(b));
                }
                items += clustering.n_buckets();
                total_centroids += clustering.n_buckets();
                pair_groups.push(SendGroup {
                    expert,
                    tokens: group_tokens,
                    clustering,
                });
                i = j;
            }
            groups.push(pair_groups);
            send.push(A2aBuffer {
                src,
                dst,
                items,
                data,
            });
        }
    }
    let (delivered, dispatch_comm) = all_to_all(send, d, topo)?;

    let computed: Vec<Result<Vec<Vec<f64>>>> = run_workers(w, threads, |wkr| {
        (0..w)
            .map(|src| {
                let buf = &delivered[wkr * w + src];
                let mut out = Vec::with_capacity(buf.data.len());
                let mut row = 0usize;
                for group in &groups[src * w + wkr] {
                    for _ in 0..group.clustering.n_buckets() {
                        let y = expert_forward(
                            &layer.experts[group.expert],
                            &buf.data[row * d..(row + 1) * d],
                        )?;
                        out.extend_from_slice(&y);
                        row += 1;
                    }
                }
                Ok(out)
            })
            .collect()
    });

    let mut returns = Vec::with_capacity(w * w);
    for (wkr, per_src) in computed.into_iter().enumerate() {
        for (src, data) in per_src?.into_iter().enumerate() {
            returns.push(A2aBuffer {
                src: wkr,
                dst: src,
                items: data.len() / d,
                data,
            });
        }
    }
    let (returned, return_comm) = all_to_all(returns, d, topo)?;

    let mut output = Matrix::zeros(n, d)?;
    for home in 0..w {
        for ew in 0..w {
            let buf = &returned[home * w + ew];
            let mut row = 0usize;
            for group in &groups[home * w + ew] {
                let nb = group.clustering.n_buckets();
                let processed = Matrix::new(nb, d, buf.data[row * d..(row + nb) * d].to_vec())?;
                let restored = reconstruct(&processed, &group.clustering)?;
                for (local, &t) in group.tokens.iter().enumerate() {
                    let out_row = output.row_mut(t);
                    for (o, v) in out_row.iter_mut().zip(restored.row(local)) {
                        *o += v;
                    }
                }
                row += nb;
            }
        }
    }

    let total_copies = disp.total_copies();
    let lsh_overhead_flops = cfg.q as u64 * total_copies as u64 * 2 * d as u64 * d as u64;

    Ok(StepMetrics {
        dispatch_comm,
        return_comm,
        compression_ratio: total_centroids as f64 / total_copies as f64,
        lsh_overhead_flops,
        output,
    })
}
