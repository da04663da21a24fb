//! Gating, FFN experts, and the dense single-machine MoE forward.
//!
//! The dense forward is the correctness oracle for the distributed step:
//! every token is scored by a linear gate, routed to its top-k experts, and
//! the selected expert outputs are summed unweighted.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            // tanh approximation of GeLU.
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
        }
    }
}

/// Linear top-k gate: scores are `weights · x`, the k best indices win.
#[derive(Debug, Clone)]
pub struct GateConfig {
    /// N×d scoring matrix.
    pub weights: Matrix,
    /// Experts activated per token.
    pub k: usize,
}

impl GateConfig {
    pub fn new(weights: Matrix, k: usize) -> Result<Self> {
        if k == 0 || k > weights.rows() {
            return Err(Error::invalid(format!(
                "k must satisfy 1 <= k <= {} experts, got {k}",
                weights.rows()
            )));
        }
        Ok(GateConfig { weights, k })
    }

    pub fn random(n_experts: usize, dim: usize, k: usize, rng: &mut RngState) -> Result<Self> {
        let weights = Matrix::new(n_experts, dim, rng.gaussian_vec(n_experts * dim))?;
        GateConfig::new(weights, k)
    }

    pub fn n_experts(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Two-layer FFN expert `W2·act(W1·x + b1) + b2`. Input and output widths are
/// both `d` by construction, which residual compensation relies on.
#[derive(Debug, Clone)]
pub struct Expert {
    w1: Matrix,
    b1: Vec<f64>,
    w2: Matrix,
    b2: Vec<f64>,
    activation: Activation,
}

impl Expert {
    pub fn new(
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        let d = w1.cols();
        let d_ffn = w1.rows();
        if b1.len() != d_ffn {
            return Err(Error::DimensionMismatch {
                what: "expert b1",
                expected: d_ffn,
                got: b1.len(),
            });
        }
        if w2.rows() != d || w2.cols() != d_ffn {
            return Err(Error::DimensionMismatch {
                what: "expert w2",
                expected: d * d_ffn,
                got: w2.rows() * w2.cols(),
            });
        }
        if b2.len() != d {
            return Err(Error::DimensionMismatch {
                what: "expert b2",
                expected: d,
                got: b2.len(),
            });
        }
        Ok(Expert {
            w1,
            b1,
            w2,
            b2,
            activation,
        })
    }

    /// Random expert with 1/sqrt(fan-in) weight scaling so outputs stay O(1).
    pub fn random(
        dim: usize,
        d_ffn: usize,
        activation: Activation,
        rng: &mut RngState,
    ) -> Result<Self> {
        let s1 = 1.0 / (dim as f64).sqrt();
        let s2 = 1.0 / (d_ffn as f64).sqrt();
        let w1 = Matrix::new(
            d_ffn,
            dim,
            rng.gaussian_vec(d_ffn * dim)
                .iter()
                .map(|v| v * s1)
                .collect(),
        )?;
        let w2 = Matrix::new(
            dim,
            d_ffn,
            rng.gaussian_vec(dim * d_ffn)
                .iter()
                .map(|v| v * s2)
                .collect(),
        )?;
        let b1 = rng.gaussian_vec(d_ffn).iter().map(|v| v * 0.1).collect();
        let b2 = rng.gaussian_vec(dim).iter().map(|v| v * 0.1).collect();
        Expert::new(w1, b1, w2, b2, activation)
    }

    /// Expert computing exactly `E(x) = x` for every input, via the
    /// `act(x) - act(-x) = x` split (holds for both ReLU and GeLU).
    pub fn identity(dim: usize) -> Result<Self> {
        Expert::affine(&Matrix::identity(dim)?, &vec![0.0; dim])
    }

    /// Expert computing exactly `E(x) = Wx + b` via the same split.
    pub fn affine(w: &Matrix, b: &[f64]) -> Result<Self> {
        if w.rows() != w.cols() {
            return Err(Error::DimensionMismatch {
                what: "affine expert matrix",
                expected: w.rows(),
                got: w.cols(),
            });
        }
        let d = w.rows();
        if b.len() != d {
            return Err(Error::DimensionMismatch {
                what: "affine expert bias",
                expected: d,
                got: b.len(),
            });
        }
        // w1 = [I; -I], w2 = [W, -W]: W(relu(x) - relu(-x)) = Wx.
        let mut w1 = Matrix::zeros(2 * d, d)?;
        for i in 0..d {
            w1.set(i, i, 1.0);
            w1.set(d + i, i, -1.0);
        }
        let mut w2 = Matrix::zeros(d, 2 * d)?;
        for i in 0..d {
            for j in 0..d {
                w2.set(i, j, w.get(i, j));
                w2.set(i, d + j, -w.get(i, j));
            }
        }
        Expert::new(w1, vec![0.0; 2 * d], w2, b.to_vec(), Activation::Relu)
    }

    pub fn dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_ffn(&self) -> usize {
        self.w1.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// One MoE layer: a gate plus its expert bank.
#[derive(Debug, Clone)]
pub struct MoeLayer {
    pub gate: GateConfig,
    pub experts: Vec<Expert>,
}

impl MoeLayer {
    pub fn new(gate: GateConfig, experts: Vec<Expert>) -> Result<Self> {
        if experts.len() != gate.n_experts() {
            return Err(Error::DimensionMismatch {
                what: "expert count vs gate rows",
                expected: gate.n_experts(),
                got: experts.len(),
            });
        }
        let d = gate.dim();
        let d_ffn = experts.first().map_or(0, Expert::d_ffn);
        for (i, e) in experts.iter().enumerate() {
            if e.dim() != d {
                return Err(Error::invalid(format!(
                    "expert {i} has dim {} but gate expects {d}",
                    e.dim()
                )));
            }
            if e.d_ffn() != d_ffn {
                return Err(Error::invalid(format!(
                    "expert {i} has d_ffn {} but expert 0 has {d_ffn}",
                    e.d_ffn()
                )));
            }
        }
        Ok(MoeLayer { gate, experts })
    }

    /// Layer with a random gate and random experts, drawn from two separate
    /// streams so gate and experts can be varied independently.
    pub fn random(
        n_experts: usize,
        k: usize,
        dim: usize,
        d_ffn: usize,
        activation: Activation,
        gate_rng: &mut RngState,
        expert_rng: &mut RngState,
    ) -> Result<Self> {
        let gate = GateConfig::random(n_experts, dim, k, gate_rng)?;
        let experts = (0..n_experts)
            .map(|_| Expert::random(dim, d_ffn, activation, expert_rng))
            .collect::<Result<Vec<_>>>()?;
        MoeLayer::new(gate, experts)
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn dim(&self) -> usize {
        self.gate.dim()
    }
}

/// Indices of the k largest gate scores, distinct, sorted ascending. Score
/// ties go to the smaller index.
pub fn gate_topk(gate: &GateConfig, x: &[f64]) -> Result<Vec<usize>> {
    let scores = gate.weights.matvec(x)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("gate scores are finite")
            .then(a.cmp(&b))
    });
    let mut top: Vec<usize> = order[..gate.k].to_vec();
    top.sort_unstable();
    Ok(top)
}

/// `W2·act(W1·x + b1) + b2`.
pub fn expert_forward(e: &Expert, x: &[f64]) -> Result<Vec<f64>> {
    let mut hidden = e.w1.matvec(x)?;
    for (h, b) in hidden.iter_mut().zip(&e.b1) {
        *h = e.activation.apply(*h + b);
    }
    let mut out = e.w2.matvec(&hidden)?;
    for (o, b) in out.iter_mut().zip(&e.b2) {
        *o += b;
    }
    Ok(out)
}

/// Dense MoE forward: per token, the unweighted sum of the gated experts'
/// outputs. Row i of the result depends only on row i of the input.
pub fn moe_forward_dense(layer: &MoeLayer, tokens: &Matrix) -> Result<Matrix> {
    if tokens.cols() != layer.dim() {
        return Err(Error::DimensionMismatch {
            what: "token dim vs layer dim",
            expected: layer.dim(),
            got: tokens.cols(),
        });
    }
    let mut out = Matrix::zeros(tokens.rows(), tokens.cols())?;
    for t in 0..tokens.rows() {
        let x = tokens.row(t);
        for e in gate_topk(&layer.gate, x)? {
            let y = expert_forward(&layer.experts[e], x)?;
            let row = out.row_mut(t);
            for (o, v) in row.iter_mut().zip(&y) {
                *o += v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_identity_gate() {
        let gate = GateConfig::new(Matrix::identity(3).unwrap(), 2).unwrap();
        // Top-2 of (0.9, 0.1, 0.5) is experts 0 and 2 (0-based).
        assert_eq!(gate_topk(&gate, &[0.9, 0.1, 0.5]).unwrap(), vec![0, 2]);
    }

    #[test]
    fn topk_k_equals_n() {
        let gate = GateConfig::new(Matrix::identity(4).unwrap(), 4).unwrap();
        assert_eq!(
            gate_topk(&gate, &[0.1, 0.4, -0.2, 0.0]).unwrap(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn topk_tie_break_smaller_index() {
        let gate = GateConfig::new(Matrix::identity(3).unwrap(), 1).unwrap();
        assert_eq!(gate_topk(&gate, &[0.7, 0.7, 0.7]).unwrap(), vec![0]);
    }

    #[test]
    fn topk_rejects_bad_k() {
        assert!(GateConfig::new(Matrix::identity(3).unwrap(), 4).is_err());
        assert!(GateConfig::new(Matrix::identity(3).unwrap(), 0).is_err());
    }

    #[test]
    fn gate_scale_invariant_when_topk_unique() {
        let mut rng = RngState::new(3, 0);
        let gate = GateConfig::random(6, 5, 2, &mut rng).unwrap();
        let x = rng.gaussian_vec(5);
        let scaled: Vec<f64> = x.iter().map(|v| v * 4.0).collect();
        assert_eq!(
            gate_topk(&gate, &x).unwrap(),
            gate_topk(&gate, &scaled).unwrap()
        );
    }

    #[test]
    fn expert_identity_on_nonnegative_input() {
        let d = 4;
        let e = Expert::new(
            Matrix::identity(d).unwrap(),
            vec![0.0; d],
            Matrix::identity(d).unwrap(),
            vec![0.0; d],
            Activation::Relu,
        )
        .unwrap();
        let x = [0.5, 0.0, 1.25, 2.0];
        assert_eq!(expert_forward(&e, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn expert_zero_input_zero_bias_gives_zero() {
        let mut rng = RngState::new(10, 0);
        let w1 = Matrix::new(6, 4, rng.gaussian_vec(24)).unwrap();
        let w2 = Matrix::new(4, 6, rng.gaussian_vec(24)).unwrap();
        let e = Expert::new(w1, vec![0.0; 6], w2, vec![0.0; 4], Activation::Relu).unwrap();
        assert_eq!(expert_forward(&e, &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // oracle is written index-by-index on purpose
    fn expert_matches_independent_evaluation() {
        // Oracle: re-derive the two-layer formula with raw index loops.
        let d = 8;
        let d_ffn = 12;
        let mut rng = RngState::new(77, 0);
        let e = Expert::random(d, d_ffn, Activation::Gelu, &mut rng).unwrap();
        let x = rng.gaussian_vec(d);

        let mut hidden = vec![0.0; d_ffn];
        for i in 0..d_ffn {
            let mut acc = e.b1[i];
            for j in 0..d {
                acc += e.w1.get(i, j) * x[j];
            }
            let c = (2.0 / std::f64::consts::PI).sqrt();
            hidden[i] = 0.5 * acc * (1.0 + (c * (acc + 0.044715 * acc * acc * acc)).tanh());
        }
        let mut expected = vec![0.0; d];
        for i in 0..d {
            let mut acc = e.b2[i];
            for j in 0..d_ffn {
                acc += e.w2.get(i, j) * hidden[j];
            }
            expected[i] = acc;
        }

        let got = expert_forward(&e, &x).unwrap();
        for (g, w) in got.iter().zip(&expected) {
            assert!((g - w).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_expert_exact_for_any_sign() {
        let e = Expert::identity(5).unwrap();
        let x = [-1.5, 2.0, -0.01, 0.0, 3.25];
        let y = expert_forward(&e, &x).unwrap();
        for (a, b) in y.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn affine_expert_matches_direct_map() {
        let mut rng = RngState::new(4, 4);
        let w = Matrix::new(4, 4, rng.gaussian_vec(16)).unwrap();
        let b = rng.gaussian_vec(4);
        let e = Expert::affine(&w, &b).unwrap();
        let x = rng.gaussian_vec(4);
        let direct: Vec<f64> = w
            .matvec(&x)
            .unwrap()
            .iter()
            .zip(&b)
            .map(|(v, bb)| v + bb)
            .collect();
        let got = expert_forward(&e, &x).unwrap();
        for (g, d) in got.iter().zip(&direct) {
            assert!((g - d).abs() <= 1e-12);
        }
    }

    #[test]
    fn dense_forward_identity_single_expert() {
        let gate = GateConfig::new(Matrix::identity(1).unwrap(), 1).unwrap();
        let layer = MoeLayer::new(gate, vec![Expert::identity(1).unwrap()]).unwrap();
        let tokens = Matrix::from_rows(&[&[2.0], &[-3.0]]).unwrap();
        let out = moe_forward_dense(&layer, &tokens).unwrap();
        assert!(out.max_abs_diff(&tokens).unwrap() <= 1e-15);
    }

    #[test]
    fn dense_forward_opposing_linear_experts_cancel() {
        // E1(x) = 2x and E2(x) = -x with k = 2 sum to x.
        let d = 3;
        let mut two = Matrix::identity(d).unwrap();
        for i in 0..d {
            two.set(i, i, 2.0);
        }
        let mut neg = Matrix::identity(d).unwrap();
        for i in 0..d {
            neg.set(i, i, -1.0);
        }
        let gate = GateConfig::new(Matrix::new(2, d, vec![0.0; 2 * d]).unwrap(), 2).unwrap();
        let layer = MoeLayer::new(
            gate,
            vec![
                Expert::affine(&two, &[0.0; 3]).unwrap(),
                Expert::affine(&neg, &[0.0; 3]).unwrap(),
            ],
        )
        .unwrap();
        let tokens = Matrix::from_rows(&[&[1.0, -2.0, 0.5]]).unwrap();
        let out = moe_forward_dense(&layer, &tokens).unwrap();
        assert!(out.max_abs_diff(&tokens).unwrap() <= 1e-12);
    }

    #[test]
    fn dense_forward_matches_per_token_loop() {
        // Oracle: explicit loop with its own top-k (full sort) and matvecs.
        let mut gate_rng = RngState::new(50, 2);
        let mut expert_rng = RngState::new(50, 3);
        let layer = MoeLayer::random(
            4,
            2,
            6,
            10,
            Activation::Relu,
            &mut gate_rng,
            &mut expert_rng,
        )
        .unwrap();
        let spec = crate::tokens::TokenGenSpec {
            n_tokens: 16,
            dim: 6,
            n_components: 2,
            spread: 0.3,
            seed: 8,
        };
        let tokens = crate::tokens::gen_tokens(&spec).unwrap();
        let out = moe_forward_dense(&layer, &tokens).unwrap();

        for t in 0..tokens.rows() {
            let x = tokens.row(t);
            let scores = layer.gate.weights.matvec(x).unwrap();
            let mut idx: Vec<usize> = (0..4).collect();
            idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            let mut expected = vec![0.0; 6];
            for &e in &idx[..2] {
                let y = expert_forward(&layer.experts[e], x).unwrap();
                for (acc, v) in expected.iter_mut().zip(&y) {
                    *acc += v;
                }
            }
            for (a, b) in out.row(t).iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn topk_always_k_distinct_sorted_in_range() {
        let mut rng = RngState::new(90, 0);
        for _ in 0..200 {
            let n = 1 + rng.next_range(16) as usize;
            let d = 1 + rng.next_range(12) as usize;
            let k = 1 + rng.next_range(n as u64) as usize;
            let gate = GateConfig::random(n, d, k, &mut rng).unwrap();
            let x = rng.gaussian_vec(d);
            let top = gate_topk(&gate, &x).unwrap();
            assert_eq!(top, gate_topk(&gate, &x).unwrap());
            assert_eq!(top.len(), k);
            assert!(top.windows(2).all(|p| p[0] < p[1]));
            assert!(top.iter().all(|&e| e < n));
        }
    }

    #[test]
    fn linear_experts_scale_with_input() {
        // All-linear experts: f(ax) = a f(x) when the gate picks the same set.
        let mut rng = RngState::new(60, 0);
        let d = 4;
        let gate = GateConfig::random(3, d, 2, &mut rng).unwrap();
        let experts: Vec<Expert> = (0..3)
            .map(|_| {
                let w = Matrix::new(d, d, rng.gaussian_vec(d * d)).unwrap();
                Expert::affine(&w, &[0.0; 4]).unwrap()
            })
            .collect();
        let layer = MoeLayer::new(gate, experts).unwrap();
        let x = rng.gaussian_vec(d);
        let selected = gate_topk(&layer.gate, &x).unwrap();
        let alpha = 2.5;
        let scaled: Vec<f64> = x.iter().map(|v| v * alpha).collect();
        assert_eq!(selected, gate_topk(&layer.gate, &scaled).unwrap());

        let tokens = Matrix::from_rows(&[&x]).unwrap();
        let stokens = Matrix::from_rows(&[&scaled]).unwrap();
        let f = moe_forward_dense(&layer, &tokens).unwrap();
        let fs = moe_forward_dense(&layer, &stokens).unwrap();
        for j in 0..d {
            assert!((fs.get(0, j) - alpha * f.get(0, j)).abs() <= 1e-9);
        }
    }
}
