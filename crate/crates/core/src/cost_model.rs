//! Closed-form step-time model: all-to-all time, compute time, their ratio,
//! axis sweeps, and an Amdahl-style speedup predictor for a given
//! compression ratio.
//!
//! Bandwidths here are in elements/s; callers working in bytes/s convert at
//! the boundary using their wire precision. Each layer contributes four
//! all-to-all instances per step (two forward, two backward).

use crate::error::{Error, Result};

/// Symbol set for the scalability analysis. `flops` is the effective rate,
/// i.e. peak times utilization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Tokens processed per GPU.
    pub n: f64,
    /// Experts activated per token.
    pub k: f64,
    /// Hidden size.
    pub h: f64,
    /// Layer count.
    pub l: f64,
    /// Server count.
    pub w: f64,
    /// Intra-machine bandwidth, elements/s.
    pub b_intra: f64,
    /// Inter-machine bandwidth, elements/s.
    pub b_inter: f64,
    /// Effective compute rate, FLOP/s.
    pub flops: f64,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n", self.n),
            ("h", self.h),
            ("l", self.l),
            ("w", self.w),
            ("b_intra", self.b_intra),
            ("b_inter", self.b_inter),
            ("flops", self.flops),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "cost parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        // k = 0 is the degenerate dense-only bound; anything below is
        // meaningless.
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(Error::invalid(format!(
                "cost parameter k must be >= 0 and finite, got {}",
                self.k
            )));
        }
        if self.w < 1.0 {
            return Err(Error::invalid("server count w must be >= 1"));
        }
        Ok(())
    }
}

/// Inputs to the speedup predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupParams {
    /// Fraction of step time spent in all-to-all.
    pub a2a_share: f64,
    /// Centroids sent per token routed.
    pub compression_ratio: f64,
    /// Clustering overhead as a fraction of the all-to-all time.
    pub overhead_share: f64,
}

impl SpeedupParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a2a_share", self.a2a_share),
            ("compression_ratio", self.compression_ratio),
            ("overhead_share", self.overhead_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        if self.a2a_share >= 1.0 {
            return Err(Error::invalid("a2a_share must be < 1"));
        }
        Ok(())
    }
}

/// All-to-all time per step. With `m = n*k/w` tokens per (src, dst) pair and
/// four instances per layer:
/// exact `4l*(m*h/B_intra + m*h*(w-1)/B_inter)`, approximate
/// `4l*(n*k/w)*h*(w-1)/B_inter`. The approximate form drops exactly the
/// intra term, so it never exceeds the exact form.
pub fn t_all_to_all(p: &CostParams, exact: bool) -> Result<f64> {
    p.validate()?;
    let m = p.n * p.k / p.w;
    let inter = 4.0 * p.l * m * p.h * (p.w - 1.0) / p.b_inter;
    if exact {
        Ok(4.0 * p.l * m * p.h / p.b_intra + inter)
    } else {
        Ok(inter)
    }
}

/// Compute time per GPU and step: `24*(1+2k)*n*l*h^2 / flops`, i.e. six
/// flops per token and activated parameter with `4*(1+2k)*l*h^2` activated
/// parameters per token.
pub fn t_compute(p: &CostParams) -> Result<f64> {
    p.validate()?;
    Ok(24.0 * (1.0 + 2.0 * p.k) * p.n * p.l * p.h * p.h / p.flops)
}

/// The all-to-all/compute ratio in closed form:
/// `(flops / 6*B_inter) * (k / (1+2k)) * ((w-1) / (w*h))`.
/// Equals `t_all_to_all(approx) / t_compute`; independent of `n` and `l`.
pub fn ratio(p: &CostParams) -> Result<f64> {
    p.validate()?;
    let hardware = p.flops / (6.0 * p.b_inter);
    let gating = p.k / (1.0 + 2.0 * p.k);
    let scale = (p.w - 1.0) / (p.w * p.h);
    Ok(hardware * gating * scale)
}

/// All-to-all share of step time implied by the ratio: `r / (1 + r)`.
pub fn share_from_ratio(r: f64) -> f64 {
    r / (1.0 + r)
}

/// Predicted end-to-end speedup when the all-to-all share `s` of the step is
/// compressed to ratio `r` with clustering overhead `o`:
/// `1 / ((1-s) + s*(r+o))`. Approaches `1/(1-s)` as `r` and `o` vanish.
pub fn predict_speedup(sp: &SpeedupParams) -> Result<f64> {
    sp.validate()?;
    let denom = (1.0 - sp.a2a_share) + sp.a2a_share * (sp.compression_ratio + sp.overhead_share);
    if denom <= 0.0 {
        return Err(Error::invalid(format!(
            "speedup denominator must be positive, got {denom}"
        )));
    }
    Ok(1.0 / denom)
}

/// Sweepable model axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Workers,
    HiddenSize,
    Layers,
    ExpertsPerToken,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "w" => Ok(SweepAxis::Workers),
            "h" => Ok(SweepAxis::HiddenSize),
            "l" => Ok(SweepAxis::Layers),
            "k" => Ok(SweepAxis::ExpertsPerToken),
            other => Err(Error::invalid(format!(
                "unknown sweep axis {other:?}, expected one of w, h, l, k"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::Workers => "w",
            SweepAxis::HiddenSize => "h",
            SweepAxis::Layers => "l",
            SweepAxis::ExpertsPerToken => "k",
        }
    }

    fn apply(self, p: &CostParams, value: f64) -> CostParams {
        let mut q = *p;
        match self {
            SweepAxis::Workers => q.w = value,
            SweepAxis::HiddenSize => q.h = value,
            SweepAxis::Layers => q.l = value,
            SweepAxis::ExpertsPerToken => q.k = value,
        }
        q
    }
}

/// One sweep row: the axis value with the resulting ratio and share.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub ratio: f64,
    pub share: f64,
}

/// Evaluate the ratio and share along one axis, in the order given.
pub fn sweep(p: &CostParams, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    values
        .iter()
        .map(|&value| {
            let r = ratio(&axis.apply(p, value))?;
            Ok(SweepRow {
                value,
                ratio: r,
                share: share_from_ratio(r),
            })
        })
        .collect()
}
