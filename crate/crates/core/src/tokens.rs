//! Synthetic token batches with the clustered structure real MoE activations
//! show: a Gaussian mixture whose component centers sit on the unit sphere.

use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::rng::RngState;

/// Parameters for one synthetic token batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGenSpec {
    pub n_tokens: usize,
    pub dim: usize,
    pub n_components: usize,
    /// Within-component standard deviation.
    pub spread: f64,
    pub seed: u64,
}

impl TokenGenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 {
            return Err(Error::invalid("n_tokens must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim must be >= 1"));
        }
        if self.n_components == 0 {
            return Err(Error::invalid("n_components must be >= 1"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::invalid(format!(
                "spread must be finite and >= 0, got {}",
                self.spread
            )));
        }
        Ok(())
    }
}

/// Draw component centers uniformly on the unit sphere, assign tokens
/// round-robin, and add isotropic Gaussian noise of standard deviation
/// `spread`. Deterministic given the spec's seed.
pub fn gen_tokens(spec: &TokenGenSpec) -> Result<Matrix> {
    spec.validate()?;
    let mut center_rng = RngState::new(spec.seed, 0);
    let mut noise_rng = RngState::new(spec.seed, 1);

    let mut centers = Vec::with_capacity(spec.n_components);
    for _ in 0..spec.n_components {
        let mut c = center_rng.gaussian_vec(spec.dim);
        let mut n = norm2(&c);
        while n < 1e-12 {
            c = center_rng.gaussian_vec(spec.dim);
            n = norm2(&c);
        }
        for v in &mut c {
            *v /= n;
        }
        centers.push(c);
    }

    let mut tokens = Matrix::zeros(spec.n_tokens, spec.dim)?;
    for t in 0..spec.n_tokens {
        let center = &centers[t % spec.n_components];
        let row = tokens.row_mut(t);
        for (j, v) in row.iter_mut().enumerate() {
            *v = center[j] + spec.spread * noise_rng.next_gaussian();
        }
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_single_component_rows_identical() {
        let spec = TokenGenSpec {
            n_tokens: 8,
            dim: 5,
            n_components: 1,
            spread: 0.0,
            seed: 3,
        };
        let m = gen_tokens(&spec).unwrap();
        let first = m.row(0).to_vec();
        for t in 1..8 {
            assert_eq!(m.row(t), &first[..]);
        }
    }

    #[test]
    fn zero_spread_distinct_rows_bounded_by_components() {
        let spec = TokenGenSpec {
            n_tokens: 32,
            dim: 6,
            n_components: 4,
            spread: 0.0,
            seed: 11,
        };
        let m = gen_tokens(&spec).unwrap();
        let mut distinct: Vec<Vec<f64>> = Vec::new();
        for t in 0..m.rows() {
            let row = m.row(t).to_vec();
            if !distinct.contains(&row) {
                distinct.push(row);
            }
        }
        assert_eq!(distinct.len(), 4);
    }

    #[test]
    fn deterministic() {
        let spec = TokenGenSpec {
            n_tokens: 16,
            dim: 8,
            n_components: 3,
            spread: 0.1,
            seed: 42,
        };
        let a = gen_tokens(&spec).unwrap();
        let b = gen_tokens(&spec).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn validation() {
        let mut spec = TokenGenSpec {
            n_tokens: 1,
            dim: 1,
            n_components: 1,
            spread: 0.0,
            seed: 0,
        };
        assert!(gen_tokens(&spec).is_ok());
        spec.n_components = 0;
        assert!(gen_tokens(&spec).is_err());
        spec.n_components = 1;
        spec.spread = -0.5;
        assert!(gen_tokens(&spec).is_err());
        spec.spread = 0.0;
        spec.dim = 0;
        assert!(gen_tokens(&spec).is_err());
    }

    #[test]
    fn centers_on_unit_sphere() {
        let spec = TokenGenSpec {
            n_tokens: 4,
            dim: 16,
            n_components: 4,
            spread: 0.0,
            seed: 9,
        };
        let m = gen_tokens(&spec).unwrap();
        for t in 0..4 {
            assert!((norm2(m.row(t)) - 1.0).abs() < 1e-12);
        }
    }
}
