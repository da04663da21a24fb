//! Locality-sensitive hashing, bucket clustering, and residual compensation.
//!
//! Two hash families are provided. Cross-polytope hashing rotates a vector by
//! a random orthogonal matrix and reports the signed index of the
//! largest-magnitude component, i.e. the nearest cross-polytope vertex.
//! Spherical-plane hashing reports the sign of a projection onto a random
//! unit normal. A composite bucket key concatenates `q` independent hash
//! values; tokens sharing a key form a bucket, represented on the wire by the
//! bucket mean while the per-token residuals stay behind for exact
//! reconstruction afterwards.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, random_orthogonal, Matrix};
use crate::rng::RngState;

/// Hash family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashFamily {
    CrossPolytope,
    SphericalPlane,
}

impl std::fmt::Display for HashFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HashFamily::CrossPolytope => write!(f, "cp"),
            HashFamily::SphericalPlane => write!(f, "sp"),
        }
    }
}

/// Configuration of a composite hash: family, number of functions, input
/// dimensionality, and the seed all functions derive from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashFamilyConfig {
    pub family: HashFamily,
    pub q: usize,
    pub dim: usize,
    pub seed: u64,
}

impl HashFamilyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::invalid("hash function count q must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("hash input dim must be >= 1"));
        }
        Ok(())
    }
}

/// Composite bucket key: the `q` hash values in fixed function order.
/// Cross-polytope components lie in `{±1, …, ±dim}`; spherical-plane
/// components are bits in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketKey(pub Vec<i32>);

/// Materialized hash functions for a config. Function `i` is derived from
/// `(seed, stream i)` independently of `q`, so the `q`-function key is always
/// a prefix of the `(q+1)`-function key and adding functions can only refine
/// the induced partition.
#[derive(Debug, Clone)]
pub struct LshFunctions {
    family: HashFamily,
    dim: usize,
    /// Cross-polytope: one rotation per function.
    rotations: Vec<Matrix>,
    /// Spherical-plane: one unit normal per function, as rows.
    normals: Option<Matrix>,
}

impl LshFunctions {
    pub fn build(cfg: &HashFamilyConfig) -> Result<Self> {
        cfg.validate()?;
        match cfg.family {
            HashFamily::CrossPolytope => {
                let rotations = (0..cfg.q)
                    .map(|i| {
                        let mut rng = RngState::new(cfg.seed, i as u64);
                        random_orthogonal(cfg.dim, &mut rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LshFunctions {
                    family: cfg.family,
                    dim: cfg.dim,
                    rotations,
                    normals: None,
                })
            }
            HashFamily::SphericalPlane => {
                let mut data = Vec::with_capacity(cfg.q * cfg.dim);
                for i in 0..cfg.q {
                    let mut rng = RngState::new(cfg.seed, i as u64);
                    let mut v = rng.gaussian_vec(cfg.dim);
                    let mut n = norm2(&v);
                    while n < 1e-12 {
                        v = rng.gaussian_vec(cfg.dim);
                        n = norm2(&v);
                    }
                    data.extend(v.iter().map(|x| x / n));
                }
                Ok(LshFunctions {
                    family: cfg.family,
                    dim: cfg.dim,
                    rotations: Vec::new(),
                    normals: Some(Matrix::new(cfg.q, cfg.dim, data)?),
                })
            }
        }
    }

    pub fn family(&self) -> HashFamily {
        self.family
    }

    pub fn q(&self) -> usize {
        match self.family {
            HashFamily::CrossPolytope => self.rotations.len(),
            HashFamily::SphericalPlane => self.normals.as_ref().map_or(0, Matrix::rows),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Composite key for one vector.
    pub fn key(&self, x: &[f64]) -> Result<BucketKey> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "hash input",
                expected: self.dim,
                got: x.len(),
            });
        }
        match self.family {
            HashFamily::CrossPolytope => {
                let mut components = Vec::with_capacity(self.rotations.len());
                for r in &self.rotations {
                    components.push(cp_hash(r, x)?);
                }
                Ok(BucketKey(components))
            }
            HashFamily::SphericalPlane => {
                let bits = sp_hash(self.normals.as_ref().expect("sp normals"), x)?;
                Ok(BucketKey(bits.into_iter().map(i32::from).collect()))
            }
        }
    }
}

/// Cross-polytope hash of `x` under rotation `r`: the 1-based index of the
/// largest-magnitude component of `r·x`, negated when that component is
/// negative. Ties go to the smallest index; a zero at the winning index
/// counts as positive. Invariant under positive scaling of `x`.
pub fn cp_hash(r: &Matrix, x: &[f64]) -> Result<i32> {
    if r.rows() != r.cols() {
        return Err(Error::DimensionMismatch {
            what: "rotation matrix",
            expected: r.rows(),
            got: r.cols(),
        });
    }
    let y = r.matvec(x)?;
    let mut best = 0usize;
    let mut best_abs = y[0].abs();
    for (i, v) in y.iter().enumerate().skip(1) {
        if v.abs() > best_abs {
            best = i;
            best_abs = v.abs();
        }
    }
    let idx = (best + 1) as i32;
    Ok(if y[best] < 0.0 { -idx } else { idx })
}

/// Spherical-plane hash: the sign bit pattern of `normals·x`, one bit per
/// row, with `dot >= 0` mapping to 1.
pub fn sp_hash(normals: &Matrix, x: &[f64]) -> Result<Vec<bool>> {
    if x.len() != normals.cols() {
        return Err(Error::DimensionMismatch {
            what: "sp hash input",
            expected: normals.cols(),
            got: x.len(),
        });
    }
    Ok((0..normals.rows())
        .map(|i| dot(normals.row(i), x) >= 0.0)
        .collect())
}

/// Composite bucket key for `x` under `cfg`, materializing the functions on
/// the fly. Callers hashing many vectors should build [`LshFunctions`] once.
pub fn bucket_key(cfg: &HashFamilyConfig, x: &[f64]) -> Result<BucketKey> {
    LshFunctions::build(cfg)?.key(x)
}

/// A bucket partition of one token group: per-token assignment, per-bucket
/// centroids (the bucket means), per-token residuals, and bucket sizes.
/// Buckets are numbered in first-appearance order over the input tokens.
#[derive(Debug, Clone)]
pub struct Clustering {
    assignment: Vec<usize>,
    centroids: Matrix,
    residuals: Matrix,
    bucket_sizes: Vec<usize>,
}

impl Clustering {
    pub fn n_tokens(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_buckets(&self) -> usize {
        self.bucket_sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn residuals(&self) -> &Matrix {
        &self.residuals
    }

    pub fn bucket_sizes(&self) -> &[usize] {
        &self.bucket_sizes
    }

    /// Buckets transmitted per token routed: `#buckets / #tokens`, in (0, 1].
    /// Smaller means more compression.
    pub fn compression_ratio(&self) -> f64 {
        self.n_buckets() as f64 / self.n_tokens() as f64
    }
}

/// Group tokens by equal composite key and extract centroids and residuals.
pub fn cluster(tokens: &Matrix, cfg: &HashFamilyConfig) -> Result<Clustering> {
    let funcs = LshFunctions::build(cfg)?;
    cluster_with(tokens, &funcs)
}

/// [`cluster`] with pre-built hash functions, for callers clustering many
/// groups under one config.
pub fn cluster_with(tokens: &Matrix, funcs: &LshFunctions) -> Result<Clustering> {
    if tokens.rows() == 0 {
        return Err(Error::invalid("cannot cluster an empty token group"));
    }
    if tokens.cols() != funcs.dim() {
        return Err(Error::DimensionMismatch {
            what: "token dim vs hash dim",
            expected: funcs.dim(),
            got: tokens.cols(),
        });
    }
    let n = tokens.rows();
    let d = tokens.cols();

    let mut bucket_of_key: HashMap<BucketKey, usize> = HashMap::new();
    let mut assignment = Vec::with_capacity(n);
    let mut bucket_sizes: Vec<usize> = Vec::new();
    for t in 0..n {
        let key = funcs.key(tokens.row(t))?;
        let next = bucket_of_key.len();
        let b = *bucket_of_key.entry(key).or_insert(next);
        if b == bucket_sizes.len() {
            bucket_sizes.push(0);
        }
        bucket_sizes[b] += 1;
        assignment.push(b);
    }

    let n_buckets = bucket_sizes.len();
    let mut centroids = Matrix::zeros(n_buckets, d)?;
    for (t, &b) in assignment.iter().enumerate() {
        let row = tokens.row(t);
        for (c, v) in centroids.row_mut(b).iter_mut().zip(row) {
            *c += v;
        }
    }
    for (b, &size) in bucket_sizes.iter().enumerate() {
        for v in centroids.row_mut(b) {
            *v /= size as f64;
        }
    }

    let mut residuals = Matrix::zeros(n, d)?;
    for (t, &b) in assignment.iter().enumerate() {
        let token_row = tokens.row(t);
        let centroid_row = centroids.row(b);
        for ((r, x), c) in residuals
            .row_mut(t)
            .iter_mut()
            .zip(token_row)
            .zip(centroid_row)
        {
            *r = x - c;
        }
    }

    Ok(Clustering {
        assignment,
        centroids,
        residuals,
        bucket_sizes,
    })
}

/// Residual compensation: given one processed output vector per bucket,
/// restore the per-token outputs as `E(centroid) + residual`, in original
/// token order. The output dimension must equal the residual dimension.
pub fn reconstruct(centroid_outputs: &Matrix, c: &Clustering) -> Result<Matrix> {
    if centroid_outputs.rows() != c.n_buckets() {
        return Err(Error::DimensionMismatch {
            what: "centroid outputs vs buckets",
            expected: c.n_buckets(),
            got: centroid_outputs.rows(),
        });
    }
    if centroid_outputs.cols() != c.dim() {
        return Err(Error::DimensionMismatch {
            what: "output dim vs residual dim",
            expected: c.dim(),
            got: centroid_outputs.cols(),
        });
    }
    let n = c.n_tokens();
    let d = c.dim();
    let mut out = Matrix::zeros(n, d)?;
    for t in 0..n {
        let b = c.assignment[t];
        let processed = centroid_outputs.row(b);
        let residual = c.residuals.row(t);
        let row = out.row_mut(t);
        for j in 0..d {
            row[j] = processed[j] + residual[j];
        }
    }
    Ok(out)
}
