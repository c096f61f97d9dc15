//! Nearest Kronecker-product decomposition of attention matrices.
//!
//! An `NT x NT` matrix indexed by joint (variable, time) pairs is rearranged
//! into an `N^2 x T^2` matrix under which any Kronecker product `B (x) C`
//! becomes the rank-1 outer product `vec(B) vec(C)^T`. The best rank-R sum
//! of Kronecker products in the Frobenius norm therefore falls out of the
//! truncated SVD of the rearranged matrix; at full rank
//! `R = min(N^2, T^2)` the representation is exact.
//!
//! Index conventions (row-major vec everywhere):
//! `A[(i,t), (j,tau)] = A[i*T + t, j*T + tau]` and the rearrangement is
//! `A~[i*N + j, t*T + tau] = A[(i,t), (j,tau)]`.
//!
//! The SVD is a one-sided Jacobi implemented in-repo; matrices here are at
//! most a few hundred square, where Jacobi is robust and plenty fast.

use std::fmt;

use crate::attention::{exact_attention_scores, AttentionConfig, AttentionError, AttentionParams};
use crate::tensor::{self, DenseTensor, TensorError};

/// Largest `N*T` for which the exact attention matrix may be materialized.
pub const RANK_PROFILE_GUARD: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum KronError {
    Tensor(TensorError),
    Attention(String),
    /// Input matrix is not square with side `N*T`.
    SideMismatch { rows: usize, cols: usize, n: usize, t: usize },
    RankOutOfRange { rank: usize, max: usize },
    /// Jacobi sweeps hit the iteration cap before convergence.
    NoConvergence { sweeps: usize },
    GuardExceeded { size: usize, guard: usize },
}

impl fmt::Display for KronError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KronError::Tensor(e) => write!(f, "{e}"),
            KronError::Attention(e) => write!(f, "{e}"),
            KronError::SideMismatch { rows, cols, n, t } => {
                write!(f, "matrix {rows}x{cols} is not square with side {n}*{t}")
            }
            KronError::RankOutOfRange { rank, max } => {
                write!(f, "rank {rank} outside 1..={max}")
            }
            KronError::NoConvergence { sweeps } => {
                write!(f, "Jacobi SVD did not converge within {sweeps} sweeps")
            }
            KronError::GuardExceeded { size, guard } => {
                write!(f, "joint size {size} exceeds the materialization guard {guard}")
            }
        }
    }
}

impl std::error::Error for KronError {}

impl From<TensorError> for KronError {
    fn from(e: TensorError) -> Self {
        KronError::Tensor(e)
    }
}

impl From<AttentionError> for KronError {
    fn from(e: AttentionError) -> Self {
        KronError::Attention(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, KronError>;

/// `N^2 x T^2` rearrangement of an `NT x NT` matrix. The entry mapping is a
/// bijection, so the rearrangement preserves the Frobenius norm and
/// round-trips exactly.
#[derive(Debug, Clone)]
pub struct RearrangedMatrix {
    pub data: DenseTensor,
    pub n: usize,
    pub t: usize,
}

/// Rearrange `A[(i,t),(j,tau)]` into `A~[vec(i,j), vec(t,tau)]`.
pub fn rearrange(a: &DenseTensor, n: usize, t: usize) -> Result<RearrangedMatrix> {
    if a.order() != 2 {
        return Err(KronError::Tensor(TensorError::NotMatrix { order: a.order() }));
    }
    let side = n * t;
    if a.shape()[0] != side || a.shape()[1] != side {
        return Err(KronError::SideMismatch { rows: a.shape()[0], cols: a.shape()[1], n, t });
    }
    let mut data = DenseTensor::zeros(&[n * n, t * t]);
    for i in 0..n {
        for j in 0..n {
            for tt in 0..t {
                for tau in 0..t {
                    data.set(&[i * n + j, tt * t + tau], a.at(&[i * t + tt, j * t + tau]));
                }
            }
        }
    }
    Ok(RearrangedMatrix { data, n, t })
}

/// Exact inverse of [`rearrange`].
pub fn inverse_rearrange(r: &RearrangedMatrix) -> DenseTensor {
    let (n, t) = (r.n, r.t);
    let side = n * t;
    let mut a = DenseTensor::zeros(&[side, side]);
    for i in 0..n {
        for j in 0..n {
            for tt in 0..t {
                for tau in 0..t {
                    a.set(&[i * t + tt, j * t + tau], r.data.at(&[i * n + j, tt * t + tau]));
                }
            }
        }
    }
    a
}

/// Thin SVD `M = U diag(sigma) V^T` with `k = min(rows, cols)` columns,
/// singular values descending, orthonormal `U` and `V`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseTensor,
    pub sigma: Vec<f64>,
    pub v: DenseTensor,
}

const JACOBI_MAX_SWEEPS: usize = 64;
const JACOBI_TOL: f64 = 1e-15;

/// One-sided Jacobi SVD. Columns of a working copy are orthogonalized by
/// plane rotations accumulated into `V`; singular values are the final
/// column norms.
pub fn svd(m: &DenseTensor) -> Result<Svd> {
    if m.order() != 2 {
        return Err(KronError::Tensor(TensorError::NotMatrix { order: m.order() }));
    }
    let (p, q) = (m.shape()[0], m.shape()[1]);
    if p < q {
        // factor the transpose and swap the roles of U and V
        let t = svd(&m.transpose()?)?;
        return Ok(Svd { u: t.v, sigma: t.sigma, v: t.u });
    }
    let k = q;
    // column-major working copy for cache-friendly column ops
    let mut b = vec![0.0f64; p * q];
    for i in 0..p {
        for j in 0..q {
            b[j * p + i] = m.at(&[i, j]);
        }
    }
    let mut v = vec![0.0f64; q * q];
    for j in 0..q {
        v[j * q + j] = 1.0;
    }

    let mut converged = false;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        converged = true;
        sweeps += 1;
        for i in 0..q {
            for j in (i + 1)..q {
                let (ci, cj) = (i * p, j * p);
                let mut a = 0.0;
                let mut bb = 0.0;
                let mut c = 0.0;
                for r in 0..p {
                    let x = b[ci + r];
                    let y = b[cj + r];
                    a += x * x;
                    bb += y * y;
                    c += x * y;
                }
                let denom = (a * bb).sqrt();
                if denom <= f64::MIN_POSITIVE || c.abs() <= JACOBI_TOL * denom {
                    continue;
                }
                converged = false;
                let zeta = (bb - a) / (2.0 * c);
                let tan = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cos = 1.0 / (1.0 + tan * tan).sqrt();
                let sin = cos * tan;
                for r in 0..p {
                    let x = b[ci + r];
                    let y = b[cj + r];
                    b[ci + r] = cos * x - sin * y;
                    b[cj + r] = sin * x + cos * y;
                }
                for r in 0..q {
                    let x = v[i * q + r];
                    let y = v[j * q + r];
                    v[i * q + r] = cos * x - sin * y;
                    v[j * q + r] = sin * x + cos * y;
                }
            }
        }
    }
    if !converged {
        return Err(KronError::NoConvergence { sweeps });
    }

    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k)
        .map(|j| b[j * p..(j + 1) * p].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap());

    let mut u = DenseTensor::zeros(&[p, k]);
    let mut vt = DenseTensor::zeros(&[q, k]);
    let mut sigma = Vec::with_capacity(k);
    let sigma_max = norms[order[0]].max(f64::MIN_POSITIVE);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        sigma.push(s);
        let col: Vec<f64> = if s > sigma_max * 1e-300 && s > 0.0 {
            b[j * p..(j + 1) * p].iter().map(|x| x / s).collect()
        } else {
            // null direction: complete U with a unit vector orthogonal to
            // the columns found so far
            let mut best = vec![0.0; p];
            let mut best_norm = -1.0;
            for cand in 0..p {
                let mut e = vec![0.0; p];
                e[cand] = 1.0;
                for prev in &u_cols {
                    let dot: f64 = prev.iter().zip(&e).map(|(&a, &b)| a * b).sum();
                    for (ev, pv) in e.iter_mut().zip(prev) {
                        *ev -= dot * pv;
                    }
                }
                let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > best_norm {
                    best_norm = norm;
                    best = e;
                }
            }
            let norm = best.iter().map(|x| x * x).sum::<f64>().sqrt();
            best.iter().map(|x| x / norm).collect()
        };
        for r in 0..p {
            u.set(&[r, slot], col[r]);
        }
        u_cols.push(col);
        for r in 0..q {
            vt.set(&[r, slot], v[j * q + r]);
        }
    }
    Ok(Svd { u, sigma, v: vt })
}

/// Rank-R list of Kronecker factor pairs with the full singular spectrum of
/// the rearranged matrix.
#[derive(Debug, Clone)]
pub struct KroneckerFactors {
    pub rank: usize,
    /// `(B_i, C_i)` with `B_i` of shape `(N, N)` and `C_i` of shape `(T, T)`.
    pub factors: Vec<(DenseTensor, DenseTensor)>,
    /// All `min(N^2, T^2)` singular values, descending.
    pub singular_values: Vec<f64>,
    pub n: usize,
    pub t: usize,
}

impl KroneckerFactors {
    /// Frobenius error of the rank-R reconstruction, from the tail energy
    /// `sqrt(sum_{i > R} sigma_i^2)`.
    pub fn reconstruction_error(&self) -> f64 {
        self.singular_values[self.rank..].iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

fn unvec(data: &[f64], side: usize) -> DenseTensor {
    DenseTensor::from_vec(&[side, side], data.to_vec()).unwrap()
}

/// Best rank-R sum of Kronecker products for an `NT x NT` matrix: SVD of
/// the rearrangement, `B_i = sqrt(sigma_i) * unvec(u_i)`,
/// `C_i = sqrt(sigma_i) * unvec(v_i)`. Signs are fixed by making the first
/// entry of `u_i` with magnitude above 1e-12 positive.
pub fn nearest_kronecker(a: &DenseTensor, n: usize, t: usize, rank: usize) -> Result<KroneckerFactors> {
    let max_rank = (n * n).min(t * t);
    if rank == 0 || rank > max_rank {
        return Err(KronError::RankOutOfRange { rank, max: max_rank });
    }
    let rearranged = rearrange(a, n, t)?;
    let decomp = svd(&rearranged.data)?;
    let mut factors = Vec::with_capacity(rank);
    for i in 0..rank {
        let s = decomp.sigma[i];
        let mut u_col: Vec<f64> = (0..n * n).map(|r| decomp.u.at(&[r, i])).collect();
        let mut v_col: Vec<f64> = (0..t * t).map(|r| decomp.v.at(&[r, i])).collect();
        if let Some(first) = u_col.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                u_col.iter_mut().for_each(|x| *x = -*x);
                v_col.iter_mut().for_each(|x| *x = -*x);
            }
        }
        let scale = s.sqrt();
        let b = unvec(&u_col, n).scale(scale);
        let c = unvec(&v_col, t).scale(scale);
        factors.push((b, c));
    }
    Ok(KroneckerFactors { rank, factors, singular_values: decomp.sigma, n, t })
}

/// Sum of Kronecker products of the stored factors.
pub fn reconstruct(f: &KroneckerFactors) -> DenseTensor {
    let side = f.n * f.t;
    let mut out = DenseTensor::zeros(&[side, side]);
    for (b, c) in &f.factors {
        out = out.add(&tensor::kronecker(b, c).unwrap()).unwrap();
    }
    out
}

/// One row of a rank/error profile.
#[derive(Debug, Clone, PartialEq)]
pub struct RankProfileRow {
    pub head: usize,
    pub rank: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct RankProfile {
    pub rows: Vec<RankProfileRow>,
}

impl RankProfile {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("head,R,rel_error\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{:.12e}\n", row.head, row.rank, row.rel_error));
        }
        out
    }
}

/// Materialize each head's exact attention matrix for input `x`, decompose
/// it at every rank `1..=min(N^2, T^2)` and report relative Frobenius
/// errors. Guarded: refuses inputs with `N*T` above
/// [`RANK_PROFILE_GUARD`].
pub fn attention_rank_profile(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<RankProfile> {
    if x.order() != 3 {
        return Err(KronError::Tensor(TensorError::OrderOutOfRange { order: x.order() }));
    }
    let (n, t) = (x.shape()[0], x.shape()[1]);
    if n * t > RANK_PROFILE_GUARD {
        return Err(KronError::GuardExceeded { size: n * t, guard: RANK_PROFILE_GUARD });
    }
    let scores = exact_attention_scores(x, params, cfg)?;
    let mut rows = Vec::new();
    for (head, s) in scores.iter().enumerate() {
        // flatten S[i,j,t,tau] into A[(i,t),(j,tau)]
        let side = n * t;
        let a = DenseTensor::from_fn(&[side, side], |idx| {
            let (i, tt) = (idx[0] / t, idx[0] % t);
            let (j, tau) = (idx[1] / t, idx[1] % t);
            s.at(&[i, j, tt, tau])
        });
        let norm = a.frobenius_norm();
        let max_rank = (n * n).min(t * t);
        let full = nearest_kronecker(&a, n, t, max_rank)?;
        let mut partial = DenseTensor::zeros(&[side, side]);
        for r in 1..=max_rank {
            let (b, c) = &full.factors[r - 1];
            partial = partial.add(&tensor::kronecker(b, c)?)?;
            let err = a.sub(&partial)?.frobenius_norm() / norm;
            rows.push(RankProfileRow { head, rank: r, rel_error: err });
        }
    }
    Ok(RankProfile { rows })
}
