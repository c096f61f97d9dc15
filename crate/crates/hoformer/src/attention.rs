//! Attention over third-order inputs `(N variables, T timesteps, d features)`
//! in four forms that share one configuration type:
//!
//! - [`standard_attention`]: softmax attention over a flat token matrix;
//! - [`exact_ho_attention`]: the fourth-order reference. Scores index pairs
//!   of (variable, time) positions jointly, the score tensor lives in
//!   `R^{N x N x T x T}` and costs `O(N^2 T^2 d)`; this path is the oracle
//!   the cheaper variants are verified against;
//! - [`factored_attention`]: a stock-wise `N x N` matrix and a time-wise
//!   `T x T` matrix computed from pooled queries/keys and applied
//!   sequentially as mode products (`O(d(N^2 T + T^2 N))`);
//! - [`kernelized_factored_attention`]: the factored form with both softmax
//!   matrices replaced by positive random-feature maps and a diagonal
//!   normalizer, never materialized (`O(d^2 N T)`).
//!
//! Multi-head attention stands in for an explicit rank-R sum of Kronecker
//! factors; the rank-R machinery itself lives in [`crate::kron`].
//!
//! Flattening convention: joint (variable, time) indices flatten
//! variable-major, `row = i * T + t`, matching the row-major layout of the
//! input tensor. The Kronecker-materialization oracle in the tests depends
//! on this order.

use std::fmt;

use crate::autodiff::{Tape, Var};
use crate::rng::Rng;
use crate::tensor::{self, DenseTensor, TensorError};

/// Additive logit for masked-out attention targets.
pub(crate) const MASK_BIAS: f64 = -1e30;

#[derive(Debug, Clone, PartialEq)]
pub enum AttentionError {
    Tensor(TensorError),
    Config(String),
    /// Kernel feature computation overflowed.
    NonFiniteFeatures,
    /// A normalizer diagonal entry was zero, negative or non-finite.
    DegenerateNormalizer,
}

impl fmt::Display for AttentionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionError::Tensor(e) => write!(f, "{e}"),
            AttentionError::Config(msg) => write!(f, "invalid attention config: {msg}"),
            AttentionError::NonFiniteFeatures => write!(f, "kernel features overflowed"),
            AttentionError::DegenerateNormalizer => {
                write!(f, "degenerate kernel attention normalizer")
            }
        }
    }
}

impl std::error::Error for AttentionError {}

impl From<TensorError> for AttentionError {
    fn from(e: TensorError) -> Self {
        AttentionError::Tensor(e)
    }
}

pub type Result<T> = std::result::Result<T, AttentionError>;

/// Which attention computation to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionVariant {
    Exact,
    Factored,
    Kernelized,
}

impl AttentionVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionVariant::Exact => "exact",
            AttentionVariant::Factored => "factored",
            AttentionVariant::Kernelized => "kernelized",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(AttentionVariant::Exact),
            "factored" => Ok(AttentionVariant::Factored),
            "kernelized" => Ok(AttentionVariant::Kernelized),
            other => Err(AttentionError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

/// Permutation-invariant pooling used to collapse one axis before computing
/// the lower-order attention matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Sum,
    Mean,
    Product,
}

impl PoolKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PoolKind::Sum => "sum",
            PoolKind::Mean => "mean",
            PoolKind::Product => "product",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(PoolKind::Sum),
            "mean" => Ok(PoolKind::Mean),
            "product" => Ok(PoolKind::Product),
            other => Err(AttentionError::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Which attention axes are active. `StockWise` keeps only the `N x N`
/// matrix (the time-wise factor degrades to position alignment), `TimeWise`
/// keeps only the `T x T` matrix. Used by the ablation modes; bypassing
/// attention entirely is the caller's job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionScope {
    Both,
    StockWise,
    TimeWise,
}

#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub variant: AttentionVariant,
    pub heads: usize,
    pub head_size: usize,
    pub pooling: PoolKind,
    /// Random-feature dimension; kernelized variant only.
    pub feature_count: usize,
    /// Seed for feature-map sampling.
    pub seed: u64,
    /// Divide logits by sqrt(head_size) instead of sqrt(d).
    pub scale_by_head_size: bool,
}

impl AttentionConfig {
    pub fn new(variant: AttentionVariant, heads: usize, head_size: usize) -> Self {
        Self {
            variant,
            heads,
            head_size,
            pooling: PoolKind::Mean,
            feature_count: 64,
            seed: 0,
            scale_by_head_size: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_size == 0 {
            return Err(AttentionError::Config("heads and head_size must be positive".into()));
        }
        if matches!(self.variant, AttentionVariant::Kernelized) && self.feature_count == 0 {
            return Err(AttentionError::Config(
                "feature_count must be >= 1 for the kernelized variant".into(),
            ));
        }
        Ok(())
    }

    /// Logit multiplier for model width `d`.
    pub fn scale(&self, d: usize) -> f64 {
        let base = if self.scale_by_head_size { self.head_size } else { d };
        1.0 / (base as f64).sqrt()
    }
}

/// Projection weights for one head: `w_q`, `w_k`, `w_v` map features
/// `d -> d_H` (stored as the `(d_H, d)` mode-product matrices), `w_o` maps
/// back `d_H -> d`.
#[derive(Debug, Clone)]
pub struct AttentionHeadParams {
    pub w_q: DenseTensor,
    pub w_k: DenseTensor,
    pub w_v: DenseTensor,
    pub w_o: DenseTensor,
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<AttentionHeadParams>,
}

impl AttentionParams {
    /// Gaussian initialization scaled by fan-in.
    pub fn init(d: usize, cfg: &AttentionConfig, rng: &mut Rng) -> Self {
        let dh = cfg.head_size;
        let proj_sd = 1.0 / (d as f64).sqrt();
        let out_sd = 1.0 / (dh as f64).sqrt();
        let heads = (0..cfg.heads)
            .map(|_| AttentionHeadParams {
                w_q: DenseTensor::from_fn(&[dh, d], |_| rng.normal() * proj_sd),
                w_k: DenseTensor::from_fn(&[dh, d], |_| rng.normal() * proj_sd),
                w_v: DenseTensor::from_fn(&[dh, d], |_| rng.normal() * proj_sd),
                w_o: DenseTensor::from_fn(&[d, dh], |_| rng.normal() * out_sd),
            })
            .collect();
        Self { heads }
    }
}

/// Materialized stock-wise and time-wise attention matrices of one head.
/// Every row of both matrices is a probability distribution.
#[derive(Debug, Clone)]
pub struct FactoredAttentionMatrices {
    pub s1: DenseTensor,
    pub s2: DenseTensor,
}

/// Kernel feature-map kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// `phi(x)_j = m^{-1/2} exp(w_j . x - |x|^2 / 2)`; strictly positive.
    PositiveRandom,
    /// `phi(x)_j = elu(w_j . x) + 1`; positive except in the limit.
    EluShift,
}

/// Sampled feature directions for kernelized attention. Deterministic per
/// seed.
#[derive(Debug, Clone)]
pub struct KernelFeatureMap {
    pub projection: DenseTensor,
    pub kind: FeatureKind,
    pub seed: u64,
}

impl KernelFeatureMap {
    /// Sample `m` i.i.d. standard-normal rows of width `head_size`.
    pub fn sample(m: usize, head_size: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from(seed);
        Self {
            projection: DenseTensor::from_fn(&[m, head_size], |_| rng.normal()),
            kind: FeatureKind::PositiveRandom,
            seed,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.projection.shape()[0]
    }
}

// ---------------------------------------------------------------------------
// Tape-level machinery (shared with the model module)
// ---------------------------------------------------------------------------

/// Per-head projection variables on a tape.
pub(crate) struct HeadVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

/// Everything `attend` needs besides the two streams and the head weights.
pub(crate) struct AttendSpec {
    pub variant: AttentionVariant,
    pub pooling: PoolKind,
    pub scope: AttentionScope,
    /// Logit multiplier (1/sqrt(d) by default).
    pub scale: f64,
    /// Apply rotary rotations to the time-wise queries/keys.
    pub rotary: bool,
    /// Time positions of the query stream (length Tq).
    pub q_positions: Vec<f64>,
    /// Time positions of the key/value stream (length Tk).
    pub k_positions: Vec<f64>,
    /// Optional (Nk, Tk) visibility mask, 1.0 = visible. Fully-masked days
    /// are excluded from time-wise attention; per-entry gaps are expected
    /// to carry zeroed features upstream.
    pub key_mask: Option<DenseTensor>,
    /// Per-head feature projections, kernelized variant only.
    pub feature_maps: Vec<DenseTensor>,
}

impl AttendSpec {
    pub fn self_attention(cfg: &AttentionConfig, d: usize, n_steps: usize) -> Self {
        let positions: Vec<f64> = (0..n_steps).map(|p| p as f64).collect();
        Self {
            variant: cfg.variant,
            pooling: cfg.pooling,
            scope: AttentionScope::Both,
            scale: cfg.scale(d),
            rotary: false,
            q_positions: positions.clone(),
            k_positions: positions,
            key_mask: None,
            feature_maps: Vec::new(),
        }
    }

    fn day_mask(&self) -> Option<Vec<f64>> {
        self.key_mask.as_ref().map(|m| {
            let (n, t) = (m.shape()[0], m.shape()[1]);
            (0..t)
                .map(|day| {
                    let visible = (0..n).any(|i| m.at(&[i, day]) != 0.0);
                    if visible {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
    }
}

fn pool(v: &Var, axis: usize, kind: PoolKind) -> Var {
    match kind {
        PoolKind::Sum => v.sum_axis(axis),
        PoolKind::Mean => v.mean_axis(axis),
        PoolKind::Product => v.prod_axis(axis),
    }
}

/// Time-alignment matrix used when the time-wise factor is ablated: entry
/// (t, tau) is 1 when the two positions coincide. Rows without a matching
/// key position stay zero, so unaligned queries receive no attended content.
fn alignment_matrix(q_positions: &[f64], k_positions: &[f64]) -> DenseTensor {
    DenseTensor::from_fn(&[q_positions.len(), k_positions.len()], |idx| {
        if q_positions[idx[0]] == k_positions[idx[1]] {
            1.0
        } else {
            0.0
        }
    })
}

fn is_identity_alignment(q_positions: &[f64], k_positions: &[f64]) -> bool {
    q_positions.len() == k_positions.len()
        && q_positions.iter().zip(k_positions).all(|(a, b)| a == b)
}

fn repeat_positions(positions: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * positions.len());
    for _ in 0..n {
        out.extend_from_slice(positions);
    }
    out
}

/// Sum over heads of the output-projected attended values; the caller adds
/// the residual stream. Queries come from `q_src`, keys and values from
/// `kv_src` (pass the same variable for self-attention).
pub(crate) fn attend(tape: &Tape, q_src: &Var, kv_src: &Var, heads: &[HeadVars], spec: &AttendSpec) -> Var {
    let qs = q_src.shape();
    let ks = kv_src.shape();
    assert_eq!(qs.len(), 3, "attend expects (N, T, d) inputs");
    assert_eq!(qs[0], ks[0], "query and key streams must carry the same variables");
    assert_eq!(qs[2], ks[2], "query and key streams must share feature width");
    let mut total: Option<Var> = None;
    for (h, head) in heads.iter().enumerate() {
        let q = q_src.mode_product(&head.w_q, 2);
        let k = kv_src.mode_product(&head.w_k, 2);
        let v = kv_src.mode_product(&head.w_v, 2);
        let attended = match spec.variant {
            AttentionVariant::Exact => exact_head(tape, &q, &k, &v, spec),
            AttentionVariant::Factored => factored_head(tape, &q, &k, &v, spec),
            AttentionVariant::Kernelized => {
                let map = &spec.feature_maps[h.min(spec.feature_maps.len().saturating_sub(1))];
                kernelized_head(tape, &q, &k, &v, map, spec)
            }
        };
        let out_h = attended.mode_product(&head.w_o, 2);
        total = Some(match total {
            Some(acc) => acc.add(&out_h),
            None => out_h,
        });
    }
    total.expect("at least one attention head")
}

fn exact_head(tape: &Tape, q: &Var, k: &Var, v: &Var, spec: &AttendSpec) -> Var {
    let (nq, tq, dh) = {
        let s = q.shape();
        (s[0], s[1], s[2])
    };
    let (nk, tk) = {
        let s = k.shape();
        (s[0], s[1])
    };
    let mut qf = q.reshape(&[nq * tq, dh]);
    let mut kf = k.reshape(&[nk * tk, dh]);
    let vf = v.reshape(&[nk * tk, dh]);
    if spec.rotary {
        qf = qf.rotary(&repeat_positions(&spec.q_positions, nq));
        kf = kf.rotary(&repeat_positions(&spec.k_positions, nk));
    }
    let mut scores = qf.matmul(&kf.transpose()).scale(spec.scale);

    // additive masking for ablation scope and masked keys
    let needs_bias = spec.scope != AttentionScope::Both || spec.key_mask.is_some();
    let mut empty_rows = vec![false; nq * tq];
    if needs_bias {
        let mut bias = DenseTensor::zeros(&[nq * tq, nk * tk]);
        for i in 0..nq {
            for t in 0..tq {
                let row = i * tq + t;
                let mut any_allowed = false;
                for j in 0..nk {
                    for tau in 0..tk {
                        let col = j * tk + tau;
                        let scope_ok = match spec.scope {
                            AttentionScope::Both => true,
                            AttentionScope::StockWise => {
                                spec.q_positions[t] == spec.k_positions[tau]
                            }
                            AttentionScope::TimeWise => j == i,
                        };
                        let mask_ok = spec
                            .key_mask
                            .as_ref()
                            .map(|m| m.at(&[j, tau]) != 0.0)
                            .unwrap_or(true);
                        if scope_ok && mask_ok {
                            any_allowed = true;
                        } else {
                            bias.set(&[row, col], MASK_BIAS);
                        }
                    }
                }
                empty_rows[row] = !any_allowed;
            }
        }
        let bias_var = tape.constant(bias);
        scores = scores.add(&bias_var);
    }

    let s = scores.softmax_rows();
    let mut attended = s.matmul(&vf);
    if empty_rows.iter().any(|&e| e) {
        // fully masked queries attend to nothing at all
        let keep = DenseTensor::from_fn(&[nq * tq, dh], |idx| {
            if empty_rows[idx[0]] {
                0.0
            } else {
                1.0
            }
        });
        let keep_var = tape.constant(keep);
        attended = attended.mul(&keep_var);
    }
    attended.reshape(&[nq, tq, dh])
}

fn factored_head(tape: &Tape, q: &Var, k: &Var, v: &Var, spec: &AttendSpec) -> Var {
    let mut attended = v.clone();
    if spec.scope != AttentionScope::TimeWise {
        let fq = pool(q, 1, spec.pooling);
        let fk = pool(k, 1, spec.pooling);
        let s1 = fq.matmul(&fk.transpose()).scale(spec.scale).softmax_rows();
        attended = attended.mode_product(&s1, 0);
    }
    match spec.scope {
        AttentionScope::StockWise => {
            if !is_identity_alignment(&spec.q_positions, &spec.k_positions) {
                let align = tape.constant(alignment_matrix(&spec.q_positions, &spec.k_positions));
                attended = attended.mode_product(&align, 1);
            }
        }
        _ => {
            let mut gq = pool(q, 0, spec.pooling);
            let mut gk = pool(k, 0, spec.pooling);
            if spec.rotary {
                gq = gq.rotary(&spec.q_positions);
                gk = gk.rotary(&spec.k_positions);
            }
            let mut logits = gq.matmul(&gk.transpose()).scale(spec.scale);
            if let Some(day_mask) = spec.day_mask() {
                let bias = DenseTensor::from_fn(&[spec.q_positions.len(), day_mask.len()], |idx| {
                    if day_mask[idx[1]] == 0.0 {
                        MASK_BIAS
                    } else {
                        0.0
                    }
                });
                let bias_var = tape.constant(bias);
                logits = logits.add(&bias_var);
            }
            let s2 = logits.softmax_rows();
            attended = attended.mode_product(&s2, 1);
        }
    }
    attended
}

/// Random-feature map on the tape: `phi(x) = m^{-1/2} exp(x W^T - |x|^2/2)`
/// after scaling inputs by `scale.sqrt()`, so that the implied kernel is
/// `exp(q . k * scale)`.
fn phi_on_tape(x: &Var, map: &Var, input_scale: f64) -> Var {
    let m = map.shape()[0] as f64;
    let xs = x.scale(input_scale);
    let prod = xs.matmul(&map.transpose());
    let sq = xs.mul(&xs).sum_axis(1).scale(0.5);
    prod.sub_colvec(&sq).exp().scale(m.powf(-0.5))
}

fn kernelized_head(tape: &Tape, q: &Var, k: &Var, v: &Var, map: &DenseTensor, spec: &AttendSpec) -> Var {
    let input_scale = spec.scale.sqrt();
    let map_var = tape.constant(map.clone());
    let m = map.shape()[0];
    let mut attended = v.clone();

    if spec.scope != AttentionScope::TimeWise {
        let fq = pool(q, 1, spec.pooling);
        let fk = pool(k, 1, spec.pooling);
        let pq = phi_on_tape(&fq, &map_var, input_scale);
        let pk = phi_on_tape(&fk, &map_var, input_scale);
        // phi(K)^T V first, then queries, then the diagonal normalizer
        let num = attended.mode_product(&pk.transpose(), 0).mode_product(&pq, 0);
        let z = pq.matmul(&pk.sum_axis(0).reshape(&[m, 1])).reshape(&[pq.shape()[0]]);
        attended = num.div_axis_vec(&z, 0);
    }
    match spec.scope {
        AttentionScope::StockWise => {
            if !is_identity_alignment(&spec.q_positions, &spec.k_positions) {
                let align = tape.constant(alignment_matrix(&spec.q_positions, &spec.k_positions));
                attended = attended.mode_product(&align, 1);
            }
        }
        _ => {
            let mut gq = pool(q, 0, spec.pooling);
            let mut gk = pool(k, 0, spec.pooling);
            if spec.rotary {
                gq = gq.rotary(&spec.q_positions);
                gk = gk.rotary(&spec.k_positions);
            }
            let pgq = phi_on_tape(&gq, &map_var, input_scale);
            let mut pgk = phi_on_tape(&gk, &map_var, input_scale);
            if let Some(day_mask) = spec.day_mask() {
                // zeroed feature rows drop masked days from both the
                // numerator and the normalizer
                let keep = DenseTensor::from_fn(&[day_mask.len(), m], |idx| day_mask[idx[0]]);
                let keep_var = tape.constant(keep);
                pgk = pgk.mul(&keep_var);
            }
            let num = attended.mode_product(&pgk.transpose(), 1).mode_product(&pgq, 1);
            let z = pgq.matmul(&pgk.sum_axis(0).reshape(&[m, 1])).reshape(&[pgq.shape()[0]]);
            attended = num.div_axis_vec(&z, 1);
        }
    }
    attended
}

pub(crate) fn head_vars_from_params(tape: &Tape, params: &AttentionParams) -> Vec<HeadVars> {
    params
        .heads
        .iter()
        .map(|h| HeadVars {
            w_q: tape.constant(h.w_q.clone()),
            w_k: tape.constant(h.w_k.clone()),
            w_v: tape.constant(h.w_v.clone()),
            w_o: tape.constant(h.w_o.clone()),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Public value-level operations
// ---------------------------------------------------------------------------

fn check_projection(x_width: usize, params: &AttentionParams) -> Result<usize> {
    let mut dh = None;
    for head in &params.heads {
        if head.w_q.shape()[1] != x_width
            || head.w_k.shape()[1] != x_width
            || head.w_v.shape()[1] != x_width
            || head.w_o.shape()[0] != x_width
        {
            return Err(AttentionError::Config("projection width does not match input".into()));
        }
        let hd = head.w_q.shape()[0];
        if head.w_k.shape()[0] != hd || head.w_v.shape()[0] != hd || head.w_o.shape()[1] != hd {
            return Err(AttentionError::Config("inconsistent head size".into()));
        }
        if *dh.get_or_insert(hd) != hd {
            return Err(AttentionError::Config("heads disagree on head size".into()));
        }
    }
    dh.ok_or_else(|| AttentionError::Config("at least one head required".into()))
}

/// Standard multi-head self-attention over a token matrix, residual
/// included: `X + sum_h S^h X W_h^V W_h^O` with row-wise softmax scores.
pub fn standard_attention(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<DenseTensor> {
    cfg.validate()?;
    if x.order() != 2 {
        return Err(AttentionError::Tensor(TensorError::NotMatrix { order: x.order() }));
    }
    let d = x.shape()[1];
    check_projection(d, params)?;
    let scale = cfg.scale(d);
    let mut out = x.clone();
    for head in &params.heads {
        let q = tensor::mode_product(x, &head.w_q, 1)?;
        let k = tensor::mode_product(x, &head.w_k, 1)?;
        let v = tensor::mode_product(x, &head.w_v, 1)?;
        let mut scores = q.matmul(&k.transpose()?)?.scale(scale);
        let (r, c) = (scores.shape()[0], scores.shape()[1]);
        crate::autodiff::kernels::softmax_rows_inplace(scores.data_mut(), r, c);
        let attended = scores.matmul(&v)?;
        out = out.add(&tensor::mode_product(&attended, &head.w_o, 1)?)?;
    }
    Ok(out)
}

/// Per-head joint attention score tensors `S in R^{N x N x T x T}` of the
/// exact higher-order path, computed definitionally (explicit loops, joint
/// softmax over the key pair axis).
pub fn exact_attention_scores(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<Vec<DenseTensor>> {
    cfg.validate()?;
    if x.order() != 3 {
        return Err(AttentionError::Tensor(TensorError::OrderOutOfRange { order: x.order() }));
    }
    let (n, t, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let dh = check_projection(d, params)?;
    let scale = cfg.scale(d);
    let mut result = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        // fiber projections
        let project = |w: &DenseTensor| -> Vec<f64> {
            let mut out = vec![0.0; n * t * dh];
            for i in 0..n {
                for tt in 0..t {
                    for r in 0..dh {
                        let mut acc = 0.0;
                        for c in 0..d {
                            acc += w.at(&[r, c]) * x.at(&[i, tt, c]);
                        }
                        out[(i * t + tt) * dh + r] = acc;
                    }
                }
            }
            out
        };
        let q = project(&head.w_q);
        let k = project(&head.w_k);
        let mut scores = DenseTensor::zeros(&[n, n, t, t]);
        for i in 0..n {
            for tt in 0..t {
                // z over the joint (j, tau) axis, then a stable softmax
                let mut z = vec![0.0; n * t];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    for tau in 0..t {
                        let mut acc = 0.0;
                        for r in 0..dh {
                            acc += q[(i * t + tt) * dh + r] * k[(j * t + tau) * dh + r];
                        }
                        let zv = acc * scale;
                        z[j * t + tau] = zv;
                        max = max.max(zv);
                    }
                }
                let mut denom = 0.0;
                for zv in z.iter_mut() {
                    *zv = (*zv - max).exp();
                    denom += *zv;
                }
                for j in 0..n {
                    for tau in 0..t {
                        scores.set(&[i, j, tt, tau], z[j * t + tau] / denom);
                    }
                }
            }
        }
        result.push(scores);
    }
    Ok(result)
}

/// Exact higher-order self-attention: scores for variable `i` at time `t`
/// attending to variable `j` at time `tau`, normalized jointly over the key
/// pair, then applied with the residual. `O(N^2 T^2 d)`; this is the
/// reference oracle for the cheaper variants.
pub fn exact_ho_attention(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<DenseTensor> {
    let scores = exact_attention_scores(x, params, cfg)?;
    let (n, t) = (x.shape()[0], x.shape()[1]);
    let dh = params.heads[0].w_q.shape()[0];
    let mut out = x.clone();
    for (head, s) in params.heads.iter().zip(&scores) {
        let v = tensor::mode_product(x, &head.w_v, 2)?;
        let mut attended = DenseTensor::zeros(&[n, t, dh]);
        for i in 0..n {
            for tt in 0..t {
                for j in 0..n {
                    for tau in 0..t {
                        let w = s.at(&[i, j, tt, tau]);
                        for r in 0..dh {
                            let cur = attended.at(&[i, tt, r]);
                            attended.set(&[i, tt, r], cur + w * v.at(&[j, tau, r]));
                        }
                    }
                }
            }
        }
        out = out.add(&tensor::mode_product(&attended, &head.w_o, 2)?)?;
    }
    Ok(out)
}

fn pool_value(q: &DenseTensor, axis: usize, kind: PoolKind) -> DenseTensor {
    let tape = Tape::new();
    let v = tape.constant(q.clone());
    pool(&v, axis, kind).value()
}

/// Pooled per-variable representation: collapse the time axis of an
/// `(N, T, d_H)` tensor to `(N, d_H)`.
pub fn pool_vars(q: &DenseTensor, kind: PoolKind) -> Result<DenseTensor> {
    if q.order() != 3 {
        return Err(AttentionError::Tensor(TensorError::OrderOutOfRange { order: q.order() }));
    }
    Ok(pool_value(q, 1, kind))
}

/// Pooled per-timestep representation: collapse the variable axis of an
/// `(N, T, d_H)` tensor to `(T, d_H)`.
pub fn pool_time(q: &DenseTensor, kind: PoolKind) -> Result<DenseTensor> {
    if q.order() != 3 {
        return Err(AttentionError::Tensor(TensorError::OrderOutOfRange { order: q.order() }));
    }
    Ok(pool_value(q, 0, kind))
}

fn run_self_attention(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    feature_maps: Vec<DenseTensor>,
) -> Result<DenseTensor> {
    cfg.validate()?;
    if x.order() != 3 {
        return Err(AttentionError::Tensor(TensorError::OrderOutOfRange { order: x.order() }));
    }
    let d = x.shape()[2];
    check_projection(d, params)?;
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let heads = head_vars_from_params(&tape, params);
    let mut spec = AttendSpec::self_attention(cfg, d, x.shape()[1]);
    spec.feature_maps = feature_maps;
    let out = attend(&tape, &xv, &xv, &heads, &spec);
    let with_residual = xv.add(&out);
    let value = with_residual.value();
    if value.data().iter().any(|v| !v.is_finite()) {
        return Err(AttentionError::NonFiniteFeatures);
    }
    Ok(value)
}

/// Kronecker-factored self-attention with residual: per head, pooled
/// queries/keys give a stock-wise `N x N` and a time-wise `T x T`
/// row-stochastic matrix, applied sequentially as mode products.
pub fn factored_attention(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<DenseTensor> {
    let mut cfg = cfg.clone();
    cfg.variant = AttentionVariant::Factored;
    run_self_attention(x, params, &cfg, Vec::new())
}

/// The factored path's materialized attention matrices per head, for
/// inspection and verification.
pub fn factored_matrices(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<Vec<FactoredAttentionMatrices>> {
    cfg.validate()?;
    if x.order() != 3 {
        return Err(AttentionError::Tensor(TensorError::OrderOutOfRange { order: x.order() }));
    }
    let d = x.shape()[2];
    check_projection(d, params)?;
    let scale = cfg.scale(d);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut out = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let wq = tape.constant(head.w_q.clone());
        let wk = tape.constant(head.w_k.clone());
        let q = xv.mode_product(&wq, 2);
        let k = xv.mode_product(&wk, 2);
        let s1 = pool(&q, 1, cfg.pooling)
            .matmul(&pool(&k, 1, cfg.pooling).transpose())
            .scale(scale)
            .softmax_rows()
            .value();
        let s2 = pool(&q, 0, cfg.pooling)
            .matmul(&pool(&k, 0, cfg.pooling).transpose())
            .scale(scale)
            .softmax_rows()
            .value();
        out.push(FactoredAttentionMatrices { s1, s2 });
    }
    Ok(out)
}

/// Positive random features `phi(x)_j = m^{-1/2} exp(w_j . x - |x|^2 / 2)`
/// (or shifted ELU features). Deterministic per map; errors on overflow.
pub fn kernel_features(x: &DenseTensor, map: &KernelFeatureMap) -> Result<DenseTensor> {
    if x.order() != 2 {
        return Err(AttentionError::Tensor(TensorError::NotMatrix { order: x.order() }));
    }
    let (n, dh) = (x.shape()[0], x.shape()[1]);
    if map.projection.shape()[1] != dh {
        return Err(AttentionError::Config("feature map width does not match input".into()));
    }
    let m = map.feature_count();
    let mut out = DenseTensor::zeros(&[n, m]);
    for i in 0..n {
        let row = &x.data()[i * dh..(i + 1) * dh];
        let half_sq: f64 = row.iter().map(|v| v * v).sum::<f64>() * 0.5;
        for j in 0..m {
            let w = &map.projection.data()[j * dh..(j + 1) * dh];
            let dot: f64 = w.iter().zip(row).map(|(&a, &b)| a * b).sum();
            let value = match map.kind {
                FeatureKind::PositiveRandom => (m as f64).powf(-0.5) * (dot - half_sq).exp(),
                FeatureKind::EluShift => {
                    if dot >= 0.0 {
                        dot + 1.0
                    } else {
                        dot.exp_m1() + 1.0
                    }
                }
            };
            if !value.is_finite() {
                return Err(AttentionError::NonFiniteFeatures);
            }
            out.set(&[i, j], value);
        }
    }
    Ok(out)
}

/// Kernelized linear attention with residual: both factored matrices are
/// replaced by `Z^{-1} phi(.) phi(.)^T` without ever materializing them.
/// `phi(f(K))^T V` is computed first, giving `O(d^2 N T)` cost; the implied
/// attention rows sum to one by construction of `Z`. Feature maps are
/// sampled per head from `cfg.seed`.
pub fn kernelized_factored_attention(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
) -> Result<DenseTensor> {
    let maps: Vec<KernelFeatureMap> = (0..params.heads.len())
        .map(|h| KernelFeatureMap::sample(cfg.feature_count, cfg.head_size, cfg.seed ^ (h as u64)))
        .collect();
    kernelized_factored_attention_with_maps(x, params, cfg, &maps)
}

/// As [`kernelized_factored_attention`] with caller-provided feature maps.
pub fn kernelized_factored_attention_with_maps(
    x: &DenseTensor,
    params: &AttentionParams,
    cfg: &AttentionConfig,
    maps: &[KernelFeatureMap],
) -> Result<DenseTensor> {
    if maps.len() != params.heads.len() {
        return Err(AttentionError::Config("one feature map per head required".into()));
    }
    for map in maps {
        if map.projection.shape()[1] != cfg.head_size {
            return Err(AttentionError::Config("feature map width does not match head size".into()));
        }
        if !matches!(map.kind, FeatureKind::PositiveRandom) {
            return Err(AttentionError::Config(
                "kernelized attention requires positive features".into(),
            ));
        }
    }
    let mut cfg = cfg.clone();
    cfg.variant = AttentionVariant::Kernelized;
    run_self_attention(x, params, &cfg, maps.iter().map(|m| m.projection.clone()).collect())
}

/// Leading-term operation counts for the three variants. Constants count
/// one multiply-add per unit:
/// exact `2 d (NT)^2`, factored `2 d (N^2 T + T^2 N)`, kernelized
/// `4 d m N T`.
pub fn flops_estimate(
    variant: AttentionVariant,
    n: usize,
    t: usize,
    d: usize,
    h: usize,
    m: usize,
) -> f64 {
    let (n, t, d, h, m) = (n as f64, t as f64, d as f64, h as f64, m as f64);
    let _ = h; // head widths sum to d in the leading term
    match variant {
        AttentionVariant::Exact => 2.0 * d * (n * t) * (n * t),
        AttentionVariant::Factored => 2.0 * d * (n * n * t + t * t * n),
        AttentionVariant::Kernelized => 4.0 * d * m * n * t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{kronecker, reshape};

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> DenseTensor {
        DenseTensor::from_fn(shape, |_| rng.normal())
    }

    fn test_setup(d: usize, heads: usize, dh: usize, seed: u64) -> (AttentionParams, AttentionConfig, Rng) {
        let cfg = AttentionConfig::new(AttentionVariant::Factored, heads, dh);
        let mut rng = Rng::seed_from(seed);
        let params = AttentionParams::init(d, &cfg, &mut rng);
        (params, cfg, rng)
    }

    #[test]
    fn standard_single_token_softmax_is_one() {
        let (params, cfg, mut rng) = test_setup(4, 1, 3, 1);
        let x = random_tensor(&[1, 4], &mut rng);
        let out = standard_attention(&x, &params, &cfg).unwrap();
        // S = [[1]]: out = x + x Wv Wo
        let v = tensor::mode_product(&x, &params.heads[0].w_v, 1).unwrap();
        let expected = x.add(&tensor::mode_product(&v, &params.heads[0].w_o, 1).unwrap()).unwrap();
        let diff = out.sub(&expected).unwrap().frobenius_norm();
        assert!(diff < 1e-12, "residual {diff}");
    }

    #[test]
    fn standard_identical_rows_give_uniform_scores() {
        let (params, cfg, _) = test_setup(4, 2, 3, 2);
        let row = [0.3, -0.7, 1.1, 0.2];
        let x = DenseTensor::from_fn(&[5, 4], |idx| row[idx[1]]);
        let out = standard_attention(&x, &params, &cfg).unwrap();
        // identical rows stay identical under uniform attention
        for i in 1..5 {
            for c in 0..4 {
                assert!((out.at(&[i, c]) - out.at(&[0, c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn standard_matches_three_loop_oracle() {
        let (params, cfg, mut rng) = test_setup(4, 2, 3, 3);
        let x = random_tensor(&[3, 4], &mut rng);
        let out = standard_attention(&x, &params, &cfg).unwrap();

        // definitional oracle with explicit loops
        let (n, d) = (3, 4);
        let dh = 3;
        let scale = 1.0 / (d as f64).sqrt();
        let mut expected = x.clone();
        for head in &params.heads {
            let project = |w: &DenseTensor, i: usize, r: usize| -> f64 {
                (0..d).map(|c| w.at(&[r, c]) * x.at(&[i, c])).sum()
            };
            for i in 0..n {
                let mut weights = vec![0.0; n];
                for j in 0..n {
                    let mut z = 0.0;
                    for r in 0..dh {
                        z += project(&head.w_q, i, r) * project(&head.w_k, j, r);
                    }
                    weights[j] = z * scale;
                }
                let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = weights.iter().map(|z| (z - max).exp()).sum();
                for j in 0..n {
                    let s = (weights[j] - max).exp() / denom;
                    for c in 0..d {
                        let mut contrib = 0.0;
                        for r in 0..dh {
                            contrib += head.w_o.at(&[c, r]) * project(&head.w_v, j, r);
                        }
                        let cur = expected.at(&[i, c]);
                        expected.set(&[i, c], cur + s * contrib);
                    }
                }
            }
        }
        let diff = out.sub(&expected).unwrap().data().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(diff < 1e-10, "max abs diff {diff}");
    }

    #[test]
    fn exact_uniform_scores_when_all_logits_equal() {
        let (mut params, cfg, mut rng) = test_setup(4, 1, 3, 4);
        params.heads[0].w_q = DenseTensor::zeros(&[3, 4]);
        let x = random_tensor(&[2, 3, 4], &mut rng);
        let scores = exact_attention_scores(&x, &params, &cfg).unwrap();
        let expected = 1.0 / 6.0;
        for v in scores[0].data() {
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_single_variable_reduces_to_standard() {
        let (params, cfg, mut rng) = test_setup(4, 2, 3, 5);
        let x = random_tensor(&[1, 5, 4], &mut rng);
        let ho = exact_ho_attention(&x, &params, &cfg).unwrap();
        let flat = standard_attention(&reshape(&x, &[5, 4]).unwrap(), &params, &cfg).unwrap();
        let diff = reshape(&ho, &[5, 4])
            .unwrap()
            .sub(&flat)
            .unwrap()
            .data()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(diff < 1e-10, "max abs diff {diff}");
    }

    #[test]
    fn exact_equals_flattened_standard_attention() {
        for seed in 0..8 {
            let (params, cfg, mut rng) = test_setup(5, 2, 4, 100 + seed);
            let x = random_tensor(&[2, 3, 5], &mut rng);
            let ho = exact_ho_attention(&x, &params, &cfg).unwrap();
            let flat = standard_attention(&reshape(&x, &[6, 5]).unwrap(), &params, &cfg).unwrap();
            let diff = reshape(&ho, &[6, 5])
                .unwrap()
                .sub(&flat)
                .unwrap()
                .data()
                .iter()
                .fold(0.0f64, |a, &b| a.max(b.abs()));
            assert!(diff < 1e-10, "seed {seed} max abs diff {diff}");
        }
    }

    #[test]
    fn pooling_edge_cases() {
        let c = DenseTensor::filled(&[3, 4, 2], 1.5);
        let pooled = pool_vars(&c, PoolKind::Mean).unwrap();
        assert_eq!(pooled, DenseTensor::filled(&[3, 2], 1.5));

        let mut rng = Rng::seed_from(6);
        let single = random_tensor(&[3, 1, 2], &mut rng);
        let pooled = pool_vars(&single, PoolKind::Mean).unwrap();
        assert_eq!(pooled.data(), reshape(&single, &[3, 2]).unwrap().data());

        let q = random_tensor(&[3, 4, 2], &mut rng);
        let sum = pool_vars(&q, PoolKind::Sum).unwrap();
        let mean = pool_vars(&q, PoolKind::Mean).unwrap();
        let diff = sum.sub(&mean.scale(4.0)).unwrap().frobenius_norm();
        assert!(diff < 1e-12);
    }

    #[test]
    fn pooling_is_permutation_invariant() {
        let mut rng = Rng::seed_from(7);
        let q = random_tensor(&[3, 4, 2], &mut rng);
        let mut permuted = DenseTensor::zeros(&[3, 4, 2]);
        let perm = [2usize, 0, 3, 1];
        for i in 0..3 {
            for t in 0..4 {
                for c in 0..2 {
                    permuted.set(&[i, t, c], q.at(&[i, perm[t], c]));
                }
            }
        }
        for kind in [PoolKind::Sum, PoolKind::Mean, PoolKind::Product] {
            let a = pool_vars(&q, kind).unwrap();
            let b = pool_vars(&permuted, kind).unwrap();
            let diff = a.sub(&b).unwrap().frobenius_norm();
            assert!(diff < 1e-12, "{kind:?} changed under permutation by {diff}");
        }
    }

    #[test]
    fn factored_single_variable_matches_standard_temporal_attention() {
        let (params, cfg, mut rng) = test_setup(4, 1, 3, 8);
        let x = random_tensor(&[1, 5, 4], &mut rng);
        let factored = factored_attention(&x, &params, &cfg).unwrap();
        let standard = standard_attention(&reshape(&x, &[5, 4]).unwrap(), &params, &cfg).unwrap();
        let diff = reshape(&factored, &[5, 4])
            .unwrap()
            .sub(&standard)
            .unwrap()
            .data()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(diff < 1e-10, "max abs diff {diff}");
    }

    #[test]
    fn factored_constant_values_pass_through() {
        // rows of S1 and S2 sum to 1, so convex combinations keep constants
        let (mut params, cfg, mut rng) = test_setup(4, 1, 3, 9);
        // make W_v map everything to a constant by zeroing it; then V = 0
        params.heads[0].w_v = DenseTensor::zeros(&[3, 4]);
        let x = random_tensor(&[3, 4, 4], &mut rng);
        let out = factored_attention(&x, &params, &cfg).unwrap();
        let diff = out.sub(&x).unwrap().frobenius_norm();
        assert!(diff < 1e-12, "zero values must leave only the residual, diff {diff}");
    }

    #[test]
    fn factored_matches_kronecker_materialization_oracle() {
        let (params, cfg, mut rng) = test_setup(8, 2, 4, 10);
        let x = random_tensor(&[3, 4, 8], &mut rng);
        let out = factored_attention(&x, &params, &cfg).unwrap();
        let mats = factored_matrices(&x, &params, &cfg).unwrap();

        // oracle: flatten V variable-major and multiply by S1 (x) S2
        let mut expected = x.clone();
        for (head, m) in params.heads.iter().zip(&mats) {
            let v = tensor::mode_product(&x, &head.w_v, 2).unwrap();
            let v_flat = reshape(&v, &[12, 4]).unwrap();
            let big = kronecker(&m.s1, &m.s2).unwrap();
            let attended = big.matmul(&v_flat).unwrap();
            let attended = reshape(&attended, &[3, 4, 4]).unwrap();
            expected = expected
                .add(&tensor::mode_product(&attended, &head.w_o, 2).unwrap())
                .unwrap();
        }
        let diff = out.sub(&expected).unwrap().data().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(diff < 1e-10, "max abs diff {diff}");
    }

    #[test]
    fn factored_matrices_are_row_stochastic() {
        let (params, cfg, mut rng) = test_setup(6, 2, 4, 11);
        let x = random_tensor(&[4, 5, 6], &mut rng);
        let mats = factored_matrices(&x, &params, &cfg).unwrap();
        for m in &mats {
            for s in [&m.s1, &m.s2] {
                let (r, c) = (s.shape()[0], s.shape()[1]);
                for i in 0..r {
                    let row_sum: f64 = (0..c).map(|j| s.at(&[i, j])).sum();
                    assert!((row_sum - 1.0).abs() < 1e-9, "row sum {row_sum}");
                    for j in 0..c {
                        assert!(s.at(&[i, j]) >= 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn factored_is_equivariant_under_variable_permutation() {
        let (params, cfg, mut rng) = test_setup(6, 2, 4, 12);
        let x = random_tensor(&[4, 3, 6], &mut rng);
        let perm = [2usize, 0, 3, 1];
        let permuted = DenseTensor::from_fn(&[4, 3, 6], |idx| x.at(&[perm[idx[0]], idx[1], idx[2]]));
        let out = factored_attention(&x, &params, &cfg).unwrap();
        let out_perm = factored_attention(&permuted, &params, &cfg).unwrap();
        for i in 0..4 {
            for t in 0..3 {
                for c in 0..6 {
                    let a = out_perm.at(&[i, t, c]);
                    let b = out.at(&[perm[i], t, c]);
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn kernel_features_at_zero() {
        let map = KernelFeatureMap::sample(16, 4, 3);
        let x = DenseTensor::zeros(&[2, 4]);
        let f = kernel_features(&x, &map).unwrap();
        let expected = (16f64).powf(-0.5);
        for v in f.data() {
            assert!((v - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_features_are_strictly_positive() {
        let map = KernelFeatureMap::sample(8, 4, 4);
        let mut rng = Rng::seed_from(5);
        for _ in 0..200 {
            let x = random_tensor(&[5, 4], &mut rng);
            let f = kernel_features(&x, &map).unwrap();
            assert!(f.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn kernel_feature_expectation_approximates_softmax_kernel() {
        // E[phi(q)^T phi(k)] = exp(q . k) for standard normal rows
        let mut rng = Rng::seed_from(6);
        let dh = 4;
        let q = DenseTensor::from_fn(&[1, dh], |_| rng.normal() * 0.4);
        let k = DenseTensor::from_fn(&[1, dh], |_| rng.normal() * 0.4);
        let dot: f64 = q.data().iter().zip(k.data()).map(|(&a, &b)| a * b).sum();
        let map = KernelFeatureMap::sample(100_000, dh, 7);
        let fq = kernel_features(&q, &map).unwrap();
        let fk = kernel_features(&k, &map).unwrap();
        let estimate: f64 = fq.data().iter().zip(fk.data()).map(|(&a, &b)| a * b).sum();
        let exact = dot.exp();
        let rel = (estimate - exact).abs() / exact;
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn kernelized_constant_values_pass_through() {
        let (mut params, cfg, mut rng) = test_setup(4, 1, 3, 13);
        params.heads[0].w_v = DenseTensor::zeros(&[3, 4]);
        let mut cfg = cfg;
        cfg.variant = AttentionVariant::Kernelized;
        cfg.feature_count = 32;
        let x = random_tensor(&[3, 4, 4], &mut rng);
        let out = kernelized_factored_attention(&x, &params, &cfg).unwrap();
        let diff = out.sub(&x).unwrap().frobenius_norm();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn kernelized_degenerate_single_cell() {
        // N = T = 1: output is X + sum_h V_h W_o^h regardless of the map
        let (params, cfg, mut rng) = test_setup(4, 2, 3, 14);
        let mut cfg = cfg;
        cfg.variant = AttentionVariant::Kernelized;
        cfg.feature_count = 8;
        let x = random_tensor(&[1, 1, 4], &mut rng);
        let out = kernelized_factored_attention(&x, &params, &cfg).unwrap();
        let mut expected = x.clone();
        for head in &params.heads {
            let v = tensor::mode_product(&x, &head.w_v, 2).unwrap();
            expected = expected.add(&tensor::mode_product(&v, &head.w_o, 2).unwrap()).unwrap();
        }
        let diff = out.sub(&expected).unwrap().frobenius_norm();
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn kernelized_implied_rows_sum_to_one() {
        // materialize Z^{-1} phi phi^T on a small case
        let map = KernelFeatureMap::sample(32, 4, 8);
        let mut rng = Rng::seed_from(15);
        let q = random_tensor(&[5, 4], &mut rng);
        let k = random_tensor(&[6, 4], &mut rng);
        let fq = kernel_features(&q, &map).unwrap();
        let fk = kernel_features(&k, &map).unwrap();
        // z_i = phi(q)_i . sum_j phi(k)_j
        let mut col_sum = vec![0.0; 32];
        for j in 0..6 {
            for c in 0..32 {
                col_sum[c] += fk.at(&[j, c]);
            }
        }
        for i in 0..5 {
            let z: f64 = (0..32).map(|c| fq.at(&[i, c]) * col_sum[c]).sum();
            assert!(z > 0.0);
            let mut row_sum = 0.0;
            for j in 0..6 {
                let s: f64 = (0..32).map(|c| fq.at(&[i, c]) * fk.at(&[j, c])).sum();
                row_sum += s / z;
            }
            assert!((row_sum - 1.0).abs() < 1e-12, "row sum {row_sum}");
        }
    }

    #[test]
    fn flops_estimates_follow_stated_asymptotics() {
        use AttentionVariant::*;
        let base = flops_estimate(Exact, 1, 1, 1, 1, 1);
        assert!(base > 0.0);
        let e1 = flops_estimate(Exact, 4, 32, 16, 2, 0);
        let e2 = flops_estimate(Exact, 4, 64, 16, 2, 0);
        assert!((e2 / e1 - 4.0).abs() < 1e-9);
        let k1 = flops_estimate(Kernelized, 4, 32, 16, 2, 64);
        let k2 = flops_estimate(Kernelized, 4, 64, 16, 2, 64);
        assert!((k2 / k1 - 2.0).abs() < 1e-9);
        // factored at N = T scales with N^3
        let f1 = flops_estimate(Factored, 8, 8, 16, 2, 0);
        let f2 = flops_estimate(Factored, 16, 16, 16, 2, 0);
        assert!((f2 / f1 - 8.0).abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = AttentionConfig::new(AttentionVariant::Kernelized, 2, 4);
        cfg.feature_count = 0;
        assert!(cfg.validate().is_err());
        cfg.feature_count = 16;
        assert!(cfg.validate().is_ok());
        assert!(AttentionVariant::parse("factored").is_ok());
        assert!(AttentionVariant::parse("bogus").is_err());
    }
}
