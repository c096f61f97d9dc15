//! Forward kernels shared by the tape operations and the value-level
//! wrappers in `model` and `attention`.

/// Numerically stable logistic function.
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax over a `rows x cols` row-major buffer, in place.
///
/// Each row is shifted by its maximum before exponentiation. Entries at or
/// below the masking sentinel (-1e30) end up with weight zero unless the
/// whole row is masked, in which case the row degenerates to uniform weights
/// over (zero-valued) masked positions.
pub(crate) fn softmax_rows_inplace(data: &mut [f64], rows: usize, cols: usize) {
    debug_assert_eq!(data.len(), rows * cols);
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        let inv = 1.0 / sum;
        for x in row.iter_mut() {
            *x *= inv;
        }
    }
}

/// RMS normalization over trailing fibers of width `d`:
/// `y = x / sqrt(mean(x^2) + eps) * gain`.
pub(crate) fn rmsnorm_forward(x: &[f64], gain: &[f64], d: usize, eps: f64) -> Vec<f64> {
    debug_assert_eq!(x.len() % d, 0);
    debug_assert_eq!(gain.len(), d);
    let mut out = Vec::with_capacity(x.len());
    for fiber in x.chunks_exact(d) {
        let ms = fiber.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let inv = 1.0 / (ms + eps).sqrt();
        for (v, g) in fiber.iter().zip(gain) {
            out.push(v * inv * g);
        }
    }
    out
}

/// Rotary rotation of adjacent feature pairs. Row `r` of the `rows x d`
/// buffer is rotated by angles `positions[r] * base^(-2j/d)` for pair `j`;
/// `flip` negates the angles (used for the backward pass).
pub(crate) fn rotary_forward(
    x: &[f64],
    rows: usize,
    d: usize,
    positions: &[f64],
    base: f64,
    flip: bool,
) -> Vec<f64> {
    debug_assert_eq!(d % 2, 0);
    debug_assert_eq!(positions.len(), rows);
    let mut out = vec![0.0; x.len()];
    let half = d / 2;
    for r in 0..rows {
        let pos = if flip { -positions[r] } else { positions[r] };
        let src = &x[r * d..(r + 1) * d];
        let dst = &mut out[r * d..(r + 1) * d];
        for j in 0..half {
            let theta = pos * base.powf(-2.0 * j as f64 / d as f64);
            let (s, c) = theta.sin_cos();
            let a = src[2 * j];
            let b = src[2 * j + 1];
            dst[2 * j] = c * a - s * b;
            dst[2 * j + 1] = s * a + c * b;
        }
    }
    out
}

/// Stable binary cross-entropy with logits for one element:
/// `softplus(z) - z*y`.
pub(crate) fn bce_term(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// Product over a strided axis, computed in log-magnitude/sign space to
/// avoid overflow. Returns (product, sign, log-magnitude-sum over nonzeros,
/// zero count) for backward use.
pub(crate) fn signed_log_product(values: impl Iterator<Item = f64>) -> (f64, f64, f64, usize) {
    let mut sign = 1.0;
    let mut log_sum = 0.0;
    let mut zeros = 0usize;
    for v in values {
        if v == 0.0 {
            zeros += 1;
        } else {
            if v < 0.0 {
                sign = -sign;
            }
            log_sum += v.abs().ln();
        }
    }
    let product = if zeros > 0 { 0.0 } else { sign * log_sum.exp() };
    (product, sign, log_sum, zeros)
}
