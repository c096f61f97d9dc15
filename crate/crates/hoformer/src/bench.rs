//! Wall-time measurement of the attention variants over size sweeps.
//! Assertions downstream are ratio-based (how wall time scales when a
//! dimension doubles), never absolute times.

use std::time::Instant;

use crate::attention::{
    exact_ho_attention, factored_attention, flops_estimate, kernelized_factored_attention,
    AttentionConfig, AttentionParams, AttentionVariant,
};
use crate::rng::Rng;
use crate::tensor::DenseTensor;

/// Largest `N*T` the exact variant may be asked to materialize.
pub const EXACT_BENCH_GUARD: usize = 4096;

/// Minimum measured span per repetition; calls are batched until the clock
/// has advanced at least this far so that tiny cases are not noise-bound.
const MIN_SPAN_MS: f64 = 20.0;

/// Minimum calls averaged into one repetition; single-call samples are
/// bimodal under allocator churn.
const MIN_CALLS: usize = 3;

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub variant: AttentionVariant,
    pub n: usize,
    pub t: usize,
    pub d: usize,
    pub h: usize,
    pub m: usize,
    pub median_ms: f64,
    pub flops_est: f64,
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("variant,N,T,d,H,m,median_ms,flops_est\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.4},{:.3e}\n",
            r.variant.as_str(),
            r.n,
            r.t,
            r.d,
            r.h,
            r.m,
            r.median_ms,
            r.flops_est
        ));
    }
    out
}

fn head_size(d: usize, h: usize) -> usize {
    let dh = (d / h).max(2);
    if dh % 2 == 0 {
        dh
    } else {
        dh + 1
    }
}

fn build_case(
    variant: AttentionVariant,
    n: usize,
    t: usize,
    d: usize,
    h: usize,
    m: usize,
) -> Result<(DenseTensor, AttentionParams, AttentionConfig), String> {
    if matches!(variant, AttentionVariant::Exact) && n * t > EXACT_BENCH_GUARD {
        return Err(format!(
            "exact variant with N*T = {} exceeds the guard of {EXACT_BENCH_GUARD}",
            n * t
        ));
    }
    let mut cfg = AttentionConfig::new(variant, h, head_size(d, h));
    cfg.feature_count = m.max(1);
    cfg.seed = 7;
    let mut rng = Rng::seed_from(0xbe7c);
    let params = AttentionParams::init(d, &cfg, &mut rng);
    let x = DenseTensor::from_fn(&[n, t, d], |_| rng.normal());
    Ok((x, params, cfg))
}

fn run_case(x: &DenseTensor, params: &AttentionParams, cfg: &AttentionConfig) -> Result<(), String> {
    let out = match cfg.variant {
        AttentionVariant::Exact => exact_ho_attention(x, params, cfg),
        AttentionVariant::Factored => factored_attention(x, params, cfg),
        AttentionVariant::Kernelized => kernelized_factored_attention(x, params, cfg),
    };
    std::hint::black_box(out.map_err(|e| e.to_string())?);
    Ok(())
}

/// Push the allocator's dynamic mmap threshold past every working-set
/// chunk; otherwise adjacent sizes land in different allocation regimes
/// (page faults on every call versus arena reuse) and the measured ratios
/// reflect the allocator instead of the math. The ballast must stay below
/// the allocator's adaptation cap (32 MiB in glibc) to register.
fn settle_allocator() {
    for _ in 0..2 {
        let ballast = vec![0u8; 24 << 20];
        std::hint::black_box(&ballast);
        drop(ballast);
    }
}

/// One batched timing sample in milliseconds: repeat calls until the span
/// covers [`MIN_SPAN_MS`] and [`MIN_CALLS`], then average.
fn timed_sample(x: &DenseTensor, params: &AttentionParams, cfg: &AttentionConfig) -> Result<f64, String> {
    let start = Instant::now();
    let mut calls = 0usize;
    loop {
        run_case(x, params, cfg)?;
        calls += 1;
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        if elapsed >= MIN_SPAN_MS && calls >= MIN_CALLS {
            return Ok(elapsed / calls as f64);
        }
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Median per-call wall time in milliseconds over `reps` repetitions.
pub fn measure_attention_ms(
    variant: AttentionVariant,
    n: usize,
    t: usize,
    d: usize,
    h: usize,
    m: usize,
    reps: usize,
) -> Result<f64, String> {
    let (x, params, cfg) = build_case(variant, n, t, d, h, m)?;
    settle_allocator();
    run_case(&x, &params, &cfg)?;
    run_case(&x, &params, &cfg)?;
    let mut samples = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        samples.push(timed_sample(&x, &params, &cfg)?);
    }
    Ok(median(&mut samples))
}

/// Sweep the cartesian product of the dimension lists.
pub fn run_sweep(
    variant: AttentionVariant,
    ns: &[usize],
    ts: &[usize],
    ds: &[usize],
    h: usize,
    m: usize,
    reps: usize,
) -> Result<Vec<BenchRow>, String> {
    let mut rows = Vec::new();
    for &n in ns {
        for &t in ts {
            for &d in ds {
                let median_ms = measure_attention_ms(variant, n, t, d, h, m, reps)?;
                rows.push(BenchRow {
                    variant,
                    n,
                    t,
                    d,
                    h,
                    m,
                    median_ms,
                    flops_est: flops_estimate(variant, n, t, d, h, m),
                });
            }
        }
    }
    Ok(rows)
}

/// Wall-time ratio when the timestep count doubles from `t`, measured as
/// the median of per-repetition ratios. Each repetition times the two
/// sizes back to back, so slow host-level drift (frequency scaling, noisy
/// neighbors) cancels out of the ratio instead of polluting it.
pub fn doubling_ratio(
    variant: AttentionVariant,
    n: usize,
    t: usize,
    d: usize,
    h: usize,
    m: usize,
    reps: usize,
) -> Result<f64, String> {
    let (x1, p1, c1) = build_case(variant, n, t, d, h, m)?;
    let (x2, p2, c2) = build_case(variant, n, 2 * t, d, h, m)?;
    settle_allocator();
    for _ in 0..2 {
        run_case(&x1, &p1, &c1)?;
        run_case(&x2, &p2, &c2)?;
    }
    let mut ratios = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let small = timed_sample(&x1, &p1, &c1)?;
        let large = timed_sample(&x2, &p2, &c2)?;
        ratios.push(large / small);
    }
    Ok(median(&mut ratios))
}
