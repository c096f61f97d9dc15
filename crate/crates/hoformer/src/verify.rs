//! Executable invariant suites with machine-readable results. Each check
//! reports the measured value against its tolerance; `cmd verify` turns
//! failures into a non-zero exit code.

use crate::attention::{
    exact_attention_scores, exact_ho_attention, factored_attention, factored_matrices,
    kernel_features, kernelized_factored_attention_with_maps, standard_attention, AttentionConfig,
    AttentionParams, AttentionVariant, KernelFeatureMap,
};
use crate::autodiff::grad_check::grad_check;
use crate::autodiff::{backward, Tape};
use crate::data::{Date, WindowSample};
use crate::kron::{inverse_rearrange, nearest_kronecker, rearrange, reconstruct, svd};
use crate::model::{AttentionAxes, Modality, Model, ModelConfig, ParamVars};
use crate::rng::Rng;
use crate::tensor::{self, kronecker, reshape, DenseTensor};

/// One verified property: its measured value must stay at or below the
/// tolerance.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(id: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        let pass = measured.is_finite() && measured <= tolerance;
        Self { id: id.into(), measured, tolerance, pass }
    }

    pub fn to_csv_line(&self) -> String {
        format!("{},{:.6e},{:.1e},{}", self.id, self.measured, self.tolerance, self.pass)
    }
}

pub fn all_pass(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.pass)
}

fn random(shape: &[usize], rng: &mut Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.normal())
}

fn max_abs_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().data().iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

// ---------------------------------------------------------------------------
// tensor suite
// ---------------------------------------------------------------------------

pub fn tensor_suite() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0x7e50);
    let mut out = Vec::new();

    // mode product with the identity is exact
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let t = random(&[3, 4, 5], &mut rng);
        for mode in 0..3 {
            let id = DenseTensor::identity(t.shape()[mode]);
            let r = tensor::mode_product(&t, &id, mode).unwrap();
            worst = worst.max(max_abs_diff(&r, &t));
        }
    }
    out.push(CheckResult::new("tensor.mode_identity_exact", worst, 0.0));

    // matricize/mode_product consistency
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let t = random(&[3, 4, 5], &mut rng);
        for mode in 0..3 {
            let m = random(&[6, t.shape()[mode]], &mut rng);
            let lhs = tensor::matricize(&tensor::mode_product(&t, &m, mode).unwrap(), mode).unwrap();
            let rhs = m.matmul(&tensor::matricize(&t, mode).unwrap()).unwrap();
            worst = worst.max(max_abs_diff(&lhs, &rhs));
        }
    }
    out.push(CheckResult::new("tensor.matricize_mode_product_consistency", worst, 1e-12));

    // kronecker mixed product on random 3x3 / 4x4 inputs
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let a = random(&[3, 3], &mut rng);
        let b = random(&[4, 4], &mut rng);
        let x = random(&[3, 2], &mut rng);
        let y = random(&[4, 2], &mut rng);
        let lhs = kronecker(&a, &b).unwrap().matmul(&kronecker(&x, &y).unwrap()).unwrap();
        let rhs = kronecker(&a.matmul(&x).unwrap(), &b.matmul(&y).unwrap()).unwrap();
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    out.push(CheckResult::new("tensor.kronecker_mixed_product", worst, 1e-12));

    // purity: operations never mutate their inputs
    let t = random(&[3, 4, 2], &mut rng);
    let copy = t.clone();
    let _ = tensor::matricize(&t, 1).unwrap();
    let _ = tensor::mode_product(&t, &DenseTensor::identity(4), 1).unwrap();
    let _ = tensor::slice_time(&t, 2).unwrap();
    let _ = reshape(&t, &[24]).unwrap();
    let mutated = if t == copy { 0.0 } else { 1.0 };
    out.push(CheckResult::new("tensor.operations_are_pure", mutated, 0.0));

    out
}

// ---------------------------------------------------------------------------
// attention suite
// ---------------------------------------------------------------------------

pub fn attention_suite() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0xa77e);
    let mut out = Vec::new();

    // exact-oracle equivalence with flattened standard attention
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 1 + rng.below(4);
        let t = 1 + rng.below(6);
        let d = 2 + rng.below(7);
        let h = 1 + rng.below(2);
        let cfg = AttentionConfig::new(AttentionVariant::Exact, h, 2 + rng.below(4));
        let params = AttentionParams::init(d, &cfg, &mut rng);
        let x = random(&[n, t, d], &mut rng);
        let ho = exact_ho_attention(&x, &params, &cfg).unwrap();
        let flat = standard_attention(&reshape(&x, &[n * t, d]).unwrap(), &params, &cfg).unwrap();
        worst = worst.max(max_abs_diff(&reshape(&ho, &[n * t, d]).unwrap(), &flat));
    }
    out.push(CheckResult::new("attention.exact_equals_flattened_standard", worst, 1e-10));

    // factored path against the materialized Kronecker oracle
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = 1 + rng.below(4);
        let t = 1 + rng.below(6);
        let d = 2 + rng.below(7);
        let cfg = AttentionConfig::new(AttentionVariant::Factored, 1 + rng.below(2), 4);
        let params = AttentionParams::init(d, &cfg, &mut rng);
        let x = random(&[n, t, d], &mut rng);
        let result = factored_attention(&x, &params, &cfg).unwrap();
        let mats = factored_matrices(&x, &params, &cfg).unwrap();
        let mut expected = x.clone();
        for (head, m) in params.heads.iter().zip(&mats) {
            let v = tensor::mode_product(&x, &head.w_v, 2).unwrap();
            let flat = reshape(&v, &[n * t, 4]).unwrap();
            let attended = kronecker(&m.s1, &m.s2).unwrap().matmul(&flat).unwrap();
            let attended = reshape(&attended, &[n, t, 4]).unwrap();
            expected = expected.add(&tensor::mode_product(&attended, &head.w_o, 2).unwrap()).unwrap();
        }
        worst = worst.max(max_abs_diff(&result, &expected));
    }
    out.push(CheckResult::new("attention.factored_equals_kronecker_oracle", worst, 1e-10));

    // row-stochastic factor matrices
    let mut worst = 0.0f64;
    let mut min_entry = 0.0f64;
    for _ in 0..10 {
        let cfg = AttentionConfig::new(AttentionVariant::Factored, 2, 4);
        let params = AttentionParams::init(6, &cfg, &mut rng);
        let x = random(&[4, 5, 6], &mut rng);
        for m in factored_matrices(&x, &params, &cfg).unwrap() {
            for s in [&m.s1, &m.s2] {
                let (r, c) = (s.shape()[0], s.shape()[1]);
                for i in 0..r {
                    let sum: f64 = (0..c).map(|j| s.at(&[i, j])).sum();
                    worst = worst.max((sum - 1.0).abs());
                    for j in 0..c {
                        min_entry = min_entry.min(s.at(&[i, j]));
                    }
                }
            }
        }
    }
    out.push(CheckResult::new("attention.rows_sum_to_one", worst, 1e-9));
    out.push(CheckResult::new("attention.entries_nonnegative", -min_entry, 0.0));

    // kernelized implied rows sum to one exactly
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let map = KernelFeatureMap::sample(32, 4, seed);
        let q = random(&[5, 4], &mut rng);
        let k = random(&[6, 4], &mut rng);
        let fq = kernel_features(&q, &map).unwrap();
        let fk = kernel_features(&k, &map).unwrap();
        let mut col_sum = vec![0.0; 32];
        for j in 0..6 {
            for c in 0..32 {
                col_sum[c] += fk.at(&[j, c]);
            }
        }
        for i in 0..5 {
            let z: f64 = (0..32).map(|c| fq.at(&[i, c]) * col_sum[c]).sum();
            let mut row = 0.0;
            for j in 0..6 {
                let s: f64 = (0..32).map(|c| fq.at(&[i, c]) * fk.at(&[j, c])).sum();
                row += s / z;
            }
            worst = worst.max((row - 1.0).abs());
        }
    }
    out.push(CheckResult::new("attention.kernel_rows_sum_to_one", worst, 1e-12));

    // kernel fidelity: large m approaches the factored output
    let fidelity = kernel_fidelity_error(20);
    out.push(CheckResult::new("attention.kernel_fidelity_m2048", fidelity, 0.05));

    // variable-axis permutation equivariance
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let cfg = AttentionConfig::new(AttentionVariant::Factored, 2, 4);
        let params = AttentionParams::init(6, &cfg, &mut rng);
        let x = random(&[4, 3, 6], &mut rng);
        let perm = {
            let mut p: Vec<usize> = (0..4).collect();
            rng.shuffle(&mut p);
            p
        };
        let permuted = DenseTensor::from_fn(&[4, 3, 6], |idx| x.at(&[perm[idx[0]], idx[1], idx[2]]));
        let base = factored_attention(&x, &params, &cfg).unwrap();
        let other = factored_attention(&permuted, &params, &cfg).unwrap();
        for i in 0..4 {
            for t in 0..3 {
                for c in 0..6 {
                    worst = worst.max((other.at(&[i, t, c]) - base.at(&[perm[i], t, c])).abs());
                }
            }
        }
    }
    out.push(CheckResult::new("attention.stock_permutation_equivariance", worst, 1e-10));

    out
}

/// Mean relative output error of kernelized vs factored attention at
/// m = 2048, d_H = 4, N = 2, T = 8, averaged over `seeds` feature seeds.
pub fn kernel_fidelity_error(seeds: u64) -> f64 {
    let mut rng = Rng::seed_from(0xf1de);
    let d = 6;
    let cfg = AttentionConfig::new(AttentionVariant::Kernelized, 1, 4);
    let params = AttentionParams::init(d, &cfg, &mut rng);
    let x = random(&[2, 8, d], &mut rng);
    let reference = {
        let mut fcfg = cfg.clone();
        fcfg.variant = AttentionVariant::Factored;
        factored_attention(&x, &params, &fcfg).unwrap()
    };
    let norm = reference.frobenius_norm();
    let mut total = 0.0;
    for seed in 0..seeds {
        let maps = vec![KernelFeatureMap::sample(2048, 4, 1000 + seed)];
        let approx = kernelized_factored_attention_with_maps(&x, &params, &cfg, &maps).unwrap();
        total += approx.sub(&reference).unwrap().frobenius_norm() / norm;
    }
    total / seeds as f64
}

// ---------------------------------------------------------------------------
// kron suite
// ---------------------------------------------------------------------------

pub fn kron_suite() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0x4b02);
    let mut out = Vec::new();

    // full-rank reconstruction over random instances with N, T in {2,3,4}
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 2 + rng.below(3);
        let t = 2 + rng.below(3);
        let a = random(&[n * t, n * t], &mut rng);
        let rank = (n * n).min(t * t);
        let f = nearest_kronecker(&a, n, t, rank).unwrap();
        let rel = a.sub(&reconstruct(&f)).unwrap().frobenius_norm() / a.frobenius_norm();
        worst = worst.max(rel);
    }
    out.push(CheckResult::new("kron.full_rank_reconstruction", worst, 1e-10));

    // reported error matches the singular tail energy
    let mut worst = 0.0f64;
    let a = random(&[12, 12], &mut rng);
    for rank in 1..=9 {
        let f = nearest_kronecker(&a, 3, 4, rank).unwrap();
        let actual = a.sub(&reconstruct(&f)).unwrap().frobenius_norm();
        let reported = f.reconstruction_error();
        worst = worst.max((actual - reported).abs() / (1.0 + actual));
    }
    out.push(CheckResult::new("kron.error_matches_tail_energy", worst, 1e-9));

    // errors non-increasing in rank
    let mut worst_increase = 0.0f64;
    let mut previous = f64::INFINITY;
    for rank in 1..=9 {
        let f = nearest_kronecker(&a, 3, 4, rank).unwrap();
        let err = f.reconstruction_error();
        worst_increase = worst_increase.max(err - previous);
        previous = err;
    }
    out.push(CheckResult::new("kron.errors_non_increasing", worst_increase.max(0.0), 1e-12));

    // rank-1 optimality against random Kronecker candidates
    let small = random(&[4, 4], &mut rng);
    let best = nearest_kronecker(&small, 2, 2, 1).unwrap();
    let best_err = small.sub(&reconstruct(&best)).unwrap().frobenius_norm();
    let mut margin = 0.0f64;
    for _ in 0..200 {
        let b = random(&[2, 2], &mut rng);
        let c = random(&[2, 2], &mut rng);
        let err = small.sub(&kronecker(&b, &c).unwrap()).unwrap().frobenius_norm();
        margin = margin.max(best_err - err);
    }
    out.push(CheckResult::new("kron.rank1_beats_random_candidates", margin.max(0.0), 1e-12));

    // the rearrangement is an isometry and a bijection
    let big = random(&[12, 12], &mut rng);
    let r = rearrange(&big, 3, 4).unwrap();
    let norm_gap = (big.frobenius_norm() - r.data.frobenius_norm()).abs() / big.frobenius_norm();
    out.push(CheckResult::new("kron.rearrange_isometry", norm_gap, 1e-14));
    let round = inverse_rearrange(&r);
    let exact = if round.data() == big.data() { 0.0 } else { 1.0 };
    out.push(CheckResult::new("kron.rearrange_round_trip_exact", exact, 0.0));

    // SVD self-check on a random 9x16 matrix
    let m = random(&[9, 16], &mut rng);
    let decomp = svd(&m).unwrap();
    let mut rebuilt = DenseTensor::zeros(&[9, 16]);
    for row in 0..9 {
        for col in 0..16 {
            let mut acc = 0.0;
            for i in 0..decomp.sigma.len() {
                acc += decomp.sigma[i] * decomp.u.at(&[row, i]) * decomp.v.at(&[col, i]);
            }
            rebuilt.set(&[row, col], acc);
        }
    }
    let rel = m.sub(&rebuilt).unwrap().frobenius_norm() / m.frobenius_norm();
    out.push(CheckResult::new("kron.svd_reconstruction", rel, 1e-10));

    out
}

// ---------------------------------------------------------------------------
// gradients suite
// ---------------------------------------------------------------------------

/// Probe sample used by the full-model gradient checks.
pub fn gradcheck_sample(n: usize, t: usize, text_dim: usize, seed: u64) -> WindowSample {
    let mut rng = Rng::seed_from(seed);
    let start = Date::from_ymd(2015, 3, 2).unwrap();
    WindowSample {
        stocks: (0..n).map(|i| format!("S{i:02}")).collect(),
        stock_ids: (0..n).collect(),
        dates: (0..t).map(|k| start.succ(k as i32)).collect(),
        label_date: Some(start.succ(t as i32)),
        prices: DenseTensor::from_fn(&[n, t, 6], |_| rng.normal() * 0.1 + 1.0),
        text: DenseTensor::from_fn(&[n, t, text_dim], |_| rng.normal() * 0.5),
        mask: DenseTensor::filled(&[n, t], 1.0),
        labels: (0..n).map(|i| (i % 2) as f64).collect(),
        label_valid: vec![true; n],
    }
}

/// FD-check every primitive against central differences at eps = 1e-5.
pub fn primitive_gradient_checks() -> Vec<CheckResult> {
    let mut rng = Rng::seed_from(0x9bad);
    let mut out = Vec::new();
    let eps = 1e-5;

    let mut check = |id: &str,
                     params: Vec<(String, DenseTensor)>,
                     f: Box<dyn Fn(&Tape, &[crate::autodiff::Var]) -> crate::autodiff::Var>| {
        let report = grad_check(|tape, vars| f(tape, vars), &params, eps).unwrap();
        out.push(CheckResult::new(format!("grad.{id}"), report.max_rel_err(), 1e-6));
    };

    let a = random(&[4, 5], &mut rng);
    let b = random(&[5, 3], &mut rng);
    check(
        "matmul",
        vec![("a".into(), a.clone()), ("b".into(), b.clone())],
        Box::new(|_, v| v[0].matmul(&v[1]).sum_all()),
    );

    let t3 = random(&[3, 4, 5], &mut rng);
    let m = random(&[6, 4], &mut rng);
    check(
        "mode_product",
        vec![("t".into(), t3.clone()), ("m".into(), m)],
        Box::new(|_, v| v[0].mode_product(&v[1], 1).mul(&v[0].mode_product(&v[1], 1)).sum_all()),
    );

    let x = random(&[4, 6], &mut rng);
    let y = random(&[4, 6], &mut rng);
    check(
        "add_mul",
        vec![("x".into(), x.clone()), ("y".into(), y.clone())],
        Box::new(|_, v| v[0].add(&v[1]).mul(&v[0]).sum_all()),
    );
    check(
        "div",
        vec![("x".into(), x.map(|v| v + 3.0)), ("y".into(), y.map(|v| v.abs() + 1.0))],
        Box::new(|_, v| v[0].div(&v[1]).sum_all()),
    );

    let weights = random(&[3, 4], &mut rng);
    check(
        "softmax",
        vec![("x".into(), random(&[3, 4], &mut rng))],
        Box::new(move |tape, v| {
            let w = tape.constant(weights.clone());
            v[0].softmax_rows().mul(&w).sum_all()
        }),
    );

    check(
        "exp",
        vec![("x".into(), random(&[3, 4], &mut rng).scale(0.5))],
        Box::new(|_, v| v[0].exp().sum_all()),
    );
    check(
        "ln",
        vec![("x".into(), random(&[3, 4], &mut rng).map(|v| v.abs() + 0.5))],
        Box::new(|_, v| v[0].ln().sum_all()),
    );
    check(
        "sigmoid_silu",
        vec![("x".into(), random(&[3, 4], &mut rng))],
        Box::new(|_, v| v[0].sigmoid().add(&v[0].silu()).sum_all()),
    );

    let gain = random(&[6], &mut rng).map(|v| v * 0.2 + 1.0);
    check(
        "rmsnorm",
        vec![("x".into(), random(&[4, 3, 6], &mut rng)), ("gain".into(), gain)],
        Box::new(|_, v| {
            let y = v[0].rmsnorm(&v[1], 1e-6);
            y.mul(&y).sum_all()
        }),
    );

    let rotary_weights = random(&[5, 6], &mut rng);
    check(
        "rotary",
        vec![("x".into(), random(&[5, 6], &mut rng))],
        Box::new(move |tape, v| {
            let w = tape.constant(rotary_weights.clone());
            let y = v[0].rotary(&[0.0, 1.0, 2.0, 3.0, 4.0]);
            y.mul(&y).add(&y.mul(&w)).sum_all()
        }),
    );

    let pooled_src = random(&[3, 4, 5], &mut rng);
    check(
        "mean_pool",
        vec![("x".into(), pooled_src.clone())],
        Box::new(|_, v| {
            let p = v[0].mean_axis(1);
            p.mul(&p).sum_all()
        }),
    );
    check(
        "sum_pool",
        vec![("x".into(), pooled_src.clone())],
        Box::new(|_, v| {
            let p = v[0].sum_axis(0);
            p.mul(&p).sum_all()
        }),
    );
    check(
        "product_pool",
        vec![("x".into(), pooled_src.map(|v| v * 0.2 + 1.5))],
        Box::new(|_, v| v[0].prod_axis(1).sum_all()),
    );

    check(
        "cross_entropy",
        vec![("logits".into(), random(&[6], &mut rng))],
        Box::new(|_, v| v[0].bce_with_logits(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0], &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0])),
    );

    let table = random(&[5, 4], &mut rng);
    check(
        "gather_rows",
        vec![("table".into(), table)],
        Box::new(|_, v| {
            let g = v[0].gather_rows(&[0, 2, 2, 4]);
            g.mul(&g).sum_all()
        }),
    );

    check(
        "concat_index",
        vec![
            ("a".into(), random(&[2, 3, 4], &mut rng)),
            ("b".into(), random(&[2, 2, 4], &mut rng)),
        ],
        Box::new(|_, v| {
            let c = v[0].concat_axis(&v[1], 1);
            let picked = c.index_axis(1, 3);
            picked.mul(&picked).sum_all()
        }),
    );

    check(
        "sub_colvec_div_axis",
        vec![
            ("a".into(), random(&[4, 3], &mut rng)),
            ("v".into(), random(&[4], &mut rng)),
            ("z".into(), random(&[3], &mut rng).map(|x| x.abs() + 1.0)),
        ],
        Box::new(|_, v| {
            let s = v[0].sub_colvec(&v[1]);
            s.div_axis_vec(&v[2], 1).mul(&s).sum_all()
        }),
    );

    check(
        "transpose_reshape_scale",
        vec![("x".into(), random(&[3, 4], &mut rng))],
        Box::new(|_, v| {
            let y = v[0].transpose().reshape(&[2, 6]).scale(1.5).neg();
            y.mul(&y).sum_all()
        }),
    );

    out
}

/// FD-check the full encoder-decoder loss for one variant and ablation
/// mode. The probe sample and model seeds are fixed; FD uses eps = 1e-5.
pub fn model_gradient_check(variant: AttentionVariant, axes: AttentionAxes) -> CheckResult {
    let sample = gradcheck_sample(2, 5, 12, 11);
    let cfg = ModelConfig {
        hidden: 8,
        heads: 2,
        head_size: 4,
        blocks: 1,
        text_dim: 12,
        feature_count: 16,
        variant,
        axes,
        modality: Modality::Multimodal,
        seed: 0,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 2).unwrap();
    let params: Vec<(String, DenseTensor)> =
        model.params.entries().map(|(n, v)| (n.clone(), v.clone())).collect();
    let report = grad_check(
        |tape, vars| {
            let pv = ParamVars::from_slice(&model.params, vars);
            let logits = model.forward_with_vars(tape, &sample, &pv, false, None).unwrap();
            logits.bce_with_logits(&sample.labels, &[1.0, 1.0])
        },
        &params,
        1e-5,
    )
    .unwrap();
    CheckResult::new(
        format!("grad.model.{}.{}", variant.as_str(), axes.as_str()),
        report.max_rel_err(),
        1e-4,
    )
}

pub fn gradient_suite() -> Vec<CheckResult> {
    let mut out = primitive_gradient_checks();

    // gradient linearity across summed losses
    let mut rng = Rng::seed_from(0x11ea);
    let x_val = random(&[5], &mut rng);
    let a_val = random(&[5], &mut rng);
    let grad_of = |combined: bool| {
        let tape = Tape::new();
        let x = tape.param(x_val.clone());
        let a = tape.constant(a_val.clone());
        let loss = if combined {
            x.mul(&a).sum_all().add(&x.mul(&x).sum_all())
        } else {
            x.mul(&a).sum_all()
        };
        backward(&loss).unwrap().of(&x)
    };
    let g_sum = grad_of(true);
    let tape = Tape::new();
    let x = tape.param(x_val.clone());
    let g2 = backward(&x.mul(&x).sum_all()).unwrap().of(&x);
    let g1 = grad_of(false);
    let gap = max_abs_diff(&g_sum, &g1.add(&g2).unwrap());
    out.push(CheckResult::new("grad.linearity", gap, 1e-12));

    // full model, every variant and ablation mode
    for variant in [AttentionVariant::Exact, AttentionVariant::Factored, AttentionVariant::Kernelized] {
        for axes in [AttentionAxes::None, AttentionAxes::StockWise, AttentionAxes::TimeWise, AttentionAxes::Both] {
            out.push(model_gradient_check(variant, axes));
        }
    }
    out
}

/// Joint-score sanity used by `verify attention`: all-equal logits give the
/// uniform score 1/(NT).
pub fn exact_uniform_check() -> CheckResult {
    let mut rng = Rng::seed_from(0xe9);
    let cfg = AttentionConfig::new(AttentionVariant::Exact, 1, 3);
    let mut params = AttentionParams::init(4, &cfg, &mut rng);
    params.heads[0].w_q = DenseTensor::zeros(&[3, 4]);
    let x = random(&[2, 3, 4], &mut rng);
    let scores = exact_attention_scores(&x, &params, &cfg).unwrap();
    let expected = 1.0 / 6.0;
    let worst = scores[0]
        .data()
        .iter()
        .fold(0.0f64, |acc, &v| acc.max((v - expected).abs()));
    CheckResult::new("attention.uniform_scores", worst, 1e-12)
}

/// Run a named suite. `all` concatenates every suite.
pub fn run_suite(name: &str) -> Option<Vec<CheckResult>> {
    match name {
        "tensors" => Some(tensor_suite()),
        "attention" => {
            let mut v = attention_suite();
            v.push(exact_uniform_check());
            Some(v)
        }
        "kron" => Some(kron_suite()),
        "gradients" => Some(gradient_suite()),
        "all" => {
            let mut v = tensor_suite();
            v.extend(attention_suite());
            v.push(exact_uniform_check());
            v.extend(kron_suite());
            v.extend(gradient_suite());
            Some(v)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_and_kron_suites_pass() {
        for suite in [tensor_suite(), kron_suite()] {
            for check in &suite {
                assert!(check.pass, "{} measured {:.3e} tol {:.1e}", check.id, check.measured, check.tolerance);
            }
        }
    }

    #[test]
    fn attention_suite_passes() {
        for check in attention_suite() {
            assert!(check.pass, "{} measured {:.3e} tol {:.1e}", check.id, check.measured, check.tolerance);
        }
    }

    #[test]
    fn primitive_gradients_pass() {
        for check in primitive_gradient_checks() {
            assert!(check.pass, "{} measured {:.3e} tol {:.1e}", check.id, check.measured, check.tolerance);
        }
    }

    #[test]
    fn unknown_suite_is_none() {
        assert!(run_suite("bogus").is_none());
    }

    /// Mutation smoke check: a deliberately wrong softmax axis in the
    /// factored path would blow the Kronecker-oracle comparison far past
    /// its tolerance, so the suite cannot silently accept that bug.
    #[test]
    fn wrong_softmax_axis_is_caught() {
        let mut rng = Rng::seed_from(0x5111);
        let cfg = crate::attention::AttentionConfig::new(AttentionVariant::Factored, 1, 4);
        let params = AttentionParams::init(6, &cfg, &mut rng);
        let x = random(&[3, 4, 6], &mut rng);
        let good = factored_attention(&x, &params, &cfg).unwrap();
        let mats = factored_matrices(&x, &params, &cfg).unwrap();

        // simulated mutant: normalize the time-wise scores down columns
        // instead of across rows
        let m = &mats[0];
        let s2_cols = m.s2.transpose().unwrap();
        let mut wrong_s2 = s2_cols.clone();
        let (r, c) = (wrong_s2.shape()[0], wrong_s2.shape()[1]);
        crate::autodiff::kernels::softmax_rows_inplace(wrong_s2.data_mut(), r, c);
        let wrong_s2 = wrong_s2.transpose().unwrap();
        let head = &params.heads[0];
        let v = tensor::mode_product(&x, &head.w_v, 2).unwrap();
        let attended = tensor::mode_product(&tensor::mode_product(&v, &m.s1, 0).unwrap(), &wrong_s2, 1).unwrap();
        let mutant = x
            .add(&tensor::mode_product(&attended, &head.w_o, 2).unwrap())
            .unwrap();
        let diff = max_abs_diff(&mutant, &good);
        assert!(diff > 1e-3, "mutant only differs by {diff}; the oracle would miss it");
    }

    #[test]
    fn csv_lines_are_well_formed() {
        let line = CheckResult::new("x.y", 1.5e-12, 1e-10).to_csv_line();
        assert!(line.starts_with("x.y,"));
        assert!(line.ends_with(",true"));
    }
}
