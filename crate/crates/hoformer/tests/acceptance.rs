//! Acceptance suite: one test per shipping criterion, each printing a
//! single PASS/FAIL line (visible with `--nocapture`). Tests serialize on
//! a global gate so that the wall-time criteria are never measured while
//! another criterion trains models in parallel.

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use hoformer::ablate::axes_ablation;
use hoformer::attention::{
    factored_attention, factored_matrices, kernel_features, standard_attention, AttentionConfig,
    AttentionParams, AttentionVariant, KernelFeatureMap,
};
use hoformer::bench::{doubling_ratio, measure_attention_ms};
use hoformer::data::{label, temporal_split, Dataset, Label, LabelThresholds};
use hoformer::kron::{nearest_kronecker, reconstruct};
use hoformer::metrics::{accuracy_f1, mcc, ConfusionCounts};
use hoformer::model::{AttentionAxes, Modality, ModelConfig};
use hoformer::rng::Rng;
use hoformer::synth::{generate, SynthSpec};
use hoformer::tensor::{kronecker, mode_product, reshape, DenseTensor};
use hoformer::train::TrainConfig;
use hoformer::verify::{kernel_fidelity_error, model_gradient_check, primitive_gradient_checks};

fn gate() -> MutexGuard<'static, ()> {
    static GATE: OnceLock<Mutex<()>> = OnceLock::new();
    GATE.get_or_init(|| Mutex::new(())).lock().unwrap_or_else(|e| e.into_inner())
}

fn report(name: &str, pass: bool, detail: &str) {
    println!("ACCEPTANCE {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn random(shape: &[usize], rng: &mut Rng) -> DenseTensor {
    DenseTensor::from_fn(shape, |_| rng.normal())
}

fn max_abs_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().data().iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

#[test]
fn criterion_1_kronecker_reconstruction_exactness() {
    let _g = gate();
    let started = Instant::now();
    let mut rng = Rng::seed_from(0xacc1);
    let (n, t) = (3usize, 4usize);
    let mut worst_full = 0.0f64;
    let mut worst_tail_gap = 0.0f64;
    let mut worst_increase = 0.0f64;
    for _ in 0..20 {
        let a = random(&[12, 12], &mut rng);
        let norm = a.frobenius_norm();
        let mut previous = f64::INFINITY;
        for rank in 1..=9 {
            let f = nearest_kronecker(&a, n, t, rank).unwrap();
            let actual = a.sub(&reconstruct(&f)).unwrap().frobenius_norm();
            worst_tail_gap = worst_tail_gap
                .max((actual - f.reconstruction_error()).abs() / (1.0 + actual));
            worst_increase = worst_increase.max(actual - previous);
            previous = actual;
            if rank == 9 {
                worst_full = worst_full.max(actual / norm);
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_full < 1e-10 && worst_tail_gap < 1e-9 && worst_increase <= 1e-12 && elapsed < 5.0;
    report(
        "kronecker-exactness",
        pass,
        &format!(
            "full-rank rel err {worst_full:.2e} < 1e-10, tail gap {worst_tail_gap:.2e} < 1e-9, \
             monotone, {elapsed:.2}s < 5s"
        ),
    );
}

#[test]
fn criterion_2_oracle_equivalences() {
    let _g = gate();
    let started = Instant::now();
    let mut rng = Rng::seed_from(0xacc2);

    // (a) exact higher-order attention == flattened standard attention
    let mut worst_flat = 0.0f64;
    for _ in 0..50 {
        let n = 1 + rng.below(4);
        let t = 1 + rng.below(6);
        let d = 2 + rng.below(7);
        let cfg = AttentionConfig::new(AttentionVariant::Exact, 1 + rng.below(2), 2 + rng.below(4));
        let params = AttentionParams::init(d, &cfg, &mut rng);
        let x = random(&[n, t, d], &mut rng);
        let ho = hoformer::attention::exact_ho_attention(&x, &params, &cfg).unwrap();
        let flat = standard_attention(&reshape(&x, &[n * t, d]).unwrap(), &params, &cfg).unwrap();
        worst_flat = worst_flat.max(max_abs_diff(&reshape(&ho, &[n * t, d]).unwrap(), &flat));
    }

    // (b) factored attention == materialized S1 (x) S2 application
    let mut worst_kron = 0.0f64;
    for _ in 0..50 {
        let n = 1 + rng.below(4);
        let t = 1 + rng.below(6);
        let d = 2 + rng.below(7);
        let dh = 2 + rng.below(4);
        let cfg = AttentionConfig::new(AttentionVariant::Factored, 1 + rng.below(2), dh);
        let params = AttentionParams::init(d, &cfg, &mut rng);
        let x = random(&[n, t, d], &mut rng);
        let result = factored_attention(&x, &params, &cfg).unwrap();
        let mats = factored_matrices(&x, &params, &cfg).unwrap();
        let mut expected = x.clone();
        for (head, m) in params.heads.iter().zip(&mats) {
            let v = mode_product(&x, &head.w_v, 2).unwrap();
            let attended = kronecker(&m.s1, &m.s2)
                .unwrap()
                .matmul(&reshape(&v, &[n * t, dh]).unwrap())
                .unwrap();
            let attended = reshape(&attended, &[n, t, dh]).unwrap();
            expected = expected.add(&mode_product(&attended, &head.w_o, 2).unwrap()).unwrap();
        }
        worst_kron = worst_kron.max(max_abs_diff(&result, &expected));
    }

    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_flat < 1e-10 && worst_kron < 1e-10 && elapsed < 10.0;
    report(
        "oracle-equivalences",
        pass,
        &format!(
            "exact-vs-flattened {worst_flat:.2e} < 1e-10, factored-vs-kronecker {worst_kron:.2e} \
             < 1e-10, {elapsed:.2}s < 10s"
        ),
    );
}

#[test]
fn criterion_3_kernel_fidelity() {
    let _g = gate();
    // mean relative output error at m = 2048, d_H = 4, N = 2, T = 8 over 20 seeds
    let mean_err = kernel_fidelity_error(20);

    // implied attention rows sum to one on materialized small cases
    let mut rng = Rng::seed_from(0xacc3);
    let map = KernelFeatureMap::sample(64, 4, 9);
    let q = random(&[4, 4], &mut rng);
    let k = random(&[5, 4], &mut rng);
    let fq = kernel_features(&q, &map).unwrap();
    let fk = kernel_features(&k, &map).unwrap();
    let mut worst_row = 0.0f64;
    for i in 0..4 {
        let z: f64 = (0..64)
            .map(|c| fq.at(&[i, c]) * (0..5).map(|j| fk.at(&[j, c])).sum::<f64>())
            .sum();
        let mut row = 0.0;
        for j in 0..5 {
            let s: f64 = (0..64).map(|c| fq.at(&[i, c]) * fk.at(&[j, c])).sum();
            row += s / z;
        }
        worst_row = worst_row.max((row - 1.0).abs());
    }

    let pass = mean_err < 0.05 && worst_row < 1e-12;
    report(
        "kernel-fidelity",
        pass,
        &format!("mean rel err {mean_err:.4} < 0.05, worst row-sum gap {worst_row:.2e} < 1e-12"),
    );
}

#[test]
fn criterion_4_gradient_correctness() {
    let _g = gate();
    let started = Instant::now();
    let mut worst_primitive = 0.0f64;
    for check in primitive_gradient_checks() {
        worst_primitive = worst_primitive.max(check.measured);
    }
    let mut worst_model = 0.0f64;
    for variant in [AttentionVariant::Exact, AttentionVariant::Factored, AttentionVariant::Kernelized] {
        for axes in [AttentionAxes::None, AttentionAxes::StockWise, AttentionAxes::TimeWise, AttentionAxes::Both] {
            let check = model_gradient_check(variant, axes);
            worst_model = worst_model.max(check.measured);
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_primitive < 1e-6 && worst_model < 1e-4 && elapsed < 60.0;
    report(
        "gradient-correctness",
        pass,
        &format!(
            "primitives {worst_primitive:.2e} < 1e-6, full model {worst_model:.2e} < 1e-4, \
             {elapsed:.1}s < 60s"
        ),
    );
}

#[test]
fn criterion_5_complexity_scaling() {
    let _g = gate();
    let reps = 5;
    let (n, d, h, m) = (4, 32, 4, 64);
    let kernel_ratio = doubling_ratio(AttentionVariant::Kernelized, n, 1024, d, h, m, reps).unwrap();
    let exact_ratio = doubling_ratio(AttentionVariant::Exact, n, 32, d, h, 0, reps).unwrap();
    // repeated-median stability smoke check
    let once = measure_attention_ms(AttentionVariant::Kernelized, n, 512, d, h, m, 1).unwrap();
    let five = measure_attention_ms(AttentionVariant::Kernelized, n, 512, d, h, m, 5).unwrap();
    let stability = once.max(five) / once.min(five);
    let pass = (1.6..=2.6).contains(&kernel_ratio)
        && (3.2..=5.2).contains(&exact_ratio)
        && stability < 1.5;
    report(
        "complexity-scaling",
        pass,
        &format!(
            "kernelized T 1024->2048 ratio {kernel_ratio:.2} in [1.6, 2.6], exact T 32->64 ratio \
             {exact_ratio:.2} in [3.2, 5.2], reps-1-vs-5 stability {stability:.2} < 1.5"
        ),
    );
}

#[test]
fn criterion_6_metric_values() {
    let _g = gate();
    let a = ConfusionCounts::new(5, 5, 0, 0);
    let b = ConfusionCounts::new(0, 0, 5, 5);
    let c = ConfusionCounts::new(3, 4, 1, 2);
    let (acc_a, f1_a) = accuracy_f1(&a).unwrap();
    let (acc_c, f1_c) = accuracy_f1(&c).unwrap();
    let expected_mcc_c = 10.0 / 600f64.sqrt();
    let checks = [
        (mcc(&a) - 1.0).abs(),
        (mcc(&b) + 1.0).abs(),
        (acc_a - 1.0).abs(),
        (f1_a - 1.0).abs(),
        (mcc(&c) - expected_mcc_c).abs(),
        (acc_c - 0.7).abs(),
        (f1_c - 6.0 / 9.0).abs(),
    ];
    let worst = checks.iter().fold(0.0f64, |x, &y| x.max(y));
    // the balanced all-negative predictor
    let d = ConfusionCounts::new(0, 5, 0, 5);
    let (acc_d, f1_d) = accuracy_f1(&d).unwrap();
    let pass = worst < 1e-12 && acc_d == 0.5 && f1_d == 0.0;
    report("metric-values", pass, &format!("worst deviation {worst:.2e} < 1e-12"));
}

#[test]
fn criterion_7_ablation_structure() {
    let _g = gate();
    let started = Instant::now();
    let mut mean_acc = [0.0f64; 4]; // none, stock, time, both
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let spec = SynthSpec { n_stocks: 8, n_days: 2000, coupling: 1.0, seed, ..SynthSpec::default() };
        let out = generate(&spec).unwrap();
        let dataset = Dataset::build(&out.bars, out.text, 5, LabelThresholds::default()).unwrap();
        let split = temporal_split(&dataset, (0.7, 0.1, 0.2)).unwrap();
        let (model_cfg, train_cfg) = ablation_configs(seed);
        let rows = axes_ablation(&model_cfg, &train_cfg, &dataset, &split).unwrap();
        for (i, (_, scores)) in rows.iter().enumerate() {
            mean_acc[i] += scores.accuracy / seeds.len() as f64;
        }
        println!(
            "  seed {seed}: none {:.3} stock {:.3} time {:.3} both {:.3}",
            rows[0].1.accuracy, rows[1].1.accuracy, rows[2].1.accuracy, rows[3].1.accuracy
        );
    }
    let [none, stock, time, both] = mean_acc;
    let elapsed = started.elapsed().as_secs_f64();
    let gap = (both - none) * 100.0;
    let pass = gap >= 15.0
        && both >= stock.max(time)
        && stock.max(time) >= none
        && elapsed < 1800.0;
    report(
        "ablation-structure",
        pass,
        &format!(
            "mean acc none {none:.3} / stock {stock:.3} / time {time:.3} / both {both:.3}; \
             both-none gap {gap:.1}pt >= 15, ordering holds, {elapsed:.0}s < 1800s"
        ),
    );
}

/// Training configuration for the ablation-structure criterion.
fn ablation_configs(seed: u64) -> (ModelConfig, TrainConfig) {
    let model = ModelConfig {
        hidden: 16,
        heads: 1,
        head_size: 16,
        blocks: 1,
        text_dim: 768,
        feature_count: 16,
        mlp_mult: 2,
        variant: AttentionVariant::Factored,
        modality: Modality::Multimodal,
        axes: AttentionAxes::Both,
        seed,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        lr: 3e-3,
        max_epochs: 30,
        patience: 8,
        seed,
        ..TrainConfig::default()
    };
    (model, train)
}

#[test]
fn criterion_8_labeling_and_splits() {
    let _g = gate();
    let th = LabelThresholds::default();
    let fixture: [(f64, Label); 30] = [
        (0.55, Label::Positive),
        (-0.5, Label::Negative),
        (0.5, Label::Discarded),
        (-0.55, Label::Negative),
        (0.5499999, Label::Discarded),
        (0.5500001, Label::Positive),
        (-0.4999999, Label::Discarded),
        (-0.5000001, Label::Negative),
        (0.6, Label::Positive),
        (-0.7, Label::Negative),
        (0.1, Label::Discarded),
        (-0.1, Label::Discarded),
        (0.0, Label::Discarded),
        (-0.0, Label::Discarded),
        (5.0, Label::Positive),
        (-5.0, Label::Negative),
        (0.56, Label::Positive),
        (0.54, Label::Discarded),
        (-0.49, Label::Discarded),
        (-0.51, Label::Negative),
        (1.0, Label::Positive),
        (-1.0, Label::Negative),
        (0.2, Label::Discarded),
        (-0.2, Label::Discarded),
        (0.45, Label::Discarded),
        (-0.45, Label::Discarded),
        (100.0, Label::Positive),
        (-100.0, Label::Negative),
        (0.3, Label::Discarded),
        (-0.3, Label::Discarded),
    ];
    let mut failures = 0;
    for (movement, expected) in fixture {
        if label(movement, &th) != expected {
            failures += 1;
        }
    }

    // temporal splits: contiguous, ordered, no leakage
    let spec = SynthSpec { n_stocks: 3, n_days: 80, text_dim: 8, seed: 4, ..SynthSpec::default() };
    let out = generate(&spec).unwrap();
    let dataset = Dataset::build(&out.bars, out.text, 5, LabelThresholds::default()).unwrap();
    let split = temporal_split(&dataset, (0.7, 0.1, 0.2)).unwrap();
    let span = |idx: usize| {
        let s = dataset.sample(idx);
        (s.dates[0], s.label_date.unwrap_or(*s.dates.last().unwrap()))
    };
    let max_end = |idxs: &[usize]| idxs.iter().map(|&i| span(i).1).max().unwrap();
    let min_start = |idxs: &[usize]| idxs.iter().map(|&i| span(i).0).min().unwrap();
    let ordered = max_end(&split.train) < min_start(&split.val)
        && max_end(&split.val) < min_start(&split.test);
    let mut seen = vec![0u8; dataset.len()];
    for &i in split.train.iter().chain(&split.val).chain(&split.test).chain(&split.dropped) {
        seen[i] += 1;
    }
    let partitioned = seen.iter().all(|&c| c == 1);

    let pass = failures == 0 && ordered && partitioned;
    report(
        "labeling-and-splits",
        pass,
        &format!("30/30 fixture labels, splits ordered: {ordered}, partition: {partitioned}"),
    );
}

#[test]
fn criterion_9_training_determinism() {
    let _g = gate();
    let dir = std::env::temp_dir().join("hoformer-acceptance-determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir).unwrap();

    // a small dataset on disk, then two full `train` command invocations
    let spec = SynthSpec { n_stocks: 3, n_days: 60, seed: 5, ..SynthSpec::default() };
    let out = generate(&spec).unwrap();
    std::fs::write(
        data_dir.join("prices.csv"),
        hoformer::data::format_prices_csv(&out.bars),
    )
    .unwrap();
    hoformer::data::write_embeddings(&data_dir.join("embeddings.bin"), &out.text).unwrap();
    let cfg_path = dir.join("run.cfg");
    std::fs::write(
        &cfg_path,
        "hidden=8\nheads=1\nhead_size=8\nblocks=1\nfeature_count=8\nmlp_mult=2\nvariant=factored\nlr=0.002\nmax_epochs=3\npatience=0\n",
    )
    .unwrap();

    let run = |out_name: &str| -> String {
        let out_dir = dir.join(out_name);
        let args: Vec<String> = [
            "train",
            "--config",
            cfg_path.to_str().unwrap(),
            "--prices",
            data_dir.join("prices.csv").to_str().unwrap(),
            "--embeddings",
            data_dir.join("embeddings.bin").to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
            "--seed",
            "17",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let code = hoformer::cli::run(&args);
        assert_eq!(code, 0, "train command failed");
        std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap()
    };

    let first = run("run_a");
    let second = run("run_b");
    let identical = first == second;
    std::fs::remove_dir_all(&dir).ok();
    report(
        "training-determinism",
        identical,
        &format!("two cmd_train manifests identical: {identical} ({} bytes)", first.len()),
    );
}
