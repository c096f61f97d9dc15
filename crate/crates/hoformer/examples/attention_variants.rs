//! Run the three attention variants on one random input and show how the
//! cheap paths relate to the exact higher-order reference.
//!
//! ```bash
//! cargo run --release -p hoformer --example attention_variants
//! ```

use hoformer::attention::{
    exact_ho_attention, factored_attention, factored_matrices, kernelized_factored_attention,
    standard_attention, AttentionConfig, AttentionParams, AttentionVariant,
};
use hoformer::rng::Rng;
use hoformer::tensor::{reshape, DenseTensor};

fn max_abs_diff(a: &DenseTensor, b: &DenseTensor) -> f64 {
    a.sub(b).unwrap().data().iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
}

fn main() {
    let (n, t, d) = (3, 6, 8);
    let mut rng = Rng::seed_from(42);
    let mut cfg = AttentionConfig::new(AttentionVariant::Exact, 2, 4);
    cfg.feature_count = 4096;
    let params = AttentionParams::init(d, &cfg, &mut rng);
    let x = DenseTensor::from_fn(&[n, t, d], |_| rng.normal());

    let exact = exact_ho_attention(&x, &params, &cfg).unwrap();
    let factored = factored_attention(&x, &params, &cfg).unwrap();
    let kernelized = kernelized_factored_attention(&x, &params, &cfg).unwrap();

    // the exact path is, by construction, softmax attention over the
    // flattened (N*T, d) token matrix
    let flat = standard_attention(&reshape(&x, &[n * t, d]).unwrap(), &params, &cfg).unwrap();
    println!(
        "exact vs flattened-standard   max abs diff {:.3e}",
        max_abs_diff(&reshape(&exact, &[n * t, d]).unwrap(), &flat)
    );

    // the factored path replaces the joint (N*T)x(N*T) attention with a
    // stock-wise and a time-wise matrix; with enough random features the
    // kernelized path approaches it
    let rel = |a: &DenseTensor, b: &DenseTensor| {
        a.sub(b).unwrap().frobenius_norm() / b.frobenius_norm()
    };
    println!("factored vs exact             rel diff     {:.3}", rel(&factored, &exact));
    println!("kernelized vs factored        rel diff     {:.3e}", rel(&kernelized, &factored));

    for (h, m) in factored_matrices(&x, &params, &cfg).unwrap().iter().enumerate() {
        let worst_row = |s: &DenseTensor| {
            let (r, c) = (s.shape()[0], s.shape()[1]);
            (0..r)
                .map(|i| ((0..c).map(|j| s.at(&[i, j])).sum::<f64>() - 1.0).abs())
                .fold(0.0f64, f64::max)
        };
        println!(
            "head {h}: S1 {}x{} S2 {}x{}, worst row-sum error {:.1e}",
            m.s1.shape()[0],
            m.s1.shape()[1],
            m.s2.shape()[0],
            m.s2.shape()[1],
            worst_row(&m.s1).max(worst_row(&m.s2))
        );
    }
}
