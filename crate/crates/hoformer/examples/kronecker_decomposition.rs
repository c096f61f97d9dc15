//! Decompose attention matrices into sums of Kronecker products.
//!
//! First recovers the factors of a synthetic `B (x) C` exactly at rank 1,
//! then profiles how well real attention matrices compress across ranks.
//!
//! ```bash
//! cargo run --release -p hoformer --example kronecker_decomposition
//! ```

use hoformer::attention::{AttentionConfig, AttentionParams, AttentionVariant};
use hoformer::kron::{attention_rank_profile, nearest_kronecker, reconstruct};
use hoformer::rng::Rng;
use hoformer::tensor::{kronecker, DenseTensor};

fn main() {
    let mut rng = Rng::seed_from(7);

    // a pure Kronecker product is recovered exactly at rank 1
    let b = DenseTensor::from_fn(&[3, 3], |_| rng.normal());
    let c = DenseTensor::from_fn(&[4, 4], |_| rng.normal());
    let a = kronecker(&b, &c).unwrap();
    let f = nearest_kronecker(&a, 3, 4, 1).unwrap();
    let err = a.sub(&reconstruct(&f)).unwrap().frobenius_norm() / a.frobenius_norm();
    println!("rank-1 recovery of B (x) C: relative error {err:.3e}");
    println!(
        "singular spectrum of the rearrangement: {:?}",
        f.singular_values.iter().map(|s| format!("{s:.2e}")).collect::<Vec<_>>()
    );

    // rank/error profile of an actual attention matrix
    let (n, t, d) = (3, 4, 8);
    let cfg = AttentionConfig::new(AttentionVariant::Exact, 2, 4);
    let params = AttentionParams::init(d, &cfg, &mut rng);
    let x = DenseTensor::from_fn(&[n, t, d], |_| rng.normal());
    let profile = attention_rank_profile(&x, &params, &cfg).unwrap();
    println!("\n{}", profile.to_csv().trim_end());
    println!("\n(min(N^2, T^2) = {} terms always reconstruct exactly)", (n * n).min(t * t));
}
