//! Measure how the attention variants scale when the timestep count
//! doubles. The kernelized path is linear in T, the exact path quadratic.
//!
//! ```bash
//! cargo run --release -p hoformer --example complexity_scaling
//! ```

use hoformer::attention::AttentionVariant;
use hoformer::bench::{doubling_ratio, run_sweep, rows_to_csv};

fn main() {
    let (n, d, h, m, reps) = (4, 32, 4, 64, 3);

    let kernelized = doubling_ratio(AttentionVariant::Kernelized, n, 512, d, h, m, reps).unwrap();
    println!("kernelized wall-time ratio for T 512 -> 1024: {kernelized:.2} (linear cost: ~2)");

    let exact = doubling_ratio(AttentionVariant::Exact, n, 32, d, h, 0, reps).unwrap();
    println!("exact wall-time ratio for T 32 -> 64:         {exact:.2} (quadratic cost: ~4)");

    let factored = doubling_ratio(AttentionVariant::Factored, n, 512, d, h, 0, reps).unwrap();
    println!("factored wall-time ratio for T 512 -> 1024:   {factored:.2}");

    println!("\nsweep (kernelized):");
    let rows = run_sweep(AttentionVariant::Kernelized, &[n], &[256, 512, 1024], &[d], h, m, reps)
        .unwrap();
    print!("{}", rows_to_csv(&rows));
}
