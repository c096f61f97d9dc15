//! Verify the reverse-mode engine against central finite differences, for
//! the primitive ops and the full encoder-decoder in every attention
//! variant.
//!
//! ```bash
//! cargo run --release -p hoformer --example gradient_check
//! ```

use hoformer::attention::AttentionVariant;
use hoformer::model::AttentionAxes;
use hoformer::verify::{model_gradient_check, primitive_gradient_checks};

fn main() {
    println!("primitive ops (tolerance 1e-6):");
    for check in primitive_gradient_checks() {
        println!(
            "  {:32} max rel err {:.3e}  {}",
            check.id,
            check.measured,
            if check.pass { "ok" } else { "FAIL" }
        );
    }

    println!("\nfull encoder-decoder (tolerance 1e-4):");
    for variant in [
        AttentionVariant::Exact,
        AttentionVariant::Factored,
        AttentionVariant::Kernelized,
    ] {
        for axes in [
            AttentionAxes::None,
            AttentionAxes::StockWise,
            AttentionAxes::TimeWise,
            AttentionAxes::Both,
        ] {
            let check = model_gradient_check(variant, axes);
            println!(
                "  {:32} max rel err {:.3e}  {}",
                check.id,
                check.measured,
                if check.pass { "ok" } else { "FAIL" }
            );
        }
    }
}
