//! Generate a small planted-signal dataset, train the multimodal
//! classifier on it, and round-trip the best checkpoint.
//!
//! ```bash
//! cargo run --release -p hoformer --example train_synthetic
//! ```

use hoformer::attention::AttentionVariant;
use hoformer::data::{temporal_split, Dataset, LabelThresholds};
use hoformer::model::{Modality, Model, ModelConfig};
use hoformer::synth::{generate, SynthSpec};
use hoformer::train::{evaluate, train, TrainConfig};

fn main() {
    let spec = SynthSpec { n_stocks: 4, n_days: 400, seed: 11, ..SynthSpec::default() };
    let out = generate(&spec).unwrap();
    println!("planted-signal dataset: {}", out.bayes);

    let dataset = Dataset::build(&out.bars, out.text, spec.window, LabelThresholds::default()).unwrap();
    let split = temporal_split(&dataset, (0.7, 0.1, 0.2)).unwrap();
    println!(
        "{} windows ({} train / {} val / {} test)",
        dataset.len(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let model_cfg = ModelConfig {
        hidden: 16,
        heads: 1,
        head_size: 16,
        blocks: 1,
        text_dim: 768,
        feature_count: 16,
        mlp_mult: 2,
        variant: AttentionVariant::Factored,
        modality: Modality::Multimodal,
        seed: 11,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        lr: 3e-3,
        max_epochs: 15,
        patience: 5,
        seed: 11,
        ..TrainConfig::default()
    };

    let result = train(&model_cfg, &train_cfg, &dataset, &split).unwrap();
    for rec in &result.manifest.history {
        println!(
            "epoch {:2}: train loss {:.4}  val acc {:.4} f1 {:.4} mcc {:.4}",
            rec.epoch, rec.train_loss, rec.val.accuracy, rec.val.f1, rec.val.mcc
        );
    }
    let test = result.manifest.test.unwrap();
    println!(
        "best epoch {}  test acc {:.4} f1 {:.4} mcc {:.4} ({} scored)",
        result.manifest.best_epoch, test.accuracy, test.f1, test.mcc, test.scored
    );

    // checkpoints round-trip bit-exactly
    let path = std::env::temp_dir().join("hoformer_example.ckpt");
    result.model.save(&path).unwrap();
    let reloaded = Model::load(&path).unwrap();
    let counts = evaluate(&reloaded, &dataset, &split.test).unwrap();
    let again = hoformer::metrics::Scores::from_counts(&counts).unwrap();
    println!("reloaded checkpoint test acc {:.4} (identical: {})", again.accuracy, again == test);
    std::fs::remove_file(&path).ok();
}
