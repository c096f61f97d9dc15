//! Command-line surface. Exit codes: 0 ok, 1 verification failure,
//! 2 usage error, 3 data error, 4 numeric abort.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::attention::{AttentionConfig, AttentionParams, AttentionVariant};
use crate::bench;
use crate::config::RunConfig;
use crate::data::{self, Dataset, SplitResult, TextStore};
use crate::kron::attention_rank_profile;
use crate::metrics::Scores;
use crate::model::{AttentionAxes, Model};
use crate::rng::Rng;
use crate::synth::{bayes_accuracy, generate, SynthSpec};
use crate::tensor::DenseTensor;
use crate::train::{evaluate, grid_search, train, TrainError};
use crate::verify::{all_pass, run_suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const USAGE: &str = "\
hoformer <command> [--flag value]...

commands:
  train      --prices <csv> [--embeddings <bin>] --out <dir>
             [--config <path>] [--seed <u64>]
             [--variant exact|factored|kernelized]
             [--ablation none|stock|time|both]
  grid       same inputs as train; sweeps the configured grid
  eval       --checkpoint <ckpt> --prices <csv> [--embeddings <bin>]
             [--config <path>] [--split train|val|test|all]
  verify     --suite tensors|attention|kron|gradients|all [--out <dir>]
  decompose  [--n <4>] [--t <6>] [--d <8>] [--heads <2>] [--seed <u64>]
             [--out <dir>]
  bench      --variant <v> [--n <list>] [--t <list>] [--d <list>]
             [--heads <h>] [--m <m>] [--reps <r>] [--out <dir>]
  ablate     --prices <csv> --embeddings <bin> [--config <path>]
             [--seed <u64>] [--out <dir>]
  synth      --out <dir> [--spec <path>] [--seed <u64>]
";

struct Flags {
    values: BTreeMap<String, String>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Flags, String> {
        let mut values = BTreeMap::new();
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let key = arg
                .strip_prefix("--")
                .ok_or_else(|| format!("expected --flag, found `{arg}`"))?;
            let value = it.next().ok_or_else(|| format!("flag --{key} needs a value"))?;
            if values.insert(key.to_string(), value.clone()).is_some() {
                return Err(format!("duplicate flag --{key}"));
            }
        }
        Ok(Flags { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, String> {
        self.get(key).ok_or_else(|| format!("missing required flag --{key}"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, String> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| format!("bad value `{v}` for --{key}")),
        }
    }

    fn list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, String> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| format!("bad list `{v}` for --{key}")))
                .collect(),
        }
    }

    fn known(&self, allowed: &[&str]) -> Result<(), String> {
        for key in self.values.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(format!("unknown flag --{key}"));
            }
        }
        Ok(())
    }
}

enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<String> for CliError {
    fn from(m: String) -> Self {
        CliError::Usage(m)
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Numeric(m) => CliError::Numeric(m),
            TrainError::Io(m) => CliError::Data(m),
            TrainError::Data(m) => CliError::Data(m),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        match e {
            crate::model::ModelError::Io(m) | crate::model::ModelError::Format(m) => {
                CliError::Data(m)
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Entry point; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return EXIT_USAGE;
    };
    let flags = match Flags::parse(&args[1..]) {
        Ok(f) => f,
        Err(m) => {
            eprintln!("error: {m}");
            return EXIT_USAGE;
        }
    };
    let outcome = match command.as_str() {
        "train" => cmd_train(&flags),
        "grid" => cmd_grid(&flags),
        "eval" => cmd_eval(&flags),
        "verify" => cmd_verify(&flags),
        "decompose" => cmd_decompose(&flags),
        "bench" => cmd_bench(&flags),
        "ablate" => cmd_ablate(&flags),
        "synth" => cmd_synth(&flags),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            return EXIT_OK;
        }
        other => {
            eprintln!("error: unknown command `{other}`");
            eprint!("{USAGE}");
            return EXIT_USAGE;
        }
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn load_run_config(flags: &Flags) -> Result<RunConfig, CliError> {
    let mut cfg = match flags.get("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("reading {path}: {e}")))?;
            RunConfig::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = flags.get("seed") {
        let seed: u64 = seed.parse().map_err(|_| CliError::Usage(format!("bad --seed `{seed}`")))?;
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(variant) = flags.get("variant") {
        cfg.model.variant =
            AttentionVariant::parse(variant).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(ablation) = flags.get("ablation") {
        cfg.model.axes =
            AttentionAxes::parse(ablation).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(cfg)
}

fn load_dataset(flags: &Flags, cfg: &RunConfig) -> Result<(Dataset, SplitResult), CliError> {
    let prices_path = flags.require("prices").map_err(CliError::Usage)?;
    let bars = data::read_prices_csv(Path::new(prices_path))?;
    let text = match flags.get("embeddings") {
        Some(path) => data::read_embeddings(Path::new(path))?,
        None => TextStore::new(cfg.model.text_dim),
    };
    let dataset = Dataset::build(&bars, text, cfg.window, cfg.thresholds)?;
    let split = data::temporal_split(&dataset, cfg.ratios)?;
    for warning in &split.warnings {
        eprintln!("warning: {warning}");
    }
    Ok((dataset, split))
}

fn out_dir(flags: &Flags) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(flags.require("out").map_err(CliError::Usage)?);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(format!("creating out dir: {e}")))?;
    Ok(dir)
}

fn write_out(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

fn cmd_train(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["config", "prices", "embeddings", "out", "seed", "variant", "ablation"])?;
    let cfg = load_run_config(flags)?;
    let dir = out_dir(flags)?;
    let started = Instant::now();
    let (dataset, split) = load_dataset(flags, &cfg)?;
    let data_ms = started.elapsed().as_secs_f64() * 1e3;

    let train_started = Instant::now();
    let result = train(&cfg.model, &cfg.train, &dataset, &split)?;
    let train_ms = train_started.elapsed().as_secs_f64() * 1e3;

    result.manifest.write(&dir.join("manifest.txt"))?;
    result.model.save(&dir.join("model.ckpt"))?;
    // wall-clock timings live outside the manifest so that identical runs
    // produce bit-identical manifests
    write_out(
        &dir.join("timings.txt"),
        &format!("dataset_ms={data_ms:.1}\ntrain_ms={train_ms:.1}\n"),
    )?;

    if let Some(reason) = &result.manifest.aborted {
        eprintln!("aborted: {reason}");
        return Ok(EXIT_NUMERIC);
    }
    let best = result.manifest.best_epoch;
    let f1 = result.manifest.best_val_f1;
    match &result.manifest.test {
        Some(test) => println!(
            "best epoch {best} val_f1 {f1:.4} | test acc {:.4} f1 {:.4} mcc {:.4}",
            test.accuracy, test.f1, test.mcc
        ),
        None => println!("best epoch {best} val_f1 {f1:.4} | no test split"),
    }
    Ok(EXIT_OK)
}

fn cmd_grid(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["config", "prices", "embeddings", "out", "seed", "variant", "ablation"])?;
    let cfg = load_run_config(flags)?;
    let dir = out_dir(flags)?;
    let (dataset, split) = load_dataset(flags, &cfg)?;
    let started = Instant::now();
    let outcome = grid_search(&cfg.model, &cfg.train, &cfg.grid, &dataset, &split, cfg.workers)?;
    let grid_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut csv = String::from("combo,val_f1,best_epoch\n");
    for cell in &outcome.cells {
        csv.push_str(&format!("{},{},{}\n", cell.label, cell.val_f1, cell.best_epoch));
    }
    write_out(&dir.join("grid.csv"), &csv)?;
    outcome.manifest.write(&dir.join("manifest.txt"))?;
    outcome.model.save(&dir.join("model.ckpt"))?;
    write_out(&dir.join("timings.txt"), &format!("grid_ms={grid_ms:.1}\n"))?;

    let best = &outcome.cells[outcome.best_index];
    match &outcome.manifest.test {
        Some(test) => println!(
            "best combo [{}] val_f1 {:.4} | test acc {:.4} f1 {:.4} mcc {:.4}",
            best.label, best.val_f1, test.accuracy, test.f1, test.mcc
        ),
        None => println!("best combo [{}] val_f1 {:.4}", best.label, best.val_f1),
    }
    Ok(EXIT_OK)
}

fn cmd_eval(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["config", "checkpoint", "prices", "embeddings", "split", "seed"])?;
    let checkpoint = flags.require("checkpoint").map_err(CliError::Usage)?;
    let model = Model::load(Path::new(checkpoint))?;
    let mut cfg = load_run_config(flags)?;
    cfg.model = model.cfg.clone();
    let (dataset, split) = load_dataset(flags, &cfg)?;
    let which = flags.get("split").unwrap_or("test");
    let indices: Vec<usize> = match which {
        "train" => split.train.clone(),
        "val" => split.val.clone(),
        "test" => split.test.clone(),
        "all" => (0..dataset.len()).collect(),
        other => return Err(CliError::Usage(format!("bad --split `{other}`"))),
    };
    let counts = evaluate(&model, &dataset, &indices)?;
    let scores = Scores::from_counts(&counts)
        .map_err(|_| CliError::Data("no scored predictions in the chosen split".into()))?;
    println!("split,acc,f1,mcc,scored");
    println!("{which},{:.4},{:.4},{:.4},{}", scores.accuracy, scores.f1, scores.mcc, scores.scored);
    Ok(EXIT_OK)
}

fn cmd_verify(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["suite", "out"])?;
    let suite = flags.get("suite").unwrap_or("all");
    let results = run_suite(suite)
        .ok_or_else(|| CliError::Usage(format!("unknown suite `{suite}`")))?;
    let mut report = String::from("id,measured,tolerance,pass\n");
    for check in &results {
        let line = check.to_csv_line();
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
    }
    if let Some(dir) = flags.get("out") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(e.to_string()))?;
        write_out(&dir.join(format!("verify_{suite}.csv")), &report)?;
    }
    let failed = results.iter().filter(|c| !c.pass).count();
    println!("suite {suite}: {} checks, {failed} failed", results.len());
    Ok(if all_pass(&results) { EXIT_OK } else { EXIT_VERIFY_FAILURE })
}

fn cmd_decompose(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["n", "t", "d", "heads", "seed", "out"])?;
    let n: usize = flags.parsed("n", 4)?;
    let t: usize = flags.parsed("t", 6)?;
    let d: usize = flags.parsed("d", 8)?;
    let heads: usize = flags.parsed("heads", 2)?;
    let seed: u64 = flags.parsed("seed", 0)?;
    let cfg = AttentionConfig::new(AttentionVariant::Exact, heads, (d / heads).max(2));
    let mut rng = Rng::seed_from(seed);
    let params = AttentionParams::init(d, &cfg, &mut rng);
    let x = DenseTensor::from_fn(&[n, t, d], |_| rng.normal());
    let profile = attention_rank_profile(&x, &params, &cfg)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let csv = profile.to_csv();
    print!("{csv}");
    if let Some(dir) = flags.get("out") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(e.to_string()))?;
        write_out(&dir.join("rank_profile.csv"), &csv)?;
    }
    Ok(EXIT_OK)
}

fn cmd_bench(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["variant", "n", "t", "d", "heads", "m", "reps", "out"])?;
    let variant = AttentionVariant::parse(flags.require("variant").map_err(CliError::Usage)?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ns = flags.list("n", &[4])?;
    let ts = flags.list("t", &[256, 512, 1024])?;
    let ds = flags.list("d", &[32])?;
    let heads: usize = flags.parsed("heads", 4)?;
    let m: usize = flags.parsed("m", 64)?;
    let reps: usize = flags.parsed("reps", 5)?;
    let rows = bench::run_sweep(variant, &ns, &ts, &ds, heads, m, reps)
        .map_err(CliError::Usage)?;
    let csv = bench::rows_to_csv(&rows);
    print!("{csv}");
    if let Some(dir) = flags.get("out") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(e.to_string()))?;
        write_out(&dir.join("bench.csv"), &csv)?;
    }
    Ok(EXIT_OK)
}

fn cmd_ablate(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["config", "prices", "embeddings", "out", "seed"])?;
    if flags.get("embeddings").is_none() {
        return Err(CliError::Usage(
            "ablation needs both modalities; pass --embeddings".into(),
        ));
    }
    let cfg = load_run_config(flags)?;
    let (dataset, split) = load_dataset(flags, &cfg)?;
    let table = crate::ablate::full_ablation(&cfg.model, &cfg.train, &dataset, &split)?;
    let csv = table.to_csv();
    print!("{csv}");
    if let Some(dir) = flags.get("out") {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Data(e.to_string()))?;
        write_out(&dir.join("ablation.csv"), &csv)?;
    }
    Ok(EXIT_OK)
}

fn cmd_synth(flags: &Flags) -> Result<i32, CliError> {
    flags.known(&["spec", "out", "seed"])?;
    let dir = out_dir(flags)?;
    let mut spec = match flags.get("spec") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("reading {path}: {e}")))?;
            SynthSpec::parse(&text)?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = flags.get("seed") {
        spec.seed = seed.parse().map_err(|_| CliError::Usage(format!("bad --seed `{seed}`")))?;
    }
    if spec.text_dim != data::EMBEDDING_DIM {
        return Err(CliError::Usage(format!(
            "the embedding file format is fixed at {} dims; set text_dim accordingly",
            data::EMBEDDING_DIM
        )));
    }
    let output = generate(&spec)?;
    write_out(&dir.join("prices.csv"), &data::format_prices_csv(&output.bars))?;
    data::write_embeddings(&dir.join("embeddings.bin"), &output.text)?;
    let bayes = bayes_accuracy(&spec);
    write_out(
        &dir.join("synth_meta.txt"),
        &format!("{}{}\n", spec.to_kv(), bayes),
    )?;
    println!(
        "wrote {} bars, {} embeddings | {}",
        output.bars.len(),
        output.text.len(),
        bayes
    );
    Ok(EXIT_OK)
}
