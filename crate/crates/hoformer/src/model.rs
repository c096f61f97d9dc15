//! Multimodal encoder-decoder classifier over higher-order attention.
//!
//! Text embeddings flow through a transformer encoder, price series through
//! a transformer decoder whose cross-attention reads the encoder memory.
//! Every sublayer is RMSNorm pre-normalized with a residual connection;
//! rotary rotations are applied to queries and keys of the time-wise
//! attention only (the stock axis carries no positional information). Each
//! stock's series starts with a learnable CLS token whose final hidden
//! state feeds a 2-layer classifier head emitting one logit per stock.
//!
//! Checkpoint format (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "HOFCKPT1"
//! 8       4     u32 version = 1
//! 12      4     u32 config length L
//! 16      L     UTF-8 config echo (flat key=value lines)
//! 16+L    4     u32 parameter count P
//! ```
//! followed by P records: `u16` name length, UTF-8 name, `u8` order k,
//! k x `u32` extents, then `8 * product(extents)` bytes of `f64` values in
//! row-major order.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::attention::{
    attend, AttendSpec, AttentionScope, AttentionVariant, HeadVars, KernelFeatureMap, PoolKind,
};
use crate::autodiff::{kernels, Tape, Var};
use crate::data::WindowSample;
use crate::rng::Rng;
use crate::tensor::DenseTensor;

pub const RMSNORM_EPS: f64 = 1e-6;
const CHECKPOINT_MAGIC: &[u8; 8] = b"HOFCKPT1";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    Config(String),
    Io(String),
    Format(String),
    Input(String),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::Config(e) => write!(f, "model config: {e}"),
            ModelError::Io(e) => write!(f, "io error: {e}"),
            ModelError::Format(e) => write!(f, "checkpoint format: {e}"),
            ModelError::Input(e) => write!(f, "bad input: {e}"),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which attention axes the model applies; `None` bypasses attention
/// sublayers entirely (MLP-only network).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionAxes {
    None,
    StockWise,
    TimeWise,
    Both,
}

impl AttentionAxes {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionAxes::None => "none",
            AttentionAxes::StockWise => "stock",
            AttentionAxes::TimeWise => "time",
            AttentionAxes::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionAxes::None),
            "stock" => Ok(AttentionAxes::StockWise),
            "time" => Ok(AttentionAxes::TimeWise),
            "both" => Ok(AttentionAxes::Both),
            other => Err(ModelError::Config(format!("unknown ablation `{other}`"))),
        }
    }

    fn scope(&self) -> AttentionScope {
        match self {
            AttentionAxes::StockWise => AttentionScope::StockWise,
            AttentionAxes::TimeWise => AttentionScope::TimeWise,
            _ => AttentionScope::Both,
        }
    }
}

/// Input modality selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Price,
    Text,
    Multimodal,
}

impl Modality {
    pub fn as_str(&self) -> &'static str {
        match self {
            Modality::Price => "price",
            Modality::Text => "text",
            Modality::Multimodal => "multimodal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "price" => Ok(Modality::Price),
            "text" => Ok(Modality::Text),
            "multimodal" => Ok(Modality::Multimodal),
            other => Err(ModelError::Config(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub head_size: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub variant: AttentionVariant,
    pub pooling: PoolKind,
    pub feature_count: usize,
    pub text_dim: usize,
    pub mlp_mult: usize,
    pub axes: AttentionAxes,
    pub modality: Modality,
    pub scale_by_head_size: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            heads: 4,
            head_size: 8,
            blocks: 2,
            dropout: 0.0,
            variant: AttentionVariant::Kernelized,
            pooling: PoolKind::Mean,
            feature_count: 64,
            text_dim: 768,
            mlp_mult: 4,
            axes: AttentionAxes::Both,
            modality: Modality::Multimodal,
            scale_by_head_size: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.head_size == 0 || self.mlp_mult == 0 {
            return Err(ModelError::Config("model dimensions must be positive".into()));
        }
        if self.head_size % 2 != 0 {
            return Err(ModelError::Config("head_size must be even (rotary pairs)".into()));
        }
        if self.text_dim == 0 {
            return Err(ModelError::Config("text_dim must be positive".into()));
        }
        if matches!(self.variant, AttentionVariant::Kernelized) && self.feature_count == 0 {
            return Err(ModelError::Config("feature_count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Flat key=value echo, stable ordering.
    pub fn to_kv(&self) -> String {
        format!(
            "hidden={}\nheads={}\nhead_size={}\nblocks={}\ndropout={}\nvariant={}\npooling={}\nfeature_count={}\ntext_dim={}\nmlp_mult={}\naxes={}\nmodality={}\nscale_by_head_size={}\nseed={}\n",
            self.hidden,
            self.heads,
            self.head_size,
            self.blocks,
            self.dropout,
            self.variant.as_str(),
            self.pooling.as_str(),
            self.feature_count,
            self.text_dim,
            self.mlp_mult,
            self.axes.as_str(),
            self.modality.as_str(),
            self.scale_by_head_size,
            self.seed
        )
    }

    /// Apply one key=value assignment; unknown keys are errors.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |k: &str, v: &str| ModelError::Config(format!("bad value `{v}` for {k}"));
        match key {
            "hidden" => self.hidden = value.parse().map_err(|_| bad(key, value))?,
            "heads" => self.heads = value.parse().map_err(|_| bad(key, value))?,
            "head_size" => self.head_size = value.parse().map_err(|_| bad(key, value))?,
            "blocks" => self.blocks = value.parse().map_err(|_| bad(key, value))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad(key, value))?,
            "variant" => {
                self.variant =
                    AttentionVariant::parse(value).map_err(|e| ModelError::Config(e.to_string()))?
            }
            "pooling" => {
                self.pooling =
                    PoolKind::parse(value).map_err(|e| ModelError::Config(e.to_string()))?
            }
            "feature_count" => self.feature_count = value.parse().map_err(|_| bad(key, value))?,
            "text_dim" => self.text_dim = value.parse().map_err(|_| bad(key, value))?,
            "mlp_mult" => self.mlp_mult = value.parse().map_err(|_| bad(key, value))?,
            "axes" => self.axes = AttentionAxes::parse(value)?,
            "modality" => self.modality = Modality::parse(value)?,
            "scale_by_head_size" => {
                self.scale_by_head_size = value.parse().map_err(|_| bad(key, value))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(ModelError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ModelError::Config(format!("line {}: expected key=value", idx + 1))
            })?;
            cfg.apply_kv(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Named parameter tensors in a stable order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<DenseTensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    fn push(&mut self, name: impl Into<String>, value: DenseTensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[DenseTensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [DenseTensor] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &DenseTensor)> {
        self.names.iter().zip(self.values.iter())
    }
}

/// The classifier model: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub stock_count: usize,
    pub params: ParamStore,
    feature_maps: Vec<DenseTensor>,
}

fn mlp_names(prefix: &str) -> [String; 5] {
    [
        format!("{prefix}.mlp_norm.gain"),
        format!("{prefix}.mlp.w1"),
        format!("{prefix}.mlp.b1"),
        format!("{prefix}.mlp.w2"),
        format!("{prefix}.mlp.b2"),
    ]
}

impl Model {
    pub fn new(cfg: ModelConfig, stock_count: usize) -> Result<Self> {
        cfg.validate()?;
        if stock_count == 0 {
            return Err(ModelError::Config("stock_count must be positive".into()));
        }
        let mut rng = Rng::seed_from(cfg.seed).derive(0x6d6f64656c);
        let mut params = ParamStore::default();
        let d = cfg.hidden;
        let dh = cfg.head_size;
        let hid = cfg.mlp_mult * d;

        let init = |shape: &[usize], sd: f64, rng: &mut Rng| {
            DenseTensor::from_fn(shape, |_| rng.normal() * sd)
        };
        let proj_sd = 1.0 / (d as f64).sqrt();

        let uses_text = !matches!(cfg.modality, Modality::Price);
        let uses_price = !matches!(cfg.modality, Modality::Text);

        if uses_text {
            params.push("text_proj.w", init(&[d, cfg.text_dim], 1.0 / (cfg.text_dim as f64).sqrt(), &mut rng));
            params.push("text_proj.b", DenseTensor::zeros(&[d]));
        }
        if uses_price {
            params.push("price_proj.w", init(&[d, 6], 1.0 / 6f64.sqrt(), &mut rng));
            params.push("price_proj.b", DenseTensor::zeros(&[d]));
            // unit-scale CLS rows: stock identity must survive pooling over
            // the time axis, where it is the only distinguishing signal
            params.push("cls.table", init(&[stock_count, d], 1.0, &mut rng));
        }

        let push_attn = |prefix: &str, params: &mut ParamStore, rng: &mut Rng| {
            params.push(format!("{prefix}_norm.gain"), DenseTensor::filled(&[d], 1.0));
            for h in 0..cfg.heads {
                params.push(format!("{prefix}.{h}.wq"), init(&[dh, d], proj_sd, rng));
                params.push(format!("{prefix}.{h}.wk"), init(&[dh, d], proj_sd, rng));
                params.push(format!("{prefix}.{h}.wv"), init(&[dh, d], proj_sd, rng));
                params.push(format!("{prefix}.{h}.wo"), init(&[d, dh], 1.0 / (dh as f64).sqrt(), rng));
            }
        };
        let push_mlp = |prefix: &str, params: &mut ParamStore, rng: &mut Rng| {
            let names = mlp_names(prefix);
            params.push(names[0].clone(), DenseTensor::filled(&[d], 1.0));
            params.push(names[1].clone(), init(&[hid, d], proj_sd, rng));
            params.push(names[2].clone(), DenseTensor::zeros(&[hid]));
            params.push(names[3].clone(), init(&[d, hid], 1.0 / (hid as f64).sqrt(), rng));
            params.push(names[4].clone(), DenseTensor::zeros(&[d]));
        };

        if uses_text {
            for i in 0..cfg.blocks {
                push_attn(&format!("enc.{i}.attn"), &mut params, &mut rng);
                push_mlp(&format!("enc.{i}"), &mut params, &mut rng);
            }
        }
        if uses_price {
            for i in 0..cfg.blocks {
                push_attn(&format!("dec.{i}.self"), &mut params, &mut rng);
                if matches!(cfg.modality, Modality::Multimodal) {
                    push_attn(&format!("dec.{i}.cross"), &mut params, &mut rng);
                }
                push_mlp(&format!("dec.{i}"), &mut params, &mut rng);
            }
        }
        params.push("final_norm.gain", DenseTensor::filled(&[d], 1.0));
        params.push("head.w1", init(&[d, d], proj_sd, &mut rng));
        params.push("head.b1", DenseTensor::zeros(&[d]));
        params.push("head.w2", init(&[1, d], proj_sd, &mut rng));
        params.push("head.b2", DenseTensor::zeros(&[1]));

        let feature_maps = (0..cfg.heads)
            .map(|h| KernelFeatureMap::sample(cfg.feature_count, dh, cfg.seed ^ 0xfea7 ^ (h as u64) << 8).projection)
            .collect();

        Ok(Self { cfg, stock_count, params, feature_maps })
    }

    fn attend_spec(
        &self,
        scope: AttentionScope,
        q_positions: Vec<f64>,
        k_positions: Vec<f64>,
        key_mask: Option<DenseTensor>,
    ) -> AttendSpec {
        AttendSpec {
            variant: self.cfg.variant,
            pooling: self.cfg.pooling,
            scope,
            scale: if self.cfg.scale_by_head_size {
                1.0 / (self.cfg.head_size as f64).sqrt()
            } else {
                1.0 / (self.cfg.hidden as f64).sqrt()
            },
            rotary: true,
            q_positions,
            k_positions,
            key_mask,
            feature_maps: self.feature_maps.clone(),
        }
    }

    fn head_vars(&self, vars: &ParamVars, prefix: &str) -> Vec<HeadVars> {
        (0..self.cfg.heads)
            .map(|h| HeadVars {
                w_q: vars.get(&format!("{prefix}.{h}.wq")),
                w_k: vars.get(&format!("{prefix}.{h}.wk")),
                w_v: vars.get(&format!("{prefix}.{h}.wv")),
                w_o: vars.get(&format!("{prefix}.{h}.wo")),
            })
            .collect()
    }

    /// Forward pass on a tape. Parameters are registered as differentiable
    /// leaves when `train` is set; dropout (if configured) draws its masks
    /// from `dropout_rng`.
    pub fn forward(
        &self,
        tape: &Tape,
        sample: &WindowSample,
        train: bool,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<ModelForward> {
        let vars = ParamVars::register(tape, &self.params, train);
        let logits = self.forward_with_vars(tape, sample, &vars, train, dropout_rng)?;
        Ok(ModelForward::new(logits, vars))
    }

    /// Forward pass against caller-supplied parameter variables (one per
    /// store entry, in store order). This is what gradient checking uses to
    /// differentiate the loss with respect to externally managed leaves.
    pub fn forward_with_vars(
        &self,
        tape: &Tape,
        sample: &WindowSample,
        vars: &ParamVars,
        train: bool,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let n = sample.prices.shape()[0];
        if sample.stock_ids.len() != n {
            return Err(ModelError::Input("stock id count mismatch".into()));
        }
        let mut drop = DropoutCtx {
            tape,
            rate: if train { self.cfg.dropout } else { 0.0 },
            rng: dropout_rng,
        };

        // encoder over the text stream
        let memory = if !matches!(self.cfg.modality, Modality::Price) {
            Some(self.encode_with_vars(tape, &sample.text, &sample.mask, vars, &mut drop)?)
        } else {
            None
        };

        // text-only readout: pooled encoder memory
        if matches!(self.cfg.modality, Modality::Text) {
            let memory = memory.expect("text modality builds an encoder");
            let pooled = memory
                .rmsnorm(&vars.get("final_norm.gain"), RMSNORM_EPS)
                .mean_axis(1);
            return Ok(self.classifier(vars, &pooled));
        }

        let memory = memory.as_ref().map(|m| (m, &sample.mask));
        self.decode_with_vars(tape, &sample.prices, &sample.stock_ids, memory, vars, &mut drop)
    }

    /// Encoder stack over the text stream (eval mode, parameters as
    /// constants): projection, masking, then `blocks` pre-normed
    /// self-attention/MLP blocks. With zero blocks this is the projected,
    /// masked input.
    pub fn encode(&self, tape: &Tape, text: &DenseTensor, mask: &DenseTensor) -> Result<Var> {
        if matches!(self.cfg.modality, Modality::Price) {
            return Err(ModelError::Config("price-only model has no encoder".into()));
        }
        let vars = ParamVars::register(tape, &self.params, false);
        let mut drop = DropoutCtx { tape, rate: 0.0, rng: None };
        self.encode_with_vars(tape, text, mask, &vars, &mut drop)
    }

    /// Decoder stack over the price stream (eval mode): tokenization with
    /// the CLS prefix, pre-normed self-attention, optional cross-attention
    /// into `memory`, MLP blocks, and the classifier read from the CLS
    /// position. Returns one logit per stock.
    pub fn decode(
        &self,
        tape: &Tape,
        prices: &DenseTensor,
        stock_ids: &[usize],
        memory: Option<(&Var, &DenseTensor)>,
    ) -> Result<Var> {
        if matches!(self.cfg.modality, Modality::Text) {
            return Err(ModelError::Config("text-only model has no decoder".into()));
        }
        let vars = ParamVars::register(tape, &self.params, false);
        let mut drop = DropoutCtx { tape, rate: 0.0, rng: None };
        self.decode_with_vars(tape, prices, stock_ids, memory, &vars, &mut drop)
    }

    fn encode_with_vars(
        &self,
        tape: &Tape,
        text: &DenseTensor,
        mask: &DenseTensor,
        vars: &ParamVars,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        if text.order() != 3 || text.shape()[2] != self.cfg.text_dim {
            return Err(ModelError::Input(format!(
                "text tensor must be (N, T, {})",
                self.cfg.text_dim
            )));
        }
        let (n, t) = (text.shape()[0], text.shape()[1]);
        if mask.shape() != [n, t] {
            return Err(ModelError::Input("mask must be (N, T)".into()));
        }
        let scope = self.cfg.axes.scope();
        let skip_attention = matches!(self.cfg.axes, AttentionAxes::None);
        let text_positions: Vec<f64> = (0..t).map(|k| (k + 1) as f64).collect();

        let text = tape.constant(text.clone());
        let projected = text
            .mode_product(&vars.get("text_proj.w"), 2)
            .add_bias(&vars.get("text_proj.b"));
        // restore zeros on maskless days (the bias would leak otherwise)
        let mask3 =
            DenseTensor::from_fn(&[n, t, self.cfg.hidden], |idx| mask.at(&[idx[0], idx[1]]));
        let mask3 = tape.constant(mask3);
        let mut x = projected.mul(&mask3);
        for i in 0..self.cfg.blocks {
            if !skip_attention {
                let normed =
                    x.rmsnorm(&vars.get(&format!("enc.{i}.attn_norm.gain")), RMSNORM_EPS);
                let heads = self.head_vars(vars, &format!("enc.{i}.attn"));
                let spec = self.attend_spec(
                    scope,
                    text_positions.clone(),
                    text_positions.clone(),
                    Some(mask.clone()),
                );
                let attended = attend(tape, &normed, &normed, &heads, &spec);
                x = x.add(&drop.apply(attended));
            }
            x = self.mlp_block(vars, &format!("enc.{i}"), &x, drop);
        }
        Ok(x)
    }

    fn decode_with_vars(
        &self,
        tape: &Tape,
        prices: &DenseTensor,
        stock_ids: &[usize],
        memory: Option<(&Var, &DenseTensor)>,
        vars: &ParamVars,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        if prices.order() != 3 || prices.shape()[2] != 6 {
            return Err(ModelError::Input("price tensor must be (N, T, 6)".into()));
        }
        let (n, t) = (prices.shape()[0], prices.shape()[1]);
        if stock_ids.len() != n || stock_ids.iter().any(|&id| id >= self.stock_count) {
            return Err(ModelError::Input("bad stock ids".into()));
        }
        if let Some((m, _)) = memory {
            if m.shape()[0] != n {
                return Err(ModelError::Input(
                    "memory and price streams disagree on the stock count".into(),
                ));
            }
        }
        let scope = self.cfg.axes.scope();
        let skip_attention = matches!(self.cfg.axes, AttentionAxes::None);
        let price_positions: Vec<f64> = (0..=t).map(|p| p as f64).collect();

        let prices = tape.constant(prices.clone());
        let projected = prices
            .mode_product(&vars.get("price_proj.w"), 2)
            .add_bias(&vars.get("price_proj.b"));
        let cls = vars
            .get("cls.table")
            .gather_rows(stock_ids)
            .reshape(&[n, 1, self.cfg.hidden]);
        let mut x = cls.concat_axis(&projected, 1); // (N, T+1, d)

        for i in 0..self.cfg.blocks {
            if !skip_attention {
                let normed =
                    x.rmsnorm(&vars.get(&format!("dec.{i}.self_norm.gain")), RMSNORM_EPS);
                let heads = self.head_vars(vars, &format!("dec.{i}.self"));
                let spec = self.attend_spec(
                    scope,
                    price_positions.clone(),
                    price_positions.clone(),
                    None,
                );
                let attended = attend(tape, &normed, &normed, &heads, &spec);
                x = x.add(&drop.apply(attended));

                if let Some((memory, mask)) = memory {
                    let normed =
                        x.rmsnorm(&vars.get(&format!("dec.{i}.cross_norm.gain")), RMSNORM_EPS);
                    let heads = self.head_vars(vars, &format!("dec.{i}.cross"));
                    let text_positions: Vec<f64> =
                        (0..memory.shape()[1]).map(|k| (k + 1) as f64).collect();
                    let spec = self.attend_spec(
                        scope,
                        price_positions.clone(),
                        text_positions,
                        Some((*mask).clone()),
                    );
                    let attended = attend(tape, &normed, memory, &heads, &spec);
                    x = x.add(&drop.apply(attended));
                }
            }
            x = self.mlp_block(vars, &format!("dec.{i}"), &x, drop);
        }

        // CLS hidden state per stock
        let hidden = x
            .rmsnorm(&vars.get("final_norm.gain"), RMSNORM_EPS)
            .index_axis(1, 0);
        Ok(self.classifier(vars, &hidden))
    }

    fn mlp_block(&self, vars: &ParamVars, prefix: &str, x: &Var, drop: &mut DropoutCtx) -> Var {
        let names = mlp_names(prefix);
        let normed = x.rmsnorm(&vars.get(&names[0]), RMSNORM_EPS);
        let h = normed
            .mode_product(&vars.get(&names[1]), 2)
            .add_bias(&vars.get(&names[2]))
            .silu()
            .mode_product(&vars.get(&names[3]), 2)
            .add_bias(&vars.get(&names[4]));
        x.add(&drop.apply(h))
    }

    fn classifier(&self, vars: &ParamVars, hidden: &Var) -> Var {
        let n = hidden.shape()[0];
        hidden
            .mode_product(&vars.get("head.w1"), 1)
            .add_bias(&vars.get("head.b1"))
            .silu()
            .mode_product(&vars.get("head.w2"), 1)
            .add_bias(&vars.get("head.b2"))
            .reshape(&[n])
    }

    /// Value-level tokenization: projected price tokens with the stock CLS
    /// embedding prepended at time position 0.
    pub fn tokenize(&self, prices: &DenseTensor, stock_ids: &[usize]) -> Result<DenseTensor> {
        if matches!(self.cfg.modality, Modality::Text) {
            return Err(ModelError::Config("text-only model has no price tokenizer".into()));
        }
        if prices.order() != 3 || prices.shape()[2] != 6 {
            return Err(ModelError::Input("price tensor must be (N, T, 6)".into()));
        }
        let n = prices.shape()[0];
        if stock_ids.len() != n || stock_ids.iter().any(|&id| id >= self.stock_count) {
            return Err(ModelError::Input("bad stock ids".into()));
        }
        let tape = Tape::new();
        let p = tape.constant(prices.clone());
        let w = tape.constant(self.params.get("price_proj.w").unwrap().clone());
        let b = tape.constant(self.params.get("price_proj.b").unwrap().clone());
        let cls = tape.constant(self.params.get("cls.table").unwrap().clone());
        let projected = p.mode_product(&w, 2).add_bias(&b);
        let cls = cls.gather_rows(stock_ids).reshape(&[n, 1, self.cfg.hidden]);
        Ok(cls.concat_axis(&projected, 1).value())
    }

    /// Serialize config and parameters into the checkpoint format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = format!("{}stock_count={}\n", self.cfg.to_kv(), self.stock_count);
        buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
        buf.extend_from_slice(config.as_bytes());
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, value) in self.params.entries() {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(value.order() as u8);
            for &e in value.shape() {
                buf.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Load a checkpoint written by [`Model::save`].
    pub fn load(path: &Path) -> Result<Model> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(ModelError::Format("truncated checkpoint".into()));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        if take(&mut off, 8)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!("unsupported version {version}")));
        }
        let config_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let config_text = String::from_utf8(take(&mut off, config_len)?.to_vec())
            .map_err(|_| ModelError::Format("config echo is not UTF-8".into()))?;
        let mut stock_count = None;
        let mut cfg = ModelConfig::default();
        for line in config_text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Format("bad config echo line".into()))?;
            if key == "stock_count" {
                stock_count = Some(
                    value
                        .parse::<usize>()
                        .map_err(|_| ModelError::Format("bad stock_count".into()))?,
                );
            } else {
                cfg.apply_kv(key, value)?;
            }
        }
        let stock_count =
            stock_count.ok_or_else(|| ModelError::Format("missing stock_count".into()))?;
        let mut model = Model::new(cfg, stock_count)?;

        let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        if count != model.params.len() {
            return Err(ModelError::Format(format!(
                "checkpoint has {count} parameters, config builds {}",
                model.params.len()
            )));
        }
        for i in 0..count {
            let name_len = u16::from_le_bytes(take(&mut off, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
                .map_err(|_| ModelError::Format("parameter name is not UTF-8".into()))?;
            if model.params.names()[i] != name {
                return Err(ModelError::Format(format!(
                    "parameter {i} is `{name}`, expected `{}`",
                    model.params.names()[i]
                )));
            }
            let order = take(&mut off, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(order);
            for _ in 0..order {
                shape.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize);
            }
            if shape.as_slice() != model.params.values()[i].shape() {
                return Err(ModelError::Format(format!("shape mismatch for `{name}`")));
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
            }
            model.params.values_mut()[i] =
                DenseTensor::from_vec(&shape, data).map_err(|e| ModelError::Format(e.to_string()))?;
        }
        if off != bytes.len() {
            return Err(ModelError::Format("trailing bytes".into()));
        }
        Ok(model)
    }
}

/// Inverted-dropout state for one forward pass; a zero rate is the
/// identity.
struct DropoutCtx<'a, 'b> {
    tape: &'a Tape,
    rate: f64,
    rng: Option<&'b mut Rng>,
}

impl DropoutCtx<'_, '_> {
    fn apply(&mut self, x: Var) -> Var {
        if self.rate == 0.0 {
            return x;
        }
        let rng = self.rng.as_deref_mut().expect("dropout requires an rng in training mode");
        let keep = 1.0 - self.rate;
        let mask = DenseTensor::from_fn(&x.shape(), |_| {
            if rng.uniform() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask = self.tape.constant(mask);
        x.mul(&mask)
    }
}

/// Tape variables of every parameter, aligned with the store.
pub struct ParamVars {
    names: BTreeMap<String, usize>,
    vars: Vec<Var>,
}

impl ParamVars {
    /// Pair externally created variables with the store's names; `vars`
    /// must follow store order.
    pub fn from_slice(params: &ParamStore, vars: &[Var]) -> Self {
        assert_eq!(params.len(), vars.len(), "one variable per parameter");
        let names = params
            .names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, vars: vars.to_vec() }
    }

    fn register(tape: &Tape, params: &ParamStore, train: bool) -> Self {
        let mut names = BTreeMap::new();
        let mut vars = Vec::with_capacity(params.len());
        for (i, (name, value)) in params.entries().enumerate() {
            let var = if train { tape.param(value.clone()) } else { tape.constant(value.clone()) };
            names.insert(name.clone(), i);
            vars.push(var);
        }
        Self { names, vars }
    }

    fn get(&self, name: &str) -> Var {
        let idx = *self.names.get(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[idx].clone()
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}

/// Result of a forward pass: per-stock logits plus the registered
/// parameter variables (aligned with `ParamStore` order).
pub struct ModelForward {
    pub logits: Var,
    pub param_vars: ParamVars,
}

impl ModelForward {
    fn new(logits: Var, param_vars: ParamVars) -> Self {
        Self { logits, param_vars }
    }

    /// Masked mean binary cross-entropy of the logits.
    pub fn loss(&self, labels: &[f64], valid: &[bool]) -> Var {
        let mask: Vec<f64> = valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        self.logits.bce_with_logits(labels, &mask)
    }
}

/// Threshold 0.5 on the sigmoid: label 1 iff the logit is non-negative.
pub fn predict(logits: &DenseTensor) -> Vec<u8> {
    logits.data().iter().map(|&z| u8::from(z >= 0.0)).collect()
}

/// Value-level RMS normalization over the last axis.
pub fn rmsnorm(x: &DenseTensor, gain: &DenseTensor) -> Result<DenseTensor> {
    let d = *x.shape().last().unwrap();
    if gain.len() != d {
        return Err(ModelError::Input(format!(
            "gain width {} does not match feature width {d}",
            gain.len()
        )));
    }
    Ok(DenseTensor::from_vec(
        x.shape(),
        kernels::rmsnorm_forward(x.data(), gain.data(), d, RMSNORM_EPS),
    )
    .unwrap())
}

/// Value-level rotary rotation. Accepts `(T, d_H)` with one position per
/// row or `(N, T, d_H)` with one position per timestep; `d_H` must be even.
pub fn rotary_apply(x: &DenseTensor, positions: &[f64]) -> Result<DenseTensor> {
    let dh = *x.shape().last().unwrap();
    if dh % 2 != 0 {
        return Err(ModelError::Input("feature width must be even".into()));
    }
    let (rows, row_positions): (usize, Vec<f64>) = match x.order() {
        2 => {
            if positions.len() != x.shape()[0] {
                return Err(ModelError::Input("one position per row required".into()));
            }
            (x.shape()[0], positions.to_vec())
        }
        3 => {
            let (n, t) = (x.shape()[0], x.shape()[1]);
            if positions.len() != t {
                return Err(ModelError::Input("one position per timestep required".into()));
            }
            let mut rep = Vec::with_capacity(n * t);
            for _ in 0..n {
                rep.extend_from_slice(positions);
            }
            (n * t, rep)
        }
        _ => return Err(ModelError::Input("rotary expects order 2 or 3".into())),
    };
    let data = kernels::rotary_forward(
        x.data(),
        rows,
        dh,
        &row_positions,
        crate::autodiff::ROTARY_BASE,
        false,
    );
    Ok(DenseTensor::from_vec(x.shape(), data).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use crate::data::Date;

    fn tiny_sample(n: usize, t: usize, text_dim: usize, seed: u64) -> WindowSample {
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

    fn tiny_config(variant: AttentionVariant) -> ModelConfig {
        ModelConfig {
            hidden: 8,
            heads: 2,
            head_size: 4,
            blocks: 1,
            text_dim: 12,
            feature_count: 16,
            variant,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        for variant in [AttentionVariant::Exact, AttentionVariant::Factored, AttentionVariant::Kernelized] {
            let model = Model::new(tiny_config(variant), 4).unwrap();
            let sample = tiny_sample(3, 4, 12, 1);
            let run = || {
                let tape = Tape::new();
                let fwd = model.forward(&tape, &sample, false, None).unwrap();
                fwd.logits.value()
            };
            let a = run();
            let b = run();
            assert_eq!(a.shape(), &[3]);
            assert_eq!(a.data(), b.data(), "{variant:?} forward not deterministic");
        }
    }

    #[test]
    fn single_stock_single_day_runs_end_to_end() {
        let model = Model::new(tiny_config(AttentionVariant::Factored), 2).unwrap();
        let sample = tiny_sample(1, 1, 12, 2);
        let tape = Tape::new();
        let fwd = model.forward(&tape, &sample, false, None).unwrap();
        assert_eq!(fwd.logits.shape(), vec![1]);
    }

    #[test]
    fn tokenize_prepends_cls() {
        let model = Model::new(tiny_config(AttentionVariant::Factored), 3).unwrap();
        let mut rng = Rng::seed_from(3);
        let prices = DenseTensor::from_fn(&[1, 1, 6], |_| rng.normal());
        let tokens = model.tokenize(&prices, &[2]).unwrap();
        assert_eq!(tokens.shape(), &[1, 2, 8]);

        // two stocks with identical prices differ only at the CLS position
        let prices2 = DenseTensor::from_fn(&[2, 3, 6], |idx| (idx[1] * 6 + idx[2]) as f64 * 0.1);
        let tokens2 = model.tokenize(&prices2, &[0, 1]).unwrap();
        for k in 1..4 {
            for c in 0..8 {
                assert_eq!(tokens2.at(&[0, k, c]), tokens2.at(&[1, k, c]));
            }
        }
        let cls_differs = (0..8).any(|c| tokens2.at(&[0, 0, c]) != tokens2.at(&[1, 0, c]));
        assert!(cls_differs);
    }

    #[test]
    fn stock_permutation_equivariance_end_to_end() {
        let model = Model::new(tiny_config(AttentionVariant::Factored), 4).unwrap();
        let sample = tiny_sample(4, 3, 12, 4);
        let perm = [2usize, 0, 3, 1];
        let permuted = WindowSample {
            stocks: perm.iter().map(|&p| sample.stocks[p].clone()).collect(),
            stock_ids: perm.iter().map(|&p| sample.stock_ids[p]).collect(),
            dates: sample.dates.clone(),
            label_date: sample.label_date,
            prices: DenseTensor::from_fn(&[4, 3, 6], |idx| sample.prices.at(&[perm[idx[0]], idx[1], idx[2]])),
            text: DenseTensor::from_fn(&[4, 3, 12], |idx| sample.text.at(&[perm[idx[0]], idx[1], idx[2]])),
            mask: DenseTensor::from_fn(&[4, 3], |idx| sample.mask.at(&[perm[idx[0]], idx[1]])),
            labels: perm.iter().map(|&p| sample.labels[p]).collect(),
            label_valid: perm.iter().map(|&p| sample.label_valid[p]).collect(),
        };
        let tape = Tape::new();
        let base = model.forward(&tape, &sample, false, None).unwrap().logits.value();
        let tape = Tape::new();
        let permuted_logits = model.forward(&tape, &permuted, false, None).unwrap().logits.value();
        for (i, &p) in perm.iter().enumerate() {
            let diff = (permuted_logits.data()[i] - base.data()[p]).abs();
            assert!(diff < 1e-10, "stock {i} logit differs by {diff}");
        }
    }

    #[test]
    fn unimodal_configs_run() {
        for modality in [Modality::Price, Modality::Text] {
            let cfg = ModelConfig { modality, ..tiny_config(AttentionVariant::Factored) };
            let model = Model::new(cfg, 3).unwrap();
            let sample = tiny_sample(3, 4, 12, 5);
            let tape = Tape::new();
            let fwd = model.forward(&tape, &sample, false, None).unwrap();
            assert_eq!(fwd.logits.shape(), vec![3]);
        }
    }

    #[test]
    fn ablation_axes_run_and_differ() {
        let sample = tiny_sample(3, 4, 12, 6);
        let mut outputs = Vec::new();
        for axes in [AttentionAxes::None, AttentionAxes::StockWise, AttentionAxes::TimeWise, AttentionAxes::Both] {
            let cfg = ModelConfig { axes, ..tiny_config(AttentionVariant::Factored) };
            let model = Model::new(cfg, 3).unwrap();
            let tape = Tape::new();
            let fwd = model.forward(&tape, &sample, false, None).unwrap();
            outputs.push(fwd.logits.value());
        }
        for i in 0..outputs.len() {
            for j in (i + 1)..outputs.len() {
                let diff = outputs[i].sub(&outputs[j]).unwrap().frobenius_norm();
                assert!(diff > 1e-9, "axes modes {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn none_axes_ignore_other_stocks_data() {
        // with attention bypassed, a stock's logit must not depend on
        // another stock's inputs
        let cfg = ModelConfig { axes: AttentionAxes::None, ..tiny_config(AttentionVariant::Factored) };
        let model = Model::new(cfg, 3).unwrap();
        let mut sample = tiny_sample(3, 4, 12, 7);
        let tape = Tape::new();
        let before = model.forward(&tape, &sample, false, None).unwrap().logits.value();
        // perturb stock 2's prices
        let mut data: Vec<f64> = sample.prices.data().to_vec();
        for k in 0..4 {
            for c in 0..6 {
                data[(2 * 4 + k) * 6 + c] += 3.0;
            }
        }
        sample.prices = DenseTensor::from_vec(&[3, 4, 6], data).unwrap();
        let tape = Tape::new();
        let after = model.forward(&tape, &sample, false, None).unwrap().logits.value();
        assert_eq!(before.data()[0], after.data()[0]);
        assert_eq!(before.data()[1], after.data()[1]);
    }

    #[test]
    fn dropout_zero_is_deterministic_and_training_loss_backprops() {
        let model = Model::new(tiny_config(AttentionVariant::Factored), 3).unwrap();
        let sample = tiny_sample(3, 4, 12, 8);
        let tape = Tape::new();
        let fwd = model.forward(&tape, &sample, true, None).unwrap();
        let loss = fwd.loss(&sample.labels, &sample.label_valid);
        assert!(loss.scalar_value().is_finite());
        let grads = backward(&loss).unwrap();
        // every parameter receives a finite gradient tensor
        for var in fwd.param_vars.all() {
            let g = grads.of(var);
            assert!(g.data().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn zero_block_encoder_is_a_projection_passthrough() {
        let cfg = ModelConfig { blocks: 0, ..tiny_config(AttentionVariant::Factored) };
        let model = Model::new(cfg, 2).unwrap();
        let sample = tiny_sample(2, 3, 12, 20);
        let tape = Tape::new();
        let memory = model.encode(&tape, &sample.text, &sample.mask).unwrap().value();

        // hand-computed projection with the mask re-applied
        let w = model.params.get("text_proj.w").unwrap();
        let b = model.params.get("text_proj.b").unwrap();
        let mut expected = crate::tensor::mode_product(&sample.text, w, 2).unwrap();
        for i in 0..2 {
            for t in 0..3 {
                for c in 0..8 {
                    let v = (expected.at(&[i, t, c]) + b.data()[c]) * sample.mask.at(&[i, t]);
                    expected.set(&[i, t, c], v);
                }
            }
        }
        assert_eq!(memory.data(), expected.data());
    }

    #[test]
    fn zero_memory_and_zero_cross_values_leave_logits_price_driven() {
        let mut model = Model::new(tiny_config(AttentionVariant::Factored), 2).unwrap();
        // zero every cross-attention value projection
        let names: Vec<String> = model
            .params
            .names()
            .iter()
            .filter(|n| n.contains(".cross.") && n.ends_with(".wv"))
            .cloned()
            .collect();
        assert!(!names.is_empty());
        for name in names {
            let idx = model.params.names().iter().position(|n| *n == name).unwrap();
            let shape = model.params.values()[idx].shape().to_vec();
            model.params.values_mut()[idx] = DenseTensor::zeros(&shape);
        }
        let sample = tiny_sample(2, 4, 12, 21);
        let logits_for = |memory_value: f64| {
            let tape = Tape::new();
            let memory = tape.constant(DenseTensor::filled(&[2, 4, 8], memory_value));
            model
                .decode(&tape, &sample.prices, &sample.stock_ids, Some((&memory, &sample.mask)))
                .unwrap()
                .value()
        };
        // zero memory and wildly different memory produce identical logits
        assert_eq!(logits_for(0.0).data(), logits_for(37.5).data());
    }

    #[test]
    fn single_block_encoder_matches_hand_assembled_primitives() {
        let cfg = ModelConfig { blocks: 1, heads: 1, head_size: 4, ..tiny_config(AttentionVariant::Factored) };
        let model = Model::new(cfg.clone(), 2).unwrap();
        let sample = tiny_sample(2, 3, 12, 22);
        let tape = Tape::new();
        let built = model.encode(&tape, &sample.text, &sample.mask).unwrap().value();

        // the same composition, assembled by hand from the primitives
        let tape = Tape::new();
        let get = |name: &str| tape.constant(model.params.get(name).unwrap().clone());
        let text = tape.constant(sample.text.clone());
        let projected = text.mode_product(&get("text_proj.w"), 2).add_bias(&get("text_proj.b"));
        let mask3 = tape.constant(DenseTensor::from_fn(&[2, 3, 8], |idx| {
            sample.mask.at(&[idx[0], idx[1]])
        }));
        let x = projected.mul(&mask3);
        let normed = x.rmsnorm(&get("enc.0.attn_norm.gain"), RMSNORM_EPS);
        let heads = vec![crate::attention::HeadVars {
            w_q: get("enc.0.attn.0.wq"),
            w_k: get("enc.0.attn.0.wk"),
            w_v: get("enc.0.attn.0.wv"),
            w_o: get("enc.0.attn.0.wo"),
        }];
        let positions = vec![1.0, 2.0, 3.0];
        let spec = crate::attention::AttendSpec {
            variant: AttentionVariant::Factored,
            pooling: cfg.pooling,
            scope: crate::attention::AttentionScope::Both,
            scale: 1.0 / (cfg.hidden as f64).sqrt(),
            rotary: true,
            q_positions: positions.clone(),
            k_positions: positions,
            key_mask: Some(sample.mask.clone()),
            feature_maps: Vec::new(),
        };
        let attended = crate::attention::attend(&tape, &normed, &normed, &heads, &spec);
        let x = x.add(&attended);
        let normed = x.rmsnorm(&get("enc.0.mlp_norm.gain"), RMSNORM_EPS);
        let h = normed
            .mode_product(&get("enc.0.mlp.w1"), 2)
            .add_bias(&get("enc.0.mlp.b1"))
            .silu()
            .mode_product(&get("enc.0.mlp.w2"), 2)
            .add_bias(&get("enc.0.mlp.b2"));
        let by_hand = x.add(&h).value();

        assert_eq!(built.data(), by_hand.data(), "composition must be bit-identical");
    }

    #[test]
    fn predict_thresholds_at_zero_logit() {
        let logits = DenseTensor::from_vec(&[3], vec![0.0, -10.0, 10.0]).unwrap();
        assert_eq!(predict(&logits), vec![1, 0, 1]);
    }

    #[test]
    fn rmsnorm_value_matches_hand_computation() {
        let x = DenseTensor::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        let gain = DenseTensor::filled(&[2], 1.0);
        let y = rmsnorm(&x, &gain).unwrap();
        let rms = (12.5f64 + RMSNORM_EPS).sqrt();
        assert!((y.data()[0] - 3.0 / rms).abs() < 1e-12);
        assert!((y.data()[1] - 4.0 / rms).abs() < 1e-12);
        // scale invariance
        let y2 = rmsnorm(&x.scale(7.5), &gain).unwrap();
        for (a, b) in y.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        // zero vector is eps-guarded
        let z = rmsnorm(&DenseTensor::zeros(&[2]), &gain).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0]);
    }

    #[test]
    fn rotary_value_properties() {
        let mut rng = Rng::seed_from(9);
        let x = DenseTensor::from_fn(&[1, 4], |_| rng.normal());
        // position 0 is the identity
        let y = rotary_apply(&x, &[0.0]).unwrap();
        assert_eq!(y.data(), x.data());
        // norms are preserved
        let y = rotary_apply(&x, &[3.0]).unwrap();
        assert!((y.frobenius_norm() - x.frobenius_norm()).abs() < 1e-12);
        // inner products depend only on position differences
        let q = DenseTensor::from_fn(&[1, 4], |_| rng.normal());
        let k = DenseTensor::from_fn(&[1, 4], |_| rng.normal());
        let dot = |a: &DenseTensor, b: &DenseTensor| -> f64 {
            a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum()
        };
        let d1 = dot(&rotary_apply(&q, &[2.0]).unwrap(), &rotary_apply(&k, &[5.0]).unwrap());
        let d2 = dot(&rotary_apply(&q, &[9.0]).unwrap(), &rotary_apply(&k, &[12.0]).unwrap());
        assert!((d1 - d2).abs() < 1e-10, "{d1} vs {d2}");
        // odd widths are rejected
        assert!(rotary_apply(&DenseTensor::zeros(&[1, 3]), &[0.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = std::env::temp_dir().join("hoformer-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.ckpt");
        let model = Model::new(tiny_config(AttentionVariant::Kernelized), 5).unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.stock_count, 5);
        for ((na, va), (nb, vb)) in model.params.entries().zip(loaded.params.entries()) {
            assert_eq!(na, nb);
            assert_eq!(va.data(), vb.data());
        }
        // and the loaded model produces identical logits
        let sample = tiny_sample(2, 3, 12, 10);
        let tape = Tape::new();
        let a = model.forward(&tape, &sample, false, None).unwrap().logits.value();
        let tape = Tape::new();
        let b = loaded.forward(&tape, &sample, false, None).unwrap().logits.value();
        assert_eq!(a.data(), b.data());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn config_kv_round_trips() {
        let cfg = ModelConfig {
            hidden: 16,
            heads: 2,
            head_size: 8,
            variant: AttentionVariant::Exact,
            axes: AttentionAxes::TimeWise,
            modality: Modality::Price,
            ..ModelConfig::default()
        };
        let parsed = ModelConfig::parse_kv(&cfg.to_kv()).unwrap();
        assert_eq!(parsed, cfg);
        assert!(ModelConfig::parse_kv("nonsense=1\n").is_err());
        let mut bad = cfg.clone();
        bad.head_size = 3;
        assert!(bad.validate().is_err());
    }
}
