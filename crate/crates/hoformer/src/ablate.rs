//! Ablation tables: attention-dimension modes (none / stock-wise /
//! time-wise / both) and modality-by-attention-type cells, each trained and
//! scored on the test split.

use crate::attention::AttentionVariant;
use crate::data::{Dataset, SplitResult};
use crate::metrics::Scores;
use crate::model::{AttentionAxes, Modality, ModelConfig};
use crate::train::{train, Result, TrainConfig, TrainError};

#[derive(Debug, Clone)]
pub struct AblationRow {
    /// `attention-dimension` or `modality`.
    pub group: &'static str,
    pub label: String,
    pub scores: Scores,
}

#[derive(Debug, Clone, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,cell,acc,f1,mcc,scored\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4},{}\n",
                row.group, row.label, row.scores.accuracy, row.scores.f1, row.scores.mcc, row.scores.scored
            ));
        }
        out
    }
}

fn test_scores(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    dataset: &Dataset,
    split: &SplitResult,
) -> Result<Scores> {
    let result = train(cfg, tcfg, dataset, split)?;
    result
        .manifest
        .test
        .ok_or_else(|| TrainError::Data("test split produced no scores".into()))
}

/// The four attention-dimension modes on one dataset.
pub fn axes_ablation(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    dataset: &Dataset,
    split: &SplitResult,
) -> Result<Vec<(AttentionAxes, Scores)>> {
    let modes = [
        AttentionAxes::None,
        AttentionAxes::StockWise,
        AttentionAxes::TimeWise,
        AttentionAxes::Both,
    ];
    let mut out = Vec::with_capacity(modes.len());
    for axes in modes {
        let mut cfg = base_model.clone();
        cfg.axes = axes;
        out.push((axes, test_scores(&cfg, base_train, dataset, split)?));
    }
    Ok(out)
}

/// The six modality-by-attention-type cells. "standard" denotes the
/// factored softmax path, "kernelized" the linear-attention path.
pub fn modality_ablation(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    dataset: &Dataset,
    split: &SplitResult,
) -> Result<Vec<(Modality, AttentionVariant, Scores)>> {
    if dataset.text_dim == 0 {
        return Err(TrainError::Data("dataset carries no text modality".into()));
    }
    let mut out = Vec::new();
    for modality in [Modality::Price, Modality::Text, Modality::Multimodal] {
        for variant in [AttentionVariant::Factored, AttentionVariant::Kernelized] {
            let mut cfg = base_model.clone();
            cfg.modality = modality;
            cfg.variant = variant;
            out.push((modality, variant, test_scores(&cfg, base_train, dataset, split)?));
        }
    }
    Ok(out)
}

/// All ten cells: 4 attention-dimension modes plus 6 modality cells.
pub fn full_ablation(
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    dataset: &Dataset,
    split: &SplitResult,
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for (axes, scores) in axes_ablation(base_model, base_train, dataset, split)? {
        table.rows.push(AblationRow {
            group: "attention-dimension",
            label: axes.as_str().to_string(),
            scores,
        });
    }
    for (modality, variant, scores) in modality_ablation(base_model, base_train, dataset, split)? {
        let kind = match variant {
            AttentionVariant::Kernelized => "kernelized",
            _ => "standard",
        };
        table.rows.push(AblationRow {
            group: "modality",
            label: format!("{}/{}", modality.as_str(), kind),
            scores,
        });
    }
    Ok(table)
}
