use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Rungs of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Fully connected conditional GAN.
    Base,
    /// Spatial policy-correction layer; an external method not built here.
    BaseS,
    /// CNN+LSTM generator with meta-learning and a zero task embedding.
    BaseStMeta,
    /// Adds the task-graph embedding.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::BaseS, Variant::BaseStMeta, Variant::Full];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Base => "Base",
            Variant::BaseS => "Base + S",
            Variant::BaseStMeta => "Base + ST + Meta",
            Variant::Full => "Base + ST + Meta + Graph (S2)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub note: String,
}

/// One row per rung. Rungs without scores are listed with a note instead
/// of failing the report.
pub fn ablation_report(scores: &BTreeMap<Variant, (f64, f64)>) -> Vec<AblationRow> {
    Variant::ALL
        .iter()
        .map(|&v| {
            let (rmse, mae, note) = match (scores.get(&v), v) {
                (Some(&(r, m)), _) => (Some(r), Some(m), String::new()),
                (None, Variant::BaseS) => (None, None, "not implemented: external method".to_string()),
                (None, _) => (None, None, "absent".to_string()),
            };
            AblationRow { variant: v, rmse, mae, note }
        })
        .collect()
}

/// `full <= base+st+meta <= base` in RMSE, if all three are present.
pub fn ordering_holds(rows: &[AblationRow]) -> Option<bool> {
    let get = |v| rows.iter().find(|r| r.variant == v).and_then(|r| r.rmse);
    let (b, s, f) = (get(Variant::Base)?, get(Variant::BaseStMeta)?, get(Variant::Full)?);
    Some(f <= s && s <= b)
}

pub fn render_table(rows: &[AblationRow]) -> String {
    let width = Variant::ALL.iter().map(|v| v.label().len()).max().unwrap_or(0);
    let mut out = format!("{:<width$}  {:>10}  {:>10}\n", "Method", "RMSE", "MAE");
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    for r in rows {
        let _ = write!(out, "{:<width$}  {:>10}  {:>10}", r.variant.label(), cell(r.rmse), cell(r.mae));
        if !r.note.is_empty() {
            let _ = write!(out, "  ({})", r.note);
        }
        out.push('\n');
    }
    out
}
