//! Accuracy metrics, hierarchy consistency and the flat-vs-hierarchical table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{ImageStore, LabelTaxonomy, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Scalar;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalLevel {
    Type,
    Item,
}

impl EvalLevel {
    pub fn class_count(self, taxonomy: &LabelTaxonomy) -> usize {
        match self {
            EvalLevel::Type => taxonomy.type_count(),
            EvalLevel::Item => taxonomy.item_count(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EvalLevel::Type => "type",
            EvalLevel::Item => "item",
        }
    }
}

impl std::str::FromStr for EvalLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type" => Ok(EvalLevel::Type),
            "item" => Ok(EvalLevel::Item),
            other => Err(Error::Config(format!("unknown level {other:?}, expected type or item"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeAccuracySource {
    /// Type model's own predictions.
    TypeModel,
    /// Item predictions mapped to types through the taxonomy.
    ItemsMapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: EvalLevel,
    pub split: Split,
    pub sample_count: usize,
    pub class_names: Vec<String>,
    /// Per-sample (micro) accuracy.
    pub accuracy: f64,
    /// Mean of the per-class accuracies over classes present in the split.
    pub macro_accuracy: f64,
    /// `None` for classes with no samples in the split.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub average_item_accuracy: Option<f64>,
    pub average_type_accuracy: f64,
    pub type_accuracy_source: TypeAccuracySource,
    /// Fraction of samples whose predicted item belongs to the predicted type.
    pub hierarchy_consistency: Option<f64>,
}

fn labels_for(level: EvalLevel, taxonomy: &LabelTaxonomy, item: usize) -> usize {
    match level {
        EvalLevel::Type => taxonomy.type_of(item),
        EvalLevel::Item => item,
    }
}

/// Build a report from per-sample true items and predicted classes at `level`.
/// `type_predictions`, when given, must come from a type-level model on the
/// same samples and is only meaningful for item-level reports.
pub fn report_from_predictions(
    taxonomy: &LabelTaxonomy,
    level: EvalLevel,
    split: Split,
    true_items: &[usize],
    predictions: &[usize],
    type_predictions: Option<&[usize]>,
) -> Result<EvalReport> {
    let n = true_items.len();
    if n == 0 {
        return Err(Error::Evaluation(format!("{} split has no samples", split.name())));
    }
    if predictions.len() != n || type_predictions.is_some_and(|t| t.len() != n) {
        return Err(Error::Evaluation("prediction count differs from sample count".into()));
    }
    let classes = level.class_count(taxonomy);
    if let Some(&bad) = predictions.iter().find(|&&p| p >= classes) {
        return Err(Error::Evaluation(format!("prediction {bad} outside {classes} classes")));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&item, &p) in true_items.iter().zip(predictions) {
        confusion[labels_for(level, taxonomy, item)][p] += 1;
    }
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let accuracy = correct as f64 / n as f64;
    let per_class_accuracy: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_accuracy.iter().flatten().copied().collect();
    let macro_accuracy = present.iter().sum::<f64>() / present.len() as f64;

    let (average_item_accuracy, average_type_accuracy, type_accuracy_source, hierarchy_consistency) = match level {
        EvalLevel::Type => {
            if type_predictions.is_some() {
                return Err(Error::Evaluation("hierarchy consistency is undefined for a type-level model".into()));
            }
            (None, accuracy, TypeAccuracySource::TypeModel, None)
        }
        EvalLevel::Item => match type_predictions {
            Some(types) => {
                if let Some(&bad) = types.iter().find(|&&t| t >= taxonomy.type_count()) {
                    return Err(Error::Evaluation(format!("type prediction {bad} out of range")));
                }
                let type_hits = true_items.iter().zip(types).filter(|(&item, &t)| taxonomy.type_of(item) == t).count();
                let consistent = predictions.iter().zip(types).filter(|(&p, &t)| taxonomy.type_of(p) == t).count();
                (
                    Some(accuracy),
                    type_hits as f64 / n as f64,
                    TypeAccuracySource::TypeModel,
                    Some(consistent as f64 / n as f64),
                )
            }
            None => {
                let type_hits = true_items
                    .iter()
                    .zip(predictions)
                    .filter(|(&item, &p)| taxonomy.type_of(item) == taxonomy.type_of(p))
                    .count();
                (Some(accuracy), type_hits as f64 / n as f64, TypeAccuracySource::ItemsMapped, None)
            }
        },
    };

    let class_names = match level {
        EvalLevel::Type => taxonomy.type_names.clone(),
        EvalLevel::Item => taxonomy.item_names.clone(),
    };
    Ok(EvalReport {
        level,
        split,
        sample_count: n,
        class_names,
        accuracy,
        macro_accuracy,
        per_class_accuracy,
        confusion,
        average_item_accuracy,
        average_type_accuracy,
        type_accuracy_source,
        hierarchy_consistency,
    })
}

const EVAL_BATCH: usize = 128;

/// Argmax of eval-mode logits for each listed sample.
pub fn predict<T: Scalar>(model: &Model<T>, data: &ImageStore<T>, indices: &[usize]) -> Result<Vec<usize>> {
    let classes = model.class_count();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_BATCH) {
        let logits = model.logits(&data.batch(chunk)?)?;
        out.extend(logits.data().chunks(classes).map(argmax));
    }
    Ok(out)
}

fn check_head<T: Scalar>(model: &Model<T>, level: EvalLevel, taxonomy: &LabelTaxonomy) -> Result<()> {
    let expected = level.class_count(taxonomy);
    if model.class_count() != expected {
        return Err(Error::Config(format!(
            "model head has {} classes but {}-level evaluation needs {expected}",
            model.class_count(),
            level.name()
        )));
    }
    Ok(())
}

fn split_items<T: Scalar>(data: &ImageStore<T>, split: Split) -> Result<(Vec<usize>, Vec<usize>)> {
    let indices = data.indices(split);
    if indices.is_empty() {
        return Err(Error::Evaluation(format!("{} split has no samples", split.name())));
    }
    let items = indices.iter().map(|&i| data.item(i)).collect();
    Ok((indices, items))
}

/// Accuracy of one model at one label level on one split.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    data: &ImageStore<T>,
    split: Split,
    level: EvalLevel,
) -> Result<EvalReport> {
    check_head(model, level, &data.taxonomy)?;
    let (indices, items) = split_items(data, split)?;
    let predictions = predict(model, data, &indices)?;
    report_from_predictions(&data.taxonomy, level, split, &items, &predictions, None)
}

/// Item-level report whose type accuracy and hierarchy consistency come from
/// a separate type-level model.
pub fn evaluate_hierarchy<T: Scalar>(
    item_model: &Model<T>,
    type_model: &Model<T>,
    data: &ImageStore<T>,
    split: Split,
) -> Result<EvalReport> {
    check_head(item_model, EvalLevel::Item, &data.taxonomy)?;
    check_head(type_model, EvalLevel::Type, &data.taxonomy)?;
    let (indices, items) = split_items(data, split)?;
    let predictions = predict(item_model, data, &indices)?;
    let types = predict(type_model, data, &indices)?;
    report_from_predictions(&data.taxonomy, EvalLevel::Item, split, &items, &predictions, Some(&types))
}

/// Published flat and hierarchical item accuracies (%), shown for reference only.
pub const REFERENCE_FLAT_PERCENT: f64 = 85.32;
pub const REFERENCE_HIERARCHICAL_PERCENT: f64 = 88.50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub accuracy_percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub split: Split,
    pub level: EvalLevel,
    pub rows: Vec<ComparisonRow>,
    /// Hierarchical minus flat, in percentage points.
    pub difference_points: f64,
    pub reference_flat_percent: f64,
    pub reference_hierarchical_percent: f64,
}

const METHOD_WIDTH: usize = 30;
const VALUE_WIDTH: usize = 22;

impl ComparisonTable {
    /// Fixed-width text rendering, one line per row, newline terminated.
    pub fn render(&self) -> String {
        let rule = "-".repeat(METHOD_WIDTH + VALUE_WIDTH);
        let mut s = String::new();
        let _ = writeln!(s, "{:<METHOD_WIDTH$}{:>VALUE_WIDTH$}", "Method", "Average accuracy (%)");
        let _ = writeln!(s, "{rule}");
        for row in &self.rows {
            let _ = writeln!(s, "{:<METHOD_WIDTH$}{:>VALUE_WIDTH$.2}", row.method, row.accuracy_percent);
        }
        let _ = writeln!(s, "{rule}");
        let diff = format!("{:+.2}", self.difference_points);
        let _ = writeln!(s, "{:<METHOD_WIDTH$}{:>VALUE_WIDTH$}", "Difference (points)", diff);
        let _ = writeln!(s, "split: {}, level: {}", self.split.name(), self.level.name());
        let _ = writeln!(
            s,
            "reference (published, not computed here): flat {:.2}, hierarchical {:.2}",
            self.reference_flat_percent, self.reference_hierarchical_percent
        );
        s
    }
}

/// Two-row accuracy table for reports on the same split and level.
pub fn compare(flat: &EvalReport, hier: &EvalReport) -> Result<ComparisonTable> {
    if flat.split != hier.split {
        return Err(Error::Comparison(format!(
            "flat report is on {} but hierarchical is on {}",
            flat.split.name(),
            hier.split.name()
        )));
    }
    if flat.level != hier.level {
        return Err(Error::Comparison(format!(
            "flat report is {}-level but hierarchical is {}-level",
            flat.level.name(),
            hier.level.name()
        )));
    }
    let flat_pct = flat.accuracy * 100.0;
    let hier_pct = hier.accuracy * 100.0;
    Ok(ComparisonTable {
        split: flat.split,
        level: flat.level,
        rows: vec![
            ComparisonRow { method: "Flat classification".into(), accuracy_percent: flat_pct },
            ComparisonRow { method: "Hierarchical classification".into(), accuracy_percent: hier_pct },
        ],
        difference_points: hier_pct - flat_pct,
        reference_flat_percent: REFERENCE_FLAT_PERCENT,
        reference_hierarchical_percent: REFERENCE_HIERARCHICAL_PERCENT,
    })
}
