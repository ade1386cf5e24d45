//! Evaluation: per-class precision/recall/F1 against labeled datasets,
//! plus a supervised nearest-centroid baseline over the same token space
//! the retriever uses.
//!
//! Metrics retain full precision internally; display rounds half-up to
//! integer percent. The macro average is the unweighted mean of the three
//! per-class F1 scores.

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::corpus::{LabeledDataset, ScenarioRecord};
use crate::text::tokenize;
use crate::triage::{ScenarioClass, TriageResult};

/// 3×3 tally: rows are true classes, columns are predicted classes, both in
/// the order already-tested, not-yet-tested, error-prone. Records without a
/// prediction are counted as unanalyzed, never guessed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
    pub unanalyzed: u64,
}

fn class_index(c: ScenarioClass) -> usize {
    match c {
        ScenarioClass::AlreadyTested => 0,
        ScenarioClass::NotYetTested => 1,
        ScenarioClass::ErrorProne => 2,
    }
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        ConfusionMatrix::default()
    }

    pub fn record(&mut self, truth: ScenarioClass, predicted: ScenarioClass) {
        self.counts[class_index(truth)][class_index(predicted)] += 1;
    }

    pub fn get(&self, truth: ScenarioClass, predicted: ScenarioClass) -> u64 {
        self.counts[class_index(truth)][class_index(predicted)]
    }

    /// Sum of all cells, excluding unanalyzed.
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn row_sum(&self, c: ScenarioClass) -> u64 {
        self.counts[class_index(c)].iter().sum()
    }

    fn col_sum(&self, c: ScenarioClass) -> u64 {
        self.counts.iter().map(|row| row[class_index(c)]).sum()
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for unknown scenario_id {id:?}")]
    UnknownScenario { id: String },
    #[error("duplicate prediction for scenario_id {id:?}")]
    DuplicatePrediction { id: String },
    #[error("class {0} absent from training data")]
    MissingClass(ScenarioClass),
    #[error("training dataset is empty")]
    EmptyTraining,
    #[error("record {id:?} has no label")]
    Unlabeled { id: String },
}

/// Tally predictions against ground truth. Every prediction must name a
/// scenario present in `truth`, at most once; truth records without a
/// prediction count as unanalyzed.
pub fn tally_confusion(
    truth: &LabeledDataset,
    predictions: &[TriageResult],
) -> Result<ConfusionMatrix, EvalError> {
    let mut labels: BTreeMap<&str, ScenarioClass> = BTreeMap::new();
    for rec in &truth.records {
        let label = rec.label.ok_or_else(|| EvalError::Unlabeled {
            id: rec.scenario_id.clone(),
        })?;
        labels.insert(&rec.scenario_id, label);
    }
    let mut matrix = ConfusionMatrix::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for pred in predictions {
        let label = labels
            .get(pred.scenario_id.as_str())
            .ok_or_else(|| EvalError::UnknownScenario {
                id: pred.scenario_id.clone(),
            })?;
        if seen.insert(&pred.scenario_id, ()).is_some() {
            return Err(EvalError::DuplicatePrediction {
                id: pred.scenario_id.clone(),
            });
        }
        matrix.record(*label, pred.class);
    }
    matrix.unanalyzed = (truth.records.len() - seen.len()) as u64;
    Ok(matrix)
}

/// Precision, recall and F1 for one class, in [0,1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: ScenarioClass,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Full-precision evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub total: u64,
    pub unanalyzed: u64,
}

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Round a [0,1] value to an integer percentage, half away from zero.
pub fn display_percent(x: f64) -> u32 {
    (x * 100.0).round() as u32
}

/// Per-class precision/recall/F1 plus the unweighted macro F1. A zero
/// denominator yields a zero metric.
pub fn class_metrics(m: &ConfusionMatrix) -> EvalSummary {
    let per_class: Vec<ClassMetrics> = ScenarioClass::ALL
        .into_iter()
        .map(|class| {
            let diag = m.get(class, class) as f64;
            let col = m.col_sum(class) as f64;
            let row = m.row_sum(class) as f64;
            let precision = if col > 0.0 { diag / col } else { 0.0 };
            let recall = if row > 0.0 { diag / row } else { 0.0 };
            ClassMetrics {
                class,
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    EvalSummary {
        per_class,
        macro_f1,
        total: m.total(),
        unanalyzed: m.unanalyzed,
    }
}

/// Render the classic P/R/F1 table, one row per class, metrics as integer
/// percentages.
pub fn render_table(summary: &EvalSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<16} {:>4} {:>4} {:>4}\n", "class", "P", "R", "F1"));
    for metrics in &summary.per_class {
        out.push_str(&format!(
            "{:<16} {:>4} {:>4} {:>4}\n",
            metrics.class.to_string(),
            display_percent(metrics.precision),
            display_percent(metrics.recall),
            display_percent(metrics.f1),
        ));
    }
    out.push_str(&format!(
        "{:<16} {:>14}\n",
        "Avg. F1",
        display_percent(summary.macro_f1)
    ));
    out.push_str(&format!("{:<16} {:>14}\n", "classified", summary.total));
    out.push_str(&format!("{:<16} {:>14}\n", "unanalyzed", summary.unanalyzed));
    out
}

/// Nearest-centroid classifier over TF-IDF vectors of scenario text plus
/// focal source.
///
/// Record vectors are unit-normalized, averaged per class, and the class
/// means are normalized again; classification picks the centroid with the
/// highest cosine, ties resolving by dominance like the triage rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    idf: BTreeMap<String, f64>,
    centroids: BTreeMap<ScenarioClass, BTreeMap<String, f64>>,
}

fn record_tokens(rec: &ScenarioRecord) -> Vec<String> {
    let mut tokens = tokenize(&rec.scenario_text);
    tokens.extend(tokenize(&rec.focal.source_text));
    tokens
}

fn tf_map(tokens: Vec<String>) -> BTreeMap<String, f64> {
    let mut tf = BTreeMap::new();
    for token in tokens {
        *tf.entry(token).or_insert(0.0) += 1.0;
    }
    tf
}

fn normalize(vec: &mut BTreeMap<String, f64>) {
    let norm = vec.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for w in vec.values_mut() {
            *w /= norm;
        }
    }
}

/// Train centroids from a labeled dataset; every class must be present.
pub fn centroid_train(ds: &LabeledDataset) -> Result<CentroidModel, EvalError> {
    if ds.records.is_empty() {
        return Err(EvalError::EmptyTraining);
    }
    let n = ds.records.len() as f64;
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    let mut record_tfs = Vec::with_capacity(ds.records.len());
    for rec in &ds.records {
        let tf = tf_map(record_tokens(rec));
        for term in tf.keys() {
            *doc_freq.entry(term.clone()).or_insert(0) += 1;
        }
        record_tfs.push(tf);
    }
    let idf: BTreeMap<String, f64> = doc_freq
        .into_iter()
        .map(|(term, df)| (term, (n / df as f64).ln()))
        .collect();
    let mut sums: BTreeMap<ScenarioClass, (BTreeMap<String, f64>, usize)> = BTreeMap::new();
    for (rec, tf) in ds.records.iter().zip(record_tfs) {
        let label = rec.label.ok_or_else(|| EvalError::Unlabeled {
            id: rec.scenario_id.clone(),
        })?;
        let mut vec: BTreeMap<String, f64> = tf
            .into_iter()
            .map(|(term, count)| {
                let w = count * idf[&term];
                (term, w)
            })
            .collect();
        normalize(&mut vec);
        let (sum, count) = sums.entry(label).or_default();
        for (term, w) in vec {
            *sum.entry(term).or_insert(0.0) += w;
        }
        *count += 1;
    }
    for class in ScenarioClass::ALL {
        if !sums.contains_key(&class) {
            return Err(EvalError::MissingClass(class));
        }
    }
    let centroids = sums
        .into_iter()
        .map(|(class, (mut sum, count))| {
            for w in sum.values_mut() {
                *w /= count as f64;
            }
            normalize(&mut sum);
            (class, sum)
        })
        .collect();
    Ok(CentroidModel { idf, centroids })
}

/// Class of the highest-cosine centroid; ties go to the dominance-maximal
/// class, so an all-zero query lands on error-prone.
pub fn centroid_classify(model: &CentroidModel, rec: &ScenarioRecord) -> ScenarioClass {
    let mut query: BTreeMap<String, f64> = tf_map(record_tokens(rec))
        .into_iter()
        .filter_map(|(term, count)| model.idf.get(&term).map(|idf| (term, count * idf)))
        .collect();
    normalize(&mut query);
    ScenarioClass::ALL
        .into_iter()
        .map(|class| {
            let centroid = &model.centroids[&class];
            let dot: f64 = query
                .iter()
                .filter_map(|(term, qw)| centroid.get(term).map(|cw| qw * cw))
                .sum();
            (dot, class)
        })
        .max_by(|(score_a, class_a), (score_b, class_b)| {
            score_a
                .total_cmp(score_b)
                .then(class_a.cmp(class_b))
        })
        .map(|(_, class)| class)
        .expect("three classes")
}
