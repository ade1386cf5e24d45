//! Data model and ingestion: trace records, labeled datasets, dataset
//! statistics, deterministic splitting, and fine-tuning export.
//!
//! Trace files are UTF-8 line-delimited JSON, one record per line, with
//! keys `scenario_id`, `project`, `method_id`, `file_path`, `method_source`,
//! `test_suite_source`, `scenario` and an optional `label`. A file is either
//! fully labeled or fully unlabeled; mixing is rejected.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

use crate::analyzer::ChatMessage;
use crate::promptgen::{build_prompt, FewShotBlock, PromptTemplate};
use crate::triage::ScenarioClass;

/// The method under test for one or more scenarios.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FocalMethod {
    /// Fully qualified method name; unique within a dataset.
    pub id: String,
    /// Complete method body including signature.
    pub source_text: String,
    pub project: String,
    /// Path of the defining file, relative to the project root.
    pub file_path: String,
}

/// One monitored input to a focal method.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioRecord {
    pub scenario_id: String,
    pub focal: FocalMethod,
    /// Concatenated test-case sources for the focal method; may be empty.
    pub test_suite_text: String,
    /// Serialized monitored input data, produced upstream.
    pub scenario_text: String,
    pub label: Option<ScenarioClass>,
}

/// An ordered collection of records that all carry ground-truth labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledDataset {
    pub name: String,
    pub records: Vec<ScenarioRecord>,
}

/// Per-class record counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub per_class: BTreeMap<ScenarioClass, usize>,
}

/// Result of parsing a trace file: labeled or unlabeled, never mixed.
/// An empty file parses as an empty labeled dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedTraces {
    Labeled(LabeledDataset),
    Unlabeled(Vec<ScenarioRecord>),
}

impl ParsedTraces {
    pub fn records(&self) -> &[ScenarioRecord] {
        match self {
            ParsedTraces::Labeled(ds) => &ds.records,
            ParsedTraces::Unlabeled(recs) => recs,
        }
    }

    pub fn into_records(self) -> Vec<ScenarioRecord> {
        match self {
            ParsedTraces::Labeled(ds) => ds.records,
            ParsedTraces::Unlabeled(recs) => recs,
        }
    }

    /// The labeled dataset, or an error naming the first unlabeled record.
    pub fn require_labeled(self) -> Result<LabeledDataset, CorpusError> {
        match self {
            ParsedTraces::Labeled(ds) => Ok(ds),
            ParsedTraces::Unlabeled(recs) => Err(CorpusError::Unlabeled {
                id: recs.first().map(|r| r.scenario_id.clone()).unwrap_or_default(),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {message}")]
    BadJson { line: usize, message: String },
    #[error("line {line}: missing {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: empty {field}")]
    EmptyField { line: usize, field: &'static str },
    #[error("line {line}: invalid label {label:?}")]
    BadLabel { line: usize, label: String },
    #[error("line {line}: duplicate scenario_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: method_id {id:?} redefined with different fields")]
    MethodConflict { line: usize, id: String },
    #[error("line {line}: mixed labeled and unlabeled records")]
    MixedLabels { line: usize },
    #[error("split ratio must be in (0,1), got {0}")]
    BadRatio(f64),
    #[error("cannot split an empty dataset")]
    EmptySplit,
    #[error("record {id:?} has no label")]
    Unlabeled { id: String },
}

#[derive(Deserialize)]
struct RawTrace {
    scenario_id: Option<String>,
    project: Option<String>,
    method_id: Option<String>,
    file_path: Option<String>,
    method_source: Option<String>,
    test_suite_source: Option<String>,
    scenario: Option<String>,
    label: Option<String>,
}

#[derive(Serialize)]
struct RawTraceOut<'a> {
    scenario_id: &'a str,
    project: &'a str,
    method_id: &'a str,
    file_path: &'a str,
    method_source: &'a str,
    test_suite_source: &'a str,
    scenario: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

/// Parse a trace file. Blank lines are skipped; reported line numbers are
/// physical file lines, starting at 1.
pub fn parse_trace_file(path: &Path) -> Result<ParsedTraces, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trace_reader(std::io::BufReader::new(file), &name)
}

pub fn parse_trace_reader<R: BufRead>(
    reader: R,
    name: &str,
) -> Result<ParsedTraces, CorpusError> {
    let mut records: Vec<ScenarioRecord> = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();
    let mut methods: BTreeMap<String, FocalMethod> = BTreeMap::new();
    let mut labeled: Option<bool> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: name.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTrace =
            serde_json::from_str(&line).map_err(|e| CorpusError::BadJson {
                line: line_no,
                message: e.to_string(),
            })?;
        let record = validate(raw, line_no)?;
        if !seen_ids.insert(record.scenario_id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.scenario_id,
            });
        }
        match methods.get(&record.focal.id) {
            Some(existing) if *existing != record.focal => {
                return Err(CorpusError::MethodConflict {
                    line: line_no,
                    id: record.focal.id,
                });
            }
            Some(_) => {}
            None => {
                methods.insert(record.focal.id.clone(), record.focal.clone());
            }
        }
        let has_label = record.label.is_some();
        match labeled {
            None => labeled = Some(has_label),
            Some(expected) if expected != has_label => {
                return Err(CorpusError::MixedLabels { line: line_no });
            }
            Some(_) => {}
        }
        records.push(record);
    }
    if labeled == Some(false) {
        Ok(ParsedTraces::Unlabeled(records))
    } else {
        Ok(ParsedTraces::Labeled(LabeledDataset {
            name: name.to_string(),
            records,
        }))
    }
}

fn validate(raw: RawTrace, line: usize) -> Result<ScenarioRecord, CorpusError> {
    fn require(
        value: Option<String>,
        field: &'static str,
        line: usize,
    ) -> Result<String, CorpusError> {
        match value {
            None => Err(CorpusError::MissingField { line, field }),
            Some(s) if s.is_empty() => Err(CorpusError::EmptyField { line, field }),
            Some(s) => Ok(s),
        }
    }
    let scenario_id = require(raw.scenario_id, "scenario_id", line)?;
    let project = require(raw.project, "project", line)?;
    let method_id = require(raw.method_id, "method_id", line)?;
    let file_path = require(raw.file_path, "file_path", line)?;
    let method_source = require(raw.method_source, "method_source", line)?;
    let test_suite_text = raw.test_suite_source.ok_or(CorpusError::MissingField {
        line,
        field: "test_suite_source",
    })?;
    let scenario_text = require(raw.scenario, "scenario_text", line)?;
    let label = match raw.label {
        None => None,
        Some(s) => Some(
            s.parse::<ScenarioClass>()
                .map_err(|_| CorpusError::BadLabel { line, label: s })?,
        ),
    };
    Ok(ScenarioRecord {
        scenario_id,
        focal: FocalMethod {
            id: method_id,
            source_text: method_source,
            project,
            file_path,
        },
        test_suite_text,
        scenario_text,
        label,
    })
}

/// Serialize records back to the trace format, one JSON object per line.
pub fn write_trace_records<W: Write>(
    records: &[ScenarioRecord],
    mut writer: W,
) -> std::io::Result<()> {
    for rec in records {
        let raw = RawTraceOut {
            scenario_id: &rec.scenario_id,
            project: &rec.focal.project,
            method_id: &rec.focal.id,
            file_path: &rec.focal.file_path,
            method_source: &rec.focal.source_text,
            test_suite_source: &rec.test_suite_text,
            scenario: &rec.scenario_text,
            label: rec.label.map(ScenarioClass::as_str),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Count records per class. All three classes appear in the map, zero or
/// not.
pub fn dataset_stats(ds: &LabeledDataset) -> DatasetStats {
    let mut per_class: BTreeMap<ScenarioClass, usize> =
        ScenarioClass::ALL.into_iter().map(|c| (c, 0)).collect();
    for rec in &ds.records {
        if let Some(label) = rec.label {
            *per_class.get_mut(&label).unwrap() += 1;
        }
    }
    DatasetStats {
        total: ds.records.len(),
        per_class,
    }
}

/// Split into (tune, validation) per class: round-half-up(ratio × count)
/// records per class go to tune, at least 1 per non-empty class.
///
/// Selection within a class is a shuffle seeded from `seed`; both outputs
/// preserve the original record order.
pub fn stratified_split(
    ds: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    if ds.records.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tune_indices: BTreeSet<usize> = BTreeSet::new();
    for class in ScenarioClass::ALL {
        let mut indices: Vec<usize> = ds
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == Some(class))
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        let want = ((ratio * indices.len() as f64).round() as usize)
            .max(1)
            .min(indices.len());
        indices.shuffle(&mut rng);
        tune_indices.extend(indices.into_iter().take(want));
    }
    let mut tune = LabeledDataset {
        name: format!("{}:tune", ds.name),
        records: Vec::new(),
    };
    let mut validation = LabeledDataset {
        name: format!("{}:validation", ds.name),
        records: Vec::new(),
    };
    for (i, rec) in ds.records.iter().enumerate() {
        if tune_indices.contains(&i) {
            tune.records.push(rec.clone());
        } else {
            validation.records.push(rec.clone());
        }
    }
    Ok((tune, validation))
}

/// Down-sample majority classes to the size of the smallest class present,
/// deterministically by seed. Output preserves the original record order.
pub fn downsample_balanced(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let stats = dataset_stats(ds);
    let min = stats
        .per_class
        .values()
        .filter(|n| **n > 0)
        .min()
        .copied()
        .unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: BTreeSet<usize> = BTreeSet::new();
    for class in ScenarioClass::ALL {
        let mut indices: Vec<usize> = ds
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == Some(class))
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        keep.extend(indices.into_iter().take(min));
    }
    LabeledDataset {
        name: format!("{}:balanced", ds.name),
        records: ds
            .records
            .iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, r)| r.clone())
            .collect(),
    }
}

/// One chat-format training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneExample {
    pub messages: Vec<ChatMessage>,
}

/// Recommended settings recorded alongside an export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneHyperparameters {
    pub batch_size: u32,
    pub learning_rate_multiplier: f64,
    pub n_epochs: u32,
}

impl Default for FinetuneHyperparameters {
    fn default() -> Self {
        FinetuneHyperparameters {
            batch_size: 1,
            learning_rate_multiplier: 2.0,
            n_epochs: 3,
        }
    }
}

/// Render one training example per record: the user turn is the rendered
/// zero-shot prompt, the assistant turn is the prototype answer object for
/// the record's label.
pub fn export_finetune_records(
    ds: &LabeledDataset,
    template: &PromptTemplate,
) -> Result<Vec<FinetuneExample>, CorpusError> {
    let none = FewShotBlock::default();
    ds.records
        .iter()
        .map(|rec| {
            let label = rec.label.ok_or_else(|| CorpusError::Unlabeled {
                id: rec.scenario_id.clone(),
            })?;
            let prompt = build_prompt(rec, template, &none, None);
            Ok(FinetuneExample {
                messages: vec![
                    ChatMessage::system(prompt.system_text),
                    ChatMessage::user(prompt.user_text),
                    ChatMessage::assistant(label.prototype().canonical_json()),
                ],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::parse_answers;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn record(id: &str, label: Option<ScenarioClass>) -> ScenarioRecord {
        ScenarioRecord {
            scenario_id: id.to_string(),
            focal: FocalMethod {
                id: format!("com.example.Widget.run:{id}"),
                source_text: "void run() { work(); }".to_string(),
                project: "widget".to_string(),
                file_path: "src/Widget.java".to_string(),
            },
            test_suite_text: "void testRun() { run(); }".to_string(),
            scenario_text: format!("run() with input {id}"),
            label,
        }
    }

    fn dataset(labels: &[ScenarioClass]) -> LabeledDataset {
        LabeledDataset {
            name: "fixture".to_string(),
            records: labels
                .iter()
                .enumerate()
                .map(|(i, l)| record(&format!("s{i}"), Some(*l)))
                .collect(),
        }
    }

    fn trace_line(id: &str, label: Option<&str>) -> String {
        let mut obj = serde_json::json!({
            "scenario_id": id,
            "project": "widget",
            "method_id": "com.example.Widget.run",
            "file_path": "src/Widget.java",
            "method_source": "void run() { work(); }",
            "test_suite_source": "void testRun() { run(); }",
            "scenario": format!("run() with input {id}"),
        });
        if let Some(l) = label {
            obj["label"] = serde_json::json!(l);
        }
        obj.to_string()
    }

    #[test]
    fn parses_labeled_lines_in_order() {
        let text = [
            trace_line("a", Some("already-tested")),
            trace_line("b", Some("error-prone")),
            trace_line("c", Some("not-yet-tested")),
        ]
        .join("\n");
        let parsed = parse_trace_reader(Cursor::new(text), "t").unwrap();
        let ParsedTraces::Labeled(ds) = parsed else {
            panic!("expected labeled dataset");
        };
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.records[0].scenario_id, "a");
        assert_eq!(ds.records[1].label, Some(ScenarioClass::ErrorProne));
        assert_eq!(ds.records[2].scenario_id, "c");
    }

    #[test]
    fn empty_file_is_an_empty_dataset() {
        let parsed = parse_trace_reader(Cursor::new(""), "t").unwrap();
        assert!(parsed.records().is_empty());
    }

    #[test]
    fn missing_scenario_text_names_the_line() {
        let mut obj: serde_json::Value = serde_json::from_str(&trace_line("a", None)).unwrap();
        obj.as_object_mut().unwrap().remove("scenario");
        let text = format!("{}\n{}", trace_line("ok", None), obj);
        let err = parse_trace_reader(Cursor::new(text), "t").unwrap_err();
        assert_eq!(err.to_string(), "line 2: missing scenario_text");
    }

    #[test]
    fn malformed_json_names_the_line() {
        let text = format!("{}\nnot json", trace_line("a", None));
        let err = parse_trace_reader(Cursor::new(text), "t").unwrap_err();
        assert!(err.to_string().starts_with("line 2: invalid JSON"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = format!("{}\n{}", trace_line("a", None), trace_line("a", None));
        let err = parse_trace_reader(Cursor::new(text), "t").unwrap_err();
        assert_eq!(err.to_string(), "line 2: duplicate scenario_id \"a\"");
    }

    #[test]
    fn mixed_labeling_is_rejected() {
        let text = format!(
            "{}\n{}",
            trace_line("a", Some("error-prone")),
            trace_line("b", None)
        );
        let err = parse_trace_reader(Cursor::new(text), "t").unwrap_err();
        assert_eq!(err.to_string(), "line 2: mixed labeled and unlabeled records");
    }

    #[test]
    fn bad_label_is_rejected() {
        let text = trace_line("a", Some("flaky"));
        let err = parse_trace_reader(Cursor::new(text), "t").unwrap_err();
        assert_eq!(err.to_string(), "line 1: invalid label \"flaky\"");
    }

    #[test]
    fn conflicting_method_definition_is_rejected() {
        let a = trace_line("a", None);
        let mut b: serde_json::Value = serde_json::from_str(&trace_line("b", None)).unwrap();
        b["method_source"] = serde_json::json!("void run() { other(); }");
        let err =
            parse_trace_reader(Cursor::new(format!("{a}\n{b}")), "t").unwrap_err();
        assert_eq!(
            err.to_string(),
            "line 2: method_id \"com.example.Widget.run\" redefined with different fields"
        );
    }

    #[test]
    fn blank_lines_are_skipped_but_counted() {
        let mut obj: serde_json::Value = serde_json::from_str(&trace_line("a", None)).unwrap();
        obj.as_object_mut().unwrap().remove("scenario");
        let text = format!("\n\n{obj}");
        let err = parse_trace_reader(Cursor::new(text), "t").unwrap_err();
        assert_eq!(err.to_string(), "line 3: missing scenario_text");
    }

    #[test]
    fn empty_suite_is_allowed() {
        let mut obj: serde_json::Value = serde_json::from_str(&trace_line("a", None)).unwrap();
        obj["test_suite_source"] = serde_json::json!("");
        let parsed = parse_trace_reader(Cursor::new(obj.to_string()), "t").unwrap();
        assert_eq!(parsed.records()[0].test_suite_text, "");
    }

    #[test]
    fn round_trip_preserves_fields() {
        use ScenarioClass::*;
        let ds = dataset(&[AlreadyTested, NotYetTested, ErrorProne]);
        let mut buf = Vec::new();
        write_trace_records(&ds.records, &mut buf).unwrap();
        let parsed = parse_trace_reader(Cursor::new(buf), "fixture").unwrap();
        assert_eq!(parsed.records(), ds.records.as_slice());
    }

    #[test]
    fn stats_count_per_class() {
        use ScenarioClass::*;
        let stats = dataset_stats(&dataset(&[AlreadyTested, AlreadyTested, ErrorProne]));
        assert_eq!(stats.total, 3);
        assert_eq!(stats.per_class[&AlreadyTested], 2);
        assert_eq!(stats.per_class[&NotYetTested], 0);
        assert_eq!(stats.per_class[&ErrorProne], 1);
    }

    #[test]
    fn stats_of_empty_dataset_are_zero() {
        let stats = dataset_stats(&LabeledDataset::default());
        assert_eq!(stats.total, 0);
        assert!(stats.per_class.values().all(|n| *n == 0));
    }

    #[test]
    fn split_rounds_half_up_with_minimum_one() {
        use ScenarioClass::*;
        let mut labels = Vec::new();
        labels.extend(std::iter::repeat_n(AlreadyTested, 40));
        labels.extend(std::iter::repeat_n(NotYetTested, 30));
        labels.extend(std::iter::repeat_n(ErrorProne, 30));
        let ds = dataset(&labels);
        let (tune, validation) = stratified_split(&ds, 0.05, 7).unwrap();
        let t = dataset_stats(&tune);
        assert_eq!(t.per_class[&AlreadyTested], 2);
        assert_eq!(t.per_class[&NotYetTested], 2);
        assert_eq!(t.per_class[&ErrorProne], 2);
        let v = dataset_stats(&validation);
        assert_eq!(v.per_class[&AlreadyTested], 38);
        assert_eq!(v.per_class[&NotYetTested], 28);
        assert_eq!(v.per_class[&ErrorProne], 28);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        use ScenarioClass::*;
        let ds = dataset(&[AlreadyTested; 20]);
        let (a1, _) = stratified_split(&ds, 0.2, 42).unwrap();
        let (a2, _) = stratified_split(&ds, 0.2, 42).unwrap();
        assert_eq!(a1, a2);
        let (b, _) = stratified_split(&ds, 0.2, 43).unwrap();
        assert_ne!(
            a1.records
                .iter()
                .map(|r| r.scenario_id.clone())
                .collect::<Vec<_>>(),
            b.records
                .iter()
                .map(|r| r.scenario_id.clone())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn split_rejects_bad_ratio_and_empty_dataset() {
        let ds = dataset(&[ScenarioClass::AlreadyTested]);
        assert!(matches!(
            stratified_split(&ds, 0.0, 0),
            Err(CorpusError::BadRatio(_))
        ));
        assert!(matches!(
            stratified_split(&ds, 1.0, 0),
            Err(CorpusError::BadRatio(_))
        ));
        assert!(matches!(
            stratified_split(&LabeledDataset::default(), 0.5, 0),
            Err(CorpusError::EmptySplit)
        ));
    }

    #[test]
    fn balanced_downsampling_equalizes_counts() {
        use ScenarioClass::*;
        let ds = dataset(&[
            AlreadyTested,
            AlreadyTested,
            AlreadyTested,
            AlreadyTested,
            ErrorProne,
            ErrorProne,
        ]);
        let balanced = downsample_balanced(&ds, 0);
        let stats = dataset_stats(&balanced);
        assert_eq!(stats.per_class[&AlreadyTested], 2);
        assert_eq!(stats.per_class[&ErrorProne], 2);
        assert_eq!(stats.total, 4);
    }

    #[test]
    fn export_emits_prototype_answers() {
        use ScenarioClass::*;
        let ds = dataset(&[AlreadyTested, NotYetTested, ErrorProne]);
        let examples = export_finetune_records(&ds, &PromptTemplate::default()).unwrap();
        assert_eq!(examples.len(), 3);
        for (example, rec) in examples.iter().zip(&ds.records) {
            assert_eq!(example.messages.len(), 3);
            assert_eq!(example.messages[0].role, "system");
            assert_eq!(example.messages[1].role, "user");
            assert!(example.messages[1].content.contains(&rec.scenario_text));
            assert_eq!(example.messages[2].role, "assistant");
            let vector = parse_answers(&example.messages[2].content).unwrap();
            assert_eq!(vector, rec.label.unwrap().prototype());
        }
    }

    #[test]
    fn export_rejects_unlabeled_records() {
        let ds = LabeledDataset {
            name: "x".to_string(),
            records: vec![record("a", None)],
        };
        let err = export_finetune_records(&ds, &PromptTemplate::default()).unwrap_err();
        assert_eq!(err.to_string(), "record \"a\" has no label");
    }

    #[test]
    fn export_of_empty_dataset_is_empty() {
        let examples =
            export_finetune_records(&LabeledDataset::default(), &PromptTemplate::default())
                .unwrap();
        assert!(examples.is_empty());
    }

    #[test]
    fn default_hyperparameters_match_recommendation() {
        let hp = FinetuneHyperparameters::default();
        assert_eq!(hp.batch_size, 1);
        assert_eq!(hp.learning_rate_multiplier, 2.0);
        assert_eq!(hp.n_epochs, 3);
    }

    fn label_strategy() -> impl Strategy<Value = ScenarioClass> {
        prop_oneof![
            Just(ScenarioClass::AlreadyTested),
            Just(ScenarioClass::NotYetTested),
            Just(ScenarioClass::ErrorProne),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_records(
            bodies in proptest::collection::vec("[ -~]{1,40}", 1..8),
            labeled in proptest::bool::ANY,
            labels in proptest::collection::vec(label_strategy(), 8),
        ) {
            let records: Vec<ScenarioRecord> = bodies
                .iter()
                .enumerate()
                .map(|(i, body)| {
                    let mut rec = record(&format!("s{i}"), None);
                    rec.scenario_text = body.clone();
                    rec.label = labeled.then(|| labels[i]);
                    rec
                })
                .collect();
            let mut buf = Vec::new();
            write_trace_records(&records, &mut buf).unwrap();
            let parsed = parse_trace_reader(Cursor::new(buf), "t").unwrap();
            prop_assert_eq!(parsed.records(), records.as_slice());
        }

        #[test]
        fn split_partitions_losslessly(
            n_at in 1usize..30,
            n_nyt in 0usize..30,
            n_ep in 0usize..30,
            ratio in 0.01f64..0.99,
            seed in proptest::num::u64::ANY,
        ) {
            use ScenarioClass::*;
            let mut labels = Vec::new();
            labels.extend(std::iter::repeat_n(AlreadyTested, n_at));
            labels.extend(std::iter::repeat_n(NotYetTested, n_nyt));
            labels.extend(std::iter::repeat_n(ErrorProne, n_ep));
            let ds = dataset(&labels);
            let (tune, validation) = stratified_split(&ds, ratio, seed).unwrap();
            let mut ids: Vec<&str> = tune
                .records
                .iter()
                .chain(&validation.records)
                .map(|r| r.scenario_id.as_str())
                .collect();
            ids.sort_unstable();
            let mut expected: Vec<&str> =
                ds.records.iter().map(|r| r.scenario_id.as_str()).collect();
            expected.sort_unstable();
            prop_assert_eq!(ids, expected);

            let t = dataset_stats(&tune);
            for (class, count) in [(AlreadyTested, n_at), (NotYetTested, n_nyt), (ErrorProne, n_ep)] {
                if count == 0 {
                    prop_assert_eq!(t.per_class[&class], 0);
                } else {
                    let exact = ratio * count as f64;
                    let got = t.per_class[&class] as f64;
                    prop_assert!((got - exact).abs() <= 1.0 || t.per_class[&class] == 1);
                }
            }
        }

        #[test]
        fn balanced_mode_exports_k_times_min(
            n_at in 1usize..12,
            n_nyt in 1usize..12,
            n_ep in 1usize..12,
            seed in proptest::num::u64::ANY,
        ) {
            use ScenarioClass::*;
            let mut labels = Vec::new();
            labels.extend(std::iter::repeat_n(AlreadyTested, n_at));
            labels.extend(std::iter::repeat_n(NotYetTested, n_nyt));
            labels.extend(std::iter::repeat_n(ErrorProne, n_ep));
            let ds = dataset(&labels);
            let balanced = downsample_balanced(&ds, seed);
            let min = n_at.min(n_nyt).min(n_ep);
            prop_assert_eq!(balanced.records.len(), 3 * min);
            let stats = dataset_stats(&balanced);
            prop_assert!(stats.per_class.values().all(|n| *n == min));
        }
    }
}
