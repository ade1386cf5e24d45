//! End-to-end run of the library: trace parsing, few-shot selection,
//! prompt assembly, scripted analysis, triage, and scoring.

use std::io::Cursor;
use std::sync::Arc;

use suitegap_core::analyzer::{Analyzer, ScriptedBackend};
use suitegap_core::corpus::{parse_trace_reader, stratified_split};
use suitegap_core::evalharness::{class_metrics, render_table, tally_confusion};
use suitegap_core::promptgen::{FewShotBlock, PromptTemplate};
use suitegap_core::triage::triage_batch;
use suitegap_core::ScenarioClass;

fn trace_line(id: &str, scenario: &str, label: Option<&str>) -> String {
    let mut value = serde_json::json!({
        "scenario_id": id,
        "project": "calc",
        "method_id": "com.calc.Calc.divide(int,int)",
        "file_path": "src/Calc.java",
        "method_source": "int divide(int a, int b) {\n    return a / b;\n}",
        "test_suite_source": "void testDivide() {\n    assertEquals(2, divide(4, 2));\n}",
        "scenario": scenario,
    });
    if let Some(label) = label {
        value["label"] = serde_json::Value::String(label.to_string());
    }
    value.to_string()
}

fn labeled_corpus(per_class: usize) -> String {
    let mut lines = Vec::new();
    for i in 0..per_class {
        for (class, label) in [
            (ScenarioClass::AlreadyTested, "already-tested"),
            (ScenarioClass::NotYetTested, "not-yet-tested"),
            (ScenarioClass::ErrorProne, "error-prone"),
        ] {
            let id = format!("{}-{i}", label);
            let scenario = format!("divide({i}, {})", class as u8);
            lines.push(trace_line(&id, &scenario, Some(label)));
        }
    }
    lines.join("\n") + "\n"
}

fn prototype_reply(class: ScenarioClass) -> String {
    class.prototype().canonical_json()
}

#[test]
fn classify_loop_scores_perfectly_against_its_own_script() {
    let text = labeled_corpus(4);
    let ds = parse_trace_reader(Cursor::new(text), "demo")
        .unwrap()
        .require_labeled()
        .unwrap();

    let mut backend = ScriptedBackend::new("no answer");
    for rec in &ds.records {
        backend = backend.with_reply(rec.scenario_id.clone(), prototype_reply(rec.label.unwrap()));
    }
    let analyzer = Analyzer {
        backend: Arc::new(backend),
        template: PromptTemplate::default(),
        few_shot: FewShotBlock::default(),
        budget: 100_000,
        repair_retries: 2,
        model_name: "scripted".to_string(),
    };

    let outcomes: Vec<_> = ds
        .records
        .iter()
        .map(|rec| analyzer.analyze(rec, None))
        .collect();
    let (results, unanalyzed) = triage_batch(
        outcomes
            .into_iter()
            .map(|o| (o.scenario_id, o.result.map_err(|e| e.to_string()))),
    );
    assert!(unanalyzed.is_empty());
    assert_eq!(results.len(), ds.records.len());
    for (result, rec) in results.iter().zip(&ds.records) {
        assert_eq!(result.scenario_id, rec.scenario_id);
        assert_eq!(result.class, rec.label.unwrap());
    }

    let matrix = tally_confusion(&ds, &results).unwrap();
    let summary = class_metrics(&matrix);
    assert_eq!(summary.total, 12);
    assert_eq!(summary.unanalyzed, 0);
    for metrics in &summary.per_class {
        assert_eq!(metrics.f1, 1.0);
    }
    let table = render_table(&summary);
    assert!(table.contains("already-tested"));
    assert!(table.contains("Avg. F1"));
    assert!(table.contains("100"));
}

#[test]
fn few_shot_analysis_still_keys_replies_to_the_scenario_under_analysis() {
    let text = labeled_corpus(2);
    let ds = parse_trace_reader(Cursor::new(text), "demo")
        .unwrap()
        .require_labeled()
        .unwrap();
    let (tune, validation) = stratified_split(&ds, 0.4, 7).unwrap();
    assert!(!tune.records.is_empty());
    assert!(!validation.records.is_empty());

    let template = PromptTemplate::default();
    let few_shot = FewShotBlock::from_dataset(&tune, 3, &template).unwrap();
    assert_eq!(few_shot.k(), 3);

    let mut backend = ScriptedBackend::new("no answer");
    for rec in &validation.records {
        backend = backend.with_reply(rec.scenario_id.clone(), prototype_reply(rec.label.unwrap()));
    }
    let analyzer = Analyzer {
        backend: Arc::new(backend),
        template,
        few_shot,
        budget: 100_000,
        repair_retries: 0,
        model_name: "scripted".to_string(),
    };
    for rec in &validation.records {
        let outcome = analyzer.analyze(rec, Some("--- ctx.java:1-3 ---\nint unused;"));
        let vector = outcome.result.expect("scripted reply decodes");
        assert_eq!(vector, rec.label.unwrap().prototype());
    }
}

#[test]
fn reruns_produce_identical_audit_trails() {
    let text = labeled_corpus(2);
    let ds = parse_trace_reader(Cursor::new(text), "demo")
        .unwrap()
        .require_labeled()
        .unwrap();
    let mut backend = ScriptedBackend::new("no answer");
    for rec in &ds.records {
        backend = backend.with_reply(rec.scenario_id.clone(), prototype_reply(rec.label.unwrap()));
    }
    let analyzer = Analyzer {
        backend: Arc::new(backend),
        template: PromptTemplate::default(),
        few_shot: FewShotBlock::default(),
        budget: 100_000,
        repair_retries: 2,
        model_name: "scripted".to_string(),
    };
    let run = || -> Vec<String> {
        ds.records
            .iter()
            .map(|rec| serde_json::to_string(&analyzer.analyze(rec, None).audit).unwrap())
            .collect()
    };
    assert_eq!(run(), run());
}
