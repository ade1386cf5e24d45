use anyhow::{bail, Context, Result};
use clap::Args;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use suitegap_core::analyzer::{Analyzer, ChatBackend};
use suitegap_core::corpus::parse_trace_file;
use suitegap_core::promptgen::FewShotBlock;
use suitegap_core::retriever::{augment_prompt, CodeIndex};
use suitegap_core::triage::triage_batch;

use crate::config::{RunConfig, ALLOWED_SHOTS};
use crate::EXIT_PARTIAL;

#[derive(Args)]
pub struct ClassifyArgs {
    /// Trace file with the scenarios to classify
    #[arg(long)]
    traces: PathBuf,
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Retrieve code context for each prompt (needs --index)
    #[arg(long)]
    rag: bool,
    /// Index file produced by `suitegap index`
    #[arg(long)]
    index: Option<PathBuf>,
    /// Few-shot examples per prompt: 0, 3, 6 or 9
    #[arg(long)]
    shots: Option<usize>,
    /// Labeled trace file the few-shot examples are drawn from
    #[arg(long)]
    shots_from: Option<PathBuf>,
    /// Where to write the triage report (audit log goes next to it)
    #[arg(long)]
    out: PathBuf,
    /// Override the configured endpoint URL
    #[arg(long)]
    endpoint: Option<String>,
    /// Override the configured model name
    #[arg(long)]
    model: Option<String>,
    /// Override the prompt token budget
    #[arg(long)]
    budget: Option<usize>,
    /// Override the worker count
    #[arg(long)]
    parallelism: Option<usize>,
    /// Prompt template file overriding the built-in wording
    #[arg(long)]
    template: Option<PathBuf>,
}

pub fn run(args: ClassifyArgs) -> Result<i32> {
    let mut cfg = RunConfig::load(Some(&args.config))?;
    if let Some(endpoint) = args.endpoint.clone() {
        cfg.backend.endpoint_url = Some(endpoint);
    }
    if let Some(model) = args.model.clone() {
        cfg.backend.model_name = Some(model);
    }
    if let Some(budget) = args.budget {
        cfg.budget = Some(budget);
    }
    if let Some(par) = args.parallelism {
        cfg.parallelism = Some(par);
    }

    let records = parse_trace_file(&args.traces)?.into_records();

    let shots = args.shots.or(cfg.few_shot_k).unwrap_or(0);
    if !cfg.allow_any_shots && !ALLOWED_SHOTS.contains(&shots) {
        bail!("--shots must be one of 0, 3, 6, 9 (set allow_any_shots in the config to lift this)");
    }
    let template = cfg.load_template(args.template.as_deref())?;
    let few_shot = match shots {
        0 => FewShotBlock::default(),
        n => {
            let pool_path = args
                .shots_from
                .as_ref()
                .context("--shots needs --shots-from with a labeled trace file")?;
            let pool = parse_trace_file(pool_path)?.require_labeled()?;
            FewShotBlock::from_dataset(&pool, n, &template)?
        }
    };

    let use_rag = args.rag || cfg.retrieval.enabled;
    let index = match (use_rag, &args.index) {
        (true, Some(path)) => Some(CodeIndex::load(path)?),
        (true, None) => bail!("--rag needs --index with a saved index file"),
        (false, _) => None,
    };
    let k = cfg.retrieval.k;

    let analyzer = Analyzer {
        backend: cfg.build_backend()?,
        template,
        few_shot,
        budget: cfg.budget(),
        repair_retries: cfg.max_retries(),
        model_name: cfg.model_label(),
    };

    let outcomes = analyze_all(&analyzer, &records, index.as_ref(), k, cfg.parallelism());

    let audit_path = args.out.with_extension("audit.jsonl");
    let mut audit = BufWriter::new(
        File::create(&audit_path)
            .with_context(|| format!("cannot write {}", audit_path.display()))?,
    );
    for outcome in &outcomes {
        serde_json::to_writer(&mut audit, &outcome.audit)?;
        audit.write_all(b"\n")?;
    }
    audit.flush()?;

    let (results, unanalyzed) = triage_batch(
        outcomes
            .into_iter()
            .map(|o| (o.scenario_id, o.result.map_err(|e| e.to_string()))),
    );
    let mut report = BufWriter::new(
        File::create(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?,
    );
    for line in &results {
        serde_json::to_writer(&mut report, line)?;
        report.write_all(b"\n")?;
    }
    for line in &unanalyzed {
        serde_json::to_writer(&mut report, line)?;
        report.write_all(b"\n")?;
    }
    report.flush()?;

    eprintln!(
        "classified {} of {} scenarios ({} unanalyzed); report at {}",
        results.len(),
        records.len(),
        unanalyzed.len(),
        args.out.display()
    );
    Ok(if unanalyzed.is_empty() { 0 } else { EXIT_PARTIAL })
}

/// Run the analyzer over every record on a bounded worker pool. Results
/// come back in input order no matter which worker finished first.
fn analyze_all(
    analyzer: &Analyzer<dyn ChatBackend>,
    records: &[suitegap_core::ScenarioRecord],
    index: Option<&CodeIndex>,
    k: usize,
    parallelism: usize,
) -> Vec<suitegap_core::analyzer::AnalysisOutcome> {
    let slots: Mutex<Vec<Option<suitegap_core::analyzer::AnalysisOutcome>>> =
        Mutex::new((0..records.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = parallelism.min(records.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= records.len() {
                    break;
                }
                let rec = &records[i];
                let context = index.map(|idx| augment_prompt(rec, idx, k));
                let context = context.as_deref().filter(|c| !c.is_empty());
                let outcome = analyzer.analyze(rec, context);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every index visited"))
        .collect()
}
