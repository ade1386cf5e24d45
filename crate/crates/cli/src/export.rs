use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use suitegap_core::corpus::{
    dataset_stats, downsample_balanced, export_finetune_records, parse_trace_file,
    stratified_split, FinetuneHyperparameters,
};
use suitegap_core::triage::ScenarioClass;

use crate::config::load_template_file;

#[derive(Args)]
pub struct ExportArgs {
    /// Labeled trace file to split and export
    #[arg(long)]
    truth: PathBuf,
    /// Fraction of each class that goes to the tuning side
    #[arg(long, default_value_t = 0.05)]
    ratio: f64,
    /// Seed for the split (and the balancing draw)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Downsample the tuning side to equal class counts
    #[arg(long)]
    balanced: bool,
    /// Where to write the JSONL records (sidecar metadata goes next to it)
    #[arg(long)]
    out: PathBuf,
    /// Prompt template file overriding the built-in wording
    #[arg(long)]
    template: Option<PathBuf>,
}

#[derive(Serialize)]
struct ExportMeta {
    hyperparameters: FinetuneHyperparameters,
    count: usize,
    ratio: f64,
    seed: u64,
    balanced: bool,
    per_class: BTreeMap<ScenarioClass, usize>,
}

pub fn run(args: ExportArgs) -> Result<i32> {
    let ds = parse_trace_file(&args.truth)?.require_labeled()?;
    let (tune, _) = stratified_split(&ds, args.ratio, args.seed)?;
    let tune = if args.balanced {
        downsample_balanced(&tune, args.seed)
    } else {
        tune
    };
    let template = load_template_file(args.template.as_deref())?;
    let examples = export_finetune_records(&tune, &template)?;

    let mut out = BufWriter::new(
        File::create(&args.out).with_context(|| format!("cannot write {}", args.out.display()))?,
    );
    for example in &examples {
        serde_json::to_writer(&mut out, example)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    let stats = dataset_stats(&tune);
    let meta = ExportMeta {
        hyperparameters: FinetuneHyperparameters::default(),
        count: examples.len(),
        ratio: args.ratio,
        seed: args.seed,
        balanced: args.balanced,
        per_class: stats.per_class,
    };
    let meta_path = args.out.with_extension("meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .with_context(|| format!("cannot write {}", meta_path.display()))?;

    eprintln!(
        "exported {} tuning records to {} (metadata at {})",
        examples.len(),
        args.out.display(),
        meta_path.display()
    );
    Ok(0)
}
