use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use suitegap_core::corpus::parse_trace_file;
use suitegap_core::evalharness::{class_metrics, render_table, tally_confusion};
use suitegap_core::evalharness::{centroid_classify, centroid_train};
use suitegap_core::triage::{classify_vector, TriageResult};

#[derive(Args)]
pub struct EvaluateArgs {
    /// Labeled trace file holding the ground truth
    #[arg(long)]
    truth: PathBuf,
    /// Triage report to score
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score a reference model instead of a report
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Labeled trace file the baseline trains on
    #[arg(long)]
    tune: Option<PathBuf>,
    /// Also write the metrics as JSON
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Baseline {
    Centroid,
}

pub fn run(args: EvaluateArgs) -> Result<i32> {
    let truth = parse_trace_file(&args.truth)?.require_labeled()?;
    let predictions = match (&args.report, args.baseline) {
        (Some(report), None) => read_report(report)?,
        (None, Some(Baseline::Centroid)) => {
            let Some(tune_path) = &args.tune else {
                bail!("baseline requires --tune");
            };
            let tune = parse_trace_file(tune_path)?.require_labeled()?;
            let model = centroid_train(&tune)?;
            truth
                .records
                .iter()
                .map(|rec| {
                    let class = centroid_classify(&model, rec);
                    let outcome = classify_vector(class.prototype());
                    TriageResult {
                        scenario_id: rec.scenario_id.clone(),
                        vector: outcome.vector,
                        class,
                        match_counts: outcome.match_counts,
                    }
                })
                .collect()
        }
        (Some(_), Some(_)) => bail!("--report and --baseline are mutually exclusive"),
        (None, None) => bail!("pass --report or --baseline centroid"),
    };
    let matrix = tally_confusion(&truth, &predictions)?;
    let summary = class_metrics(&matrix);
    print!("{}", render_table(&summary));
    if let Some(path) = &args.json_out {
        std::fs::write(path, serde_json::to_string_pretty(&summary)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(0)
}

/// Read classification lines out of a triage report, skipping the
/// unanalyzed-scenario lines (those count against recall as missing
/// predictions).
pub fn read_report(path: &Path) -> Result<Vec<TriageResult>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot read report {}", path.display()))?;
    let mut results = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .with_context(|| format!("report line {}: invalid JSON", idx + 1))?;
        if value.get("class").is_some() {
            results.push(serde_json::from_value(value).with_context(|| {
                format!("report line {}: malformed classification", idx + 1)
            })?);
        } else if value.get("error").is_none() {
            bail!("report line {}: neither classification nor error", idx + 1);
        }
    }
    Ok(results)
}
