use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use suitegap_core::testsmith::{refine_loop, GenSession, ScaffoldStatus};
use suitegap_core::triage::ScenarioClass;
use suitegap_core::corpus::parse_trace_file;

use crate::config::RunConfig;
use crate::evaluate::read_report;
use crate::EXIT_PARTIAL;

#[derive(Args)]
pub struct GenTestsArgs {
    /// Triage report naming the scenarios to cover
    #[arg(long)]
    report: PathBuf,
    /// Trace file the scenarios came from
    #[arg(long)]
    traces: PathBuf,
    /// Shell command validating a scaffold; {file} expands to its path
    #[arg(long)]
    validator: String,
    /// Directory for scaffolds, transcripts and the summary
    #[arg(long)]
    out: PathBuf,
    /// Code requests allowed per scenario
    #[arg(long, default_value_t = 3)]
    max_rounds: u32,
    /// Seconds each validator run may take
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// JSON run configuration for the backend
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize)]
struct SummaryEntry {
    scenario_id: String,
    file: String,
    status: ScaffoldStatus,
    round: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

pub fn run(args: GenTestsArgs) -> Result<i32> {
    let report = read_report(&args.report)?;
    let candidates: Vec<String> = report
        .iter()
        .filter(|r| r.class != ScenarioClass::AlreadyTested)
        .map(|r| r.scenario_id.clone())
        .collect();

    let parsed = parse_trace_file(&args.traces)?;
    let by_id: BTreeMap<&str, &suitegap_core::ScenarioRecord> = parsed
        .records()
        .iter()
        .map(|r| (r.scenario_id.as_str(), r))
        .collect();

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    let cfg = RunConfig::load(args.config.as_deref())?;
    let backend = cfg.build_backend()?;

    let mut entries = Vec::new();
    let mut validated = 0usize;
    for id in &candidates {
        let Some(rec) = by_id.get(id.as_str()) else {
            eprintln!("warning: no trace record for {id}, skipping");
            continue;
        };
        let mut session = GenSession {
            max_rounds: args.max_rounds,
            validator_cmd: Some(args.validator.clone()),
            validator_timeout: Duration::from_secs(args.timeout_secs),
            ..GenSession::default()
        };
        let scaffold = refine_loop(backend.as_ref(), rec, &mut session);
        if scaffold.status == ScaffoldStatus::Validated {
            validated += 1;
        }
        let stem = sanitize(id);
        let test_file = format!("{stem}.test.txt");
        std::fs::write(args.out.join(&test_file), &scaffold.source_text)?;
        std::fs::write(
            args.out.join(format!("{stem}.transcript.json")),
            serde_json::to_string_pretty(&session.transcript)?,
        )?;
        entries.push(SummaryEntry {
            scenario_id: id.clone(),
            file: test_file,
            status: scaffold.status,
            round: scaffold.round,
            detail: scaffold.detail,
        });
    }
    std::fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&entries)?,
    )?;

    eprintln!(
        "validated {} of {} scaffolds in {}",
        validated,
        entries.len(),
        args.out.display()
    );
    Ok(if entries.is_empty() || validated > 0 {
        0
    } else {
        EXIT_PARTIAL
    })
}

/// File-safe stem for a scenario id. Ids that needed cleaning get a short
/// content hash so distinct ids cannot collide on the cleaned form.
fn sanitize(id: &str) -> String {
    let cleaned: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned == id {
        cleaned
    } else {
        let digest = Sha256::digest(id.as_bytes());
        format!("{cleaned}-{}", hex::encode(&digest[..4]))
    }
}

#[cfg(test)]
mod tests {
    use super::sanitize;

    #[test]
    fn clean_ids_pass_through() {
        assert_eq!(sanitize("calc.divide-by-zero_1"), "calc.divide-by-zero_1");
    }

    #[test]
    fn dirty_ids_get_distinct_stems() {
        let a = sanitize("a/b");
        let b = sanitize("a:b");
        assert!(a.starts_with("a_b-"));
        assert!(b.starts_with("a_b-"));
        assert_ne!(a, b);
    }
}
