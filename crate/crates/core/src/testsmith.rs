//! Test scaffold generation: a bounded chat refinement loop with an
//! external validator hook.
//!
//! Each round asks the backend for one self-contained unit test as a fenced
//! code block, runs the configured validator command against it, and feeds
//! validation failures back as a fix request. The loop stops at the first
//! validated scaffold or after `max_rounds` code requests; validation is an
//! external command so the toolkit stays agnostic to the language of the
//! system under test.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::process::Stdio;
use std::time::{Duration, Instant};

use crate::analyzer::{BackendError, ChatBackend, ChatMessage, SCENARIO_TAG};
use crate::corpus::ScenarioRecord;
use crate::promptgen::SYSTEM_TEXT;

/// Re-ask sent when a reply carried no fenced code block.
pub const BLOCK_RE_ASK: &str = "Reply with exactly one fenced code block containing the test.";

/// Placeholder in the validator command template replaced by the scaffold's
/// temp-file path.
pub const FILE_PLACEHOLDER: &str = "{file}";

pub const DEFAULT_MAX_ROUNDS: u32 = 3;
pub const DEFAULT_VALIDATOR_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaffoldStatus {
    Draft,
    Validated,
    FailedValidation,
    Exhausted,
}

/// A generated test with its provenance: which round produced it and how
/// validation went. `source_text` is byte-identical to the accepted code
/// block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestScaffold {
    pub scenario_id: String,
    pub source_text: String,
    pub round: u32,
    pub status: ScaffoldStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// One generation session: the growing transcript plus loop settings.
#[derive(Debug, Clone)]
pub struct GenSession {
    pub transcript: Vec<ChatMessage>,
    pub max_rounds: u32,
    pub validator_cmd: Option<String>,
    pub validator_timeout: Duration,
}

impl Default for GenSession {
    fn default() -> Self {
        GenSession {
            transcript: Vec::new(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            validator_cmd: None,
            validator_timeout: DEFAULT_VALIDATOR_TIMEOUT,
        }
    }
}

impl GenSession {
    pub fn with_validator(cmd: impl Into<String>) -> Self {
        GenSession {
            validator_cmd: Some(cmd.into()),
            ..GenSession::default()
        }
    }
}

/// The generation request for one scenario.
pub fn draft_prompt(rec: &ScenarioRecord) -> String {
    format!(
        "MUT:\n{}\nMUT SCENARIO:\n{}{}\n{}\nTASK: Write one self-contained unit test that \
         exercises exactly the scenario above. Reply with a single fenced code block.",
        rec.focal.source_text, SCENARIO_TAG, rec.scenario_id, rec.scenario_text
    )
}

/// The content of the first fenced code block in `reply`, byte-exact, or
/// `None` when the reply has no complete fence.
pub fn extract_code_block(reply: &str) -> Option<String> {
    let mut content: Option<Vec<&str>> = None;
    for line in reply.lines() {
        match &mut content {
            None => {
                if line.trim_start().starts_with("```") {
                    content = Some(Vec::new());
                }
            }
            Some(lines) => {
                if line.trim_start().starts_with("```") {
                    return Some(lines.join("\n"));
                }
                lines.push(line);
            }
        }
    }
    None
}

enum AskOutcome {
    Block(String),
    NoBlock,
    Backend(BackendError),
}

/// One code request: ask, and re-ask once if the reply lacks a fenced
/// block. The transcript records every turn.
fn ask_for_block(backend: &dyn ChatBackend, transcript: &mut Vec<ChatMessage>) -> AskOutcome {
    for nudge in [false, true] {
        let reply = match backend.complete(SYSTEM_TEXT, transcript) {
            Ok(r) => r,
            Err(e) => return AskOutcome::Backend(e),
        };
        transcript.push(ChatMessage::assistant(reply.clone()));
        if let Some(block) = extract_code_block(&reply) {
            return AskOutcome::Block(block);
        }
        if !nudge {
            transcript.push(ChatMessage::user(BLOCK_RE_ASK));
        }
    }
    AskOutcome::NoBlock
}

/// Ask for a first draft without validating it.
pub fn draft_test(backend: &dyn ChatBackend, rec: &ScenarioRecord) -> TestScaffold {
    let mut session = GenSession::default();
    session.transcript.push(ChatMessage::user(draft_prompt(rec)));
    match ask_for_block(backend, &mut session.transcript) {
        AskOutcome::Block(block) => TestScaffold {
            scenario_id: rec.scenario_id.clone(),
            source_text: block,
            round: 1,
            status: ScaffoldStatus::Draft,
            detail: None,
        },
        AskOutcome::NoBlock => exhausted(rec, String::new(), 1, "no fenced code block in reply"),
        AskOutcome::Backend(e) => exhausted(rec, String::new(), 1, &e.to_string()),
    }
}

fn exhausted(rec: &ScenarioRecord, source: String, round: u32, detail: &str) -> TestScaffold {
    TestScaffold {
        scenario_id: rec.scenario_id.clone(),
        source_text: source,
        round,
        status: ScaffoldStatus::Exhausted,
        detail: Some(detail.to_string()),
    }
}

/// Run the validator command against a draft scaffold.
///
/// The scaffold is written to a temp file whose path replaces `{file}` in
/// the command template; the command runs under `sh -c`. Exit 0 validates
/// the scaffold; anything else (nonzero exit, spawn failure, timeout)
/// yields failed-validation with the cause attached.
pub fn validate_scaffold(
    scaffold: &TestScaffold,
    validator_cmd: &str,
    timeout: Duration,
) -> TestScaffold {
    let mut out = scaffold.clone();
    let file = match write_temp(&scaffold.source_text) {
        Ok(f) => f,
        Err(e) => {
            out.status = ScaffoldStatus::FailedValidation;
            out.detail = Some(format!("could not stage test file: {e}"));
            return out;
        }
    };
    let cmd = validator_cmd.replace(FILE_PLACEHOLDER, &file.path().display().to_string());
    match run_with_timeout(&cmd, timeout) {
        RunResult::Success => {
            out.status = ScaffoldStatus::Validated;
            out.detail = None;
        }
        RunResult::Failure(output) => {
            out.status = ScaffoldStatus::FailedValidation;
            out.detail = Some(output);
        }
    }
    out
}

fn write_temp(content: &str) -> std::io::Result<tempfile::NamedTempFile> {
    let mut file = tempfile::Builder::new().suffix(".test").tempfile()?;
    file.write_all(content.as_bytes())?;
    file.flush()?;
    Ok(file)
}

enum RunResult {
    Success,
    Failure(String),
}

fn run_with_timeout(cmd: &str, timeout: Duration) -> RunResult {
    let child = std::process::Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn();
    let mut child = match child {
        Ok(c) => c,
        Err(e) => return RunResult::Failure(format!("validator failed to start: {e}")),
    };
    let stdout = child.stdout.take().expect("piped stdout");
    let stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || read_all(stdout));
    let err_reader = std::thread::spawn(move || read_all(stderr));
    let started = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) => {
                if started.elapsed() >= timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    let _ = out_reader.join();
                    let _ = err_reader.join();
                    return RunResult::Failure(format!(
                        "validator timed out after {}s",
                        timeout.as_secs()
                    ));
                }
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => {
                let _ = child.kill();
                return RunResult::Failure(format!("validator wait failed: {e}"));
            }
        }
    };
    let stdout_text = out_reader.join().unwrap_or_default();
    let stderr_text = err_reader.join().unwrap_or_default();
    if status.success() {
        RunResult::Success
    } else {
        let mut output = String::new();
        output.push_str(stdout_text.trim_end());
        if !stderr_text.trim().is_empty() {
            if !output.is_empty() {
                output.push('\n');
            }
            output.push_str(stderr_text.trim_end());
        }
        if output.is_empty() {
            output = format!("validator exited with {status}");
        }
        RunResult::Failure(output)
    }
}

fn read_all(mut source: impl Read) -> String {
    let mut buf = String::new();
    let _ = source.read_to_string(&mut buf);
    buf
}

/// Draft, validate, and refine until a scaffold validates or `max_rounds`
/// code requests have been spent.
///
/// Validation output is fed back verbatim as a fix request. With no
/// validator configured the loop degrades to one-shot drafting. The final
/// scaffold on exhaustion carries the last draft and the last validator
/// output.
pub fn refine_loop(
    backend: &dyn ChatBackend,
    rec: &ScenarioRecord,
    session: &mut GenSession,
) -> TestScaffold {
    session.transcript.push(ChatMessage::user(draft_prompt(rec)));
    let mut last_source = String::new();
    for round in 1..=session.max_rounds.max(1) {
        let block = match ask_for_block(backend, &mut session.transcript) {
            AskOutcome::Block(b) => b,
            AskOutcome::NoBlock => {
                return exhausted(rec, last_source, round, "no fenced code block in reply")
            }
            AskOutcome::Backend(e) => return exhausted(rec, last_source, round, &e.to_string()),
        };
        last_source = block.clone();
        let draft = TestScaffold {
            scenario_id: rec.scenario_id.clone(),
            source_text: block,
            round,
            status: ScaffoldStatus::Draft,
            detail: None,
        };
        let Some(cmd) = &session.validator_cmd else {
            return draft;
        };
        let checked = validate_scaffold(&draft, cmd, session.validator_timeout);
        match checked.status {
            ScaffoldStatus::Validated => return checked,
            _ => {
                let output = checked.detail.clone().unwrap_or_default();
                if round == session.max_rounds.max(1) {
                    return TestScaffold {
                        status: ScaffoldStatus::Exhausted,
                        ..checked
                    };
                }
                session.transcript.push(ChatMessage::user(format!(
                    "The test failed validation with: {output}\nFix it."
                )));
            }
        }
    }
    unreachable!("loop returns within max_rounds")
}
