//! Prompt construction: instantiate the five-section classification
//! template, optionally preceded by few-shot examples and a retrieved
//! context block, under a token budget.
//!
//! The user text always carries the sections MUT, MUT TEST SUITE,
//! MUT SCENARIO, TASK and QUERIES in that order. The scenario section opens
//! with a `// scenario-id:` tag line so replies can be traced (and scripted
//! offline) per scenario.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::SCENARIO_TAG;
use crate::corpus::{LabeledDataset, ScenarioRecord};
use crate::triage::ScenarioClass;

/// System turn sent with every prompt.
pub const SYSTEM_TEXT: &str = "You are an expert software test engineer.";

/// Shown in the MUT TEST SUITE section when a record has no tests.
pub const NO_TESTS_PLACEHOLDER: &str = "(no existing tests)";

/// Marker inserted where test-suite content was cut by the budget.
pub const ELISION_MARKER: &str = "// ... elided ...";

const EXAMPLE_OPEN: &str = "=== EXAMPLE ===";
const EXAMPLE_ANSWER: &str = "=== ANSWER ===";
const EXAMPLE_CLOSE: &str = "=== END EXAMPLE ===";
const CONTEXT_HEADER: &str = "RETRIEVED CONTEXT:";

const DEFAULT_TASK: &str = "Answer all questions in QUERIES. For each question, you should \
                            answer only YES or NO. Return results in a JSON dictionary.";

const DEFAULT_QUERIES: [&str; 5] = [
    "Is MUT SCENARIO a similar scenario compared with MUT TEST SUITE?",
    "Does MUT SCENARIO cover more lines or branches than MUT TEST SUITE?",
    "Will MUT work differently when executed under MUT SCENARIO?",
    "Does MUT still produce correct results when executing under MUT SCENARIO?",
    "Will MUT SCENARIO reveal any bug in MUT?",
];

/// The classification prompt template: a task sentence and five queries.
/// Section order is fixed and not configurable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task_text: String,
    pub queries: [String; 5],
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            task_text: DEFAULT_TASK.to_string(),
            queries: DEFAULT_QUERIES.map(str::to_string),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template missing section header {0:?}")]
    MissingHeader(&'static str),
    #[error("template section headers out of order: {0:?} before {1:?}")]
    HeaderOrder(&'static str, &'static str),
    #[error("template missing query {0}")]
    MissingQuery(&'static str),
    #[error("template TASK text is empty")]
    EmptyTask,
}

const SECTION_HEADERS: [&str; 5] = ["MUT:", "MUT TEST SUITE:", "MUT SCENARIO:", "TASK:", "QUERIES:"];

impl PromptTemplate {
    /// Parse a template override file: the five section headers in order,
    /// with the task text after `TASK:` and one `Qn.` line per query.
    /// The MUT, MUT TEST SUITE and MUT SCENARIO sections are structural
    /// (their bodies come from each record) and must be present but empty.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut last_pos = 0;
        let mut positions = [0usize; 5];
        for (i, header) in SECTION_HEADERS.iter().enumerate() {
            let pos = find_header(text, header).ok_or(TemplateError::MissingHeader(header))?;
            if i > 0 && pos < last_pos {
                return Err(TemplateError::HeaderOrder(header, SECTION_HEADERS[i - 1]));
            }
            positions[i] = pos;
            last_pos = pos;
        }
        let task_start = positions[3] + "TASK:".len();
        let task_text = text[task_start..positions[4]]
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        if task_text.is_empty() {
            return Err(TemplateError::EmptyTask);
        }
        let queries_text = &text[positions[4] + "QUERIES:".len()..];
        let mut queries: [String; 5] = Default::default();
        for (i, q) in queries.iter_mut().enumerate() {
            let tag = ["Q1.", "Q2.", "Q3.", "Q4.", "Q5."][i];
            let line = queries_text
                .lines()
                .map(str::trim_start)
                .find(|l| l.starts_with(tag))
                .ok_or(TemplateError::MissingQuery(KEY_NAMES[i]))?;
            *q = line[tag.len()..].trim().to_string();
        }
        Ok(PromptTemplate { task_text, queries })
    }
}

const KEY_NAMES: [&str; 5] = ["Q1", "Q2", "Q3", "Q4", "Q5"];

fn find_header(text: &str, header: &str) -> Option<usize> {
    let mut offset = 0;
    for line in text.lines() {
        if line.trim_end() == header || line.starts_with(header) {
            let at_line_start = offset == 0 || text.as_bytes()[offset - 1] == b'\n';
            if at_line_start {
                return Some(offset);
            }
        }
        offset += line.len() + 1;
    }
    None
}

/// Worked example/answer pairs prepended to the prompt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FewShotBlock {
    /// (rendered prompt body, answer object) pairs.
    pub examples: Vec<(String, String)>,
}

impl FewShotBlock {
    pub fn k(&self) -> usize {
        self.examples.len()
    }

    /// Draw `k` examples from a labeled pool, round-robin over the classes
    /// in dominance-ascending order so every class is represented when the
    /// pool allows. Errors when the pool cannot supply `k` examples.
    pub fn from_dataset(
        ds: &LabeledDataset,
        k: usize,
        template: &PromptTemplate,
    ) -> Result<Self, FewShotError> {
        if k == 0 {
            return Ok(FewShotBlock::default());
        }
        let mut by_class: Vec<Vec<&ScenarioRecord>> = vec![Vec::new(); 3];
        for rec in &ds.records {
            let label = rec.label.ok_or(FewShotError::Unlabeled)?;
            let idx = ScenarioClass::ALL.iter().position(|c| *c == label).unwrap();
            by_class[idx].push(rec);
        }
        let mut picked = Vec::with_capacity(k);
        let mut cursors = [0usize; 3];
        while picked.len() < k {
            let before = picked.len();
            for (class_idx, pool) in by_class.iter().enumerate() {
                if picked.len() == k {
                    break;
                }
                if let Some(rec) = pool.get(cursors[class_idx]) {
                    cursors[class_idx] += 1;
                    picked.push(*rec);
                }
            }
            if picked.len() == before {
                return Err(FewShotError::PoolTooSmall {
                    wanted: k,
                    available: picked.len(),
                });
            }
        }
        let examples = picked
            .into_iter()
            .map(|rec| {
                let body = render_body(rec, template, None);
                let answer = rec.label.unwrap().prototype().canonical_json();
                (body, answer)
            })
            .collect();
        Ok(FewShotBlock { examples })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FewShotError {
    #[error("few-shot pool contains unlabeled records")]
    Unlabeled,
    #[error("few-shot pool too small: wanted {wanted}, found {available}")]
    PoolTooSmall { wanted: usize, available: usize },
}

/// Structured pieces of a rendered prompt, kept so the budget enforcer can
/// truncate sections without re-parsing text.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PromptParts {
    few_shot: Vec<String>,
    context: Option<String>,
    mut_source: String,
    suite_body: String,
    scenario_body: String,
    task_text: String,
    queries: [String; 5],
}

impl PromptParts {
    fn assemble(&self) -> String {
        let mut out = String::new();
        for example in &self.few_shot {
            out.push_str(example);
            out.push('\n');
        }
        if let Some(ctx) = &self.context {
            out.push_str(CONTEXT_HEADER);
            out.push('\n');
            out.push_str(ctx);
            if !ctx.ends_with('\n') {
                out.push('\n');
            }
        }
        for (header, body) in [
            ("MUT:", &self.mut_source),
            ("MUT TEST SUITE:", &self.suite_body),
            ("MUT SCENARIO:", &self.scenario_body),
        ] {
            out.push_str(header);
            out.push('\n');
            out.push_str(body);
            if !body.ends_with('\n') {
                out.push('\n');
            }
        }
        out.push_str("TASK: ");
        out.push_str(&self.task_text);
        out.push('\n');
        out.push_str("QUERIES:");
        for (i, q) in self.queries.iter().enumerate() {
            out.push('\n');
            out.push_str("    ");
            out.push_str(KEY_NAMES[i]);
            out.push_str(". ");
            out.push_str(q);
        }
        out
    }
}

/// A prompt ready to send: fixed system text, assembled user text, and a
/// token estimate over both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub system_text: String,
    pub user_text: String,
    pub token_estimate: usize,
    parts: PromptParts,
}

/// Pluggable token estimator; the default assumes four characters per
/// token, rounding up.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// chars/n heuristic estimator.
pub struct CharsPerToken(pub usize);

impl TokenEstimator for CharsPerToken {
    fn estimate(&self, text: &str) -> usize {
        text.chars().count().div_ceil(self.0.max(1))
    }
}

pub const DEFAULT_ESTIMATOR: CharsPerToken = CharsPerToken(4);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("scenario exceeds context budget")]
    BudgetExceeded,
}

/// Render the body sections (MUT through QUERIES) for one record. Used both
/// for the main prompt and for few-shot example bodies.
pub fn render_body(
    rec: &ScenarioRecord,
    template: &PromptTemplate,
    context: Option<&str>,
) -> String {
    parts_for(rec, template, &FewShotBlock::default(), context).assemble()
}

fn parts_for(
    rec: &ScenarioRecord,
    template: &PromptTemplate,
    few_shot: &FewShotBlock,
    context: Option<&str>,
) -> PromptParts {
    let suite_body = if rec.test_suite_text.trim().is_empty() {
        NO_TESTS_PLACEHOLDER.to_string()
    } else {
        rec.test_suite_text.clone()
    };
    let scenario_body = format!("{}{}\n{}", SCENARIO_TAG, rec.scenario_id, rec.scenario_text);
    let few_shot = few_shot
        .examples
        .iter()
        .map(|(body, answer)| {
            format!(
                "{EXAMPLE_OPEN}\n{body}\n{EXAMPLE_ANSWER}\n{answer}\n{EXAMPLE_CLOSE}"
            )
        })
        .collect();
    let context = context
        .map(str::trim_end)
        .filter(|c| !c.is_empty())
        .map(str::to_string);
    PromptParts {
        few_shot,
        context,
        mut_source: rec.focal.source_text.clone(),
        suite_body,
        scenario_body,
        task_text: template.task_text.clone(),
        queries: template.queries.clone(),
    }
}

/// Instantiate the template for one record.
pub fn build_prompt(
    rec: &ScenarioRecord,
    template: &PromptTemplate,
    few_shot: &FewShotBlock,
    context: Option<&str>,
) -> RenderedPrompt {
    finish(parts_for(rec, template, few_shot, context), &DEFAULT_ESTIMATOR)
}

fn finish(parts: PromptParts, estimator: &dyn TokenEstimator) -> RenderedPrompt {
    let user_text = parts.assemble();
    let token_estimate = estimator.estimate(SYSTEM_TEXT) + estimator.estimate(&user_text);
    RenderedPrompt {
        system_text: SYSTEM_TEXT.to_string(),
        user_text,
        token_estimate,
        parts,
    }
}

/// Shrink a prompt to fit `budget` tokens, using the default estimator.
///
/// Truncation order: drop the retrieved context, then elide the middle of
/// the test suite (first and last blank-line-separated blocks survive),
/// then drop few-shot examples from the end. The MUT, MUT SCENARIO, TASK
/// and QUERIES sections are never cut; when they alone exceed the budget,
/// the scenario is rejected.
pub fn enforce_budget(p: RenderedPrompt, budget: usize) -> Result<RenderedPrompt, PromptError> {
    enforce_budget_with(p, budget, &DEFAULT_ESTIMATOR)
}

pub fn enforce_budget_with(
    p: RenderedPrompt,
    budget: usize,
    estimator: &dyn TokenEstimator,
) -> Result<RenderedPrompt, PromptError> {
    if p.token_estimate <= budget {
        return Ok(p);
    }
    let mut parts = p.parts;

    parts.context = None;
    let rendered = finish(parts, estimator);
    if rendered.token_estimate <= budget {
        return Ok(rendered);
    }
    let mut parts = rendered.parts;

    parts.suite_body = elide_suite(&parts.suite_body);
    let rendered = finish(parts, estimator);
    if rendered.token_estimate <= budget {
        return Ok(rendered);
    }
    let mut parts = rendered.parts;

    while !parts.few_shot.is_empty() {
        parts.few_shot.pop();
        let rendered = finish(parts, estimator);
        if rendered.token_estimate <= budget {
            return Ok(rendered);
        }
        parts = rendered.parts;
    }
    Err(PromptError::BudgetExceeded)
}

/// Keep the first and last blank-line-separated blocks of a test suite,
/// eliding everything between. Suites with fewer than three blocks are
/// returned unchanged.
fn elide_suite(suite: &str) -> String {
    let blocks = split_blocks(suite);
    if blocks.len() < 3 {
        return suite.to_string();
    }
    format!(
        "{}\n\n{}\n\n{}",
        blocks.first().unwrap(),
        ELISION_MARKER,
        blocks.last().unwrap()
    )
}

fn split_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current.join("\n"));
    }
    blocks
}
