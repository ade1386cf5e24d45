//! Post-processing: map an answer vector to a scenario class by best
//! partial matching against the three class prototypes.
//!
//! Each class has a prototype vector; a vector is assigned the class whose
//! prototype agrees with it on the most positions. Ties resolve by
//! dominance: error-prone beats not-yet-tested beats already-tested, so a
//! tied scenario is always triaged toward the more actionable class.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::analyzer::AnswerVector;

/// Classification of one monitored scenario.
///
/// The derived `Ord` is the dominance order used for tie-breaking: later
/// variants dominate earlier ones (`ErrorProne` > `NotYetTested` >
/// `AlreadyTested`).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioClass {
    AlreadyTested,
    NotYetTested,
    ErrorProne,
}

impl ScenarioClass {
    /// All classes in canonical (ascending dominance) order.
    pub const ALL: [ScenarioClass; 3] = [
        ScenarioClass::AlreadyTested,
        ScenarioClass::NotYetTested,
        ScenarioClass::ErrorProne,
    ];

    /// The answer vector that defines this class.
    ///
    /// already-tested = 10010, not-yet-tested = 01010,
    /// error-prone = 01101 (leftmost bit is Q1, 1 = YES).
    pub const fn prototype(self) -> AnswerVector {
        match self {
            ScenarioClass::AlreadyTested => {
                AnswerVector::new([true, false, false, true, false])
            }
            ScenarioClass::NotYetTested => {
                AnswerVector::new([false, true, false, true, false])
            }
            ScenarioClass::ErrorProne => {
                AnswerVector::new([false, true, true, false, true])
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioClass::AlreadyTested => "already-tested",
            ScenarioClass::NotYetTested => "not-yet-tested",
            ScenarioClass::ErrorProne => "error-prone",
        }
    }
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "already-tested" => Ok(ScenarioClass::AlreadyTested),
            "not-yet-tested" => Ok(ScenarioClass::NotYetTested),
            "error-prone" => Ok(ScenarioClass::ErrorProne),
            other => Err(format!("invalid label {other:?}")),
        }
    }
}

/// Agreement counts against each prototype, kept for auditability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    #[serde(rename = "already-tested")]
    pub already_tested: u8,
    #[serde(rename = "not-yet-tested")]
    pub not_yet_tested: u8,
    #[serde(rename = "error-prone")]
    pub error_prone: u8,
}

impl MatchCounts {
    pub fn get(&self, class: ScenarioClass) -> u8 {
        match class {
            ScenarioClass::AlreadyTested => self.already_tested,
            ScenarioClass::NotYetTested => self.not_yet_tested,
            ScenarioClass::ErrorProne => self.error_prone,
        }
    }
}

/// Classification of a single vector, before a scenario id is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriageOutcome {
    pub vector: AnswerVector,
    pub class: ScenarioClass,
    pub match_counts: MatchCounts,
}

/// One line of the triage report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriageResult {
    pub scenario_id: String,
    pub vector: AnswerVector,
    pub class: ScenarioClass,
    pub match_counts: MatchCounts,
}

/// A scenario the analyzer could not produce a vector for. Never assigned
/// a class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnanalyzedScenario {
    pub scenario_id: String,
    pub error: String,
}

/// Number of positions where `v` agrees with `p` (5 minus the Hamming
/// distance).
pub fn match_count(v: AnswerVector, p: AnswerVector) -> u8 {
    v.bits()
        .iter()
        .zip(p.bits().iter())
        .filter(|(a, b)| a == b)
        .count() as u8
}

/// Classify a vector by maximum prototype agreement, breaking ties by
/// dominance.
///
/// The tie-break is a property of the tied set, not of iteration order:
/// the selection key is (match count, dominance rank).
pub fn classify_vector(v: AnswerVector) -> TriageOutcome {
    let match_counts = MatchCounts {
        already_tested: match_count(v, ScenarioClass::AlreadyTested.prototype()),
        not_yet_tested: match_count(v, ScenarioClass::NotYetTested.prototype()),
        error_prone: match_count(v, ScenarioClass::ErrorProne.prototype()),
    };
    let class = ScenarioClass::ALL
        .into_iter()
        .max_by_key(|c| (match_counts.get(*c), *c))
        .expect("three prototypes");
    TriageOutcome {
        vector: v,
        class,
        match_counts,
    }
}

/// Classify every analyzed vector; pass unanalyzed scenarios through to a
/// separate report, never defaulting them to a class. Output order matches
/// input order.
pub fn triage_batch<I>(results: I) -> (Vec<TriageResult>, Vec<UnanalyzedScenario>)
where
    I: IntoIterator<Item = (String, Result<AnswerVector, String>)>,
{
    let mut triaged = Vec::new();
    let mut unanalyzed = Vec::new();
    for (scenario_id, result) in results {
        match result {
            Ok(vector) => {
                let outcome = classify_vector(vector);
                triaged.push(TriageResult {
                    scenario_id,
                    vector: outcome.vector,
                    class: outcome.class,
                    match_counts: outcome.match_counts,
                });
            }
            Err(error) => unanalyzed.push(UnanalyzedScenario { scenario_id, error }),
        }
    }
    (triaged, unanalyzed)
}
