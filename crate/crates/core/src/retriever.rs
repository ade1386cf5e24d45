//! Lexical retrieval over project source: chunk files, index them with
//! TF-IDF over identifier-aware tokens, and supply top-k chunks as prompt
//! context.
//!
//! The index is deliberately lexical rather than neural so retrieval stays
//! deterministic and offline-testable; the scoring contract (non-negative,
//! shared-token chunks outrank disjoint ones) admits an embedding backend
//! later.

use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

use crate::corpus::ScenarioRecord;
use crate::text::tokenize;

/// Lines per chunk.
pub const CHUNK_LINES: usize = 60;
/// Lines shared between consecutive chunks of the same file.
pub const CHUNK_OVERLAP: usize = 10;
/// Default number of hits supplied as context.
pub const DEFAULT_K: usize = 4;

const INDEX_VERSION: u32 = 1;

/// A contiguous slice of one source file. Line numbers are 1-based and
/// inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub file_path: String,
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
}

/// Term statistics derived from the chunks; always reproducible by
/// rebuilding, never persisted.
#[derive(Debug, Clone, PartialEq)]
struct TermStats {
    doc_freq: BTreeMap<String, usize>,
    chunk_terms: Vec<BTreeMap<String, usize>>,
    chunk_norms: Vec<f64>,
}

/// Immutable chunk index; concurrent retrieval is safe.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeIndex {
    chunks: Vec<Chunk>,
    stats: TermStats,
}

/// One retrieval result, borrowing its chunk from the index.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit<'a> {
    pub chunk: &'a Chunk,
    pub score: f64,
}

/// What happened during indexing: unreadable files are skipped, not fatal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub files_indexed: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid glob pattern {pattern:?}: {message}")]
    BadGlob { pattern: String, message: String },
    #[error("index file {path}: {message}")]
    BadIndex { path: String, message: String },
}

#[derive(Serialize, Deserialize)]
struct PersistedIndex {
    version: u32,
    chunks: Vec<Chunk>,
}

impl CodeIndex {
    /// Build the index from chunks, recomputing all term statistics.
    pub fn from_chunks(chunks: Vec<Chunk>) -> Self {
        let n = chunks.len();
        let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
        let mut chunk_terms = Vec::with_capacity(n);
        for chunk in &chunks {
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for token in tokenize(&chunk.text) {
                *tf.entry(token).or_insert(0) += 1;
            }
            for term in tf.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
            chunk_terms.push(tf);
        }
        let chunk_norms = chunk_terms
            .iter()
            .map(|tf| {
                let sum: f64 = tf
                    .iter()
                    .map(|(term, count)| {
                        let w = *count as f64 * idf(n, doc_freq[term]);
                        w * w
                    })
                    .sum();
                sum.sqrt()
            })
            .collect();
        CodeIndex {
            chunks,
            stats: TermStats {
                doc_freq,
                chunk_terms,
                chunk_norms,
            },
        }
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Write the index to a portable JSON file. Only the chunks are stored;
    /// term statistics are rebuilt on load.
    pub fn save(&self, path: &Path) -> Result<(), RetrieverError> {
        let persisted = PersistedIndex {
            version: INDEX_VERSION,
            chunks: self.chunks.clone(),
        };
        let json = serde_json::to_string(&persisted).expect("chunks serialize");
        std::fs::write(path, json).map_err(|source| RetrieverError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, RetrieverError> {
        let text = std::fs::read_to_string(path).map_err(|source| RetrieverError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let persisted: PersistedIndex =
            serde_json::from_str(&text).map_err(|e| RetrieverError::BadIndex {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        if persisted.version != INDEX_VERSION {
            return Err(RetrieverError::BadIndex {
                path: path.display().to_string(),
                message: format!(
                    "unsupported version {} (expected {})",
                    persisted.version, INDEX_VERSION
                ),
            });
        }
        Ok(CodeIndex::from_chunks(persisted.chunks))
    }
}

/// Smoothed inverse document frequency: ln((1+N)/(1+df)) + 1.
///
/// Strictly positive, so any chunk sharing at least one query token scores
/// above every chunk sharing none.
fn idf(n_chunks: usize, df: usize) -> f64 {
    (((1 + n_chunks) as f64) / ((1 + df) as f64)).ln() + 1.0
}

/// Split file lines into chunks of at most [`CHUNK_LINES`] lines with
/// [`CHUNK_OVERLAP`] lines of overlap.
fn chunk_lines(lines: &[&str]) -> Vec<(usize, usize)> {
    let n = lines.len();
    let mut spans = Vec::new();
    if n == 0 {
        return spans;
    }
    let stride = CHUNK_LINES - CHUNK_OVERLAP;
    let mut start = 0;
    loop {
        let end = (start + CHUNK_LINES).min(n);
        spans.push((start + 1, end));
        if end == n {
            break;
        }
        start += stride;
    }
    spans
}

/// Walk `root`, chunk every file matching `include_globs` (relative to
/// `root`), and index the chunks. Unreadable or non-UTF-8 files are skipped
/// with a warning in the report. An empty pattern list matches everything.
pub fn build_index(
    root: &Path,
    include_globs: &[String],
) -> Result<(CodeIndex, IngestReport), RetrieverError> {
    let globs = build_globset(include_globs)?;
    let mut report = IngestReport::default();
    let mut chunks = Vec::new();
    let walker = walkdir::WalkDir::new(root).sort_by_file_name();
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e
                    .path()
                    .map(|p| p.display().to_string())
                    .unwrap_or_else(|| root.display().to_string());
                if e.path().is_none_or(|p| p == root) {
                    return Err(RetrieverError::Io {
                        path,
                        source: e
                            .into_io_error()
                            .unwrap_or_else(|| std::io::Error::other("walk failed")),
                    });
                }
                report.warnings.push(format!("skipped {path}: {e}"));
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .unwrap_or(entry.path())
            .to_string_lossy()
            .replace('\\', "/");
        if let Some(set) = &globs {
            if !set.is_match(&rel) {
                continue;
            }
        }
        let content = match std::fs::read_to_string(entry.path()) {
            Ok(c) => c,
            Err(e) => {
                report.warnings.push(format!("skipped {rel}: {e}"));
                continue;
            }
        };
        report.files_indexed += 1;
        let lines: Vec<&str> = content.lines().collect();
        for (start, end) in chunk_lines(&lines) {
            let text = lines[start - 1..end].join("\n");
            if text.is_empty() {
                continue;
            }
            chunks.push(Chunk {
                chunk_id: format!("{rel}:{start}-{end}"),
                file_path: rel.clone(),
                start_line: start,
                end_line: end,
                text,
            });
        }
    }
    Ok((CodeIndex::from_chunks(chunks), report))
}

fn build_globset(patterns: &[String]) -> Result<Option<GlobSet>, RetrieverError> {
    if patterns.is_empty() {
        return Ok(None);
    }
    let mut builder = GlobSetBuilder::new();
    for pattern in patterns {
        let glob = Glob::new(pattern).map_err(|e| RetrieverError::BadGlob {
            pattern: pattern.clone(),
            message: e.to_string(),
        })?;
        builder.add(glob);
    }
    let set = builder.build().map_err(|e| RetrieverError::BadGlob {
        pattern: patterns.join(","),
        message: e.to_string(),
    })?;
    Ok(Some(set))
}

/// Top-k chunks by TF-IDF cosine similarity to `query_text`.
///
/// Returns min(k, chunk count) hits sorted by descending score, ties broken
/// by ascending file path then start line. Zero-score chunks are kept so an
/// undersized index always yields `k` hits when it has that many chunks.
pub fn retrieve<'a>(idx: &'a CodeIndex, query_text: &str, k: usize) -> Vec<Hit<'a>> {
    if k == 0 || idx.chunks.is_empty() {
        return Vec::new();
    }
    let n = idx.chunks.len();
    let mut query_tf: BTreeMap<String, usize> = BTreeMap::new();
    for token in tokenize(query_text) {
        *query_tf.entry(token).or_insert(0) += 1;
    }
    let query_norm: f64 = query_tf
        .iter()
        .map(|(term, count)| {
            let df = idx.stats.doc_freq.get(term).copied().unwrap_or(0);
            let w = *count as f64 * idf(n, df);
            w * w
        })
        .sum::<f64>()
        .sqrt();
    let mut scored: Vec<(f64, usize)> = idx
        .chunks
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let tf = &idx.stats.chunk_terms[i];
            let mut dot = 0.0;
            for (term, q_count) in &query_tf {
                if let Some(c_count) = tf.get(term) {
                    let w = idf(n, idx.stats.doc_freq[term]);
                    dot += (*q_count as f64 * w) * (*c_count as f64 * w);
                }
            }
            let norm = idx.stats.chunk_norms[i] * query_norm;
            let score = if norm > 0.0 { dot / norm } else { 0.0 };
            (score, i)
        })
        .collect();
    scored.sort_by(|(score_a, ia), (score_b, ib)| {
        score_b
            .total_cmp(score_a)
            .then_with(|| {
                let a = &idx.chunks[*ia];
                let b = &idx.chunks[*ib];
                a.file_path
                    .cmp(&b.file_path)
                    .then(a.start_line.cmp(&b.start_line))
            })
    });
    scored
        .into_iter()
        .take(k)
        .map(|(score, i)| Hit {
            chunk: &idx.chunks[i],
            score,
        })
        .collect()
}

/// Retrieve context for a scenario: the query is the focal method id plus
/// the scenario text, and each hit is rendered as a block prefixed with its
/// file path and line range. Returns an empty string on an empty index.
pub fn augment_prompt(rec: &ScenarioRecord, idx: &CodeIndex, k: usize) -> String {
    let query = format!("{} {}", rec.focal.id, rec.scenario_text);
    retrieve(idx, &query, k)
        .into_iter()
        .map(|hit| {
            format!(
                "--- {}:{}-{} ---\n{}",
                hit.chunk.file_path, hit.chunk.start_line, hit.chunk.end_line, hit.chunk.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
