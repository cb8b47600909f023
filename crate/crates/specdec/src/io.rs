//! On-disk formats and their validation gates.
//!
//! Model files are JSON with a fixed format tag. Saving goes through a
//! hand-rendered canonical writer (sorted contexts, 17-significant-digit
//! floats) so identical models always produce identical bytes; the model
//! content hash is the SHA-256 of exactly those bytes. Loading goes through
//! serde and re-validates everything: format tag, reserved vocabulary,
//! context lengths, distribution lengths, and normalization (a relaxed
//! 1e-6 gate, so hand-authored files with lower-precision floats still
//! load). Nothing is repaired on load; invalid input is rejected.
//!
//! Corpus files are one `source<TAB>target` pair per line, whitespace-
//! separated symbols, CRLF tolerated. Targets get `<eos>` appended unless
//! already terminated.

use crate::bench::RunReport;
use crate::core::{Sequence, TokenId, Vocabulary, EOS, RESERVED_TOKENS};
use crate::models::{Model, ModelError, NgramModel};
use sha2::{Digest, Sha256};
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Format tag every model file must carry.
pub const MODEL_FORMAT_TAG: &str = "specdec-ngram-v1";

/// Normalization slack tolerated when loading model files. Looser than the
/// in-process gate so hand-written files with short decimals still load.
pub const FILE_NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum FileError {
    #[error("MALFORMED_JSON: {path}: {detail}")]
    MalformedJson { path: String, detail: String },
    #[error("BAD_FORMAT_TAG: {path}: found {found:?}, expected {MODEL_FORMAT_TAG:?}")]
    BadFormatTag { path: String, found: String },
    #[error("BAD_RESERVED_TOKENS: {path}: {detail}")]
    BadReservedTokens { path: String, detail: String },
    #[error("UNNORMALIZED_DISTRIBUTION: {path}: context {ctx:?} has log-sum-exp {lse:e}")]
    Unnormalized { path: String, ctx: Vec<u32>, lse: f64 },
    #[error("{path}: duplicate context {ctx:?}")]
    DuplicateContext { path: String, ctx: Vec<u32> },
    #[error("{path}: {detail}")]
    InvalidModel { path: String, detail: String },
    #[error("UNKNOWN_SYMBOL: {path}:{line}: {symbol:?} is not in the vocabulary")]
    UnknownSymbol {
        path: String,
        line: usize,
        symbol: String,
    },
    #[error("EMPTY_TARGET: {path}:{line}: target side has no tokens")]
    EmptyTarget { path: String, line: usize },
    #[error("{path}:{line}: expected 'source<TAB>target'")]
    MissingTab { path: String, line: usize },
    #[error("{path}:{line}: {detail}")]
    BadSequence {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> FileError {
    FileError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Renders with 17 significant digits, enough to reproduce any f64 exactly
/// on reparse. Stays valid JSON (`-6.9314718055994531e-1`).
fn format_logprob(x: f64) -> String {
    format!("{x:.16e}")
}

/// Canonical byte rendering of a model: fixed key order, contexts sorted,
/// floats at full precision. Shared by [`save_model`] and [`model_hash`].
pub fn model_canonical_json(model: &NgramModel) -> String {
    let mut out = String::new();
    out.push_str("{\"format\":");
    out.push_str(&serde_json::to_string(MODEL_FORMAT_TAG).expect("string serializes"));
    out.push_str(",\"vocab\":[");
    for (i, symbol) in model.vocab().symbols().iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&serde_json::to_string(symbol).expect("string serializes"));
    }
    out.push_str("],\"order\":");
    out.push_str(&model.order().to_string());
    out.push_str(",\"entries\":[");
    for (i, (ctx, logprobs)) in model.entries().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"ctx\":[");
        for (j, t) in ctx.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&t.0.to_string());
        }
        out.push_str("],\"logprobs\":[");
        for (j, &lp) in logprobs.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_logprob(lp));
        }
        out.push_str("]}");
    }
    out.push_str("]}\n");
    out
}

/// Writes the canonical rendering. Saving the same model twice produces
/// byte-identical files.
pub fn save_model(model: &NgramModel, path: &Path) -> Result<(), FileError> {
    fs::write(path, model_canonical_json(model)).map_err(|e| io_err(path, e))
}

/// SHA-256 hex digest of the canonical model rendering. Stable across
/// processes and platforms; two models hash equal iff they save identically.
pub fn model_hash(model: &NgramModel) -> String {
    let digest = Sha256::digest(model_canonical_json(model).as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[derive(Deserialize)]
struct ModelFileJson {
    format: String,
    vocab: Vec<String>,
    order: usize,
    entries: Vec<ModelEntryJson>,
}

#[derive(Deserialize)]
struct ModelEntryJson {
    ctx: Vec<u32>,
    logprobs: Vec<f64>,
}

/// Loads and fully re-validates a model file.
pub fn load_model(path: &Path) -> Result<NgramModel, FileError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let parsed: ModelFileJson =
        serde_json::from_str(&text).map_err(|e| FileError::MalformedJson {
            path: display.clone(),
            detail: e.to_string(),
        })?;
    if parsed.format != MODEL_FORMAT_TAG {
        return Err(FileError::BadFormatTag {
            path: display,
            found: parsed.format,
        });
    }
    let vocab = Vocabulary::new(parsed.vocab).map_err(|e| match e {
        crate::core::VocabError::DuplicateSymbol { .. } => FileError::InvalidModel {
            path: display.clone(),
            detail: e.to_string(),
        },
        _ => FileError::BadReservedTokens {
            path: display.clone(),
            detail: e.to_string(),
        },
    })?;
    let mut table: BTreeMap<Vec<TokenId>, Vec<f64>> = BTreeMap::new();
    for entry in parsed.entries {
        let ctx: Vec<TokenId> = entry.ctx.iter().map(|&i| TokenId(i)).collect();
        if table.insert(ctx, entry.logprobs).is_some() {
            return Err(FileError::DuplicateContext {
                path: display,
                ctx: entry.ctx,
            });
        }
    }
    NgramModel::with_tolerance(vocab, parsed.order, table, FILE_NORMALIZATION_TOLERANCE).map_err(
        |e| match e {
            ModelError::Unnormalized { ctx, lse } => FileError::Unnormalized {
                path: display.clone(),
                ctx,
                lse,
            },
            other => FileError::InvalidModel {
                path: display.clone(),
                detail: other.to_string(),
            },
        },
    )
}

/// Loads a `source<TAB>target` corpus against a known vocabulary. Appends
/// `<eos>` to any target that does not already end with it. Line numbers in
/// errors are 1-based.
pub fn load_corpus(path: &Path, vocab: &Vocabulary) -> Result<Vec<(Sequence, Sequence)>, FileError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        let (src_text, tgt_text) = row.split_once('\t').ok_or(FileError::MissingTab {
            path: display.clone(),
            line,
        })?;
        let parse_side = |side: &str| -> Result<Vec<TokenId>, FileError> {
            side.split_whitespace()
                .map(|symbol| {
                    vocab.id_of(symbol).ok_or_else(|| FileError::UnknownSymbol {
                        path: display.clone(),
                        line,
                        symbol: symbol.to_string(),
                    })
                })
                .collect()
        };
        let src_tokens = parse_side(src_text)?;
        let mut tgt_tokens = parse_side(tgt_text)?;
        if tgt_tokens.is_empty() {
            return Err(FileError::EmptyTarget {
                path: display,
                line,
            });
        }
        if tgt_tokens.last() != Some(&EOS) {
            tgt_tokens.push(EOS);
        }
        let mk_seq = |tokens: Vec<TokenId>| {
            Sequence::new(tokens).map_err(|e| FileError::BadSequence {
                path: display.clone(),
                line,
                detail: e.to_string(),
            })
        };
        pairs.push((mk_seq(src_tokens)?, mk_seq(tgt_tokens)?));
    }
    Ok(pairs)
}

/// First pass over a corpus file: collects the distinct non-reserved symbols
/// so a vocabulary can be built before token ids exist. Reserved names map
/// to their fixed slots and are not duplicated.
pub fn scan_corpus_symbols(path: &Path) -> Result<Vec<String>, FileError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let display = path.display().to_string();
    let reserved: [&str; RESERVED_TOKENS] = ["<bos>", "<eos>", "<mask>"];
    let mut symbols = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.split_once('\t').is_none() {
            return Err(FileError::MissingTab {
                path: display,
                line: i + 1,
            });
        }
        for symbol in row.split_whitespace() {
            if !reserved.contains(&symbol) {
                symbols.insert(symbol.to_string());
            }
        }
    }
    Ok(symbols.into_iter().collect())
}

/// Serializes a run report as pretty JSON. Field order is fixed by the
/// struct definitions and float rendering is serde's shortest round-trip
/// form, so equal reports produce byte-identical files.
pub fn write_report(report: &RunReport, path: &Path) -> Result<(), FileError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| FileError::MalformedJson {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn load_report(path: &Path) -> Result<RunReport, FileError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| FileError::MalformedJson {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Writes a simple CSV table: one header row then the data rows.
pub fn write_table(header: &[&str], rows: &[Vec<String>], path: &Path) -> Result<(), FileError> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}
