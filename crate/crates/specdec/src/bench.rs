//! Modeled-cost benchmarking.
//!
//! Decode loops report what happened (tokens drafted, emitted, rounds); this
//! module prices it. The cost model charges `t_d` per drafter block, `t_v`
//! per batched verification pass, and `t_ar` per plain autoregressive step.
//! Throughput is summarized as mean tokens emitted per round ("tok"), and
//! latency by the two-term model `(L / tok) * t_d + (L / tok) * t_v`.
//! Speedups are always quoted against the greedy autoregressive baseline on
//! the same corpus. Wall-clock time is measured but deliberately kept out of
//! serialized reports so reruns stay byte-identical.

use crate::core::{
    rng_stream, validate_config, DecodeConfig, IterationRecord, Sequence, Strategy,
};
use crate::decode::{ar_greedy_decode, specdec_decode, DecodeError, DecodeResult};
use crate::io::model_hash;
use crate::models::{Model, ModelError, NgramModel, NoisyOracleDrafter, SelfRolloutDrafter};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("EMPTY_RECORDS: no iteration records to summarize")]
    EmptyRecords,
    #[error("NONPOSITIVE_TOK: tokens-per-round must be positive and finite, got {tok}")]
    NonpositiveTok { tok: f64 },
    #[error("CORPUS_MISMATCH: {detail}")]
    CorpusMismatch { detail: String },
    #[error("cost entries must be finite and non-negative: {t_d}, {t_v}, {t_ar}")]
    BadCosts { t_d: f64, t_v: f64, t_ar: f64 },
    #[error("histogram bucket width must be positive and finite, got {width}")]
    BadBucketWidth { width: f64 },
    #[error("sequence {index} has non-positive modeled latency; speedup is undefined")]
    DegenerateLatency { index: usize },
    #[error("strategy {strategy} needs a drafter")]
    MissingDrafter { strategy: Strategy },
    #[error("cannot run on an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-event costs in arbitrary time units: one drafter block costs `t_d`,
/// one batched verification pass `t_v`, one autoregressive step `t_ar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub t_d: f64,
    pub t_v: f64,
    pub t_ar: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            t_d: 1.0,
            t_v: 2.0,
            t_ar: 2.0,
        }
    }
}

impl CostModel {
    pub fn new(t_d: f64, t_v: f64, t_ar: f64) -> Result<Self, BenchError> {
        let costs = CostModel { t_d, t_v, t_ar };
        costs.validate()?;
        Ok(costs)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if ok(self.t_d) && ok(self.t_v) && ok(self.t_ar) {
            Ok(())
        } else {
            Err(BenchError::BadCosts {
                t_d: self.t_d,
                t_v: self.t_v,
                t_ar: self.t_ar,
            })
        }
    }
}

/// Mean tokens emitted per iteration.
pub fn compute_tok(records: &[IterationRecord]) -> Result<f64, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    let emitted: usize = records.iter().map(|r| r.emitted).sum();
    Ok(emitted as f64 / records.len() as f64)
}

/// Two-term latency model: `output_len / tok` rounds, each charged one
/// drafter block and one verification pass. `t_ar` plays no role here; the
/// autoregressive baseline is simply `output_len * t_ar`.
pub fn estimate_latency(output_len: usize, tok: f64, costs: &CostModel) -> Result<f64, BenchError> {
    costs.validate()?;
    if !tok.is_finite() || tok <= 0.0 {
        return Err(BenchError::NonpositiveTok { tok });
    }
    let rounds = output_len as f64 / tok;
    Ok(rounds * costs.t_d + rounds * costs.t_v)
}

/// Expected tokens emitted per round by strict verification of a noisy
/// oracle drafter with per-position corruption probability `p`.
///
/// Until its first corruption the drafter replays the target's own greedy
/// chain, so the first corrupted position is exactly the first bifurcation
/// and the round emits `c = min(first corruption, k)` tokens. Summing the
/// survival probabilities `P(c >= i) = (1-p)^(i-1)` gives
/// `E[c] = (1 - (1-p)^k) / p`, and `k` exactly at `p = 0`.
pub fn expected_accept_noisy_oracle(k: usize, p: f64) -> f64 {
    assert!(k >= 1, "block size must be at least 1");
    assert!((0.0..=1.0).contains(&p), "corruption probability out of range");
    if p == 0.0 {
        return k as f64;
    }
    (1.0 - (1.0 - p).powi(k as i32)) / p
}

/// Drafter recipe for a benchmark run; instantiated once per sequence so
/// random streams never cross sequence boundaries.
#[derive(Debug, Clone)]
pub enum DrafterSpec {
    /// Greedy self-rollout of an explicit (usually smaller/older) model.
    SelfRollout(NgramModel),
    /// Corrupted copy of the target's own greedy chain.
    NoisyOracle { p: f64 },
}

impl DrafterSpec {
    fn describe(&self) -> String {
        match self {
            DrafterSpec::SelfRollout(m) => format!("self-rollout:{}", model_hash(m)),
            DrafterSpec::NoisyOracle { p } => format!("noisy-oracle:p={p}"),
        }
    }
}

/// One decoded sequence as it appears in a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceReport {
    pub index: usize,
    pub source_len: usize,
    pub output_len: usize,
    pub terminated: bool,
    /// Mean tokens emitted per round for this sequence.
    pub tok: f64,
    /// Sum of per-round modeled costs for this sequence.
    pub modeled_latency: f64,
    pub iterations: Vec<IterationRecord>,
}

/// Corpus-level summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    /// Pooled mean: total tokens emitted over total rounds.
    pub mean_tok: f64,
    pub total_tokens: usize,
    pub total_iterations: usize,
    pub modeled_latency: f64,
    /// Modeled latency of greedy autoregression over the same corpus.
    pub baseline_latency: f64,
    /// `baseline_latency / modeled_latency`; exactly 1 for the baseline itself.
    pub speedup: f64,
    /// Fraction of sequences whose output differs from greedy decoding.
    pub divergence_rate: f64,
}

/// Full record of one benchmark run. Serializes deterministically; the
/// wall-clock measurement is kept out of the file on purpose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub strategy: Strategy,
    pub config: DecodeConfig,
    pub costs: CostModel,
    /// Content hash of the target model.
    pub target_model: String,
    /// Human-readable drafter descriptor ("none" for autoregressive runs).
    pub drafter: String,
    pub sequences: Vec<SequenceReport>,
    pub aggregate: Aggregate,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

fn price_records(records: &mut [IterationRecord], strategy: Strategy, costs: &CostModel) {
    for r in records.iter_mut() {
        match strategy {
            Strategy::ArGreedy | Strategy::ArBeam => {
                r.draft_cost = 0.0;
                r.verify_cost = costs.t_ar;
            }
            Strategy::SpecdecVanilla | Strategy::SpecdecRelaxed => {
                r.draft_cost = costs.t_d;
                r.verify_cost = costs.t_v;
            }
        }
    }
}

fn modeled_latency(records: &[IterationRecord]) -> f64 {
    records.iter().map(|r| r.draft_cost + r.verify_cost).sum()
}

struct SequenceRun {
    report: SequenceReport,
    baseline_latency: f64,
    diverged: bool,
}

fn run_sequence(
    target: &NgramModel,
    drafter: Option<&DrafterSpec>,
    index: usize,
    source: &Sequence,
    config: &DecodeConfig,
    costs: &CostModel,
) -> Result<SequenceRun, BenchError> {
    let decoded: DecodeResult = match config.strategy {
        Strategy::SpecdecVanilla | Strategy::SpecdecRelaxed => {
            match drafter.expect("checked in run_corpus") {
                DrafterSpec::SelfRollout(m) => {
                    let mut d = SelfRolloutDrafter::new(m);
                    specdec_decode(target, &mut d, source.tokens(), config)?
                }
                DrafterSpec::NoisyOracle { p } => {
                    let rng = rng_stream(config.seed, index as u64);
                    let mut d = NoisyOracleDrafter::new(target, *p, rng)?;
                    specdec_decode(target, &mut d, source.tokens(), config)?
                }
            }
        }
        Strategy::ArGreedy | Strategy::ArBeam => {
            // the drafter, if any, is irrelevant here
            let mut unused = SelfRolloutDrafter::new(target);
            specdec_decode(target, &mut unused, source.tokens(), config)?
        }
    };
    let mut records = decoded.iterations;
    price_records(&mut records, config.strategy, costs);
    let tok = compute_tok(&records)?;
    let latency = modeled_latency(&records);

    let (baseline_latency, diverged) = if config.strategy == Strategy::ArGreedy {
        (latency, false)
    } else {
        let baseline = ar_greedy_decode(target, source.tokens(), config.max_len)?;
        let mut base_records = baseline.iterations;
        price_records(&mut base_records, Strategy::ArGreedy, costs);
        (
            modeled_latency(&base_records),
            baseline.output != decoded.output,
        )
    };

    Ok(SequenceRun {
        report: SequenceReport {
            index,
            source_len: source.len(),
            output_len: decoded.output.len(),
            terminated: decoded.output.is_terminated(),
            tok,
            modeled_latency: latency,
            iterations: records,
        },
        baseline_latency,
        diverged,
    })
}

/// Decodes every corpus sequence under one configuration and aggregates the
/// result. `jobs` controls host parallelism only: sequence `i` always uses
/// RNG stream `i` of `config.seed` and results are reduced in index order,
/// so any job count produces the identical report.
pub fn run_corpus(
    target: &NgramModel,
    drafter: Option<&DrafterSpec>,
    corpus: &[(Sequence, Sequence)],
    config: &DecodeConfig,
    costs: &CostModel,
    jobs: usize,
) -> Result<RunReport, BenchError> {
    let started = Instant::now();
    validate_config(config, target.vocab_size()).map_err(DecodeError::from)?;
    costs.validate()?;
    if corpus.is_empty() {
        return Err(BenchError::EmptyCorpus);
    }
    let needs_drafter = matches!(
        config.strategy,
        Strategy::SpecdecVanilla | Strategy::SpecdecRelaxed
    );
    if needs_drafter && drafter.is_none() {
        return Err(BenchError::MissingDrafter {
            strategy: config.strategy,
        });
    }
    if let Some(DrafterSpec::NoisyOracle { p }) = drafter {
        if !(0.0..=1.0).contains(p) {
            return Err(ModelError::BadCorruptionProb { p: *p }.into());
        }
    }

    let run_one = |(index, (source, _)): (usize, &(Sequence, Sequence))| {
        run_sequence(target, drafter, index, source, config, costs)
    };
    let runs: Vec<SequenceRun> = if jobs <= 1 {
        corpus
            .iter()
            .enumerate()
            .map(run_one)
            .collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool construction");
        pool.install(|| {
            corpus
                .par_iter()
                .enumerate()
                .map(run_one)
                .collect::<Result<_, _>>()
        })?
    };

    let total_tokens: usize = runs.iter().map(|r| r.report.output_len).sum();
    let total_iterations: usize = runs.iter().map(|r| r.report.iterations.len()).sum();
    let latency: f64 = runs.iter().map(|r| r.report.modeled_latency).sum();
    let baseline: f64 = runs.iter().map(|r| r.baseline_latency).sum();
    let diverged = runs.iter().filter(|r| r.diverged).count();
    let aggregate = Aggregate {
        mean_tok: total_tokens as f64 / total_iterations as f64,
        total_tokens,
        total_iterations,
        modeled_latency: latency,
        baseline_latency: baseline,
        speedup: baseline / latency,
        divergence_rate: diverged as f64 / runs.len() as f64,
    };
    Ok(RunReport {
        strategy: config.strategy,
        config: config.clone(),
        costs: *costs,
        target_model: model_hash(target),
        drafter: drafter.map_or_else(|| "none".to_string(), DrafterSpec::describe),
        sequences: runs.into_iter().map(|r| r.report).collect(),
        aggregate,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Row of a block-size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSizeRow {
    pub k: usize,
    pub mean_tok: f64,
    pub speedup: f64,
}

/// Reruns the corpus once per block size, holding everything else fixed.
pub fn sweep_block_size(
    target: &NgramModel,
    drafter: Option<&DrafterSpec>,
    corpus: &[(Sequence, Sequence)],
    ks: &[usize],
    config: &DecodeConfig,
    costs: &CostModel,
    jobs: usize,
) -> Result<Vec<BlockSizeRow>, BenchError> {
    ks.iter()
        .map(|&k| {
            let cfg = DecodeConfig { k, ..config.clone() };
            let report = run_corpus(target, drafter, corpus, &cfg, costs, jobs)?;
            Ok(BlockSizeRow {
                k,
                mean_tok: report.aggregate.mean_tok,
                speedup: report.aggregate.speedup,
            })
        })
        .collect()
}

/// Cell of a relaxed-verification sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationCell {
    pub beta: usize,
    pub tau: f64,
    pub mean_tok: f64,
    pub speedup: f64,
    pub divergence_rate: f64,
}

/// Reruns the corpus under relaxed verification for every `(beta, tau)`
/// combination, in row-major order (`betas` outer, `taus` inner).
#[allow(clippy::too_many_arguments)]
pub fn sweep_verification(
    target: &NgramModel,
    drafter: Option<&DrafterSpec>,
    corpus: &[(Sequence, Sequence)],
    betas: &[usize],
    taus: &[f64],
    config: &DecodeConfig,
    costs: &CostModel,
    jobs: usize,
) -> Result<Vec<VerificationCell>, BenchError> {
    let mut cells = Vec::with_capacity(betas.len() * taus.len());
    for &beta in betas {
        for &tau in taus {
            let cfg = DecodeConfig {
                beta,
                tau,
                strategy: Strategy::SpecdecRelaxed,
                ..config.clone()
            };
            let report = run_corpus(target, drafter, corpus, &cfg, costs, jobs)?;
            cells.push(VerificationCell {
                beta,
                tau,
                mean_tok: report.aggregate.mean_tok,
                speedup: report.aggregate.speedup,
                divergence_rate: report.aggregate.divergence_rate,
            });
        }
    }
    Ok(cells)
}

/// Histogram bucket over per-sequence speedups: counts sequences with
/// `lower <= speedup < upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Buckets per-sequence speedups of `report` against `baseline`. The two
/// reports must describe the same corpus (same count, same source lengths,
/// position by position). Only non-empty buckets are returned, in ascending
/// order.
pub fn speedup_histogram(
    report: &RunReport,
    baseline: &RunReport,
    bucket_width: f64,
) -> Result<Vec<HistogramBucket>, BenchError> {
    if !bucket_width.is_finite() || bucket_width <= 0.0 {
        return Err(BenchError::BadBucketWidth {
            width: bucket_width,
        });
    }
    if report.sequences.len() != baseline.sequences.len() {
        return Err(BenchError::CorpusMismatch {
            detail: format!(
                "{} sequences vs {} in baseline",
                report.sequences.len(),
                baseline.sequences.len()
            ),
        });
    }
    let mut counts: std::collections::BTreeMap<u64, usize> = std::collections::BTreeMap::new();
    for (i, (seq, base)) in report.sequences.iter().zip(&baseline.sequences).enumerate() {
        if seq.source_len != base.source_len {
            return Err(BenchError::CorpusMismatch {
                detail: format!(
                    "sequence {i}: source length {} vs {} in baseline",
                    seq.source_len, base.source_len
                ),
            });
        }
        if seq.modeled_latency.is_nan()
            || seq.modeled_latency <= 0.0
            || base.modeled_latency.is_nan()
            || base.modeled_latency <= 0.0
        {
            return Err(BenchError::DegenerateLatency { index: i });
        }
        let speedup = base.modeled_latency / seq.modeled_latency;
        let bucket = (speedup / bucket_width).floor() as u64;
        *counts.entry(bucket).or_insert(0) += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(b, count)| HistogramBucket {
            lower: b as f64 * bucket_width,
            upper: (b + 1) as f64 * bucket_width,
            count,
        })
        .collect())
}
