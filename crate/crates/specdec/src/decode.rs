//! Decoding loops and draft verification.
//!
//! The draft-then-verify loop alternates two phases: a drafter proposes a
//! block of `k` tokens, then the target model scores all block positions in
//! one batched pass and a verifier decides how much of the block survives.
//! The strict verifier keeps drafts only while they equal the target's
//! argmax, which reproduces greedy decoding token for token. The relaxed
//! verifier also keeps drafts the target considers close enough (rank within
//! beta, log-probability within tau of the best), trading exactness for
//! longer accepted runs. Both always emit at least one token per iteration,
//! so decoding cannot stall.

use crate::core::{
    validate_config, ConfigError, DecodeConfig, IterationRecord, Sequence, Strategy, TokenId, EOS,
};
use crate::models::{DraftBlock, Drafter, Model, PositionScores};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("LENGTH_MISMATCH: {drafts} drafted tokens but {scores} scored positions")]
    LengthMismatch { drafts: usize, scores: usize },
    #[error("cannot verify an empty draft block")]
    EmptyBlock,
    #[error("BAD_HYPERPARAMS: beta = {beta} must lie in 1..={vocab_size} and tau = {tau} must be >= 0")]
    BadHyperparams { beta: usize, tau: f64, vocab_size: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Verifier's view of one block position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionDecision {
    pub draft: TokenId,
    /// The target's argmax at this position.
    pub ar_top1: TokenId,
    pub accepted: bool,
    pub draft_logprob: f64,
    pub top1_logprob: f64,
    /// 1-based rank of the draft under the target; ties share the better rank.
    pub rank_of_draft: usize,
}

/// Result of verifying one draft block, before end-of-sequence or length
/// truncation is applied by the decode loop.
///
/// Invariants: `emitted.len() == bifurcation`, `1 <= bifurcation <= k`, and
/// `decisions[i].accepted` holds exactly for `i < bifurcation - 1`, plus
/// `i == bifurcation - 1` when the final position itself was accepted (only
/// possible at `bifurcation == k`).
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub emitted: Vec<TokenId>,
    /// 1-based position of the first rejected draft; `k` when none was.
    pub bifurcation: usize,
    pub decisions: Vec<PositionDecision>,
}

/// Output of one full decode run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub output: Sequence,
    /// One record per draft/verify round (or per autoregressive step).
    pub iterations: Vec<IterationRecord>,
    /// Raw verifier traces, untruncated; empty for autoregressive runs.
    pub outcomes: Vec<VerifyOutcome>,
    /// Length-normalized score of the returned hypothesis (beam search only).
    pub beam_score: Option<f64>,
}

/// 1-based position of the first draft that differs from the scorer's
/// argmax; `k` when the whole block matches.
pub fn find_bifurcation(drafts: &DraftBlock, ar_argmax: &[TokenId]) -> Result<usize, DecodeError> {
    if drafts.len() != ar_argmax.len() {
        return Err(DecodeError::LengthMismatch {
            drafts: drafts.len(),
            scores: ar_argmax.len(),
        });
    }
    if drafts.is_empty() {
        return Err(DecodeError::EmptyBlock);
    }
    for (i, (&d, &a)) in drafts.as_slice().iter().zip(ar_argmax).enumerate() {
        if d != a {
            return Ok(i + 1);
        }
    }
    Ok(drafts.len())
}

fn position_decisions(drafts: &DraftBlock, scores: &[PositionScores]) -> Vec<PositionDecision> {
    drafts
        .as_slice()
        .iter()
        .zip(scores)
        .map(|(&draft, s)| {
            let top1 = s.argmax();
            PositionDecision {
                draft,
                ar_top1: top1,
                accepted: false,
                draft_logprob: s.logprob(draft),
                top1_logprob: s.logprob(top1),
                rank_of_draft: s.rank_of(draft),
            }
        })
        .collect()
}

/// Strict verification: drafts survive only while they equal the target's
/// argmax. The emitted run is the matched prefix plus the target's own token
/// at the bifurcation position (which on a fully matched block is just the
/// final draft; no extra token is appended beyond the block).
pub fn vanilla_verify(
    drafts: &DraftBlock,
    scores: &[PositionScores],
) -> Result<VerifyOutcome, DecodeError> {
    if drafts.len() != scores.len() {
        return Err(DecodeError::LengthMismatch {
            drafts: drafts.len(),
            scores: scores.len(),
        });
    }
    let argmaxes: Vec<TokenId> = scores.iter().map(PositionScores::argmax).collect();
    let c = find_bifurcation(drafts, &argmaxes)?;
    let mut decisions = position_decisions(drafts, scores);
    for (i, d) in decisions.iter_mut().enumerate() {
        d.accepted = i < c && d.draft == d.ar_top1;
    }
    let mut emitted: Vec<TokenId> = drafts.as_slice()[..c - 1].to_vec();
    emitted.push(argmaxes[c - 1]);
    Ok(VerifyOutcome {
        emitted,
        bifurcation: c,
        decisions,
    })
}

/// Relaxed verification: a draft survives if every earlier draft survived
/// and the target itself scores it in the top `beta` (tied scores share the
/// better rank) with a log-probability within `tau` of the target's best.
/// Both bounds are inclusive. On the first failure the target's argmax is
/// emitted in place of the rejected draft; a fully accepted block is emitted
/// as proposed, even where it disagrees with the argmax chain.
pub fn spec_verify(
    drafts: &DraftBlock,
    scores: &[PositionScores],
    beta: usize,
    tau: f64,
) -> Result<VerifyOutcome, DecodeError> {
    if drafts.len() != scores.len() {
        return Err(DecodeError::LengthMismatch {
            drafts: drafts.len(),
            scores: scores.len(),
        });
    }
    if drafts.is_empty() {
        return Err(DecodeError::EmptyBlock);
    }
    let vocab_size = scores[0].len();
    if beta == 0 || beta > vocab_size || tau.is_nan() || tau < 0.0 {
        return Err(DecodeError::BadHyperparams {
            beta,
            tau,
            vocab_size,
        });
    }
    let mut decisions = position_decisions(drafts, scores);
    let k = drafts.len();
    let mut c = k;
    let mut rejected_at_c = false;
    for i in 0..k {
        let d = &decisions[i];
        let in_top_beta = d.draft_logprob >= scores[i].kth_logprob(beta);
        let within_gap = d.top1_logprob - d.draft_logprob <= tau;
        if in_top_beta && within_gap {
            decisions[i].accepted = true;
        } else {
            c = i + 1;
            rejected_at_c = true;
            break;
        }
    }
    let mut emitted: Vec<TokenId> = drafts.as_slice()[..c - 1].to_vec();
    if rejected_at_c {
        emitted.push(decisions[c - 1].ar_top1);
    } else {
        emitted.push(drafts.get(k - 1));
    }
    debug_assert_eq!(emitted.len(), c);
    Ok(VerifyOutcome {
        emitted,
        bifurcation: c,
        decisions,
    })
}

/// Plain autoregressive argmax decoding. Each step is recorded as one
/// iteration emitting one token; costs are filled in by the benchmark layer.
pub fn ar_greedy_decode<M: Model + ?Sized>(
    model: &M,
    source: &[TokenId],
    max_len: usize,
) -> Result<DecodeResult, DecodeError> {
    if max_len == 0 {
        return Err(ConfigError::ZeroMaxLen.into());
    }
    let mut out: Vec<TokenId> = Vec::new();
    let mut iterations = Vec::new();
    while out.last() != Some(&EOS) && out.len() < max_len {
        let next = model.next_distribution(source, &out).argmax();
        out.push(next);
        iterations.push(IterationRecord {
            drafted: 0,
            emitted: 1,
            bifurcation: 1,
            draft_cost: 0.0,
            verify_cost: 0.0,
        });
    }
    Ok(DecodeResult {
        output: Sequence::new(out).expect("greedy stops at first <eos>"),
        iterations,
        outcomes: Vec::new(),
        beam_score: None,
    })
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    total_logprob: f64,
}

impl Hypothesis {
    fn normalized(&self) -> f64 {
        self.total_logprob / self.tokens.len() as f64
    }
}

// Higher normalized score first; ties prefer the lexicographically smaller
// token path so results never depend on expansion order.
fn better(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.normalized()
        .total_cmp(&a.normalized())
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Length-normalized beam search. Each step expands every live hypothesis
/// over the whole vocabulary, keeps the `beam_width` best candidates by
/// normalized score, and moves the ones that just produced `<eos>` into a
/// finished pool. Returns the best finished hypothesis, or the best live one
/// if nothing finished within `max_len` steps. With `beam_width = 1` the
/// tie-breaking rules make this reproduce greedy decoding exactly.
///
/// Each step is costed as a single batched scorer pass; the iteration trace
/// charges one step per token of the returned hypothesis.
pub fn ar_beam_decode<M: Model + ?Sized>(
    model: &M,
    source: &[TokenId],
    beam_width: usize,
    max_len: usize,
) -> Result<DecodeResult, DecodeError> {
    if beam_width == 0 {
        return Err(ConfigError::ZeroBeamWidth.into());
    }
    if max_len == 0 {
        return Err(ConfigError::ZeroMaxLen.into());
    }
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        total_logprob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        if beam.is_empty() {
            break;
        }
        let mut candidates: Vec<Hypothesis> = Vec::with_capacity(beam.len() * model.vocab_size());
        for hyp in &beam {
            let scores = model.next_distribution(source, &hyp.tokens);
            for (t, &lp) in scores.as_slice().iter().enumerate() {
                let mut tokens = Vec::with_capacity(hyp.tokens.len() + 1);
                tokens.extend_from_slice(&hyp.tokens);
                tokens.push(TokenId(t as u32));
                candidates.push(Hypothesis {
                    tokens,
                    total_logprob: hyp.total_logprob + lp,
                });
            }
        }
        candidates.sort_by(better);
        candidates.truncate(beam_width);
        beam = Vec::with_capacity(beam_width);
        for cand in candidates {
            if cand.tokens.last() == Some(&EOS) {
                finished.push(cand);
            } else {
                beam.push(cand);
            }
        }
    }
    let best = if finished.is_empty() { beam } else { finished }
        .into_iter()
        .min_by(better)
        .expect("beam search always explores at least one hypothesis");
    let iterations = best
        .tokens
        .iter()
        .map(|_| IterationRecord {
            drafted: 0,
            emitted: 1,
            bifurcation: 1,
            draft_cost: 0.0,
            verify_cost: 0.0,
        })
        .collect();
    let score = best.normalized();
    Ok(DecodeResult {
        output: Sequence::new(best.tokens).expect("hypotheses stop at first <eos>"),
        iterations,
        outcomes: Vec::new(),
        beam_score: Some(score),
    })
}

/// Full draft-then-verify decode of one sequence. Dispatches on the
/// configured strategy; the autoregressive strategies ignore the drafter.
///
/// Verifier output is appended subject to two truncations: nothing is
/// appended past the first `<eos>`, and the output never exceeds
/// `config.max_len` tokens. Iteration records report the post-truncation
/// count in both `emitted` and `bifurcation`; the raw verifier view stays
/// available in `outcomes`.
pub fn specdec_decode<M: Model + ?Sized, D: Drafter + ?Sized>(
    target: &M,
    drafter: &mut D,
    source: &[TokenId],
    config: &DecodeConfig,
) -> Result<DecodeResult, DecodeError> {
    validate_config(config, target.vocab_size())?;
    match config.strategy {
        Strategy::ArGreedy => return ar_greedy_decode(target, source, config.max_len),
        Strategy::ArBeam => {
            return ar_beam_decode(target, source, config.beam_width, config.max_len)
        }
        Strategy::SpecdecVanilla | Strategy::SpecdecRelaxed => {}
    }
    let mut out: Vec<TokenId> = Vec::new();
    let mut iterations = Vec::new();
    let mut outcomes = Vec::new();
    while out.last() != Some(&EOS) && out.len() < config.max_len {
        let block = drafter.draft_block(source, &out, config.k);
        debug_assert_eq!(block.len(), config.k, "drafter must fill the block");
        let scores = target.score_positions_parallel(source, &out, &block);
        let outcome = match config.strategy {
            Strategy::SpecdecVanilla => vanilla_verify(&block, &scores)?,
            Strategy::SpecdecRelaxed => spec_verify(&block, &scores, config.beta, config.tau)?,
            _ => unreachable!("autoregressive strategies handled above"),
        };
        let mut appended = 0;
        for &t in &outcome.emitted {
            out.push(t);
            appended += 1;
            if t == EOS || out.len() == config.max_len {
                break;
            }
        }
        iterations.push(IterationRecord {
            drafted: config.k,
            emitted: appended,
            bifurcation: appended,
            draft_cost: 0.0,
            verify_cost: 0.0,
        });
        outcomes.push(outcome);
    }
    Ok(DecodeResult {
        output: Sequence::new(out).expect("appending stops at first <eos>"),
        iterations,
        outcomes,
        beam_score: None,
    })
}
