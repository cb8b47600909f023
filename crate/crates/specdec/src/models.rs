//! Table-backed n-gram language models and the two drafters used by the
//! decode loops.
//!
//! A model of order `n` maps a context (up to the last `n-1` tokens of
//! `source ++ <bos> ++ prefix`) to a full log-probability vector over the
//! vocabulary. Contexts absent from the table fall back to the uniform
//! distribution, so every model is total. Zero probabilities are floored at
//! [`LOGPROB_FLOOR`] instead of negative infinity; every stored vector is
//! normalized so its log-sum-exp sits within 1e-9 of zero.

use crate::core::{rng_stream, Sequence, TokenId, VocabError, Vocabulary, BOS, EOS, MASK};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use std::collections::BTreeMap;
use thiserror::Error;

/// Stand-in for log(0) in stored distributions. Large enough that
/// `exp(LOGPROB_FLOOR)` underflows to exactly 0.0, so floored entries carry
/// no probability mass.
pub const LOGPROB_FLOOR: f64 = -1e9;

/// Normalization slack tolerated for distributions built in process.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

// Entries at or below this are treated as floored (no mass) when
// renormalizing. Real log-probabilities never get anywhere near it.
const FLOOR_THRESHOLD: f64 = LOGPROB_FLOOR / 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("EMPTY_CORPUS: cannot fit a model on zero examples")]
    EmptyCorpus,
    #[error("BAD_TARGET_TERMINATION: target {pair} is empty or does not end with <eos>")]
    BadTargetTermination { pair: usize },
    #[error("model order must be at least 1, got {order}")]
    BadOrder { order: usize },
    #[error("smoothing must be finite and >= 0, got {value}")]
    BadSmoothing { value: f64 },
    #[error("concentration must be finite and > 0, got {value}")]
    BadConcentration { value: f64 },
    #[error("corruption probability must lie in [0, 1], got {p}")]
    BadCorruptionProb { p: f64 },
    #[error("context of length {got} exceeds the order-{order} limit of {limit}")]
    CtxTooLong { got: usize, order: usize, limit: usize },
    #[error("token id {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("distribution for context {ctx:?} has {got} entries, expected {expected}")]
    WrongDistributionLength { ctx: Vec<u32>, got: usize, expected: usize },
    #[error("UNNORMALIZED_DISTRIBUTION: context {ctx:?} has log-sum-exp {lse:e}")]
    Unnormalized { ctx: Vec<u32>, lse: f64 },
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// Numerically stable log(sum(exp(xs))). Floored entries contribute nothing.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Shifts non-floored entries so the vector sums to probability one; floored
/// entries are pinned back to exactly [`LOGPROB_FLOOR`].
fn renormalize(logprobs: &mut [f64]) {
    let lse = log_sum_exp(logprobs);
    debug_assert!(lse.is_finite(), "distribution has no probability mass");
    for x in logprobs.iter_mut() {
        if *x <= FLOOR_THRESHOLD {
            *x = LOGPROB_FLOOR;
        } else {
            *x -= lse;
        }
    }
}

fn uniform_logprobs(vocab_size: usize) -> Vec<f64> {
    vec![-(vocab_size as f64).ln(); vocab_size]
}

/// Log-probability vector over the full vocabulary for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionScores {
    logprobs: Vec<f64>,
}

impl PositionScores {
    pub fn new(logprobs: Vec<f64>) -> Self {
        PositionScores { logprobs }
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn logprob(&self, token: TokenId) -> f64 {
        self.logprobs[token.index()]
    }

    /// Highest-scoring token; ties break toward the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0usize;
        for (i, &x) in self.logprobs.iter().enumerate().skip(1) {
            if x > self.logprobs[best] {
                best = i;
            }
        }
        TokenId(best as u32)
    }

    /// 1-based rank of `token`: 1 + the number of strictly better scores.
    /// Tied scores share the better rank.
    pub fn rank_of(&self, token: TokenId) -> usize {
        let x = self.logprob(token);
        1 + self.logprobs.iter().filter(|&&y| y > x).count()
    }

    /// The `beta`-th largest log-probability (1-based). A draft is in the
    /// top beta exactly when its score is >= this value.
    pub fn kth_logprob(&self, beta: usize) -> f64 {
        assert!(beta >= 1 && beta <= self.logprobs.len(), "beta out of range");
        let mut sorted = self.logprobs.clone();
        sorted.select_nth_unstable_by(beta - 1, |a, b| b.total_cmp(a));
        sorted[beta - 1]
    }

    pub fn log_sum_exp(&self) -> f64 {
        log_sum_exp(&self.logprobs)
    }
}

/// Fixed-size block of proposed tokens handed from a drafter to a verifier.
/// Always exactly `k` long; positions after a proposed `<eos>` are padded
/// with `<eos>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftBlock {
    tokens: Vec<TokenId>,
}

impl DraftBlock {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        DraftBlock { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn get(&self, i: usize) -> TokenId {
        self.tokens[i]
    }
}

/// Conditional next-token scorer. Implementations must be deterministic:
/// the same `(source, prefix)` always yields the same distribution.
pub trait Model {
    fn vocab(&self) -> &Vocabulary;

    /// Distribution over the next token given `source ++ <bos> ++ prefix`.
    fn next_distribution(&self, source: &[TokenId], prefix: &[TokenId]) -> PositionScores;

    fn vocab_size(&self) -> usize {
        self.vocab().size()
    }

    /// Scores every block position in one batched verification event:
    /// position `i` is conditioned on the prefix plus the first `i` drafted
    /// tokens. The loop below is the reference schedule; cost accounting
    /// treats the whole call as a single verifier pass.
    fn score_positions_parallel(
        &self,
        source: &[TokenId],
        prefix: &[TokenId],
        block: &DraftBlock,
    ) -> Vec<PositionScores> {
        let mut ctx = prefix.to_vec();
        let mut scores = Vec::with_capacity(block.len());
        for i in 0..block.len() {
            scores.push(self.next_distribution(source, &ctx));
            if i + 1 < block.len() {
                ctx.push(block.get(i));
            }
        }
        scores
    }
}

/// Exact-context n-gram model: a table from contexts (length <= order-1) to
/// full log-probability vectors. Total over all inputs via the uniform
/// fallback for unknown contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    vocab: Vocabulary,
    order: usize,
    table: BTreeMap<Vec<TokenId>, Vec<f64>>,
}

impl NgramModel {
    pub fn new(
        vocab: Vocabulary,
        order: usize,
        table: BTreeMap<Vec<TokenId>, Vec<f64>>,
    ) -> Result<Self, ModelError> {
        NgramModel::with_tolerance(vocab, order, table, NORMALIZATION_TOLERANCE)
    }

    /// Like [`NgramModel::new`] but with a caller-chosen normalization gate.
    /// File loading uses a looser 1e-6 tolerance for hand-authored models.
    pub fn with_tolerance(
        vocab: Vocabulary,
        order: usize,
        table: BTreeMap<Vec<TokenId>, Vec<f64>>,
        tolerance: f64,
    ) -> Result<Self, ModelError> {
        if order == 0 {
            return Err(ModelError::BadOrder { order });
        }
        let v = vocab.size();
        for (ctx, logprobs) in &table {
            if ctx.len() > order - 1 {
                return Err(ModelError::CtxTooLong {
                    got: ctx.len(),
                    order,
                    limit: order - 1,
                });
            }
            if let Some(bad) = ctx.iter().find(|t| !vocab.contains(**t)) {
                return Err(ModelError::TokenOutOfRange {
                    token: bad.0,
                    vocab_size: v,
                });
            }
            if logprobs.len() != v {
                return Err(ModelError::WrongDistributionLength {
                    ctx: ctx.iter().map(|t| t.0).collect(),
                    got: logprobs.len(),
                    expected: v,
                });
            }
            let lse = log_sum_exp(logprobs);
            if lse.is_nan() || lse.abs() > tolerance {
                return Err(ModelError::Unnormalized {
                    ctx: ctx.iter().map(|t| t.0).collect(),
                    lse,
                });
            }
        }
        Ok(NgramModel { vocab, order, table })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_contexts(&self) -> usize {
        self.table.len()
    }

    /// Table entries in canonical (sorted) context order.
    pub fn entries(&self) -> impl Iterator<Item = (&[TokenId], &[f64])> {
        self.table.iter().map(|(c, p)| (c.as_slice(), p.as_slice()))
    }

    /// Conditioning window: the last `order - 1` tokens of
    /// `source ++ <bos> ++ prefix` (fewer when the stream is shorter).
    pub fn context_for(&self, source: &[TokenId], prefix: &[TokenId]) -> Vec<TokenId> {
        let window = self.order - 1;
        let mut ctx: Vec<TokenId> = Vec::with_capacity(window);
        // Walk the conceptual stream backwards; no need to materialize it.
        for &t in prefix.iter().rev() {
            if ctx.len() == window {
                break;
            }
            ctx.push(t);
        }
        if ctx.len() < window {
            ctx.push(BOS);
        }
        for &t in source.iter().rev() {
            if ctx.len() == window {
                break;
            }
            ctx.push(t);
        }
        ctx.reverse();
        ctx
    }

    /// Rebuilds the model with `token` made impossible everywhere: its entry
    /// is floored and the remaining mass renormalized. Handy for test
    /// corpora that must not terminate early. A distribution whose entire
    /// mass sat on `token` becomes uniform over the other tokens.
    pub fn suppress_token(&self, token: TokenId) -> NgramModel {
        assert!(self.vocab.contains(token), "token outside vocabulary");
        let v = self.vocab.size();
        let mut table = BTreeMap::new();
        for (ctx, logprobs) in &self.table {
            let mut lp = logprobs.clone();
            lp[token.index()] = LOGPROB_FLOOR;
            if lp.iter().all(|&x| x <= FLOOR_THRESHOLD) {
                let fill = -((v - 1) as f64).ln();
                for (i, x) in lp.iter_mut().enumerate() {
                    *x = if i == token.index() { LOGPROB_FLOOR } else { fill };
                }
            } else {
                renormalize(&mut lp);
            }
            table.insert(ctx.clone(), lp);
        }
        NgramModel {
            vocab: self.vocab.clone(),
            order: self.order,
            table,
        }
    }

    /// Rebuilds the model with independent Gumbel noise of the given scale
    /// added to every live log-probability, then renormalizes. Produces a
    /// deterministic "near miss" of the original model: argmaxes mostly
    /// agree for small scales and drift apart as the scale grows. Used to
    /// build imperfect drafters from a target model.
    pub fn perturb(&self, noise_scale: f64, seed: u64) -> NgramModel {
        assert!(noise_scale >= 0.0, "noise scale must be non-negative");
        let mut rng = rng_stream(seed, 0);
        let mut table = BTreeMap::new();
        for (ctx, logprobs) in &self.table {
            let mut lp = logprobs.clone();
            for x in lp.iter_mut() {
                let u: f64 = rng.random::<f64>().max(1e-300);
                let gumbel = -(-u.ln()).ln();
                if *x > FLOOR_THRESHOLD {
                    *x += noise_scale * gumbel;
                }
            }
            renormalize(&mut lp);
            table.insert(ctx.clone(), lp);
        }
        NgramModel {
            vocab: self.vocab.clone(),
            order: self.order,
            table,
        }
    }
}

impl Model for NgramModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, source: &[TokenId], prefix: &[TokenId]) -> PositionScores {
        debug_assert!(
            source.iter().chain(prefix).all(|t| self.vocab.contains(*t)),
            "conditioning tokens outside vocabulary"
        );
        let ctx = self.context_for(source, prefix);
        match self.table.get(&ctx) {
            Some(lp) => PositionScores::new(lp.clone()),
            None => PositionScores::new(uniform_logprobs(self.vocab.size())),
        }
    }
}

/// Greedy argmax rollout: appends up to `steps` tokens to `prefix`,
/// stopping once `<eos>` is produced. Returns only the appended tokens.
pub fn greedy_rollout<M: Model + ?Sized>(
    model: &M,
    source: &[TokenId],
    prefix: &[TokenId],
    steps: usize,
) -> Vec<TokenId> {
    let mut ctx = prefix.to_vec();
    let mut out = Vec::new();
    for _ in 0..steps {
        let next = model.next_distribution(source, &ctx).argmax();
        out.push(next);
        if next == EOS {
            break;
        }
        ctx.push(next);
    }
    out
}

/// Greedy self-rollout drafting: exactly `k` tokens, each conditioned on the
/// drafter's own previous proposals, padded with `<eos>` once the rollout
/// terminates.
pub fn draft_block_selfrollout<M: Model + ?Sized>(
    model: &M,
    source: &[TokenId],
    prefix: &[TokenId],
    k: usize,
) -> DraftBlock {
    let mut tokens = greedy_rollout(model, source, prefix, k);
    tokens.resize(k, EOS);
    DraftBlock::new(tokens)
}

/// Proposes the next `k` tokens given the output so far.
pub trait Drafter {
    fn draft_block(&mut self, source: &[TokenId], prefix: &[TokenId], k: usize) -> DraftBlock;
}

/// Drafter that greedily rolls out its own model.
pub struct SelfRolloutDrafter<'a, M: Model + ?Sized> {
    model: &'a M,
}

impl<'a, M: Model + ?Sized> SelfRolloutDrafter<'a, M> {
    pub fn new(model: &'a M) -> Self {
        SelfRolloutDrafter { model }
    }
}

impl<M: Model + ?Sized> Drafter for SelfRolloutDrafter<'_, M> {
    fn draft_block(&mut self, source: &[TokenId], prefix: &[TokenId], k: usize) -> DraftBlock {
        draft_block_selfrollout(self.model, source, prefix, k)
    }
}

/// Synthetic drafter with a dialable error rate: it takes the target's own
/// greedy block and corrupts each position independently with probability
/// `p`, replacing the token with a uniform draw over the vocabulary minus
/// the greedy token and `<mask>`. At `p = 0` it is a perfect drafter; at
/// `p = 1` every proposal is wrong.
pub struct NoisyOracleDrafter<'a, M: Model + ?Sized> {
    target: &'a M,
    p: f64,
    rng: ChaCha8Rng,
}

impl<'a, M: Model + ?Sized> NoisyOracleDrafter<'a, M> {
    pub fn new(target: &'a M, p: f64, rng: ChaCha8Rng) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::BadCorruptionProb { p });
        }
        Ok(NoisyOracleDrafter { target, p, rng })
    }

    pub fn corruption_probability(&self) -> f64 {
        self.p
    }

    fn corrupt(&mut self, clean: TokenId) -> TokenId {
        let v = self.target.vocab_size() as u32;
        let mut excluded = [clean.0, MASK.0];
        excluded.sort_unstable();
        let distinct = if excluded[0] == excluded[1] { 1 } else { 2 };
        let mut id = self.rng.random_range(0..v - distinct as u32);
        for &e in excluded.iter().take(distinct) {
            if id >= e {
                id += 1;
            }
        }
        TokenId(id)
    }
}

impl<M: Model + ?Sized> Drafter for NoisyOracleDrafter<'_, M> {
    fn draft_block(&mut self, source: &[TokenId], prefix: &[TokenId], k: usize) -> DraftBlock {
        let clean = draft_block_selfrollout(self.target, source, prefix, k);
        let mut tokens = Vec::with_capacity(k);
        for &t in clean.as_slice() {
            // One coin per position even at p = 0 or 1 keeps the draw count
            // (and thus downstream randomness) independent of outcomes.
            let flip: f64 = self.rng.random();
            if flip < self.p {
                tokens.push(self.corrupt(t));
            } else {
                tokens.push(t);
            }
        }
        DraftBlock::new(tokens)
    }
}

/// Maximum-likelihood n-gram fit with additive smoothing.
///
/// For every target position the observed context is the same window
/// [`NgramModel::context_for`] will use at decode time, so the fitted table
/// covers exactly the contexts the model can encounter on its training
/// distribution. With `smoothing = 0`, next tokens unseen in a seen context
/// are floored; any positive smoothing keeps every token live.
pub fn fit_ngram(
    vocab: &Vocabulary,
    pairs: &[(Sequence, Sequence)],
    order: usize,
    smoothing: f64,
) -> Result<NgramModel, ModelError> {
    if order == 0 {
        return Err(ModelError::BadOrder { order });
    }
    if !smoothing.is_finite() || smoothing < 0.0 {
        return Err(ModelError::BadSmoothing { value: smoothing });
    }
    if pairs.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let v = vocab.size();
    // Empty-table model reused purely for its context windowing.
    let probe = NgramModel {
        vocab: vocab.clone(),
        order,
        table: BTreeMap::new(),
    };
    let mut counts: BTreeMap<Vec<TokenId>, Vec<u64>> = BTreeMap::new();
    for (i, (source, target)) in pairs.iter().enumerate() {
        if !target.is_terminated() {
            return Err(ModelError::BadTargetTermination { pair: i });
        }
        if let Some(bad) = source
            .tokens()
            .iter()
            .chain(target.tokens())
            .find(|t| !vocab.contains(**t))
        {
            return Err(ModelError::TokenOutOfRange {
                token: bad.0,
                vocab_size: v,
            });
        }
        let target_tokens = target.tokens();
        for j in 0..target_tokens.len() {
            let ctx = probe.context_for(source.tokens(), &target_tokens[..j]);
            counts.entry(ctx).or_insert_with(|| vec![0; v])[target_tokens[j].index()] += 1;
        }
    }
    let mut table = BTreeMap::new();
    for (ctx, c) in counts {
        let total: u64 = c.iter().sum();
        let denom = total as f64 + smoothing * v as f64;
        let mut lp: Vec<f64> = c
            .iter()
            .map(|&n| {
                let p = (n as f64 + smoothing) / denom;
                if p > 0.0 {
                    p.ln()
                } else {
                    LOGPROB_FLOOR
                }
            })
            .collect();
        renormalize(&mut lp);
        table.insert(ctx, lp);
    }
    NgramModel::new(vocab.clone(), order, table)
}

/// Synthetic model: every context of length 1..order-1 (the empty context
/// for order 1) gets an independent symmetric-Dirichlet draw. Sampling runs
/// in log space via the shape-boost identity
/// `Gamma(a) ~ Gamma(a + 1) * U^(1/a)`, so tiny concentrations (spiky,
/// near-deterministic models) do not underflow. Deterministic in `seed`.
pub fn random_model(
    vocab_size: usize,
    order: usize,
    concentration: f64,
    seed: u64,
) -> Result<NgramModel, ModelError> {
    if order == 0 {
        return Err(ModelError::BadOrder { order });
    }
    if !concentration.is_finite() || concentration <= 0.0 {
        return Err(ModelError::BadConcentration {
            value: concentration,
        });
    }
    let vocab = Vocabulary::synthetic(vocab_size)?;
    let mut rng = rng_stream(seed, 0);
    let gamma = Gamma::new(concentration + 1.0, 1.0).expect("valid gamma shape");
    let mut table = BTreeMap::new();
    for ctx in enumerate_contexts(vocab_size, order) {
        let mut lp: Vec<f64> = (0..vocab_size)
            .map(|_| {
                let boost: f64 = gamma.sample(&mut rng).max(1e-300);
                let u: f64 = rng.random::<f64>().max(1e-300);
                boost.ln() + u.ln() / concentration
            })
            .collect();
        renormalize(&mut lp);
        table.insert(ctx, lp);
    }
    NgramModel::new(vocab, order, table)
}

/// All contexts the table materializes, in canonical (length, then
/// lexicographic) order: lengths 1..=order-1, or just the empty context for
/// order 1.
fn enumerate_contexts(vocab_size: usize, order: usize) -> Vec<Vec<TokenId>> {
    if order == 1 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for len in 1..order {
        let mut idx = vec![0usize; len];
        loop {
            out.push(idx.iter().map(|&i| TokenId(i as u32)).collect());
            let mut pos = len;
            let mut carried = true;
            while carried && pos > 0 {
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < vocab_size {
                    carried = false;
                } else {
                    idx[pos] = 0;
                }
            }
            if carried {
                break; // most significant digit wrapped: tier exhausted
            }
        }
    }
    out
}
