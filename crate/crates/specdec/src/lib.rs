//! Draft-then-verify speculative decoding on table-backed n-gram models.
//!
//! A drafter proposes a block of `k` tokens, the target model scores every
//! block position in one batched pass, and a verifier keeps the longest
//! usable prefix. Two verifiers are provided: the strict one that replays
//! greedy decoding exactly, and a relaxed one that also accepts drafts the
//! target ranks highly (top-beta) and scores closely (within tau of the
//! best). The [`bench`] module turns iteration traces into throughput and
//! modeled-latency numbers; [`io`] pins the on-disk model, corpus, and
//! report formats.

pub mod bench;
pub mod core;
pub mod decode;
pub mod io;
pub mod models;

pub use crate::core::{
    rng_stream, validate_config, ConfigError, DecodeConfig, IterationRecord, Sequence,
    SequenceError, Strategy, TokenId, VocabError, Vocabulary, BOS, EOS, MASK,
};
pub use bench::{
    compute_tok, estimate_latency, expected_accept_noisy_oracle, run_corpus, speedup_histogram,
    sweep_block_size, sweep_verification, BenchError, CostModel, DrafterSpec, HistogramBucket,
    RunReport, SequenceReport,
};
pub use decode::{
    ar_beam_decode, ar_greedy_decode, find_bifurcation, spec_verify, specdec_decode,
    vanilla_verify, DecodeError, DecodeResult, PositionDecision, VerifyOutcome,
};
pub use io::{
    load_corpus, load_model, load_report, model_hash, save_model, write_report, write_table,
    FileError, MODEL_FORMAT_TAG,
};
pub use models::{
    draft_block_selfrollout, fit_ngram, greedy_rollout, random_model, DraftBlock, Drafter, Model,
    ModelError, NgramModel, NoisyOracleDrafter, PositionScores, SelfRolloutDrafter,
};
