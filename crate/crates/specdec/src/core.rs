//! Shared domain types: token ids, vocabularies, sequences, decode
//! configuration, per-iteration accounting, and the deterministic RNG
//! contract used by every randomized component.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Index into a [`Vocabulary`]. Ids are dense and start at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

/// Beginning-of-sequence marker, prepended between source and prefix when
/// conditioning a model.
pub const BOS: TokenId = TokenId(0);
/// End-of-sequence marker. Decoding stops when it is emitted.
pub const EOS: TokenId = TokenId(1);
/// Reserved mask token. Never produced by drafters.
pub const MASK: TokenId = TokenId(2);

/// Number of reserved ids at the bottom of every vocabulary.
pub const RESERVED_TOKENS: usize = 3;
/// Smallest legal vocabulary: the reserved ids plus at least one content symbol.
pub const MIN_VOCAB: usize = RESERVED_TOKENS + 1;

const RESERVED_SYMBOLS: [&str; RESERVED_TOKENS] = ["<bos>", "<eos>", "<mask>"];

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary must hold at least {MIN_VOCAB} symbols, got {got}")]
    TooSmall { got: usize },
    #[error("vocabulary must start with <bos>, <eos>, <mask>; found {found:?}")]
    BadReservedTokens { found: Vec<String> },
    #[error("duplicate symbol {symbol:?} in vocabulary")]
    DuplicateSymbol { symbol: String },
}

/// Closed symbol table. Ids 0..2 are the reserved markers; everything after
/// is a content symbol. Symbols are unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Vocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self, VocabError> {
        if symbols.len() < MIN_VOCAB {
            return Err(VocabError::TooSmall { got: symbols.len() });
        }
        if symbols[..RESERVED_TOKENS] != RESERVED_SYMBOLS {
            return Err(VocabError::BadReservedTokens {
                found: symbols[..RESERVED_TOKENS.min(symbols.len())].to_vec(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s.as_str()) {
                return Err(VocabError::DuplicateSymbol { symbol: s.clone() });
            }
        }
        Ok(Vocabulary { symbols })
    }

    /// Reserved symbols plus `content` in the given order.
    pub fn with_content(content: &[&str]) -> Result<Self, VocabError> {
        let symbols = RESERVED_SYMBOLS
            .iter()
            .map(|s| s.to_string())
            .chain(content.iter().map(|s| s.to_string()))
            .collect();
        Vocabulary::new(symbols)
    }

    /// Synthetic vocabulary of the given total size: reserved ids followed by
    /// `t3`, `t4`, ... content symbols.
    pub fn synthetic(size: usize) -> Result<Self, VocabError> {
        if size < MIN_VOCAB {
            return Err(VocabError::TooSmall { got: size });
        }
        let symbols = RESERVED_SYMBOLS
            .iter()
            .map(|s| s.to_string())
            .chain((RESERVED_TOKENS..size).map(|i| format!("t{i}")))
            .collect();
        Vocabulary::new(symbols)
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id.index()).map(String::as_str)
    }

    pub fn id_of(&self, symbol: &str) -> Option<TokenId> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .map(|i| TokenId(i as u32))
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.symbols.len()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = VocabError;
    fn try_from(symbols: Vec<String>) -> Result<Self, VocabError> {
        Vocabulary::new(symbols)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Vec<String> {
        v.symbols
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SequenceError {
    #[error("<eos> may only appear as the final token (found at offset {at})")]
    EosInMiddle { at: usize },
}

/// Token string. `<eos>` may appear at most once, and only in final position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence {
    tokens: Vec<TokenId>,
}

impl Sequence {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self, SequenceError> {
        if let Some(at) = tokens.iter().take(tokens.len().saturating_sub(1)).position(|&t| t == EOS) {
            return Err(SequenceError::EosInMiddle { at });
        }
        Ok(Sequence { tokens })
    }

    pub fn empty() -> Self {
        Sequence { tokens: Vec::new() }
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<TokenId> {
        self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when the sequence ends with `<eos>`.
    pub fn is_terminated(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// Decoding mode selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ArGreedy,
    ArBeam,
    SpecdecVanilla,
    SpecdecRelaxed,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::ArGreedy,
        Strategy::ArBeam,
        Strategy::SpecdecVanilla,
        Strategy::SpecdecRelaxed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ArGreedy => "ar-greedy",
            Strategy::ArBeam => "ar-beam",
            Strategy::SpecdecVanilla => "specdec-vanilla",
            Strategy::SpecdecRelaxed => "specdec-relaxed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                format!(
                    "unknown strategy {s:?}; expected one of ar-greedy, ar-beam, specdec-vanilla, specdec-relaxed"
                )
            })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("NONPOSITIVE_K: block size k must be at least 1")]
    NonpositiveK,
    #[error("NONPOSITIVE_BETA: acceptance rank beta must be at least 1")]
    NonpositiveBeta,
    #[error("BETA_EXCEEDS_VOCAB: beta = {beta} but vocabulary holds {vocab_size} tokens")]
    BetaExceedsVocab { beta: usize, vocab_size: usize },
    #[error("NEGATIVE_TAU: acceptance gap tau must be >= 0, got {tau}")]
    NegativeTau { tau: f64 },
    #[error("ZERO_MAX_LEN: max_len must be at least 1")]
    ZeroMaxLen,
    #[error("ZERO_BEAM_WIDTH: beam width must be at least 1 for beam search")]
    ZeroBeamWidth,
}

/// Everything a single decode run needs to know besides the models.
///
/// `beta`/`tau` only matter for [`Strategy::SpecdecRelaxed`] and `beam_width`
/// only for [`Strategy::ArBeam`], but all fields are always present so a
/// config can be logged and replayed as one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// Draft block size: tokens proposed per iteration.
    pub k: usize,
    /// Acceptance rank bound: a draft survives if it ranks in the scorer's
    /// top beta candidates.
    pub beta: usize,
    /// Acceptance gap bound: a draft survives if its log-probability is
    /// within tau of the scorer's best.
    pub tau: f64,
    /// Hard cap on generated tokens per sequence (including `<eos>`).
    pub max_len: usize,
    pub strategy: Strategy,
    pub beam_width: usize,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            k: 25,
            beta: 3,
            tau: 1.0,
            max_len: 200,
            strategy: Strategy::SpecdecVanilla,
            beam_width: 5,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn with_strategy(strategy: Strategy) -> Self {
        DecodeConfig {
            strategy,
            ..DecodeConfig::default()
        }
    }
}

/// Checks a config against a vocabulary size, rejecting values the decode
/// loops cannot honor. `tau = NaN` is rejected alongside negative values.
pub fn validate_config(config: &DecodeConfig, vocab_size: usize) -> Result<(), ConfigError> {
    if config.k == 0 {
        return Err(ConfigError::NonpositiveK);
    }
    if config.beta == 0 {
        return Err(ConfigError::NonpositiveBeta);
    }
    if config.beta > vocab_size {
        return Err(ConfigError::BetaExceedsVocab {
            beta: config.beta,
            vocab_size,
        });
    }
    if config.tau.is_nan() || config.tau < 0.0 {
        return Err(ConfigError::NegativeTau { tau: config.tau });
    }
    if config.max_len == 0 {
        return Err(ConfigError::ZeroMaxLen);
    }
    if config.strategy == Strategy::ArBeam && config.beam_width == 0 {
        return Err(ConfigError::ZeroBeamWidth);
    }
    Ok(())
}

/// One draft/verify round (or one autoregressive step) as it was costed.
///
/// `emitted` counts tokens actually appended to the output after end-of-
/// sequence and length truncation, so it can run below the verifier's raw
/// acceptance count on the final iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// Tokens proposed by the drafter this round.
    pub drafted: usize,
    /// Tokens appended to the output this round.
    pub emitted: usize,
    /// Position of the first rejected draft (equals `emitted`).
    pub bifurcation: usize,
    /// Modeled cost charged for drafting.
    pub draft_cost: f64,
    /// Modeled cost charged for scoring/verification.
    pub verify_cost: f64,
}

/// Deterministic RNG factory. Every randomized component draws from a
/// ChaCha8 stream addressed by `(seed, stream_id)`, so concurrent runs and
/// reruns see identical randomness regardless of scheduling. Stream ids are
/// assigned one per sequence.
pub fn rng_stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn vocabulary_requires_reserved_prefix() {
        let err = Vocabulary::new(vec!["a".into(), "b".into(), "c".into(), "d".into()]).unwrap_err();
        assert!(matches!(err, VocabError::BadReservedTokens { .. }));

        let err = Vocabulary::new(vec!["<bos>".into(), "<eos>".into()]).unwrap_err();
        assert_eq!(err, VocabError::TooSmall { got: 2 });

        let v = Vocabulary::with_content(&["a", "b"]).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.symbol(TokenId(3)), Some("a"));
        assert_eq!(v.id_of("b"), Some(TokenId(4)));
        assert_eq!(v.id_of("<eos>"), Some(EOS));
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = Vocabulary::with_content(&["a", "a"]).unwrap_err();
        assert_eq!(err, VocabError::DuplicateSymbol { symbol: "a".into() });
    }

    #[test]
    fn synthetic_vocabulary_is_dense() {
        let v = Vocabulary::synthetic(6).unwrap();
        assert_eq!(v.symbols(), &["<bos>", "<eos>", "<mask>", "t3", "t4", "t5"]);
        assert!(Vocabulary::synthetic(3).is_err());
    }

    #[test]
    fn sequence_rejects_interior_eos() {
        let err = Sequence::new(vec![TokenId(3), EOS, TokenId(4)]).unwrap_err();
        assert_eq!(err, SequenceError::EosInMiddle { at: 1 });

        let ok = Sequence::new(vec![TokenId(3), TokenId(4), EOS]).unwrap();
        assert!(ok.is_terminated());
        assert_eq!(ok.len(), 3);

        let open = Sequence::new(vec![TokenId(3)]).unwrap();
        assert!(!open.is_terminated());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("greedy".parse::<Strategy>().is_err());
        let json = serde_json::to_string(&Strategy::SpecdecRelaxed).unwrap();
        assert_eq!(json, "\"specdec-relaxed\"");
    }

    #[test]
    fn validate_config_rejects_each_bad_field() {
        let base = DecodeConfig::default();
        assert_eq!(validate_config(&base, 100), Ok(()));

        let cfg = DecodeConfig { k: 0, ..base.clone() };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::NonpositiveK));

        let cfg = DecodeConfig { beta: 0, ..base.clone() };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::NonpositiveBeta));

        let cfg = DecodeConfig { beta: 101, ..base.clone() };
        assert_eq!(
            validate_config(&cfg, 100),
            Err(ConfigError::BetaExceedsVocab { beta: 101, vocab_size: 100 })
        );

        let cfg = DecodeConfig { tau: -0.5, ..base.clone() };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::NegativeTau { tau: -0.5 }));

        let cfg = DecodeConfig { tau: f64::NAN, ..base.clone() };
        assert!(matches!(validate_config(&cfg, 100), Err(ConfigError::NegativeTau { .. })));

        let cfg = DecodeConfig { max_len: 0, ..base.clone() };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::ZeroMaxLen));

        let cfg = DecodeConfig {
            strategy: Strategy::ArBeam,
            beam_width: 0,
            ..base.clone()
        };
        assert_eq!(validate_config(&cfg, 100), Err(ConfigError::ZeroBeamWidth));

        // beam_width is ignored outside beam search
        let cfg = DecodeConfig { beam_width: 0, ..base };
        assert_eq!(validate_config(&cfg, 100), Ok(()));
    }

    #[test]
    fn boundary_beta_equal_to_vocab_is_accepted() {
        let cfg = DecodeConfig { beta: 100, ..DecodeConfig::default() };
        assert_eq!(validate_config(&cfg, 100), Ok(()));
    }

    #[test]
    fn rng_stream_is_reproducible() {
        let draws = |seed, stream| -> Vec<u64> {
            let mut rng = rng_stream(seed, stream);
            (0..8).map(|_| rng.random()).collect()
        };
        assert_eq!(draws(42, 0), draws(42, 0));
        assert_ne!(draws(42, 0), draws(42, 1));
        assert_ne!(draws(42, 0), draws(43, 0));
    }

    #[test]
    fn rng_streams_are_order_independent() {
        // Stream 1 yields the same values whether or not stream 0 was used first.
        let mut a = rng_stream(7, 1);
        let direct: Vec<u64> = (0..4).map(|_| a.random()).collect();

        let mut b0 = rng_stream(7, 0);
        let _burn: u64 = b0.random();
        let mut b1 = rng_stream(7, 1);
        let after: Vec<u64> = (0..4).map(|_| b1.random()).collect();
        assert_eq!(direct, after);
    }
}
