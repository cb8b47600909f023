//! Python bindings for the draft-then-verify decoding engine.
//!
//! `Model` wraps the table-backed n-gram scorer; `decode` runs one sequence
//! under any of the four strategies and returns a plain dict. Token ids
//! cross the boundary as integers and symbols as strings; the reserved ids
//! are exported as `BOS`, `EOS`, and `MASK`. Invalid parameters raise
//! `ValueError`, file problems raise `IOError`.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use specdec::{
    compute_tok, fit_ngram, load_corpus, load_model, model_hash, random_model, rng_stream,
    save_model, specdec_decode, CostModel, DecodeConfig, Model, NgramModel, NoisyOracleDrafter,
    SelfRolloutDrafter, Strategy, TokenId, Vocabulary, BOS, EOS, MASK,
};
use specdec::io::scan_corpus_symbols;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_tokens(ids: &[u32], vocab: &Vocabulary) -> PyResult<Vec<TokenId>> {
    for &id in ids {
        if !vocab.contains(TokenId(id)) {
            return Err(PyValueError::new_err(format!(
                "token id {id} is outside the vocabulary (size {})",
                vocab.size()
            )));
        }
    }
    Ok(ids.iter().map(|&id| TokenId(id)).collect())
}

/// Table-backed n-gram language model.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: NgramModel,
}

#[pymethods]
impl PyModel {
    /// Draw a model with Dirichlet-like next-token rows over a synthetic
    /// vocabulary. Deterministic in `seed`.
    #[staticmethod]
    #[pyo3(signature = (vocab_size, order, concentration, seed = 0))]
    fn random(vocab_size: usize, order: usize, concentration: f64, seed: u64) -> PyResult<Self> {
        let inner = random_model(vocab_size, order, concentration, seed).map_err(value_err)?;
        Ok(PyModel { inner })
    }

    /// Fit from a tab-separated corpus file, deriving the vocabulary from
    /// the symbols that appear in it.
    #[staticmethod]
    fn fit(corpus: PathBuf, order: usize, smoothing: f64) -> PyResult<Self> {
        let symbols = scan_corpus_symbols(&corpus).map_err(io_err)?;
        if symbols.is_empty() {
            return Err(PyValueError::new_err(format!(
                "{}: cannot fit a model on zero examples",
                corpus.display()
            )));
        }
        let refs: Vec<&str> = symbols.iter().map(String::as_str).collect();
        let vocab = Vocabulary::with_content(&refs).map_err(value_err)?;
        let pairs = load_corpus(&corpus, &vocab).map_err(io_err)?;
        let inner = fit_ngram(&vocab, &pairs, order, smoothing).map_err(value_err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: load_model(&path).map_err(io_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(io_err)
    }

    /// SHA-256 hex digest of the canonical serialized form.
    fn hash(&self) -> String {
        model_hash(&self.inner)
    }

    fn vocab(&self) -> Vec<String> {
        self.inner.vocab().symbols().to_vec()
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn order(&self) -> usize {
        self.inner.order()
    }

    fn num_contexts(&self) -> usize {
        self.inner.num_contexts()
    }

    fn id_of(&self, symbol: &str) -> PyResult<u32> {
        self.inner
            .vocab()
            .id_of(symbol)
            .map(|t| t.0)
            .ok_or_else(|| PyValueError::new_err(format!("unknown symbol {symbol:?}")))
    }

    fn symbol(&self, id: u32) -> PyResult<String> {
        self.inner
            .vocab()
            .symbol(TokenId(id))
            .map(str::to_owned)
            .ok_or_else(|| {
                PyValueError::new_err(format!("token id {id} is outside the vocabulary"))
            })
    }

    /// Log-probabilities over the next token given `source` and the tokens
    /// generated so far. One entry per vocabulary id.
    fn next_logprobs(&self, source: Vec<u32>, prefix: Vec<u32>) -> PyResult<Vec<f64>> {
        let source = to_tokens(&source, self.inner.vocab())?;
        let prefix = to_tokens(&prefix, self.inner.vocab())?;
        Ok(self
            .inner
            .next_distribution(&source, &prefix)
            .as_slice()
            .to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(vocab_size={}, order={}, contexts={})",
            self.inner.vocab_size(),
            self.inner.order(),
            self.inner.num_contexts()
        )
    }
}

/// Decode one sequence. Returns a dict with the generated token ids under
/// `output`, the round count under `iterations`, the mean tokens emitted
/// per round under `tok`, and the length-normalized hypothesis score under
/// `beam_score` (None except for beam search).
///
/// The draft-then-verify strategies need either `drafter` (a second model,
/// rolled out greedily) or `noisy_oracle` (a corruption probability for a
/// drafter that replays the target's own greedy block with random errors).
#[pyfunction]
#[pyo3(signature = (target, source, strategy = "specdec-vanilla", *, drafter = None,
       noisy_oracle = None, k = 25, beta = 3, tau = 1.0, max_len = 200, beam_width = 5,
       seed = 0))]
#[allow(clippy::too_many_arguments)]
fn decode(
    py: Python<'_>,
    target: &PyModel,
    source: Vec<u32>,
    strategy: &str,
    drafter: Option<&PyModel>,
    noisy_oracle: Option<f64>,
    k: usize,
    beta: usize,
    tau: f64,
    max_len: usize,
    beam_width: usize,
    seed: u64,
) -> PyResult<Py<PyDict>> {
    let strategy: Strategy = strategy.parse().map_err(PyValueError::new_err)?;
    let source = to_tokens(&source, target.inner.vocab())?;
    if drafter.is_some() && noisy_oracle.is_some() {
        return Err(PyValueError::new_err(
            "pass either a drafter model or a noisy-oracle corruption probability, not both",
        ));
    }
    let config = DecodeConfig {
        k,
        beta,
        tau,
        max_len,
        strategy,
        beam_width,
        seed,
    };
    let result = match strategy {
        Strategy::ArGreedy | Strategy::ArBeam => {
            // The autoregressive strategies ignore the drafter slot.
            let mut d = SelfRolloutDrafter::new(&target.inner);
            specdec_decode(&target.inner, &mut d, &source, &config)
        }
        Strategy::SpecdecVanilla | Strategy::SpecdecRelaxed => {
            if let Some(p) = noisy_oracle {
                let mut d = NoisyOracleDrafter::new(&target.inner, p, rng_stream(seed, 0))
                    .map_err(value_err)?;
                specdec_decode(&target.inner, &mut d, &source, &config)
            } else if let Some(m) = drafter {
                if m.inner.vocab_size() != target.inner.vocab_size() {
                    return Err(PyValueError::new_err(format!(
                        "drafter vocabulary (size {}) does not match the target's (size {})",
                        m.inner.vocab_size(),
                        target.inner.vocab_size()
                    )));
                }
                let mut d = SelfRolloutDrafter::new(&m.inner);
                specdec_decode(&target.inner, &mut d, &source, &config)
            } else {
                return Err(PyValueError::new_err(format!(
                    "strategy {strategy} needs a drafter model or a noisy-oracle probability"
                )));
            }
        }
    }
    .map_err(value_err)?;

    let tok = compute_tok(&result.iterations).map_err(value_err)?;
    let dict = PyDict::new(py);
    let output: Vec<u32> = result.output.tokens().iter().map(|t| t.0).collect();
    dict.set_item("output", output)?;
    dict.set_item("iterations", result.iterations.len())?;
    dict.set_item("tok", tok)?;
    dict.set_item("beam_score", result.beam_score)?;
    Ok(dict.unbind())
}

/// Expected tokens emitted per round when a corruption-`p` drafter fills
/// blocks of `k`: (1 - (1-p)^k) / p, continuously extended to `k` at p = 0.
#[pyfunction]
fn expected_accept_noisy_oracle(k: usize, p: f64) -> PyResult<f64> {
    if k == 0 {
        return Err(PyValueError::new_err("block size k must be at least 1"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(PyValueError::new_err(format!(
            "corruption probability {p} is outside [0, 1]"
        )));
    }
    Ok(specdec::expected_accept_noisy_oracle(k, p))
}

/// Modeled wall-clock for emitting `output_len` tokens at `tok` tokens per
/// round, where each round costs one draft pass plus one verify pass.
#[pyfunction]
#[pyo3(signature = (output_len, tok, t_d = 1.0, t_v = 2.0, t_ar = 2.0))]
fn estimate_latency(output_len: usize, tok: f64, t_d: f64, t_v: f64, t_ar: f64) -> PyResult<f64> {
    let costs = CostModel::new(t_d, t_v, t_ar).map_err(value_err)?;
    specdec::estimate_latency(output_len, tok, &costs).map_err(value_err)
}

#[pymodule]
fn specdec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(expected_accept_noisy_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_latency, m)?)?;
    m.add("BOS", BOS.0)?;
    m.add("EOS", EOS.0)?;
    m.add("MASK", MASK.0)?;
    let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
    m.add("STRATEGIES", names)?;
    Ok(())
}
