//! Command-line workbench around the specdec library: decode runs, block-size
//! and verification-threshold sweeps, synthetic model generation, corpus
//! fitting, and a four-strategy comparison table.
//!
//! Exit codes: 0 on success, 2 for invalid flags or parameter combinations,
//! 1 for IO and data errors discovered while running.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use specdec::bench::{
    run_corpus, sweep_block_size, sweep_verification, BenchError, CostModel, DrafterSpec,
};
use specdec::core::{ConfigError, DecodeConfig, Sequence, Strategy, Vocabulary};
use specdec::decode::DecodeError;
use specdec::io::{
    load_corpus, load_model, model_hash, save_model, scan_corpus_symbols, write_report,
    write_table, FileError,
};
use specdec::models::{fit_ngram, random_model, Model, ModelError, NgramModel};

#[derive(Parser)]
#[command(
    name = "specdec",
    version,
    about = "Draft-then-verify decoding workbench for n-gram language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a corpus under one strategy and summarize throughput.
    Run(RunArgs),
    /// Rerun one decode setup across several block sizes.
    SweepK(SweepKArgs),
    /// Grid-sweep the relaxed-verification thresholds beta and tau.
    SweepVerify(SweepVerifyArgs),
    /// Sample a synthetic model and save it as canonical JSON.
    GenModel(GenModelArgs),
    /// Fit a model on a tab-separated corpus and save it.
    Fit(FitArgs),
    /// Run all four strategies on one corpus and tabulate them.
    Compare(CompareArgs),
}

/// Flags shared by every subcommand that decodes a corpus.
#[derive(Args)]
struct DecodeFlags {
    /// Target model file (canonical JSON).
    #[arg(long, value_name = "PATH")]
    target: PathBuf,

    /// Drafter model file, proposing blocks by greedy self-rollout.
    #[arg(long, value_name = "PATH", conflicts_with = "noisy_oracle")]
    drafter: Option<PathBuf>,

    /// Draft with the target's own greedy chain, corrupting each position
    /// with this probability (builds the drafter in-process, no file).
    #[arg(long, value_name = "P")]
    noisy_oracle: Option<f64>,

    /// Corpus file: one "source<TAB>target" pair per line.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,

    /// Tokens drafted per round.
    #[arg(long, default_value_t = 25)]
    k: usize,

    /// Rank threshold for relaxed verification.
    #[arg(long, default_value_t = 3)]
    beta: usize,

    /// Log-probability gap threshold for relaxed verification.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,

    /// Hard cap on tokens emitted per sequence.
    #[arg(long, default_value_t = 200)]
    max_len: usize,

    /// Beam width for the ar-beam strategy.
    #[arg(long, default_value_t = 5)]
    beam_width: usize,

    /// Seed for every random choice in the run.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Modeled per-round costs as a comma triple "td,tv,tar".
    #[arg(long, value_name = "TD,TV,TAR", default_value = "1,2,2", value_parser = parse_costs)]
    costs: CostModel,

    /// Worker threads across sequences; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    decode: DecodeFlags,

    /// Decoding strategy: ar-greedy, ar-beam, specdec-vanilla, specdec-relaxed.
    #[arg(long, default_value = "specdec-vanilla", value_parser = parse_strategy)]
    strategy: Strategy,

    /// Write the full run report (JSON) here.
    #[arg(long, value_name = "PATH")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepKArgs {
    #[command(flatten)]
    decode: DecodeFlags,

    /// Decoding strategy to sweep (a draft-then-verify one to be useful).
    #[arg(long, default_value = "specdec-vanilla", value_parser = parse_strategy)]
    strategy: Strategy,

    /// Comma-separated block sizes to evaluate.
    #[arg(long, value_name = "K1,K2,...", value_delimiter = ',', required = true)]
    k_list: Vec<usize>,

    /// Output table (CSV): one row per block size.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepVerifyArgs {
    #[command(flatten)]
    decode: DecodeFlags,

    /// Comma-separated rank thresholds (grid rows).
    #[arg(long, value_name = "B1,B2,...", value_delimiter = ',', required = true)]
    beta_list: Vec<usize>,

    /// Comma-separated gap thresholds (grid columns).
    #[arg(long, value_name = "T1,T2,...", value_delimiter = ',', required = true)]
    tau_list: Vec<f64>,

    /// Output table (CSV): one row per grid cell, betas outer, taus inner.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct GenModelArgs {
    /// Total vocabulary size, including the three reserved symbols.
    #[arg(long)]
    vocab_size: usize,

    /// Model order (conditions on the last order-1 tokens).
    #[arg(long)]
    order: usize,

    /// Dirichlet concentration; small values give near-deterministic rows.
    #[arg(long)]
    concentration: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Where to save the model (canonical JSON).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Corpus of "source<TAB>target" lines to count from.
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,

    /// Model order (conditions on the last order-1 tokens).
    #[arg(long)]
    order: usize,

    /// Additive smoothing pseudo-count per vocabulary entry.
    #[arg(long)]
    smoothing: f64,

    /// Where to save the fitted model (canonical JSON).
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    decode: DecodeFlags,

    /// Optional CSV with one row per strategy.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// An error already sorted by exit code: 2 for bad parameters, 1 for
/// everything that goes wrong while doing the work.
enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::EmptyCorpus
            | ModelError::BadOrder { .. }
            | ModelError::BadSmoothing { .. }
            | ModelError::BadConcentration { .. }
            | ModelError::BadCorruptionProb { .. }
            | ModelError::Vocab(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::MissingDrafter { .. }
            | BenchError::EmptyCorpus
            | BenchError::BadCosts { .. } => CliError::Usage(e.to_string()),
            BenchError::Decode(DecodeError::Config(c)) => CliError::from(c),
            BenchError::Decode(DecodeError::BadHyperparams { .. }) => {
                CliError::Usage(e.to_string())
            }
            BenchError::Model(m) => CliError::from(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn parse_costs(s: &str) -> Result<CostModel, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!(
            "expected three comma-separated values \"td,tv,tar\", got \"{s}\""
        ));
    }
    let mut v = [0.0f64; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| format!("bad cost \"{part}\": {e}"))?;
    }
    CostModel::new(v[0], v[1], v[2]).map_err(|e| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::SweepK(args) => cmd_sweep_k(args),
        Command::SweepVerify(args) => cmd_sweep_verify(args),
        Command::GenModel(args) => cmd_gen_model(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Loads the target model and the corpus encoded against its vocabulary.
fn load_inputs(flags: &DecodeFlags) -> Result<(NgramModel, Vec<(Sequence, Sequence)>), CliError> {
    let target = load_model(&flags.target)?;
    let corpus = load_corpus(&flags.input, target.vocab())?;
    Ok((target, corpus))
}

/// Builds the drafter, if any, from the mutually exclusive drafter flags.
fn drafter_spec(flags: &DecodeFlags) -> Result<Option<DrafterSpec>, CliError> {
    if let Some(path) = &flags.drafter {
        return Ok(Some(DrafterSpec::SelfRollout(load_model(path)?)));
    }
    if let Some(p) = flags.noisy_oracle {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::Usage(format!(
                "--noisy-oracle: probability {p} is outside [0, 1]"
            )));
        }
        return Ok(Some(DrafterSpec::NoisyOracle { p }));
    }
    Ok(None)
}

fn decode_config(flags: &DecodeFlags, strategy: Strategy) -> DecodeConfig {
    DecodeConfig {
        k: flags.k,
        beta: flags.beta,
        tau: flags.tau,
        max_len: flags.max_len,
        strategy,
        beam_width: flags.beam_width,
        seed: flags.seed,
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (target, corpus) = load_inputs(&args.decode)?;
    let drafter = drafter_spec(&args.decode)?;
    let config = decode_config(&args.decode, args.strategy);
    let report = run_corpus(
        &target,
        drafter.as_ref(),
        &corpus,
        &config,
        &args.decode.costs,
        args.decode.jobs,
    )?;
    if let Some(path) = &args.report {
        write_report(&report, path)?;
    }
    eprintln!("# wall_clock_seconds={:.3}", report.wall_clock_seconds);
    println!(
        "tok={:.6} speedup={:.6}",
        report.aggregate.mean_tok, report.aggregate.speedup
    );
    Ok(())
}

fn cmd_sweep_k(args: SweepKArgs) -> Result<(), CliError> {
    let (target, corpus) = load_inputs(&args.decode)?;
    let drafter = drafter_spec(&args.decode)?;
    let config = decode_config(&args.decode, args.strategy);
    let rows = sweep_block_size(
        &target,
        drafter.as_ref(),
        &corpus,
        &args.k_list,
        &config,
        &args.decode.costs,
        args.decode.jobs,
    )?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.k.to_string(),
                format!("{:.6}", r.mean_tok),
                format!("{:.6}", r.speedup),
            ]
        })
        .collect();
    write_table(&["k", "tok", "speedup"], &table, &args.out)?;
    for r in &rows {
        println!("k={} tok={:.6} speedup={:.6}", r.k, r.mean_tok, r.speedup);
    }
    Ok(())
}

fn cmd_sweep_verify(args: SweepVerifyArgs) -> Result<(), CliError> {
    let (target, corpus) = load_inputs(&args.decode)?;
    let drafter = drafter_spec(&args.decode)?;
    let config = decode_config(&args.decode, Strategy::SpecdecRelaxed);
    let cells = sweep_verification(
        &target,
        drafter.as_ref(),
        &corpus,
        &args.beta_list,
        &args.tau_list,
        &config,
        &args.decode.costs,
        args.decode.jobs,
    )?;
    let table: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            vec![
                c.beta.to_string(),
                format!("{}", c.tau),
                format!("{:.6}", c.mean_tok),
                format!("{:.6}", c.speedup),
                format!("{:.6}", c.divergence_rate),
            ]
        })
        .collect();
    write_table(&["beta", "tau", "tok", "speedup", "divergence"], &table, &args.out)?;
    for c in &cells {
        println!(
            "beta={} tau={} tok={:.6} speedup={:.6} divergence={:.6}",
            c.beta, c.tau, c.mean_tok, c.speedup, c.divergence_rate
        );
    }
    Ok(())
}

fn cmd_gen_model(args: GenModelArgs) -> Result<(), CliError> {
    let model = random_model(args.vocab_size, args.order, args.concentration, args.seed)?;
    save_model(&model, &args.out)?;
    println!(
        "vocab={} order={} contexts={} hash={}",
        model.vocab().size(),
        model.order(),
        model.num_contexts(),
        model_hash(&model)
    );
    Ok(())
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let symbols = scan_corpus_symbols(&args.corpus)?;
    if symbols.is_empty() {
        return Err(CliError::Usage(format!(
            "--corpus {}: {}",
            args.corpus.display(),
            ModelError::EmptyCorpus
        )));
    }
    let refs: Vec<&str> = symbols.iter().map(String::as_str).collect();
    let vocab = Vocabulary::with_content(&refs).map_err(ModelError::from)?;
    let pairs = load_corpus(&args.corpus, &vocab)?;
    let model = fit_ngram(&vocab, &pairs, args.order, args.smoothing)?;
    save_model(&model, &args.out)?;
    println!(
        "vocab={} order={} contexts={} hash={}",
        model.vocab().size(),
        model.order(),
        model.num_contexts(),
        model_hash(&model)
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let (target, corpus) = load_inputs(&args.decode)?;
    let drafter = drafter_spec(&args.decode)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for strategy in Strategy::ALL {
        let config = decode_config(&args.decode, strategy);
        let report = run_corpus(
            &target,
            drafter.as_ref(),
            &corpus,
            &config,
            &args.decode.costs,
            args.decode.jobs,
        )?;
        println!(
            "strategy={} tok={:.6} speedup={:.6} divergence={:.6}",
            strategy,
            report.aggregate.mean_tok,
            report.aggregate.speedup,
            report.aggregate.divergence_rate
        );
        rows.push(vec![
            strategy.to_string(),
            format!("{:.6}", report.aggregate.mean_tok),
            format!("{:.6}", report.aggregate.speedup),
            format!("{:.6}", report.aggregate.divergence_rate),
        ]);
    }
    if let Some(path) = &args.out {
        write_table(&["strategy", "tok", "speedup", "divergence"], &rows, path)?;
    }
    Ok(())
}
