//! End-to-end tests against the compiled `specdec` binary: stdout grammar,
//! exit codes, file outputs, and the documented cross-subcommand identities.

mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::{exit_code, kv_get, run, run_ok, stdout_str};
use tempfile::TempDir;

/// Generates a target model, a separate drafter model, and a small corpus.
struct Fixture {
    _dir: TempDir,
    target: PathBuf,
    drafter: PathBuf,
    corpus: PathBuf,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = TempDir::new().expect("tempdir");
        let target = dir.path().join("target.json");
        let drafter = dir.path().join("drafter.json");
        let corpus = dir.path().join("corpus.tsv");
        run_ok(&[
            "gen-model",
            "--vocab-size",
            "10",
            "--order",
            "2",
            "--concentration",
            "0.5",
            "--seed",
            "11",
            "--out",
            target.to_str().unwrap(),
        ]);
        run_ok(&[
            "gen-model",
            "--vocab-size",
            "10",
            "--order",
            "2",
            "--concentration",
            "0.5",
            "--seed",
            "12",
            "--out",
            drafter.to_str().unwrap(),
        ]);
        let lines = [
            "t3 t4\tt5 t6 t7 t8",
            "t5\tt9 t3 t4",
            "\tt6 t7",
            "t9 t8 t7\tt3",
            "t4 t4\tt8 t9 t5 t6 t3",
            "t6\tt7 t7 t4",
        ];
        fs::write(&corpus, lines.join("\n")).expect("write corpus");
        Fixture {
            _dir: dir,
            target,
            drafter,
            corpus,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self._dir.path().join(name)
    }

    fn target(&self) -> &str {
        self.target.to_str().unwrap()
    }

    fn drafter(&self) -> &str {
        self.drafter.to_str().unwrap()
    }

    fn corpus(&self) -> &str {
        self.corpus.to_str().unwrap()
    }
}

#[test]
fn run_prints_summary_and_repeats_byte_identically() {
    let fx = Fixture::new();
    let r1 = fx.path("a.json");
    let r2 = fx.path("b.json");
    let args = |report: &Path| {
        vec![
            "run".to_string(),
            "--target".into(),
            fx.target().into(),
            "--drafter".into(),
            fx.drafter().into(),
            "--input".into(),
            fx.corpus().into(),
            "--strategy".into(),
            "specdec-vanilla".into(),
            "--k".into(),
            "5".into(),
            "--max-len".into(),
            "30".into(),
            "--report".into(),
            report.to_str().unwrap().into(),
        ]
    };
    let out1 = run_ok(&args(&r1).iter().map(String::as_str).collect::<Vec<_>>());
    let out2 = run_ok(&args(&r2).iter().map(String::as_str).collect::<Vec<_>>());

    let line = stdout_str(&out1);
    assert_eq!(line.lines().count(), 1, "one summary line, got {line:?}");
    let tok = kv_get(&line, "tok");
    let speedup = kv_get(&line, "speedup");
    assert!(tok.parse::<f64>().is_ok(), "tok not a float: {tok:?}");
    assert!(
        speedup.parse::<f64>().is_ok(),
        "speedup not a float: {speedup:?}"
    );

    assert_eq!(stdout_str(&out1), stdout_str(&out2));
    let bytes1 = fs::read(&r1).unwrap();
    let bytes2 = fs::read(&r2).unwrap();
    assert!(!bytes1.is_empty());
    assert_eq!(bytes1, bytes2, "reports differ between identical runs");
}

#[test]
fn parallel_jobs_do_not_change_the_report() {
    let fx = Fixture::new();
    let r1 = fx.path("seq.json");
    let r4 = fx.path("par.json");
    for (jobs, report) in [("1", &r1), ("4", &r4)] {
        run_ok(&[
            "run",
            "--target",
            fx.target(),
            "--noisy-oracle",
            "0.3",
            "--input",
            fx.corpus(),
            "--k",
            "8",
            "--max-len",
            "40",
            "--seed",
            "5",
            "--jobs",
            jobs,
            "--report",
            report.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        fs::read(&r1).unwrap(),
        fs::read(&r4).unwrap(),
        "--jobs 4 must reproduce --jobs 1 exactly"
    );
}

#[test]
fn perfect_drafter_turns_one_round_per_sequence() {
    let fx = Fixture::new();
    let one_line = fx.path("one.tsv");
    fs::write(&one_line, "t3 t4\tt5 t6 t7 t8\n").unwrap();
    let fitted = fx.path("fitted.json");
    let fit_out = run_ok(&[
        "fit",
        "--corpus",
        one_line.to_str().unwrap(),
        "--order",
        "2",
        "--smoothing",
        "0",
        "--out",
        fitted.to_str().unwrap(),
    ]);
    let fit_line = stdout_str(&fit_out);
    assert_eq!(kv_get(&fit_line, "vocab"), "9");
    assert_eq!(kv_get(&fit_line, "order"), "2");

    // Drafting with the target itself: the whole 5-token chain (4 tokens plus
    // the terminator) is accepted in a single round. Baseline 5*2=10, one
    // draft-verify round costs 1+2=3.
    let report = fx.path("perfect.json");
    let out = run_ok(&[
        "run",
        "--target",
        fitted.to_str().unwrap(),
        "--drafter",
        fitted.to_str().unwrap(),
        "--input",
        one_line.to_str().unwrap(),
        "--k",
        "5",
        "--max-len",
        "30",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(stdout_str(&out), "tok=5.000000 speedup=3.333333\n");

    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["aggregate"]["divergence_rate"], 0.0);
    assert_eq!(parsed["aggregate"]["mean_tok"], 5.0);
    assert_eq!(parsed["strategy"], "specdec-vanilla");
    assert_eq!(parsed["config"]["k"], 5);
}

#[test]
fn sweep_k_single_value_matches_run_aggregates() {
    let fx = Fixture::new();
    let table = fx.path("sweep.csv");
    let sweep = run_ok(&[
        "sweep-k",
        "--target",
        fx.target(),
        "--drafter",
        fx.drafter(),
        "--input",
        fx.corpus(),
        "--k-list",
        "7",
        "--max-len",
        "30",
        "--out",
        table.to_str().unwrap(),
    ]);
    let run_out = run_ok(&[
        "run",
        "--target",
        fx.target(),
        "--drafter",
        fx.drafter(),
        "--input",
        fx.corpus(),
        "--k",
        "7",
        "--max-len",
        "30",
    ]);
    let sweep_line = stdout_str(&sweep);
    let run_line = stdout_str(&run_out);
    assert_eq!(kv_get(&sweep_line, "k"), "7");
    assert_eq!(kv_get(&sweep_line, "tok"), kv_get(&run_line, "tok"));
    assert_eq!(kv_get(&sweep_line, "speedup"), kv_get(&run_line, "speedup"));

    let csv = fs::read_to_string(&table).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,tok,speedup"));
    assert_eq!(lines.clone().count(), 1, "one data row for one k");
    let row = lines.next().unwrap();
    assert!(row.starts_with("7,"), "row {row:?}");
}

#[test]
fn sweep_verify_writes_the_full_grid() {
    let fx = Fixture::new();
    let table = fx.path("grid.csv");
    let out = run_ok(&[
        "sweep-verify",
        "--target",
        fx.target(),
        "--drafter",
        fx.drafter(),
        "--input",
        fx.corpus(),
        "--beta-list",
        "1,3",
        "--tau-list",
        "0,1,2",
        "--k",
        "5",
        "--max-len",
        "30",
        "--out",
        table.to_str().unwrap(),
    ]);
    let text = stdout_str(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 6, "2 betas x 3 taus");

    // Betas outer, taus inner; the strictest cell cannot diverge from greedy.
    assert_eq!(kv_get(rows[0], "beta"), "1");
    assert_eq!(kv_get(rows[0], "tau"), "0");
    assert_eq!(kv_get(rows[0], "divergence"), "0.000000");
    assert_eq!(kv_get(rows[5], "beta"), "3");
    assert_eq!(kv_get(rows[5], "tau"), "2");

    let csv = fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 7, "header plus six cells");
    assert_eq!(csv.lines().next(), Some("beta,tau,tok,speedup,divergence"));
}

#[test]
fn compare_tabulates_all_four_strategies() {
    let fx = Fixture::new();
    let table = fx.path("compare.csv");
    let out = run_ok(&[
        "compare",
        "--target",
        fx.target(),
        "--drafter",
        fx.drafter(),
        "--input",
        fx.corpus(),
        "--k",
        "5",
        "--beam-width",
        "1",
        "--max-len",
        "30",
        "--out",
        table.to_str().unwrap(),
    ]);
    let text = stdout_str(&out);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(kv_get(rows[0], "strategy"), "ar-greedy");
    assert_eq!(kv_get(rows[1], "strategy"), "ar-beam");
    assert_eq!(kv_get(rows[2], "strategy"), "specdec-vanilla");
    assert_eq!(kv_get(rows[3], "strategy"), "specdec-relaxed");

    // Width-1 beam is greedy, so its row repeats the greedy numbers.
    assert_eq!(
        rows[1].strip_prefix("strategy=ar-beam"),
        rows[0].strip_prefix("strategy=ar-greedy"),
        "beam width 1 should reproduce the greedy row"
    );
    assert_eq!(kv_get(rows[0], "divergence"), "0.000000");
    assert_eq!(kv_get(rows[1], "divergence"), "0.000000");
    assert_eq!(kv_get(rows[2], "divergence"), "0.000000");

    // Loosened acceptance can only keep or lengthen accepted prefixes.
    let vanilla_tok: f64 = kv_get(rows[2], "tok").parse().unwrap();
    let relaxed_tok: f64 = kv_get(rows[3], "tok").parse().unwrap();
    assert!(
        relaxed_tok >= vanilla_tok,
        "relaxed {relaxed_tok} < vanilla {vanilla_tok}"
    );

    let csv = fs::read_to_string(&table).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert_eq!(csv.lines().next(), Some("strategy,tok,speedup,divergence"));
}

#[test]
fn gen_model_is_deterministic_per_seed() {
    let fx = Fixture::new();
    let a = fx.path("ma.json");
    let b = fx.path("mb.json");
    let c = fx.path("mc.json");
    let gen = |seed: &str, out: &Path| {
        stdout_str(&run_ok(&[
            "gen-model",
            "--vocab-size",
            "8",
            "--order",
            "2",
            "--concentration",
            "1.0",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]))
    };
    let la = gen("3", &a);
    let lb = gen("3", &b);
    let lc = gen("4", &c);
    assert_eq!(la, lb);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(kv_get(&la, "hash"), kv_get(&lc, "hash"));
}

#[test]
fn validation_problems_exit_2() {
    let fx = Fixture::new();
    let base = [
        "run",
        "--target",
        fx.target(),
        "--noisy-oracle",
        "0.5",
        "--input",
        fx.corpus(),
    ];
    let with = |extra: &[&str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(extra);
        exit_code(&v)
    };

    assert_eq!(with(&["--bogus"]), 2, "unknown flag");
    assert_eq!(with(&["--strategy", "magic"]), 2, "unknown strategy");
    assert_eq!(with(&["--k", "0"]), 2, "zero block size");
    assert_eq!(
        with(&["--strategy", "specdec-relaxed", "--beta", "0"]),
        2,
        "zero rank threshold"
    );
    assert_eq!(
        with(&["--strategy", "specdec-relaxed", "--tau", "-1"]),
        2,
        "negative gap threshold"
    );
    assert_eq!(with(&["--costs", "1,2"]), 2, "short cost triple");
    assert_eq!(with(&["--costs", "a,b,c"]), 2, "non-numeric costs");
    assert_eq!(with(&["--costs", "1,-2,2"]), 2, "negative cost");
    assert_eq!(with(&["--noisy-oracle", "1.5"]), 2, "probability above 1");
    assert_eq!(
        with(&["--drafter", fx.drafter()]),
        2,
        "two drafter sources at once"
    );
    assert_eq!(
        exit_code(&[
            "run",
            "--target",
            fx.target(),
            "--input",
            fx.corpus(),
            "--strategy",
            "specdec-vanilla",
        ]),
        2,
        "draft-verify strategy without a drafter"
    );
    assert_eq!(
        exit_code(&[
            "fit",
            "--corpus",
            fx.path("nothing.tsv").to_str().unwrap(),
            "--order",
            "2",
            "--smoothing",
            "0.1",
            "--out",
            fx.path("m.json").to_str().unwrap(),
        ]),
        1,
        "missing corpus file is an IO error"
    );
    let empty = fx.path("empty.tsv");
    fs::write(&empty, "").unwrap();
    assert_eq!(
        exit_code(&[
            "fit",
            "--corpus",
            empty.to_str().unwrap(),
            "--order",
            "2",
            "--smoothing",
            "0.1",
            "--out",
            fx.path("m.json").to_str().unwrap(),
        ]),
        2,
        "empty corpus"
    );
}

#[test]
fn data_problems_exit_1_and_name_the_file() {
    let fx = Fixture::new();
    let missing = fx.path("absent.json");
    let out = run(&[
        "run",
        "--target",
        missing.to_str().unwrap(),
        "--noisy-oracle",
        "0.5",
        "--input",
        fx.corpus(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("absent.json"),
        "stderr should name the file: {stderr}"
    );

    let garbled = fx.path("garbled.json");
    fs::write(&garbled, "{\"format\": \"specdec-ngram-v1\", nope").unwrap();
    assert_eq!(
        exit_code(&[
            "run",
            "--target",
            garbled.to_str().unwrap(),
            "--noisy-oracle",
            "0.5",
            "--input",
            fx.corpus(),
        ]),
        1,
        "malformed model JSON"
    );

    let no_tab = fx.path("notab.tsv");
    fs::write(&no_tab, "t3 t4 t5\n").unwrap();
    assert_eq!(
        exit_code(&[
            "run",
            "--target",
            fx.target(),
            "--noisy-oracle",
            "0.5",
            "--input",
            no_tab.to_str().unwrap(),
        ]),
        1,
        "corpus line without a tab"
    );

    let alien = fx.path("alien.tsv");
    fs::write(&alien, "t3\tt4 zz9\n").unwrap();
    assert_eq!(
        exit_code(&[
            "run",
            "--target",
            fx.target(),
            "--noisy-oracle",
            "0.5",
            "--input",
            alien.to_str().unwrap(),
        ]),
        1,
        "symbol outside the model vocabulary"
    );
}
