//! Helpers for driving the compiled `specdec` binary from integration tests.
#![allow(dead_code)]

use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_specdec"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "expected success for {args:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn exit_code(args: &[&str]) -> i32 {
    run(args).status.code().expect("no exit code")
}

pub fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be UTF-8")
}

/// Parses one `key=value key=value ...` summary line into pairs.
pub fn parse_kv(line: &str) -> Vec<(String, String)> {
    line.split_whitespace()
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .unwrap_or_else(|| panic!("not key=value: {part:?} in {line:?}"));
            (k.to_string(), v.to_string())
        })
        .collect()
}

pub fn kv_get(line: &str, key: &str) -> String {
    parse_kv(line)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("missing key {key:?} in {line:?}"))
        .1
}
