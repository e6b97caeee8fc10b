#![allow(dead_code)]

//! Helpers shared by the CLI integration tests.

use std::path::Path;
use std::process::Output;

pub fn data(file: &str) -> String {
    format!("{}/../../data/{file}", env!("CARGO_MANIFEST_DIR"))
}

/// Runs the installed binary with a scrubbed endpoint environment so tests
/// never pick up credentials or URLs from the host.
pub fn run_cli(config: &Path, args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_primelens"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("PRIMELENS_ENDPOINT")
        .env_remove("PRIMELENS_API_KEY")
        .output()
        .unwrap()
}

pub fn assert_cli_ok(config: &Path, args: &[&str]) -> String {
    let output = run_cli(config, args);
    assert!(
        output.status.success(),
        "`{args:?}` failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn assert_cli_fails(config: &Path, args: &[&str], expected_code: i32) -> String {
    let output = run_cli(config, args);
    assert_eq!(
        output.status.code(),
        Some(expected_code),
        "`{args:?}`\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
    String::from_utf8_lossy(&output.stderr).into_owned()
}
