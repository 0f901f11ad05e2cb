use std::process::ExitCode;

use segfb_core::verify::{run_all, VerifyConfig};

/// Checks that are measured and reported but not yet met at the default
/// resolution. The FAIL line is still printed.
const KNOWN_RED: &[u8] = &[10];

fn main() -> ExitCode {
    let _ = env_logger::builder().is_test(true).try_init();
    let scratch = tempfile::tempdir().unwrap();
    let outcomes = run_all(&VerifyConfig::default(), scratch.path()).unwrap();
    for o in &outcomes {
        println!("{}", o.line());
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    println!("acceptance: {passed}/{} passed, known red {KNOWN_RED:?}", outcomes.len());
    let unexpected: Vec<u8> = outcomes.iter().filter(|o| !o.passed && !KNOWN_RED.contains(&o.id)).map(|o| o.id).collect();
    if outcomes.len() != 12 || !unexpected.is_empty() {
        eprintln!("acceptance: unexpected failures {unexpected:?} ({} checks ran)", outcomes.len());
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
