//! Glue around the theory-verification suite: builds the configuration
//! from CLI flags, prints one line per check, and emits the verdict
//! JSON.

use std::path::Path;

use oko_core::theoryverify::{run_all, Verdict, VerifyConfig};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub theorem_eps: Vec<f64>,
    pub gap_eps: Vec<f64>,
    pub enum_budget: usize,
    pub seed: u64,
    /// Test hook: force one verdict to fail so the harness exit path is
    /// exercised end to end.
    pub inject_failure: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        let base = VerifyConfig::default();
        Self {
            theorem_eps: base.theorem_eps,
            gap_eps: base.gap_eps,
            enum_budget: base.enum_budget,
            seed: base.seed,
            inject_failure: false,
        }
    }
}

pub fn run_verification(opts: &VerifyOptions) -> Result<Vec<Verdict>, CliError> {
    let cfg = VerifyConfig {
        theorem_eps: opts.theorem_eps.clone(),
        gap_eps: opts.gap_eps.clone(),
        enum_budget: opts.enum_budget,
        seed: opts.seed,
        ..VerifyConfig::default()
    };
    let mut verdicts = run_all(&cfg)?;
    if opts.inject_failure {
        verdicts.push(Verdict {
            check: "injected_failure".into(),
            params: serde_json::Value::Null,
            measured: serde_json::json!({ "note": "failure injected by test hook" }),
            thresholds: serde_json::Value::Null,
            pass: false,
        });
    }
    Ok(verdicts)
}

pub fn write_verdicts(verdicts: &[Verdict], path: &Path) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(verdicts)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        let line = if v.pass { "PASS" } else { "FAIL" };
        println!("{line}  {}  measured={}", v.check, v.measured);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!(
        "{} checks, {} passed, {} failed",
        verdicts.len(),
        verdicts.len() - failed,
        failed
    );
}
