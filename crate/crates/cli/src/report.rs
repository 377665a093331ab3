//! Aggregates run records into summary tables: per-method means plus a
//! long-format CSV for external plotting. Pure function of the records
//! on disk; no retraining.

use std::collections::BTreeMap;
use std::path::Path;

use oko_core::model::TrainMethod;

use crate::runner::{RunRecord, RunStatus};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: TrainMethod,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub mean_ece: f64,
    /// Mean over runs of |mean cross-entropy - mean entropy|.
    pub mae_entropy_vs_xent: f64,
}

#[derive(Debug)]
pub struct ReportOutput {
    pub rows: Vec<SummaryRow>,
    pub warnings: Vec<String>,
    pub summary_csv: String,
    pub long_csv: String,
}

fn method_name(method: TrainMethod) -> String {
    serde_json::to_value(method)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{method:?}"))
}

/// Reads every `run-*.json` under `dir` and aggregates the successful
/// ones. Malformed files are skipped with a warning, noted in the
/// summary footer; an empty directory is an error.
pub fn generate_report(dir: &Path) -> Result<ReportOutput, CliError> {
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run-") && n.ends_with(".json"))
        })
        .collect();
    entries.sort();
    for path in entries {
        let text = std::fs::read_to_string(&path)?;
        match serde_json::from_str::<RunRecord>(&text) {
            Ok(record) => records.push(record),
            Err(e) => warnings.push(format!("skipped malformed record {}: {e}", path.display())),
        }
    }
    if records.is_empty() {
        return Err(CliError::Validation(vec![format!(
            "no run records found under {}",
            dir.display()
        )]));
    }

    let mut by_method: BTreeMap<TrainMethod, Vec<&RunRecord>> = BTreeMap::new();
    for r in &records {
        by_method.entry(r.method).or_default().push(r);
    }

    let mut rows = Vec::new();
    for (method, runs) in &by_method {
        let ok: Vec<_> = runs
            .iter()
            .filter(|r| r.status == RunStatus::Ok && r.report.is_some())
            .collect();
        for r in runs.iter().filter(|r| r.status == RunStatus::Failed) {
            warnings.push(format!(
                "run {} failed: {}",
                RunRecord::file_stem(r.method, r.train_size, r.seed),
                r.error.as_deref().unwrap_or("unknown error")
            ));
        }
        if ok.is_empty() {
            continue;
        }
        let n = ok.len() as f64;
        let mean = |f: &dyn Fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n;
        rows.push(SummaryRow {
            method: *method,
            runs: ok.len(),
            mean_accuracy: mean(&|r| r.report.as_ref().unwrap().accuracy),
            mean_ece: mean(&|r| r.report.as_ref().unwrap().ece),
            mae_entropy_vs_xent: mean(&|r| r.report.as_ref().unwrap().entropy_gap),
        });
    }

    let mut summary_csv = String::from("method,runs,mean_accuracy,mean_ece,mae_entropy_vs_xent\n");
    for row in &rows {
        summary_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            method_name(row.method),
            row.runs,
            row.mean_accuracy,
            row.mean_ece,
            row.mae_entropy_vs_xent
        ));
    }
    for w in &warnings {
        summary_csv.push_str(&format!("# {w}\n"));
    }

    let mut long_csv = String::from("method,train_size,seed,metric,value\n");
    for r in &records {
        let Some(report) = &r.report else { continue };
        let name = method_name(r.method);
        let metrics: [(&str, f64); 7] = [
            ("accuracy", report.accuracy),
            ("ece", report.ece),
            ("brier", report.brier_mean),
            ("mean_rc", report.mean_rc),
            ("entropy_gap", report.entropy_gap),
            ("mean_entropy_correct", report.mean_entropy_correct),
            ("mean_entropy_incorrect", report.mean_entropy_incorrect),
        ];
        for (metric, value) in metrics {
            long_csv.push_str(&format!(
                "{name},{},{},{metric},{value}\n",
                r.train_size, r.seed
            ));
        }
    }

    Ok(ReportOutput {
        rows,
        warnings,
        summary_csv,
        long_csv,
    })
}

/// Writes `summary.csv` and `long.csv` next to the records.
pub fn write_report(dir: &Path) -> Result<ReportOutput, CliError> {
    let output = generate_report(dir)?;
    std::fs::write(dir.join("summary.csv"), &output.summary_csv)?;
    std::fs::write(dir.join("long.csv"), &output.long_csv)?;
    Ok(output)
}
