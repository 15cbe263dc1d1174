use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::EvalReport;

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_TABLE: &str = "results.txt";

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NaN".into(),
    }
}

/// Columns `variant,config,shot,trial_count,mean_accuracy,std_error`;
/// cells where every trial failed carry `NaN`.
pub fn write_results_csv<W: Write>(report: &EvalReport, w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["variant", "config", "shot", "trial_count", "mean_accuracy", "std_error"])?;
    for r in &report.rows {
        csv.write_record([
            r.variant.to_string(),
            r.config.clone(),
            r.shot.to_string(),
            r.trial_count.to_string(),
            num(r.mean_accuracy),
            num(r.std_error),
        ])?;
    }
    csv.flush().map_err(|e| Error::io("<results>", e))
}

/// Variants down, shots across, one block per config; `mean (se)` with
/// `*` on cells that lost trials and `FAILED` where none completed.
pub fn render_table(report: &EvalReport) -> String {
    let mut configs: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !configs.contains(&r.config.as_str()) {
            configs.push(&r.config);
        }
    }
    let mut out = String::new();
    for config in configs {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.config == config).collect();
        let shots: BTreeSet<usize> = rows.iter().map(|r| r.shot).collect();
        let mut variants = Vec::new();
        for r in &rows {
            if !variants.contains(&r.variant) {
                variants.push(r.variant);
            }
        }
        let _ = writeln!(out, "[{config}]");
        let _ = write!(out, "{:<8}", "");
        for s in &shots {
            let _ = write!(out, "{:>18}", format!("{s} shot"));
        }
        out.push('\n');
        for v in variants {
            let _ = write!(out, "{:<8}", v.as_str());
            for s in &shots {
                let cell = rows
                    .iter()
                    .find(|r| r.variant == v && r.shot == *s)
                    .map(|r| match (r.mean_accuracy, r.std_error) {
                        (Some(m), Some(se)) => {
                            let mark = if r.failures.is_empty() { "" } else { "*" };
                            format!("{m:.2} ({se:.2}){mark}")
                        }
                        _ => "FAILED".to_string(),
                    })
                    .unwrap_or_default();
                let _ = write!(out, "{cell:>18}");
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Writes `results.csv`, `results.json` and `results.txt` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(RESULTS_CSV);
    let mut w = super::create_file(&csv_path)?;
    write_results_csv(report, &mut w)?;
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let json_path = dir.join(RESULTS_JSON);
    super::write_json(report, &json_path)?;

    let table_path = dir.join(RESULTS_TABLE);
    std::fs::write(&table_path, render_table(report)).map_err(|e| Error::io(&table_path, e))?;
    Ok(vec![csv_path, json_path, table_path])
}
