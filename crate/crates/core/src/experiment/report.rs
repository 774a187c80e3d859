use std::path::{Path, PathBuf};

use super::plan::ExperimentPlan;
use super::run::{point_name, CellResult, ExperimentSummary, SUMMARY_FILE};
use crate::binio;
use crate::error::{Error, Result};

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::input(e.to_string());
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::input(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Cells grouped by attack point, in plan order.
fn points(summary: &ExperimentSummary) -> Vec<(crate::attacks::AttackMethod, f64)> {
    let mut out = Vec::new();
    for c in &summary.cells {
        if !out.contains(&(c.method, c.strength)) {
            out.push((c.method, c.strength));
        }
    }
    out
}

fn cells_at(summary: &ExperimentSummary, point: (crate::attacks::AttackMethod, f64)) -> Vec<&CellResult> {
    summary
        .cells
        .iter()
        .filter(|c| (c.method, c.strength) == point)
        .collect()
}

pub fn accuracy_csv(summary: &ExperimentSummary) -> Result<Vec<u8>> {
    let header = strings(&[
        "regime",
        "method",
        "strength",
        "clean_accuracy",
        "adv_accuracy",
        "attacked",
        "successful",
        "config_hash",
        "seed",
    ]);
    let rows: Vec<Vec<String>> = summary
        .cells
        .iter()
        .map(|c| {
            vec![
                c.regime.to_string(),
                c.method.to_string(),
                num(c.strength),
                num(c.clean_accuracy),
                num(c.adv_accuracy),
                c.attacked.to_string(),
                c.successful.to_string(),
                summary.config_hash.clone(),
                summary.seed.to_string(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Per-class AUPRC rows per regime, then the macro average and the number of
/// successful attacks.
pub fn auprc_csv(summary: &ExperimentSummary, cells: &[&CellResult]) -> Result<Vec<u8>> {
    let mut header = vec!["regime".to_string()];
    header.extend(summary.class_names.iter().cloned());
    header.extend(strings(&["average", "cases", "config_hash", "seed"]));
    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let mut row = vec![c.regime.to_string()];
            for k in 0..summary.class_names.len() {
                row.push(opt(c
                    .auprc
                    .as_ref()
                    .and_then(|t| t.per_class.get(&k).copied().flatten())));
            }
            row.push(opt(c.auprc.as_ref().map(|t| t.macro_average)));
            row.push(c.successful.to_string());
            row.push(summary.config_hash.clone());
            row.push(summary.seed.to_string());
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// One column per regime; rows are average risk without and with the
/// detector and the accuracy on adversarial inputs.
pub fn risk_csv(summary: &ExperimentSummary, cells: &[&CellResult]) -> Result<Vec<u8>> {
    let mut header = vec!["metric".to_string()];
    header.extend(cells.iter().map(|c| c.regime.to_string()));
    header.extend(strings(&["config_hash", "seed"]));
    let tail = [summary.config_hash.clone(), summary.seed.to_string()];
    let row = |name: &str, f: &dyn Fn(&CellResult) -> String| {
        let mut r = vec![name.to_string()];
        r.extend(cells.iter().map(|c| f(c)));
        r.extend(tail.iter().cloned());
        r
    };
    let rows = vec![
        row("risk_without_uad", &|c| num(c.risk_without_uad.average)),
        row("risk_with_uad", &|c| opt(c.risk_with_uad.map(|r| r.average))),
        row("prediction_accuracy", &|c| num(c.adv_accuracy)),
    ];
    csv_bytes(&header, &rows)
}

/// Writes one `(strength, accuracy)` CSV per regime and method with at least
/// two grid points into `dir`. Returns the written file names.
pub fn emit_curves(summary: &ExperimentSummary, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut keys = Vec::new();
    for c in &summary.cells {
        if !keys.contains(&(c.regime, c.method)) {
            keys.push((c.regime, c.method));
        }
    }
    for (regime, method) in keys {
        let cells: Vec<&CellResult> = summary
            .cells
            .iter()
            .filter(|c| c.regime == regime && c.method == method)
            .collect();
        if cells.len() < 2 {
            continue;
        }
        let rows: Vec<Vec<String>> = cells
            .iter()
            .map(|c| {
                vec![
                    num(c.strength),
                    num(c.adv_accuracy),
                    summary.config_hash.clone(),
                    summary.seed.to_string(),
                ]
            })
            .collect();
        let name = PathBuf::from(format!("{regime}_{method}.csv"));
        binio::write_atomic(
            &dir.join(&name),
            &csv_bytes(&strings(&["strength", "accuracy", "config_hash", "seed"]), &rows)?,
        )?;
        written.push(name);
    }
    Ok(written)
}

/// Writes every report under `<out>/reports` and returns their paths
/// relative to `out`.
pub fn write_reports(out: &Path, _plan: &ExperimentPlan, summary: &ExperimentSummary) -> Result<Vec<String>> {
    let dir = out.join("reports");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    let mut put = |rel: String, bytes: Vec<u8>| -> Result<()> {
        binio::write_atomic(&out.join(&rel), &bytes)?;
        written.push(rel);
        Ok(())
    };
    put("reports/accuracy.csv".into(), accuracy_csv(summary)?)?;
    for point in points(summary) {
        if point.1 <= 0.0 {
            continue;
        }
        let cells = cells_at(summary, point);
        let name = point_name(point.0, point.1);
        if cells.iter().any(|c| c.ledger_with_uad.is_some()) {
            put(format!("reports/auprc_{name}.csv"), auprc_csv(summary, &cells)?)?;
        }
        put(format!("reports/risk_{name}.csv"), risk_csv(summary, &cells)?)?;
    }
    for name in emit_curves(summary, &dir.join("curves"))? {
        written.push(format!("reports/curves/{}", name.display()));
    }
    let mut json = serde_json::to_vec_pretty(summary).map_err(|e| Error::input(e.to_string()))?;
    json.push(b'\n');
    binio::write_atomic(&out.join(SUMMARY_FILE), &json)?;
    written.push(SUMMARY_FILE.to_string());
    Ok(written)
}
