//! Rendering a results tree as JSON, CSV, or Markdown. JSON keeps full
//! precision; the two display formats round percentages to 2 decimals.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::PerTypeTable;
use crate::runner::{MeanStd, ResultsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Md,
}

impl ReportFormat {
    pub fn all() -> [ReportFormat; 3] {
        [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Md]
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Md => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!(
                "unknown report format {other:?} (expected json, csv, or md)"
            ))),
        }
    }
}

fn p2(x: f64) -> String {
    format!("{x:.2}")
}

fn opt2(x: Option<f64>) -> String {
    x.map(p2).unwrap_or_default()
}

fn mean_std_cell(m: &MeanStd) -> String {
    format!("{}<sub>{}</sub>", p2(m.mean), p2(m.std))
}

pub fn emit_json(report: &ResultsReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes") + "\n"
}

/// One row per cell, then a mean and a std row over the aggregate.
pub fn emit_csv(report: &ResultsReport) -> String {
    let mut out = String::from(
        "kind,fold,seed,acc_v,acc_n,acc_vn,acc_ci,forget_v,forget_n,n_test,dir,error\n",
    );
    for c in &report.cells {
        let (metrics, n_test) = match &c.eval {
            Some(e) => (
                format!(
                    "{},{},{},{},{},{}",
                    p2(e.acc_v),
                    p2(e.acc_n),
                    p2(e.acc_vn),
                    p2(e.acc_ci),
                    opt2(e.forget_v),
                    opt2(e.forget_n)
                ),
                e.n_test.to_string(),
            ),
            None => (",,,,,".to_string(), String::new()),
        };
        let error = c.error.as_deref().unwrap_or("").replace(',', ";");
        out.push_str(&format!(
            "cell,{},{},{metrics},{n_test},{},{error}\n",
            c.fold, c.seed, c.dir
        ));
    }
    if let Some(a) = &report.aggregate {
        let f = |m: &Option<MeanStd>, pick: fn(&MeanStd) -> f64| {
            m.as_ref().map(|m| p2(pick(m))).unwrap_or_default()
        };
        out.push_str(&format!(
            "mean,,,{},{},{},{},{},{},,,\n",
            p2(a.acc_v.mean),
            p2(a.acc_n.mean),
            p2(a.acc_vn.mean),
            p2(a.acc_ci.mean),
            f(&a.forget_v, |m| m.mean),
            f(&a.forget_n, |m| m.mean),
        ));
        out.push_str(&format!(
            "std,,,{},{},{},{},{},{},,,\n",
            p2(a.acc_v.std),
            p2(a.acc_n.std),
            p2(a.acc_vn.std),
            p2(a.acc_ci.std),
            f(&a.forget_v, |m| m.std),
            f(&a.forget_n, |m| m.std),
        ));
    }
    out
}

/// Fold grid as a 4x4 block: three signature rows plus the column
/// averages, three relation columns plus the row averages.
pub fn emit_per_type_csv(table: &PerTypeTable) -> String {
    let mut out = String::from("sig,e,n,c,avg\n");
    for (r, sig) in ["+", "o", "-"].iter().enumerate() {
        out.push_str(&format!(
            "{sig},{},{},{},{}\n",
            p2(table.cells[r][0]),
            p2(table.cells[r][1]),
            p2(table.cells[r][2]),
            p2(table.row_avg[r])
        ));
    }
    out.push_str(&format!(
        "avg,{},{},{},{}\n",
        p2(table.col_avg[0]),
        p2(table.col_avg[1]),
        p2(table.col_avg[2]),
        p2(table.grand_avg)
    ));
    out
}

fn md_per_type(table: &PerTypeTable, out: &mut String) {
    out.push_str("\n## Composition accuracy by held-out type\n\n");
    out.push_str("| | e | n | c | avg |\n|---|---|---|---|---|\n");
    for (r, sig) in ["+", "o", "-"].iter().enumerate() {
        out.push_str(&format!(
            "| {sig} | {} | {} | {} | {} |\n",
            p2(table.cells[r][0]),
            p2(table.cells[r][1]),
            p2(table.cells[r][2]),
            p2(table.row_avg[r])
        ));
    }
    out.push_str(&format!(
        "| avg | {} | {} | {} | {} |\n",
        p2(table.col_avg[0]),
        p2(table.col_avg[1]),
        p2(table.col_avg[2]),
        p2(table.grand_avg)
    ));
    out.push_str(&format!(
        "\nInstance-weighted overall: {}\n",
        p2(table.weighted_avg)
    ));
}

pub fn emit_md(report: &ResultsReport) -> String {
    let mut out = String::from("# Results\n\n");
    let failed = report.cells.iter().filter(|c| !c.ok).count();
    out.push_str(&format!(
        "{} cells, {} failed.\n\n",
        report.cells.len(),
        failed
    ));
    if let Some(a) = &report.aggregate {
        let cell = |m: &Option<MeanStd>| {
            m.as_ref().map(mean_std_cell).unwrap_or_else(|| "-".into())
        };
        out.push_str("Seed means over folds; subscripts are standard deviations across seeds.\n\n");
        out.push_str("| acc_v | acc_n | acc_vn | acc_ci | forget_v | forget_n |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            mean_std_cell(&a.acc_v),
            mean_std_cell(&a.acc_n),
            mean_std_cell(&a.acc_vn),
            mean_std_cell(&a.acc_ci),
            cell(&a.forget_v),
            cell(&a.forget_n),
        ));
    }
    if let Some(t) = &report.per_type {
        md_per_type(t, &mut out);
    }
    if failed > 0 {
        out.push_str("\n## Failures\n\n");
        for c in report.cells.iter().filter(|c| !c.ok) {
            out.push_str(&format!(
                "- fold {}, seed {}: {}\n",
                c.fold,
                c.seed,
                c.error.as_deref().unwrap_or("unknown")
            ));
        }
    }
    out
}

pub fn emit(report: &ResultsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => emit_json(report),
        ReportFormat::Csv => emit_csv(report),
        ReportFormat::Md => emit_md(report),
    }
}

/// Write `aggregate.<ext>` (and `per_type.csv` when applicable) into
/// `dir`; returns the paths written.
pub fn write_report(dir: &Path, report: &ResultsReport, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join(format!("aggregate.{}", format.extension()));
    fs::write(&path, emit(report, format)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    if format == ReportFormat::Csv {
        if let Some(t) = &report.per_type {
            let path = dir.join("per_type.csv");
            fs::write(&path, emit_per_type_csv(t)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{per_type_table, Pxci};
    use crate::runner::{AggregateReport, CellRecord};

    fn sample_report() -> ResultsReport {
        let eval = crate::metrics::EvalReport {
            acc_v: 90.0,
            acc_n: 80.0,
            acc_vn: 75.0,
            acc_ci: 50.0,
            forget_v: Some(10.5),
            forget_n: None,
            pxci: Pxci {
                both_correct: 40.0,
                prim_only: 35.0,
                comp_only: 10.0,
                neither: 15.0,
            },
            compactness: None,
            n_test: 200,
        };
        ResultsReport {
            cells: vec![CellRecord {
                fold: 1,
                seed: 7,
                dir: "cell-0123456789abcdef".into(),
                ok: true,
                error: None,
                eval: Some(eval),
            }],
            aggregate: Some(AggregateReport {
                acc_v: MeanStd { mean: 90.0, std: 0.0 },
                acc_n: MeanStd { mean: 80.0, std: 0.0 },
                acc_vn: MeanStd { mean: 75.0, std: 0.0 },
                acc_ci: MeanStd { mean: 50.0, std: 0.0 },
                forget_v: Some(MeanStd { mean: 10.5, std: 0.0 }),
                forget_n: None,
                n_cells: 1,
                n_failed: 0,
            }),
            per_type: None,
        }
    }

    #[test]
    fn csv_has_one_data_row_plus_aggregate_rows() {
        let csv = emit_csv(&sample_report());
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 4, "header + cell + mean + std:\n{csv}");
        assert!(lines[0].starts_with("kind,fold,seed"));
        assert!(lines[1].starts_with("cell,1,7,90.00,80.00,75.00,50.00,10.50,,200,"));
        assert!(lines[2].starts_with("mean,,,90.00"));
        assert!(lines[3].starts_with("std,,,0.00"));
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let report = sample_report();
        let first = emit_json(&report);
        let loaded: ResultsReport = serde_json::from_str(&first).unwrap();
        assert_eq!(emit_json(&loaded), first);
    }

    #[test]
    fn per_type_markdown_and_csv_follow_the_grid_layout() {
        let entries: Vec<(usize, f64, usize)> = (1..=9).map(|i| (i, i as f64 * 10.0, 50)).collect();
        let table = per_type_table(&entries).unwrap();
        let csv = emit_per_type_csv(&table);
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "sig,e,n,c,avg");
        assert_eq!(lines[1], "+,10.00,20.00,30.00,20.00");
        assert_eq!(lines[4], "avg,40.00,50.00,60.00,50.00");

        let mut report = sample_report();
        report.per_type = Some(table);
        let md = emit_md(&report);
        assert!(md.contains("| + | 10.00 | 20.00 | 30.00 | 20.00 |"));
        assert!(md.contains("| avg | 40.00 | 50.00 | 60.00 | 50.00 |"));
        assert!(md.contains("Instance-weighted overall: 50.00"));
    }

    #[test]
    fn md_uses_subscript_deviations_and_lists_failures() {
        let mut report = sample_report();
        report.cells.push(CellRecord {
            fold: 2,
            seed: 7,
            dir: "cell-feedfacefeedface".into(),
            ok: false,
            error: Some("boom".into()),
            eval: None,
        });
        let md = emit_md(&report);
        assert!(md.contains("90.00<sub>0.00</sub>"));
        assert!(md.contains("2 cells, 1 failed"));
        assert!(md.contains("- fold 2, seed 7: boom"));
    }

    #[test]
    fn format_parsing() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("md".parse::<ReportFormat>().unwrap(), ReportFormat::Md);
        assert!("yaml".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn write_report_creates_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        for format in ReportFormat::all() {
            let written = write_report(dir.path(), &report, format).unwrap();
            assert!(written.iter().all(|p| p.exists()));
        }
        assert!(dir.path().join("aggregate.json").exists());
        assert!(dir.path().join("aggregate.csv").exists());
        assert!(dir.path().join("aggregate.md").exists());
    }
}
