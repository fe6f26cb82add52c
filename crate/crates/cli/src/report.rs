//! report.json / report.csv and sweep.json / sweep.csv writers.

use std::path::Path;

use gateseg_core::gating::{SweepPoint, SweepResult};
use gateseg_core::metrics::{round_half_up, AggregateReport, EmptyGtPolicy, QueryMetrics};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::source::write_json;

pub const TOOL_NAME: &str = "gateseg";
pub const TABLE_HEADER: [&str; 6] = ["J&F", "J", "F", "N-acc", "T-acc", "Final"];

/// Options as resolved for the run; everything that can change the numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedOptions {
    /// `None` means the per-query default derived from the frame size.
    pub radius: Option<u32>,
    pub empty_gt_policy: EmptyGtPolicy,
    /// `None` means predictions are scored ungated.
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query_id: String,
    pub sequence_id: String,
    pub transcript: String,
    pub frames: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existence_prob: Option<f64>,
    pub gated: bool,
    pub j: Option<f64>,
    pub f: Option<f64>,
    pub gt_present: bool,
    pub pred_present: bool,
}

impl QueryRow {
    pub fn metrics(&self) -> QueryMetrics {
        QueryMetrics {
            query_id: self.query_id.clone(),
            j_mean: self.j,
            f_mean: self.f,
            gt_present: self.gt_present,
            pred_present: self.pred_present,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tool: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub options: ResolvedOptions,
    pub summary: AggregateReport,
    pub queries: Vec<QueryRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestTau {
    pub tau: f64,
    #[serde(rename = "final")]
    pub final_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub tool: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub radius: Option<u32>,
    pub empty_gt_policy: EmptyGtPolicy,
    pub points: Vec<SweepPoint>,
    pub best: Option<BestTau>,
}

impl SweepReport {
    pub fn new(result: SweepResult, radius: Option<u32>, policy: EmptyGtPolicy, generated_at: Option<String>) -> Self {
        let best = result.best().map(|p| BestTau {
            tau: p.tau,
            final_score: p.report.final_score.expect("best point has a Final score"),
        });
        SweepReport {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            generated_at,
            radius,
            empty_gt_policy: policy,
            points: result.points,
            best,
        }
    }
}

pub fn timestamp(suppress: bool) -> Option<String> {
    (!suppress).then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

/// Two-decimal half-up cell, or `n/a`.
pub fn table_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.2}", round_half_up(x, 2)),
        None => "n/a".into(),
    }
}

pub fn table_cells(report: &AggregateReport) -> [String; 6] {
    [
        Some(report.jf),
        Some(report.j),
        Some(report.f),
        report.n_acc,
        report.t_acc,
        report.final_score,
    ]
    .map(table_cell)
}

fn full_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| x.to_string())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::data(path, e.to_string())
}

pub fn write_table_csv(path: &Path, report: &AggregateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TABLE_HEADER).map_err(csv_err(path))?;
    w.write_record(table_cells(report)).map_err(csv_err(path))?;
    w.flush().map_err(HarnessError::io(path))
}

/// One full-precision row per threshold, for plotting.
pub fn write_sweep_csv(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["tau"];
    header.extend(TABLE_HEADER);
    w.write_record(&header).map_err(csv_err(path))?;
    for p in points {
        let r = &p.report;
        let row = [Some(p.tau), Some(r.jf), Some(r.j), Some(r.f), r.n_acc, r.t_acc, r.final_score].map(full_cell);
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

pub fn write_evaluation(dir: &Path, report: &EvaluationReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    write_json(&dir.join("report.json"), report)?;
    write_table_csv(&dir.join("report.csv"), &report.summary)
}

pub fn write_sweep(dir: &Path, report: &SweepReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    write_json(&dir.join("sweep.json"), report)?;
    write_sweep_csv(&dir.join("sweep.csv"), &report.points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_round_half_up() {
        assert_eq!(table_cell(Some(0.445)), "0.45");
        assert_eq!(table_cell(Some(0.675)), "0.68");
        assert_eq!(table_cell(Some(1.0)), "1.00");
        assert_eq!(table_cell(Some(0.0)), "0.00");
        assert_eq!(table_cell(None), "n/a");
    }
}
