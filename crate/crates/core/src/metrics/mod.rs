//! Region similarity (J), boundary accuracy (F), query-level presence
//! confusion, and dataset aggregation into a challenge-style table row.

mod boundary;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{indicator, Mask, MaskSequence};
use crate::query::QueryRecord;
use crate::sum::ExactSum;

pub use boundary::{boundary_f, default_radius, dilate_disk, extract_boundary};

/// Intersection over union. Two empty masks score 1.
pub fn region_j(pred: &Mask, gt: &Mask) -> Result<f64> {
    let union = pred.union_count(gt)?;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(pred.intersection_count(gt)? as f64 / union as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameScore {
    pub j: f64,
    pub f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceScores {
    pub frames: Vec<FrameScore>,
    pub j_mean: f64,
    pub f_mean: f64,
}

/// Frame-wise J and F with arithmetic means over all frames.
pub fn sequence_scores(pred: &MaskSequence, gt: &MaskSequence, radius: u32) -> Result<SequenceScores> {
    pred.check_shape(gt)?;
    let frames = pred
        .frames()
        .iter()
        .zip(gt.frames())
        .map(|(p, g)| {
            Ok(FrameScore {
                j: region_j(p, g)?,
                f: boundary_f(p, g, radius)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let t = frames.len() as f64;
    let j_mean = frames.iter().map(|s| s.j).sum::<f64>() / t;
    let f_mean = frames.iter().map(|s| s.f).sum::<f64>() / t;
    Ok(SequenceScores { frames, j_mean, f_mean })
}

/// How queries whose ground truth is empty in every frame enter the J/F means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyGtPolicy {
    /// J = F = 1 when the prediction is empty too, 0 otherwise.
    #[default]
    IncludeFullCredit,
    /// Left out of the J/F means entirely.
    Exclude,
}

impl fmt::Display for EmptyGtPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmptyGtPolicy::IncludeFullCredit => "include-full-credit",
            EmptyGtPolicy::Exclude => "exclude",
        })
    }
}

impl FromStr for EmptyGtPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "include-full-credit" => Ok(EmptyGtPolicy::IncludeFullCredit),
            "exclude" => Ok(EmptyGtPolicy::Exclude),
            other => Err(Error::Input(format!("unknown empty-GT policy '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, gt_present: bool, pred_present: bool) {
        match (gt_present, pred_present) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    fn unrecord(&mut self, gt_present: bool, pred_present: bool) {
        let slot = match (gt_present, pred_present) {
            (true, true) => &mut self.tp,
            (false, false) => &mut self.tn,
            (false, true) => &mut self.fp,
            (true, false) => &mut self.fn_,
        };
        *slot -= 1;
    }
}

/// Query-level presence confusion: a query is present when any frame of
/// its mask sequence is non-empty.
pub fn presence_confusion(queries: &[QueryRecord]) -> ConfusionCounts {
    let mut counts = ConfusionCounts::default();
    for q in queries {
        counts.record(indicator(&q.gt), indicator(&q.pred));
    }
    counts
}

/// TN / (TN + FP); `None` without GT-absent queries.
pub fn n_acc(c: &ConfusionCounts) -> Option<f64> {
    let denom = c.tn + c.fp;
    (denom > 0).then(|| c.tn as f64 / denom as f64)
}

/// TP / (TP + FN); `None` without GT-present queries.
pub fn t_acc(c: &ConfusionCounts) -> Option<f64> {
    let denom = c.tp + c.fn_;
    (denom > 0).then(|| c.tp as f64 / denom as f64)
}

pub fn final_score(jf: f64, n_acc: f64, t_acc: f64) -> f64 {
    (jf + n_acc + t_acc) / 3.0
}

/// Rounds half away from zero at `decimals` places, for table emission.
///
/// A 1e-9 relative nudge keeps decimal halves such as 0.445 (stored as
/// 0.44499999...) rounding up.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    let nudged = scaled + scaled.abs().max(1.0) * 1e-9;
    (nudged + 0.5).floor() / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    /// `None` when the query is excluded from the J/F means.
    pub j_mean: Option<f64>,
    pub f_mean: Option<f64>,
    pub gt_present: bool,
    pub pred_present: bool,
}

/// Scores one prediction against its ground truth. `radius` defaults to
/// [`default_radius`] of the frame size.
pub fn score_sequences(
    query_id: &str,
    pred: &MaskSequence,
    gt: &MaskSequence,
    radius: Option<u32>,
    policy: EmptyGtPolicy,
) -> Result<QueryMetrics> {
    pred.check_shape(gt).map_err(|e| match e {
        Error::DimensionMismatch { expected, actual } => Error::DimensionMismatch {
            expected,
            actual: format!("{actual} (query {query_id})"),
        },
        other => other,
    })?;
    let gt_present = indicator(gt);
    let pred_present = indicator(pred);
    let (j_mean, f_mean) = if gt_present {
        let (w, h) = gt.dims();
        let s = sequence_scores(pred, gt, radius.unwrap_or_else(|| default_radius(w, h)))?;
        (Some(s.j_mean), Some(s.f_mean))
    } else {
        match policy {
            EmptyGtPolicy::IncludeFullCredit => {
                let credit = if pred_present { 0.0 } else { 1.0 };
                (Some(credit), Some(credit))
            }
            EmptyGtPolicy::Exclude => (None, None),
        }
    };
    Ok(QueryMetrics {
        query_id: query_id.to_string(),
        j_mean,
        f_mean,
        gt_present,
        pred_present,
    })
}

pub fn score_query(q: &QueryRecord, radius: Option<u32>, policy: EmptyGtPolicy) -> Result<QueryMetrics> {
    score_sequences(&q.query_id, &q.pred, &q.gt, radius, policy)
}

/// Scores every query concurrently; output is sorted by query id.
pub fn score_queries(
    queries: &[QueryRecord],
    radius: Option<u32>,
    policy: EmptyGtPolicy,
) -> Result<Vec<QueryMetrics>> {
    let mut scored = queries
        .par_iter()
        .map(|q| score_query(q, radius, policy))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(scored)
}

/// One table row: J, F, J&F, N-acc, T-acc and Final.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub n_acc: Option<f64>,
    pub t_acc: Option<f64>,
    #[serde(rename = "final")]
    pub final_score: Option<f64>,
    pub counts: ConfusionCounts,
    pub policy: EmptyGtPolicy,
    /// Queries contributing to the J/F means.
    pub scored_queries: usize,
}

impl AggregateReport {
    /// Half-up 2-decimal values in table order: J&F, J, F, N-acc, T-acc, Final.
    pub fn table_row(&self) -> [Option<f64>; 6] {
        [Some(self.jf), Some(self.j), Some(self.f), self.n_acc, self.t_acc, self.final_score]
            .map(|v| v.map(|x| round_half_up(x, 2)))
    }
}

/// Running totals behind an [`AggregateReport`]. Sums are exact, so the
/// report depends only on the multiset of queries added, not on order.
#[derive(Clone, Debug, Default)]
pub struct ReportAccumulator {
    j: ExactSum,
    f: ExactSum,
    scored: usize,
    counts: ConfusionCounts,
}

impl ReportAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, m: &QueryMetrics) {
        self.counts.record(m.gt_present, m.pred_present);
        if let (Some(j), Some(f)) = (m.j_mean, m.f_mean) {
            self.j.add(j);
            self.f.add(f);
            self.scored += 1;
        }
    }

    /// Undoes a previous [`add`](Self::add) of the same metrics.
    pub fn remove(&mut self, m: &QueryMetrics) {
        self.counts.unrecord(m.gt_present, m.pred_present);
        if let (Some(j), Some(f)) = (m.j_mean, m.f_mean) {
            self.j.sub(j);
            self.f.sub(f);
            self.scored -= 1;
        }
    }

    pub fn report(&self, policy: EmptyGtPolicy) -> Result<AggregateReport> {
        if self.scored == 0 {
            return Err(Error::UndefinedMetric(format!(
                "no query contributes to J/F under the '{policy}' policy"
            )));
        }
        let n = self.scored as f64;
        let j = self.j.value() / n;
        let f = self.f.value() / n;
        let jf = (j + f) / 2.0;
        let n_acc = n_acc(&self.counts);
        let t_acc = t_acc(&self.counts);
        let final_score = match (n_acc, t_acc) {
            (Some(n), Some(t)) => Some(final_score(jf, n, t)),
            _ => None,
        };
        Ok(AggregateReport {
            j,
            f,
            jf,
            n_acc,
            t_acc,
            final_score,
            counts: self.counts,
            policy,
            scored_queries: self.scored,
        })
    }
}

pub fn aggregate_scored(metrics: &[QueryMetrics], policy: EmptyGtPolicy) -> Result<AggregateReport> {
    if metrics.is_empty() {
        return Err(Error::Input("aggregate over an empty query list".into()));
    }
    let mut acc = ReportAccumulator::new();
    for m in metrics {
        acc.add(m);
    }
    acc.report(policy)
}

/// Scores and aggregates a query set into one report.
pub fn aggregate(queries: &[QueryRecord], radius: Option<u32>, policy: EmptyGtPolicy) -> Result<AggregateReport> {
    if queries.is_empty() {
        return Err(Error::Input("aggregate over an empty query list".into()));
    }
    aggregate_scored(&score_queries(queries, radius, policy)?, policy)
}
