//! Existence-aware gating: suppress a query's whole prediction when its
//! existence probability falls below a threshold, and sweep that threshold.

mod head;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::MaskSequence;
use crate::metrics::{score_sequences, AggregateReport, EmptyGtPolicy, QueryMetrics, ReportAccumulator};
use crate::query::QueryRecord;

pub use head::{
    bce_loss, bce_with_logits, fit, mean_loss, sigmoid, train, ExistenceHead, FeatureTensor, HeadGradients,
    TrainConfig, Trained, DEFAULT_HIDDEN, HEAD_FORMAT_VERSION,
};

pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatingConfig {
    tau: f64,
}

impl Default for GatingConfig {
    fn default() -> Self {
        GatingConfig { tau: DEFAULT_TAU }
    }
}

impl GatingConfig {
    pub fn new(tau: f64) -> Result<Self> {
        check_unit("tau", tau)?;
        Ok(GatingConfig { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Gated iff `p < tau`; a tie passes through.
    pub fn gates(&self, p: f64) -> bool {
        p < self.tau
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Input(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

/// Replaces the prediction with an all-empty sequence of the same extent
/// when `p < tau`; otherwise returns it unchanged.
pub fn apply_gate(p: f64, cfg: &GatingConfig, pred: &MaskSequence) -> MaskSequence {
    if cfg.gates(p) {
        pred.empty_like()
    } else {
        pred.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub report: AggregateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Ascending in tau.
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Point with the highest Final score; the lowest tau wins ties.
    pub fn best(&self) -> Option<&SweepPoint> {
        let mut best: Option<&SweepPoint> = None;
        for point in &self.points {
            let Some(score) = point.report.final_score else { continue };
            if best.is_none_or(|b| score > b.report.final_score.unwrap()) {
                best = Some(point);
            }
        }
        best
    }
}

/// Validates, sorts and deduplicates a threshold grid.
pub fn normalize_grid(grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::Input("threshold grid is empty".into()));
    }
    for &tau in grid {
        check_unit("tau", tau)?;
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Ok(sorted)
}

/// `start, start + step, ...` up to `stop` inclusive. Values are rounded to
/// 12 decimals so `0:1:0.1` yields exactly 0.3 rather than 0.30000000000000004.
pub fn tau_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::Input(format!("invalid grid {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect();
    normalize_grid(&grid)
}

/// A query scored twice: with its prediction as given and with the
/// prediction suppressed.
#[derive(Clone, Debug, PartialEq)]
pub struct GateCandidate {
    pub p: f64,
    pub ungated: QueryMetrics,
    pub gated: QueryMetrics,
}

pub fn score_candidate(q: &QueryRecord, radius: Option<u32>, policy: EmptyGtPolicy) -> Result<GateCandidate> {
    let p = q
        .existence_prob
        .ok_or_else(|| Error::MissingProbability(vec![q.query_id.clone()]))?;
    check_unit(&format!("existence probability of query {}", q.query_id), p)?;
    let ungated = score_sequences(&q.query_id, &q.pred, &q.gt, radius, policy)?;
    let gated = score_sequences(&q.query_id, &q.pred.empty_like(), &q.gt, radius, policy)?;
    Ok(GateCandidate { p, ungated, gated })
}

/// Incremental sweep over pre-scored candidates: candidates are sorted by
/// probability once, then each threshold only moves the queries whose
/// probability it newly exceeds from the ungated to the gated state.
pub fn sweep_scored(mut candidates: Vec<GateCandidate>, grid: &[f64], policy: EmptyGtPolicy) -> Result<SweepResult> {
    if candidates.is_empty() {
        return Err(Error::Input("sweep over an empty query list".into()));
    }
    let grid = normalize_grid(grid)?;
    candidates.sort_by(|a, b| a.p.total_cmp(&b.p));
    let mut acc = ReportAccumulator::new();
    for c in &candidates {
        acc.add(&c.ungated);
    }
    let mut next = 0;
    let mut points = Vec::with_capacity(grid.len());
    for tau in grid {
        while next < candidates.len() && candidates[next].p < tau {
            acc.remove(&candidates[next].ungated);
            acc.add(&candidates[next].gated);
            next += 1;
        }
        points.push(SweepPoint {
            tau,
            report: acc.report(policy)?,
        });
    }
    Ok(SweepResult { points })
}

/// Dataset report for every threshold in `grid`, as if each query's
/// prediction had been gated at that threshold.
pub fn sweep(queries: &[QueryRecord], grid: &[f64], radius: Option<u32>, policy: EmptyGtPolicy) -> Result<SweepResult> {
    let missing: Vec<String> = queries
        .iter()
        .filter(|q| q.existence_prob.is_none())
        .map(|q| q.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingProbability(missing));
    }
    let candidates = queries
        .par_iter()
        .map(|q| score_candidate(q, radius, policy))
        .collect::<Result<Vec<_>>>()?;
    sweep_scored(candidates, grid, policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::Mask;
    use crate::metrics::aggregate;

    fn blob_seq(t: usize) -> MaskSequence {
        MaskSequence::new(vec![Mask::from_fn(10, 10, |x, y| (2..6).contains(&x) && (3..7).contains(&y)).unwrap(); t]).unwrap()
    }

    fn q(id: &str, gt_present: bool, pred_present: bool, p: f64) -> QueryRecord {
        let empty = MaskSequence::empty(10, 10, 3).unwrap();
        let gt = if gt_present { blob_seq(3) } else { empty.clone() };
        let pred = if pred_present { blob_seq(3) } else { empty };
        QueryRecord::new(id, gt, pred).with_probability(p)
    }

    #[test]
    fn gate_rule() {
        let pred = blob_seq(2);
        let cfg = GatingConfig::new(0.8).unwrap();
        assert_eq!(apply_gate(0.75, &cfg, &pred), MaskSequence::empty(10, 10, 2).unwrap());
        assert_eq!(apply_gate(0.85, &cfg, &pred), pred);
        assert_eq!(apply_gate(0.8, &cfg, &pred), pred);
        let once = apply_gate(0.3, &cfg, &pred);
        assert_eq!(apply_gate(0.3, &cfg, &once), once);
        assert!(GatingConfig::new(1.5).is_err());
        assert!(GatingConfig::new(f64::NAN).is_err());
        assert_eq!(GatingConfig::default().tau(), 0.8);
    }

    #[test]
    fn grids() {
        let g = tau_grid(0.0, 1.0, 0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(tau_grid(0.0, 1.0, 0.01).unwrap().len(), 101);
        assert!(tau_grid(0.0, 1.0, 0.0).is_err());
        assert!(tau_grid(0.5, 0.2, 0.1).is_err());
        assert_eq!(normalize_grid(&[0.5, 0.1, 0.5]).unwrap(), vec![0.1, 0.5]);
        assert!(normalize_grid(&[]).is_err());
        assert!(normalize_grid(&[1.2]).is_err());
    }

    #[test]
    fn zero_threshold_matches_plain_aggregate() {
        let qs = vec![q("a", true, true, 0.9), q("b", false, true, 0.2), q("c", false, false, 0.1), q("d", true, false, 0.6)];
        let s = sweep(&qs, &[0.0], None, EmptyGtPolicy::IncludeFullCredit).unwrap();
        assert_eq!(s.points[0].report, aggregate(&qs, None, EmptyGtPolicy::IncludeFullCredit).unwrap());
    }

    #[test]
    fn full_threshold_gates_everything() {
        let qs = vec![q("a", true, true, 0.99), q("b", false, true, 0.2), q("c", true, true, 0.7)];
        let s = sweep(&qs, &[1.0], None, EmptyGtPolicy::IncludeFullCredit).unwrap();
        let r = &s.points[0].report;
        assert_eq!(r.t_acc, Some(0.0));
        assert_eq!(r.n_acc, Some(1.0));
    }

    #[test]
    fn missing_probability_names_queries() {
        let mut qs = vec![q("a", true, true, 0.5), q("b", true, true, 0.5), q("c", true, true, 0.5)];
        qs[0].existence_prob = None;
        qs[2].existence_prob = None;
        match sweep(&qs, &[0.5], None, EmptyGtPolicy::Exclude) {
            Err(Error::MissingProbability(ids)) => assert_eq!(ids, vec!["a".to_string(), "c".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_query_straddled() {
        let qs = vec![q("a", false, true, 0.5)];
        let s = sweep(&qs, &[0.4, 0.6], None, EmptyGtPolicy::IncludeFullCredit).unwrap();
        assert_ne!(s.points[0].report, s.points[1].report);
        assert_eq!(s.points[0].report.counts.fp, 1);
        assert_eq!(s.points[1].report.counts.tn, 1);
    }

    #[test]
    fn best_prefers_lowest_tau_on_ties() {
        let qs = vec![q("a", true, true, 0.9), q("b", false, true, 0.2)];
        let s = sweep(&qs, &[0.0, 0.3, 0.5], None, EmptyGtPolicy::IncludeFullCredit).unwrap();
        assert_eq!(s.best().unwrap().tau, 0.3);
        assert_eq!(s.best().unwrap().report.final_score, Some(1.0));
    }
}
