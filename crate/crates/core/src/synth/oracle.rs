//! Brute-force reference implementations. None of these share kernels with
//! the code they check: masks are read pixel by pixel through
//! [`Mask::get`], and the head is evaluated with explicit loops.

use crate::error::{Error, Result};
use crate::gating::{apply_gate, ExistenceHead, FeatureTensor, GatingConfig, HeadGradients, SweepPoint, SweepResult};
use crate::mask::{Mask, MaskSequence};
use crate::metrics::{aggregate, EmptyGtPolicy};
use crate::query::QueryRecord;

fn boundary_pixels(m: &Mask) -> Vec<(i64, i64)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if fg(x, y) && !(fg(x - 1, y) && fg(x + 1, y) && fg(x, y - 1) && fg(x, y + 1)) {
                out.push((x, y));
            }
        }
    }
    out
}

fn fraction_within(from: &[(i64, i64)], to: &[(i64, i64)], radius: u32) -> f64 {
    let r2 = radius as i64 * radius as i64;
    let hits = from
        .iter()
        .filter(|&&(x, y)| {
            let nearest = to
                .iter()
                .map(|&(tx, ty)| (tx - x) * (tx - x) + (ty - y) * (ty - y))
                .min()
                .unwrap();
            nearest <= r2
        })
        .count();
    hits as f64 / from.len() as f64
}

/// Boundary F-measure from exact nearest boundary distances,
/// O(|pred boundary| × |gt boundary|).
pub fn oracle_boundary_f(pred: &Mask, gt: &Mask, radius: u32) -> f64 {
    let pb = boundary_pixels(pred);
    let gb = boundary_pixels(gt);
    if pb.is_empty() && gb.is_empty() {
        return 1.0;
    }
    if pb.is_empty() || gb.is_empty() {
        return 0.0;
    }
    let precision = fraction_within(&pb, &gb, radius);
    let recall = fraction_within(&gb, &pb, radius);
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn pixel_iou(pred: &Mask, gt: &Mask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let (p, g) = (pred.get(x, y), gt.get(x, y));
            inter += (p && g) as usize;
            union += (p || g) as usize;
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn any_pixel(seq: &MaskSequence) -> bool {
    seq.frames()
        .iter()
        .any(|m| (0..m.height()).any(|y| (0..m.width()).any(|x| m.get(x, y))))
}

/// Plain-float recomputation of a table row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaiveReport {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub n_acc: Option<f64>,
    pub t_acc: Option<f64>,
    pub final_score: Option<f64>,
}

/// Pixel-loop J, brute-force F and direct presence counting; meant for
/// small scenarios. `radius` must be given explicitly.
pub fn oracle_aggregate(queries: &[QueryRecord], radius: u32, policy: EmptyGtPolicy) -> Result<NaiveReport> {
    let (mut j_sum, mut f_sum, mut scored) = (0.0, 0.0, 0usize);
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for q in queries {
        let gt_present = any_pixel(&q.gt);
        let pred_present = any_pixel(&q.pred);
        match (gt_present, pred_present) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
        if gt_present {
            let t = q.gt.len() as f64;
            let mut js = 0.0;
            let mut fs = 0.0;
            for (p, g) in q.pred.frames().iter().zip(q.gt.frames()) {
                js += pixel_iou(p, g);
                fs += oracle_boundary_f(p, g, radius);
            }
            j_sum += js / t;
            f_sum += fs / t;
            scored += 1;
        } else if policy == EmptyGtPolicy::IncludeFullCredit {
            let credit = if pred_present { 0.0 } else { 1.0 };
            j_sum += credit;
            f_sum += credit;
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::UndefinedMetric("no scored queries".into()));
    }
    let j = j_sum / scored as f64;
    let f = f_sum / scored as f64;
    let jf = (j + f) / 2.0;
    let n_acc = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    let t_acc = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
    let final_score = n_acc.zip(t_acc).map(|(n, t)| (jf + n + t) / 3.0);
    Ok(NaiveReport { j, f, jf, n_acc, t_acc, final_score })
}

/// Re-gates every query and re-runs the full aggregate at each threshold.
pub fn oracle_sweep(
    queries: &[QueryRecord],
    grid: &[f64],
    radius: Option<u32>,
    policy: EmptyGtPolicy,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Input("threshold grid is empty".into()));
    }
    let missing: Vec<String> = queries
        .iter()
        .filter(|q| q.existence_prob.is_none())
        .map(|q| q.query_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingProbability(missing));
    }
    let mut taus = grid.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let mut points = Vec::with_capacity(taus.len());
    for tau in taus {
        let cfg = GatingConfig::new(tau)?;
        let gated: Vec<QueryRecord> = queries
            .iter()
            .map(|q| QueryRecord {
                pred: apply_gate(q.existence_prob.unwrap(), &cfg, &q.pred),
                ..q.clone()
            })
            .collect();
        points.push(SweepPoint {
            tau,
            report: aggregate(&gated, radius, policy)?,
        });
    }
    Ok(SweepResult { points })
}

fn straight_line_logit(head: &ExistenceHead, f: &FeatureTensor) -> f64 {
    let (n, t, d) = f.shape();
    let mut pooled = vec![0.0; d];
    for (k, slot) in pooled.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..t {
                s += f.get(i, j, k);
            }
        }
        *slot = s / (n * t) as f64;
    }
    let mut z = head.b2();
    for unit in 0..head.hidden() {
        let mut a = head.b1()[unit];
        for (k, x) in pooled.iter().enumerate() {
            a += head.w1(unit, k) * x;
        }
        if a > 0.0 {
            z += head.w2()[unit] * a;
        }
    }
    z
}

/// Logit and probability via explicit loops.
pub fn oracle_forward(head: &ExistenceHead, f: &FeatureTensor) -> (f64, f64) {
    let z = straight_line_logit(head, f);
    (z, 1.0 / (1.0 + (-z).exp()))
}

fn reference_loss(head: &ExistenceHead, f: &FeatureTensor, label: bool) -> f64 {
    let z = straight_line_logit(head, f);
    // softplus(z) - y z, written without cancellation for large |z|
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    if label {
        softplus - z
    } else {
        softplus
    }
}

/// Central differences `(L(θ+ε) - L(θ-ε)) / 2ε` for every parameter.
pub fn finite_diff_grads(head: &ExistenceHead, f: &FeatureTensor, label: bool, epsilon: f64) -> Result<HeadGradients> {
    if !(epsilon > 0.0) {
        return Err(Error::Input(format!("epsilon must be positive, got {epsilon}")));
    }
    if f.dim() != head.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: format!("feature dim {}", head.input_dim()),
            actual: format!("feature dim {}", f.dim()),
        });
    }
    let theta = head.parameters();
    let mut grads = Vec::with_capacity(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        probe[i] = theta[i] + epsilon;
        let up = reference_loss(&head.with_parameters(&probe)?, f, label);
        probe[i] = theta[i] - epsilon;
        let down = reference_loss(&head.with_parameters(&probe)?, f, label);
        probe[i] = theta[i];
        grads.push((up - down) / (2.0 * epsilon));
    }
    let (h, d) = (head.hidden(), head.input_dim());
    Ok(HeadGradients {
        w1: grads[..h * d].to_vec(),
        b1: grads[h * d..h * d + h].to_vec(),
        w2: grads[h * d + h..h * d + 2 * h].to_vec(),
        b2: grads[h * d + 2 * h],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::boundary_f;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_masks_score_one() {
        let m = Mask::from_fn(12, 9, |x, y| (x + y) % 5 < 2).unwrap();
        assert_eq!(oracle_boundary_f(&m, &m, 0), 1.0);
    }

    #[test]
    fn single_pixels_at_distance() {
        for (dx, dy) in [(3usize, 4usize), (1, 1), (0, 2), (5, 0)] {
            let p = Mask::from_fn(16, 16, |x, y| x == 2 && y == 2).unwrap();
            let g = Mask::from_fn(16, 16, |x, y| x == 2 + dx && y == 2 + dy).unwrap();
            let dist = ((dx * dx + dy * dy) as f64).sqrt();
            for r in 0..7u32 {
                let expected = if dist <= r as f64 { 1.0 } else { 0.0 };
                assert_eq!(oracle_boundary_f(&p, &g, r), expected);
                assert_eq!(boundary_f(&p, &g, r).unwrap(), expected);
            }
        }
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(matches!(oracle_sweep(&[], &[], None, EmptyGtPolicy::Exclude), Err(Error::Input(_))));
    }

    #[test]
    fn saturated_correct_prediction_has_flat_loss() {
        let mut head = ExistenceHead::zeros(3, 4).unwrap();
        head.set_b2(50.0);
        let f = FeatureTensor::new(1, 1, 3, vec![0.2, -0.1, 0.4]).unwrap();
        let fd = finite_diff_grads(&head, &f, true, 1e-5).unwrap();
        let an = head.gradients(&f, true).unwrap();
        assert!(fd.flatten().iter().all(|g| g.abs() < 1e-12));
        assert!(an.flatten().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn linear_region_matches_closely() {
        // Positive biases and inputs keep every ReLU active, so the loss is
        // smooth around θ and the only error is O(ε²) truncation.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let base = ExistenceHead::init(4, 6, 2).unwrap();
        let mut params = base.parameters();
        for v in params.iter_mut() {
            *v = rng.random_range(0.1..0.5);
        }
        let head = base.with_parameters(&params).unwrap();
        let f = FeatureTensor::new(2, 2, 4, (0..16).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let fd = finite_diff_grads(&head, &f, false, 1e-5).unwrap().flatten();
        let an = head.gradients(&f, false).unwrap().flatten();
        for (a, n) in an.iter().zip(&fd) {
            assert!((a - n).abs() < 1e-9, "{a} vs {n}");
        }
        assert!(finite_diff_grads(&head, &f, false, 0.0).is_err());
    }

    #[test]
    fn forward_matches_straight_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20 {
            let head = ExistenceHead::init(6, 9, seed).unwrap();
            let f = FeatureTensor::new(3, 2, 6, (0..36).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
            let (z, p) = head.forward(&f).unwrap();
            let (zo, po) = oracle_forward(&head, &f);
            assert!((z - zo).abs() < 1e-12 && (p - po).abs() < 1e-12);
        }
    }
}
