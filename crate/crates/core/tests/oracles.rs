use gateseg_core::gating::{
    fit, sweep, tau_grid, ExistenceHead, FeatureTensor, TrainConfig,
};
use gateseg_core::metrics::{aggregate, boundary_f, default_radius, presence_confusion, EmptyGtPolicy};
use gateseg_core::synth::{
    finite_diff_grads, gen_scenario, oracle_aggregate, oracle_boundary_f, oracle_forward, oracle_sweep,
    ScenarioConfig,
};
use gateseg_core::{Mask, MaskSequence, QueryRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Mask {
    match rng.random_range(0..3) {
        0 => {
            let density = rng.random_range(0.05..0.6);
            Mask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap()
        }
        1 => {
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            let x1 = rng.random_range(x0..w);
            let y1 = rng.random_range(y0..h);
            Mask::from_fn(w, h, |x, y| (x0..=x1).contains(&x) && (y0..=y1).contains(&y)).unwrap()
        }
        _ => Mask::new(w, h).unwrap(),
    }
}

#[test]
fn boundary_f_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..150 {
        let w = rng.random_range(1..=32);
        let h = rng.random_range(1..=32);
        let a = random_mask(&mut rng, w, h);
        let b = random_mask(&mut rng, w, h);
        for r in 1..=4 {
            let fast = boundary_f(&a, &b, r).unwrap();
            let slow = oracle_boundary_f(&a, &b, r);
            assert!((fast - slow).abs() <= 1e-12, "case {case} {w}x{h} r={r}: {fast} vs {slow}");
        }
    }
}

#[test]
fn boundary_f_matches_across_word_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let (w, h) = (rng.random_range(60..140), rng.random_range(4..12));
        let a = random_mask(&mut rng, w, h);
        let b = random_mask(&mut rng, w, h);
        let r = rng.random_range(1..8);
        assert!((boundary_f(&a, &b, r).unwrap() - oracle_boundary_f(&a, &b, r)).abs() <= 1e-12);
    }
}

fn assert_close(a: Option<f64>, b: Option<f64>) {
    match (a, b) {
        (Some(x), Some(y)) => assert!((x - y).abs() <= 1e-12, "{x} vs {y}"),
        (None, None) => {}
        other => panic!("definedness differs: {other:?}"),
    }
}

#[test]
fn aggregate_matches_naive_recomputation() {
    for (preset, seed) in [("small", 1), ("separable", 2), ("overlap", 3)] {
        let s = gen_scenario(&ScenarioConfig::preset(preset, seed).unwrap()).unwrap();
        let records = s.records();
        let radius = default_radius(s.config.width, s.config.height);
        for policy in [EmptyGtPolicy::IncludeFullCredit, EmptyGtPolicy::Exclude] {
            let fast = aggregate(&records, Some(radius), policy).unwrap();
            let slow = oracle_aggregate(&records, radius, policy).unwrap();
            for (x, y) in [(fast.j, slow.j), (fast.f, slow.f), (fast.jf, slow.jf)] {
                assert_close(Some(x), Some(y));
            }
            assert_close(fast.n_acc, slow.n_acc);
            assert_close(fast.t_acc, slow.t_acc);
            assert_close(fast.final_score, slow.final_score);
        }
    }
}

#[test]
fn presence_counts_match_bookkeeping() {
    let s = gen_scenario(&ScenarioConfig::preset("separable", 5).unwrap()).unwrap();
    let c = presence_confusion(&s.records());
    let count = |gt: bool, pred: bool| {
        s.queries
            .iter()
            .filter(|q| q.truth.gt_present == gt && q.truth.pred_present == pred)
            .count()
    };
    assert_eq!(c.tp, count(true, true));
    assert_eq!(c.tn, count(false, false));
    assert_eq!(c.fp, count(false, true));
    assert_eq!(c.fn_, count(true, false));
}

#[test]
fn incremental_sweep_equals_regating() {
    let s = gen_scenario(&ScenarioConfig::preset("overlap", 9).unwrap()).unwrap();
    let records = s.records();
    let grid = tau_grid(0.0, 1.0, 0.05).unwrap();
    for policy in [EmptyGtPolicy::IncludeFullCredit, EmptyGtPolicy::Exclude] {
        let fast = sweep(&records, &grid, None, policy).unwrap();
        let slow = oracle_sweep(&records, &grid, None, policy).unwrap();
        assert_eq!(fast, slow);
    }
}

fn square(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> Mask {
    Mask::from_fn(w, h, |x, y| (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)).unwrap()
}

fn one_frame(m: Mask) -> MaskSequence {
    MaskSequence::new(vec![m]).unwrap()
}

#[test]
fn full_credit_jf_can_rise_with_tau() {
    // An absent-target query with a hallucinated mask gains full credit once gated.
    let (w, h) = (16, 16);
    let present = QueryRecord::new(
        "present",
        one_frame(square(w, h, 2, 2, 6)),
        one_frame(square(w, h, 3, 2, 6)),
    )
    .with_probability(0.9);
    let absent = QueryRecord::new("absent", one_frame(Mask::new(w, h).unwrap()), one_frame(square(w, h, 8, 8, 4)))
        .with_probability(0.3);
    let r = sweep(&[present, absent], &[0.0, 0.5], Some(1), EmptyGtPolicy::IncludeFullCredit).unwrap();
    assert!(r.points[1].report.jf > r.points[0].report.jf);
}

#[test]
fn full_credit_jf_can_fall_with_tau() {
    // A well-segmented present target loses everything when gated.
    let (w, h) = (16, 16);
    let present = QueryRecord::new(
        "present",
        one_frame(square(w, h, 2, 2, 6)),
        one_frame(square(w, h, 2, 2, 6)),
    )
    .with_probability(0.4);
    let absent = QueryRecord::new("absent", one_frame(Mask::new(w, h).unwrap()), one_frame(Mask::new(w, h).unwrap()))
        .with_probability(0.1);
    let r = sweep(&[present, absent], &[0.0, 0.5], Some(1), EmptyGtPolicy::IncludeFullCredit).unwrap();
    assert!(r.points[1].report.jf < r.points[0].report.jf);
}

#[test]
fn exclude_policy_jf_never_rises() {
    let s = gen_scenario(&ScenarioConfig::preset("overlap", 4).unwrap()).unwrap();
    let r = sweep(&s.records(), &tau_grid(0.0, 1.0, 0.02).unwrap(), None, EmptyGtPolicy::Exclude).unwrap();
    for pair in r.points.windows(2) {
        assert!(pair[1].report.jf <= pair[0].report.jf);
    }
}

#[test]
fn some_threshold_beats_no_gating_on_separable() {
    for seed in 0..5 {
        let s = gen_scenario(&ScenarioConfig::preset("separable", seed).unwrap()).unwrap();
        let r = sweep(&s.records(), &tau_grid(0.0, 1.0, 0.1).unwrap(), None, EmptyGtPolicy::IncludeFullCredit)
            .unwrap();
        let ungated = r.points[0].report.final_score.unwrap();
        let best = r.best().unwrap().report.final_score.unwrap();
        assert!(best > ungated, "seed {seed}: {best} vs {ungated}");
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, d: usize) -> FeatureTensor {
    let (n, t) = (rng.random_range(1..4), rng.random_range(1..4));
    let values = (0..n * t * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureTensor::new(n, t, d, values).unwrap()
}

#[test]
fn forward_matches_straight_line_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let head = ExistenceHead::init(6, 5, seed).unwrap();
        let f = random_tensor(&mut rng, 6);
        let (z, p) = head.forward(&f).unwrap();
        let (z0, p0) = oracle_forward(&head, &f);
        assert!((z - z0).abs() <= 1e-12 && (p - p0).abs() <= 1e-12);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for seed in 0..20 {
        let head = ExistenceHead::init(5, 4, seed).unwrap();
        let f = random_tensor(&mut rng, 5);
        let label = rng.random_bool(0.5);
        let analytic = head.gradients(&f, label).unwrap().flatten();
        let numeric = finite_diff_grads(&head, &f, label, 1e-5).unwrap().flatten();
        for (a, n) in analytic.iter().zip(&numeric) {
            let scale = a.abs().max(n.abs());
            if scale < 1e-6 {
                assert!((a - n).abs() < 1e-8);
            } else {
                assert!((a - n).abs() / scale < 1e-4, "{a} vs {n}");
            }
        }
    }
}

#[test]
fn scenario_features_train_to_low_loss() {
    let s = gen_scenario(&ScenarioConfig::preset("separable", 6).unwrap()).unwrap();
    let trained = fit(&s.feature_dataset(), &TrainConfig::default()).unwrap();
    assert!(trained.final_loss < 0.1, "{}", trained.final_loss);
    assert!(trained.losses.windows(2).filter(|w| w[1] > w[0]).count() < 10);
}
