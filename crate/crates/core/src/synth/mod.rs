//! Seeded synthetic scenarios.
//!
//! Every random draw comes from one ChaCha8 stream seeded with the
//! scenario's 64-bit seed, in a fixed order, so a config regenerates the
//! same scenario byte for byte.

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::FeatureTensor;
use crate::mask::{Mask, MaskSequence};
use crate::query::QueryRecord;

pub use oracle::{finite_diff_grads, oracle_aggregate, oracle_boundary_f, oracle_forward, oracle_sweep};

pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    Rectangle,
    Ellipse,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionNoise {
    /// Maximum absolute per-frame translation, pixels.
    pub shift: usize,
    /// Maximum dilation or erosion steps per frame.
    pub morph: usize,
    /// Chance that a GT-absent query still gets a spurious prediction.
    pub false_positive_rate: f64,
}

/// Existence probabilities: clip(N(mean, std), 0, 1) per presence class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityModel {
    pub present_mean: f64,
    pub present_std: f64,
    pub absent_mean: f64,
    pub absent_std: f64,
}

/// Gaussian clusters at `±separation/2` along a seeded unit direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub tokens: usize,
    pub frames: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub num_queries: usize,
    pub frac_absent: f64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub shape: ShapeFamily,
    pub noise: PredictionNoise,
    pub probability: ProbabilityModel,
    pub features: Option<FeatureModel>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            num_queries: 100,
            frac_absent: 0.3,
            width: 32,
            height: 24,
            frames: 4,
            shape: ShapeFamily::Mixed,
            noise: PredictionNoise {
                shift: 1,
                morph: 1,
                false_positive_rate: 0.3,
            },
            probability: ProbabilityModel {
                present_mean: 0.7,
                present_std: 0.2,
                absent_mean: 0.3,
                absent_std: 0.2,
            },
            features: Some(FeatureModel {
                tokens: 2,
                frames: 4,
                dim: 16,
                separation: 2.0,
                noise_std: 0.5,
            }),
        }
    }
}

pub const PRESETS: &[&str] = &["separable", "overlap", "perfect", "small", "throughput"];

impl ScenarioConfig {
    /// Named configurations:
    /// * `separable`: existence probabilities N(0.9, 0.05) vs N(0.1, 0.05),
    ///   30% false positives on absent queries.
    /// * `overlap`: heavily overlapping probabilities.
    /// * `perfect`: predictions equal ground truth.
    /// * `small`: 20 tiny queries for smoke tests.
    /// * `throughput`: 100 queries × 50 frames at 640×480.
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let base = ScenarioConfig { seed, ..ScenarioConfig::default() };
        let cfg = match name {
            "separable" => ScenarioConfig {
                probability: ProbabilityModel {
                    present_mean: 0.9,
                    present_std: 0.05,
                    absent_mean: 0.1,
                    absent_std: 0.05,
                },
                ..base
            },
            "overlap" => ScenarioConfig {
                probability: ProbabilityModel {
                    present_mean: 0.6,
                    present_std: 0.25,
                    absent_mean: 0.4,
                    absent_std: 0.25,
                },
                ..base
            },
            "perfect" => ScenarioConfig {
                noise: PredictionNoise {
                    shift: 0,
                    morph: 0,
                    false_positive_rate: 0.0,
                },
                ..base
            },
            "small" => ScenarioConfig {
                num_queries: 20,
                width: 16,
                height: 12,
                frames: 3,
                ..base
            },
            "throughput" => ScenarioConfig {
                num_queries: 100,
                width: 640,
                height: 480,
                frames: 50,
                noise: PredictionNoise {
                    shift: 6,
                    morph: 3,
                    false_positive_rate: 0.3,
                },
                features: None,
                ..base
            },
            other => {
                return Err(Error::Input(format!(
                    "unknown preset '{other}', expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Input(format!(
                "scenario frames must be at least 8x8, got {}x{}",
                self.width, self.height
            )));
        }
        if self.frames == 0 || self.num_queries == 0 {
            return Err(Error::Input("scenario needs at least one query and one frame".into()));
        }
        for (name, v) in [
            ("frac_absent", self.frac_absent),
            ("false_positive_rate", self.noise.false_positive_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let p = &self.probability;
        if !(p.present_std >= 0.0 && p.absent_std >= 0.0) || !p.present_mean.is_finite() || !p.absent_mean.is_finite() {
            return Err(Error::Input("probability model needs finite means and non-negative stds".into()));
        }
        let min_side = 2 * (self.min_radius() + self.noise.shift) + 1;
        if self.width.min(self.height) < min_side {
            return Err(Error::Input(format!(
                "frames of {}x{} cannot hold an object that survives shift {} and morph {}",
                self.width, self.height, self.noise.shift, self.noise.morph
            )));
        }
        if let Some(f) = &self.features {
            if f.tokens == 0 || f.frames == 0 || f.dim == 0 || !(f.noise_std >= 0.0) || !f.separation.is_finite() {
                return Err(Error::Input("feature model needs positive dims and finite spreads".into()));
            }
        }
        Ok(())
    }

    /// Smallest object half-extent; an ellipse this size still contains the
    /// square that erosion by `morph` steps needs, so it never vanishes.
    fn min_radius(&self) -> usize {
        3 * self.noise.morph / 2 + 1
    }
}

/// Generator-side truth for one query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bookkeeping {
    pub gt_present: bool,
    pub pred_present: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuery {
    pub record: QueryRecord,
    pub truth: Bookkeeping,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub rng: String,
    pub config: ScenarioConfig,
    pub queries: Vec<SyntheticQuery>,
}

impl Scenario {
    pub fn records(&self) -> Vec<QueryRecord> {
        self.queries.iter().map(|q| q.record.clone()).collect()
    }

    /// `(features, gt_present)` pairs for training an existence head.
    pub fn feature_dataset(&self) -> Vec<(FeatureTensor, bool)> {
        self.queries
            .iter()
            .filter_map(|q| q.record.features.clone().map(|f| (f, q.truth.gt_present)))
            .collect()
    }
}

/// Translates by `shift` with zero fill, then dilates (`morph_delta > 0`) or
/// erodes (`< 0`) with a 3×3 square, once per unit of `|morph_delta|`.
pub fn perturb_mask(mask: &Mask, shift: (isize, isize), morph_delta: isize) -> Mask {
    let moved = mask.shifted(shift.0, shift.1);
    match morph_delta {
        0 => moved,
        d if d > 0 => moved.dilate_square(d as usize),
        d => moved.erode_square(d.unsigned_abs()),
    }
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    ellipse: bool,
    cx: f64,
    cy: f64,
    rx: usize,
    ry: usize,
}

impl Shape {
    fn render(&self, w: usize, h: usize) -> Mask {
        let mut m = Mask::new(w, h).expect("validated dims");
        let (cx, cy) = (self.cx.round() as isize, self.cy.round() as isize);
        let (rx, ry) = (self.rx as isize, self.ry as isize);
        for dy in -ry..=ry {
            let y = cy + dy;
            if y < 0 || y >= h as isize {
                continue;
            }
            let half = if self.ellipse {
                let t = dy as f64 / ry as f64;
                (rx as f64 * (1.0 - t * t).max(0.0).sqrt()).floor() as isize
            } else {
                rx
            };
            let x0 = (cx - half).max(0) as usize;
            let x1 = (cx + half + 1).max(0) as usize;
            m.fill_span(y as usize, x0, x1);
        }
        m
    }
}

const SUBJECTS: &[&str] = &["dog", "cat", "person", "car", "bird", "horse", "bicycle", "sheep"];
const MOTIONS: &[&str] = &["walking left", "turning around", "running away", "standing still", "moving forward", "jumping"];

struct Generator<'a> {
    cfg: &'a ScenarioConfig,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn shape(&mut self) -> Shape {
        let cfg = self.cfg;
        let ellipse = match cfg.shape {
            ShapeFamily::Rectangle => false,
            ShapeFamily::Ellipse => true,
            ShapeFamily::Mixed => self.rng.random_bool(0.5),
        };
        let margin = cfg.noise.shift;
        let min_r = cfg.min_radius();
        let max_rx = ((cfg.width - 1) / 2 - margin).max(min_r);
        let max_ry = ((cfg.height - 1) / 2 - margin).max(min_r);
        let rx = self.rng.random_range(min_r..=min_r.max(max_rx / 2));
        let ry = self.rng.random_range(min_r..=min_r.max(max_ry / 2));
        let cx = self.rng.random_range((rx + margin) as f64..=(cfg.width - 1 - rx - margin) as f64);
        let cy = self.rng.random_range((ry + margin) as f64..=(cfg.height - 1 - ry - margin) as f64);
        Shape { ellipse, cx, cy, rx, ry }
    }

    /// Object track: a shape drifting with constant velocity, kept inside
    /// the noise margin and visible over a contiguous run of frames.
    fn track(&mut self) -> Vec<Mask> {
        let cfg = self.cfg;
        let mut shape = self.shape();
        let (vx, vy) = (self.rng.random_range(-1.5..=1.5), self.rng.random_range(-1.5..=1.5));
        let start = self.rng.random_range(0..cfg.frames);
        let end = self.rng.random_range(start..cfg.frames);
        let margin = cfg.noise.shift as f64;
        (0..cfg.frames)
            .map(|t| {
                let frame = if (start..=end).contains(&t) {
                    shape.render(cfg.width, cfg.height)
                } else {
                    Mask::new(cfg.width, cfg.height).expect("validated dims")
                };
                let (lo_x, hi_x) = (shape.rx as f64 + margin, (cfg.width - 1 - shape.rx) as f64 - margin);
                let (lo_y, hi_y) = (shape.ry as f64 + margin, (cfg.height - 1 - shape.ry) as f64 - margin);
                shape.cx = (shape.cx + vx).clamp(lo_x, hi_x);
                shape.cy = (shape.cy + vy).clamp(lo_y, hi_y);
                frame
            })
            .collect()
    }

    fn perturbed(&mut self, gt: &[Mask]) -> Vec<Mask> {
        let s = self.cfg.noise.shift as i64;
        let m = self.cfg.noise.morph as i64;
        gt.iter()
            .map(|frame| {
                let dx = self.rng.random_range(-s..=s);
                let dy = self.rng.random_range(-s..=s);
                let delta = self.rng.random_range(-m..=m);
                if frame.is_empty() {
                    frame.clone()
                } else {
                    perturb_mask(frame, (dx as isize, dy as isize), delta as isize)
                }
            })
            .collect()
    }

    fn probability(&mut self, present: bool) -> f64 {
        let p = &self.cfg.probability;
        let (mean, std) = if present {
            (p.present_mean, p.present_std)
        } else {
            (p.absent_mean, p.absent_std)
        };
        let draw = Normal::new(mean, std).expect("validated std").sample(&mut self.rng);
        draw.clamp(0.0, 1.0)
    }

    fn features(&mut self, model: &FeatureModel, direction: &[f64], present: bool) -> FeatureTensor {
        let sign = if present { 0.5 } else { -0.5 };
        let noise = Normal::new(0.0, model.noise_std).expect("validated std");
        let mut values = Vec::with_capacity(model.tokens * model.frames * model.dim);
        for _ in 0..model.tokens * model.frames {
            for &u in direction {
                values.push(sign * model.separation * u + noise.sample(&mut self.rng));
            }
        }
        FeatureTensor::new(model.tokens, model.frames, model.dim, values).expect("finite by construction")
    }
}

pub fn gen_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut g = Generator {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let direction: Vec<f64> = match &cfg.features {
        Some(model) => {
            let raw: Vec<f64> = (0..model.dim).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut g.rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            raw.iter().map(|v| v / norm).collect()
        }
        None => Vec::new(),
    };
    let mut queries = Vec::with_capacity(cfg.num_queries);
    for i in 0..cfg.num_queries {
        let present = !g.rng.random_bool(cfg.frac_absent);
        let empty = || MaskSequence::empty(cfg.width, cfg.height, cfg.frames).expect("validated dims");
        let (gt, pred, pred_present) = if present {
            let gt = g.track();
            let pred = g.perturbed(&gt);
            (MaskSequence::new(gt)?, MaskSequence::new(pred)?, true)
        } else if g.rng.random_bool(cfg.noise.false_positive_rate) {
            (empty(), MaskSequence::new(g.track())?, true)
        } else {
            (empty(), empty(), false)
        };
        let existence_prob = g.probability(present);
        let features = cfg.features.as_ref().map(|m| g.features(m, &direction, present));
        let subject = SUBJECTS[g.rng.random_range(0..SUBJECTS.len())];
        let motion = MOTIONS[g.rng.random_range(0..MOTIONS.len())];
        queries.push(SyntheticQuery {
            record: QueryRecord {
                query_id: format!("q{i:05}"),
                sequence_id: format!("v{:04}", i / 4),
                transcript: format!("the {subject} {motion}"),
                gt,
                pred,
                existence_prob: Some(existence_prob),
                features,
            },
            truth: Bookkeeping {
                gt_present: present,
                pred_present,
            },
        });
    }
    Ok(Scenario {
        rng: RNG_ALGORITHM.to_string(),
        config: *cfg,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::indicator;
    use crate::metrics::{aggregate, presence_confusion, EmptyGtPolicy};

    #[test]
    fn perturb_basics() {
        let dot = Mask::from_fn(9, 9, |x, y| x == 4 && y == 4).unwrap();
        assert_eq!(perturb_mask(&dot, (0, 0), 0), dot);
        assert_eq!(perturb_mask(&dot, (0, 0), 1).count_ones(), 9);
        assert!(perturb_mask(&dot, (0, 0), -1).is_empty());
        let moved = perturb_mask(&dot, (2, -1), 0);
        assert!(moved.get(6, 3));
    }

    #[test]
    fn bookkeeping_agrees_with_indicator() {
        for preset in ["separable", "overlap", "small"] {
            let s = gen_scenario(&ScenarioConfig::preset(preset, 7).unwrap()).unwrap();
            for q in &s.queries {
                assert_eq!(q.truth.gt_present, indicator(&q.record.gt), "{}", q.record.query_id);
                assert_eq!(q.truth.pred_present, indicator(&q.record.pred), "{}", q.record.query_id);
            }
        }
    }

    #[test]
    fn no_absent_queries_when_fraction_zero() {
        let cfg = ScenarioConfig { frac_absent: 0.0, seed: 3, ..ScenarioConfig::default() };
        let s = gen_scenario(&cfg).unwrap();
        assert!(s.queries.iter().all(|q| indicator(&q.record.gt)));
    }

    #[test]
    fn noiseless_predictions_score_perfectly() {
        let s = gen_scenario(&ScenarioConfig::preset("perfect", 11).unwrap()).unwrap();
        for q in &s.queries {
            assert_eq!(q.record.gt, q.record.pred);
        }
        let r = aggregate(&s.records(), None, EmptyGtPolicy::IncludeFullCredit).unwrap();
        assert_eq!((r.j, r.f, r.jf, r.n_acc, r.t_acc, r.final_score), (1.0, 1.0, 1.0, Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = ScenarioConfig::preset("small", 99).unwrap();
        let a = serde_json::to_string(&gen_scenario(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&gen_scenario(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = ScenarioConfig { seed: 100, ..cfg };
        assert_ne!(a, serde_json::to_string(&gen_scenario(&other).unwrap()).unwrap());
    }

    #[test]
    fn confusion_matches_bookkeeping() {
        let s = gen_scenario(&ScenarioConfig::preset("overlap", 5).unwrap()).unwrap();
        let c = presence_confusion(&s.records());
        let count = |gt: bool, pred: bool| s.queries.iter().filter(|q| q.truth.gt_present == gt && q.truth.pred_present == pred).count();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (count(true, true), count(false, false), count(false, true), count(true, false)));
    }

    #[test]
    fn rejects_degenerate_configs() {
        let tiny = ScenarioConfig { width: 6, ..ScenarioConfig::default() };
        assert!(gen_scenario(&tiny).is_err());
        let noisy = ScenarioConfig {
            width: 8,
            height: 8,
            noise: PredictionNoise { shift: 3, morph: 2, false_positive_rate: 0.0 },
            ..ScenarioConfig::default()
        };
        assert!(gen_scenario(&noisy).is_err());
        let bad_rate = ScenarioConfig { frac_absent: 1.5, ..ScenarioConfig::default() };
        assert!(gen_scenario(&bad_rate).is_err());
        assert!(ScenarioConfig::preset("nope", 0).is_err());
    }

    #[test]
    fn probabilities_are_clipped() {
        let cfg = ScenarioConfig {
            probability: ProbabilityModel { present_mean: 1.0, present_std: 1.0, absent_mean: 0.0, absent_std: 1.0 },
            ..ScenarioConfig::default()
        };
        let s = gen_scenario(&cfg).unwrap();
        assert!(s.queries.iter().all(|q| (0.0..=1.0).contains(&q.record.existence_prob.unwrap())));
    }
}
