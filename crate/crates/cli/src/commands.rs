//! Subcommand implementations. Each takes plain options so the binary and
//! the tests drive the same code.

use std::fs;
use std::path::{Path, PathBuf};

use gateseg_core::gating::{
    apply_gate, fit, score_candidate, sweep_scored, tau_grid, ExistenceHead, FeatureTensor, GatingConfig,
    TrainConfig, Trained,
};
use gateseg_core::metrics::{score_sequences, EmptyGtPolicy, ReportAccumulator};
use gateseg_core::synth::{gen_scenario, ScenarioConfig, RNG_ALGORITHM};
use gateseg_core::{Error as CoreError, MaskSequence, QueryRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::manifest::{load_manifest, Dims, EvalOptions, Manifest, ManifestQuery, MANIFEST_FORMAT_VERSION};
use crate::report::{
    timestamp, write_evaluation, write_sweep, EvaluationReport, QueryRow, ResolvedOptions, SweepReport, TOOL_NAME,
};
use crate::source::{
    load_features, load_mask_source, write_json, write_mask_source, write_npy, write_rle_frames, MaskFormat,
};

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    if jobs == Some(0) {
        return Err(HarnessError::Validation("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Validation(format!("cannot start worker pool: {e}")))
}

fn load_head(path: &Path) -> Result<ExistenceHead> {
    let bytes = fs::read(path).map_err(HarnessError::io(path))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::data(path, format!("malformed head: {e}")))
}

/// Manifest probability if given, otherwise the head's prediction from the
/// query's features.
fn query_probability(m: &Manifest, q: &ManifestQuery, head: Option<&ExistenceHead>) -> Result<Option<f64>> {
    if q.existence_prob.is_some() {
        return Ok(q.existence_prob);
    }
    match (head, &q.features) {
        (Some(head), Some(path)) => {
            let path = m.resolve(path);
            let features = load_features(&path)?;
            let (_, p) = head
                .forward(&features)
                .map_err(|e| HarnessError::data(&path, e.to_string()))?;
            Ok(Some(p))
        }
        _ => Ok(None),
    }
}

fn missing_probabilities(m: &Manifest, head: Option<&ExistenceHead>) -> Vec<String> {
    m.queries
        .iter()
        .filter(|q| q.existence_prob.is_none() && (head.is_none() || q.features.is_none()))
        .map(|q| q.query_id.clone())
        .collect()
}

/// Ground truth, then the prediction checked against the ground truth's shape.
fn load_pair(m: &Manifest, q: &ManifestQuery) -> Result<(MaskSequence, MaskSequence)> {
    let gt = load_mask_source(&m.resolve(&q.gt), m.dims_for(q), q.frames)?;
    let (width, height) = gt.dims();
    let pred = load_mask_source(&m.resolve(&q.pred), Some(Dims { width, height }), Some(gt.len()))?;
    Ok((gt, pred))
}

fn resolve_policy(flag: Option<EmptyGtPolicy>, m: &Manifest) -> EmptyGtPolicy {
    flag.or(m.options.empty_gt_policy).unwrap_or_default()
}

#[derive(Clone, Debug, Default)]
pub struct EvaluateOptions {
    pub manifest: PathBuf,
    pub radius: Option<u32>,
    pub empty_gt_policy: Option<EmptyGtPolicy>,
    pub tau: Option<f64>,
    pub head: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub no_timestamp: bool,
}

/// Loads and scores every query on the worker pool, then writes
/// report.json and report.csv from the calling thread.
pub fn evaluate(opts: &EvaluateOptions) -> Result<EvaluationReport> {
    let m = load_manifest(&opts.manifest)?;
    let radius = opts.radius.or(m.options.radius);
    let policy = resolve_policy(opts.empty_gt_policy, &m);
    let tau = opts.tau.or(m.options.tau);
    let gate = tau.map(GatingConfig::new).transpose().map_err(|e| HarnessError::Validation(e.to_string()))?;
    if radius == Some(0) {
        return Err(HarnessError::Validation("--radius must be at least 1".into()));
    }
    let head = opts.head.as_deref().map(load_head).transpose()?;
    if gate.is_some() {
        let missing = missing_probabilities(&m, head.as_ref());
        if !missing.is_empty() {
            return Err(CoreError::MissingProbability(missing).into());
        }
    }

    let rows = pool(opts.jobs)?.install(|| {
        m.queries
            .par_iter()
            .map(|q| {
                let (gt, pred) = load_pair(&m, q)?;
                let p = query_probability(&m, q, head.as_ref())?;
                let (pred, gated) = match (&gate, p) {
                    (Some(cfg), Some(p)) if cfg.gates(p) => (apply_gate(p, cfg, &pred), true),
                    _ => (pred, false),
                };
                let s = score_sequences(&q.query_id, &pred, &gt, radius, policy)
                    .map_err(|e| HarnessError::data(m.resolve(&q.pred), e.to_string()))?;
                Ok(QueryRow {
                    query_id: q.query_id.clone(),
                    sequence_id: q.sequence_id.clone(),
                    transcript: q.transcript.clone(),
                    frames: gt.len(),
                    existence_prob: p,
                    gated,
                    j: s.j_mean,
                    f: s.f_mean,
                    gt_present: s.gt_present,
                    pred_present: s.pred_present,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut acc = ReportAccumulator::new();
    for row in &rows {
        acc.add(&row.metrics());
    }
    let report = EvaluationReport {
        tool: TOOL_NAME.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        generated_at: timestamp(opts.no_timestamp),
        options: ResolvedOptions {
            radius,
            empty_gt_policy: policy,
            tau,
        },
        summary: acc.report(policy)?,
        queries: rows,
    };
    write_evaluation(&opts.out, &report)?;
    Ok(report)
}

/// Parses `start:stop:step` into a threshold grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || HarnessError::Validation(format!("grid '{spec}' is not of the form start:stop:step"));
    let [a, b, s] = parts[..] else { return Err(bad()) };
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|_| bad());
    tau_grid(parse(a)?, parse(b)?, parse(s)?).map_err(|e| HarnessError::Validation(e.to_string()))
}

pub const DEFAULT_GRID: &str = "0:1:0.1";

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub manifest: PathBuf,
    pub grid: String,
    pub radius: Option<u32>,
    pub empty_gt_policy: Option<EmptyGtPolicy>,
    pub head: Option<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub no_timestamp: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            manifest: PathBuf::new(),
            grid: DEFAULT_GRID.into(),
            radius: None,
            empty_gt_policy: None,
            head: None,
            out: PathBuf::new(),
            jobs: None,
            no_timestamp: false,
        }
    }
}

/// Scores each query gated and ungated once, then sweeps the grid
/// incrementally. Writes sweep.json (with the best threshold) and sweep.csv.
pub fn sweep(opts: &SweepOptions) -> Result<SweepReport> {
    let grid = parse_grid(&opts.grid)?;
    let m = load_manifest(&opts.manifest)?;
    let radius = opts.radius.or(m.options.radius);
    if radius == Some(0) {
        return Err(HarnessError::Validation("--radius must be at least 1".into()));
    }
    let policy = resolve_policy(opts.empty_gt_policy, &m);
    let head = opts.head.as_deref().map(load_head).transpose()?;
    let missing = missing_probabilities(&m, head.as_ref());
    if !missing.is_empty() {
        return Err(CoreError::MissingProbability(missing).into());
    }
    let candidates = pool(opts.jobs)?.install(|| {
        m.queries
            .par_iter()
            .map(|q| {
                let (gt, pred) = load_pair(&m, q)?;
                let mut record = QueryRecord::new(q.query_id.clone(), gt, pred);
                record.existence_prob = query_probability(&m, q, head.as_ref())?;
                score_candidate(&record, radius, policy).map_err(HarnessError::from)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let result = sweep_scored(candidates, &grid, policy)?;
    let report = SweepReport::new(result, radius, policy, timestamp(opts.no_timestamp));
    write_sweep(&opts.out, &report)?;
    Ok(report)
}

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Feature tensor given inline or as a path relative to the dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureRef {
    Path(PathBuf),
    Inline(FeatureTensor),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    /// 1 when the referred object is present.
    pub label: u8,
    pub features: FeatureRef,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDataset {
    pub format_version: u32,
    pub samples: Vec<Sample>,
}

pub fn load_dataset(path: &Path) -> Result<Vec<(FeatureTensor, bool)>> {
    let bytes = fs::read(path).map_err(HarnessError::io(path))?;
    let ds: FeatureDataset =
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::data(path, format!("malformed dataset: {e}")))?;
    if ds.format_version != DATASET_FORMAT_VERSION {
        return Err(HarnessError::Validation(format!(
            "unknown dataset format_version {} (supported: {DATASET_FORMAT_VERSION})",
            ds.format_version
        )));
    }
    let base = path.parent().unwrap_or(Path::new(""));
    ds.samples
        .into_iter()
        .map(|s| {
            let label = match s.label {
                0 => false,
                1 => true,
                other => {
                    return Err(HarnessError::Validation(format!(
                        "sample '{}': label must be 0 or 1, got {other}",
                        s.id
                    )))
                }
            };
            let tensor = match s.features {
                FeatureRef::Inline(t) => t,
                FeatureRef::Path(p) => load_features(&base.join(p))?,
            };
            Ok((tensor, label))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub features: PathBuf,
    pub config: TrainConfig,
    pub out: PathBuf,
}

/// Trains a head and writes head.json plus loss.csv (`epoch,loss`, with a
/// last row for the returned head).
pub fn train_gate(opts: &TrainOptions) -> Result<Trained> {
    let dataset = load_dataset(&opts.features)?;
    let positives = dataset.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == dataset.len() {
        return Err(HarnessError::Validation(format!(
            "training needs both classes; {} has {positives} positive and {} negative samples",
            opts.features.display(),
            dataset.len() - positives
        )));
    }
    if opts.config.hidden == 0 {
        return Err(HarnessError::Validation("--hidden must be at least 1".into()));
    }
    let dims: Vec<usize> = dataset.iter().map(|(f, _)| f.dim()).collect();
    if dims.iter().any(|&d| d != dims[0]) {
        return Err(HarnessError::data(&opts.features, "samples disagree on feature dimension"));
    }
    let trained = fit(&dataset, &opts.config).map_err(|e| match e {
        CoreError::Input(msg) => HarnessError::Validation(msg),
        other => other.into(),
    })?;
    fs::create_dir_all(&opts.out).map_err(HarnessError::io(&opts.out))?;
    write_json(&opts.out.join("head.json"), &trained.head)?;
    let loss_path = opts.out.join("loss.csv");
    let mut w = csv::Writer::from_path(&loss_path).map_err(|e| HarnessError::data(&loss_path, e.to_string()))?;
    let rows = trained.losses.iter().chain(std::iter::once(&trained.final_loss));
    w.write_record(["epoch", "loss"]).map_err(|e| HarnessError::data(&loss_path, e.to_string()))?;
    for (epoch, loss) in rows.enumerate() {
        w.write_record([epoch.to_string(), loss.to_string()])
            .map_err(|e| HarnessError::data(&loss_path, e.to_string()))?;
    }
    w.flush().map_err(HarnessError::io(&loss_path))?;
    Ok(trained)
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub preset: String,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TruthEntry<'a> {
    query_id: &'a str,
    gt_present: bool,
    pred_present: bool,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    rng: &'a str,
    preset: &'a str,
    config: &'a ScenarioConfig,
    queries: Vec<TruthEntry<'a>>,
}

/// Writes a generated scenario as an evaluation layout:
///
/// ```text
/// out/manifest.json     evaluation manifest
/// out/masks/<id>.gt.json, out/masks/<id>.pred.json
/// out/features/<id>.npy (presets with a feature model)
/// out/features.json     train-gate dataset
/// out/truth.json        generator bookkeeping
/// ```
pub fn synth(opts: &SynthOptions) -> Result<Manifest> {
    let cfg = ScenarioConfig::preset(&opts.preset, opts.seed).map_err(|e| HarnessError::Validation(e.to_string()))?;
    let scenario = gen_scenario(&cfg).map_err(|e| HarnessError::Validation(e.to_string()))?;
    let out = &opts.out;
    for sub in ["masks", "features"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    }
    let written = scenario
        .queries
        .par_iter()
        .map(|sq| {
            let q = &sq.record;
            let gt = PathBuf::from(format!("masks/{}.gt.json", q.query_id));
            let pred = PathBuf::from(format!("masks/{}.pred.json", q.query_id));
            write_rle_frames(&q.gt, &out.join(&gt))?;
            write_rle_frames(&q.pred, &out.join(&pred))?;
            let features = match &q.features {
                Some(t) => {
                    let rel = PathBuf::from(format!("features/{}.npy", q.query_id));
                    write_npy(t, &out.join(&rel))?;
                    Some(rel)
                }
                None => None,
            };
            Ok(ManifestQuery {
                query_id: q.query_id.clone(),
                sequence_id: q.sequence_id.clone(),
                transcript: q.transcript.clone(),
                gt,
                pred,
                existence_prob: q.existence_prob,
                features,
                frames: Some(q.gt.len()),
                dims: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        dims: Some(Dims {
            width: cfg.width,
            height: cfg.height,
        }),
        options: EvalOptions::default(),
        queries: written,
        base_dir: out.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;

    let samples: Vec<Sample> = manifest
        .queries
        .iter()
        .zip(&scenario.queries)
        .filter_map(|(mq, sq)| {
            mq.features.as_ref().map(|f| Sample {
                id: mq.query_id.clone(),
                label: sq.truth.gt_present as u8,
                features: FeatureRef::Path(f.clone()),
            })
        })
        .collect();
    write_json(
        &out.join("features.json"),
        &FeatureDataset {
            format_version: DATASET_FORMAT_VERSION,
            samples,
        },
    )?;
    let truth = TruthFile {
        rng: RNG_ALGORITHM,
        preset: &opts.preset,
        config: &cfg,
        queries: scenario
            .queries
            .iter()
            .map(|q| TruthEntry {
                query_id: &q.record.query_id,
                gt_present: q.truth.gt_present,
                pred_present: q.truth.pred_present,
            })
            .collect(),
    };
    write_json(&out.join("truth.json"), &truth)?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct ConvertOptions {
    pub from: PathBuf,
    pub to: PathBuf,
}

/// Lossless PNG-directory / RLE-JSON conversion; formats follow the paths.
pub fn convert(opts: &ConvertOptions) -> Result<MaskFormat> {
    let seq = load_mask_source(&opts.from, None, None)?;
    let format = MaskFormat::infer(&opts.to);
    write_mask_source(&seq, &opts.to, format)?;
    Ok(format)
}
