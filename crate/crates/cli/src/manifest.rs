//! Evaluation manifest: one JSON document listing every query and where its
//! masks live.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "dims": {"width": 640, "height": 480},
//!   "options": {"radius": 7, "empty_gt_policy": "exclude", "tau": 0.8},
//!   "queries": [
//!     {"query_id": "q1", "sequence_id": "v1", "transcript": "the dog on the left",
//!      "gt": "masks/q1.gt.json", "pred": "masks/q1.pred", "existence_prob": 0.93,
//!      "features": "features/q1.npy", "frames": 50}
//!   ]
//! }
//! ```
//!
//! Mask locators are either a directory of `%05d.png` frames or an RLE-JSON
//! file holding an array of `{"w", "h", "counts"}` frames. Relative paths
//! resolve against the manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use gateseg_core::metrics::EmptyGtPolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_gt_policy: Option<EmptyGtPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl EvalOptions {
    fn is_empty(&self) -> bool {
        *self == EvalOptions::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestQuery {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub sequence_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub transcript: String,
    pub gt: PathBuf,
    pub pred: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existence_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<PathBuf>,
    /// Expected frame count; taken from the ground truth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Dims>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Dims>,
    #[serde(default, skip_serializing_if = "EvalOptions::is_empty")]
    pub options: EvalOptions,
    pub queries: Vec<ManifestQuery>,
    /// Directory relative locators resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn dims_for(&self, q: &ManifestQuery) -> Option<Dims> {
        q.dims.or(self.dims)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyManifest,
    MissingValue,
    DuplicateId,
    UnresolvableRef,
    OutOfRange,
}

/// One invariant violation, located by query id and field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.query_id {
            Some(id) => write!(f, "query '{id}', field '{}': {}", self.field, self.message),
            None => write!(f, "field '{}': {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("unknown manifest format_version {found} (supported: {MANIFEST_FORMAT_VERSION})")]
    UnknownVersion { found: u32 },

    #[error("invalid manifest:\n  {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n  "))]
    Invalid(Vec<Violation>),
}

impl ManifestError {
    /// Stable machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            ManifestError::Io { .. } => "io",
            ManifestError::Parse { .. } => "parse",
            ManifestError::UnknownVersion { .. } => "unknown_version",
            ManifestError::Invalid(_) => "invalid",
        }
    }
}

/// Reads and fully validates a manifest, reporting every violation at once.
pub fn load_manifest(path: &Path) -> Result<Manifest, ManifestError> {
    let bytes = std::fs::read(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: serde_json::Value = serde_json::from_slice(&bytes).map_err(|source| ManifestError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    // Check the version before the schema so newer documents get a clear error.
    if let Some(found) = raw.get("format_version").and_then(serde_json::Value::as_u64) {
        if found != MANIFEST_FORMAT_VERSION as u64 {
            return Err(ManifestError::UnknownVersion { found: found as u32 });
        }
    }
    let mut manifest: Manifest = serde_json::from_value(raw).map_err(|source| ManifestError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let violations = validate(&manifest);
    if !violations.is_empty() {
        return Err(ManifestError::Invalid(violations));
    }
    Ok(manifest)
}

pub fn validate(m: &Manifest) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, query_id: Option<&str>, field: &str, message: String| {
        out.push(Violation {
            kind,
            query_id: query_id.map(str::to_string),
            field: field.to_string(),
            message,
        })
    };
    if m.queries.is_empty() {
        push(ViolationKind::EmptyManifest, None, "queries", "manifest lists no queries".into());
    }
    if let Some(tau) = m.options.tau {
        if !(0.0..=1.0).contains(&tau) {
            push(ViolationKind::OutOfRange, None, "options.tau", format!("{tau} is outside [0, 1]"));
        }
    }
    for dims in m.dims.iter().chain(m.queries.iter().filter_map(|q| q.dims.as_ref())) {
        if dims.width == 0 || dims.height == 0 {
            push(ViolationKind::OutOfRange, None, "dims", "width and height must be positive".into());
        }
    }
    let mut seen = HashSet::new();
    for q in &m.queries {
        let id = q.query_id.as_str();
        if id.is_empty() {
            push(ViolationKind::MissingValue, None, "query_id", "query_id must not be empty".into());
        } else if !seen.insert(id) {
            push(ViolationKind::DuplicateId, Some(id), "query_id", format!("duplicate query_id '{id}'"));
        }
        for (field, path) in [("gt", Some(&q.gt)), ("pred", Some(&q.pred)), ("features", q.features.as_ref())] {
            if let Some(path) = path {
                let full = m.resolve(path);
                if !full.exists() {
                    push(ViolationKind::UnresolvableRef, Some(id), field, format!("{} does not exist", full.display()));
                }
            }
        }
        if let Some(p) = q.existence_prob {
            if !(0.0..=1.0).contains(&p) {
                push(ViolationKind::OutOfRange, Some(id), "existence_prob", format!("{p} is outside [0, 1]"));
            }
        }
        if q.frames == Some(0) {
            push(ViolationKind::OutOfRange, Some(id), "frames", "frame count must be positive".into());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn write(dir: &Path, name: &str, body: &serde_json::Value) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, serde_json::to_vec_pretty(body).unwrap()).unwrap();
        path
    }

    fn touch(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), "[]").unwrap();
    }

    #[test]
    fn minimal_manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "gt.json");
        touch(dir.path(), "pred.json");
        let body = json!({
            "format_version": 1,
            "queries": [{"query_id": "q1", "gt": "gt.json", "pred": "pred.json"}]
        });
        let path = write(dir.path(), "manifest.json", &body);
        let m = load_manifest(&path).unwrap();
        assert_eq!(serde_json::to_value(&m).unwrap(), body);
    }

    #[test]
    fn duplicate_ids_are_named() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.json");
        let body = json!({
            "format_version": 1,
            "queries": [
                {"query_id": "dup", "gt": "a.json", "pred": "a.json"},
                {"query_id": "dup", "gt": "a.json", "pred": "a.json"}
            ]
        });
        let err = load_manifest(&write(dir.path(), "m.json", &body)).unwrap_err();
        match err {
            ManifestError::Invalid(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].kind, ViolationKind::DuplicateId);
                assert_eq!(v[0].query_id.as_deref(), Some("dup"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn reports_every_violation() {
        let dir = tempfile::tempdir().unwrap();
        let body = json!({
            "format_version": 1,
            "options": {"tau": 2.0},
            "queries": [
                {"query_id": "a", "gt": "missing.json", "pred": "also-missing", "existence_prob": -0.5, "frames": 0}
            ]
        });
        let err = load_manifest(&write(dir.path(), "m.json", &body)).unwrap_err();
        let ManifestError::Invalid(v) = err else { panic!("expected violations") };
        let kinds: Vec<_> = v.iter().map(|x| (x.kind, x.field.as_str())).collect();
        assert_eq!(
            kinds,
            vec![
                (ViolationKind::OutOfRange, "options.tau"),
                (ViolationKind::UnresolvableRef, "gt"),
                (ViolationKind::UnresolvableRef, "pred"),
                (ViolationKind::OutOfRange, "existence_prob"),
                (ViolationKind::OutOfRange, "frames"),
            ]
        );
    }

    #[test]
    fn distinct_error_classes() {
        let dir = tempfile::tempdir().unwrap();
        let v2 = write(dir.path(), "v2.json", &json!({"format_version": 2, "queries": []}));
        assert_eq!(load_manifest(&v2).unwrap_err().code(), "unknown_version");
        let empty = write(dir.path(), "e.json", &json!({"format_version": 1, "queries": []}));
        assert_eq!(load_manifest(&empty).unwrap_err().code(), "invalid");
        std::fs::write(dir.path().join("bad.json"), "{not json").unwrap();
        assert_eq!(load_manifest(&dir.path().join("bad.json")).unwrap_err().code(), "parse");
        assert_eq!(load_manifest(&dir.path().join("nope.json")).unwrap_err().code(), "io");
        let unknown = write(dir.path(), "u.json", &json!({"format_version": 1, "queries": [], "extra": 1}));
        assert_eq!(load_manifest(&unknown).unwrap_err().code(), "parse");
    }
}
