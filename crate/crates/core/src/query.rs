use serde::{Deserialize, Serialize};

use crate::gating::FeatureTensor;
use crate::mask::MaskSequence;

/// One referring expression with its loaded ground truth and prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    #[serde(default)]
    pub sequence_id: String,
    /// The expression text, e.g. the transcript of a spoken query.
    #[serde(default)]
    pub transcript: String,
    pub gt: MaskSequence,
    pub pred: MaskSequence,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existence_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureTensor>,
}

impl QueryRecord {
    pub fn new(query_id: impl Into<String>, gt: MaskSequence, pred: MaskSequence) -> Self {
        QueryRecord {
            query_id: query_id.into(),
            sequence_id: String::new(),
            transcript: String::new(),
            gt,
            pred,
            existence_prob: None,
            features: None,
        }
    }

    pub fn with_probability(mut self, p: f64) -> Self {
        self.existence_prob = Some(p);
        self
    }
}
