//! From probability maps to node classes and patient stages, plus the
//! evaluation metrics.

pub mod candidates;
pub mod forest;
pub mod metrics;
pub mod rules;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::wsi::synth::class_of_diameter;

pub use candidates::{extract_candidates, feret_cells, node_features, LesionCandidate};
pub use forest::{rf_train, ForestConfig, RandomForest};
pub use metrics::{auc, froc, quadratic_kappa, Detection, FrocReport, SlideEvaluation, TruthLesion, FROC_RATES};
pub use rules::{stage_patient, NodeClass, PnStage, NODES_PER_PATIENT};

/// How a node's candidate features become a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClassifier {
    /// Size thresholds on the largest major axis only.
    Rules,
    Forest(RandomForest),
}

/// Class of one node. Without candidates the node is normal regardless of
/// the classifier.
pub fn classify_node(cands: &[LesionCandidate], classifier: &NodeClassifier) -> Result<NodeClass> {
    if cands.is_empty() {
        return Ok(NodeClass::Normal);
    }
    let f = node_features(cands);
    match classifier {
        NodeClassifier::Rules => Ok(class_of_diameter(Some(f[0]))),
        NodeClassifier::Forest(rf) => {
            // a forest fitted on fewer features sees the leading ones
            let c = rf.predict(&f[..rf.n_features.min(f.len())])?;
            Ok(NodeClass::from_index(c).unwrap_or(NodeClass::Normal))
        }
    }
}

/// Quadratic kappa over the five ordered stages.
pub fn stage_kappa(pred: &[PnStage], truth: &[PnStage]) -> Result<f64> {
    let p: alloc::vec::Vec<usize> = pred.iter().map(|s| s.index()).collect();
    let t: alloc::vec::Vec<usize> = truth.iter().map(|s| s.index()).collect();
    quadratic_kappa(&p, &t, PnStage::ALL.len())
}
