//! Node classes and the patient pN-stage rule table.

use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Normal,
    Itc,
    Micro,
    Macro,
}

impl NodeClass {
    pub const ALL: [NodeClass; 4] = [NodeClass::Normal, NodeClass::Itc, NodeClass::Micro, NodeClass::Macro];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Ordered patient stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PnStage {
    #[serde(rename = "pN0")]
    PN0,
    #[serde(rename = "pN0(i+)")]
    PN0ItcOnly,
    #[serde(rename = "pN1mi")]
    PN1Mi,
    #[serde(rename = "pN1")]
    PN1,
    #[serde(rename = "pN2")]
    PN2,
}

impl PnStage {
    pub const ALL: [PnStage; 5] = [PnStage::PN0, PnStage::PN0ItcOnly, PnStage::PN1Mi, PnStage::PN1, PnStage::PN2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            PnStage::PN0 => "pN0",
            PnStage::PN0ItcOnly => "pN0(i+)",
            PnStage::PN1Mi => "pN1mi",
            PnStage::PN1 => "pN1",
            PnStage::PN2 => "pN2",
        }
    }
}

pub const NODES_PER_PATIENT: usize = 5;

/// pN stage from five node classes:
/// no metastasis → pN0; only ITC → pN0(i+); micro but no macro → pN1mi;
/// at least one macro with 1–3 involved (micro or macro) nodes → pN1, with
/// 4 or more → pN2.
pub fn stage_patient(nodes: &[NodeClass]) -> Result<PnStage> {
    if nodes.len() != NODES_PER_PATIENT {
        return Err(Error::Data(format!(
            "patient has {} nodes, expected {NODES_PER_PATIENT}",
            nodes.len()
        )));
    }
    let count = |c: NodeClass| nodes.iter().filter(|&&n| n == c).count();
    let (itc, micro, mac) = (count(NodeClass::Itc), count(NodeClass::Micro), count(NodeClass::Macro));
    Ok(if mac > 0 {
        if micro + mac >= 4 {
            PnStage::PN2
        } else {
            PnStage::PN1
        }
    } else if micro > 0 {
        PnStage::PN1Mi
    } else if itc > 0 {
        PnStage::PN0ItcOnly
    } else {
        PnStage::PN0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use NodeClass::*;

    #[test]
    fn table_rows() {
        assert_eq!(stage_patient(&[Normal; 5]).unwrap(), PnStage::PN0);
        assert_eq!(stage_patient(&[Itc, Normal, Normal, Normal, Normal]).unwrap(), PnStage::PN0ItcOnly);
        assert_eq!(stage_patient(&[Micro, Itc, Micro, Micro, Micro]).unwrap(), PnStage::PN1Mi);
        assert_eq!(stage_patient(&[Macro, Micro, Micro, Macro, Normal]).unwrap(), PnStage::PN2);
        assert_eq!(stage_patient(&[Macro, Micro, Itc, Itc, Normal]).unwrap(), PnStage::PN1);
        assert!(stage_patient(&[Normal; 4]).is_err());
    }
}
