use serde::{Deserialize, Serialize};

/// Stable identifiers for non-fatal conditions surfaced alongside results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningCode {
    ArmEmpty,
    SmallExpectedCount,
    DegenerateIndex,
    NoMovement,
    ReducedRankMcNemar,
    RowHomogeneityUnavailable,
    SingularCovariance,
    NormalityUnavailable,
    ZeroVarianceDifference,
    ArmsHeterogeneous,
    PerArmResampling,
    BaselineNotFirst,
    AnalysisSkipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: WarningCode,
    pub message: String,
}

impl Warning {
    pub fn new(code: WarningCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}
