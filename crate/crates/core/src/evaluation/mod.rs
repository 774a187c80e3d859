//! Accuracy, detection AUPRC, and the detection-aware risk measure.

mod ledger;
mod metrics;
mod risk;

pub use ledger::{risk_ledger_from_run, AdvMode};
pub use metrics::{accuracy, auprc, auprc_table, average_precision, AuprcTable, DetectionScore};
pub use risk::{risk_with_uad, risk_without_uad, Risk, RiskLedger, RiskWeights};
