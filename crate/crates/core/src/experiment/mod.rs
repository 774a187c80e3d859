//! End-to-end protocol: data, training per regime, attack grid, detector,
//! and the accuracy / detection / risk reports.
//!
//! Output layout under the plan's output directory:
//!
//! ```text
//! data/                     splits, audit record, manifest (synthetic plans)
//! models/{regime}.adsh      checkpoints, plus {regime}_loss.csv traces
//! attacks/{regime}/*.adtn   perturbed test sets, one per attack point
//! detectors/{regime}.adud   calibrated detectors
//! reports/                  accuracy.csv, auprc_*.csv, risk_*.csv, curves/, summary.json
//! run_record.json           hashes, seeds and timings
//! ```
//!
//! Every stage reuses its artifact when present, so an interrupted run
//! resumes where it stopped.

mod plan;
mod report;
mod run;

pub use plan::{parse_activation, parse_adv_mode, parse_layer, AttackGrid, DatasetSource, ExperimentPlan};
pub use report::{accuracy_csv, auprc_csv, emit_curves, risk_csv, write_reports};
pub use run::{
    point_name, run_experiment, run_experiment_with, sha256_file, CellResult, ExperimentSummary, RegimeSummary,
    RunOutcome, RunRecord, RUN_RECORD_FILE, SUMMARY_FILE,
};
