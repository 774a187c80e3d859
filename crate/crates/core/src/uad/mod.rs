//! Clean-data density detector over penultimate features.

mod detector;
mod file;
mod gmm;

pub use detector::{
    calibrate_thresholds, defended_inference, detection_scores, fit_uad, score_inputs, Decision, DiagReg, UadModel,
    UadSettings,
};
pub use file::{decode, encode, load, save};
pub use gmm::{fit_gmm_em, gmm_log_likelihood, ClassGmm, EmSettings, GmmFit};
