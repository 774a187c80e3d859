//! Detection-aware adversarial risk.
//!
//! A clean sample costs `r_cln_prd` when accepted but misclassified and
//! `r_cln_uad` when rejected by the detector. An adversarial sample costs
//! `r_adv_prd` when accepted and misclassified; rejected or correctly
//! classified adversarial samples cost nothing. Without a detector the
//! rejection term vanishes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskWeights {
    pub r_cln_prd: f64,
    pub r_cln_uad: f64,
    pub r_adv_prd: f64,
}

impl Default for RiskWeights {
    fn default() -> Self {
        Self {
            r_cln_prd: 1.0,
            r_cln_uad: 1.0,
            r_adv_prd: 1.0,
        }
    }
}

impl RiskWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.r_cln_prd, self.r_cln_uad, self.r_adv_prd];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config(format!(
                "risk weights must be finite and >= 0, got {all:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RiskLedger {
    /// Clean samples accepted but misclassified.
    pub n_cln_inc: usize,
    /// Clean samples rejected by the detector.
    pub n_cln_rej: usize,
    /// Adversarial samples accepted and misclassified.
    pub n_adv_inc: usize,
    /// Normalizer, the number of clean evaluation samples.
    pub n: usize,
}

/// Total risk and its clean / adversarial parts, plus the per-sample average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Risk {
    pub clean: f64,
    pub adversarial: f64,
    pub total: f64,
    pub average: f64,
}

fn check(ledger: &RiskLedger, w: &RiskWeights) -> Result<()> {
    w.validate()?;
    if ledger.n == 0 {
        return Err(Error::input("risk normalizer N must be positive"));
    }
    Ok(())
}

fn assemble(clean: f64, adversarial: f64, n: usize) -> Risk {
    let total = clean + adversarial;
    Risk {
        clean,
        adversarial,
        total,
        average: total / n as f64,
    }
}

/// `R(f) = r_cln_prd·N_cln_inc + r_adv_prd·N_adv_inc`.
pub fn risk_without_uad(ledger: &RiskLedger, w: &RiskWeights) -> Result<Risk> {
    check(ledger, w)?;
    if ledger.n_cln_rej != 0 {
        return Err(Error::input("a ledger without a detector cannot have clean rejections"));
    }
    Ok(assemble(
        w.r_cln_prd * ledger.n_cln_inc as f64,
        w.r_adv_prd * ledger.n_adv_inc as f64,
        ledger.n,
    ))
}

/// `R(f,g) = r_cln_prd·N_cln_inc + r_cln_uad·N_cln_rej + r_adv_prd·N_adv_inc`.
pub fn risk_with_uad(ledger: &RiskLedger, w: &RiskWeights) -> Result<Risk> {
    check(ledger, w)?;
    Ok(assemble(
        w.r_cln_prd * ledger.n_cln_inc as f64 + w.r_cln_uad * ledger.n_cln_rej as f64,
        w.r_adv_prd * ledger.n_adv_inc as f64,
        ledger.n,
    ))
}
