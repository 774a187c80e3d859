use serde::{Deserialize, Serialize};

use super::risk::RiskLedger;
use crate::attacks::{filter_successful, AdvBatch};
use crate::data::Dataset;
use crate::diffnet::DiffNet;
use crate::error::Result;
use crate::uad::{defended_inference, UadModel};

/// Which adversarial samples enter the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdvMode {
    /// Only attacks that fool the undefended network.
    Successful,
    /// Every crafted sample.
    Raw,
}

/// Outcome of one input: rejected, or accepted with a predicted label.
fn outcomes(net: &DiffNet, uad: Option<&UadModel>, x: &nalgebra::DMatrix<f64>) -> Result<Vec<Option<usize>>> {
    if x.nrows() == 0 {
        return Ok(Vec::new());
    }
    match uad {
        Some(u) => Ok(defended_inference(net, u, x)?
            .into_iter()
            .map(|d| (!d.is_rejected()).then(|| d.predicted()))
            .collect()),
        None => Ok(net.predict(x)?.into_iter().map(Some).collect()),
    }
}

/// Counts clean-wrong, clean-rejected and adversarial-accepted-wrong decisions.
/// `N` is the clean sample count.
pub fn risk_ledger_from_run(
    net: &DiffNet,
    uad: Option<&UadModel>,
    clean_eval: &Dataset,
    adv_eval: &AdvBatch,
    mode: AdvMode,
) -> Result<RiskLedger> {
    let labels = clean_eval.require_labels()?;
    let adv = match mode {
        AdvMode::Successful => filter_successful(adv_eval, net)?.0,
        AdvMode::Raw => adv_eval.clone(),
    };
    let mut ledger = RiskLedger {
        n: labels.len(),
        ..RiskLedger::default()
    };
    for (o, &y) in outcomes(net, uad, &clean_eval.images)?.iter().zip(labels) {
        match o {
            None => ledger.n_cln_rej += 1,
            Some(p) if *p != y => ledger.n_cln_inc += 1,
            Some(_) => {}
        }
    }
    for (o, &y) in outcomes(net, uad, &adv.perturbed)?.iter().zip(&adv.labels) {
        if matches!(o, Some(p) if *p != y) {
            ledger.n_adv_inc += 1;
        }
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::diffnet::{Activation, InputDims, LayerParams, NetConfig};
    use crate::error::Error;
    use crate::uad::{ClassGmm, UadModel};

    /// Features equal inputs; class 0 iff x0 > x1.
    fn net() -> DiffNet {
        let mut cfg = NetConfig::dense(2, &[2], 2, 0);
        cfg.activation = Activation::Identity;
        let id = || LayerParams {
            weight: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
        };
        DiffNet::from_params(cfg, vec![id(), id()]).unwrap()
    }

    /// Unit Gaussians at (0.8, 0.2) and (0.2, 0.8); threshold accepts within ~1 unit.
    fn detector(net: &DiffNet) -> UadModel {
        let g = |c: usize, m: [f64; 2]| {
            ClassGmm::new(
                c,
                vec![1.0],
                vec![DVector::from_row_slice(&m)],
                vec![DMatrix::identity(2, 2) * 0.01],
                0.0,
            )
            .unwrap()
        };
        let digest = crate::diffnet::checkpoint::model_digest(net).unwrap();
        // log density at distance d: ln(1/(2π·0.01)) − d²/0.02; reject beyond d ≈ 0.3
        let tau = (1.0 / (2.0 * std::f64::consts::PI * 0.01)).ln() - 0.09 / 0.02;
        UadModel::new(vec![g(0, [0.8, 0.2]), g(1, [0.2, 0.8])], Some(vec![tau, tau]), digest).unwrap()
    }

    fn dataset(rows: &[f64], labels: Vec<usize>) -> Dataset {
        Dataset::new(
            InputDims::new(1, 2, 1),
            DMatrix::from_row_slice(labels.len(), 2, rows),
            Some(labels),
        )
        .unwrap()
    }

    fn adv(rows: &[f64], labels: Vec<usize>, net: &DiffNet) -> AdvBatch {
        let x = DMatrix::from_row_slice(labels.len(), 2, rows);
        let predictions = net.predict(&x).unwrap();
        let success = predictions.iter().zip(&labels).map(|(p, y)| p != y).collect();
        AdvBatch {
            originals: x.clone(),
            perturbed: x,
            labels,
            predictions,
            success,
        }
    }

    #[test]
    fn four_decision_paths() {
        let net = net();
        let uad = detector(&net);
        // clean wrong-but-accepted: near class 1 center, label 0; clean rejected: far point
        let clean = dataset(&[0.2, 0.8, 1.0, 1.0], vec![0, 0]);
        // adversarial accepted as class 1 but label 0; adversarial caught: off-manifold, label 1
        let a = adv(&[0.25, 0.75, 1.0, 0.6], vec![0, 1], &net);
        let l = risk_ledger_from_run(&net, Some(&uad), &clean, &a, AdvMode::Successful).unwrap();
        assert_eq!((l.n_cln_inc, l.n_cln_rej, l.n_adv_inc, l.n), (1, 1, 1, 2));
    }

    #[test]
    fn without_detector_nothing_is_rejected() {
        let net = net();
        let clean = dataset(&[0.2, 0.8, 1.0, 1.0], vec![0, 0]);
        let a = adv(&[0.25, 0.75, 1.0, 0.0], vec![0, 1], &net);
        let l = risk_ledger_from_run(&net, None, &clean, &a, AdvMode::Successful).unwrap();
        assert_eq!(l.n_cln_rej, 0);
        assert_eq!(l.n_adv_inc, 2);
    }

    #[test]
    fn perfect_model_and_detector() {
        let net = net();
        let uad = detector(&net);
        let clean = dataset(&[0.8, 0.2, 0.2, 0.8], vec![0, 1]);
        let a = adv(&[0.6, 1.0, 1.0, 0.6], vec![0, 1], &net);
        let l = risk_ledger_from_run(&net, Some(&uad), &clean, &a, AdvMode::Raw).unwrap();
        assert_eq!((l.n_cln_inc, l.n_cln_rej, l.n_adv_inc), (0, 0, 0));
    }

    #[test]
    fn raw_mode_keeps_failed_attacks() {
        let net = net();
        let clean = dataset(&[0.8, 0.2], vec![0]);
        let a = adv(&[0.8, 0.2, 0.2, 0.8], vec![0, 0], &net);
        let s = risk_ledger_from_run(&net, None, &clean, &a, AdvMode::Successful).unwrap();
        let r = risk_ledger_from_run(&net, None, &clean, &a, AdvMode::Raw).unwrap();
        assert_eq!((s.n_adv_inc, r.n_adv_inc), (1, 1));
    }

    #[test]
    fn uncalibrated_detector_is_state_error() {
        let net = net();
        let mut uad = detector(&net);
        uad.thresholds = None;
        let clean = dataset(&[0.8, 0.2], vec![0]);
        let a = adv(&[0.2, 0.8], vec![0], &net);
        assert!(matches!(
            risk_ledger_from_run(&net, Some(&uad), &clean, &a, AdvMode::Successful),
            Err(Error::State(_))
        ));
    }
}
