use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gmm::{fit_gmm_em, ClassGmm, EmSettings};
use crate::data::Dataset;
use crate::diffnet::checkpoint::model_digest;
use crate::diffnet::DiffNet;
use crate::error::{Error, Result};
use crate::evaluation::DetectionScore;
use crate::seed;

/// Covariance diagonal regularization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiagReg {
    /// Multiple of the class's mean per-feature variance.
    Relative(f64),
    Absolute(f64),
}

impl DiagReg {
    fn resolve(self, z: &DMatrix<f64>) -> f64 {
        match self {
            DiagReg::Absolute(v) => v,
            DiagReg::Relative(f) => {
                let n = z.nrows() as f64;
                let mean_var = z
                    .column_iter()
                    .map(|c| {
                        let m = c.mean();
                        c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
                    })
                    .sum::<f64>()
                    / z.ncols() as f64;
                // constant features: fall back to an absolute value
                if mean_var > 0.0 {
                    f * mean_var
                } else {
                    f
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UadSettings {
    pub components: usize,
    pub diag_reg: DiagReg,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for UadSettings {
    fn default() -> Self {
        Self {
            components: 1,
            diag_reg: DiagReg::Relative(1e-6),
            tol: 1e-6,
            max_iter: 100,
            seed: 0,
        }
    }
}

impl UadSettings {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::config("uad components must be >= 1"));
        }
        let reg = match self.diag_reg {
            DiagReg::Relative(v) | DiagReg::Absolute(v) => v,
        };
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::config("uad diag_reg must be finite and >= 0"));
        }
        if self.max_iter == 0 || self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::config("uad needs max_iter >= 1 and tol >= 0"));
        }
        Ok(())
    }
}

/// One mixture per class plus optional per-class rejection thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct UadModel {
    pub gmms: Vec<ClassGmm>,
    pub thresholds: Option<Vec<f64>>,
    /// SHA-256 of the checkpoint encoding of the network whose features were fitted.
    pub source_model: [u8; 32],
}

impl UadModel {
    pub fn new(gmms: Vec<ClassGmm>, thresholds: Option<Vec<f64>>, source_model: [u8; 32]) -> Result<Self> {
        if gmms.is_empty() {
            return Err(Error::input("detector needs at least one class"));
        }
        for (i, g) in gmms.iter().enumerate() {
            if g.class_id != i {
                return Err(Error::input(format!("mixture {i} is labeled class {}", g.class_id)));
            }
            if g.dim() != gmms[0].dim() {
                return Err(Error::input("mixtures disagree on feature dimension"));
            }
        }
        if let Some(t) = &thresholds {
            if t.len() != gmms.len() {
                return Err(Error::input(format!(
                    "{} thresholds for {} classes",
                    t.len(),
                    gmms.len()
                )));
            }
            if t.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::input("thresholds must be finite or -inf"));
            }
        }
        Ok(Self {
            gmms,
            thresholds,
            source_model,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.gmms.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.gmms[0].dim()
    }

    pub fn is_calibrated(&self) -> bool {
        self.thresholds.is_some()
    }

    pub fn source_model_hash(&self) -> String {
        hex::encode(self.source_model)
    }

    fn check_net(&self, net: &DiffNet) -> Result<()> {
        if net.num_classes() != self.num_classes() || net.feature_dim() != self.feature_dim() {
            return Err(Error::State(format!(
                "detector expects {} classes / {} features, network has {} / {}",
                self.num_classes(),
                self.feature_dim(),
                net.num_classes(),
                net.feature_dim()
            )));
        }
        if model_digest(net)? != self.source_model {
            return Err(Error::State("detector was fitted on a different network".into()));
        }
        Ok(())
    }
}

/// Fits one mixture per true class on that class's clean penultimate features.
pub fn fit_uad(net: &DiffNet, clean_train: &Dataset, settings: &UadSettings) -> Result<UadModel> {
    settings.validate()?;
    let labels = clean_train.require_labels()?;
    let features = net.forward_inputs(&clean_train.images)?.features;
    let mut gmms = Vec::with_capacity(net.num_classes());
    for class in 0..net.num_classes() {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if rows.is_empty() {
            return Err(Error::config(format!(
                "class {class} has no training samples for the detector"
            )));
        }
        let z = features.select_rows(&rows);
        let em = EmSettings {
            components: settings.components,
            diag_reg: settings.diag_reg.resolve(&z),
            tol: settings.tol,
            max_iter: settings.max_iter,
            seed: seed::derive(settings.seed, &["uad", &class.to_string()]),
        };
        gmms.push(fit_gmm_em(&z, class, &em)?.gmm);
    }
    UadModel::new(gmms, None, model_digest(net)?)
}

/// Predicted class and log-likelihood under that class's mixture, per row of `x`.
pub fn score_inputs(net: &DiffNet, uad: &UadModel, x: &DMatrix<f64>) -> Result<(Vec<usize>, Vec<f64>)> {
    uad.check_net(net)?;
    let fwd = net.forward_inputs(x)?;
    let preds = fwd.predictions();
    let scores = preds
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let z: Vec<f64> = fwd.features.row(i).iter().copied().collect();
            uad.gmms[c].log_likelihood(&z)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((preds, scores))
}

/// Threshold at which `ceil(p·m/100)` of `m` sorted scores fall strictly below.
fn percentile_threshold(sorted: &[f64], p: f64) -> f64 {
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    let k = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[k.min(sorted.len() - 1)]
}

/// Sets `τ_i` to the `p`-th percentile of held-out clean scores among samples
/// predicted as class `i`. The held-out set must not overlap the fit set.
pub fn calibrate_thresholds(
    uad: &UadModel,
    net: &DiffNet,
    held_out_clean: &Dataset,
    percentile: f64,
) -> Result<UadModel> {
    if !(0.0..=50.0).contains(&percentile) {
        return Err(Error::config(format!(
            "percentile must lie in [0, 50], got {percentile}"
        )));
    }
    let (preds, scores) = score_inputs(net, uad, &held_out_clean.images)?;
    let mut thresholds = Vec::with_capacity(uad.num_classes());
    for class in 0..uad.num_classes() {
        let mut s: Vec<f64> = preds
            .iter()
            .zip(&scores)
            .filter(|(p, _)| **p == class)
            .map(|(_, s)| *s)
            .collect();
        if s.is_empty() {
            return Err(Error::config(format!("no held-out samples predicted as class {class}")));
        }
        s.sort_by(f64::total_cmp);
        thresholds.push(percentile_threshold(&s, percentile));
    }
    UadModel::new(uad.gmms.clone(), Some(thresholds), uad.source_model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Decision {
    Rejected { predicted: usize, score: f64 },
    Accepted { label: usize, score: f64 },
}

impl Decision {
    pub fn is_rejected(&self) -> bool {
        matches!(self, Decision::Rejected { .. })
    }

    pub fn score(&self) -> f64 {
        match *self {
            Decision::Rejected { score, .. } | Decision::Accepted { score, .. } => score,
        }
    }

    pub fn predicted(&self) -> usize {
        match *self {
            Decision::Rejected { predicted, .. } => predicted,
            Decision::Accepted { label, .. } => label,
        }
    }
}

/// Classifies each row of `x`, rejecting it when its score falls below the
/// predicted class's threshold.
pub fn defended_inference(net: &DiffNet, uad: &UadModel, x: &DMatrix<f64>) -> Result<Vec<Decision>> {
    let thresholds = uad
        .thresholds
        .as_ref()
        .ok_or_else(|| Error::State("detector thresholds are not calibrated".into()))?;
    let (preds, scores) = score_inputs(net, uad, x)?;
    Ok(preds
        .into_iter()
        .zip(scores)
        .map(|(c, s)| {
            if s < thresholds[c] {
                Decision::Rejected { predicted: c, score: s }
            } else {
                Decision::Accepted { label: c, score: s }
            }
        })
        .collect())
}

/// Scores clean rows followed by adversarial rows for AUPRC.
pub fn detection_scores(
    net: &DiffNet,
    uad: &UadModel,
    clean: &DMatrix<f64>,
    adversarial: &DMatrix<f64>,
) -> Result<Vec<DetectionScore>> {
    let mut out = Vec::with_capacity(clean.nrows() + adversarial.nrows());
    for (x, is_adversarial) in [(clean, false), (adversarial, true)] {
        if x.nrows() == 0 {
            continue;
        }
        let (preds, scores) = score_inputs(net, uad, x)?;
        out.extend(
            preds
                .into_iter()
                .zip(scores)
                .map(|(predicted_class, score)| DetectionScore {
                    score,
                    is_adversarial,
                    predicted_class,
                }),
        );
    }
    Ok(out)
}
