//! White-box adversarial crafting: FGSM, PGD with L∞ projection, and the
//! Carlini & Wagner L2 margin attack with a fixed constant.

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffnet::{argmax, runner_up, Batch, DiffNet, Loss};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
    Cw,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Cw => "cw",
        }
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "pgd" => Ok(AttackMethod::Pgd),
            "cw" | "c&w" => Ok(AttackMethod::Cw),
            other => Err(Error::config(format!("unknown attack method `{other}`"))),
        }
    }
}

impl std::fmt::Display for AttackMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    /// L∞ budget in pixel units. Ignored by C&W.
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub cw_constant: f64,
    pub cw_lr: f64,
    pub clip: [f64; 2],
    pub random_start: bool,
    /// Loss whose input gradient drives FGSM and PGD.
    pub loss: Loss,
    pub seed: u64,
}

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            method: AttackMethod::Fgsm,
            epsilon,
            steps: 1,
            step_size: epsilon,
            cw_constant: 0.0,
            cw_lr: 0.01,
            clip: [0.0, 1.0],
            random_start: false,
            loss: Loss::CrossEntropy,
            seed: 0,
        }
    }

    /// 10 steps of size ε/4, no random start.
    pub fn pgd(epsilon: f64) -> Self {
        Self {
            method: AttackMethod::Pgd,
            steps: 10,
            step_size: epsilon / 4.0,
            ..Self::fgsm(epsilon)
        }
    }

    /// 100 descent steps at learning rate 0.01.
    pub fn cw(constant: f64) -> Self {
        Self {
            method: AttackMethod::Cw,
            epsilon: 0.0,
            steps: 100,
            step_size: 0.0,
            cw_constant: constant,
            ..Self::fgsm(0.0)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.clip;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::config(format!("clip range [{lo}, {hi}] must lie within [0,1]")));
        }
        match self.method {
            AttackMethod::Fgsm | AttackMethod::Pgd => {
                if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
                    return Err(Error::config(format!("epsilon must be >= 0, got {}", self.epsilon)));
                }
                if self.steps == 0 {
                    return Err(Error::config("steps must be >= 1"));
                }
                if self.method == AttackMethod::Fgsm && (self.steps != 1 || self.step_size != self.epsilon) {
                    return Err(Error::config("FGSM requires steps = 1 and step_size = epsilon"));
                }
                if self.method == AttackMethod::Pgd && !(self.step_size > 0.0 || self.epsilon == 0.0) {
                    return Err(Error::config("PGD step_size must be > 0"));
                }
            }
            AttackMethod::Cw => {
                if !(self.cw_constant >= 0.0 && self.cw_constant.is_finite()) {
                    return Err(Error::config("C&W constant must be >= 0"));
                }
                if self.cw_lr.is_nan() || self.cw_lr <= 0.0 {
                    return Err(Error::config("C&W learning rate must be > 0"));
                }
                if self.steps == 0 {
                    return Err(Error::config("steps must be >= 1"));
                }
            }
        }
        Ok(())
    }

    /// Nominal budget used for reports: ε for L∞ attacks, c for C&W.
    pub fn strength(&self) -> f64 {
        match self.method {
            AttackMethod::Cw => self.cw_constant,
            _ => self.epsilon,
        }
    }
}

/// Adversarial counterparts of a labeled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvBatch {
    pub originals: DMatrix<f64>,
    pub perturbed: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Network prediction on each perturbed sample.
    pub predictions: Vec<usize>,
    /// `predictions[i] != labels[i]`.
    pub success: Vec<bool>,
}

impl AdvBatch {
    /// Records `net`'s predictions on `perturbed`.
    pub fn from_perturbed(
        net: &DiffNet,
        originals: DMatrix<f64>,
        perturbed: DMatrix<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if originals.shape() != perturbed.shape() || labels.len() != perturbed.nrows() {
            return Err(Error::input("originals, perturbed inputs and labels disagree in shape"));
        }
        let predictions = net.predict(&perturbed)?;
        let success = predictions.iter().zip(&labels).map(|(p, y)| p != y).collect();
        Ok(Self {
            originals,
            perturbed,
            labels,
            predictions,
            success,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn success_count(&self) -> usize {
        self.success.iter().filter(|&&s| s).count()
    }

    /// Largest per-sample L∞ distance between original and perturbed inputs.
    pub fn max_linf(&self) -> f64 {
        self.perturbed
            .iter()
            .zip(self.originals.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Perturbed inputs as a labeled batch (true labels).
    pub fn perturbed_batch(&self) -> Result<Batch> {
        Batch::new(self.perturbed.clone(), Some(self.labels.clone()))
    }

    /// Keeps the rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            originals: self.originals.select_rows(indices),
            perturbed: self.perturbed.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            predictions: indices.iter().map(|&i| self.predictions[i]).collect(),
            success: indices.iter().map(|&i| self.success[i]).collect(),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One signed-gradient ascent step followed by clipping to the box and
/// projection onto the ε-ball around `origin`.
fn signed_step(
    current: &mut DMatrix<f64>,
    grad: &DMatrix<f64>,
    origin: &DMatrix<f64>,
    step: f64,
    eps: f64,
    clip: [f64; 2],
) {
    for ((x, g), o) in current.iter_mut().zip(grad.iter()).zip(origin.iter()) {
        let moved = (*x + step * sign(*g)).clamp(clip[0], clip[1]);
        *x = moved.max(o - eps).min(o + eps);
    }
}

/// `x' = clip(x + ε·sign(∇ₓ xent))`.
pub fn fgsm(net: &DiffNet, batch: &Batch, epsilon: f64) -> Result<AdvBatch> {
    craft(net, batch, &AttackSpec::fgsm(epsilon))
}

/// Iterated signed-gradient steps projected onto the L∞ ball, optionally from
/// a uniform random start inside it.
pub fn pgd(net: &DiffNet, batch: &Batch, spec: &AttackSpec) -> Result<AdvBatch> {
    spec.validate()?;
    let labels = batch.require_labels()?.to_vec();
    let origin = &batch.inputs;
    let eps = spec.epsilon;
    let mut current = origin.clone();
    if spec.random_start && eps > 0.0 {
        for (r, mut row) in current.row_iter_mut().enumerate() {
            let mut rng = seed::derived_rng(spec.seed, &["pgd-start", &r.to_string()]);
            for v in row.iter_mut() {
                *v = (*v + rng.random_range(-eps..=eps)).clamp(spec.clip[0], spec.clip[1]);
            }
        }
    }
    for _ in 0..spec.steps {
        let grad = net.input_gradient_raw(&current, &labels, spec.loss)?;
        signed_step(&mut current, &grad, origin, spec.step_size, eps, spec.clip);
    }
    AdvBatch::from_perturbed(net, origin.clone(), current, labels)
}

/// Minimizes `‖δ‖² + c·max(z_y − max_{j≠y} z_j, 0)` by fixed-step gradient
/// descent, clipping `x + δ` into the box after every step. Returns, per
/// sample, the misclassifying iterate with the lowest objective, or the
/// lowest-objective iterate if none misclassifies.
pub fn cw(net: &DiffNet, batch: &Batch, spec: &AttackSpec) -> Result<AdvBatch> {
    spec.validate()?;
    const KAPPA: f64 = 0.0;
    let labels = batch.require_labels()?.to_vec();
    let origin = &batch.inputs;
    let c = spec.cw_constant;
    let n = origin.nrows();
    let mut current = origin.clone();
    let mut best = origin.clone();
    let mut best_obj = vec![f64::INFINITY; n];
    let mut best_fooled = vec![false; n];

    for step in 0..=spec.steps {
        let (logits, margin_grad) = net.logits_and_input_gradient(&current, |zt| {
            // zt is C x B; weight each sample's margin gradient by c when active
            let mut w = DMatrix::zeros(zt.nrows(), zt.ncols());
            for (b, &y) in labels.iter().enumerate() {
                let col = zt.column(b);
                let j = runner_up(col.iter().copied(), y);
                if col[y] - col[j] > -KAPPA {
                    w[(y, b)] = c;
                    w[(j, b)] = -c;
                }
            }
            w
        })?;
        for b in 0..n {
            let z = logits.row(b);
            let y = labels[b];
            let j = runner_up(z.iter().copied(), y);
            let dist: f64 = current
                .row(b)
                .iter()
                .zip(origin.row(b).iter())
                .map(|(a, o)| (a - o).powi(2))
                .sum();
            let objective = dist + c * (z[y] - z[j]).max(-KAPPA);
            if !objective.is_finite() {
                return Err(Error::numeric(format!(
                    "C&W objective non-finite for sample {b} at step {step}"
                )));
            }
            let fooled = argmax(z.iter().copied()) != y;
            let better = match (fooled, best_fooled[b]) {
                (true, false) => true,
                (false, true) => false,
                _ => objective < best_obj[b],
            };
            if better {
                best_obj[b] = objective;
                best_fooled[b] = fooled;
                best.row_mut(b).copy_from(&current.row(b));
            }
        }
        if step == spec.steps {
            break;
        }
        for ((x, o), g) in current.iter_mut().zip(origin.iter()).zip(margin_grad.iter()) {
            let delta = *x - o;
            let stepped = delta - spec.cw_lr * (2.0 * delta + g);
            *x = (o + stepped).clamp(spec.clip[0], spec.clip[1]);
        }
    }
    AdvBatch::from_perturbed(net, origin.clone(), best, labels)
}

/// L∞ signed-gradient attack with a separate budget per row; each row takes
/// `steps` steps of `budget * step_ratio`. FGSM is `steps = 1, step_ratio = 1`.
pub(crate) fn linf_with_budgets(
    net: &DiffNet,
    inputs: &DMatrix<f64>,
    labels: &[usize],
    budgets: &[f64],
    steps: usize,
    step_ratio: f64,
) -> Result<DMatrix<f64>> {
    let mut current = inputs.clone();
    for _ in 0..steps {
        let grad = net.input_gradient_raw(&current, labels, Loss::CrossEntropy)?;
        for (r, &eps) in budgets.iter().enumerate() {
            for c in 0..current.ncols() {
                let o = inputs[(r, c)];
                let moved = (current[(r, c)] + eps * step_ratio * sign(grad[(r, c)])).clamp(0.0, 1.0);
                current[(r, c)] = moved.max(o - eps).min(o + eps);
            }
        }
    }
    Ok(current)
}

/// Dispatches on `spec.method`.
pub fn craft(net: &DiffNet, batch: &Batch, spec: &AttackSpec) -> Result<AdvBatch> {
    match spec.method {
        AttackMethod::Fgsm | AttackMethod::Pgd => pgd(net, batch, spec),
        AttackMethod::Cw => cw(net, batch, spec),
    }
}

/// Keeps samples whose prediction on the perturbed input differs from the
/// true label, re-predicting with `net`. Returns the filtered batch and its size.
pub fn filter_successful(adv: &AdvBatch, net: &DiffNet) -> Result<(AdvBatch, usize)> {
    if adv.is_empty() {
        return Ok((adv.clone(), 0));
    }
    let predictions = net.predict(&adv.perturbed)?;
    let keep: Vec<usize> = (0..adv.len()).filter(|&i| predictions[i] != adv.labels[i]).collect();
    let mut out = adv.select(&keep);
    out.predictions = keep.iter().map(|&i| predictions[i]).collect();
    out.success = vec![true; keep.len()];
    let count = keep.len();
    Ok((out, count))
}

#[cfg(test)]
mod tests {
    use nalgebra::DVector;

    use super::*;
    use crate::diffnet::{Activation, LayerParams, NetConfig};

    fn linear_net(weight: &[f64], classes: usize) -> DiffNet {
        let inputs = weight.len() / classes;
        let config = NetConfig {
            activation: Activation::Identity,
            ..NetConfig::dense(inputs, &[], classes, 0)
        };
        DiffNet::from_params(
            config,
            vec![LayerParams {
                weight: DMatrix::from_row_slice(classes, inputs, weight),
                bias: DVector::zeros(classes),
            }],
        )
        .unwrap()
    }

    fn identity2() -> DiffNet {
        linear_net(&[1.0, 0.0, 0.0, 1.0], 2)
    }

    #[test]
    fn fgsm_zero_budget_is_identity() {
        let net = identity2();
        let batch = Batch::from_rows(&[vec![0.6, 0.4], vec![0.1, 0.95]], Some(vec![0, 1])).unwrap();
        let adv = fgsm(&net, &batch, 0.0).unwrap();
        assert_eq!(adv.perturbed, batch.inputs);
    }

    #[test]
    fn fgsm_hand_case() {
        let net = identity2();
        let batch = Batch::from_rows(&[vec![0.6, 0.4]], Some(vec![0])).unwrap();
        let adv = fgsm(&net, &batch, 0.1).unwrap();
        assert!((adv.perturbed[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((adv.perturbed[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fgsm_clips_to_box() {
        // label 1: gradient signs are (+, -)
        let net = identity2();
        let batch = Batch::from_rows(&[vec![0.98, 0.02]], Some(vec![1])).unwrap();
        let adv = fgsm(&net, &batch, 0.05).unwrap();
        assert_eq!(adv.perturbed.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn pgd_single_step_equals_fgsm() {
        let net = DiffNet::build(NetConfig::dense(6, &[5], 3, 4)).unwrap();
        let batch = Batch::from_rows(
            &[vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![0.9, 0.0, 1.0, 0.3, 0.3, 0.7]],
            Some(vec![2, 0]),
        )
        .unwrap();
        let spec = AttackSpec {
            method: AttackMethod::Pgd,
            steps: 1,
            step_size: 0.07,
            ..AttackSpec::pgd(0.07)
        };
        assert_eq!(
            pgd(&net, &batch, &spec).unwrap().perturbed,
            fgsm(&net, &batch, 0.07).unwrap().perturbed
        );
    }

    #[test]
    fn pgd_reaches_fgsm_corner_on_linear_model() {
        // constant gradient sign on a linear model
        let net = identity2();
        let batch = Batch::from_rows(&[vec![0.6, 0.4]], Some(vec![0])).unwrap();
        let eps = 0.1;
        let spec = AttackSpec::pgd(eps);
        let needed = (eps / spec.step_size).ceil() as usize;
        let short = AttackSpec {
            steps: needed,
            ..spec.clone()
        };
        let a = pgd(&net, &batch, &short).unwrap();
        let f = fgsm(&net, &batch, eps).unwrap();
        for (x, y) in a.perturbed.iter().zip(f.perturbed.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // further steps stay at the corner
        let full = pgd(&net, &batch, &spec).unwrap();
        for (x, y) in full.perturbed.iter().zip(f.perturbed.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pgd_random_start_is_seeded_and_bounded() {
        let net = DiffNet::build(NetConfig::dense(4, &[3], 2, 1)).unwrap();
        let batch = Batch::from_rows(&[vec![0.5; 4], vec![0.0, 1.0, 0.5, 0.2]], Some(vec![0, 1])).unwrap();
        let spec = AttackSpec {
            random_start: true,
            seed: 99,
            ..AttackSpec::pgd(0.05)
        };
        let a = pgd(&net, &batch, &spec).unwrap();
        let b = pgd(&net, &batch, &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.max_linf() <= 0.05 + 1e-9);
        assert!(a.perturbed.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn cw_zero_constant_is_identity() {
        let net = DiffNet::build(NetConfig::dense(4, &[3], 2, 1)).unwrap();
        let batch = Batch::from_rows(&[vec![0.3, 0.6, 0.1, 0.8]], Some(vec![1])).unwrap();
        let adv = cw(&net, &batch, &AttackSpec::cw(0.0)).unwrap();
        assert!(adv.max_linf() <= 1e-6);
    }

    #[test]
    fn cw_keeps_already_misclassified_input() {
        let net = identity2();
        // z = (0.3, 0.7) so label 0 is already wrong
        let batch = Batch::from_rows(&[vec![0.3, 0.7]], Some(vec![0])).unwrap();
        let adv = cw(&net, &batch, &AttackSpec::cw(10.0)).unwrap();
        assert_eq!(adv.perturbed, batch.inputs);
        assert!(adv.success[0]);
    }

    #[test]
    fn cw_large_constant_crosses_linear_boundary() {
        // boundary of the identity model is x0 = x1
        let net = identity2();
        let batch = Batch::from_rows(&[vec![0.6, 0.4]], Some(vec![0])).unwrap();
        let adv = cw(&net, &batch, &AttackSpec::cw(100.0)).unwrap();
        let x = adv.perturbed.row(0);
        assert!(x[1] > x[0], "expected to cross x0 = x1, got {x}");
        assert_eq!(adv.predictions, vec![1]);
    }

    #[test]
    fn filter_counts_flips() {
        let net = identity2();
        let originals = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.6, 0.4]);
        let perturbed = DMatrix::from_row_slice(2, 2, &[0.45, 0.55, 0.55, 0.45]);
        let adv = AdvBatch::from_perturbed(&net, originals, perturbed, vec![0, 0]).unwrap();
        let (kept, count) = filter_successful(&adv, &net).unwrap();
        assert_eq!(count, 1);
        assert_eq!(
            kept.perturbed.row(0).iter().copied().collect::<Vec<_>>(),
            vec![0.45, 0.55]
        );

        let clean = AdvBatch::from_perturbed(&net, adv.originals.clone(), adv.originals.clone(), vec![0, 0]).unwrap();
        let (kept, count) = filter_successful(&clean, &net).unwrap();
        assert_eq!((kept.len(), count), (0, 0));
    }

    #[test]
    fn spec_validation() {
        assert!(AttackSpec {
            steps: 3,
            ..AttackSpec::fgsm(0.1)
        }
        .validate()
        .is_err());
        assert!(AttackSpec::fgsm(-0.1).validate().is_err());
        assert!(AttackSpec {
            clip: [0.5, 0.2],
            ..AttackSpec::pgd(0.1)
        }
        .validate()
        .is_err());
        assert!(AttackSpec::pgd(0.0).validate().is_ok());
        assert!(AttackSpec::cw(1.0).validate().is_ok());
    }
}
