//! Natural training (NT), supervised adversarial training (AT) and
//! semi-supervised adversarial training (SSAT).
//!
//! SSAT minimizes `L_sup + λ·L_unsup`, where both terms are cross-entropy on
//! minibatches that mix clean samples with FGSM-perturbed ones; `L_unsup`
//! uses pseudo-labels predicted for the unlabeled pool.
//!
//! Pseudo-labels come from a separate copy of the initial network trained
//! for `warmup_epochs` of NT; they are assigned once and then frozen. The
//! SSAT trajectory itself starts from the same initialization as NT and AT,
//! so SSAT with `λ = 0` retraces AT exactly.
//!
//! Every random draw comes from a stream derived from the config seed and
//! its role (labeled shuffle, labeled budgets, unlabeled shuffle, ...).

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackMethod};
use crate::binio;
use crate::data::Dataset;
use crate::diffnet::{Batch, DiffNet, Loss};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Nt,
    At,
    Ssat,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Nt => "nt",
            Regime::At => "at",
            Regime::Ssat => "ssat",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt" => Ok(Regime::Nt),
            "at" => Ok(Regime::At),
            "ssat" => Ok(Regime::Ssat),
            other => Err(Error::config(format!("unknown regime `{other}`"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda: f64,
    /// Training-time budgets are drawn per sample from `U[lo, hi]`.
    pub train_eps: [f64; 2],
    /// Share of each minibatch replaced by adversarial samples.
    pub adv_fraction: f64,
    /// FGSM, or PGD with 10 steps of ε/4.
    pub craft_method: AttackMethod,
    /// NT epochs for the pseudo-labeling network.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Nt,
            epochs: 10,
            batch_size: 64,
            lr: 0.1,
            lambda: 5.0,
            train_eps: [0.001, 0.003],
            adv_fraction: 0.5,
            craft_method: AttackMethod::Fgsm,
            warmup_epochs: 2,
            seed: 0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "regime",
    "epochs",
    "batch_size",
    "lr",
    "lambda",
    "eps_lo",
    "eps_hi",
    "adv_fraction",
    "craft_method",
    "warmup_epochs",
    "seed",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let [lo, hi] = self.train_eps;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::config(format!(
                "eps range [{lo}, {hi}] must satisfy 0 <= lo <= hi"
            )));
        }
        if !(self.adv_fraction > 0.0 && self.adv_fraction <= 1.0) {
            return Err(Error::config("adv_fraction must lie in (0, 1]"));
        }
        if self.craft_method == AttackMethod::Cw {
            return Err(Error::config("training-time crafting supports fgsm or pgd"));
        }
        Ok(())
    }

    /// Reads the keys in [`TRAIN_KEYS`] with an optional `prefix`, falling back to `base`.
    pub fn from_kv(kv: &KvFile, prefix: &str, base: TrainConfig) -> Result<Self> {
        let key = |k: &str| format!("{prefix}{k}");
        let cfg = TrainConfig {
            regime: kv.get_or(&key("regime"), base.regime)?,
            epochs: kv.get_or(&key("epochs"), base.epochs)?,
            batch_size: kv.get_or(&key("batch_size"), base.batch_size)?,
            lr: kv.get_or(&key("lr"), base.lr)?,
            lambda: kv.get_or(&key("lambda"), base.lambda)?,
            train_eps: [
                kv.get_or(&key("eps_lo"), base.train_eps[0])?,
                kv.get_or(&key("eps_hi"), base.train_eps[1])?,
            ],
            adv_fraction: kv.get_or(&key("adv_fraction"), base.adv_fraction)?,
            craft_method: kv.get_or(&key("craft_method"), base.craft_method)?,
            warmup_epochs: kv.get_or(&key("warmup_epochs"), base.warmup_epochs)?,
            seed: kv.get_or(&key("seed"), base.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Unlabeled inputs with frozen argmax pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSet {
    pub data: Dataset,
}

impl PseudoLabeledSet {
    pub fn labels(&self) -> &[usize] {
        self.data.labels.as_deref().unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Fraction of pseudo-labels that agree with `truth`.
    pub fn agreement(&self, truth: &[usize]) -> f64 {
        if truth.is_empty() {
            return 0.0;
        }
        let hits = self.labels().iter().zip(truth).filter(|(a, b)| a == b).count();
        hits as f64 / truth.len() as f64
    }
}

/// Assigns each unlabeled sample the argmax class of `net` (lowest index on ties).
pub fn pseudo_label(net: &DiffNet, unlabeled: &Dataset) -> Result<PseudoLabeledSet> {
    let labels = if unlabeled.is_empty() {
        Vec::new()
    } else {
        net.predict(&unlabeled.images)?
    };
    Ok(PseudoLabeledSet {
        data: Dataset {
            dims: unlabeled.dims,
            images: unlabeled.images.clone(),
            labels: Some(labels),
        },
    })
}

/// A minibatch with its adversarial rows marked.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub batch: Batch,
    /// Number of leading clean rows; the rest are adversarial.
    pub clean: usize,
    /// Budget used for each adversarial row.
    pub epsilons: Vec<f64>,
}

/// Keeps the first `B − ⌊B·f⌋` rows clean and replaces the remaining rows by
/// adversarial versions crafted with per-sample budgets `ε ~ U[lo, hi]`.
/// Labels are carried over unchanged.
pub fn adversarial_minibatch(
    net: &DiffNet,
    batch: &Batch,
    eps_range: [f64; 2],
    adv_fraction: f64,
    method: AttackMethod,
    rng: &mut seed::Rng,
) -> Result<MixedBatch> {
    let labels = batch.require_labels()?;
    let n = batch.len();
    let n_adv = (n as f64 * adv_fraction).floor() as usize;
    let clean = n - n_adv;
    let [lo, hi] = eps_range;
    let epsilons: Vec<f64> = (0..n_adv)
        .map(|_| if lo == hi { lo } else { rng.random_range(lo..=hi) })
        .collect();
    let mut inputs = batch.inputs.clone();
    if n_adv > 0 {
        let rows: Vec<usize> = (clean..n).collect();
        let adv_in = batch.inputs.select_rows(&rows);
        let (steps, ratio) = match method {
            AttackMethod::Pgd => (10, 0.25),
            _ => (1, 1.0),
        };
        let crafted = attacks::linf_with_budgets(net, &adv_in, &labels[clean..], &epsilons, steps, ratio)?;
        inputs.rows_mut(clean, n_adv).copy_from(&crafted);
    }
    Ok(MixedBatch {
        batch: Batch::new(inputs, Some(labels.to_vec()))?,
        clean,
        epsilons,
    })
}

/// Value of the SSAT objective and its two parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsatLoss {
    pub sup: f64,
    pub unsup: f64,
    pub total: f64,
}

/// Evaluates `L_sup + λ·L_unsup` in one forward pass over the concatenation
/// of both batches, weighting labeled rows by `1/|S|` and pseudo-labeled rows
/// by `λ/|U|`.
pub fn ssat_objective(net: &DiffNet, sup: &Batch, unsup: &Batch, lambda: f64) -> Result<SsatLoss> {
    let (ys, yu) = (sup.require_labels()?, unsup.require_labels()?);
    let (ns, nu) = (sup.len(), unsup.len());
    let mut stacked = DMatrix::zeros(ns + nu, sup.dim());
    stacked.rows_mut(0, ns).copy_from(&sup.inputs);
    stacked.rows_mut(ns, nu).copy_from(&unsup.inputs);
    let labels: Vec<usize> = ys.iter().chain(yu).copied().collect();
    let joint = Batch::new(stacked, Some(labels))?;
    let (values, _) = net.loss_and_param_gradient(&joint, Loss::CrossEntropy)?;
    let sup_mean = values[..ns].iter().sum::<f64>() / ns as f64;
    let unsup_mean = values[ns..].iter().sum::<f64>() / nu as f64;
    let total = values
        .iter()
        .enumerate()
        .map(|(i, v)| if i < ns { v / ns as f64 } else { lambda * v / nu as f64 })
        .sum();
    Ok(SsatLoss {
        sup: sup_mean,
        unsup: unsup_mean,
        total,
    })
}

/// Epoch means of the minibatch losses, measured before each update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub sup_loss: f64,
    pub unsup_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DiffNet,
    pub trace: Vec<EpochLoss>,
    /// Parameter snapshot after each epoch.
    pub snapshots: Vec<DiffNet>,
    pub pseudo: Option<PseudoLabeledSet>,
}

fn shuffled(n: usize, seed: u64, labels: &[&str]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::derived_rng(seed, labels));
    idx
}

fn nt_epoch(net: &mut DiffNet, data: &Dataset, cfg: &TrainConfig, stream: &str, epoch: usize) -> Result<f64> {
    let order = shuffled(data.len(), cfg.seed, &[stream, "shuffle", &epoch.to_string()]);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch = data.batch(chunk);
        let (values, grads) = net.loss_and_param_gradient(&batch, Loss::CrossEntropy)?;
        total += values.iter().sum::<f64>() / values.len() as f64;
        batches += 1;
        net.sgd_step(&grads, cfg.lr)?;
    }
    Ok(total / batches as f64)
}

/// Trains `net` under `cfg.regime`. `unlabeled` is required for SSAT and ignored otherwise.
pub fn train(
    mut net: DiffNet,
    labeled: &Dataset,
    unlabeled: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels = labeled.require_labels()?;
    if labeled.is_empty() {
        return Err(Error::config("labeled training set is empty"));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= net.num_classes()) {
        return Err(Error::input(format!("label {y} at sample {i} out of range")));
    }
    let pseudo = match cfg.regime {
        Regime::Ssat => {
            let pool = unlabeled.ok_or_else(|| Error::config("SSAT requires an unlabeled pool"))?;
            if pool.is_empty() && cfg.lambda > 0.0 {
                return Err(Error::config(
                    "SSAT with lambda > 0 requires a non-empty unlabeled pool",
                ));
            }
            let mut labeler = net.clone();
            for epoch in 0..cfg.warmup_epochs {
                nt_epoch(&mut labeler, labeled, cfg, "warmup", epoch)?;
            }
            Some(pseudo_label(&labeler, pool)?)
        }
        _ => None,
    };

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let e = epoch.to_string();
        let entry = match cfg.regime {
            Regime::Nt => {
                let loss = nt_epoch(&mut net, labeled, cfg, "labeled", epoch)?;
                EpochLoss {
                    epoch: epoch + 1,
                    sup_loss: loss,
                    unsup_loss: 0.0,
                    total: loss,
                }
            }
            Regime::At | Regime::Ssat => {
                let order = shuffled(labeled.len(), cfg.seed, &["labeled", "shuffle", &e]);
                let mut eps_rng = seed::derived_rng(cfg.seed, &["labeled", "eps", &e]);
                let chunks: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
                let unsup = pseudo.as_ref().filter(|p| !p.is_empty());
                let (u_order, u_chunk) = match unsup {
                    Some(p) => (
                        shuffled(p.len(), cfg.seed, &["unlabeled", "shuffle", &e]),
                        p.len().div_ceil(chunks.len()),
                    ),
                    None => (Vec::new(), 1),
                };
                let mut u_eps_rng = seed::derived_rng(cfg.seed, &["unlabeled", "eps", &e]);
                let (mut sup_sum, mut unsup_sum, mut total_sum) = (0.0, 0.0, 0.0);
                for (k, chunk) in chunks.iter().enumerate() {
                    let mixed = adversarial_minibatch(
                        &net,
                        &labeled.batch(chunk),
                        cfg.train_eps,
                        cfg.adv_fraction,
                        cfg.craft_method,
                        &mut eps_rng,
                    )?;
                    let (values, mut grads) = net.loss_and_param_gradient(&mixed.batch, Loss::CrossEntropy)?;
                    let sup_loss = values.iter().sum::<f64>() / values.len() as f64;
                    let mut unsup_loss = 0.0;
                    let start = k * u_chunk;
                    if let (Some(p), true) = (unsup, start < u_order.len()) {
                        let rows = &u_order[start..(start + u_chunk).min(u_order.len())];
                        let mixed_u = adversarial_minibatch(
                            &net,
                            &p.data.batch(rows),
                            cfg.train_eps,
                            cfg.adv_fraction,
                            cfg.craft_method,
                            &mut u_eps_rng,
                        )?;
                        let (u_values, u_grads) = net.loss_and_param_gradient(&mixed_u.batch, Loss::CrossEntropy)?;
                        unsup_loss = u_values.iter().sum::<f64>() / u_values.len() as f64;
                        if cfg.lambda != 0.0 {
                            grads.add_scaled(&u_grads, cfg.lambda);
                        }
                    }
                    sup_sum += sup_loss;
                    unsup_sum += unsup_loss;
                    total_sum += sup_loss + cfg.lambda * unsup_loss;
                    net.sgd_step(&grads, cfg.lr)?;
                }
                let nb = chunks.len() as f64;
                EpochLoss {
                    epoch: epoch + 1,
                    sup_loss: sup_sum / nb,
                    unsup_loss: unsup_sum / nb,
                    total: total_sum / nb,
                }
            }
        };
        if !entry.total.is_finite() {
            return Err(Error::numeric(format!("training loss diverged in epoch {}", epoch + 1)));
        }
        trace.push(entry);
        snapshots.push(net.clone());
    }
    Ok(TrainOutcome {
        net,
        trace,
        snapshots,
        pseudo,
    })
}

/// Loss trace as `epoch,sup_loss,unsup_loss,total`.
pub fn trace_csv(trace: &[EpochLoss]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in trace {
        w.serialize(row).map_err(|e| Error::input(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::input(e.to_string()))
}

pub fn write_trace(trace: &[EpochLoss], path: &Path) -> Result<()> {
    binio::write_atomic(path, &trace_csv(trace)?)
}

/// Fraction of rows of `data` that `net` classifies correctly.
pub fn dataset_accuracy(net: &DiffNet, data: &Dataset) -> Result<f64> {
    let labels = data.require_labels()?;
    let preds = net.predict(&data.images)?;
    crate::evaluation::accuracy(&preds, labels)
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::diffnet::{InputDims, LayerParams, NetConfig};

    fn synth(per_class: usize, seed: u64) -> Dataset {
        let spec = SynthSpec {
            samples_per_class: per_class,
            seed,
            ..SynthSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    fn small_net(seed: u64) -> DiffNet {
        DiffNet::build(NetConfig::dense(64, &[16], 3, seed)).unwrap()
    }

    #[test]
    fn pseudo_labels_break_ties_low() {
        let cfg = NetConfig::dense(2, &[], 2, 0);
        let zero = DiffNet::from_params(
            cfg,
            vec![LayerParams {
                weight: DMatrix::zeros(2, 2),
                bias: DVector::zeros(2),
            }],
        )
        .unwrap();
        let pool = Dataset::new(InputDims::new(1, 2, 1), DMatrix::from_element(100, 2, 0.5), None).unwrap();
        let p = pseudo_label(&zero, &pool).unwrap();
        assert_eq!(p.len(), 100);
        assert!(p.labels().iter().all(|&y| y == 0));
        let empty = pool.subset(&[]);
        assert!(pseudo_label(&zero, &empty).unwrap().is_empty());
    }

    #[test]
    fn mixed_batch_layout_and_budgets() {
        let data = synth(30, 1);
        let net = small_net(2);
        let rows: Vec<usize> = (0..64).collect();
        let batch = data.batch(&rows);
        let mut rng = seed::rng(3);
        let m = adversarial_minibatch(&net, &batch, [0.001, 0.003], 0.5, AttackMethod::Fgsm, &mut rng).unwrap();
        assert_eq!(m.clean, 32);
        assert_eq!(m.epsilons.len(), 32);
        assert!(m.epsilons.iter().all(|e| (0.001..=0.003).contains(e)));
        assert_eq!(m.batch.labels, batch.labels);
        assert_eq!(m.batch.inputs.rows(0, 32), batch.inputs.rows(0, 32));
        for (r, &eps) in m.epsilons.iter().enumerate() {
            let d = (m.batch.inputs.row(32 + r) - batch.inputs.row(32 + r)).abs().max();
            assert!(d <= eps + 1e-12);
        }

        let odd = data.batch(&rows[..5]);
        let m = adversarial_minibatch(&net, &odd, [0.001, 0.003], 0.5, AttackMethod::Fgsm, &mut rng).unwrap();
        assert_eq!((m.clean, m.epsilons.len()), (3, 2));
    }

    #[test]
    fn zero_budget_leaves_batch_unchanged() {
        let data = synth(10, 1);
        let batch = data.to_batch();
        let mut rng = seed::rng(0);
        let m = adversarial_minibatch(&small_net(1), &batch, [0.0, 0.0], 0.5, AttackMethod::Pgd, &mut rng).unwrap();
        assert_eq!(m.batch.inputs, batch.inputs);
    }

    #[test]
    fn ssat_without_lambda_retraces_at() {
        let data = synth(40, 4);
        let pool = synth(20, 5).without_labels();
        let base = TrainConfig {
            epochs: 3,
            batch_size: 32,
            train_eps: [0.01, 0.03],
            seed: 9,
            ..TrainConfig::default()
        };
        let at = train(
            small_net(1),
            &data,
            None,
            &TrainConfig {
                regime: Regime::At,
                ..base.clone()
            },
        )
        .unwrap();
        let ssat = train(
            small_net(1),
            &data,
            Some(&pool),
            &TrainConfig {
                regime: Regime::Ssat,
                lambda: 0.0,
                ..base
            },
        )
        .unwrap();
        assert_eq!(at.snapshots, ssat.snapshots);
        assert!(ssat.pseudo.is_some());
    }

    #[test]
    fn ssat_pool_preconditions() {
        let data = synth(5, 4);
        let cfg = TrainConfig {
            regime: Regime::Ssat,
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(small_net(1), &data, None, &cfg), Err(Error::Config(_))));
        let empty = data.subset(&[]).without_labels();
        assert!(matches!(
            train(small_net(1), &data, Some(&empty), &cfg),
            Err(Error::Config(_))
        ));
        let cfg0 = TrainConfig { lambda: 0.0, ..cfg };
        assert!(train(small_net(1), &data, Some(&empty), &cfg0).is_ok());
    }

    #[test]
    fn objective_decomposes() {
        let net = small_net(3);
        let a = synth(7, 1).to_batch();
        let b = synth(4, 2).to_batch();
        let lambda = 5.0;
        let joint = ssat_objective(&net, &a, &b, lambda).unwrap();
        let mean = |batch: &Batch| {
            let (v, _) = net.loss_and_param_gradient(batch, Loss::CrossEntropy).unwrap();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let expected = mean(&a) + lambda * mean(&b);
        assert!((joint.total - expected).abs() < 1e-9);
        assert!((joint.sup - mean(&a)).abs() < 1e-12);
    }

    #[test]
    fn nt_separates_linear_data() {
        use rand::Rng as _;
        let mut rng = seed::rng(17);
        let n = 400;
        let mut rows = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        while labels.len() < n {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            if (a - b).abs() < 0.1 {
                continue;
            }
            rows.extend([a, b]);
            labels.push(usize::from(b > a));
        }
        let data = Dataset::new(
            InputDims::new(1, 2, 1),
            DMatrix::from_row_slice(n, 2, &rows),
            Some(labels),
        )
        .unwrap();
        let net = DiffNet::build(NetConfig::dense(2, &[8], 2, 3)).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            lr: 0.5,
            ..TrainConfig::default()
        };
        let out = train(net, &data, None, &cfg).unwrap();
        assert!(dataset_accuracy(&out.net, &data).unwrap() >= 0.99);
    }

    #[test]
    fn early_epochs_reduce_loss() {
        let data = synth(100, 6);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(small_net(2), &data, None, &cfg).unwrap();
        let t: Vec<f64> = out.trace.iter().map(|e| e.total).collect();
        assert!(t.windows(2).all(|w| w[1] <= w[0]), "{t:?}");
    }

    #[test]
    fn trace_csv_header() {
        let csv = trace_csv(&[EpochLoss {
            epoch: 1,
            sup_loss: 0.5,
            unsup_loss: 0.25,
            total: 1.75,
        }])
        .unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "epoch,sup_loss,unsup_loss,total\n1,0.5,0.25,1.75\n"
        );
    }

    #[test]
    fn kv_overrides() {
        let kv = KvFile::parse("regime = ssat\nlambda = 2\neps_lo = 0.01\neps_hi = 0.02\n").unwrap();
        let cfg = TrainConfig::from_kv(&kv, "", TrainConfig::default()).unwrap();
        assert_eq!(
            (cfg.regime, cfg.lambda, cfg.train_eps),
            (Regime::Ssat, 2.0, [0.01, 0.02])
        );
        let bad = KvFile::parse("eps_lo = 0.5\neps_hi = 0.1\n").unwrap();
        assert!(matches!(
            TrainConfig::from_kv(&bad, "", TrainConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
