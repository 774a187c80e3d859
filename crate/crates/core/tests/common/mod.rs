//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use advshield::diffnet::{Activation, Batch, DiffNet, InputDims, LayerSpec, Loss, NetConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
/// Below this magnitude relative error is measured against the floor instead.
pub const REL_FLOOR: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A random small network and labeled batch. Alternates dense and conv
/// stacks, ReLU and identity activations.
pub fn random_case(seed: u64) -> (DiffNet, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, hidden) = match seed % 3 {
        0 => (
            InputDims::flat(rng.random_range(2..7)),
            vec![LayerSpec::Dense {
                width: rng.random_range(2..6),
            }],
        ),
        1 => (
            InputDims::new(4, 4, 1),
            vec![
                LayerSpec::Dense { width: 5 },
                LayerSpec::Dense {
                    width: rng.random_range(2..5),
                },
            ],
        ),
        _ => (
            InputDims::new(5, 5, 2),
            vec![LayerSpec::Conv { filters: 2, kernel: 3 }, LayerSpec::Dense { width: 4 }],
        ),
    };
    let classes = rng.random_range(2..5);
    let config = NetConfig {
        input,
        hidden,
        num_classes: classes,
        activation: if seed.is_multiple_of(2) {
            Activation::Relu
        } else {
            Activation::Identity
        },
        seed,
    };
    let mut net = DiffNet::build(config).unwrap();
    // init biases are zero; random ones keep ReLU units away from shared kinks
    for layer in net.layers_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let b = rng.random_range(1..5);
    // inside the box so the input stencil stays valid
    let x = DMatrix::from_fn(b, input.len(), |_, _| rng.random_range(0.01..0.99));
    let y = (0..b).map(|_| rng.random_range(0..classes)).collect();
    (net, Batch::labeled(x, y).unwrap())
}

fn mean_loss(net: &DiffNet, batch: &Batch) -> f64 {
    let (v, _) = net.loss_and_param_gradient(batch, Loss::CrossEntropy).unwrap();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Step used where the `FD_STEP` stencil straddles a ReLU kink.
pub const FINE_STEP: f64 = 1e-5;
/// For smooth functions the two central differences agree to O(h²); more
/// disagreement than this means the coarse stencil crossed a kink.
const SMOOTH_AGREEMENT: f64 = 1e-5;

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Entries checked with `FINE_STEP` because of a kink.
    pub kinks: usize,
}

impl FdReport {
    /// `f(h)` evaluates the loss with the entry shifted by `h`.
    fn add(&mut self, analytic: f64, f: impl Fn(f64) -> f64) {
        let central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
        let coarse = central(FD_STEP);
        let fine = central(FINE_STEP);
        let numeric = if rel_err(coarse, fine) > SMOOTH_AGREEMENT {
            self.kinks += 1;
            fine
        } else {
            coarse
        };
        self.checked += 1;
        self.max_rel_err = self.max_rel_err.max(rel_err(analytic, numeric));
    }

    pub fn merge(&mut self, other: FdReport) {
        self.max_rel_err = self.max_rel_err.max(other.max_rel_err);
        self.checked += other.checked;
        self.kinks += other.kinks;
    }
}

/// Central differences against the parameter gradient of the batch-mean loss.
pub fn check_param_gradient(net: &DiffNet, batch: &Batch) -> FdReport {
    let grads = net.param_gradient(batch, Loss::CrossEntropy).unwrap();
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.to_vec()).collect();
    let mut report = FdReport::default();
    for (bi, block) in analytic.iter().enumerate() {
        for (i, &a) in block.iter().enumerate() {
            report.add(a, |delta| {
                let mut n = net.clone();
                n.blocks_mut()[bi][i] += delta;
                mean_loss(&n, batch)
            });
        }
    }
    report
}

/// Central differences against each sample's input gradient.
pub fn check_input_gradient(net: &DiffNet, batch: &Batch) -> FdReport {
    let analytic = net.input_gradient(batch, Loss::CrossEntropy).unwrap();
    let labels = batch.require_labels().unwrap();
    let sample_loss = |x: &DMatrix<f64>, r: usize| {
        let one = Batch::labeled(x.rows(r, 1).into_owned(), vec![labels[r]]).unwrap();
        net.loss_and_param_gradient(&one, Loss::CrossEntropy).unwrap().0[0]
    };
    let mut report = FdReport::default();
    for r in 0..batch.len() {
        for j in 0..batch.dim() {
            report.add(analytic[(r, j)], |delta| {
                let mut x = batch.inputs.clone();
                x[(r, j)] += delta;
                sample_loss(&x, r)
            });
        }
    }
    report
}

/// Average precision by brute force: precision and recall of `{score >= t}`
/// for each distinct threshold t, highest first.
pub fn brute_force_ap(scores: &[f64], positive: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total = positive.iter().filter(|&&p| p).count() as f64;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let selected: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = selected.iter().filter(|&&i| positive[i]).count() as f64;
        let recall = tp / total;
        ap += (recall - prev) * (tp / selected.len() as f64);
        prev = recall;
    }
    ap
}
