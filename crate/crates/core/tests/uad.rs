use advshield::data::{generate_synthetic, split_balanced, Splits, SynthSpec};
use advshield::diffnet::{DiffNet, NetConfig};
use advshield::training::{train, TrainConfig};
use advshield::uad::{
    self, calibrate_thresholds, defended_inference, fit_gmm_em, fit_uad, score_inputs, EmSettings, UadSettings,
};
use advshield::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[test]
fn em_trace_never_decreases() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = rng.random_range(1..4);
        let clusters = rng.random_range(1..4);
        let centres: Vec<Vec<f64>> = (0..clusters)
            .map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect())
            .collect();
        let n = rng.random_range(30..120);
        let z = DMatrix::from_fn(n, dim, |r, c| {
            let noise: f64 = StandardNormal.sample(&mut rng);
            centres[r % clusters][c] + noise
        });
        let settings = EmSettings {
            components: rng.random_range(1..4),
            diag_reg: 1e-6,
            tol: 0.0,
            max_iter: 60,
            seed,
        };
        let fit = fit_gmm_em(&z, 0, &settings).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {:?}", fit.trace);
        }
    }
}

fn trained() -> (DiffNet, Splits) {
    let (pool, _) = generate_synthetic(&SynthSpec {
        samples_per_class: 400,
        ..SynthSpec::default()
    })
    .unwrap();
    let splits = split_balanced(&pool, 600, 300, 300, 2).unwrap();
    let net = DiffNet::build(NetConfig::dense(64, &[32], 3, 1)).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        lr: 0.02,
        ..TrainConfig::default()
    };
    let mut net = train(net, &splits.train, None, &cfg).unwrap().net;
    net.round_to_f32();
    (net, splits)
}

#[test]
fn calibrated_detector_on_trained_model() {
    let (net, splits) = trained();
    let fitted = fit_uad(&net, &splits.train, &UadSettings::default()).unwrap();
    assert_eq!(fitted.num_classes(), 3);
    assert!(matches!(
        defended_inference(&net, &fitted, &splits.test.images),
        Err(Error::State(_))
    ));

    let det = calibrate_thresholds(&fitted, &net, &splits.unlabeled, 5.0).unwrap();
    // on the calibration pool the per-class rule rejects just under p%
    let own = defended_inference(&net, &det, &splits.unlabeled.images).unwrap();
    let own_rate = own.iter().filter(|d| d.is_rejected()).count() as f64 / own.len() as f64;
    assert!((0.03..=0.05).contains(&own_rate), "{own_rate}");
    // on fresh clean data the rate stays near p
    let test = defended_inference(&net, &det, &splits.test.images).unwrap();
    let rate = test.iter().filter(|d| d.is_rejected()).count() as f64 / test.len() as f64;
    assert!((rate - 0.05).abs() <= 0.02, "{rate}");

    // accepted decisions carry the plain prediction
    let preds = net.predict(&splits.test.images).unwrap();
    for (d, p) in test.iter().zip(&preds) {
        assert_eq!(d.predicted(), *p);
    }

    // an input far outside the pixel manifold is rejected
    let far = DMatrix::from_fn(1, 64, |_, j| if j % 2 == 0 { 1.0 } else { 0.0 });
    let (_, s) = score_inputs(&net, &det, &far).unwrap();
    let (_, clean) = score_inputs(&net, &det, &splits.test.images).unwrap();
    let worst = clean.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(s[0] < worst, "{} vs {worst}", s[0]);
    assert!(defended_inference(&net, &det, &far).unwrap()[0].is_rejected());
}

#[test]
fn detector_is_bound_to_its_model() {
    let (net, splits) = trained();
    let det = fit_uad(&net, &splits.train, &UadSettings::default()).unwrap();
    let det = calibrate_thresholds(&det, &net, &splits.unlabeled, 5.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.adud");
    uad::save(&det, &path).unwrap();
    let back = uad::load(&path).unwrap();
    assert_eq!(
        defended_inference(&net, &back, &splits.test.images).unwrap(),
        defended_inference(&net, &det, &splits.test.images).unwrap()
    );
    let other = DiffNet::build(NetConfig::dense(64, &[32], 3, 99)).unwrap();
    assert!(matches!(
        defended_inference(&other, &back, &splits.test.images),
        Err(Error::State(_))
    ));
}
