mod common;

use advshield::attacks::{craft, fgsm, pgd, AttackSpec};
use advshield::data::{generate_synthetic, split_balanced, SynthSpec};
use advshield::diffnet::{Batch, DiffNet, NetConfig};
use advshield::training::{train, TrainConfig};
use proptest::prelude::*;

fn linf(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn budget_and_box_hold(seed in 0u64..10_000, eps in prop::sample::select(vec![0.0, 0.01, 0.1, 0.3])) {
        let (net, batch) = common::random_case(seed);
        for spec in [AttackSpec::fgsm(eps), AttackSpec::pgd(eps), AttackSpec { random_start: true, seed, ..AttackSpec::pgd(eps) }] {
            let adv = craft(&net, &batch, &spec).unwrap();
            prop_assert!(linf(&adv.perturbed, &batch.inputs) <= eps + 1e-9);
            prop_assert!(adv.perturbed.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let cw = craft(&net, &batch, &AttackSpec::cw(1.0)).unwrap();
        prop_assert!(cw.perturbed.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fgsm_is_one_full_pgd_step(seed in 0u64..10_000, eps in 0.0f64..0.3) {
        let (net, batch) = common::random_case(seed);
        let a = fgsm(&net, &batch, eps).unwrap();
        let spec = AttackSpec { steps: 1, step_size: eps, ..AttackSpec::pgd(eps) };
        let b = pgd(&net, &batch, &spec).unwrap();
        prop_assert!(linf(&a.perturbed, &b.perturbed) <= 1e-12);
    }

    #[test]
    fn zero_budget_and_zero_constant_are_identity(seed in 0u64..10_000) {
        let (net, batch) = common::random_case(seed);
        prop_assert_eq!(&fgsm(&net, &batch, 0.0).unwrap().perturbed, &batch.inputs);
        let rs = AttackSpec { random_start: true, ..AttackSpec::pgd(0.0) };
        prop_assert_eq!(&pgd(&net, &batch, &rs).unwrap().perturbed, &batch.inputs);
        let cw = craft(&net, &batch, &AttackSpec::cw(0.0)).unwrap();
        prop_assert!(linf(&cw.perturbed, &batch.inputs) <= 1e-6);
    }

    #[test]
    fn attacks_are_pure(seed in 0u64..10_000) {
        let (net, batch) = common::random_case(seed);
        for spec in [AttackSpec { random_start: true, seed, ..AttackSpec::pgd(0.1) }, AttackSpec::cw(2.0)] {
            let a = craft(&net, &batch, &spec).unwrap();
            let b = craft(&net, &batch, &spec).unwrap();
            prop_assert_eq!(a.perturbed, b.perturbed);
        }
    }

    #[test]
    fn rows_are_attacked_independently(seed in 0u64..10_000) {
        let (net, batch) = common::random_case(seed);
        let whole = pgd(&net, &batch, &AttackSpec::pgd(0.1)).unwrap();
        let labels = batch.require_labels().unwrap();
        for (r, &y) in labels.iter().enumerate() {
            let one = Batch::labeled(batch.inputs.rows(r, 1).into_owned(), vec![y]).unwrap();
            let single = pgd(&net, &one, &AttackSpec::pgd(0.1)).unwrap();
            prop_assert_eq!(single.perturbed.row(0), whole.perturbed.row(r));
        }
    }
}

/// Mean success rate on a fixed batch and fixed net never drops as ε grows.
#[test]
fn success_rate_is_monotone_in_budget() {
    let (pool, _) = generate_synthetic(&SynthSpec {
        samples_per_class: 200,
        ..SynthSpec::default()
    })
    .unwrap();
    let splits = split_balanced(&pool, 300, 3, 150, 1).unwrap();
    let net = DiffNet::build(NetConfig::dense(64, &[32], 3, 0)).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        lr: 0.02,
        ..TrainConfig::default()
    };
    let net = train(net, &splits.train, None, &cfg).unwrap().net;
    let batch = splits.test.to_batch();
    let grid = [0.0, 0.02, 0.05, 0.1, 0.15, 0.2];
    for make in [AttackSpec::fgsm as fn(f64) -> AttackSpec, AttackSpec::pgd] {
        let rates: Vec<f64> = grid
            .iter()
            .map(|&e| {
                let adv = craft(&net, &batch, &make(e)).unwrap();
                adv.success_count() as f64 / adv.len() as f64
            })
            .collect();
        assert!(rates.windows(2).all(|w| w[1] >= w[0]), "{rates:?}");
        assert!(rates[rates.len() - 1] > rates[0] + 0.3, "{rates:?}");
    }
}
