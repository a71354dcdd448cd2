//! Pretraining and probing end to end on small synthetic data.

use isobench_core::blocks::{IsotropicNetwork, ModelConfig};
use isobench_core::data::{synthetic, Cifar10Set, Split};
use isobench_core::probing::{extract_all_layers, probe_all_layers, train_probe, ProbeConfig};
use isobench_core::rng::RngStreams;
use isobench_core::training::{TrainConfig, Trainer};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        latent_dim: 8,
        ..ModelConfig::default()
    }
}

fn data(count: usize, seed: u64, split: Split) -> Cifar10Set {
    synthetic(count, &mut ChaCha8Rng::seed_from_u64(seed), split)
}

#[test]
fn training_is_reproducible_run_to_run() {
    let train = data(24, 1, Split::Train);
    let val = data(8, 2, Split::Validation);
    let cfg = TrainConfig {
        batch_size: 8,
        warmup_epochs: 1,
        decay_epochs: 1,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(&tiny_model(), cfg.clone()).unwrap();
        t.train(&train, &val, |_| Ok(())).unwrap();
        t
    };
    let (a, b) = (run(), run());
    assert_eq!(a.state.history.len(), 2);
    for (x, y) in a.state.history.iter().zip(&b.state.history) {
        assert_eq!(x.train_loss, y.train_loss);
        assert_eq!(x.val_loss, y.val_loss);
    }
    for ((_, p), (_, q)) in a.net.store.iter().zip(b.net.store.iter()) {
        assert_eq!(p.value, q.value, "{}", p.name);
    }
    // the first epoch is exactly the warmup, which ends at the peak rate
    assert_eq!(a.state.history[0].lr, cfg.peak_lr);
}

#[test]
fn different_seeds_give_different_trajectories() {
    let train = data(16, 1, Split::Train);
    let empty = Cifar10Set::empty(Split::Validation);
    let loss = |seed| {
        let mut t = Trainer::new(
            &tiny_model(),
            TrainConfig {
                batch_size: 8,
                decay_epochs: 0,
                seed,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        t.run_epoch(&train, &empty).unwrap().train_loss
    };
    assert_ne!(loss(1), loss(2));
}

fn features(count: usize, seed: u64) -> (isobench_core::Tensor<f64>, Vec<u8>) {
    let net = IsotropicNetwork::<f32>::new(&tiny_model(), &RngStreams::new(3)).unwrap();
    let set = data(count, seed, Split::Test);
    (
        extract_all_layers(&net, &set).unwrap().swap_remove(1),
        set.labels,
    )
}

#[test]
fn probe_on_shuffled_labels_is_at_chance() {
    let (x, mut y) = features(600, 10);
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let (tx, mut ty) = features(2000, 11);
    ty.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let fit = train_probe(
        (&x, &y),
        (&x, &y),
        &ProbeConfig {
            epochs: 20,
            ..ProbeConfig::default()
        },
    )
    .unwrap();
    let acc = fit.probe.accuracy(&tx, &ty).unwrap();
    assert!((acc - 0.1).abs() <= 0.02, "{acc}");
}

#[test]
fn probes_are_deterministic() {
    let (x, y) = features(200, 12);
    let cfg = ProbeConfig {
        epochs: 10,
        seed: 9,
        ..ProbeConfig::default()
    };
    let a = train_probe((&x, &y), (&x, &y), &cfg).unwrap();
    let b = train_probe((&x, &y), (&x, &y), &cfg).unwrap();
    assert_eq!(a.val_accuracy, b.val_accuracy);
    assert_eq!(a.probe.weight, b.probe.weight);
}

#[test]
fn probing_leaves_the_backbone_alone_and_reports_every_layer() {
    let net = IsotropicNetwork::<f32>::new(&tiny_model(), &RngStreams::new(6)).unwrap();
    let before = net.export_tensors();
    let (train, val, test) = (
        data(100, 20, Split::Train),
        data(30, 21, Split::Validation),
        data(50, 22, Split::Test),
    );
    let cfg = ProbeConfig {
        epochs: 8,
        ..ProbeConfig::default()
    };
    let report = probe_all_layers(&net, &train, &val, &test, &cfg, Some(1.5)).unwrap();
    assert_eq!(net.export_tensors(), before);
    assert_eq!(report.layers.len(), 2);
    let best = report
        .layers
        .iter()
        .map(|l| l.test_accuracy)
        .fold(0.0, f64::max);
    assert_eq!(report.best_accuracy, best);
    assert!(report
        .layers
        .iter()
        .all(|l| l.test_accuracy >= 0.08 && l.test_accuracy <= 1.0));

    // each layer's result does not depend on the others being trained
    let feats = (
        extract_all_layers(&net, &train).unwrap(),
        extract_all_layers(&net, &val).unwrap(),
        extract_all_layers(&net, &test).unwrap(),
    );
    for l in [1, 0] {
        let fit = train_probe(
            (&feats.0[l], &train.labels),
            (&feats.1[l], &val.labels),
            &ProbeConfig {
                seed: cfg.seed ^ ((l as u64) << 32),
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(
            fit.probe.accuracy(&feats.2[l], &test.labels).unwrap(),
            report.layers[l].test_accuracy
        );
    }
}
