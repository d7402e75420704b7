mod common;

use emoctx::corpus::CuePlacement;
use emoctx::model::{init_model, ModelConfig};
use emoctx::training::{pad_batch, train, train_step, AdamState, TrainConfig};

use common::random_features;

#[test]
fn overfits_one_batch() {
    let cfg = ModelConfig::toy(8, 4);
    let mut params = init_model::<f64>(&cfg, 1).unwrap();
    let seqs: Vec<_> = (0..8).map(|i| random_features(6 + i, 23, 100 + i as u64)).collect();
    let refs: Vec<_> = seqs.iter().collect();
    let batch = pad_batch(&refs).unwrap();
    let labels: Vec<usize> = (0..8).map(|i| i % 6).collect();
    let tc = TrainConfig {
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let mut state = AdamState::new(&params);
    let first = train_step(&mut params, &mut state, &batch, &labels, &tc).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = train_step(&mut params, &mut state, &batch, &labels, &tc).unwrap();
    }
    assert!(last < first && last < 0.1, "loss {first} -> {last}");
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = common::synth_data(CuePlacement::Global);
    let tc = TrainConfig {
        epochs: 0,
        seed: 4,
        ..TrainConfig::default()
    };
    let mc = ModelConfig::toy(4, 3);
    let out = train(&tc, &mc, &data.train, &data.test).unwrap();
    assert_eq!(out.best_epoch, 0);
    assert_eq!(out.params, init_model::<f32>(&mc, 4).unwrap());
}

#[test]
fn same_seed_same_weights() {
    let data = common::synth_data(CuePlacement::Global);
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let mc = ModelConfig::toy(6, 4);
    let a = train(&tc, &mc, &data.train, &data.test).unwrap();
    let b = train(&tc, &mc, &data.train, &data.test).unwrap();
    assert_eq!(a.best_epoch, b.best_epoch);
    for (k, t) in a.params.tensors() {
        let u = b.params.get(k);
        assert!(t.data().iter().zip(u.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{k}");
    }
    assert!(a.params.all_finite());
}
