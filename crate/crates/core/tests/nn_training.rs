mod common;

use fedshield::data::{load_csv, normalize};
use fedshield::nn::{evaluate, forward, init_model, train_local, Mode, ModelConfig, Optimizer, ParamVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn backprop_matches_finite_differences() {
    let worst = (0..20).map(common::gradient_check_error).fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn inverted_dropout_keeps_expected_activation() {
    // One hidden unit with zero input weight: its activation is sigmoid(b)
    // and the output is w·mask·sigmoid(b) + c. Averaged over masks the
    // pre-activation of the output must equal the eval-mode one.
    let config = ModelConfig {
        input_dim: 1,
        hidden_dims: vec![1],
        dropout_hidden: 0.5,
        dropout_preoutput: 0.5,
        ..ModelConfig::default()
    };
    // Layout: w1 (1), b1 (1), w2 (1), b2 (1).
    let params = ParamVector(vec![0.0, 0.3, 1.5, -0.2]);
    let x = [0.7];
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let eval = logit(forward(&config, &params, &[&x], Mode::Eval).unwrap()[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 40_000;
    let mean = (0..n)
        .map(|_| logit(forward(&config, &params, &[&x], Mode::Train(&mut rng)).unwrap()[0]))
        .sum::<f64>()
        / n as f64;
    // Mask is 0 or 2 with equal odds; standard error of the mean is about 0.005.
    assert!((mean - eval).abs() < 0.03, "train mean {mean} vs eval {eval}");
}

#[test]
fn training_on_the_fixture_beats_chance() {
    let data = normalize(&load_csv(common::fixture_path("brfss_sample.csv")).unwrap());
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let config = ModelConfig { input_dim: data.n_cols(), local_epochs: 30, ..ModelConfig::default() };
    let start = init_model(&config, 1);
    let trained = train_local(&config, &start, &data, &rows, 2).unwrap();
    assert_eq!(trained, train_local(&config, &start, &data, &rows, 2).unwrap());
    let acc = evaluate(&config, &trained, &data, &rows).unwrap();
    assert!(acc > 0.6, "training accuracy {acc}");
}

#[test]
fn sgd_and_adam_both_reduce_loss() {
    let data = normalize(&load_csv(common::fixture_path("brfss_sample.csv")).unwrap());
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
        // One hidden layer: plain SGD stalls on the deeper default stack.
        let config = ModelConfig {
            input_dim: data.n_cols(),
            hidden_dims: vec![4],
            optimizer,
            learning_rate: if optimizer == Optimizer::Sgd { 0.5 } else { 0.01 },
            dropout_hidden: 0.0,
            dropout_preoutput: 0.0,
            local_epochs: 30,
            ..ModelConfig::default()
        };
        let start = init_model(&config, 4);
        let trained = train_local(&config, &start, &data, &rows, 5).unwrap();
        let before = fedshield::nn::mean_loss(&config, &start, &data, &rows).unwrap();
        let after = fedshield::nn::mean_loss(&config, &trained, &data, &rows).unwrap();
        assert!(after < before, "{optimizer:?}: {before} -> {after}");
    }
}
