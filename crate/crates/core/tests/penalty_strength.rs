use hashwh::fourier::{cube_points, CubeFunction};
use hashwh::mlp::{train, MlpModel, TrainConfig, TrainSeeds};
use hashwh::regularizers::{fullwh_value, Regularizer};
use hashwh::synth::{cube_complement_split, generate_target, SyntheticMode, SyntheticSpec};

/// Final full-spectrum L1 norm of a net trained with `fullwh` at `lambda`.
fn final_penalty(seed: u64, lambda: f64) -> f64 {
    let n = 10;
    let target = generate_target(&SyntheticSpec {
        mode: SyntheticMode::DegreeLadder,
        n,
        seed,
    })
    .unwrap();
    let (tr, va) = cube_complement_split(&target, 200, seed).unwrap();
    let config = TrainConfig {
        regularizer: if lambda == 0.0 { Regularizer::None } else { Regularizer::FullWh },
        lambda,
        max_epochs: 60,
        early_stop_patience: None,
        seeds: TrainSeeds::from_seed(seed),
        ..TrainConfig::default()
    };
    let model = MlpModel::seeded(&[n, 32, 32, 8, 1], config.seeds.init).unwrap();
    let outcome = train(model, &tr, &va, &config, |_, _| Ok(())).unwrap();
    let outputs = outcome.final_model.evaluate_many(&cube_points(n).unwrap());
    fullwh_value(&outputs).unwrap().value
}

#[test]
fn stronger_penalty_leaves_a_sparser_spectrum() {
    let lambdas = [0.0, 0.001, 0.01, 0.1];
    let means: Vec<f64> = lambdas
        .iter()
        .map(|&l| (0..5).map(|s| final_penalty(s, l)).sum::<f64>() / 5.0)
        .collect();
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}
