use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use koopman_core::data::Window;
use koopman_core::forecaster::LossConfig;
use koopman_core::grad::{finite_diff_check, loss_and_grad};
use koopman_core::koopman::{OperatorConfig, Variant};
use koopman_core::linalg::Matrix;
use koopman_core::model::{Model, ModelConfig, ModelKind};

fn batch(p: usize, h: usize, d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Window> {
    (0..n)
        .map(|i| Window {
            start: i,
            x: Matrix::random_normal(p, d, 1.0, rng),
            y: Matrix::random_normal(h, d, 1.0, rng),
        })
        .collect()
}

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        ssm_hidden: 8,
        operator: OperatorConfig {
            rank: 4,
            mlp_hidden: 8,
            ..OperatorConfig::default()
        },
        ..ModelConfig::default()
    }
}

#[test]
fn linear_models_match_to_rounding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = batch(16, 4, 4, 4, &mut rng);
    let cfg = ModelConfig {
        use_attention: false,
        ..small()
    };
    let plain_mse = LossConfig::identity(0.0, 8);
    for kind in [ModelKind::Koopman(Variant::Unconstrained), ModelKind::DLinear] {
        let model = Model::init(kind, 16, 4, 4, &cfg, &mut rng).unwrap();
        let r = finite_diff_check(&model, &data, &plain_mse, 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-7, "{kind}: {r:?}");
    }
}

#[test]
fn constrained_model_seed_17() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let data = batch(16, 4, 4, 4, &mut rng);
    let model = Model::init(ModelKind::Koopman(Variant::Constrained), 16, 4, 4, &small(), &mut rng).unwrap();
    let r = finite_diff_check(&model, &data, &LossConfig::identity(0.1, 8), 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert_eq!(r.checked, model.params().numel());
}

#[test]
fn samples_on_the_hinge_kink_are_excluded() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = batch(16, 4, 4, 3, &mut rng);
    let mut model = Model::init(ModelKind::Koopman(Variant::Unconstrained), 16, 4, 4, &small(), &mut rng).unwrap();
    // K = I: zero energy growth on every sample
    let mut p = model.params();
    *p.get_mut("koopman.K").unwrap() = Matrix::identity(8);
    model.set_params(&p).unwrap();

    assert!(finite_diff_check(&model, &data, &LossConfig::identity(0.1, 8), 1e-5).is_err());
    let r = finite_diff_check(&model, &data, &LossConfig::identity(0.0, 8), 1e-5).unwrap();
    assert_eq!(r.excluded, 0);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn gradients_are_bit_reproducible_across_models() {
    for kind in ModelKind::ALL {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(31);
            let data = batch(16, 4, 3, 4, &mut rng);
            let model = Model::init(kind, 16, 4, 3, &small(), &mut rng).unwrap();
            loss_and_grad(&model, &data, &LossConfig::identity(0.1, 8)).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.0.total.to_bits(), b.0.total.to_bits(), "{kind}");
        assert_eq!(a.1, b.1, "{kind}");
    }
}
