//! Randomised invariant suite run by the `check` command.
//!
//! Each check draws fresh random operators or models from a seeded
//! generator, measures the quantity its stability property bounds, and
//! reports the worst case seen.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{augment_unstable_ssm, SsmModel};
use crate::data::Window;
use crate::diagnostics::{contraction_envelope, lyapunov_certificate_check};
use crate::error::Result;
use crate::forecaster::LossConfig;
use crate::grad::finite_diff_check;
use crate::koopman::{KoopmanOperator, OperatorConfig, Variant};
use crate::linalg::{self, norm2, Matrix, GELFAND_POWER};
use crate::model::{Model, ModelConfig, ModelKind};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckOptions {
    /// Random draws per check (per variant where it applies).
    pub trials: usize,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { trials: 100, seed: 0 }
    }
}

fn outcome(name: &'static str, res: Result<(bool, String)>) -> CheckOutcome {
    match res {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Random operator with the spectral parameters pushed well away from
/// their initial scale so the squashing map saturates on some draws.
pub fn random_operator<R: Rng + ?Sized>(
    variant: Variant,
    d: usize,
    cfg: &OperatorConfig,
    rng: &mut R,
) -> Result<KoopmanOperator> {
    let op = KoopmanOperator::random(variant, d, cfg, rng)?;
    let mut params = crate::params::ParamSet::new();
    op.write_params(&mut params);
    let spread = 10f64.powf(rng.random_range(-1.0..2.0));
    for (name, m) in params.iter_mut() {
        if matches!(name.as_str(), "koopman.U" | "koopman.V") {
            continue;
        }
        for x in m.as_mut_slice() {
            *x = spread * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    let mut out = op;
    out.read_params(&params)?;
    Ok(out)
}

/// ODO variants: the five families that carry a spectral bound.
pub const ODO_VARIANTS: [Variant; 5] = [
    Variant::Constrained,
    Variant::ScalarGated,
    Variant::PerModeGated,
    Variant::MlpShaped,
    Variant::LowRank,
];

pub fn spectral_bound(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "spectral_bound",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let cfg = OperatorConfig {
                rank: 4,
                ..OperatorConfig::default()
            };
            let (mut worst_sv, mut worst_gap) = (0.0f64, 0.0f64);
            for v in ODO_VARIANTS {
                for _ in 0..opts.trials {
                    let op = random_operator(v, 8, &cfg, &mut rng)?;
                    let sv = linalg::singular_values(&op.materialize())?;
                    let sigma_max = op.as_odo().expect("ODO").spectrum().into_iter().fold(0.0, f64::max);
                    worst_sv = worst_sv.max(sv[0]);
                    worst_gap = worst_gap.max((sv[0] - sigma_max).abs());
                }
            }
            Ok((
                worst_sv < cfg.rho_max && worst_gap <= 1e-10,
                format!("max sigma_1 = {worst_sv}, max |sigma_1 - max Sigma| = {worst_gap:e}"),
            ))
        })(),
    )
}

pub fn contraction(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "contraction",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 1);
            let cfg = OperatorConfig::default();
            let mut worst = 0.0f64;
            for i in 0..opts.trials {
                let op = random_operator(ODO_VARIANTS[i % 5], 8, &cfg, &mut rng)?;
                let z0 = Matrix::random_normal(8, 1, 1.0, &mut rng).into_vec();
                for p in contraction_envelope(&op, &z0, 100)? {
                    if p.bound > 0.0 {
                        worst = worst.max(p.norm / p.bound);
                    }
                }
            }
            Ok((
                worst <= 1.0 + 1e-12,
                format!("max ||K^n z0|| / (0.99^n ||z0||) = {worst}"),
            ))
        })(),
    )
}

pub fn invertibility(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "invertibility",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 2);
            let cfg = OperatorConfig {
                rho_min: 0.01,
                ..OperatorConfig::default()
            };
            let mut worst = 0.0f64;
            for i in 0..opts.trials {
                let op = random_operator(ODO_VARIANTS[i % 4], 8, &cfg, &mut rng)?;
                let z = Matrix::random_normal(8, 1, 1.0, &mut rng).into_vec();
                let back = op.inverse_apply(&op.apply(&z)?)?;
                let err: Vec<f64> = back.iter().zip(&z).map(|(a, b)| a - b).collect();
                worst = worst.max(norm2(&err) / norm2(&z));
            }
            let plain = KoopmanOperator::random(Variant::Constrained, 8, &OperatorConfig::default(), &mut rng)?;
            let refused = plain.inverse_apply(&[0.0; 8]).is_err();
            Ok((
                worst < 1e-8 && refused,
                format!("max relative round-trip error = {worst:e}, rho_min = 0 refused: {refused}"),
            ))
        })(),
    )
}

pub fn low_rank(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "low_rank",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 3);
            let cfg = OperatorConfig::default();
            let mut worst = 0.0f64;
            for _ in 0..opts.trials.clamp(1, 20) {
                let op = random_operator(Variant::LowRank, 32, &cfg, &mut rng)?;
                let sv = linalg::singular_values(&op.materialize())?;
                worst = worst.max(sv[16]);
            }
            Ok((worst < 1e-10, format!("max sigma_17 (r = 16, d = 32) = {worst:e}")))
        })(),
    )
}

pub fn surjectivity(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "surjectivity",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 4);
            let mut worst = 0.0f64;
            for _ in 0..opts.trials {
                let raw = Matrix::random_normal(6, 6, 1.0, &mut rng);
                let m = raw.scaled(0.89 / linalg::singular_values(&raw)?[0]);
                let op = KoopmanOperator::from_matrix(&m, None, 0.99, 0.0)?;
                worst = worst.max(op.materialize().sub(&m)?.frobenius_norm());
            }
            Ok((worst < 1e-9, format!("max ||K - M||_F = {worst:e}")))
        })(),
    )
}

pub fn lyapunov(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "lyapunov_certificate",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 5);
            let cfg = OperatorConfig::default();
            let mut worst = f64::NEG_INFINITY;
            for i in 0..opts.trials {
                let op = random_operator(ODO_VARIANTS[i % 5], 8, &cfg, &mut rng)?;
                let c = lyapunov_certificate_check(&op.materialize(), &Matrix::identity(8), 0.0)?;
                worst = worst.max(c.max_eig);
            }
            let bad = lyapunov_certificate_check(&Matrix::identity(4).scaled(1.1), &Matrix::identity(4), 0.0)?;
            Ok((
                worst <= 0.0 && !bad.holds && (bad.max_eig - 0.21).abs() <= 1e-12,
                format!("max lambda_max(K'K - I) = {worst}, 1.1 I gives {}", bad.max_eig),
            ))
        })(),
    )
}

pub fn augmentation(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "unstable_augmentation",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 6);
            let base = SsmModel::random(3, 5, 4, false, &mut rng);
            let aug = augment_unstable_ssm(&base, 2.0, 2)?;
            let mut worst = 0.0f64;
            for _ in 0..opts.trials.clamp(1, 50) {
                let x = Matrix::random_normal(16, 3, 1.0, &mut rng);
                worst = worst.max(aug.forward(&x)?.sub(&base.forward(&x)?)?.max_abs());
            }
            let radius = linalg::spectral_radius_estimate(&aug.a, GELFAND_POWER)?;
            Ok((
                worst == 0.0 && radius >= 1.9,
                format!("max output discrepancy = {worst}, augmented radius = {radius}"),
            ))
        })(),
    )
}

pub fn gradients(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "gradients",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 7);
            let cfg = ModelConfig {
                d_model: 8,
                ssm_hidden: 8,
                operator: OperatorConfig {
                    rank: 4,
                    mlp_hidden: 8,
                    ..OperatorConfig::default()
                },
                ..ModelConfig::default()
            };
            let batch: Vec<Window> = (0..4)
                .map(|i| Window {
                    start: i,
                    x: Matrix::random_normal(16, 4, 1.0, &mut rng),
                    y: Matrix::random_normal(4, 4, 1.0, &mut rng),
                })
                .collect();
            let mut worst = (0.0f64, String::new());
            for kind in ModelKind::ALL {
                let model = Model::init(kind, 16, 4, 4, &cfg, &mut rng)?;
                let r = finite_diff_check(&model, &batch, &LossConfig::identity(0.1, 8), 1e-5)?;
                if r.max_rel_error >= worst.0 {
                    worst = (r.max_rel_error, format!("{kind}:{}[{}]", r.worst.0, r.worst.1));
                }
            }
            Ok((
                worst.0 < 1e-4,
                format!("max relative error = {:e} at {}", worst.0, worst.1),
            ))
        })(),
    )
}

pub fn hinge_inactive(opts: CheckOptions) -> CheckOutcome {
    outcome(
        "hinge_inactive_for_contractions",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 8);
            let cfg = ModelConfig {
                d_model: 8,
                ..ModelConfig::default()
            };
            let model = Model::init(ModelKind::Koopman(Variant::Constrained), 16, 4, 3, &cfg, &mut rng)?;
            let Model::Koopman(f) = &model else { unreachable!() };
            let lc = LossConfig::identity(1.0, 8);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..opts.trials * 10 {
                let x = Matrix::random_normal(16, 3, 3.0, &mut rng);
                let out = f.forward(&x)?;
                worst = worst.max(lc.energy_growth(&out.z, &out.z_next));
            }
            Ok((worst < 0.0, format!("max energy growth = {worst}")))
        })(),
    )
}

/// Every check in a fixed order.
pub fn run_all(opts: CheckOptions) -> Vec<CheckOutcome> {
    vec![
        spectral_bound(opts),
        contraction(opts),
        invertibility(opts),
        low_rank(opts),
        surjectivity(opts),
        lyapunov(opts),
        augmentation(opts),
        gradients(opts),
        hinge_inactive(opts),
    ]
}
