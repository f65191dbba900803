//! Adam, the step-then-retract loop, evaluation and run history.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Window, WindowDataset};
use crate::diagnostics::{model_snapshot, SpectralSnapshot};
use crate::error::{mismatch, Error, Result};
use crate::forecaster::LossConfig;
use crate::grad::loss_and_grad;
use crate::model::Model;
use crate::params::{GradientSet, ParamSet, TensorMap};

pub const DEFAULT_LR: f64 = 3e-4;
pub const DEFAULT_LAMBDA_LYAP: f64 = 0.1;
pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: TensorMap,
    pub v: TensorMap,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments congruent with `params`, `β = (0.9, 0.999)`, `ε = 1e-8`.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ParamSet, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
    if !params.congruent(grads) || !params.congruent(&state.m) {
        return Err(mismatch(
            "adam_step",
            "congruent parameters, gradients and moments",
            "different keys or shapes",
        ));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2) = (state.beta1, state.beta2);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let it = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
        for ((p, &g), (m, v)) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_lyap: f64,
    pub seed: u64,
    /// Full-split evaluation cadence; 0 evaluates only before and after.
    pub eval_every: usize,
    /// Spectral snapshot cadence; the final step is always logged.
    pub spectral_log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            lambda_lyap: DEFAULT_LAMBDA_LYAP,
            seed: 0,
            eval_every: 0,
            spectral_log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be a nonnegative number, got {}",
                self.lr
            )));
        }
        if !(self.lambda_lyap >= 0.0 && self.lambda_lyap.is_finite()) {
            return Err(Error::Config(format!(
                "lambda_lyap must be nonnegative, got {}",
                self.lambda_lyap
            )));
        }
        Ok(())
    }
}

/// Mean squared and mean absolute error over every entry.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Errors of `model` over `windows`, in the windows' (normalised) units.
pub fn evaluate(model: &Model, windows: &[Window]) -> Result<Metrics> {
    evaluate_with(windows, |x| model.predict(x))
}

/// Errors of an arbitrary predictor; used for the persistence oracle.
pub fn evaluate_with<F>(windows: &[Window], mut predict: F) -> Result<Metrics>
where
    F: FnMut(&crate::linalg::Matrix) -> Result<crate::linalg::Matrix>,
{
    if windows.is_empty() {
        return Err(Error::InvalidArgument("no windows to evaluate".into()));
    }
    let (mut se, mut ae, mut n) = (0.0, 0.0, 0usize);
    for w in windows {
        let pred = predict(&w.x)?;
        if pred.shape() != w.y.shape() {
            return Err(mismatch(
                "evaluate",
                crate::linalg::fmt_shape(w.y.shape()),
                crate::linalg::fmt_shape(pred.shape()),
            ));
        }
        for (a, b) in pred.as_slice().iter().zip(w.y.as_slice()) {
            se += (a - b) * (a - b);
            ae += (a - b).abs();
        }
        n += pred.len();
    }
    Ok(Metrics {
        mse: se / n as f64,
        mae: ae / n as f64,
    })
}

/// Per-step training record.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based optimizer step.
    pub step: usize,
    /// Minibatch loss at the parameters before the step.
    pub loss: f64,
    pub mse: f64,
    pub hinge: f64,
    /// Largest singular value after the step, when a snapshot was taken.
    pub max_sv: Option<f64>,
    /// `max(‖UᵀU − I‖_F, ‖VᵀV − I‖_F)` after the step (0 when not ODO).
    pub ortho_defect: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub train: Metrics,
    pub test: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub step: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunHistory {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<SpectralSnapshot>,
    pub evals: Vec<EvalRecord>,
    pub initial_train: Metrics,
    pub final_train: Metrics,
    pub final_test: Option<Metrics>,
    pub failure: Option<Failure>,
}

pub const HISTORY_HEADER: &str = "step,loss,mse,hinge,max_singular_value";

impl RunHistory {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_snapshot(&self) -> Option<&SpectralSnapshot> {
        self.snapshots.last()
    }

    /// Step records as CSV; `max_singular_value` is empty on steps without
    /// a snapshot.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            let sv = r.max_sv.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.mse, r.hinge, sv);
        }
        out
    }
}

/// Trains `model` on `data.train`.
///
/// Each step samples a minibatch with replacement, computes the loss and
/// its gradient, takes an Adam step and retracts ODO factors. A non-finite
/// loss or gradient stops the run; the failure is recorded in the history
/// and the last finite model is returned.
pub fn train(model: &Model, data: &WindowDataset, cfg: &TrainConfig) -> Result<(Model, RunHistory)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let latent = match model {
        Model::Koopman(f) => f.latent_dim(),
        _ => 1,
    };
    let loss_cfg = LossConfig::identity(cfg.lambda_lyap, latent);
    let mut model = model.clone();
    let mut params = model.params();
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut hist = RunHistory {
        initial_train: evaluate(&model, &data.train)?,
        ..RunHistory::default()
    };
    if let Some(s) = model_snapshot(&model, 0)? {
        hist.snapshots.push(s);
    }
    let n = data.train.len();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(data.train[rng.random_range(0..n)].clone());
        }
        let outcome = loss_and_grad(&model, &batch, &loss_cfg).and_then(|(parts, grads)| {
            let mut next_params = params.clone();
            adam_step(&mut next_params, &grads, &mut adam)?;
            let mut next = model.clone();
            next.set_params(&next_params)?;
            next.retract()?;
            if !next.params().all_finite() {
                return Err(Error::NonFinite("parameters".into()));
            }
            Ok((parts, next))
        });
        let (parts, next) = match outcome {
            Ok(v) => v,
            Err(e) => {
                hist.failure = Some(Failure {
                    step,
                    message: e.to_string(),
                });
                break;
            }
        };
        model = next;
        params = model.params();

        let log_spectrum = step == cfg.steps || (cfg.spectral_log_every > 0 && step % cfg.spectral_log_every == 0);
        let mut max_sv = None;
        if log_spectrum {
            match model_snapshot(&model, step) {
                Ok(Some(s)) => {
                    max_sv = Some(s.max_sv);
                    hist.snapshots.push(s);
                }
                Ok(None) => {}
                Err(e) => {
                    hist.failure = Some(Failure {
                        step,
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        hist.records.push(StepRecord {
            step,
            loss: parts.total,
            mse: parts.mse,
            hinge: parts.hinge,
            max_sv,
            ortho_defect: model.orthonormality_defect(),
        });
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            hist.evals.push(EvalRecord {
                step,
                train: evaluate(&model, &data.train)?,
                test: (!data.test.is_empty())
                    .then(|| evaluate(&model, &data.test))
                    .transpose()?,
            });
        }
    }

    let final_step = hist.records.last().map_or(0, |r| r.step);
    if hist.failure.is_some() {
        // keep a final snapshot of the last finite model for the record
        if hist.snapshots.last().is_none_or(|s| s.step != final_step) {
            if let Ok(Some(s)) = model_snapshot(&model, final_step) {
                hist.snapshots.push(s);
            }
        }
    }
    hist.final_train = evaluate(&model, &data.train)?;
    hist.final_test = (!data.test.is_empty())
        .then(|| evaluate(&model, &data.test))
        .transpose()?;
    hist.evals.push(EvalRecord {
        step: final_step,
        train: hist.final_train,
        test: hist.final_test,
    });
    Ok((model, hist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_series, SynthKind};
    use crate::koopman::{OperatorConfig, Variant};
    use crate::linalg::Matrix;
    use crate::model::{ModelConfig, ModelKind};

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Matrix::column(&[v]));
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p, 3e-4);
        adam_step(&mut p, &scalar_params(1.0), &mut st).unwrap();
        let got = p.get("w").unwrap()[(0, 0)];
        assert!((got + 3e-4 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_params(0.7);
        let mut st = AdamState::new(&p, 3e-4);
        for _ in 0..3 {
            adam_step(&mut p, &scalar_params(0.0), &mut st).unwrap();
        }
        assert_eq!(p.get("w").unwrap()[(0, 0)], 0.7);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        let (lr, g, b1, b2, eps) = (1e-2, 0.37, 0.9f64, 0.999f64, 1e-8);
        let mut p = scalar_params(1.0);
        let mut st = AdamState::new(&p, lr);
        adam_step(&mut p, &scalar_params(g), &mut st).unwrap();
        adam_step(&mut p, &scalar_params(g), &mut st).unwrap();

        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.get("w").unwrap()[(0, 0)] - x).abs() < 1e-15);
    }

    #[test]
    fn adam_rejects_non_finite_and_mismatched() {
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p, 1e-3);
        assert!(adam_step(&mut p, &scalar_params(f64::NAN), &mut st).is_err());
        let mut other = ParamSet::new();
        other.insert("u", Matrix::column(&[1.0]));
        assert!(adam_step(&mut p, &other, &mut st).is_err());
    }

    #[test]
    fn adam_is_independent_of_key_order() {
        let mut a = ParamSet::new();
        a.insert("a", Matrix::column(&[1.0, 2.0]));
        a.insert("b", Matrix::column(&[3.0]));
        let mut g = ParamSet::new();
        g.insert("b", Matrix::column(&[0.5]));
        g.insert("a", Matrix::column(&[-1.0, 0.25]));
        let mut st = AdamState::new(&a, 1e-2);
        adam_step(&mut a, &g, &mut st).unwrap();

        let mut solo = ParamSet::new();
        solo.insert("b", Matrix::column(&[3.0]));
        let mut gs = ParamSet::new();
        gs.insert("b", Matrix::column(&[0.5]));
        let mut st2 = AdamState::new(&solo, 1e-2);
        adam_step(&mut solo, &gs, &mut st2).unwrap();
        assert_eq!(a.get("b"), solo.get("b"));
    }

    fn tiny_data() -> WindowDataset {
        let s = synthesize_series(SynthKind::DampedRotation, 200, 2, 3).unwrap();
        WindowDataset::build(&s, 12, 3, 0.8).unwrap()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            d_model: 6,
            n_patches: 3,
            ssm_hidden: 4,
            operator: OperatorConfig {
                rank: 3,
                mlp_hidden: 4,
                ..OperatorConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_losses_constant() {
        let data = tiny_data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::init(
            ModelKind::Koopman(Variant::Constrained),
            12,
            3,
            2,
            &tiny_cfg(),
            &mut rng,
        )
        .unwrap();
        let cfg = TrainConfig {
            steps: 5,
            lr: 0.0,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (trained, hist) = train(&model, &data, &cfg).unwrap();
        let mut once = model.clone();
        once.retract().unwrap();
        // repeated retraction of an orthonormal factor moves it only by rounding
        let mut diff = trained.params();
        diff.axpy(-1.0, &once.params()).unwrap();
        assert!(diff.max_abs() < 1e-13);
        assert!((hist.initial_train.mse - hist.final_train.mse).abs() < 1e-12);
        let losses: Vec<f64> = hist.records.iter().map(|r| r.loss).collect();
        assert_eq!(losses.len(), 5);
    }

    #[test]
    fn factors_stay_orthonormal_and_spectrum_bounded() {
        let data = tiny_data();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for variant in [Variant::Constrained, Variant::LowRank, Variant::MlpShaped] {
            let model = Model::init(ModelKind::Koopman(variant), 12, 3, 2, &tiny_cfg(), &mut rng).unwrap();
            let cfg = TrainConfig {
                steps: 40,
                batch_size: 4,
                lr: 1e-2,
                spectral_log_every: 5,
                ..TrainConfig::default()
            };
            let (_, hist) = train(&model, &data, &cfg).unwrap();
            assert!(hist.failure.is_none());
            assert_eq!(hist.records.len(), 40);
            assert!(hist.records.iter().all(|r| r.ortho_defect < 1e-10));
            assert!(hist.snapshots.iter().all(|s| s.max_sv < 0.99));
            assert!(hist.records.windows(2).all(|w| w[0].step < w[1].step));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = tiny_data();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let model = Model::init(
                ModelKind::Koopman(Variant::ScalarGated),
                12,
                3,
                2,
                &tiny_cfg(),
                &mut rng,
            )
            .unwrap();
            let cfg = TrainConfig {
                steps: 15,
                batch_size: 4,
                seed: 9,
                eval_every: 5,
                ..TrainConfig::default()
            };
            train(&model, &data, &cfg).unwrap()
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
        assert_eq!(h1.to_csv(), h2.to_csv());
        assert_eq!(h1.to_csv().lines().count(), 16);
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        let data = tiny_data();
        let mut m = crate::baselines::SsmModel::new(
            Matrix::identity(2).scaled(1e200),
            Matrix::identity(2),
            Matrix::zeros(6, 2),
            3,
        )
        .unwrap();
        m.diagonal = true;
        let model = Model::Ssm(m);
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        // the initial evaluation already overflows
        assert!(train(&model, &data, &cfg).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::init(
            ModelKind::Koopman(Variant::Unconstrained),
            12,
            3,
            2,
            &tiny_cfg(),
            &mut rng,
        )
        .unwrap();
        let cfg = TrainConfig {
            steps: 20,
            batch_size: 2,
            lr: 1e300,
            ..TrainConfig::default()
        };
        let (_, hist) = train(&model, &data, &cfg).unwrap();
        let f = hist.failure.expect("huge steps diverge");
        assert!(f.step >= 1);
    }

    #[test]
    fn evaluate_examples() {
        let data = tiny_data();
        let zero_pred = evaluate_with(&data.test, |_| Ok(Matrix::zeros(3, 2))).unwrap();
        // z-scored targets: predicting the mean costs about one variance
        let on_train = evaluate_with(&data.train, |_| Ok(Matrix::zeros(3, 2))).unwrap();
        assert!((on_train.mse - 1.0).abs() < 0.25, "{on_train:?}");
        let zero_y: Vec<Window> = data
            .test
            .iter()
            .map(|w| Window {
                y: Matrix::zeros(3, 2),
                ..w.clone()
            })
            .collect();
        assert_eq!(
            evaluate_with(&zero_y, |_| Ok(Matrix::zeros(3, 2))).unwrap(),
            Metrics { mse: 0.0, mae: 0.0 }
        );
        // one-pass reference
        let (mut se, mut ae, mut n) = (0.0, 0.0, 0.0);
        for w in &data.test {
            for v in w.y.as_slice() {
                se += v * v;
                ae += v.abs();
                n += 1.0;
            }
        }
        assert!((zero_pred.mse - se / n).abs() < 1e-12);
        assert!((zero_pred.mae - ae / n).abs() < 1e-12);
        assert!(evaluate_with(&[], |_| Ok(Matrix::zeros(3, 2))).is_err());
    }
}
