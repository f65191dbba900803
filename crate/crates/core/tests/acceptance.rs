//! Acceptance suite. Every test prints one `PASS` or `FAIL` line with the
//! measured quantity before asserting, so the test log doubles as a report.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use koopman_core::baselines::{augment_unstable_ssm, SsmModel};
use koopman_core::bench::{parse_config_str, run_grid, run_persistence, run_single, BenchReport, BenchmarkConfig};
use koopman_core::checks::{random_operator, ODO_VARIANTS};
use koopman_core::data::{synthesize_series, SynthKind, Window, WindowDataset, DEFAULT_TRAIN_RATIO};
use koopman_core::diagnostics::{contraction_envelope, lyapunov_certificate_check, parse_spectra};
use koopman_core::forecaster::LossConfig;
use koopman_core::grad::finite_diff_check;
use koopman_core::koopman::{KoopmanOperator, OperatorConfig, Variant};
use koopman_core::linalg::{self, norm2, Matrix, GELFAND_POWER};
use koopman_core::model::{Model, ModelConfig, ModelKind};
use koopman_core::training::TrainConfig;

const RHO_MAX: f64 = 0.99;

fn verdict(name: &str, passed: bool, detail: String, elapsed: Duration, budget: Option<Duration>) {
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let ok = passed && in_time;
    let budget_txt = budget.map(|b| format!(" (budget {:.0?})", b)).unwrap_or_default();
    let line = format!(
        "{} {name}: {detail}; {:.2?}{budget_txt}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed
    );
    // written past the test harness's capture so the report always shows
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(passed, "{name}: {detail}");
    assert!(in_time, "{name}: took {elapsed:.2?}{budget_txt}");
}

#[test]
fn spectral_bound_holds_for_every_odo_variant() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let cfg = OperatorConfig {
        rank: 4,
        ..OperatorConfig::default()
    };
    let (mut worst_sv, mut worst_gap, mut draws) = (0.0f64, 0.0f64, 0);
    for v in ODO_VARIANTS {
        for _ in 0..1000 {
            let op = random_operator(v, 8, &cfg, &mut rng).unwrap();
            let sv = linalg::singular_values(&op.materialize()).unwrap();
            let sigma_max = op.as_odo().unwrap().spectrum().into_iter().fold(0.0, f64::max);
            worst_sv = worst_sv.max(sv[0]);
            worst_gap = worst_gap.max((sv[0] - sigma_max).abs());
            draws += 1;
        }
    }
    verdict(
        "spectral_bound",
        worst_sv < RHO_MAX && worst_gap <= 1e-10,
        format!("{draws} draws, max sigma_1 = {worst_sv}, max |sigma_1 - max Sigma| = {worst_gap:e}"),
        t0.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn iterates_contract_geometrically() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let cfg = OperatorConfig::default();
    let mut worst = 0.0f64;
    let mut envelope_ok = true;
    for i in 0..100 {
        let op = random_operator(ODO_VARIANTS[i % ODO_VARIANTS.len()], 8, &cfg, &mut rng).unwrap();
        let z0 = Matrix::random_normal(8, 1, 1.0, &mut rng).into_vec();
        // direct iteration, independent of the envelope helper
        let base = norm2(&z0);
        let mut z = z0.clone();
        for n in 1..=100 {
            z = op.apply(&z).unwrap();
            worst = worst.max(norm2(&z) / (RHO_MAX.powi(n) * base));
        }
        envelope_ok &= contraction_envelope(&op, &z0, 100).is_ok();
    }
    verdict(
        "contraction",
        worst <= 1.0 + 1e-12 && envelope_ok,
        format!("100 pairs, n <= 100, max ||K^n z0|| / (0.99^n ||z0||) = {worst}"),
        t0.elapsed(),
        Some(Duration::from_secs(5)),
    );
}

#[test]
fn two_sided_bound_gives_invertibility() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let cfg = OperatorConfig {
        rho_min: 0.01,
        ..OperatorConfig::default()
    };
    // low rank operators are singular by construction and are excluded
    let full: Vec<Variant> = ODO_VARIANTS.into_iter().filter(|v| *v != Variant::LowRank).collect();
    let mut worst = 0.0f64;
    for i in 0..100 {
        let op = random_operator(full[i % full.len()], 8, &cfg, &mut rng).unwrap();
        let z = Matrix::random_normal(8, 1, 1.0, &mut rng).into_vec();
        let back = op.inverse_apply(&op.apply(&z).unwrap()).unwrap();
        let err: Vec<f64> = back.iter().zip(&z).map(|(a, b)| a - b).collect();
        worst = worst.max(norm2(&err) / norm2(&z));
    }
    let plain = KoopmanOperator::random(Variant::Constrained, 8, &OperatorConfig::default(), &mut rng).unwrap();
    let refused = plain.inverse_apply(&[1.0; 8]).is_err();
    verdict(
        "invertibility",
        worst < 1e-8 && refused,
        format!("100 cases, max relative round-trip error = {worst:e}, rho_min = 0 refused: {refused}"),
        t0.elapsed(),
        Some(Duration::from_secs(2)),
    );
}

#[test]
fn low_rank_structure_and_truncation_optimality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let cfg = OperatorConfig::default();
    let mut worst_tail = 0.0f64;
    for _ in 0..20 {
        let op = random_operator(Variant::LowRank, 32, &cfg, &mut rng).unwrap();
        let sv = linalg::singular_values(&op.materialize()).unwrap();
        worst_tail = worst_tail.max(sv[16]);
    }

    let small = OperatorConfig {
        rank: 2,
        ..OperatorConfig::default()
    };
    let mut wins = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..20 {
        let raw = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let target = raw.scaled(0.89 / linalg::singular_values(&raw).unwrap()[0]);
        let truncated = KoopmanOperator::from_matrix(&target, Some(2), RHO_MAX, 0.0).unwrap();
        let best = truncated.materialize().sub(&target).unwrap().frobenius_norm();
        let mut rival = f64::INFINITY;
        for _ in 0..200 {
            let op = random_operator(Variant::LowRank, 8, &small, &mut rng).unwrap();
            rival = rival.min(op.materialize().sub(&target).unwrap().frobenius_norm());
        }
        if best < rival {
            wins += 1;
        }
        tightest = tightest.min(rival - best);
    }
    verdict(
        "low_rank",
        worst_tail < 1e-10 && wins == 20,
        format!(
            "max sigma_17 (r = 16, d = 32) = {worst_tail:e}; truncation beat 200 random rank-2 operators on {wins}/20 targets (smallest margin {tightest:.4})"
        ),
        t0.elapsed(),
        Some(Duration::from_secs(30)),
    );
}

#[test]
fn svd_initialisation_reaches_any_admissible_matrix() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let raw = Matrix::random_normal(8, 8, 1.0, &mut rng);
        let m = raw.scaled(0.89 / linalg::singular_values(&raw).unwrap()[0]);
        let op = KoopmanOperator::from_matrix(&m, None, RHO_MAX, 0.0).unwrap();
        worst = worst.max(op.materialize().sub(&m).unwrap().frobenius_norm());
    }
    verdict(
        "surjectivity",
        worst < 1e-9,
        format!("50 matrices with ||M||_2 = 0.89, max ||K - M||_F = {worst:e}"),
        t0.elapsed(),
        Some(Duration::from_secs(10)),
    );
}

#[test]
fn trained_constrained_operators_carry_a_certificate() {
    let t0 = Instant::now();
    let series = synthesize_series(SynthKind::DampedRotation, 1024, 4, 6).unwrap();
    let data = WindowDataset::build(&series, 16, 4, DEFAULT_TRAIN_RATIO).unwrap();
    let model_cfg = ModelConfig {
        d_model: 8,
        ..ModelConfig::default()
    };
    let mut worst = f64::NEG_INFINITY;
    let mut trained = 0;
    for seed in 0..4 {
        let train = TrainConfig {
            steps: 300,
            seed,
            ..TrainConfig::default()
        };
        let run = run_single(ModelKind::Koopman(Variant::Constrained), &data, &train, &model_cfg);
        let Some(Model::Koopman(f)) = &run.model else {
            panic!("seed {seed}: {}", run.status.tag());
        };
        let k = f.koop.materialize();
        let c = lyapunov_certificate_check(&k, &Matrix::identity(k.rows()), 0.0).unwrap();
        assert!(c.holds, "seed {seed}: max_eig {}", c.max_eig);
        worst = worst.max(c.max_eig);
        trained += 1;
    }
    let bad = lyapunov_certificate_check(&Matrix::identity(4).scaled(1.1), &Matrix::identity(4), 0.0).unwrap();
    verdict(
        "lyapunov_certificate",
        worst <= 0.0 && !bad.holds && (bad.max_eig - 0.21).abs() <= 1e-12,
        format!(
            "{trained} trained operators, max lambda_max(K'K - I) = {worst}; 1.1 I fails with max_eig = {}",
            bad.max_eig
        ),
        t0.elapsed(),
        None,
    );
}

#[test]
fn unstable_augmentation_is_invisible_in_outputs() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let base = SsmModel::random(4, 8, 4, false, &mut rng);
    let aug = augment_unstable_ssm(&base, 2.0, 2).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = Matrix::random_normal(32, 4, 1.0, &mut rng);
        let diff = aug.forward(&x).unwrap().sub(&base.forward(&x).unwrap()).unwrap();
        worst = worst.max(diff.max_abs());
    }
    let radius = linalg::spectral_radius_estimate(&aug.a, GELFAND_POWER).unwrap();
    verdict(
        "unstable_augmentation",
        worst == 0.0 && radius >= 1.9,
        format!("50 windows, max output discrepancy = {worst}, spectral radius estimate = {radius}"),
        t0.elapsed(),
        None,
    );
}

#[test]
fn gradients_match_finite_differences() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let cfg = ModelConfig {
        d_model: 8,
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
    let mut lines = Vec::new();
    for kind in ModelKind::ALL {
        let model = Model::init(kind, 16, 4, 4, &cfg, &mut rng).unwrap();
        let total: usize = model.params().iter().map(|(_, m)| m.len()).sum();
        let r = finite_diff_check(&model, &batch, &LossConfig::identity(0.1, 8), 1e-5).unwrap();
        assert_eq!(r.checked, total, "{kind}: every parameter entry is compared");
        lines.push(format!("{kind} {:.1e}", r.max_rel_error));
        if r.max_rel_error >= worst.0 {
            worst = (r.max_rel_error, format!("{kind}:{}[{}]", r.worst.0, r.worst.1));
        }
    }
    verdict(
        "gradients",
        worst.0 < 1e-4,
        format!(
            "max relative error = {:e} at {} ({})",
            worst.0,
            worst.1,
            lines.join(", ")
        ),
        t0.elapsed(),
        Some(Duration::from_secs(60)),
    );
}

fn rotation_data() -> WindowDataset {
    let series = synthesize_series(SynthKind::DampedRotation, 4096, 4, 0).unwrap();
    WindowDataset::build(&series, 32, 8, DEFAULT_TRAIN_RATIO).unwrap()
}

#[test]
fn constrained_model_learns_the_rotation() {
    let data = rotation_data();
    let t0 = Instant::now();
    let run = run_single(
        ModelKind::Koopman(Variant::Constrained),
        &data,
        &TrainConfig::default(),
        &ModelConfig::default(),
    );
    let elapsed = t0.elapsed();
    let hist = run.history.as_ref().expect("training ran");
    let persistence = run_persistence(&data);
    let (initial, fin) = (hist.initial_train.mse, run.train.mse);
    verdict(
        "desk_scale_learning",
        run.status.is_ok()
            && hist.records.last().map(|r| r.step) == Some(2000)
            && fin < 0.5 * initial
            && run.test.mse < persistence.test.mse,
        format!(
            "train MSE {initial:.4} -> {fin:.4} (ratio {:.3}), test MSE {:.4} vs persistence {:.4}, status {}",
            fin / initial,
            run.test.mse,
            persistence.test.mse,
            run.status.tag()
        ),
        elapsed,
        Some(Duration::from_secs(300)),
    );
}

fn grid_config(output: PathBuf) -> BenchmarkConfig {
    let variants: Vec<&str> = ModelKind::ALL
        .iter()
        .filter(|k| **k != ModelKind::DLinear)
        .map(|k| k.name())
        .collect();
    let text = format!(
        "synthetic = damped_rotation\nsynth_len = 4096\nsynth_channels = 4\nsynth_seed = 0\n\
         windows = 32\nhorizons = 8\nvariant = {}\nsteps = 2000\nseed = 0\noutput = {}\n",
        variants.join(","),
        output.display()
    );
    parse_config_str(&text).unwrap()
}

fn grid() -> &'static BenchReport {
    static REPORT: OnceLock<BenchReport> = OnceLock::new();
    REPORT.get_or_init(|| run_grid(&grid_config(std::env::temp_dir().join("unused"))).unwrap())
}

#[test]
fn learnable_spectra_stay_below_the_bound() {
    let t0 = Instant::now();
    let report = grid();
    let records = parse_spectra(&report.spectra).unwrap();
    let bounded: Vec<f64> = records
        .iter()
        .filter(|r| Variant::ALL.iter().any(|v| v.is_odo() && v.name() == r.variant))
        .map(|r| r.singular_value)
        .collect();
    let max_bounded = bounded.iter().copied().fold(0.0, f64::max);
    let free_max = |name: &str| {
        records
            .iter()
            .filter(|r| r.variant == name)
            .map(|r| r.singular_value)
            .fold(f64::NAN, f64::max)
    };
    let odo_runs = report
        .results
        .iter()
        .filter(|r| r.name != "unconstrained" && r.name != "ssm" && r.name != "persistence")
        .count();
    verdict(
        "spectral_regime",
        odo_runs == 5 && !bounded.is_empty() && max_bounded < RHO_MAX,
        format!(
            "{} values from {odo_runs} bounded runs, max = {max_bounded}; recorded only: unconstrained max = {}, ssm max = {}",
            bounded.len(),
            free_max("unconstrained"),
            free_max("ssm")
        ),
        t0.elapsed(),
        None,
    );
}

#[test]
fn benchmark_reruns_are_byte_identical() {
    let first = grid();
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let again = koopman_core::bench::run_benchmark(&grid_config(dir.path().to_path_buf())).unwrap();
    let on_disk = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let same = first.summary == again.summary && on_disk == first.summary && first.spectra == again.spectra;
    verdict(
        "determinism",
        same,
        format!(
            "{} summary rows, summary identical: {}, spectra identical: {}",
            first.summary.lines().count() - 1,
            first.summary == again.summary && on_disk == first.summary,
            first.spectra == again.spectra
        ),
        t0.elapsed(),
        None,
    );
}
