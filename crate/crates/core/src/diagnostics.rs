//! Spectral logging and the executable stability checks: snapshots,
//! contraction envelopes, Lyapunov certificates and pooled spectra export.

use std::fmt::Write as _;

use crate::error::{mismatch, Error, Result};
use crate::koopman::KoopmanOperator;
use crate::linalg::{self, norm2, Matrix, GELFAND_POWER};
use crate::model::Model;

/// Default tolerance of [`lyapunov_certificate_check`].
pub const DEFAULT_CERT_TOL: f64 = 1e-10;

/// Singular values of a transition matrix at one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSnapshot {
    pub step: usize,
    pub tag: String,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub radius: f64,
    pub max_sv: f64,
}

impl SpectralSnapshot {
    fn from_values(step: usize, tag: &str, singular_values: Vec<f64>, radius: f64) -> Self {
        let max_sv = singular_values.first().copied().unwrap_or(0.0);
        Self {
            step,
            tag: tag.to_string(),
            singular_values,
            radius,
            max_sv,
        }
    }
}

/// Snapshot of a propagator. ODO operators report their sorted spectrum and
/// its maximum as the radius; dense operators go through an SVD and a
/// Gelfand radius estimate.
pub fn snapshot(op: &KoopmanOperator, step: usize) -> Result<SpectralSnapshot> {
    let sv = op.operator_spectrum()?;
    let radius = match op {
        KoopmanOperator::Odo(_) => sv.first().copied().unwrap_or(0.0),
        KoopmanOperator::Dense(k) => linalg::spectral_radius_estimate(k, GELFAND_POWER)?,
    };
    Ok(SpectralSnapshot::from_values(step, op.variant().name(), sv, radius))
}

/// Snapshot of a plain transition matrix, e.g. an SSM's `A`.
pub fn snapshot_matrix(a: &Matrix, tag: &str, step: usize) -> Result<SpectralSnapshot> {
    let sv = linalg::singular_values(a)?;
    let radius = linalg::spectral_radius_estimate(a, GELFAND_POWER)?;
    Ok(SpectralSnapshot::from_values(step, tag, sv, radius))
}

/// Snapshot of a model's transition matrix; `None` for DLinear.
pub fn model_snapshot(model: &Model, step: usize) -> Result<Option<SpectralSnapshot>> {
    match model {
        Model::Koopman(f) => snapshot(&f.koop, step).map(Some),
        Model::Ssm(m) => snapshot_matrix(&m.a, "ssm", step).map(Some),
        Model::DLinear(_) => Ok(None),
    }
}

/// One point `(n, ‖Kⁿ z₀‖, ρ_maxⁿ ‖z₀‖)` of a contraction envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopePoint {
    pub n: usize,
    pub norm: f64,
    pub bound: f64,
}

/// Relative slack allowed between an iterate's norm and its bound.
pub const ENVELOPE_SLACK: f64 = 1e-12;

/// Iterates `z₀` under an ODO operator and checks every norm against the
/// geometric bound. A violation is an invariant failure and is returned as
/// [`Error::BoundViolation`].
pub fn contraction_envelope(op: &KoopmanOperator, z0: &[f64], n_max: usize) -> Result<Vec<EnvelopePoint>> {
    let odo = op
        .as_odo()
        .ok_or_else(|| Error::InvalidOperator("contraction envelopes need an ODO operator".into()))?;
    let rho = odo.spectral().rho_max;
    let base = norm2(z0);
    let mut z = z0.to_vec();
    let mut out = Vec::with_capacity(n_max + 1);
    let mut bound = base;
    for n in 0..=n_max {
        if n > 0 {
            z = op.apply(&z)?;
            bound *= rho;
        }
        let norm = norm2(&z);
        if norm > bound * (1.0 + ENVELOPE_SLACK) {
            return Err(Error::BoundViolation { n, norm, bound });
        }
        out.push(EnvelopePoint { n, norm, bound });
    }
    Ok(out)
}

/// Result of a Lyapunov certificate check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    pub holds: bool,
    /// Largest eigenvalue of `KᵀPK − P`.
    pub max_eig: f64,
}

/// Checks `λ_max(KᵀPK − P) ≤ tol`.
pub fn lyapunov_certificate_check(k: &Matrix, p: &Matrix, tol: f64) -> Result<Certificate> {
    if !k.is_square() || p.shape() != k.shape() {
        return Err(mismatch(
            "lyapunov_certificate_check",
            linalg::fmt_shape(k.shape()),
            linalg::fmt_shape(p.shape()),
        ));
    }
    let defect = p.asymmetry();
    if !(defect <= 1e-12) {
        return Err(Error::Asymmetric { defect });
    }
    let mut m = k.transpose().matmul(&p.matmul(k)?)?.sub(p)?;
    // symmetrise away rounding in the triple product
    let n = m.rows();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m.row_mut(i)[j] = avg;
            m.row_mut(j)[i] = avg;
        }
    }
    let max_eig = linalg::sym_max_eig(&m)?;
    Ok(Certificate {
        holds: max_eig <= tol,
        max_eig,
    })
}

/// Final spectrum of one trained configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpectrum {
    pub variant: String,
    pub backbone: String,
    pub window: usize,
    pub horizon: usize,
    pub snapshot: SpectralSnapshot,
}

/// One line of the pooled spectra file.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumRecord {
    pub variant: String,
    pub backbone: String,
    pub window: usize,
    pub horizon: usize,
    pub singular_value: f64,
}

pub const SPECTRA_HEADER: &str = "variant,backbone_tag,P,H,singular_value";

/// Pools final-snapshot singular values into one record per value.
pub fn spectrum_records(runs: &[RunSpectrum]) -> Vec<SpectrumRecord> {
    runs.iter()
        .flat_map(|r| {
            r.snapshot.singular_values.iter().map(move |&s| SpectrumRecord {
                variant: r.variant.clone(),
                backbone: r.backbone.clone(),
                window: r.window,
                horizon: r.horizon,
                singular_value: s,
            })
        })
        .collect()
}

/// Pooled spectra as CSV text, header first; floats use shortest
/// round-trip formatting.
pub fn export_spectra(runs: &[RunSpectrum]) -> String {
    let mut out = String::from(SPECTRA_HEADER);
    out.push('\n');
    for r in spectrum_records(runs) {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.variant, r.backbone, r.window, r.horizon, r.singular_value
        );
    }
    out
}

pub fn parse_spectra(text: &str) -> Result<Vec<SpectrumRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SPECTRA_HEADER => {}
        _ => {
            return Err(Error::Format {
                line: 1,
                message: format!("expected header `{SPECTRA_HEADER}`"),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = |message: String| Error::Format { line: i + 1, message };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count `{s}`")));
            Ok(SpectrumRecord {
                variant: f[0].to_string(),
                backbone: f[1].to_string(),
                window: num(f[2])?,
                horizon: num(f[3])?,
                singular_value: f[4].parse().map_err(|_| bad(format!("bad value `{}`", f[4])))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{OperatorConfig, Variant};
    use crate::linalg::qr_orthonormalize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constrained_snapshot_below_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let op = KoopmanOperator::random(Variant::Constrained, 8, &OperatorConfig::default(), &mut rng).unwrap();
        let s = snapshot(&op, 3).unwrap();
        assert_eq!(s.step, 3);
        assert!(s.max_sv < 0.99);
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(s.max_sv, s.singular_values[0]);

        let svd = snapshot_matrix(&op.materialize(), "dense", 3).unwrap();
        for (a, b) in svd.singular_values.iter().zip(&s.singular_values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn ssm_snapshot_may_exceed_unit_circle() {
        let s = snapshot_matrix(&Matrix::identity(3).scaled(1.1), "ssm", 0).unwrap();
        assert!((s.max_sv - 1.1).abs() < 1e-12);
        assert!((s.radius - 1.1).abs() < 1e-9);
    }

    #[test]
    fn envelope_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let op = KoopmanOperator::random(Variant::PerModeGated, 6, &OperatorConfig::default(), &mut rng).unwrap();
        let z0 = Matrix::random_normal(6, 1, 1.0, &mut rng).into_vec();
        let env = contraction_envelope(&op, &z0, 100).unwrap();
        assert_eq!(env.len(), 101);
        assert!(env.iter().all(|p| p.norm <= p.bound * (1.0 + ENVELOPE_SLACK)));

        let zero = contraction_envelope(&op, &z0, 0).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!((zero[0].n, zero[0].norm), (0, norm2(&z0)));
        assert_eq!(zero[0].bound, zero[0].norm);

        assert!(contraction_envelope(&KoopmanOperator::Dense(Matrix::identity(2)), &[1.0, 0.0], 3).is_err());
    }

    #[test]
    fn equal_spectrum_with_u_equal_v_scales_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = qr_orthonormalize(&Matrix::random_normal(5, 5, 1.0, &mut rng)).unwrap();
        let c = 0.8;
        let op = KoopmanOperator::from_factors(Variant::Constrained, q.clone(), &[c; 5], q, 0.99, 0.0).unwrap();
        let z0 = [1.0, -2.0, 0.5, 0.0, 3.0];
        let env = contraction_envelope(&op, &z0, 20).unwrap();
        let sigma = op.as_odo().unwrap().spectrum()[0];
        for p in &env {
            let want = sigma.powi(p.n as i32) * norm2(&z0);
            assert!((p.norm - want).abs() < 1e-12 * want.max(1e-300) * (1 + p.n) as f64);
        }
    }

    #[test]
    fn certificate_examples() {
        let p = Matrix::identity(3);
        let c = lyapunov_certificate_check(&Matrix::identity(3).scaled(0.9), &p, DEFAULT_CERT_TOL).unwrap();
        assert!(c.holds);
        assert!((c.max_eig + 0.19).abs() < 1e-12);
        let c = lyapunov_certificate_check(&Matrix::identity(3).scaled(1.1), &p, DEFAULT_CERT_TOL).unwrap();
        assert!(!c.holds);
        assert!((c.max_eig - 0.21).abs() < 1e-12);
        let asym = Matrix::from_rows(&[&[1.0, 0.1], &[0.0, 1.0]]);
        assert!(matches!(
            lyapunov_certificate_check(&Matrix::identity(2), &asym, 0.0),
            Err(Error::Asymmetric { .. })
        ));
    }

    #[test]
    fn export_counts_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let runs: Vec<RunSpectrum> = (0..2)
            .map(|i| {
                let op =
                    KoopmanOperator::random(Variant::Constrained, 4, &OperatorConfig::default(), &mut rng).unwrap();
                RunSpectrum {
                    variant: "constrained".into(),
                    backbone: "patch".into(),
                    window: 16 * (i + 1),
                    horizon: 4,
                    snapshot: snapshot(&op, 100).unwrap(),
                }
            })
            .collect();
        let text = export_spectra(&runs);
        let recs = parse_spectra(&text).unwrap();
        assert_eq!(recs.len(), 8);
        assert_eq!(recs, spectrum_records(&runs));
        assert!(recs.iter().all(|r| r.singular_value < 0.99));
        let mut again = String::from(SPECTRA_HEADER);
        again.push('\n');
        for r in &recs {
            again.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variant, r.backbone, r.window, r.horizon, r.singular_value
            ));
        }
        assert_eq!(again, text);
    }
}
