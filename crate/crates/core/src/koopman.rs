//! Learnable Koopman propagators.
//!
//! Five of the six families share the orthogonal–diagonal–orthogonal form
//! `K = U diag(Σ) Vᵀ`, where `U`, `V` have orthonormal columns and every
//! spectral coefficient is produced by a squashing map
//!
//! ```text
//! Σ_i = ρ_min + (ρ_max − ρ_min) · sigmoid(u_i)
//! ```
//!
//! with the pre-activation `u_i` chosen per family:
//!
//! | family          | `u_i`                         |
//! |-----------------|-------------------------------|
//! | constrained     | `S_i`                         |
//! | scalar-gated    | `α S_i + β`                   |
//! | per-mode gated  | `α_i S_i + β_i`               |
//! | MLP-shaped      | `g(S_i)`, one tanh hidden layer |
//! | low-rank        | `S_i`, with `U, V ∈ R^{d×r}`  |
//!
//! Because `‖U diag(Σ) Vᵀ‖₂ = max Σ_i`, every ODO operator is a strict
//! contraction with `‖K‖₂ < ρ_max < 1`. The sixth family is a free dense
//! matrix with no spectral control.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{mismatch, Error, Result};
use crate::linalg::{self, fmt_shape, matmul, qr_orthonormalize, Matrix};
use crate::params::{KvDocument, ParamSet};

/// Default spectral bound.
pub const DEFAULT_RHO_MAX: f64 = 0.99;
/// Default rank of the low-rank family.
pub const DEFAULT_RANK: usize = 16;
/// Default hidden width of the spectral MLP.
pub const DEFAULT_MLP_HIDDEN: usize = 16;
/// Relative distance a saturated spectral value keeps from either bound.
pub const SATURATION_MARGIN: f64 = 1e-12;

/// The six propagator families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Constrained,
    ScalarGated,
    PerModeGated,
    MlpShaped,
    LowRank,
    Unconstrained,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Constrained,
        Variant::ScalarGated,
        Variant::PerModeGated,
        Variant::MlpShaped,
        Variant::LowRank,
        Variant::Unconstrained,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Constrained => "constrained",
            Variant::ScalarGated => "scalar_gated",
            Variant::PerModeGated => "per_mode_gated",
            Variant::MlpShaped => "mlp_shaped",
            Variant::LowRank => "low_rank",
            Variant::Unconstrained => "unconstrained",
        }
    }

    pub fn is_odo(self) -> bool {
        self != Variant::Unconstrained
    }

    /// Squashing map used by an ODO family; `None` for the dense family.
    pub fn squash(self) -> Option<SquashVariant> {
        match self {
            Variant::Constrained | Variant::LowRank => Some(SquashVariant::Constrained),
            Variant::ScalarGated => Some(SquashVariant::ScalarGated),
            Variant::PerModeGated => Some(SquashVariant::PerModeGated),
            Variant::MlpShaped => Some(SquashVariant::MlpShaped),
            Variant::Unconstrained => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown Koopman variant `{s}`")))
    }
}

/// How raw spectral parameters are squashed into `(ρ_min, ρ_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SquashVariant {
    Constrained,
    ScalarGated,
    PerModeGated,
    MlpShaped,
}

/// Scalar-to-scalar network `g(s) = Σ_k w2_k tanh(w1_k s + b1_k) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMlp {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl SpectralMlp {
    pub fn hidden(&self) -> usize {
        self.w1.len()
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.w1
            .iter()
            .zip(&self.b1)
            .zip(&self.w2)
            .map(|((w1, b1), w2)| w2 * (w1 * s + b1).tanh())
            .sum::<f64>()
            + self.b2
    }

    fn validate(&self) -> Result<()> {
        let h = self.w1.len();
        if self.b1.len() != h || self.w2.len() != h {
            return Err(mismatch(
                "SpectralMlp",
                format!("hidden width {h}"),
                format!("b1 {} / w2 {}", self.b1.len(), self.w2.len()),
            ));
        }
        Ok(())
    }
}

/// Raw spectrum parameters and the bounds they are squashed into.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralParams {
    pub s: Vec<f64>,
    /// Gate slope: empty, length 1 (scalar-gated) or length m (per-mode).
    pub alpha: Vec<f64>,
    /// Gate offset, same length as `alpha`.
    pub beta: Vec<f64>,
    pub mlp: Option<SpectralMlp>,
    pub rho_max: f64,
    pub rho_min: f64,
}

impl SpectralParams {
    /// Plain parameters for the constrained map.
    pub fn plain(s: Vec<f64>, rho_max: f64, rho_min: f64) -> Self {
        Self {
            s,
            alpha: Vec::new(),
            beta: Vec::new(),
            mlp: None,
            rho_max,
            rho_min,
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn validate(&self, squash: SquashVariant) -> Result<()> {
        if !(self.rho_max > 0.0 && self.rho_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rho_max must lie in (0, 1), got {}",
                self.rho_max
            )));
        }
        if !(self.rho_min >= 0.0 && self.rho_min < self.rho_max) {
            return Err(Error::InvalidArgument(format!(
                "rho_min must lie in [0, rho_max), got {}",
                self.rho_min
            )));
        }
        let m = self.s.len();
        let gates = match squash {
            SquashVariant::Constrained | SquashVariant::MlpShaped => 0,
            SquashVariant::ScalarGated => 1,
            SquashVariant::PerModeGated => m,
        };
        if self.alpha.len() != gates || self.beta.len() != gates {
            return Err(mismatch(
                "spectral gates",
                gates,
                format!("alpha {} / beta {}", self.alpha.len(), self.beta.len()),
            ));
        }
        match (&self.mlp, squash) {
            (Some(mlp), SquashVariant::MlpShaped) => mlp.validate(),
            (None, SquashVariant::MlpShaped) => {
                Err(Error::InvalidArgument("MLP-shaped spectrum needs MLP weights".into()))
            }
            (Some(_), _) => Err(Error::InvalidArgument(
                "MLP weights given for a non-MLP spectrum".into(),
            )),
            (None, _) => Ok(()),
        }
    }

    /// Pre-activation `u_i` fed to the sigmoid.
    pub(crate) fn pre_activation(&self, i: usize, squash: SquashVariant) -> f64 {
        let s = self.s[i];
        match squash {
            SquashVariant::Constrained => s,
            SquashVariant::ScalarGated => self.alpha[0] * s + self.beta[0],
            SquashVariant::PerModeGated => self.alpha[i] * s + self.beta[i],
            SquashVariant::MlpShaped => self.mlp.as_ref().expect("validated").eval(s),
        }
    }

    /// Maps a sigmoid value into the open interval `(ρ_min, ρ_max)`.
    ///
    /// Once the sigmoid saturates the affine map would land on (or within
    /// rounding of) an endpoint, so the result is kept [`SATURATION_MARGIN`]
    /// of the interval width away from both ends. The margin is far above
    /// the rounding error of materialising `U diag(Σ) Vᵀ`, so the strict
    /// bound survives in the dense matrix too.
    pub(crate) fn squash_value(&self, sig: f64) -> f64 {
        let width = self.rho_max - self.rho_min;
        let v = self.rho_min + width * sig;
        let guard = SATURATION_MARGIN * width;
        v.min(self.rho_max - guard).max(self.rho_min + guard)
    }
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Spectral coefficients `Σ` for the given squashing map.
pub fn build_spectrum(params: &SpectralParams, squash: SquashVariant) -> Result<Vec<f64>> {
    params.validate(squash)?;
    Ok((0..params.len())
        .map(|i| params.squash_value(sigmoid(params.pre_activation(i, squash))))
        .collect())
}

/// Sizes and bounds used to initialise an operator.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorConfig {
    pub rho_max: f64,
    pub rho_min: f64,
    pub rank: usize,
    pub mlp_hidden: usize,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            rho_max: DEFAULT_RHO_MAX,
            rho_min: 0.0,
            rank: DEFAULT_RANK,
            mlp_hidden: DEFAULT_MLP_HIDDEN,
        }
    }
}

impl OperatorConfig {
    /// Rank actually used for latent width `d`; falls back to `d / 2` when the
    /// configured rank would not be below `d`.
    pub fn effective_rank(&self, d: usize) -> usize {
        if self.rank < d {
            self.rank.max(1)
        } else {
            (d / 2).max(1)
        }
    }
}

/// An ODO-factored propagator `U diag(Σ) Vᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdoOperator {
    variant: Variant,
    u: Matrix,
    v: Matrix,
    spectral: SpectralParams,
}

impl OdoOperator {
    pub fn new(variant: Variant, u: Matrix, v: Matrix, spectral: SpectralParams) -> Result<Self> {
        let squash = variant
            .squash()
            .ok_or_else(|| Error::InvalidOperator("the unconstrained family has no ODO form".into()))?;
        let (d, m) = u.shape();
        if v.shape() != (d, m) {
            return Err(mismatch("OdoOperator V", fmt_shape((d, m)), fmt_shape(v.shape())));
        }
        if spectral.len() != m {
            return Err(mismatch("OdoOperator spectrum", m, spectral.len()));
        }
        if variant == Variant::LowRank {
            if m >= d {
                return Err(Error::InvalidOperator(format!(
                    "low-rank operator needs r < d, got r = {m}, d = {d}"
                )));
            }
        } else if m != d {
            return Err(Error::InvalidOperator(format!(
                "{variant} operator needs square factors, got {d}x{m}"
            )));
        }
        spectral.validate(squash)?;
        Ok(Self {
            variant,
            u,
            v,
            spectral,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn squash(&self) -> SquashVariant {
        self.variant.squash().expect("ODO variant")
    }

    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn spectral(&self) -> &SpectralParams {
        &self.spectral
    }

    pub fn spectrum(&self) -> Vec<f64> {
        build_spectrum(&self.spectral, self.squash()).expect("validated on construction")
    }
}

/// A learned latent propagator.
#[derive(Clone, Debug, PartialEq)]
pub enum KoopmanOperator {
    Odo(OdoOperator),
    Dense(Matrix),
}

impl KoopmanOperator {
    /// Random initialisation: raw spectrum `S ~ N(0, 0.1²)`, gates at
    /// `α = 1, β = 0`, orthonormal factors from QR of Gaussian matrices, and
    /// a dense matrix scaled by `0.9 / √d`.
    pub fn random<R: Rng + ?Sized>(variant: Variant, d: usize, cfg: &OperatorConfig, rng: &mut R) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        let Some(squash) = variant.squash() else {
            return Ok(Self::Dense(Matrix::random_normal(d, d, 0.9 / (d as f64).sqrt(), rng)));
        };
        let m = if variant == Variant::LowRank {
            if d < 2 {
                return Err(Error::InvalidOperator("low-rank operator needs d >= 2".into()));
            }
            cfg.effective_rank(d)
        } else {
            d
        };
        let u = qr_orthonormalize(&Matrix::random_normal(d, m, 1.0, rng))?;
        let v = qr_orthonormalize(&Matrix::random_normal(d, m, 1.0, rng))?;
        let s: Vec<f64> = (0..m).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut spectral = SpectralParams::plain(s, cfg.rho_max, cfg.rho_min);
        match squash {
            SquashVariant::Constrained => {}
            SquashVariant::ScalarGated => {
                spectral.alpha = vec![1.0];
                spectral.beta = vec![0.0];
            }
            SquashVariant::PerModeGated => {
                spectral.alpha = vec![1.0; m];
                spectral.beta = vec![0.0; m];
            }
            SquashVariant::MlpShaped => {
                let h = cfg.mlp_hidden.max(1);
                let w1 = (0..h).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let b1 = (0..h).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
                let w2 = (0..h)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / (h as f64).sqrt())
                    .collect();
                spectral.mlp = Some(SpectralMlp { w1, b1, w2, b2: 0.0 });
            }
        }
        Ok(Self::Odo(OdoOperator::new(variant, u, v, spectral)?))
    }

    /// ODO operator with prescribed factors and spectrum, inverting the
    /// squashing map to recover the raw parameters (gates at `α = 1, β = 0`).
    pub fn from_factors(
        variant: Variant,
        u: Matrix,
        sigma: &[f64],
        v: Matrix,
        rho_max: f64,
        rho_min: f64,
    ) -> Result<Self> {
        let squash = variant
            .squash()
            .ok_or_else(|| Error::InvalidOperator("the unconstrained family has no ODO form".into()))?;
        let mut s = Vec::with_capacity(sigma.len());
        for &x in sigma {
            if !(x > rho_min && x < rho_max) {
                return Err(Error::InvalidArgument(format!(
                    "spectral value {x} is outside the open interval ({rho_min}, {rho_max})"
                )));
            }
            s.push(logit((x - rho_min) / (rho_max - rho_min)));
        }
        let m = s.len();
        let mut spectral = SpectralParams::plain(s, rho_max, rho_min);
        match squash {
            SquashVariant::Constrained => {}
            SquashVariant::ScalarGated => {
                spectral.alpha = vec![1.0];
                spectral.beta = vec![0.0];
            }
            SquashVariant::PerModeGated => {
                spectral.alpha = vec![1.0; m];
                spectral.beta = vec![0.0; m];
            }
            SquashVariant::MlpShaped => {
                return Err(Error::InvalidOperator(
                    "the MLP spectrum map has no closed-form inverse".into(),
                ));
            }
        }
        Ok(Self::Odo(OdoOperator::new(variant, u, v, spectral)?))
    }

    /// ODO operator built from the SVD of a square matrix. With
    /// `rank = Some(r)`, `r < d`, the result is the low-rank operator holding
    /// the leading `r` singular triplets (the Eckart–Young truncation);
    /// otherwise it reproduces `m` in constrained form. Every kept singular
    /// value must lie strictly inside `(ρ_min, ρ_max)`.
    pub fn from_matrix(m: &Matrix, rank: Option<usize>, rho_max: f64, rho_min: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(mismatch("KoopmanOperator::from_matrix", "square", fmt_shape(m.shape())));
        }
        let d = m.rows();
        let dec = linalg::svd(m)?;
        let (variant, r) = match rank {
            Some(r) if r < d => (Variant::LowRank, r.max(1)),
            _ => (Variant::Constrained, d),
        };
        let take = |a: &Matrix| {
            let mut out = Matrix::zeros(d, r);
            for j in 0..r {
                out.set_col(j, &a.col(j));
            }
            out
        };
        Self::from_factors(variant, take(&dec.u), &dec.s[..r], take(&dec.v), rho_max, rho_min)
    }

    pub fn variant(&self) -> Variant {
        match self {
            Self::Odo(op) => op.variant,
            Self::Dense(_) => Variant::Unconstrained,
        }
    }

    /// Latent dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Self::Odo(op) => op.u.rows(),
            Self::Dense(k) => k.rows(),
        }
    }

    /// Spectrum length `m` (`r` for low-rank, `d` otherwise).
    pub fn spectrum_len(&self) -> usize {
        match self {
            Self::Odo(op) => op.spectral.len(),
            Self::Dense(k) => k.rows(),
        }
    }

    pub fn as_odo(&self) -> Option<&OdoOperator> {
        match self {
            Self::Odo(op) => Some(op),
            Self::Dense(_) => None,
        }
    }

    /// Dense `d × d` matrix.
    pub fn materialize(&self) -> Matrix {
        match self {
            Self::Odo(op) => {
                let sigma = op.spectrum();
                let mut scaled = op.u.clone();
                for i in 0..scaled.rows() {
                    for (x, s) in scaled.row_mut(i).iter_mut().zip(&sigma) {
                        *x *= s;
                    }
                }
                matmul(&scaled, &op.v.transpose()).expect("factor shapes")
            }
            Self::Dense(k) => k.clone(),
        }
    }

    /// `K z`, in `O(d·m)` for ODO operators.
    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(mismatch("KoopmanOperator::apply", self.dim(), z.len()));
        }
        match self {
            Self::Odo(op) => {
                let mut w = op.v.t_matvec(z)?;
                for (wi, s) in w.iter_mut().zip(op.spectrum()) {
                    *wi *= s;
                }
                op.u.matvec(&w)
            }
            Self::Dense(k) => k.matvec(z),
        }
    }

    /// `K⁻¹ z = V diag(Σ⁻¹) Uᵀ z`.
    ///
    /// Only full-rank ODO operators with `ρ_min > 0` are guaranteed
    /// invertible with a bounded inverse; anything else is refused.
    pub fn inverse_apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        let op = match self {
            Self::Dense(_) => {
                return Err(Error::NotInvertible(
                    "unconstrained operators carry no spectral lower bound".into(),
                ))
            }
            Self::Odo(op) if op.variant == Variant::LowRank => {
                return Err(Error::NotInvertible("low-rank operators are singular".into()))
            }
            Self::Odo(op) => op,
        };
        if op.spectral.rho_min <= 0.0 {
            return Err(Error::NotInvertible(
                "rho_min = 0 does not bound the spectrum away from zero".into(),
            ));
        }
        if z.len() != self.dim() {
            return Err(mismatch("KoopmanOperator::inverse_apply", self.dim(), z.len()));
        }
        let mut w = op.u.t_matvec(z)?;
        for (wi, s) in w.iter_mut().zip(op.spectrum()) {
            *wi /= s;
        }
        op.v.matvec(&w)
    }

    /// Singular values, descending. ODO operators report their sorted
    /// spectrum directly; the dense family goes through an SVD.
    pub fn operator_spectrum(&self) -> Result<Vec<f64>> {
        match self {
            Self::Odo(op) => {
                let mut s: Vec<f64> = op.spectrum().into_iter().map(f64::abs).collect();
                s.sort_by(|a, b| b.total_cmp(a));
                Ok(s)
            }
            Self::Dense(k) => linalg::singular_values(k),
        }
    }

    /// Re-orthonormalises `U` and `V` by QR, leaving the spectrum untouched.
    pub fn retract(&self) -> Result<Self> {
        match self {
            Self::Odo(op) => Ok(Self::Odo(OdoOperator {
                variant: op.variant,
                u: qr_orthonormalize(&op.u)?,
                v: qr_orthonormalize(&op.v)?,
                spectral: op.spectral.clone(),
            })),
            Self::Dense(_) => Err(Error::InvalidOperator("retraction applies to ODO factors only".into())),
        }
    }

    /// Larger of the two factor orthonormality defects; zero for dense.
    pub fn orthonormality_defect(&self) -> f64 {
        match self {
            Self::Odo(op) => op.u.orthonormality_defect().max(op.v.orthonormality_defect()),
            Self::Dense(_) => 0.0,
        }
    }

    /// Writes every trainable tensor under the `koopman.` prefix.
    pub fn write_params(&self, out: &mut ParamSet) {
        match self {
            Self::Dense(k) => out.insert("koopman.K", k.clone()),
            Self::Odo(op) => {
                let sp = &op.spectral;
                out.insert("koopman.U", op.u.clone());
                out.insert("koopman.V", op.v.clone());
                out.insert("koopman.S", Matrix::column(&sp.s));
                if !sp.alpha.is_empty() {
                    out.insert("koopman.alpha", Matrix::column(&sp.alpha));
                    out.insert("koopman.beta", Matrix::column(&sp.beta));
                }
                if let Some(mlp) = &sp.mlp {
                    let h = mlp.hidden();
                    out.insert("koopman.mlp_w1", Matrix::column(&mlp.w1));
                    out.insert("koopman.mlp_b1", Matrix::column(&mlp.b1));
                    out.insert(
                        "koopman.mlp_w2",
                        Matrix::from_vec(1, h, mlp.w2.clone()).expect("row shape"),
                    );
                    out.insert("koopman.mlp_b2", Matrix::column(&[mlp.b2]));
                }
            }
        }
    }

    /// Replaces trainable tensors from `params`; shapes must match.
    pub fn read_params(&mut self, params: &ParamSet) -> Result<()> {
        match self {
            Self::Dense(k) => {
                *k = params.expect("koopman.K", k.shape())?.clone();
            }
            Self::Odo(op) => {
                op.u = params.expect("koopman.U", op.u.shape())?.clone();
                op.v = params.expect("koopman.V", op.v.shape())?.clone();
                let m = op.spectral.len();
                op.spectral.s = params.expect("koopman.S", (m, 1))?.as_slice().to_vec();
                let gates = op.spectral.alpha.len();
                if gates > 0 {
                    op.spectral.alpha = params.expect("koopman.alpha", (gates, 1))?.as_slice().to_vec();
                    op.spectral.beta = params.expect("koopman.beta", (gates, 1))?.as_slice().to_vec();
                }
                if let Some(mlp) = &mut op.spectral.mlp {
                    let h = mlp.hidden();
                    mlp.w1 = params.expect("koopman.mlp_w1", (h, 1))?.as_slice().to_vec();
                    mlp.b1 = params.expect("koopman.mlp_b1", (h, 1))?.as_slice().to_vec();
                    mlp.w2 = params.expect("koopman.mlp_w2", (1, h))?.as_slice().to_vec();
                    mlp.b2 = params.expect("koopman.mlp_b2", (1, 1))?[(0, 0)];
                }
            }
        }
        Ok(())
    }

    /// Metadata keys describing the operator's structure.
    pub fn write_meta(&self, doc: &mut KvDocument) {
        doc.push_meta("variant", self.variant());
        doc.push_meta("latent_dim", self.dim());
        doc.push_meta("spectrum_len", self.spectrum_len());
        if let Self::Odo(op) = self {
            doc.push_meta("rho_max", op.spectral.rho_max);
            doc.push_meta("rho_min", op.spectral.rho_min);
            if let Some(mlp) = &op.spectral.mlp {
                doc.push_meta("mlp_hidden", mlp.hidden());
            }
        }
    }

    /// Rebuilds an operator from metadata and tensors written by
    /// [`write_meta`](Self::write_meta) and [`write_params`](Self::write_params).
    pub fn from_document(doc: &KvDocument) -> Result<Self> {
        let variant: Variant = doc.meta("variant")?.parse()?;
        let d: usize = doc.meta_parse("latent_dim")?;
        let m: usize = doc.meta_parse("spectrum_len")?;
        let mut op = match variant.squash() {
            None => Self::Dense(Matrix::zeros(d, d)),
            Some(squash) => {
                let rho_max: f64 = doc.meta_parse("rho_max")?;
                let rho_min: f64 = doc.meta_parse("rho_min")?;
                let mut spectral = SpectralParams::plain(vec![0.0; m], rho_max, rho_min);
                match squash {
                    SquashVariant::Constrained => {}
                    SquashVariant::ScalarGated => {
                        spectral.alpha = vec![0.0];
                        spectral.beta = vec![0.0];
                    }
                    SquashVariant::PerModeGated => {
                        spectral.alpha = vec![0.0; m];
                        spectral.beta = vec![0.0; m];
                    }
                    SquashVariant::MlpShaped => {
                        let h: usize = doc.meta_parse("mlp_hidden")?;
                        spectral.mlp = Some(SpectralMlp {
                            w1: vec![0.0; h],
                            b1: vec![0.0; h],
                            w2: vec![0.0; h],
                            b2: 0.0,
                        });
                    }
                }
                Self::Odo(OdoOperator::new(
                    variant,
                    Matrix::zeros(d, m),
                    Matrix::zeros(d, m),
                    spectral,
                )?)
            }
        };
        op.read_params(&doc.tensors)?;
        Ok(op)
    }

    /// Standalone text serialisation (see [`crate::params`] for the format).
    pub fn to_text(&self) -> String {
        let mut doc = KvDocument::new();
        doc.push_meta("format", "koopman-operator/1");
        self.write_meta(&mut doc);
        self.write_params(&mut doc.tensors);
        doc.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let doc = KvDocument::parse(text)?;
        match doc.meta("format")? {
            "koopman-operator/1" => Self::from_document(&doc),
            other => Err(Error::Format {
                line: 1,
                message: format!("unsupported format `{other}`"),
            }),
        }
    }
}
