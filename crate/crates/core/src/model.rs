//! Uniform handle over every trainable model family, plus checkpoints.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::baselines::{DLinearModel, SsmModel};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::forecaster::{
    loss, mse, Forecaster, LinearDecoder, LossConfig, LossParts, PatchEncoder, DEFAULT_D_MODEL, DEFAULT_PATCHES,
};
use crate::koopman::{KoopmanOperator, OperatorConfig, Variant};
use crate::linalg::Matrix;
use crate::params::{KvDocument, ParamSet};

const CHECKPOINT_FORMAT: &str = "koopman-checkpoint/1";

/// A trainable model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Koopman(Variant),
    DLinear,
    Ssm,
}

impl ModelKind {
    /// The six propagator variants followed by the two linear baselines.
    pub const ALL: [ModelKind; 8] = [
        ModelKind::Koopman(Variant::Constrained),
        ModelKind::Koopman(Variant::ScalarGated),
        ModelKind::Koopman(Variant::PerModeGated),
        ModelKind::Koopman(Variant::MlpShaped),
        ModelKind::Koopman(Variant::LowRank),
        ModelKind::Koopman(Variant::Unconstrained),
        ModelKind::DLinear,
        ModelKind::Ssm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Koopman(v) => v.name(),
            ModelKind::DLinear => "dlinear",
            ModelKind::Ssm => "ssm",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            ModelKind::Koopman(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dlinear" => Ok(ModelKind::DLinear),
            "ssm" => Ok(ModelKind::Ssm),
            _ => s
                .parse::<Variant>()
                .map(ModelKind::Koopman)
                .map_err(|_| Error::InvalidArgument(format!("unknown model `{s}`"))),
        }
    }
}

/// Architecture hyper-parameters shared by all families.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_patches: usize,
    pub use_attention: bool,
    pub operator: OperatorConfig,
    pub ssm_hidden: usize,
    pub ssm_diagonal: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: DEFAULT_D_MODEL,
            n_patches: DEFAULT_PATCHES,
            use_attention: true,
            operator: OperatorConfig::default(),
            ssm_hidden: DEFAULT_D_MODEL,
            ssm_diagonal: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Koopman(Forecaster),
    DLinear(DLinearModel),
    Ssm(SsmModel),
}

impl Model {
    /// Randomly initialised model for `window × channels` inputs.
    pub fn init<R: Rng + ?Sized>(
        kind: ModelKind,
        window: usize,
        horizon: usize,
        channels: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if window == 0 || horizon == 0 || channels == 0 {
            return Err(Error::InvalidArgument("P, H and d must be positive".into()));
        }
        Ok(match kind {
            ModelKind::Koopman(variant) => {
                let enc = PatchEncoder::random(window, channels, cfg.d_model, cfg.n_patches, cfg.use_attention, rng)?;
                let koop = KoopmanOperator::random(variant, cfg.d_model, &cfg.operator, rng)?;
                let dec = LinearDecoder::random(horizon, channels, cfg.d_model, rng);
                Model::Koopman(Forecaster::new(enc, koop, dec)?)
            }
            ModelKind::DLinear => Model::DLinear(DLinearModel::random(window, horizon, rng)),
            ModelKind::Ssm => Model::Ssm(SsmModel::random(
                channels,
                cfg.ssm_hidden,
                horizon,
                cfg.ssm_diagonal,
                rng,
            )),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Koopman(f) => ModelKind::Koopman(f.koop.variant()),
            Model::DLinear(_) => ModelKind::DLinear,
            Model::Ssm(_) => ModelKind::Ssm,
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::Koopman(f) => f.predict(x),
            Model::DLinear(m) => m.forward(x),
            Model::Ssm(m) => m.forward(x),
        }
    }

    /// Per-sample loss. The baselines have no latent hinge, so their loss is
    /// the plain MSE.
    pub fn sample_loss(&self, w: &Window, cfg: &LossConfig) -> Result<LossParts> {
        match self {
            Model::Koopman(f) => {
                let out = f.forward(&w.x)?;
                loss(&out.forecast, &w.y, &out.z, &out.z_next, cfg)
            }
            _ => {
                let m = mse(&self.predict(&w.x)?, &w.y)?;
                Ok(LossParts {
                    total: m,
                    mse: m,
                    hinge: 0.0,
                })
            }
        }
    }

    /// Mean of [`sample_loss`](Self::sample_loss) over the batch.
    pub fn batch_loss(&self, batch: &[Window], cfg: &LossConfig) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut acc = LossParts::default();
        for w in batch {
            let l = self.sample_loss(w, cfg)?;
            acc.total += l.total;
            acc.mse += l.mse;
            acc.hinge += l.hinge;
        }
        let n = batch.len() as f64;
        Ok(LossParts {
            total: acc.total / n,
            mse: acc.mse / n,
            hinge: acc.hinge / n,
        })
    }

    pub fn params(&self) -> ParamSet {
        let mut out = ParamSet::new();
        match self {
            Model::Koopman(f) => f.write_params(&mut out),
            Model::DLinear(m) => m.write_params(&mut out),
            Model::Ssm(m) => m.write_params(&mut out),
        }
        out
    }

    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        match self {
            Model::Koopman(f) => f.read_params(params),
            Model::DLinear(m) => m.read_params(params),
            Model::Ssm(m) => m.read_params(params),
        }
    }

    /// Projects ODO factors back onto the Stiefel manifold; a no-op for
    /// every other family.
    pub fn retract(&mut self) -> Result<()> {
        if let Model::Koopman(f) = self {
            if f.koop.as_odo().is_some() {
                f.koop = f.koop.retract()?;
            }
        }
        Ok(())
    }

    pub fn orthonormality_defect(&self) -> f64 {
        match self {
            Model::Koopman(f) => f.koop.orthonormality_defect(),
            _ => 0.0,
        }
    }

    /// The latent transition matrix: `K` for propagator models, `A` for the
    /// SSM, none for DLinear.
    pub fn transition_matrix(&self) -> Option<Matrix> {
        match self {
            Model::Koopman(f) => Some(f.koop.materialize()),
            Model::Ssm(m) => Some(m.a.clone()),
            Model::DLinear(_) => None,
        }
    }

    /// Descending singular values of the transition matrix.
    pub fn transition_spectrum(&self) -> Result<Option<Vec<f64>>> {
        match self {
            Model::Koopman(f) => f.koop.operator_spectrum().map(Some),
            Model::Ssm(m) => crate::linalg::singular_values(&m.a).map(Some),
            Model::DLinear(_) => Ok(None),
        }
    }

    pub fn to_document(&self) -> KvDocument {
        let mut doc = KvDocument::new();
        doc.push_meta("format", CHECKPOINT_FORMAT);
        doc.push_meta("model", self.kind());
        match self {
            Model::Koopman(f) => {
                doc.push_meta("window", f.window());
                doc.push_meta("horizon", f.horizon());
                doc.push_meta("channels", f.channels());
                doc.push_meta("n_patches", f.encoder.n_patches());
                doc.push_meta("attention", f.encoder.uses_attention());
                f.koop.write_meta(&mut doc);
            }
            Model::DLinear(m) => {
                doc.push_meta("window", m.window());
                doc.push_meta("horizon", m.horizon());
            }
            Model::Ssm(m) => {
                doc.push_meta("horizon", m.horizon);
                doc.push_meta("channels", m.channels());
                doc.push_meta("hidden", m.hidden());
                doc.push_meta("diagonal", m.diagonal);
            }
        }
        doc.tensors = self.params();
        doc
    }

    pub fn from_document(doc: &KvDocument) -> Result<Self> {
        match doc.meta("format")? {
            CHECKPOINT_FORMAT => {}
            other => {
                return Err(Error::Format {
                    line: 1,
                    message: format!("unsupported format `{other}`"),
                })
            }
        }
        let kind: ModelKind = doc.meta("model")?.parse()?;
        let mut model = match kind {
            ModelKind::Koopman(_) => {
                let window: usize = doc.meta_parse("window")?;
                let horizon: usize = doc.meta_parse("horizon")?;
                let channels: usize = doc.meta_parse("channels")?;
                let n_patches: usize = doc.meta_parse("n_patches")?;
                let attention: bool = doc.meta_parse("attention")?;
                let koop = KoopmanOperator::from_document(doc)?;
                let d = koop.dim();
                let patch_len = window.div_ceil(n_patches.max(1));
                let embed = Matrix::zeros(d, patch_len * channels);
                let enc = PatchEncoder::with_weights(
                    window,
                    channels,
                    n_patches,
                    embed,
                    attention.then(|| Matrix::zeros(3 * d, d)),
                )?;
                let dec = LinearDecoder::zeros(horizon, channels, d);
                Model::Koopman(Forecaster::new(enc, koop, dec)?)
            }
            ModelKind::DLinear => {
                let window: usize = doc.meta_parse("window")?;
                let horizon: usize = doc.meta_parse("horizon")?;
                Model::DLinear(DLinearModel::new(Matrix::zeros(horizon, window), vec![0.0; horizon])?)
            }
            ModelKind::Ssm => {
                let horizon: usize = doc.meta_parse("horizon")?;
                let channels: usize = doc.meta_parse("channels")?;
                let hidden: usize = doc.meta_parse("hidden")?;
                let mut m = SsmModel::new(
                    Matrix::zeros(hidden, hidden),
                    Matrix::zeros(hidden, channels),
                    Matrix::zeros(horizon * channels, hidden),
                    horizon,
                )?;
                m.diagonal = doc.meta_parse("diagonal")?;
                Model::Ssm(m)
            }
        };
        model.set_params(&doc.tensors)?;
        Ok(model)
    }

    /// Checkpoint text (see [`crate::params`] for the format).
    pub fn to_checkpoint(&self) -> String {
        self.to_document().render()
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        Self::from_document(&KvDocument::parse(text)?)
    }
}
