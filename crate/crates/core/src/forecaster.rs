//! Encoder → Koopman propagator → direct multi-step decoder.
//!
//! The encoder is a compact patch encoder: the `P × d` window is cut into
//! `n_patches` contiguous patches, each flattened patch is linearly embedded,
//! fixed sinusoidal positions are added, an optional single-head
//! self-attention layer (with residual connection) mixes the tokens, and the
//! tokens are mean-pooled into one latent vector `z`. The propagator advances
//! `z` by one step and a linear decoder emits the whole `H`-step horizon at
//! once.

use rand::Rng;

use crate::data::Window;
use crate::error::{mismatch, Error, Result};
use crate::koopman::KoopmanOperator;
use crate::linalg::{dot, fmt_shape, Matrix};
use crate::params::ParamSet;

/// Default number of patches per window.
pub const DEFAULT_PATCHES: usize = 4;
/// Default latent / model width.
pub const DEFAULT_D_MODEL: usize = 32;

/// Patch embedding, fixed positions and optional self-attention.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEncoder {
    window: usize,
    channels: usize,
    n_patches: usize,
    patch_len: usize,
    embed: Matrix,
    pos_enc: Matrix,
    attn_qkv: Option<Matrix>,
}

/// Intermediate values of one encoder pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub(crate) struct EncoderTrace {
    pub flats: Vec<Vec<f64>>,
    pub tokens: Vec<Vec<f64>>,
    pub attention: Option<AttentionTrace>,
}

#[derive(Clone, Debug)]
pub(crate) struct AttentionTrace {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Row-stochastic attention weights, `n_patches × n_patches`.
    pub weights: Vec<Vec<f64>>,
}

/// Sinusoidal position table, `n × width`.
pub fn sinusoidal_positions(n: usize, width: usize) -> Matrix {
    let mut pe = Matrix::zeros(n, width);
    for p in 0..n {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * pair / width as f64);
            pe[(p, i)] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl PatchEncoder {
    /// Random encoder for `window × channels` inputs. Weights are Gaussian
    /// with variance `1 / fan_in`.
    pub fn random<R: Rng + ?Sized>(
        window: usize,
        channels: usize,
        d_model: usize,
        n_patches: usize,
        use_attention: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if window == 0 || channels == 0 || d_model == 0 || n_patches == 0 {
            return Err(Error::InvalidArgument("encoder sizes must be positive".into()));
        }
        let patch_len = window.div_ceil(n_patches);
        let fan_in = patch_len * channels;
        let embed = Matrix::random_normal(d_model, fan_in, 1.0 / (fan_in as f64).sqrt(), rng);
        let attn_qkv =
            use_attention.then(|| Matrix::random_normal(3 * d_model, d_model, 1.0 / (d_model as f64).sqrt(), rng));
        Self::with_weights(window, channels, n_patches, embed, attn_qkv)
    }

    /// Encoder with explicit weights; `embed` must be `d_model × (patch_len·channels)`.
    pub fn with_weights(
        window: usize,
        channels: usize,
        n_patches: usize,
        embed: Matrix,
        attn_qkv: Option<Matrix>,
    ) -> Result<Self> {
        if window == 0 || channels == 0 || n_patches == 0 {
            return Err(Error::InvalidArgument("encoder sizes must be positive".into()));
        }
        let patch_len = window.div_ceil(n_patches);
        if embed.cols() != patch_len * channels {
            return Err(mismatch("PatchEncoder embed", patch_len * channels, embed.cols()));
        }
        let d_model = embed.rows();
        if let Some(w) = &attn_qkv {
            if w.shape() != (3 * d_model, d_model) {
                return Err(mismatch(
                    "PatchEncoder attn_qkv",
                    fmt_shape((3 * d_model, d_model)),
                    fmt_shape(w.shape()),
                ));
            }
        }
        Ok(Self {
            window,
            channels,
            n_patches,
            patch_len,
            pos_enc: sinusoidal_positions(n_patches, d_model),
            embed,
            attn_qkv,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn d_model(&self) -> usize {
        self.embed.rows()
    }

    pub fn embed(&self) -> &Matrix {
        &self.embed
    }

    pub fn pos_enc(&self) -> &Matrix {
        &self.pos_enc
    }

    pub fn attn_qkv(&self) -> Option<&Matrix> {
        self.attn_qkv.as_ref()
    }

    pub fn uses_attention(&self) -> bool {
        self.attn_qkv.is_some()
    }

    /// Flattened patches of the window, right-padded with its last row.
    pub fn patches(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x.shape() != (self.window, self.channels) {
            return Err(mismatch(
                "encode",
                fmt_shape((self.window, self.channels)),
                fmt_shape(x.shape()),
            ));
        }
        let last = self.window - 1;
        Ok((0..self.n_patches)
            .map(|p| {
                let mut flat = Vec::with_capacity(self.patch_len * self.channels);
                for t in 0..self.patch_len {
                    let row = (p * self.patch_len + t).min(last);
                    flat.extend_from_slice(x.row(row));
                }
                flat
            })
            .collect())
    }

    pub fn encode(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.encode_traced(x)?.0)
    }

    pub(crate) fn encode_traced(&self, x: &Matrix) -> Result<(Vec<f64>, EncoderTrace)> {
        let flats = self.patches(x)?;
        let d_model = self.d_model();
        let tokens: Vec<Vec<f64>> = flats
            .iter()
            .enumerate()
            .map(|(p, flat)| {
                let mut t = self.embed.matvec(flat).expect("patch width");
                t.iter_mut().zip(self.pos_enc.row(p)).for_each(|(a, b)| *a += b);
                t
            })
            .collect();

        let (hidden, attention) = match &self.attn_qkv {
            None => (tokens.clone(), None),
            Some(w) => {
                let proj = |offset: usize, t: &[f64]| -> Vec<f64> {
                    (0..d_model).map(|i| dot(w.row(offset + i), t)).collect()
                };
                let q: Vec<Vec<f64>> = tokens.iter().map(|t| proj(0, t)).collect();
                let k: Vec<Vec<f64>> = tokens.iter().map(|t| proj(d_model, t)).collect();
                let v: Vec<Vec<f64>> = tokens.iter().map(|t| proj(2 * d_model, t)).collect();
                let scale = 1.0 / (d_model as f64).sqrt();
                let weights: Vec<Vec<f64>> = q
                    .iter()
                    .map(|qi| softmax(&k.iter().map(|kj| scale * dot(qi, kj)).collect::<Vec<_>>()))
                    .collect();
                let hidden = tokens
                    .iter()
                    .zip(&weights)
                    .map(|(t, a)| {
                        let mut h = t.clone();
                        for (aj, vj) in a.iter().zip(&v) {
                            h.iter_mut().zip(vj).for_each(|(x, y)| *x += aj * y);
                        }
                        h
                    })
                    .collect();
                (hidden, Some(AttentionTrace { q, k, v, weights }))
            }
        };

        let inv_n = 1.0 / self.n_patches as f64;
        let mut z = vec![0.0; d_model];
        for h in &hidden {
            z.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        }
        z.iter_mut().for_each(|a| *a *= inv_n);
        Ok((
            z,
            EncoderTrace {
                flats,
                tokens,
                attention,
            },
        ))
    }

    pub fn write_params(&self, out: &mut ParamSet) {
        out.insert("encoder.embed", self.embed.clone());
        if let Some(w) = &self.attn_qkv {
            out.insert("encoder.attn_qkv", w.clone());
        }
    }

    pub fn read_params(&mut self, params: &ParamSet) -> Result<()> {
        self.embed = params.expect("encoder.embed", self.embed.shape())?.clone();
        if let Some(w) = &mut self.attn_qkv {
            *w = params.expect("encoder.attn_qkv", w.shape())?.clone();
        }
        Ok(())
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Direct `H`-step linear readout `reshape(W z + b, H, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecoder {
    horizon: usize,
    channels: usize,
    w: Matrix,
    b: Vec<f64>,
}

impl LinearDecoder {
    pub fn new(horizon: usize, channels: usize, w: Matrix, b: Vec<f64>) -> Result<Self> {
        if w.rows() != horizon * channels {
            return Err(mismatch("LinearDecoder W rows", horizon * channels, w.rows()));
        }
        if b.len() != w.rows() {
            return Err(mismatch("LinearDecoder bias", w.rows(), b.len()));
        }
        Ok(Self {
            horizon,
            channels,
            w,
            b,
        })
    }

    pub fn zeros(horizon: usize, channels: usize, d_lat: usize) -> Self {
        Self {
            horizon,
            channels,
            w: Matrix::zeros(horizon * channels, d_lat),
            b: vec![0.0; horizon * channels],
        }
    }

    /// Gaussian weights with variance `1 / d_lat`, zero bias.
    pub fn random<R: Rng + ?Sized>(horizon: usize, channels: usize, d_lat: usize, rng: &mut R) -> Self {
        Self {
            horizon,
            channels,
            w: Matrix::random_normal(horizon * channels, d_lat, 1.0 / (d_lat as f64).sqrt(), rng),
            b: vec![0.0; horizon * channels],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Forecast as an `H × d` matrix; row `t` is step `t + 1`.
    pub fn decode(&self, z_next: &[f64]) -> Result<Matrix> {
        if z_next.len() != self.w.cols() {
            return Err(mismatch("decode", self.w.cols(), z_next.len()));
        }
        let mut y = self.w.matvec(z_next)?;
        y.iter_mut().zip(&self.b).for_each(|(a, b)| *a += b);
        Matrix::from_vec(self.horizon, self.channels, y)
    }

    pub fn write_params(&self, out: &mut ParamSet) {
        out.insert("decoder.W", self.w.clone());
        out.insert("decoder.b", Matrix::column(&self.b));
    }

    pub fn read_params(&mut self, params: &ParamSet) -> Result<()> {
        self.w = params.expect("decoder.W", self.w.shape())?.clone();
        self.b = params.expect("decoder.b", (self.b.len(), 1))?.as_slice().to_vec();
        Ok(())
    }
}

/// Weight and metric of the Lyapunov hinge `λ·[‖K z‖²_P − ‖z‖²_P]₊`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_lyap: f64,
    pub p_metric: Matrix,
}

impl LossConfig {
    /// Identity metric, the default.
    pub fn identity(lambda_lyap: f64, d_lat: usize) -> Self {
        Self {
            lambda_lyap,
            p_metric: Matrix::identity(d_lat),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_lyap >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda_lyap must be nonnegative, got {}",
                self.lambda_lyap
            )));
        }
        let defect = self.p_metric.asymmetry();
        if !(defect <= 1e-12) {
            return Err(Error::Asymmetric { defect });
        }
        let eig = crate::linalg::sym_eigenvalues(&self.p_metric)?;
        match eig.last() {
            Some(&min) if min > 0.0 => Ok(()),
            _ => Err(Error::InvalidArgument(
                "Lyapunov metric must be positive definite".into(),
            )),
        }
    }

    /// `zᵀ P z`.
    pub fn energy(&self, z: &[f64]) -> f64 {
        dot(z, &self.p_metric.matvec(z).expect("metric shape"))
    }

    /// The hinge argument `‖z_next‖²_P − ‖z‖²_P` (not yet clipped at 0).
    pub fn energy_growth(&self, z: &[f64], z_next: &[f64]) -> f64 {
        self.energy(z_next) - self.energy(z)
    }
}

/// Value of the composite loss split into its parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub mse: f64,
    /// Mean of `[‖K z‖²_P − ‖z‖²_P]₊`, before weighting.
    pub hinge: f64,
}

/// Mean squared error over all entries.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(mismatch("mse", fmt_shape(target.shape()), fmt_shape(pred.shape())));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Per-sample composite loss `MSE + λ·[‖z_next‖²_P − ‖z‖²_P]₊`.
pub fn loss(pred: &Matrix, target: &Matrix, z: &[f64], z_next: &[f64], cfg: &LossConfig) -> Result<LossParts> {
    let m = mse(pred, target)?;
    if z.len() != cfg.p_metric.rows() || z_next.len() != z.len() {
        return Err(mismatch(
            "loss latent",
            cfg.p_metric.rows(),
            format!("{} / {}", z.len(), z_next.len()),
        ));
    }
    let hinge = cfg.energy_growth(z, z_next).max(0.0);
    Ok(LossParts {
        total: m + cfg.lambda_lyap * hinge,
        mse: m,
        hinge,
    })
}

/// Output of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub forecast: Matrix,
    pub z: Vec<f64>,
    pub z_next: Vec<f64>,
}

/// The full encoder–propagator–decoder model.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    pub encoder: PatchEncoder,
    pub koop: KoopmanOperator,
    pub decoder: LinearDecoder,
}

impl Forecaster {
    pub fn new(encoder: PatchEncoder, koop: KoopmanOperator, decoder: LinearDecoder) -> Result<Self> {
        let d_lat = encoder.d_model();
        if koop.dim() != d_lat {
            return Err(mismatch("Forecaster latent", d_lat, koop.dim()));
        }
        if decoder.w.cols() != d_lat {
            return Err(mismatch("Forecaster decoder", d_lat, decoder.w.cols()));
        }
        if decoder.channels != encoder.channels {
            return Err(mismatch("Forecaster channels", encoder.channels, decoder.channels));
        }
        Ok(Self { encoder, koop, decoder })
    }

    pub fn window(&self) -> usize {
        self.encoder.window
    }

    pub fn horizon(&self) -> usize {
        self.decoder.horizon
    }

    pub fn channels(&self) -> usize {
        self.encoder.channels
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.d_model()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardPass> {
        let z = self.encoder.encode(x)?;
        let z_next = self.koop.apply(&z)?;
        let forecast = self.decoder.decode(&z_next)?;
        Ok(ForwardPass { forecast, z, z_next })
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.forecast)
    }

    /// Batch loss: the mean over samples of both terms.
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

    pub fn sample_loss(&self, w: &Window, cfg: &LossConfig) -> Result<LossParts> {
        let f = self.forward(&w.x)?;
        loss(&f.forecast, &w.y, &f.z, &f.z_next, cfg)
    }

    pub fn write_params(&self, out: &mut ParamSet) {
        self.encoder.write_params(out);
        self.koop.write_params(out);
        self.decoder.write_params(out);
    }

    pub fn read_params(&mut self, params: &ParamSet) -> Result<()> {
        self.encoder.read_params(params)?;
        self.koop.read_params(params)?;
        self.decoder.read_params(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::{OperatorConfig, Variant};
    use crate::linalg::norm2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn window(p: usize, d: usize, seed: u64) -> Matrix {
        Matrix::random_normal(p, d, 1.0, &mut rng(seed))
    }

    #[test]
    fn zero_input_zero_embed_gives_mean_position() {
        let enc = PatchEncoder::with_weights(8, 2, 4, Matrix::zeros(6, 4), None).unwrap();
        let z = enc.encode(&Matrix::zeros(8, 2)).unwrap();
        let pe = sinusoidal_positions(4, 6);
        for (i, zi) in z.iter().enumerate() {
            let mean = (0..4).map(|p| pe[(p, i)]).sum::<f64>() / 4.0;
            assert!((zi - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn single_patch_is_affine_in_flattened_window() {
        let enc = PatchEncoder::random(5, 3, 4, 1, false, &mut rng(1)).unwrap();
        let x = window(5, 3, 2);
        let z = enc.encode(&x).unwrap();
        let mut expected = enc.embed().matvec(x.as_slice()).unwrap();
        expected.iter_mut().zip(enc.pos_enc().row(0)).for_each(|(a, b)| *a += b);
        for (a, b) in z.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn padding_repeats_last_row() {
        let enc = PatchEncoder::random(5, 1, 2, 2, false, &mut rng(0)).unwrap();
        assert_eq!(enc.patch_len(), 3);
        let x = Matrix::column(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let p = enc.patches(&x).unwrap();
        assert_eq!(p, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 5.0]]);
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let enc = PatchEncoder::random(8, 2, 4, 4, false, &mut rng(0)).unwrap();
        assert!(enc.encode(&Matrix::zeros(7, 2)).is_err());
    }

    #[test]
    fn decode_cases() {
        let dec = LinearDecoder::zeros(3, 2, 4);
        let y = dec.decode(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, Matrix::zeros(3, 2));

        let dec = LinearDecoder::random(1, 3, 4, &mut rng(3));
        let z = [0.1, -0.2, 0.3, 0.4];
        let y = dec.decode(&z).unwrap();
        assert_eq!(y.shape(), (1, 3));
        let mut flat = dec.w().matvec(&z).unwrap();
        flat.iter_mut().zip(dec.b()).for_each(|(a, b)| *a += b);
        assert_eq!(y.as_slice(), flat.as_slice());
        assert!(dec.decode(&[1.0]).is_err());
    }

    /// Weights chosen so the model forecasts the last observed row.
    fn persistence_forecaster(p: usize, d: usize, h: usize) -> Forecaster {
        let mut embed = Matrix::zeros(d, p * d);
        for c in 0..d {
            embed[(c, (p - 1) * d + c)] = 1.0;
        }
        let enc = PatchEncoder::with_weights(p, d, 1, embed, None).unwrap();
        let koop = KoopmanOperator::Dense(Matrix::identity(d));
        let mut w = Matrix::zeros(h * d, d);
        for t in 0..h {
            for c in 0..d {
                w[(t * d + c, c)] = 1.0;
            }
        }
        // cancel the positional row added to the single token
        let pos = sinusoidal_positions(1, d);
        let b: Vec<f64> = (0..h * d).map(|i| -pos[(0, i % d)]).collect();
        Forecaster::new(enc, koop, LinearDecoder::new(h, d, w, b).unwrap()).unwrap()
    }

    #[test]
    fn constructed_weights_reproduce_persistence() {
        let f = persistence_forecaster(6, 3, 4);
        let x = window(6, 3, 8);
        let y = f.predict(&x).unwrap();
        for t in 0..4 {
            for c in 0..3 {
                assert!((y[(t, c)] - x[(5, c)]).abs() < 1e-15);
            }
        }
    }

    fn random_forecaster(variant: Variant, seed: u64) -> Forecaster {
        let mut r = rng(seed);
        let enc = PatchEncoder::random(12, 2, 8, 4, true, &mut r).unwrap();
        let koop = KoopmanOperator::random(variant, 8, &OperatorConfig::default(), &mut r).unwrap();
        let dec = LinearDecoder::random(3, 2, 8, &mut r);
        Forecaster::new(enc, koop, dec).unwrap()
    }

    #[test]
    fn constrained_latent_step_contracts() {
        let f = random_forecaster(Variant::Constrained, 4);
        for s in 0..20 {
            let out = f.forward(&window(12, 2, 100 + s)).unwrap();
            assert!(norm2(&out.z_next) <= 0.99 * norm2(&out.z));
        }
    }

    #[test]
    fn batch_loss_is_mean_of_samples() {
        let f = random_forecaster(Variant::Unconstrained, 6);
        let cfg = LossConfig::identity(0.1, 8);
        let batch: Vec<Window> = (0..8)
            .map(|s| Window {
                start: s as usize,
                x: window(12, 2, s),
                y: window(3, 2, 50 + s),
            })
            .collect();
        let whole = f.batch_loss(&batch, &cfg).unwrap();
        let mean = batch
            .iter()
            .map(|b| f.batch_loss(std::slice::from_ref(b), &cfg).unwrap().total)
            .sum::<f64>()
            / 8.0;
        assert!((whole.total - mean).abs() < 1e-12);
        assert!(f.batch_loss(&[], &cfg).is_err());
    }

    #[test]
    fn loss_examples() {
        let y = Matrix::from_rows(&[&[1.0, 2.0]]);
        let cfg = LossConfig::identity(0.1, 2);
        let l = loss(&y, &y, &[1.0, 0.0], &[0.5, 0.0], &cfg).unwrap();
        assert_eq!(l.total, 0.0);
        let l = loss(&y, &y, &[1.0, 0.0], &[2.0, 0.0], &cfg).unwrap();
        assert!((l.total - 0.3).abs() < 1e-15);
        let pred = Matrix::from_rows(&[&[0.0, 0.0]]);
        let plain = loss(&pred, &y, &[1.0, 0.0], &[2.0, 0.0], &LossConfig::identity(0.0, 2)).unwrap();
        assert_eq!(plain.total, mse(&pred, &y).unwrap());
    }

    #[test]
    fn loss_config_validation() {
        assert!(LossConfig::identity(0.1, 3).validate().is_ok());
        let bad = LossConfig {
            lambda_lyap: 0.1,
            p_metric: Matrix::diag(&[1.0, -1.0]),
        };
        assert!(bad.validate().is_err());
        let asym = LossConfig {
            lambda_lyap: 0.1,
            p_metric: Matrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]),
        };
        assert!(matches!(asym.validate(), Err(Error::Asymmetric { .. })));
    }
}
