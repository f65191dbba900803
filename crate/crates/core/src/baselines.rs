//! Linear baselines: DLinear, a discrete-time state-space model and the
//! persistence forecast.

use rand::Rng;

use crate::error::{mismatch, Error, Result};
use crate::linalg::{fmt_shape, Matrix};
use crate::params::ParamSet;

/// One linear map from a channel's `P`-step history to its `H`-step
/// forecast, shared by all channels.
#[derive(Clone, Debug, PartialEq)]
pub struct DLinearModel {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl DLinearModel {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != w.rows() {
            return Err(mismatch("DLinearModel bias", w.rows(), b.len()));
        }
        Ok(Self { w, b })
    }

    pub fn random<R: Rng + ?Sized>(window: usize, horizon: usize, rng: &mut R) -> Self {
        Self {
            w: Matrix::random_normal(horizon, window, 1.0 / (window as f64).sqrt(), rng),
            b: vec![0.0; horizon],
        }
    }

    pub fn window(&self) -> usize {
        self.w.cols()
    }

    pub fn horizon(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.window() {
            return Err(mismatch("dlinear_forward", self.window(), x.rows()));
        }
        let mut y = self.w.matmul(x)?;
        for t in 0..y.rows() {
            let b = self.b[t];
            y.row_mut(t).iter_mut().for_each(|v| *v += b);
        }
        Ok(y)
    }

    pub fn write_params(&self, out: &mut ParamSet) {
        out.insert("dlinear.W", self.w.clone());
        out.insert("dlinear.b", Matrix::column(&self.b));
    }

    pub fn read_params(&mut self, params: &ParamSet) -> Result<()> {
        self.w = params.expect("dlinear.W", self.w.shape())?.clone();
        self.b = params.expect("dlinear.b", (self.b.len(), 1))?.as_slice().to_vec();
        Ok(())
    }
}

/// `h_{t+1} = A h_t + B x_t` over the window from `h_0 = 0`, read out once
/// from the final state: `ŷ = reshape(C h_P, H, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SsmModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub horizon: usize,
    /// Restricts training updates of `A` to its diagonal.
    pub diagonal: bool,
}

impl SsmModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, horizon: usize) -> Result<Self> {
        let dh = a.rows();
        if !a.is_square() {
            return Err(mismatch("SsmModel A", "square", fmt_shape(a.shape())));
        }
        if b.rows() != dh {
            return Err(mismatch("SsmModel B rows", dh, b.rows()));
        }
        if c.cols() != dh {
            return Err(mismatch("SsmModel C cols", dh, c.cols()));
        }
        if horizon == 0 || c.rows() != horizon * b.cols() {
            return Err(mismatch("SsmModel C rows", horizon * b.cols(), c.rows()));
        }
        Ok(Self {
            a,
            b,
            c,
            horizon,
            diagonal: false,
        })
    }

    /// Random model: `A` scaled to spectral norm about 0.5 (diagonal entries
    /// uniform in `[-0.5, 0.5]` when `diagonal`), Gaussian `B` and `C`.
    pub fn random<R: Rng + ?Sized>(
        channels: usize,
        hidden: usize,
        horizon: usize,
        diagonal: bool,
        rng: &mut R,
    ) -> Self {
        let a = if diagonal {
            let d: Vec<f64> = (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect();
            Matrix::diag(&d)
        } else {
            Matrix::random_normal(hidden, hidden, 0.25 / (hidden as f64).sqrt(), rng)
        };
        Self {
            a,
            b: Matrix::random_normal(hidden, channels, 1.0 / (channels as f64).sqrt(), rng),
            c: Matrix::random_normal(horizon * channels, hidden, 1.0 / (hidden as f64).sqrt(), rng),
            horizon,
            diagonal,
        }
    }

    pub fn hidden(&self) -> usize {
        self.a.rows()
    }

    pub fn channels(&self) -> usize {
        self.b.cols()
    }

    /// Hidden states `h_0 … h_P`.
    pub fn states(&self, x: &Matrix) -> Result<Vec<Vec<f64>>> {
        if x.cols() != self.channels() {
            return Err(mismatch("ssm_forward", self.channels(), x.cols()));
        }
        let mut states = Vec::with_capacity(x.rows() + 1);
        let mut h = vec![0.0; self.hidden()];
        states.push(h.clone());
        for t in 0..x.rows() {
            let mut next = self.a.matvec(&h)?;
            let drive = self.b.matvec(x.row(t))?;
            next.iter_mut().zip(&drive).for_each(|(a, b)| *a += b);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("SSM hidden state at step {}", t + 1)));
            }
            h = next;
            states.push(h.clone());
        }
        Ok(states)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let states = self.states(x)?;
        let y = self.c.matvec(states.last().expect("h_0 present"))?;
        Matrix::from_vec(self.horizon, self.channels(), y)
    }

    pub fn write_params(&self, out: &mut ParamSet) {
        out.insert("ssm.A", self.a.clone());
        out.insert("ssm.B", self.b.clone());
        out.insert("ssm.C", self.c.clone());
    }

    pub fn read_params(&mut self, params: &ParamSet) -> Result<()> {
        self.a = params.expect("ssm.A", self.a.shape())?.clone();
        self.b = params.expect("ssm.B", self.b.shape())?.clone();
        self.c = params.expect("ssm.C", self.c.shape())?.clone();
        Ok(())
    }
}

/// Block-diagonal augmentation `A' = diag(A, γ I)`, `B' = [B; 0]`,
/// `C' = [C 0]`.
///
/// The extra block is never driven and starts at zero, so it stays exactly
/// zero and every output is bit-identical to the original model's, while
/// `ρ(A') ≥ γ`.
pub fn augment_unstable_ssm(m: &SsmModel, gamma: f64, extra_dim: usize) -> Result<SsmModel> {
    if !(gamma > 1.0) {
        return Err(Error::InvalidArgument(format!("gamma must exceed 1, got {gamma}")));
    }
    augment_block(m, gamma, extra_dim)
}

pub(crate) fn augment_block(m: &SsmModel, gamma: f64, extra_dim: usize) -> Result<SsmModel> {
    let dh = m.hidden();
    let n = dh + extra_dim;
    let mut a = Matrix::zeros(n, n);
    for i in 0..dh {
        a.row_mut(i)[..dh].copy_from_slice(m.a.row(i));
    }
    for i in dh..n {
        a[(i, i)] = gamma;
    }
    let mut b = Matrix::zeros(n, m.channels());
    for i in 0..dh {
        b.row_mut(i).copy_from_slice(m.b.row(i));
    }
    let mut c = Matrix::zeros(m.c.rows(), n);
    for i in 0..m.c.rows() {
        c.row_mut(i)[..dh].copy_from_slice(m.c.row(i));
    }
    let mut out = SsmModel::new(a, b, c, m.horizon)?;
    out.diagonal = m.diagonal;
    Ok(out)
}

/// Repeats the last observed row `horizon` times.
pub fn persistence_forecast(x: &Matrix, horizon: usize) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::InvalidArgument(
            "persistence needs at least one observed row".into(),
        ));
    }
    let last = x.row(x.rows() - 1);
    let mut y = Matrix::zeros(horizon, x.cols());
    for t in 0..horizon {
        y.row_mut(t).copy_from_slice(last);
    }
    Ok(y)
}
