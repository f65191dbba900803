//! Reverse-mode gradients of the batch loss, derived by hand, and a
//! central-difference checker.

use crate::baselines::{DLinearModel, SsmModel};
use crate::data::Window;
use crate::error::{Error, Result};
use crate::forecaster::{loss, mse, EncoderTrace, Forecaster, LossConfig, LossParts, PatchEncoder};
use crate::koopman::{sigmoid, KoopmanOperator, OdoOperator, SquashVariant};
use crate::linalg::{dot, Matrix};
use crate::model::Model;
use crate::params::GradientSet;

/// Batch loss and its gradient with respect to every parameter of `model`.
///
/// The gradient of the hinge at its kink is taken to be zero.
pub fn loss_and_grad(model: &Model, batch: &[Window], cfg: &LossConfig) -> Result<(LossParts, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut grads = model.params().zeros_like();
    let mut acc = LossParts::default();
    for w in batch {
        let l = match model {
            Model::Koopman(f) => forecaster_sample(f, w, cfg, &mut grads)?,
            Model::DLinear(m) => dlinear_sample(m, w, &mut grads)?,
            Model::Ssm(m) => ssm_sample(m, w, &mut grads)?,
        };
        acc.total += l.total;
        acc.mse += l.mse;
        acc.hinge += l.hinge;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    let parts = LossParts {
        total: acc.total / n,
        mse: acc.mse / n,
        hinge: acc.hinge / n,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {}", parts.total)));
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok((parts, grads))
}

fn slot<'a>(grads: &'a mut GradientSet, name: &str) -> &'a mut Matrix {
    grads
        .get_mut(name)
        .unwrap_or_else(|| panic!("gradient slot `{name}` missing"))
}

/// `2 (ŷ − y) / (H·d)`, flattened row-major.
fn mse_grad(pred: &Matrix, target: &Matrix) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| 2.0 * (a - b) / n)
        .collect()
}

fn forecaster_sample(f: &Forecaster, w: &Window, cfg: &LossConfig, grads: &mut GradientSet) -> Result<LossParts> {
    let (z, trace) = f.encoder.encode_traced(&w.x)?;
    let z_next = f.koop.apply(&z)?;
    let pred = f.decoder.decode(&z_next)?;
    let parts = loss(&pred, &w.y, &z, &z_next, cfg)?;

    let g_y = mse_grad(&pred, &w.y);
    slot(grads, "decoder.W").add_outer(&g_y, &z_next);
    slot(grads, "decoder.b")
        .as_mut_slice()
        .iter_mut()
        .zip(&g_y)
        .for_each(|(a, b)| *a += b);
    let mut g_next = f.decoder.w().t_matvec(&g_y)?;
    let mut g_z = vec![0.0; z.len()];

    // d(xᵀPx)/dx = (P + Pᵀ) x
    if cfg.lambda_lyap > 0.0 && cfg.energy_growth(&z, &z_next) > 0.0 {
        let p = &cfg.p_metric;
        let sym = |x: &[f64]| -> Vec<f64> {
            let a = p.matvec(x).expect("metric shape");
            let b = p.t_matvec(x).expect("metric shape");
            a.iter().zip(&b).map(|(u, v)| u + v).collect()
        };
        let lam = cfg.lambda_lyap;
        g_next.iter_mut().zip(sym(&z_next)).for_each(|(g, v)| *g += lam * v);
        g_z.iter_mut().zip(sym(&z)).for_each(|(g, v)| *g -= lam * v);
    }

    match &f.koop {
        KoopmanOperator::Dense(k) => {
            slot(grads, "koopman.K").add_outer(&g_next, &z);
            g_z.iter_mut().zip(k.t_matvec(&g_next)?).for_each(|(a, b)| *a += b);
        }
        KoopmanOperator::Odo(op) => odo_backward(op, &z, &g_next, &mut g_z, grads)?,
    }
    encoder_backward(&f.encoder, &trace, &g_z, grads)?;
    Ok(parts)
}

fn odo_backward(op: &OdoOperator, z: &[f64], g_next: &[f64], g_z: &mut [f64], grads: &mut GradientSet) -> Result<()> {
    let sigma = op.spectrum();
    let w = op.v().t_matvec(z)?;
    let s: Vec<f64> = sigma.iter().zip(&w).map(|(a, b)| a * b).collect();
    slot(grads, "koopman.U").add_outer(g_next, &s);
    let g_s = op.u().t_matvec(g_next)?;
    let g_sigma: Vec<f64> = g_s.iter().zip(&w).map(|(a, b)| a * b).collect();
    let g_w: Vec<f64> = g_s.iter().zip(&sigma).map(|(a, b)| a * b).collect();
    slot(grads, "koopman.V").add_outer(z, &g_w);
    g_z.iter_mut().zip(op.v().matvec(&g_w)?).for_each(|(a, b)| *a += b);
    spectrum_backward(op, &g_sigma, grads);
    Ok(())
}

/// Chains `∂L/∂Σ` through the squashing map into the raw spectral
/// parameters.
fn spectrum_backward(op: &OdoOperator, g_sigma: &[f64], grads: &mut GradientSet) {
    let sp = op.spectral();
    let squash = op.squash();
    let width = sp.rho_max - sp.rho_min;
    let g_u: Vec<f64> = (0..sp.len())
        .map(|i| {
            let sg = sigmoid(sp.pre_activation(i, squash));
            if sp.squash_value(sg) != sp.rho_min + width * sg {
                // pinned by the saturation guard: locally constant
                return 0.0;
            }
            g_sigma[i] * width * sg * (1.0 - sg)
        })
        .collect();
    match squash {
        SquashVariant::Constrained => add_to(slot(grads, "koopman.S"), &g_u),
        SquashVariant::ScalarGated => {
            let a = sp.alpha[0];
            let g_s: Vec<f64> = g_u.iter().map(|g| g * a).collect();
            add_to(slot(grads, "koopman.S"), &g_s);
            slot(grads, "koopman.alpha").as_mut_slice()[0] += dot(&g_u, &sp.s);
            slot(grads, "koopman.beta").as_mut_slice()[0] += g_u.iter().sum::<f64>();
        }
        SquashVariant::PerModeGated => {
            let g_s: Vec<f64> = g_u.iter().zip(&sp.alpha).map(|(g, a)| g * a).collect();
            let g_a: Vec<f64> = g_u.iter().zip(&sp.s).map(|(g, s)| g * s).collect();
            add_to(slot(grads, "koopman.S"), &g_s);
            add_to(slot(grads, "koopman.alpha"), &g_a);
            add_to(slot(grads, "koopman.beta"), &g_u);
        }
        SquashVariant::MlpShaped => {
            let mlp = sp.mlp.as_ref().expect("validated MLP");
            let h = mlp.hidden();
            let mut g_s = vec![0.0; sp.len()];
            let (mut g_w1, mut g_b1, mut g_w2) = (vec![0.0; h], vec![0.0; h], vec![0.0; h]);
            let mut g_b2 = 0.0;
            for (i, &gu) in g_u.iter().enumerate() {
                let s = sp.s[i];
                g_b2 += gu;
                for k in 0..h {
                    let t = (mlp.w1[k] * s + mlp.b1[k]).tanh();
                    g_w2[k] += gu * t;
                    let g_pre = gu * mlp.w2[k] * (1.0 - t * t);
                    g_w1[k] += g_pre * s;
                    g_b1[k] += g_pre;
                    g_s[i] += g_pre * mlp.w1[k];
                }
            }
            add_to(slot(grads, "koopman.S"), &g_s);
            add_to(slot(grads, "koopman.mlp_w1"), &g_w1);
            add_to(slot(grads, "koopman.mlp_b1"), &g_b1);
            add_to(slot(grads, "koopman.mlp_w2"), &g_w2);
            slot(grads, "koopman.mlp_b2").as_mut_slice()[0] += g_b2;
        }
    }
}

fn add_to(m: &mut Matrix, v: &[f64]) {
    m.as_mut_slice().iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn encoder_backward(enc: &PatchEncoder, trace: &EncoderTrace, g_z: &[f64], grads: &mut GradientSet) -> Result<()> {
    let n = enc.n_patches();
    let d = enc.d_model();
    let g_h: Vec<f64> = g_z.iter().map(|g| g / n as f64).collect();
    // residual path
    let mut g_tok: Vec<Vec<f64>> = vec![g_h.clone(); n];

    if let (Some(wqkv), Some(att)) = (enc.attn_qkv(), &trace.attention) {
        let scale = 1.0 / (d as f64).sqrt();
        let mut g_q = vec![vec![0.0; d]; n];
        let mut g_k = vec![vec![0.0; d]; n];
        let mut g_v = vec![vec![0.0; d]; n];
        for j in 0..n {
            let a = &att.weights[j];
            let g_a: Vec<f64> = (0..n).map(|k| dot(&g_h, &att.v[k])).collect();
            let mean = dot(a, &g_a);
            for k in 0..n {
                g_v[k].iter_mut().zip(&g_h).for_each(|(x, y)| *x += a[k] * y);
                let g_s = a[k] * (g_a[k] - mean) * scale;
                g_q[j].iter_mut().zip(&att.k[k]).for_each(|(x, y)| *x += g_s * y);
                g_k[k].iter_mut().zip(&att.q[j]).for_each(|(x, y)| *x += g_s * y);
            }
        }
        let gw = slot(grads, "encoder.attn_qkv");
        for j in 0..n {
            let tok = &trace.tokens[j];
            for (block, g) in [&g_q[j], &g_k[j], &g_v[j]].into_iter().enumerate() {
                for (i, gi) in g.iter().enumerate() {
                    let row = gw.row_mut(block * d + i);
                    row.iter_mut().zip(tok).for_each(|(x, t)| *x += gi * t);
                    let wrow = wqkv.row(block * d + i);
                    g_tok[j].iter_mut().zip(wrow).for_each(|(x, w)| *x += gi * w);
                }
            }
        }
    }

    let ge = slot(grads, "encoder.embed");
    for (g, flat) in g_tok.iter().zip(&trace.flats) {
        ge.add_outer(g, flat);
    }
    Ok(())
}

fn dlinear_sample(m: &DLinearModel, w: &Window, grads: &mut GradientSet) -> Result<LossParts> {
    let pred = m.forward(&w.x)?;
    let l = mse(&pred, &w.y)?;
    let g = Matrix::from_vec(pred.rows(), pred.cols(), mse_grad(&pred, &w.y))?;
    let gw = g.matmul(&w.x.transpose())?;
    slot(grads, "dlinear.W")
        .as_mut_slice()
        .iter_mut()
        .zip(gw.as_slice())
        .for_each(|(a, b)| *a += b);
    let gb: Vec<f64> = (0..g.rows()).map(|t| g.row(t).iter().sum()).collect();
    add_to(slot(grads, "dlinear.b"), &gb);
    Ok(LossParts {
        total: l,
        mse: l,
        hinge: 0.0,
    })
}

fn ssm_sample(m: &SsmModel, w: &Window, grads: &mut GradientSet) -> Result<LossParts> {
    let states = m.states(&w.x)?;
    let last = states.last().expect("h_0 present");
    let pred = Matrix::from_vec(m.horizon, m.channels(), m.c.matvec(last)?)?;
    let l = mse(&pred, &w.y)?;
    let g_y = mse_grad(&pred, &w.y);
    slot(grads, "ssm.C").add_outer(&g_y, last);
    let mut g_h = m.c.t_matvec(&g_y)?;
    let mut g_a = Matrix::zeros(m.hidden(), m.hidden());
    for t in (0..w.x.rows()).rev() {
        g_a.add_outer(&g_h, &states[t]);
        slot(grads, "ssm.B").add_outer(&g_h, w.x.row(t));
        g_h = m.a.t_matvec(&g_h)?;
    }
    if m.diagonal {
        for i in 0..g_a.rows() {
            for j in 0..g_a.cols() {
                if i != j {
                    g_a[(i, j)] = 0.0;
                }
            }
        }
    }
    add_to(slot(grads, "ssm.A"), g_a.as_slice());
    Ok(LossParts {
        total: l,
        mse: l,
        hinge: 0.0,
    })
}

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// Largest relative error over all checked entries.
    pub max_rel_error: f64,
    /// Parameter and flat index where it occurred.
    pub worst: (String, usize),
    /// Number of scalar entries compared.
    pub checked: usize,
    /// Samples dropped because they sit too close to the hinge kink.
    pub excluded: usize,
}

/// Compares [`loss_and_grad`] with central differences of the batch loss
/// for every parameter entry.
///
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`. Samples whose energy
/// growth is within `1e-4·(1 + ‖z‖²_P)` of zero are left out, since a
/// perturbation can carry them across the kink.
pub fn finite_diff_check(model: &Model, batch: &[Window], cfg: &LossConfig, eps: f64) -> Result<FdReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let mut kept = Vec::with_capacity(batch.len());
    for w in batch {
        if let Model::Koopman(f) = model {
            if cfg.lambda_lyap > 0.0 {
                let out = f.forward(&w.x)?;
                let growth = cfg.energy_growth(&out.z, &out.z_next);
                if growth.abs() <= 1e-4 * (1.0 + cfg.energy(&out.z)) {
                    continue;
                }
            }
        }
        kept.push(w.clone());
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument("every sample sits at the hinge kink".into()));
    }
    let (_, analytic) = loss_and_grad(model, &kept, cfg)?;
    let base = model.params();
    let mut probe = model.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        checked: 0,
        excluded: batch.len() - kept.len(),
    };
    for (name, values) in base.iter() {
        let g = analytic.get(name).expect("congruent gradients");
        for idx in 0..values.len() {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut p = base.clone();
                p.get_mut(name).expect("own key").as_mut_slice()[idx] += delta;
                probe.set_params(&p)?;
                Ok(probe.batch_loss(&kept, cfg)?.total)
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let a = g.as_slice()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (name.clone(), idx);
            }
        }
    }
    Ok(report)
}
