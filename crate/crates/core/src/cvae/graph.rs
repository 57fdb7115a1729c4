//! Batched forward pass, loss, and exact reverse-mode gradients for the fixed
//! encoder/latent/decoder graph.

use ndarray::{concatenate, Array2, Axis};

use super::gru::{gru_backward_step, gru_forward_step, GruGradSink, GruStepCache};
use super::params::{CvaeGrads, CvaeParams};
use super::scalar::Scalar;
use super::{softmax_rows, BatchNoise, CvaeConfig, LossBreakdown};
use crate::corpus::PAD_ID;
use crate::error::{Error, Result};

/// One training example: a padded id sequence and its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    pub class: usize,
}

struct Dims {
    b: usize,
    t: usize,
    hidden: usize,
    z: usize,
    c: usize,
    vocab: usize,
}

fn check_batch<S: Scalar>(
    cfg: &CvaeConfig,
    params: &CvaeParams<S>,
    examples: &[EncodedExample],
    alpha: &[f64],
    noise: &BatchNoise<S>,
) -> Result<Dims> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("batch must be non-empty".into()));
    }
    let dims = Dims {
        b: examples.len(),
        t: cfg.max_len,
        hidden: params.enc_w_hh.nrows(),
        z: params.w_mu.ncols(),
        c: params.w_cls.ncols(),
        vocab: params.emb.nrows(),
    };
    if alpha.len() != dims.c {
        return Err(Error::InvalidArgument(format!(
            "alpha has {} entries for {} classes",
            alpha.len(),
            dims.c
        )));
    }
    for ex in examples {
        if ex.ids.len() != cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "id sequence length {} != max_len {}",
                ex.ids.len(),
                cfg.max_len
            )));
        }
        if let Some(&bad) = ex.ids.iter().find(|&&id| id >= dims.vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of vocabulary range {}",
                dims.vocab
            )));
        }
        if ex.class >= dims.c {
            return Err(Error::InvalidArgument(format!(
                "class index {} out of range {}",
                ex.class, dims.c
            )));
        }
    }
    if noise.gauss.dim() != (dims.b, dims.z) || noise.gumbel_u.dim() != (dims.b, dims.c) {
        return Err(Error::Shape(format!(
            "noise shapes {:?}/{:?} do not match batch ({}, z={}, C={})",
            noise.gauss.dim(),
            noise.gumbel_u.dim(),
            dims.b,
            dims.z,
            dims.c
        )));
    }
    if noise.gumbel_u.iter().any(|&u| !(u > S::zero() && u < S::one())) {
        return Err(Error::InvalidArgument(
            "gumbel noise must lie strictly inside (0, 1)".into(),
        ));
    }
    Ok(dims)
}

fn gather_rows<S: Scalar>(emb: &Array2<S>, ids: impl ExactSizeIterator<Item = usize>) -> Array2<S> {
    let mut out = Array2::zeros((ids.len(), emb.ncols()));
    for (mut row, id) in out.rows_mut().into_iter().zip(ids) {
        row.assign(&emb.row(id));
    }
    out
}

struct Trace<S: Scalar> {
    /// Trimmed horizon: the longest non-PAD prefix in the batch.
    len: usize,
    ids: Array2<usize>,
    classes: Vec<usize>,
    enc_caches: Vec<GruStepCache<S>>,
    enc_masks: Vec<Array2<S>>,
    h_enc: Array2<S>,
    mu: Array2<S>,
    logvar: Array2<S>,
    sigma: Array2<S>,
    logits_c: Array2<S>,
    q: Array2<S>,
    c_hat: Array2<S>,
    y: Array2<S>,
    dec_caches: Vec<GruStepCache<S>>,
    dec_probs: Vec<Array2<S>>,
    dec_h_after: Vec<Array2<S>>,
    /// (B, len-1): weight of each decoder target position in L_rec,
    /// `mask / (non-PAD targets in the row * batch size)`.
    target_w: Array2<S>,
}

/// Runs the masked encoder over raw id rows; used by both the training graph
/// and the public single-sequence `encode`.
pub(crate) fn encode_rows<S: Scalar>(
    params: &CvaeParams<S>,
    rows: &[&[usize]],
) -> Result<(Array2<S>, Array2<S>, Array2<S>)> {
    let vocab = params.emb.nrows();
    let t = rows.first().map_or(0, |r| r.len());
    for r in rows {
        if r.len() != t {
            return Err(Error::Shape("ragged id rows".into()));
        }
        if let Some(&bad) = r.iter().find(|&&id| id >= vocab) {
            return Err(Error::InvalidArgument(format!(
                "token id {bad} out of vocabulary range {vocab}"
            )));
        }
    }
    let b = rows.len();
    let hidden = params.enc_w_hh.nrows();
    let mut h = Array2::<S>::zeros((b, hidden));
    for step in 0..t {
        let x = gather_rows(&params.emb, rows.iter().map(|r| r[step]));
        let (h_new, _) = gru_forward_step(&x, &h, &params.enc_w_ih, &params.enc_w_hh, &params.enc_b_ih, &params.enc_b_hh);
        let mask = Array2::from_shape_fn((b, 1), |(r, _)| {
            if rows[r][step] == PAD_ID {
                S::zero()
            } else {
                S::one()
            }
        });
        let keep = mask.mapv(|m| S::one() - m);
        h = &(&h_new * &mask) + &(&h * &keep);
    }
    let mu = h.dot(&params.w_mu) + &params.b_mu;
    let logvar = h.dot(&params.w_logvar) + &params.b_logvar;
    let logits = h.dot(&params.w_cls) + &params.b_cls;
    Ok((mu, logvar, logits))
}

fn forward<S: Scalar>(
    cfg: &CvaeConfig,
    params: &CvaeParams<S>,
    examples: &[EncodedExample],
    alpha: &[f64],
    gamma: f64,
    noise: &BatchNoise<S>,
) -> Result<(LossBreakdown, Trace<S>)> {
    let dims = check_batch(cfg, params, examples, alpha, noise)?;
    let (b, hidden) = (dims.b, dims.hidden);
    let ids = Array2::from_shape_fn((b, dims.t), |(r, c)| examples[r].ids[c]);
    let classes: Vec<usize> = examples.iter().map(|e| e.class).collect();
    // Trim the time loop to the longest non-PAD prefix; PAD is a strict
    // suffix in encoded sequences, so the skipped steps are no-ops.
    let len = (0..b)
        .map(|r| (0..dims.t).rev().find(|&c| ids[(r, c)] != PAD_ID).map_or(0, |c| c + 1))
        .max()
        .unwrap_or(0);

    // Encoder with PAD-masked state updates.
    let mut h = Array2::<S>::zeros((b, hidden));
    let mut enc_caches = Vec::with_capacity(len);
    let mut enc_masks = Vec::with_capacity(len);
    for step in 0..len {
        let x = gather_rows(&params.emb, (0..b).map(|r| ids[(r, step)]));
        let (h_new, cache) = gru_forward_step(&x, &h, &params.enc_w_ih, &params.enc_w_hh, &params.enc_b_ih, &params.enc_b_hh);
        let mask = Array2::from_shape_fn((b, 1), |(r, _)| {
            if ids[(r, step)] == PAD_ID {
                S::zero()
            } else {
                S::one()
            }
        });
        let keep = mask.mapv(|m| S::one() - m);
        h = &(&h_new * &mask) + &(&h * &keep);
        enc_caches.push(cache);
        enc_masks.push(mask);
    }
    let h_enc = h;

    // Latent heads and samples.
    let mu = h_enc.dot(&params.w_mu) + &params.b_mu;
    let logvar = h_enc.dot(&params.w_logvar) + &params.b_logvar;
    let logits_c = h_enc.dot(&params.w_cls) + &params.b_cls;
    let q = softmax_rows(&logits_c);
    let half = S::from_double(0.5);
    let sigma = logvar.mapv(|v| (v * half).exp());
    let z = &mu + &(&sigma * &noise.gauss);
    let tau = S::from_double(cfg.tau);
    let gumbel = noise.gumbel_u.mapv(|u| -((-(u.ln())).ln()));
    let c_hat = softmax_rows(&(&(&logits_c + &gumbel) / tau));
    let y = concatenate(Axis(1), &[z.view(), c_hat.view()]).expect("same row count");

    // Teacher-forced decoder from the projected latent state.
    let mut hd = y.dot(&params.w_init) + &params.b_init;
    let steps = len.saturating_sub(1);
    let mut dec_caches = Vec::with_capacity(steps);
    let mut dec_probs = Vec::with_capacity(steps);
    let mut dec_h_after = Vec::with_capacity(steps);
    let mut target_w = Array2::<S>::zeros((b, steps));
    let counts: Vec<usize> = (0..b)
        .map(|r| (1..len).filter(|&c| ids[(r, c)] != PAD_ID).count())
        .collect();
    for step in 0..steps {
        let x = gather_rows(&params.emb, (0..b).map(|r| ids[(r, step)]));
        let (h_new, cache) = gru_forward_step(&x, &hd, &params.dec_w_ih, &params.dec_w_hh, &params.dec_b_ih, &params.dec_b_hh);
        hd = h_new;
        let logits_v = hd.dot(&params.w_out) + &params.b_out;
        let p = softmax_rows(&(&logits_v / tau));
        for r in 0..b {
            if ids[(r, step + 1)] != PAD_ID {
                target_w[(r, step)] = S::from_double(1.0 / (counts[r] as f64 * b as f64));
            }
        }
        dec_caches.push(cache);
        dec_probs.push(p);
        dec_h_after.push(hd.clone());
    }

    // Loss terms, batch-averaged.
    let mut rec = S::zero();
    for step in 0..steps {
        let p = &dec_probs[step];
        for r in 0..b {
            let w = target_w[(r, step)];
            if w > S::zero() {
                rec += w * -(p[(r, ids[(r, step + 1)])].ln());
            }
        }
    }
    let b_s = S::from_double(b as f64);
    let one = S::one();
    let mut kl_g = S::zero();
    ndarray::Zip::from(&mu).and(&logvar).for_each(|&m, &lv| {
        kl_g += half * (m * m + lv.exp() - lv - one);
    });
    kl_g /= b_s;
    let c_s = S::from_double(dims.c as f64);
    let mut kl_c = S::zero();
    for &p in q.iter() {
        if p > S::zero() {
            kl_c += p * (p * c_s).ln();
        }
    }
    kl_c /= b_s;
    let mut cat = S::zero();
    for (r, &class) in classes.iter().enumerate() {
        let a = S::from_double(alpha[class]);
        if a != S::zero() {
            cat += a * -(q[(r, class)].ln());
        }
    }
    cat /= b_s;

    let breakdown = LossBreakdown::new(
        Scalar::to_double(rec),
        Scalar::to_double(kl_g),
        Scalar::to_double(kl_c),
        Scalar::to_double(cat),
        gamma,
    );
    let trace = Trace {
        len,
        ids,
        classes,
        enc_caches,
        enc_masks,
        h_enc,
        mu,
        logvar,
        sigma,
        logits_c,
        q,
        c_hat,
        y,
        dec_caches,
        dec_probs,
        dec_h_after,
        target_w,
    };
    Ok((breakdown, trace))
}

/// Loss terms of one batch under fixed noise.
pub fn batch_loss<S: Scalar>(
    cfg: &CvaeConfig,
    params: &CvaeParams<S>,
    examples: &[EncodedExample],
    alpha: &[f64],
    gamma: f64,
    noise: &BatchNoise<S>,
) -> Result<LossBreakdown> {
    forward(cfg, params, examples, alpha, gamma, noise).map(|(bd, _)| bd)
}

/// Exact gradients of `LossBreakdown::total` with respect to every parameter,
/// holding the noise fixed (reparameterization for both latents).
pub fn backward<S: Scalar>(
    cfg: &CvaeConfig,
    params: &CvaeParams<S>,
    examples: &[EncodedExample],
    alpha: &[f64],
    gamma: f64,
    noise: &BatchNoise<S>,
) -> Result<(LossBreakdown, CvaeGrads<S>)> {
    let (breakdown, tr) = forward(cfg, params, examples, alpha, gamma, noise)?;
    let b = tr.ids.nrows();
    let b_f = b as f64;
    let hidden = params.enc_w_hh.nrows();
    let z_dim = params.w_mu.ncols();
    let tau_inv = S::from_double(1.0 / cfg.tau);
    let gamma_s = S::from_double(gamma);
    let one = S::one();
    let half = S::from_double(0.5);
    let mut g = CvaeParams::zeros(cfg, params.emb.nrows());

    // Decoder BPTT. dL/dp flows through the temperature softmax as
    // (p - onehot) * weight / tau at each supervised position.
    let steps = tr.len.saturating_sub(1);
    let mut dh = Array2::<S>::zeros((b, hidden));
    for step in (0..steps).rev() {
        let p = &tr.dec_probs[step];
        let mut dlogits = Array2::<S>::zeros(p.dim());
        for r in 0..b {
            let w = tr.target_w[(r, step)];
            if w > S::zero() {
                let scale = w * tau_inv;
                let target = tr.ids[(r, step + 1)];
                let mut row = dlogits.row_mut(r);
                row.assign(&p.row(r));
                row.mapv_inplace(|v| v * scale);
                row[target] -= scale;
            }
        }
        g.w_out += &tr.dec_h_after[step].t().dot(&dlogits);
        g.b_out += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        dh += &dlogits.dot(&params.w_out.t());

        let x = gather_rows(&params.emb, (0..b).map(|r| tr.ids[(r, step)]));
        let mut sink = GruGradSink {
            w_ih: &mut g.dec_w_ih,
            w_hh: &mut g.dec_w_hh,
            b_ih: &mut g.dec_b_ih,
            b_hh: &mut g.dec_b_hh,
        };
        let (dx, dh_prev) = gru_backward_step(&dh, &x, &tr.dec_caches[step], &params.dec_w_ih, &params.dec_w_hh, &mut sink);
        for r in 0..b {
            let mut row = g.emb.row_mut(tr.ids[(r, step)]);
            row += &dx.row(r);
        }
        dh = dh_prev;
    }

    // Initial decoder state back to the concatenated latents.
    g.w_init += &tr.y.t().dot(&dh);
    g.b_init += &dh.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dy = dh.dot(&params.w_init.t());
    let dz = dy.slice(ndarray::s![.., 0..z_dim]).to_owned();
    let dc_hat = dy.slice(ndarray::s![.., z_dim..]).to_owned();

    // Gaussian reparameterization plus the annealed KL term.
    let scale_b = S::from_double(1.0 / b_f);
    let mut dmu = dz.clone();
    dmu += &tr.mu.mapv(|m| gamma_s * scale_b * m);
    let mut dlogvar = &(&dz * &noise.gauss) * &tr.sigma.mapv(|s| s * half);
    dlogvar += &tr.logvar.mapv(|lv| gamma_s * scale_b * half * (lv.exp() - one));

    // Gumbel-softmax sample path: softmax backward at (logits + g) / tau.
    let mut dlogits_c = Array2::<S>::zeros(tr.logits_c.dim());
    for r in 0..b {
        let ch = tr.c_hat.row(r);
        let ds = dc_hat.row(r);
        let inner: S = ch.iter().zip(ds).map(|(&c, &d)| c * d).sum();
        for (k, dl) in dlogits_c.row_mut(r).iter_mut().enumerate() {
            *dl += ch[k] * (ds[k] - inner) * tau_inv;
        }
    }
    // Categorical KL through q = softmax(logits): u_i = q_i (ln(q_i C) + 1).
    let c_s = S::from_double(tr.q.ncols() as f64);
    for r in 0..b {
        let qr = tr.q.row(r);
        let u: Vec<S> = qr
            .iter()
            .map(|&p| {
                if p > S::zero() {
                    p * ((p * c_s).ln() + one)
                } else {
                    S::zero()
                }
            })
            .collect();
        let total: S = u.iter().cloned().sum();
        for (k, dl) in dlogits_c.row_mut(r).iter_mut().enumerate() {
            *dl += gamma_s * scale_b * (u[k] - qr[k] * total);
        }
    }
    // Supervision cross-entropy: alpha_y (q - onehot_y) / B.
    for (r, &class) in tr.classes.iter().enumerate() {
        let a = S::from_double(alpha[class] / b_f);
        if a != S::zero() {
            let qr = tr.q.row(r).to_owned();
            for (k, dl) in dlogits_c.row_mut(r).iter_mut().enumerate() {
                *dl += a * (qr[k] - if k == class { one } else { S::zero() });
            }
        }
    }

    // Heads back to the encoder state.
    g.w_mu += &tr.h_enc.t().dot(&dmu);
    g.b_mu += &dmu.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.w_logvar += &tr.h_enc.t().dot(&dlogvar);
    g.b_logvar += &dlogvar.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.w_cls += &tr.h_enc.t().dot(&dlogits_c);
    g.b_cls += &dlogits_c.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dh_enc = dmu.dot(&params.w_mu.t());
    dh_enc += &dlogvar.dot(&params.w_logvar.t());
    dh_enc += &dlogits_c.dot(&params.w_cls.t());

    // Encoder BPTT with the PAD mask splitting the gradient between the
    // updated state and the carried state.
    let mut dh = dh_enc;
    for step in (0..tr.len).rev() {
        let mask = &tr.enc_masks[step];
        let keep = mask.mapv(|m| one - m);
        let dh_new = &dh * mask;
        let dh_carry = &dh * &keep;
        let x = gather_rows(&params.emb, (0..b).map(|r| tr.ids[(r, step)]));
        let mut sink = GruGradSink {
            w_ih: &mut g.enc_w_ih,
            w_hh: &mut g.enc_w_hh,
            b_ih: &mut g.enc_b_ih,
            b_hh: &mut g.enc_b_hh,
        };
        let (dx, dh_prev) = gru_backward_step(&dh_new, &x, &tr.enc_caches[step], &params.enc_w_ih, &params.enc_w_hh, &mut sink);
        for r in 0..b {
            let mut row = g.emb.row_mut(tr.ids[(r, step)]);
            row += &dx.row(r);
        }
        dh = dh_prev;
        dh += &dh_carry;
    }

    Ok((breakdown, g))
}
