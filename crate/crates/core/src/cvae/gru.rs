//! Fused single-layer GRU cell: batched forward step and exact backward step.
//!
//! Gate layout in the fused matrices is `[reset | update | candidate]`. The
//! candidate uses the convention where the reset gate multiplies the
//! hidden-side preactivation:
//!   r = sigmoid(x W_ir + b_ir + h U_hr + b_hr)
//!   u = sigmoid(x W_iz + b_iz + h U_hz + b_hz)
//!   n = tanh(x W_in + b_in + r * (h U_hn + b_hn))
//!   h' = (1 - u) * n + u * h

use ndarray::{s, Array2};

use super::scalar::{sigmoid, Scalar};

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GruStepCache<S: Scalar> {
    pub h_prev: Array2<S>,
    pub r: Array2<S>,
    pub u: Array2<S>,
    pub n: Array2<S>,
    /// Hidden-side candidate preactivation `h U_hn + b_hn` (before the reset
    /// gate multiplies it).
    pub a_hn: Array2<S>,
}

/// One batched GRU step. `x` is (B, E), `h_prev` is (B, H); returns h' (B, H).
pub fn gru_forward_step<S: Scalar>(
    x: &Array2<S>,
    h_prev: &Array2<S>,
    w_ih: &Array2<S>,
    w_hh: &Array2<S>,
    b_ih: &Array2<S>,
    b_hh: &Array2<S>,
) -> (Array2<S>, GruStepCache<S>) {
    let h = h_prev.ncols();
    let a_ih = x.dot(w_ih) + b_ih;
    let a_hh = h_prev.dot(w_hh) + b_hh;
    let r = (&a_ih.slice(s![.., 0..h]) + &a_hh.slice(s![.., 0..h])).mapv(sigmoid);
    let u = (&a_ih.slice(s![.., h..2 * h]) + &a_hh.slice(s![.., h..2 * h])).mapv(sigmoid);
    let a_hn = a_hh.slice(s![.., 2 * h..3 * h]).to_owned();
    let n = (&a_ih.slice(s![.., 2 * h..3 * h]) + &(&r * &a_hn)).mapv(S::tanh);
    let one = S::one();
    let h_new = &(&n * &u.mapv(|v| one - v)) + &(&u * h_prev);
    (
        h_new,
        GruStepCache {
            h_prev: h_prev.clone(),
            r,
            u,
            n,
            a_hn,
        },
    )
}

/// Gradient sinks for one GRU's weights, accumulated across time steps.
pub struct GruGradSink<'a, S: Scalar> {
    pub w_ih: &'a mut Array2<S>,
    pub w_hh: &'a mut Array2<S>,
    pub b_ih: &'a mut Array2<S>,
    pub b_hh: &'a mut Array2<S>,
}

/// Backward through one step. `dh_new` is dL/dh'; returns (dx, dh_prev).
/// Weight gradients are accumulated into `sink`.
pub fn gru_backward_step<S: Scalar>(
    dh_new: &Array2<S>,
    x: &Array2<S>,
    cache: &GruStepCache<S>,
    w_ih: &Array2<S>,
    w_hh: &Array2<S>,
    sink: &mut GruGradSink<'_, S>,
) -> (Array2<S>, Array2<S>) {
    let h = cache.h_prev.ncols();
    let b = cache.h_prev.nrows();
    let one = S::one();

    let dn = dh_new * &cache.u.mapv(|v| one - v);
    let du = dh_new * &(&cache.h_prev - &cache.n);
    let mut dh_prev = dh_new * &cache.u;

    // Through tanh and the reset-gated hidden preactivation.
    let da_n = &dn * &cache.n.mapv(|v| one - v * v);
    let dr = &da_n * &cache.a_hn;
    let da_hn = &da_n * &cache.r;
    let da_r = &dr * &cache.r.mapv(|v| v * (one - v));
    let da_u = &du * &cache.u.mapv(|v| v * (one - v));

    let mut da_ih = Array2::<S>::zeros((b, 3 * h));
    da_ih.slice_mut(s![.., 0..h]).assign(&da_r);
    da_ih.slice_mut(s![.., h..2 * h]).assign(&da_u);
    da_ih.slice_mut(s![.., 2 * h..3 * h]).assign(&da_n);

    let mut da_hh = Array2::<S>::zeros((b, 3 * h));
    da_hh.slice_mut(s![.., 0..h]).assign(&da_r);
    da_hh.slice_mut(s![.., h..2 * h]).assign(&da_u);
    da_hh.slice_mut(s![.., 2 * h..3 * h]).assign(&da_hn);

    *sink.w_ih += &x.t().dot(&da_ih);
    *sink.w_hh += &cache.h_prev.t().dot(&da_hh);
    let ones = Array2::<S>::ones((1, b));
    *sink.b_ih += &ones.dot(&da_ih);
    *sink.b_hh += &ones.dot(&da_hh);

    let dx = da_ih.dot(&w_ih.t());
    dh_prev += &da_hh.dot(&w_hh.t());
    (dx, dh_prev)
}
