//! Parameter container, seeded initialization, and the Adam optimizer.
//!
//! Every learnable tensor is an `Array2` (biases are single-row matrices) so
//! the optimizer and the gradient checker can walk all blocks uniformly.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scalar::Scalar;
use super::CvaeConfig;
use crate::corpus::Vocabulary;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

pub const N_BLOCKS: usize = 19;

/// Stable block order shared by `blocks`, `blocks_mut`, Adam state, and the
/// checkpoint format.
pub const BLOCK_NAMES: [&str; N_BLOCKS] = [
    "emb",
    "enc_w_ih",
    "enc_w_hh",
    "enc_b_ih",
    "enc_b_hh",
    "w_mu",
    "b_mu",
    "w_logvar",
    "b_logvar",
    "w_cls",
    "b_cls",
    "w_init",
    "b_init",
    "dec_w_ih",
    "dec_w_hh",
    "dec_b_ih",
    "dec_b_hh",
    "w_out",
    "b_out",
];

/// All learnable tensors of the model. GRU gate matrices are fused in
/// `[reset | update | candidate]` column order.
#[derive(Debug, Clone, PartialEq)]
pub struct CvaeParams<S: Scalar> {
    pub emb: Array2<S>,
    pub enc_w_ih: Array2<S>,
    pub enc_w_hh: Array2<S>,
    pub enc_b_ih: Array2<S>,
    pub enc_b_hh: Array2<S>,
    pub w_mu: Array2<S>,
    pub b_mu: Array2<S>,
    pub w_logvar: Array2<S>,
    pub b_logvar: Array2<S>,
    pub w_cls: Array2<S>,
    pub b_cls: Array2<S>,
    pub w_init: Array2<S>,
    pub b_init: Array2<S>,
    pub dec_w_ih: Array2<S>,
    pub dec_w_hh: Array2<S>,
    pub dec_b_ih: Array2<S>,
    pub dec_b_hh: Array2<S>,
    pub w_out: Array2<S>,
    pub b_out: Array2<S>,
}

/// Gradients mirror the parameter layout exactly.
pub type CvaeGrads<S> = CvaeParams<S>;

fn shapes(cfg: &CvaeConfig, vocab_size: usize) -> [(usize, usize); N_BLOCKS] {
    let e = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let z = cfg.z_dim;
    let c = cfg.n_classes;
    [
        (vocab_size, e),
        (e, 3 * h),
        (h, 3 * h),
        (1, 3 * h),
        (1, 3 * h),
        (h, z),
        (1, z),
        (h, z),
        (1, z),
        (h, c),
        (1, c),
        (z + c, h),
        (1, h),
        (e, 3 * h),
        (h, 3 * h),
        (1, 3 * h),
        (1, 3 * h),
        (h, vocab_size),
        (1, vocab_size),
    ]
}

impl<S: Scalar> CvaeParams<S> {
    fn from_blocks(mut make: impl FnMut(usize, (usize, usize)) -> Array2<S>, cfg: &CvaeConfig, vocab_size: usize) -> Self {
        let dims = shapes(cfg, vocab_size);
        let mut arrays: Vec<Array2<S>> = dims.iter().enumerate().map(|(i, &d)| make(i, d)).collect();
        let mut next = || arrays.remove(0);
        CvaeParams {
            emb: next(),
            enc_w_ih: next(),
            enc_w_hh: next(),
            enc_b_ih: next(),
            enc_b_hh: next(),
            w_mu: next(),
            b_mu: next(),
            w_logvar: next(),
            b_logvar: next(),
            w_cls: next(),
            b_cls: next(),
            w_init: next(),
            b_init: next(),
            dec_w_ih: next(),
            dec_w_hh: next(),
            dec_b_ih: next(),
            dec_b_hh: next(),
            w_out: next(),
            b_out: next(),
        }
    }

    /// Seeded initialization: weights uniform on (-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// biases zero. When a pretrained table is supplied the embedding rows come
    /// from it instead (looked up by vocabulary token).
    pub fn init(cfg: &CvaeConfig, vocab: &Vocabulary, pretrained: Option<&EmbeddingTable>) -> Result<Self> {
        cfg.validate()?;
        if let Some(table) = pretrained {
            if table.dim() != cfg.embed_dim {
                return Err(Error::Shape(format!(
                    "pretrained embedding dim {} != embed_dim {}",
                    table.dim(),
                    cfg.embed_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = Self::from_blocks(
            |i, (rows, cols)| {
                let name = BLOCK_NAMES[i];
                if name.starts_with('b') || name.contains("_b_") {
                    return Array2::zeros((rows, cols));
                }
                // Fused GRU matrices and plain weights alike: fan_in = rows.
                // The embedding uses its vector dimension instead.
                let fan_in = if name == "emb" { cols } else { rows };
                let bound = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_simple_fn((rows, cols), || {
                    S::from_double(rng.random_range(-bound..bound))
                })
            },
            cfg,
            vocab.len(),
        );
        if let Some(table) = pretrained {
            for (i, token) in vocab.tokens().iter().enumerate() {
                let v = table.vector(token);
                for (j, &x) in v.iter().enumerate() {
                    params.emb[(i, j)] = S::from_double(x);
                }
            }
        }
        Ok(params)
    }

    pub fn zeros(cfg: &CvaeConfig, vocab_size: usize) -> Self {
        Self::from_blocks(|_, d| Array2::zeros(d), cfg, vocab_size)
    }

    pub fn vocab_size(&self) -> usize {
        self.emb.nrows()
    }

    pub fn blocks(&self) -> [&Array2<S>; N_BLOCKS] {
        [
            &self.emb,
            &self.enc_w_ih,
            &self.enc_w_hh,
            &self.enc_b_ih,
            &self.enc_b_hh,
            &self.w_mu,
            &self.b_mu,
            &self.w_logvar,
            &self.b_logvar,
            &self.w_cls,
            &self.b_cls,
            &self.w_init,
            &self.b_init,
            &self.dec_w_ih,
            &self.dec_w_hh,
            &self.dec_b_ih,
            &self.dec_b_hh,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Array2<S>; N_BLOCKS] {
        [
            &mut self.emb,
            &mut self.enc_w_ih,
            &mut self.enc_w_hh,
            &mut self.enc_b_ih,
            &mut self.enc_b_hh,
            &mut self.w_mu,
            &mut self.b_mu,
            &mut self.w_logvar,
            &mut self.b_logvar,
            &mut self.w_cls,
            &mut self.b_cls,
            &mut self.w_init,
            &mut self.b_init,
            &mut self.dec_w_ih,
            &mut self.dec_w_hh,
            &mut self.dec_b_ih,
            &mut self.dec_b_hh,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Same tensors in a (possibly) different precision.
    pub fn cast<T: Scalar>(&self) -> CvaeParams<T> {
        fn c<S: Scalar, T: Scalar>(a: &Array2<S>) -> Array2<T> {
            a.mapv(|x| T::from_double(Scalar::to_double(x)))
        }
        CvaeParams {
            emb: c(&self.emb),
            enc_w_ih: c(&self.enc_w_ih),
            enc_w_hh: c(&self.enc_w_hh),
            enc_b_ih: c(&self.enc_b_ih),
            enc_b_hh: c(&self.enc_b_hh),
            w_mu: c(&self.w_mu),
            b_mu: c(&self.b_mu),
            w_logvar: c(&self.w_logvar),
            b_logvar: c(&self.b_logvar),
            w_cls: c(&self.w_cls),
            b_cls: c(&self.b_cls),
            w_init: c(&self.w_init),
            b_init: c(&self.b_init),
            dec_w_ih: c(&self.dec_w_ih),
            dec_w_hh: c(&self.dec_w_hh),
            dec_b_ih: c(&self.dec_b_ih),
            dec_b_hh: c(&self.dec_b_hh),
            w_out: c(&self.w_out),
            b_out: c(&self.b_out),
        }
    }
}

/// Adam first/second moment accumulators, one pair per parameter block.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub m: CvaeParams<S>,
    pub v: CvaeParams<S>,
}

impl<S: Scalar> AdamState<S> {
    pub fn zeros(cfg: &CvaeConfig, vocab_size: usize) -> Self {
        AdamState {
            m: CvaeParams::zeros(cfg, vocab_size),
            v: CvaeParams::zeros(cfg, vocab_size),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update. `step` is 1-based.
pub fn adam_step<S: Scalar>(
    params: &mut CvaeParams<S>,
    grads: &CvaeGrads<S>,
    state: &mut AdamState<S>,
    lr: f64,
    step: u64,
) {
    debug_assert!(step >= 1);
    let b1 = S::from_double(ADAM_BETA1);
    let b2 = S::from_double(ADAM_BETA2);
    let one = S::one();
    let eps = S::from_double(ADAM_EPS);
    let corr1 = S::from_double(1.0 - ADAM_BETA1.powi(step as i32));
    let corr2 = S::from_double(1.0 - ADAM_BETA2.powi(step as i32));
    let lr_s = S::from_double(lr);
    let zipped = params
        .blocks_mut()
        .into_iter()
        .zip(state.m.blocks_mut())
        .zip(state.v.blocks_mut())
        .zip(grads.blocks());
    for (((p, m), v), g) in zipped {
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr_s * m_hat / (v_hat.sqrt() + eps);
        });
    }
}
