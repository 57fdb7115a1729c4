//! Conditional variational autoencoder over delexicalized patterns.
//!
//! A single-layer GRU encoder maps a token sequence to a Gaussian latent
//! (mu, logvar) and class logits; a Gumbel-softmax sample of the class
//! posterior together with the reparameterized Gaussian sample initializes a
//! GRU decoder trained with teacher forcing. The loss combines reconstruction,
//! two KL terms under a common annealed weight, and a per-class weighted
//! supervision term. Gradients are hand-derived for the fixed graph and
//! checked against finite differences; training uses Adam.

mod checkpoint;
mod gradcheck;
mod graph;
mod gru;
mod params;
mod scalar;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{gradients_match_finite_differences, random_case, GradCheckCase, GradCheckReport};
pub use graph::{backward, batch_loss, EncodedExample};
pub use params::{adam_step, AdamState, CvaeGrads, CvaeParams, BLOCK_NAMES, N_BLOCKS};
pub use scalar::{sigmoid, Scalar};
pub use train::{fit, generate, write_training_log, FitResult};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the KL anneal counts: global batch steps (default) or completed
/// epochs. At small corpus sizes the two differ a lot, since t_kl is a
/// midpoint on whichever axis is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AnnealUnit {
    #[default]
    Steps,
    Epochs,
}

/// Model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub z_dim: usize,
    pub n_classes: usize,
    /// Softmax temperature, applied to the Gumbel-softmax sample and at every
    /// decoder output step.
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Midpoint of the logistic KL anneal, measured in `anneal_unit`s.
    pub t_kl: f64,
    /// Rate of the logistic KL anneal.
    pub r_kl: f64,
    /// Axis of the KL anneal: batch steps or epochs.
    pub anneal_unit: AnnealUnit,
    /// Fixes the KL weight instead of annealing (ablations); `Some(0.0)` turns
    /// the model into a plain autoencoder with respect to the KL terms.
    pub gamma_override: Option<f64>,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        CvaeConfig {
            embed_dim: 100,
            hidden_dim: 256,
            z_dim: 8,
            n_classes: 8,
            tau: 1.0,
            lr: 0.01,
            batch_size: 128,
            epochs: 50,
            t_kl: 300.0,
            r_kl: 0.01,
            anneal_unit: AnnealUnit::Steps,
            gamma_override: None,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            seed: 0,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("z_dim", self.z_dim),
            ("n_classes", self.n_classes),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if let Some(g) = self.gamma_override {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("gamma_override must lie in [0,1], got {g}")));
            }
        }
        Ok(())
    }
}

/// The loss terms of one batch. `total = rec + gamma * (kl_gauss + kl_cat) + cat`,
/// recomposed in f64 so the identity is exact regardless of training precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub kl_gauss: f64,
    pub kl_cat: f64,
    pub cat: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(rec: f64, kl_gauss: f64, kl_cat: f64, cat: f64, gamma: f64) -> Self {
        LossBreakdown {
            rec,
            kl_gauss,
            kl_cat,
            cat,
            gamma,
            total: rec + gamma * (kl_gauss + kl_cat) + cat,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Explicit noise streams for one batch, drawn outside the loss so that
/// gradient checks can hold them fixed.
#[derive(Debug, Clone)]
pub struct BatchNoise<S: Scalar> {
    /// Standard-normal draws for the Gaussian reparameterization, (B, z_dim).
    pub gauss: Array2<S>,
    /// Uniform (0,1) draws for the Gumbel perturbation, (B, n_classes).
    pub gumbel_u: Array2<S>,
}

impl<S: Scalar> BatchNoise<S> {
    pub fn sample<R: Rng>(batch: usize, z_dim: usize, n_classes: usize, rng: &mut R) -> Self {
        let gauss = Array2::from_shape_simple_fn((batch, z_dim), || {
            S::from_double(rng.sample::<f64, _>(StandardNormal))
        });
        let gumbel_u = Array2::from_shape_simple_fn((batch, n_classes), || {
            // Open interval: reject the measure-zero 0.0 draw.
            loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    return S::from_double(u);
                }
            }
        });
        BatchNoise { gauss, gumbel_u }
    }

    /// Deterministic noise (zero Gaussian, constant uniform) for tests.
    pub fn constant(batch: usize, z_dim: usize, n_classes: usize, u: f64) -> Self {
        BatchNoise {
            gauss: Array2::zeros((batch, z_dim)),
            gumbel_u: Array2::from_elem((batch, n_classes), S::from_double(u)),
        }
    }
}

/// Logistic KL annealing weight at a global batch step.
pub fn anneal_weight(step: u64, t_kl: f64, r_kl: f64) -> f64 {
    1.0 / (1.0 + (-r_kl * (step as f64 - t_kl)).exp())
}

/// Closed-form KL(N(mu, exp(logvar)) || N(0, 1)), summed over dimensions.
pub fn kl_gaussian<S: Scalar>(mu: &Array1<S>, logvar: &Array1<S>) -> S {
    debug_assert_eq!(mu.len(), logvar.len());
    let half = S::from_double(0.5);
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - lv - S::one()))
        .sum()
}

/// KL(q || uniform over C classes) = sum_i q_i ln(q_i * C), with 0 ln 0 := 0.
pub fn kl_categorical_uniform<S: Scalar>(q: &Array1<S>) -> S {
    let c = S::from_double(q.len() as f64);
    q.iter()
        .map(|&p| if p > S::zero() { p * (p * c).ln() } else { S::zero() })
        .sum()
}

/// Reparameterized Gaussian sample z = mu + exp(logvar / 2) * noise.
pub fn sample_gaussian<S: Scalar>(mu: &Array1<S>, logvar: &Array1<S>, noise: &Array1<S>) -> Array1<S> {
    let half = S::from_double(0.5);
    ndarray::Zip::from(mu)
        .and(logvar)
        .and(noise)
        .map_collect(|&m, &lv, &n| m + (lv * half).exp() * n)
}

/// Gumbel-softmax sample: softmax((logits + g) / tau) with g = -ln(-ln u).
pub fn sample_gumbel_softmax<S: Scalar>(logits: &Array1<S>, tau: f64, uniform: &Array1<S>) -> Result<Array1<S>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("tau must be > 0, got {tau}")));
    }
    if uniform.iter().any(|&u| !(u > S::zero() && u < S::one())) {
        return Err(Error::InvalidArgument(
            "gumbel noise must lie strictly inside (0, 1)".into(),
        ));
    }
    let t = S::from_double(tau);
    let perturbed = ndarray::Zip::from(logits)
        .and(uniform)
        .map_collect(|&l, &u| (l + -((-(u.ln())).ln())) / t);
    Ok(softmax_1d(&perturbed))
}

pub(crate) fn softmax_1d<S: Scalar>(a: &Array1<S>) -> Array1<S> {
    let max = a.iter().cloned().fold(S::neg_infinity(), S::max);
    let exp = a.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp.mapv(|v| v / sum)
}

/// Row-wise stable softmax.
pub(crate) fn softmax_rows<S: Scalar>(a: &Array2<S>) -> Array2<S> {
    let mut out = a.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Runs the encoder over one id sequence and returns (mu, logvar, class_logits).
///
/// PAD positions leave the hidden state unchanged, so an all-PAD input yields
/// the heads applied to the zero initial state.
pub fn encode<S: Scalar>(
    params: &CvaeParams<S>,
    ids: &[usize],
) -> Result<(Array1<S>, Array1<S>, Array1<S>)> {
    let (mu, logvar, logits) = graph::encode_rows(params, &[ids])?;
    Ok((
        mu.row(0).to_owned(),
        logvar.row(0).to_owned(),
        logits.row(0).to_owned(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Pattern, PAD_ID};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn anneal_weight_hits_midpoint_start_and_saturation() {
        assert_abs_diff_eq!(anneal_weight(300, 300.0, 0.01), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(anneal_weight(0, 300.0, 0.01), 1.0 / (1.0 + 3.0_f64.exp()), epsilon = 1e-12);
        assert_abs_diff_eq!(anneal_weight(0, 300.0, 0.01), 0.04742587317756678, epsilon = 1e-12);
        assert!(anneal_weight(1_000_000, 300.0, 0.01) > 1.0 - 1e-9);
        // Nondecreasing in step for positive rate.
        let mut prev = 0.0;
        for step in 0..2000 {
            let g = anneal_weight(step, 300.0, 0.01);
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn kl_gaussian_closed_form_values() {
        assert_eq!(kl_gaussian(&array![0.0_f64], &array![0.0]), 0.0);
        assert_abs_diff_eq!(kl_gaussian(&array![1.0_f64], &array![0.0]), 0.5, epsilon = 1e-15);
        let lv = 4.0_f64.ln();
        assert_abs_diff_eq!(
            kl_gaussian(&array![0.0_f64], &array![lv]),
            0.5 * (4.0 - lv - 1.0),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(kl_gaussian(&array![0.0_f64], &array![lv]), 0.8068528194400547, epsilon = 1e-12);
    }

    #[test]
    fn kl_categorical_uniform_values() {
        let uniform = Array1::from_elem(8, 0.125_f64);
        assert_abs_diff_eq!(kl_categorical_uniform(&uniform), 0.0, epsilon = 1e-12);
        let mut one_hot = Array1::zeros(8);
        one_hot[2] = 1.0_f64;
        assert_abs_diff_eq!(kl_categorical_uniform(&one_hot), 8.0_f64.ln(), epsilon = 1e-12);
        let half = array![0.5_f64, 0.5, 0.0, 0.0];
        assert_abs_diff_eq!(kl_categorical_uniform(&half), 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_sampling_is_the_reparameterization() {
        let z = sample_gaussian(&array![1.0_f64], &array![2.0 * 2.0_f64.ln()], &array![1.0]);
        assert_abs_diff_eq!(z[0], 3.0, epsilon = 1e-12);
        let z0 = sample_gaussian(&array![0.7_f64, -0.2], &array![0.0, 0.0], &array![0.0, 0.0]);
        assert_eq!(z0, array![0.7, -0.2]);
        let zn = sample_gaussian(&array![0.0_f64], &array![0.0], &array![1.3]);
        assert_abs_diff_eq!(zn[0], 1.3, epsilon = 1e-12);
    }

    #[test]
    fn gumbel_softmax_shift_invariance_and_symmetry() {
        let logits = array![0.3_f64, -0.5, 1.1];
        let u = Array1::from_elem(3, 0.4_f64);
        // Equal noise adds a constant, which softmax ignores.
        let c = sample_gumbel_softmax(&logits, 1.0, &u).unwrap();
        let plain = softmax_1d(&logits);
        for (a, b) in c.iter().zip(plain.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // Uniform logits with equal noise: exactly uniform.
        let c8 = sample_gumbel_softmax(&Array1::zeros(8), 1.0, &Array1::from_elem(8, 0.9)).unwrap();
        for &p in c8.iter() {
            assert_abs_diff_eq!(p, 0.125, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(c8.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gumbel_softmax_low_temperature_approaches_one_hot() {
        let logits = array![0.3_f64, -0.5, 1.1];
        let u = array![0.2_f64, 0.9, 0.5];
        let sharp = sample_gumbel_softmax(&logits, 1e-4, &u).unwrap();
        let g = u.mapv(|v: f64| -(-(v.ln())).ln());
        let winner = (0..3)
            .max_by(|&a, &b| (logits[a] + g[a]).total_cmp(&(logits[b] + g[b])))
            .unwrap();
        assert!(sharp[winner] > 1.0 - 1e-6);
    }

    #[test]
    fn gumbel_noise_domain_is_enforced() {
        let logits = array![0.0_f64, 0.0];
        assert!(sample_gumbel_softmax(&logits, 1.0, &array![0.0, 0.5]).is_err());
        assert!(sample_gumbel_softmax(&logits, 1.0, &array![0.5, 1.0]).is_err());
        assert!(sample_gumbel_softmax(&logits, 0.0, &array![0.5, 0.5]).is_err());
    }

    #[test]
    fn encode_is_pure_and_handles_all_pad_input() {
        let vocab = build_vocabulary([Pattern::from_joined("a b c")].iter(), 1);
        let cfg = CvaeConfig {
            embed_dim: 4,
            hidden_dim: 6,
            z_dim: 8,
            n_classes: 8,
            max_len: 5,
            seed: 3,
            ..CvaeConfig::default()
        };
        let params: CvaeParams<f64> = CvaeParams::init(&cfg, &vocab, None).unwrap();
        let ids = crate::corpus::encode_pattern(&Pattern::from_joined("a b"), &vocab, 5).unwrap();
        let (mu1, lv1, lo1) = encode(&params, &ids).unwrap();
        let (mu2, _, _) = encode(&params, &ids).unwrap();
        assert_eq!(mu1, mu2);
        assert_eq!((mu1.len(), lv1.len(), lo1.len()), (8, 8, 8));

        // All-PAD: heads applied to the zero hidden state, i.e. just biases.
        let (mu0, _, lo0) = encode(&params, &vec![PAD_ID; 5]).unwrap();
        for (a, b) in mu0.iter().zip(params.b_mu.row(0)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        for (a, b) in lo0.iter().zip(params.b_cls.row(0)) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn encode_rejects_out_of_vocabulary_ids() {
        let vocab = build_vocabulary([Pattern::from_joined("a b")].iter(), 1);
        let cfg = CvaeConfig {
            embed_dim: 4,
            hidden_dim: 6,
            z_dim: 2,
            n_classes: 3,
            max_len: 4,
            seed: 3,
            ..CvaeConfig::default()
        };
        let params: CvaeParams<f64> = CvaeParams::init(&cfg, &vocab, None).unwrap();
        assert!(encode(&params, &[2, 99, 3, 0]).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = CvaeConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
        cfg.tau = 1.0;
        cfg.max_len = 1;
        assert!(cfg.validate().is_err());
        cfg.max_len = 20;
        cfg.gamma_override = Some(1.5);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn loss_breakdown_recomposition_is_exact() {
        let bd = LossBreakdown::new(1.25, 0.5, 0.25, 0.125, 0.3);
        assert_eq!(bd.total, 1.25 + 0.3 * 0.75 + 0.125);
        let ae = LossBreakdown::new(2.0, 3.0, 4.0, 0.0, 0.0);
        assert_eq!(ae.total, ae.rec);
    }
}
