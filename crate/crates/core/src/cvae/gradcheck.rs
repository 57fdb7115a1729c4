//! Central finite-difference verification of the hand-derived gradients.
//!
//! Runs in double precision over every parameter element. The relative error
//! uses a small denominator floor so finite-difference roundoff on genuinely
//! zero gradients does not register as disagreement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{backward, batch_loss, EncodedExample};
use super::params::{CvaeParams, BLOCK_NAMES, N_BLOCKS};
use super::{BatchNoise, CvaeConfig};
use crate::corpus::{build_vocabulary, Pattern, Vocabulary, EOS_ID, SOS_ID, UNK_ID};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_block: &'static str,
    pub elements_checked: usize,
}

const REL_FLOOR: f64 = 1e-4;

fn set_element(params: &mut CvaeParams<f64>, block: usize, idx: usize, value: f64) {
    let blocks = params.blocks_mut();
    blocks[block].as_slice_mut().expect("owned tensors are contiguous")[idx] = value;
}

/// Compares analytic gradients against central differences on one case.
pub fn gradients_match_finite_differences(
    cfg: &CvaeConfig,
    vocab: &Vocabulary,
    examples: &[EncodedExample],
    alpha: &[f64],
    gamma: f64,
    noise: &BatchNoise<f64>,
    h: f64,
) -> Result<GradCheckReport> {
    let params = CvaeParams::<f64>::init(cfg, vocab, None)?;
    let (_, grads) = backward(cfg, &params, examples, alpha, gamma, noise)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_block: BLOCK_NAMES[0],
        elements_checked: 0,
    };
    for block in 0..N_BLOCKS {
        let n = params.blocks()[block].len();
        for idx in 0..n {
            let orig = params.blocks()[block].as_slice().expect("contiguous")[idx];
            set_element(&mut probe, block, idx, orig + h);
            let plus = batch_loss(cfg, &probe, examples, alpha, gamma, noise)?.total;
            set_element(&mut probe, block, idx, orig - h);
            let minus = batch_loss(cfg, &probe, examples, alpha, gamma, noise)?.total;
            set_element(&mut probe, block, idx, orig);
            let fd = (plus - minus) / (2.0 * h);
            let analytic = grads.blocks()[block].as_slice().expect("contiguous")[idx];
            let rel = (fd - analytic).abs() / REL_FLOOR.max(fd.abs()).max(analytic.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_block = BLOCK_NAMES[block];
            }
            report.elements_checked += 1;
        }
    }
    Ok(report)
}

/// A randomized small model/batch/noise case for gradient checking.
pub struct GradCheckCase {
    pub cfg: CvaeConfig,
    pub vocab: Vocabulary,
    pub examples: Vec<EncodedExample>,
    pub alpha: Vec<f64>,
    pub gamma: f64,
    pub noise: BatchNoise<f64>,
}

pub fn random_case(seed: u64) -> GradCheckCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tokens = rng.random_range(4..=10);
    let words: Vec<String> = (0..n_tokens).map(|i| format!("t{i}")).collect();
    let vocab = build_vocabulary([Pattern(words)].iter(), 1);
    let cfg = CvaeConfig {
        embed_dim: rng.random_range(3..=6),
        hidden_dim: rng.random_range(4..=8),
        z_dim: rng.random_range(2..=3),
        n_classes: rng.random_range(2..=4),
        tau: [0.7, 1.0, 1.3][rng.random_range(0..3)],
        max_len: rng.random_range(6..=9),
        seed: seed ^ 0xabcd,
        ..CvaeConfig::default()
    };
    let batch = rng.random_range(2..=4);
    let examples: Vec<EncodedExample> = (0..batch)
        .map(|_| {
            let content = rng.random_range(0..=cfg.max_len - 2);
            let mut ids = vec![SOS_ID];
            for _ in 0..content {
                // Mix of regular tokens and UNK, as real encodings produce.
                let id = if rng.random_range(0..8) == 0 {
                    UNK_ID
                } else {
                    rng.random_range(4..vocab.len())
                };
                ids.push(id);
            }
            ids.push(EOS_ID);
            ids.resize(cfg.max_len, crate::corpus::PAD_ID);
            EncodedExample {
                ids,
                class: rng.random_range(0..cfg.n_classes),
            }
        })
        .collect();
    // Some classes get zero weight so that gradient path is exercised too.
    let alpha: Vec<f64> = (0..cfg.n_classes)
        .map(|_| {
            if rng.random_range(0..4) == 0 {
                0.0
            } else {
                rng.random_range(0.1..1.5)
            }
        })
        .collect();
    let gamma = if rng.random_range(0..5) == 0 {
        0.0
    } else {
        rng.random_range(0.0..1.0)
    };
    let noise = BatchNoise::sample(batch, cfg.z_dim, cfg.n_classes, &mut rng);
    GradCheckCase {
        cfg,
        vocab,
        examples,
        alpha,
        gamma,
        noise,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match_finite_differences_on_random_cases() {
        for seed in 0..6 {
            let case = random_case(seed);
            let report = gradients_match_finite_differences(
                &case.cfg,
                &case.vocab,
                &case.examples,
                &case.alpha,
                case.gamma,
                &case.noise,
                1e-5,
            )
            .unwrap();
            assert!(
                report.max_rel_err < 1e-6,
                "seed {seed}: max rel err {} in {}",
                report.max_rel_err,
                report.worst_block
            );
        }
    }
}
