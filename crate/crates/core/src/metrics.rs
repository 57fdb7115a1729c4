//! Generation metrics: oracle conditioning accuracy, BLEU-quality,
//! BLEU-diversity (1 - self-BLEU), and originality, restricted to the
//! oracle-agreeing subset per conditioning intent.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use crate::corpus::{Dataset, Pattern};
use crate::embeddings::{embed_pattern, EmbeddingTable};
use crate::error::{Error, Result};

/// Smoothing floor for zero modified precisions; short delexicalized queries
/// make 4-gram zeros routine.
pub const BLEU_EPSILON: f64 = 1e-9;

/// Joins an n-gram window with a separator the tokenizer can never emit.
fn gram_key(window: &[String]) -> String {
    window.join("\u{1f}")
}

fn count_grams(tokens: &[String], n: usize) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(gram_key(w)).or_insert(0) += 1;
        }
    }
    counts
}

/// Precomputed reference-side state for sentence BLEU: per-order clipping
/// maxima over the reference multisets, plus reference lengths for the
/// brevity penalty.
#[derive(Debug, Clone)]
pub struct BleuRefs {
    max_counts: Vec<HashMap<String, usize>>,
    lengths: Vec<usize>,
    max_n: usize,
}

impl BleuRefs {
    pub fn new<'a, I>(references: I, max_n: usize) -> Self
    where
        I: IntoIterator<Item = &'a Pattern>,
    {
        let mut max_counts = vec![HashMap::new(); max_n];
        let mut lengths = Vec::new();
        for r in references {
            lengths.push(r.len());
            for (n, slot) in max_counts.iter_mut().enumerate() {
                for (gram, count) in count_grams(r.tokens(), n + 1) {
                    let e = slot.entry(gram).or_insert(0);
                    *e = (*e).max(count);
                }
            }
        }
        BleuRefs {
            max_counts,
            lengths,
            max_n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    /// Reference length closest to `h`; ties prefer the shorter reference.
    fn closest_len(&self, h: usize) -> usize {
        self.lengths
            .iter()
            .copied()
            .min_by_key(|&r| (r.abs_diff(h), r))
            .unwrap_or(0)
    }
}

/// Sentence BLEU against a prepared reference profile: geometric mean of
/// clipped modified n-gram precisions over the orders the hypothesis can
/// form (n = 1..min(max_n, |h|)), times the brevity penalty
/// exp(min(0, 1 - r/h)). Zero precisions are floored at `BLEU_EPSILON`; an
/// empty hypothesis scores 0.
pub fn bleu_with(refs: &BleuRefs, hypothesis: &Pattern) -> f64 {
    let h = hypothesis.len();
    if h == 0 || refs.is_empty() {
        return 0.0;
    }
    let orders = refs.max_n.min(h);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let hyp_counts = count_grams(hypothesis.tokens(), n);
        let total: usize = hyp_counts.values().sum();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(refs.max_counts[n - 1].get(gram).copied().unwrap_or(0)))
            .sum();
        let p = if clipped == 0 {
            BLEU_EPSILON
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let geo = (log_sum / orders as f64).exp();
    let r = refs.closest_len(h) as f64;
    let bp = (1.0 - r / h as f64).min(0.0).exp();
    bp * geo
}

/// Sentence BLEU against a list of references.
pub fn bleu<'a, I>(hypothesis: &Pattern, references: I, max_n: usize) -> f64
where
    I: IntoIterator<Item = &'a Pattern>,
{
    bleu_with(&BleuRefs::new(references, max_n), hypothesis)
}

/// Multinomial logistic regression over scaled mean-pooled sentence
/// embeddings. Fully deterministic: zero initialization, full-batch gradient
/// descent, early stop on a training-loss plateau.
#[derive(Debug, Clone)]
pub struct OracleClassifier {
    pub intents: Vec<String>,
    weights: Array2<f64>,
    bias: Array1<f64>,
    feature_scale: f64,
}

const ORACLE_LEARNING_RATE: f64 = 2.0;
const ORACLE_MAX_ITERS: usize = 1500;
const ORACLE_PLATEAU_TOL: f64 = 1e-7;

fn softmax_rows_inplace(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn train_oracle(reference: &Dataset, table: &EmbeddingTable) -> Result<OracleClassifier> {
    if reference.intents.len() < 2 {
        return Err(Error::Dataset(format!(
            "oracle needs at least 2 intents, got {}",
            reference.intents.len()
        )));
    }
    let n = reference.len();
    let dim = table.dim();
    let k = reference.intents.len();
    let mut x = Array2::<f64>::zeros((n, dim));
    let mut y = Vec::with_capacity(n);
    for (i, (pattern, utt)) in reference
        .patterns
        .iter()
        .zip(&reference.utterances)
        .enumerate()
    {
        let v = embed_pattern(table, pattern);
        x.row_mut(i).assign(&Array1::from_vec(v));
        y.push(reference.intent_index(&utt.intent).expect("intent listed"));
    }
    // Scale so the mean feature norm is 1; the zero embedding stays zero and
    // falls through to a bias-only argmax.
    let mean_norm = x
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .sum::<f64>()
        / n as f64;
    let feature_scale = if mean_norm > 0.0 { 1.0 / mean_norm } else { 1.0 };
    x *= feature_scale;

    let mut w = Array2::<f64>::zeros((dim, k));
    let mut b = Array1::<f64>::zeros(k);
    let mut prev_loss = f64::INFINITY;
    for _ in 0..ORACLE_MAX_ITERS {
        let mut p = x.dot(&w) + &b;
        softmax_rows_inplace(&mut p);
        let mut loss = 0.0;
        for (i, &target) in y.iter().enumerate() {
            loss -= p[(i, target)].max(1e-300).ln();
        }
        loss /= n as f64;
        // Residual P - Y in place.
        for (i, &target) in y.iter().enumerate() {
            p[(i, target)] -= 1.0;
        }
        p /= n as f64;
        let grad_w = x.t().dot(&p);
        let grad_b = p.sum_axis(Axis(0));
        w.scaled_add(-ORACLE_LEARNING_RATE, &grad_w);
        b.scaled_add(-ORACLE_LEARNING_RATE, &grad_b);
        if prev_loss - loss < ORACLE_PLATEAU_TOL {
            break;
        }
        prev_loss = loss;
    }
    Ok(OracleClassifier {
        intents: reference.intents.clone(),
        weights: w,
        bias: b,
        feature_scale,
    })
}

/// Argmax intent for a pattern; ties break to the lowest intent index.
pub fn classify_intent<'a>(
    oracle: &'a OracleClassifier,
    pattern: &Pattern,
    table: &EmbeddingTable,
) -> &'a str {
    let mut x = Array1::from_vec(embed_pattern(table, pattern));
    x *= oracle.feature_scale;
    let scores = x.dot(&oracle.weights) + &oracle.bias;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    &oracle.intents[best]
}

/// Fraction of dataset sentences the oracle labels with their true intent.
pub fn oracle_accuracy(oracle: &OracleClassifier, dataset: &Dataset, table: &EmbeddingTable) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    let hits = dataset
        .patterns
        .iter()
        .zip(&dataset.utterances)
        .filter(|(p, u)| classify_intent(oracle, p, table) == u.intent)
        .count();
    hits as f64 / dataset.len() as f64
}

/// Metrics for one conditioning intent. Quality, diversity, and originality
/// are computed over the oracle-agreeing subset; diversity needs at least two
/// agreeing sentences and is otherwise missing.
#[derive(Debug, Clone, Serialize)]
pub struct IntentMetrics {
    pub intent: String,
    pub generated: usize,
    pub agreeing: usize,
    pub conditioning_accuracy: f64,
    pub bleu_quality: Option<f64>,
    pub bleu_diversity: Option<f64>,
    pub originality: Option<f64>,
}

/// One generated sentence in the audit trail.
#[derive(Debug, Clone, Serialize)]
pub struct AuditRow {
    pub conditioned_intent: String,
    pub sentence: String,
    pub oracle_intent: String,
    pub agrees: bool,
    pub bleu_quality: Option<f64>,
    pub self_bleu: Option<f64>,
    pub original: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationReport {
    pub per_intent: Vec<IntentMetrics>,
    /// Micro-averaged over all generated sentences.
    pub conditioning_accuracy: f64,
    /// Agreeing-sentence-count-weighted means over intents where defined.
    pub bleu_quality: Option<f64>,
    pub bleu_diversity: Option<f64>,
    pub originality: Option<f64>,
    #[serde(skip)]
    pub audit: Vec<AuditRow>,
}

const BLEU_MAX_N: usize = 4;

/// Evaluates generated patterns grouped by conditioning intent against a
/// reference dataset, a training pattern set, and the oracle.
pub fn evaluate_generation(
    generated: &BTreeMap<String, Vec<Pattern>>,
    reference: &Dataset,
    training_patterns: &HashSet<Pattern>,
    oracle: &OracleClassifier,
    table: &EmbeddingTable,
) -> Result<GenerationReport> {
    for intent in generated.keys() {
        if reference.intent_index(intent).is_none() {
            return Err(Error::InvalidArgument(format!(
                "conditioning intent {intent} is not in the reference dataset"
            )));
        }
    }
    let mut per_intent = Vec::new();
    let mut audit = Vec::new();
    let mut total_generated = 0usize;
    let mut total_agreeing = 0usize;
    for (intent, sentences) in generated {
        total_generated += sentences.len();
        let oracle_labels: Vec<&str> = sentences
            .iter()
            .map(|s| classify_intent(oracle, s, table))
            .collect();
        let agree: Vec<bool> = oracle_labels.iter().map(|l| *l == intent).collect();
        let agreeing_idx: Vec<usize> = (0..sentences.len()).filter(|&i| agree[i]).collect();
        let agreeing = agreeing_idx.len();
        total_agreeing += agreeing;

        let ref_profile = BleuRefs::new(reference.patterns_of_intent(intent), BLEU_MAX_N);
        let mut quality = vec![None; sentences.len()];
        let mut self_bleu = vec![None; sentences.len()];
        let mut original = vec![None; sentences.len()];
        for &i in &agreeing_idx {
            quality[i] = Some(bleu_with(&ref_profile, &sentences[i]));
            original[i] = Some(!training_patterns.contains(&sentences[i]));
        }
        if agreeing >= 2 {
            for &i in &agreeing_idx {
                let others = agreeing_idx
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| &sentences[j]);
                let profile = BleuRefs::new(others, BLEU_MAX_N);
                self_bleu[i] = Some(bleu_with(&profile, &sentences[i]));
            }
        }

        let mean_over = |values: &[Option<f64>]| -> Option<f64> {
            let picked: Vec<f64> = values.iter().flatten().copied().collect();
            if picked.is_empty() {
                None
            } else {
                Some(picked.iter().sum::<f64>() / picked.len() as f64)
            }
        };
        let bleu_quality = mean_over(&quality);
        let bleu_diversity = mean_over(&self_bleu).map(|sb| 1.0 - sb);
        let originality = if agreeing == 0 {
            None
        } else {
            let fresh = original.iter().flatten().filter(|&&o| o).count();
            Some(fresh as f64 / agreeing as f64)
        };
        per_intent.push(IntentMetrics {
            intent: intent.clone(),
            generated: sentences.len(),
            agreeing,
            conditioning_accuracy: if sentences.is_empty() {
                0.0
            } else {
                agreeing as f64 / sentences.len() as f64
            },
            bleu_quality,
            bleu_diversity,
            originality,
        });
        for (i, s) in sentences.iter().enumerate() {
            audit.push(AuditRow {
                conditioned_intent: intent.clone(),
                sentence: s.to_string(),
                oracle_intent: oracle_labels[i].to_string(),
                agrees: agree[i],
                bleu_quality: quality[i],
                self_bleu: self_bleu[i],
                original: original[i],
            });
        }
    }

    // Aggregate: weight each intent by the number of agreeing sentences that
    // contributed to its value; intents with a missing value are excluded.
    let weighted = |pick: &dyn Fn(&IntentMetrics) -> Option<f64>| -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for m in &per_intent {
            if let Some(v) = pick(m) {
                num += v * m.agreeing as f64;
                den += m.agreeing as f64;
            }
        }
        if den > 0.0 {
            Some(num / den)
        } else {
            None
        }
    };
    Ok(GenerationReport {
        conditioning_accuracy: if total_generated == 0 {
            0.0
        } else {
            total_agreeing as f64 / total_generated as f64
        },
        bleu_quality: weighted(&|m| m.bleu_quality),
        bleu_diversity: weighted(&|m| m.bleu_diversity),
        originality: weighted(&|m| m.originality),
        per_intent,
        audit,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-intent rows plus an `all` aggregate row.
pub fn write_report_csv<W: std::io::Write>(writer: W, report: &GenerationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Dataset(format!("report csv: {e}"));
    w.write_record([
        "intent",
        "generated",
        "agreeing",
        "conditioning_accuracy",
        "bleu_quality",
        "bleu_diversity",
        "originality",
    ])
    .map_err(err)?;
    for m in &report.per_intent {
        w.write_record([
            m.intent.clone(),
            m.generated.to_string(),
            m.agreeing.to_string(),
            m.conditioning_accuracy.to_string(),
            opt_cell(m.bleu_quality),
            opt_cell(m.bleu_diversity),
            opt_cell(m.originality),
        ])
        .map_err(err)?;
    }
    let total_gen: usize = report.per_intent.iter().map(|m| m.generated).sum();
    let total_agree: usize = report.per_intent.iter().map(|m| m.agreeing).sum();
    w.write_record([
        "all".to_string(),
        total_gen.to_string(),
        total_agree.to_string(),
        report.conditioning_accuracy.to_string(),
        opt_cell(report.bleu_quality),
        opt_cell(report.bleu_diversity),
        opt_cell(report.originality),
    ])
    .map_err(err)?;
    w.flush().map_err(|e| Error::Dataset(format!("report csv: {e}")))?;
    Ok(())
}

pub fn write_report_json<W: std::io::Write>(writer: W, report: &GenerationReport) -> Result<()> {
    serde_json::to_writer_pretty(writer, report)
        .map_err(|e| Error::Dataset(format!("report json: {e}")))
}

/// Sentence-level audit: every generated sentence with its oracle label and
/// per-metric contributions.
pub fn write_audit_csv<W: std::io::Write>(writer: W, audit: &[AuditRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Dataset(format!("audit csv: {e}"));
    w.write_record([
        "conditioned_intent",
        "sentence",
        "oracle_intent",
        "agrees",
        "bleu_quality",
        "self_bleu",
        "original",
    ])
    .map_err(err)?;
    for row in audit {
        w.write_record([
            row.conditioned_intent.clone(),
            row.sentence.clone(),
            row.oracle_intent.clone(),
            row.agrees.to_string(),
            opt_cell(row.bleu_quality),
            opt_cell(row.self_bleu),
            row.original.map(|o| o.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Dataset(format!("audit csv: {e}")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SlotChunk, Utterance};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pat(s: &str) -> Pattern {
        Pattern::from_joined(s)
    }

    /// Independent brute-force sentence BLEU used as the test oracle: counts
    /// n-grams by scanning joined windows with no shared code.
    fn reference_bleu(hyp: &[&str], refs: &[Vec<&str>], max_n: usize) -> f64 {
        if hyp.is_empty() {
            return 0.0;
        }
        let orders = max_n.min(hyp.len());
        let mut log_sum = 0.0;
        for n in 1..=orders {
            let mut hyp_grams: Vec<String> = Vec::new();
            for i in 0..=hyp.len() - n {
                hyp_grams.push(hyp[i..i + n].join(" "));
            }
            let mut clipped = 0usize;
            let mut seen: Vec<&String> = Vec::new();
            for g in &hyp_grams {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let hyp_count = hyp_grams.iter().filter(|x| *x == g).count();
                let max_ref = refs
                    .iter()
                    .map(|r| {
                        if r.len() < n {
                            0
                        } else {
                            (0..=r.len() - n).filter(|&i| r[i..i + n].join(" ") == *g).count()
                        }
                    })
                    .max()
                    .unwrap_or(0);
                clipped += hyp_count.min(max_ref);
            }
            let total = hyp_grams.len();
            let p = if clipped == 0 {
                1e-9
            } else {
                clipped as f64 / total as f64
            };
            log_sum += p.ln();
        }
        let geo = (log_sum / orders as f64).exp();
        let r = refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&r| (r.abs_diff(hyp.len()), r))
            .unwrap();
        let bp = (1.0 - r as f64 / hyp.len() as f64).min(0.0).exp();
        bp * geo
    }

    #[test]
    fn bleu_identity_and_disjoint_extremes() {
        let h = pat("book a table for two");
        assert_abs_diff_eq!(bleu(&h, [&h.clone()], 4), 1.0, epsilon = 1e-12);
        let refs = [pat("completely different words here")];
        assert!(bleu(&h, refs.iter(), 4) < 1e-8);
        assert_eq!(bleu(&Pattern(vec![]), [&h], 4), 0.0);
    }

    #[test]
    fn bleu_matches_the_hand_derived_three_token_case() {
        let h = pat("a b c");
        let refs = [pat("a b d")];
        let got = bleu(&h, refs.iter(), 4);
        // p1 = 2/3, p2 = 1/2, p3 floored at 1e-9; BP = 1.
        let expect = (2.0_f64 / 3.0 * 0.5 * 1e-9).powf(1.0 / 3.0);
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        assert_abs_diff_eq!(
            got,
            reference_bleu(&["a", "b", "c"], &[vec!["a", "b", "d"]], 4),
            epsilon = 1e-15
        );
    }

    #[test]
    fn brevity_penalty_uses_the_closest_reference_length() {
        // Hypothesis of 1 token, reference of 2: p1 = 1, BP = exp(1 - 2).
        let got = bleu(&pat("a"), [&pat("a b")], 4);
        assert_abs_diff_eq!(got, (-1.0_f64).exp(), epsilon = 1e-12);
        // Lengths 2 and 4 straddle a 3-token hypothesis; the tie goes to the
        // shorter reference, and r < h means no penalty.
        let h = pat("a b x");
        let refs = [pat("c d e f"), pat("a b")];
        let got = bleu(&h, refs.iter(), 4);
        let p1 = 2.0 / 3.0;
        let p2 = 1.0 / 2.0;
        let expect = (p1 * p2 * 1e-9_f64).powf(1.0 / 3.0);
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn bleu_agrees_with_the_brute_force_oracle(
            hyp in proptest::collection::vec(0..5usize, 0..8),
            refs in proptest::collection::vec(proptest::collection::vec(0..5usize, 1..8), 1..4),
        ) {
            let words = ["a", "b", "c", "d", "e"];
            let h: Vec<&str> = hyp.iter().map(|&i| words[i]).collect();
            let rs: Vec<Vec<&str>> = refs.iter().map(|r| r.iter().map(|&i| words[i]).collect()).collect();
            let h_pat = Pattern(h.iter().map(|s| s.to_string()).collect());
            let r_pats: Vec<Pattern> = rs.iter().map(|r| Pattern(r.iter().map(|s| s.to_string()).collect())).collect();
            let got = bleu(&h_pat, r_pats.iter(), 4);
            let expect = reference_bleu(&h, &rs, 4);
            prop_assert!((got - expect).abs() < 1e-12, "got {got}, oracle {expect}");
        }

        #[test]
        fn bleu_self_reference_dominance_and_order_invariance(
            hyp in proptest::collection::vec(0..4usize, 1..7),
            refs in proptest::collection::vec(proptest::collection::vec(0..4usize, 1..7), 1..4),
        ) {
            let words = ["a", "b", "c", "d"];
            let h_pat = Pattern(hyp.iter().map(|&i| words[i].to_string()).collect());
            let mut r_pats: Vec<Pattern> = refs.iter().map(|r| Pattern(r.iter().map(|&i| words[i].to_string()).collect())).collect();
            r_pats.push(h_pat.clone());
            let with_self = bleu(&h_pat, r_pats.iter(), 4);
            prop_assert!((with_self - 1.0).abs() < 1e-12);
            r_pats.reverse();
            let reversed = bleu(&h_pat, r_pats.iter(), 4);
            prop_assert!((with_self - reversed).abs() < 1e-15);
        }
    }

    fn toy_dataset() -> Dataset {
        let sentences = [
            ("alpha", "red crimson scarlet glow"),
            ("alpha", "red ruby crimson shade"),
            ("alpha", "scarlet red blaze"),
            ("beta", "blue azure navy deep"),
            ("beta", "navy blue cobalt sea"),
            ("beta", "azure blue tide"),
        ];
        Dataset::from_utterances(
            sentences
                .iter()
                .map(|(intent, text)| Utterance {
                    chunks: vec![SlotChunk::plain(*text)],
                    intent: (*intent).to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn oracle_separates_disjoint_token_intents() {
        let ds = toy_dataset();
        let table = EmbeddingTable::seeded(24, 7);
        let oracle = train_oracle(&ds, &table).unwrap();
        assert_eq!(oracle_accuracy(&oracle, &ds, &table), 1.0);
        assert_eq!(classify_intent(&oracle, &pat("crimson red glow"), &table), "alpha");
        assert_eq!(classify_intent(&oracle, &pat("deep navy sea"), &table), "beta");
    }

    #[test]
    fn oracle_is_permutation_invariant_and_handles_empty_input() {
        let ds = toy_dataset();
        let table = EmbeddingTable::seeded(24, 7);
        let oracle = train_oracle(&ds, &table).unwrap();
        let a = classify_intent(&oracle, &pat("red crimson scarlet glow"), &table);
        let b = classify_intent(&oracle, &pat("glow scarlet crimson red"), &table);
        assert_eq!(a, b);
        // Zero embedding: bias-only argmax, lowest index on ties.
        let label = classify_intent(&oracle, &Pattern(vec![]), &table);
        assert!(oracle.intents.contains(&label.to_string()));
    }

    #[test]
    fn oracle_requires_two_intents() {
        let ds = Dataset::from_utterances(vec![Utterance {
            chunks: vec![SlotChunk::plain("only one intent here")],
            intent: "solo".into(),
        }])
        .unwrap();
        let table = EmbeddingTable::seeded(8, 1);
        assert!(train_oracle(&ds, &table).is_err());
    }

    fn report_fixture(
        generated: &[(&str, &[&str])],
        training: &[&str],
    ) -> (GenerationReport, Dataset) {
        let ds = toy_dataset();
        let table = EmbeddingTable::seeded(24, 7);
        let oracle = train_oracle(&ds, &table).unwrap();
        let gen_map: BTreeMap<String, Vec<Pattern>> = generated
            .iter()
            .map(|(intent, sents)| {
                (
                    intent.to_string(),
                    sents.iter().map(|s| pat(s)).collect::<Vec<_>>(),
                )
            })
            .collect();
        let train_set: HashSet<Pattern> = training.iter().map(|s| pat(s)).collect();
        let report = evaluate_generation(&gen_map, &ds, &train_set, &oracle, &table).unwrap();
        (report, ds)
    }

    #[test]
    fn copies_of_training_patterns_have_zero_originality() {
        let (report, _) = report_fixture(
            &[("alpha", &["red crimson scarlet glow", "scarlet red blaze"])],
            &["red crimson scarlet glow", "scarlet red blaze"],
        );
        assert_eq!(report.per_intent[0].agreeing, 2);
        assert_eq!(report.per_intent[0].originality, Some(0.0));
        assert_eq!(report.originality, Some(0.0));
    }

    #[test]
    fn identical_sentences_have_zero_diversity() {
        let (report, _) = report_fixture(
            &[("alpha", &["red crimson glow", "red crimson glow", "red crimson glow"])],
            &[],
        );
        let m = &report.per_intent[0];
        assert_eq!(m.agreeing, 3);
        assert_abs_diff_eq!(m.bleu_diversity.unwrap(), 0.0, epsilon = 1e-9);
        assert_eq!(m.originality, Some(1.0));
    }

    #[test]
    fn total_oracle_disagreement_leaves_metrics_missing() {
        // Beta-vocabulary sentences conditioned on alpha: the oracle routes
        // them all to beta.
        let (report, _) = report_fixture(&[("alpha", &["blue azure navy", "navy blue sea"])], &[]);
        assert_eq!(report.conditioning_accuracy, 0.0);
        let m = &report.per_intent[0];
        assert_eq!(m.agreeing, 0);
        assert_eq!(m.bleu_quality, None);
        assert_eq!(m.bleu_diversity, None);
        assert_eq!(m.originality, None);
        assert_eq!(report.bleu_quality, None);
    }

    #[test]
    fn single_agreeing_sentence_has_no_self_bleu() {
        let (report, _) = report_fixture(&[("alpha", &["red crimson glow"])], &[]);
        let m = &report.per_intent[0];
        assert_eq!(m.agreeing, 1);
        assert!(m.bleu_quality.is_some());
        assert_eq!(m.bleu_diversity, None);
        // Quality is defined, so the aggregate has it; diversity stays missing.
        assert!(report.bleu_quality.is_some());
        assert_eq!(report.bleu_diversity, None);
    }

    #[test]
    fn duplicating_a_sentence_never_increases_diversity() {
        let base: &[&str] = &["red crimson glow", "scarlet blaze red", "ruby shade crimson"];
        let (before, _) = report_fixture(&[("alpha", base)], &[]);
        let with_dup: Vec<&str> = base.iter().copied().chain(["red crimson glow"]).collect();
        let (after, _) = report_fixture(&[("alpha", &with_dup)], &[]);
        assert!(
            after.per_intent[0].bleu_diversity.unwrap()
                <= before.per_intent[0].bleu_diversity.unwrap() + 1e-12
        );
    }

    #[test]
    fn micro_accuracy_and_weighted_aggregates() {
        let (report, _) = report_fixture(
            &[
                ("alpha", &["red crimson glow", "blue azure navy"][..]),
                ("beta", &["navy blue sea", "azure deep tide"][..]),
            ],
            &[],
        );
        // alpha: 1 of 2 agrees; beta: 2 of 2 agree -> micro 3/4.
        assert_abs_diff_eq!(report.conditioning_accuracy, 0.75, epsilon = 1e-12);
        let alpha = &report.per_intent[0];
        let beta = &report.per_intent[1];
        assert_eq!((alpha.agreeing, beta.agreeing), (1, 2));
        // Quality aggregate weights by agreeing counts: (1*qa + 2*qb) / 3.
        let expect = (alpha.bleu_quality.unwrap() + 2.0 * beta.bleu_quality.unwrap()) / 3.0;
        assert_abs_diff_eq!(report.bleu_quality.unwrap(), expect, epsilon = 1e-12);
        // Diversity defined only for beta.
        assert_abs_diff_eq!(
            report.bleu_diversity.unwrap(),
            beta.bleu_diversity.unwrap(),
            epsilon = 1e-12
        );
        for m in &report.per_intent {
            for v in [m.bleu_quality, m.bleu_diversity, m.originality].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn unknown_conditioning_intent_is_rejected() {
        let ds = toy_dataset();
        let table = EmbeddingTable::seeded(24, 7);
        let oracle = train_oracle(&ds, &table).unwrap();
        let gen_map: BTreeMap<String, Vec<Pattern>> =
            [("missing".to_string(), vec![pat("x")])].into_iter().collect();
        assert!(evaluate_generation(&gen_map, &ds, &HashSet::new(), &oracle, &table).is_err());
    }

    #[test]
    fn report_csv_has_per_intent_and_aggregate_rows() {
        let (report, _) = report_fixture(&[("alpha", &["red crimson glow"])], &[]);
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "intent,generated,agreeing,conditioning_accuracy,bleu_quality,bleu_diversity,originality"
        );
        assert!(lines[1].starts_with("alpha,1,1,1,"));
        assert!(lines[2].starts_with("all,1,1,1,"));
        let mut audit_buf = Vec::new();
        write_audit_csv(&mut audit_buf, &report.audit).unwrap();
        let audit_text = String::from_utf8(audit_buf).unwrap();
        assert!(audit_text.lines().count() == 2);
        assert!(audit_text.contains("red crimson glow"));
    }
}
