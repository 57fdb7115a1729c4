//! Interpolated Kneser-Ney n-gram language models and the augmentation
//! study: perplexity of models trained on a seed set, an augmented set, and
//! a real-data reference set over a shared forced vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};

use crate::corpus::Pattern;
use crate::error::{Error, Result};

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_DISCOUNT: f64 = 0.75;

/// Raw and continuation counts over a deduplicated corpus. Sentences are
/// padded with (order-1) start markers and one end marker; every k-gram
/// window (k <= order) of the padded sequence is counted except windows made
/// solely of start markers. The continuation count of a tuple t is the
/// number of distinct tokens v with count(v . t) > 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramCounts {
    order: usize,
    counts: BTreeMap<Vec<String>, usize>,
    continuation: BTreeMap<Vec<String>, usize>,
}

impl NgramCounts {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn raw(&self, gram: &[&str]) -> usize {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        self.counts.get(key.as_slice()).copied().unwrap_or(0)
    }

    pub fn continuation(&self, gram: &[&str]) -> usize {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        self.continuation.get(key.as_slice()).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Distinct non-start tokens observed as unigrams.
    pub fn unigrams(&self) -> impl Iterator<Item = &str> {
        self.counts
            .keys()
            .filter(|k| k.len() == 1)
            .map(|k| k[0].as_str())
    }

    /// Forces `token` into the model support: a unigram of count 1 that also
    /// contributes 1 to the unigram continuation table. Tokens already
    /// observed are left untouched.
    fn inject_unigram(&mut self, token: &str) {
        let key = vec![token.to_string()];
        if self.counts.contains_key(key.as_slice()) {
            return;
        }
        self.counts.insert(key.clone(), 1);
        self.continuation.insert(key, 1);
    }
}

/// Counts all n-grams up to `order` over the distinct sentences of the
/// corpus; repeated sentences are kept only once.
pub fn count_ngrams(patterns: &[Pattern], order: usize) -> Result<NgramCounts> {
    if order < 1 {
        return Err(Error::InvalidArgument("n-gram order must be >= 1".into()));
    }
    let distinct: BTreeSet<&[String]> = patterns.iter().map(|p| p.tokens()).collect();
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let mut left_contexts: HashMap<Vec<String>, HashSet<String>> = HashMap::new();
    for sentence in distinct {
        let mut padded: Vec<String> = vec![START_TOKEN.to_string(); order - 1];
        padded.extend(sentence.iter().cloned());
        padded.push(END_TOKEN.to_string());
        for k in 1..=order {
            for window in padded.windows(k) {
                if window.iter().all(|t| t == START_TOKEN) {
                    continue;
                }
                *counts.entry(window.to_vec()).or_insert(0) += 1;
                if k >= 2 {
                    left_contexts
                        .entry(window[1..].to_vec())
                        .or_default()
                        .insert(window[0].clone());
                }
            }
        }
    }
    let continuation = left_contexts
        .into_iter()
        .map(|(t, lefts)| (t, lefts.len()))
        .collect();
    Ok(NgramCounts {
        order,
        counts,
        continuation,
    })
}

#[derive(Debug, Clone, Copy)]
struct ContextStats {
    mass: f64,
    types: usize,
}

/// Interpolated Kneser-Ney model with a single absolute discount. The top
/// order discounts raw counts; lower orders discount continuation counts;
/// the unigram level interpolates with the uniform distribution over the
/// prediction vocabulary (which excludes the start marker and always
/// contains the unknown token). An unseen context at any level backs off
/// with weight 1.
#[derive(Debug, Clone)]
pub struct KneserNeyLm {
    order: usize,
    discount: f64,
    counts: NgramCounts,
    vocab: BTreeSet<String>,
    /// Contexts of length order-1 with raw-count mass (absent when order is 1).
    top_ctx: HashMap<Vec<String>, ContextStats>,
    /// cont_ctx[k-2]: contexts of length k-1 with continuation mass, level k
    /// in 2..order.
    cont_ctx: Vec<HashMap<Vec<String>, ContextStats>>,
    uni_mass: f64,
    uni_types: usize,
}

/// Estimates an interpolated Kneser-Ney model. The unknown token is injected
/// as a count-1 unigram when absent, so every model can score any input.
pub fn estimate_kneser_ney(counts: &NgramCounts, discount: f64) -> Result<KneserNeyLm> {
    if !(0.0 < discount && discount < 1.0) {
        return Err(Error::LanguageModel(format!(
            "discount must be in (0, 1), got {discount}"
        )));
    }
    if counts.is_empty() {
        return Err(Error::LanguageModel(
            "cannot estimate a language model from empty counts".into(),
        ));
    }
    let mut counts = counts.clone();
    counts.inject_unigram(UNK_TOKEN);
    let order = counts.order;
    let vocab: BTreeSet<String> = counts.unigrams().map(|t| t.to_string()).collect();

    let mut top_ctx: HashMap<Vec<String>, ContextStats> = HashMap::new();
    if order >= 2 {
        for (gram, &c) in counts.counts.iter().filter(|(g, _)| g.len() == order) {
            let e = top_ctx
                .entry(gram[..order - 1].to_vec())
                .or_insert(ContextStats { mass: 0.0, types: 0 });
            e.mass += c as f64;
            e.types += 1;
        }
    }
    let mut cont_ctx = Vec::new();
    for level in 2..order {
        let mut ctx: HashMap<Vec<String>, ContextStats> = HashMap::new();
        for (tuple, &cc) in counts.continuation.iter().filter(|(t, _)| t.len() == level) {
            let e = ctx
                .entry(tuple[..level - 1].to_vec())
                .or_insert(ContextStats { mass: 0.0, types: 0 });
            e.mass += cc as f64;
            e.types += 1;
        }
        cont_ctx.push(ctx);
    }
    // Unigram level: continuation counts, except for order-1 models, which
    // have no bigram table to derive them from and use raw counts directly.
    let (uni_mass, uni_types) = if order == 1 {
        let grams: Vec<usize> = counts.counts.values().copied().collect();
        (grams.iter().sum::<usize>() as f64, grams.len())
    } else {
        let ccs: Vec<usize> = counts
            .continuation
            .iter()
            .filter(|(t, _)| t.len() == 1)
            .map(|(_, &c)| c)
            .collect();
        (ccs.iter().sum::<usize>() as f64, ccs.len())
    };
    Ok(KneserNeyLm {
        order,
        discount,
        counts,
        vocab,
        top_ctx,
        cont_ctx,
        uni_mass,
        uni_types,
    })
}

impl KneserNeyLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Prediction vocabulary: end and unknown markers included, start marker
    /// excluded.
    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    fn map_word(&self, token: &str) -> String {
        if self.vocab.contains(token) {
            token.to_string()
        } else {
            UNK_TOKEN.to_string()
        }
    }

    fn map_context_token(&self, token: &str) -> String {
        if token == START_TOKEN || self.vocab.contains(token) {
            token.to_string()
        } else {
            UNK_TOKEN.to_string()
        }
    }

    fn unigram_prob(&self, word: &str) -> f64 {
        let d = self.discount;
        let v = self.vocab.len() as f64;
        let numerator = if self.order == 1 {
            self.counts.raw(&[word]) as f64
        } else {
            self.counts.continuation(&[word]) as f64
        };
        let discounted = (numerator - d).max(0.0) / self.uni_mass;
        let lambda = d * self.uni_types as f64 / self.uni_mass;
        discounted + lambda / v
    }

    /// Interpolated probability at `level` with a context of level-1 tokens.
    fn level_prob(&self, level: usize, context: &[String], word: &str) -> f64 {
        if level == 1 {
            return self.unigram_prob(word);
        }
        let d = self.discount;
        let (stats, numerator) = if level == self.order {
            let stats = self.top_ctx.get(context);
            let mut gram = context.to_vec();
            gram.push(word.to_string());
            let c = self.counts.counts.get(gram.as_slice()).copied().unwrap_or(0);
            (stats, c as f64)
        } else {
            let stats = self.cont_ctx[level - 2].get(context);
            let mut gram = context.to_vec();
            gram.push(word.to_string());
            let cc = self
                .counts
                .continuation
                .get(gram.as_slice())
                .copied()
                .unwrap_or(0);
            (stats, cc as f64)
        };
        let lower = self.level_prob(level - 1, &context[1..], word);
        match stats {
            Some(s) if s.mass > 0.0 => {
                let discounted = (numerator - d).max(0.0) / s.mass;
                let lambda = d * s.types as f64 / s.mass;
                discounted + lambda * lower
            }
            // Unseen context: full back-off weight.
            _ => lower,
        }
    }

    /// p(word | context). The context is truncated to its last order-1
    /// tokens; tokens outside the vocabulary (the start marker aside, for
    /// context positions) map to the unknown token.
    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let start = context.len().saturating_sub(self.order - 1);
        let ctx: Vec<String> = context[start..]
            .iter()
            .map(|t| self.map_context_token(t))
            .collect();
        let w = self.map_word(word);
        self.level_prob(ctx.len() + 1, &ctx, &w)
    }

    /// Sum over positions (end marker included) of ln p(w_i | history), with
    /// start-marker padding.
    pub fn sequence_log_prob(&self, pattern: &Pattern) -> f64 {
        let mut padded: Vec<String> = vec![START_TOKEN.to_string(); self.order - 1];
        padded.extend(pattern.tokens().iter().map(|t| self.map_context_token(t)));
        padded.push(END_TOKEN.to_string());
        let mut total = 0.0;
        for i in self.order - 1..padded.len() {
            let ctx = &padded[i + 1 - self.order..i];
            total += self.level_prob(self.order, ctx, &padded[i]).ln();
        }
        total
    }
}

/// Number of scored positions: every token plus the end marker.
fn token_budget(test: &[Pattern]) -> usize {
    test.iter().map(|p| p.len() + 1).sum()
}

/// exp(-(total log prob) / N) with N counting the end marker of every
/// sentence. Always >= 1 for a normalized model.
pub fn perplexity(lm: &KneserNeyLm, test: &[Pattern]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument(
            "perplexity needs a non-empty test set".into(),
        ));
    }
    let total: f64 = test.iter().map(|p| lm.sequence_log_prob(p)).sum();
    Ok((-total / token_budget(test) as f64).exp())
}

/// Re-estimates every model with all `union_tokens` forced into its support
/// as count-1 unigrams. Models already covering the union are rebuilt
/// identically.
pub fn unify_vocabulary(lms: &[KneserNeyLm], union_tokens: &BTreeSet<String>) -> Vec<KneserNeyLm> {
    lms.iter()
        .map(|lm| {
            let mut counts = lm.counts.clone();
            for token in union_tokens {
                counts.inject_unigram(token);
            }
            estimate_kneser_ney(&counts, lm.discount)
                .expect("re-estimation from non-empty counts cannot fail")
        })
        .collect()
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AugmentationRow {
    pub name: String,
    pub sentences: usize,
    pub distinct_sentences: usize,
    pub perplexity: f64,
    /// 100 * (ppl - ppl_seed) / ppl_seed; negative means improvement.
    pub relative_loss_pct: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AugmentationReport {
    pub order: usize,
    pub discount: f64,
    pub test_sentences: usize,
    pub rows: Vec<AugmentationRow>,
}

fn distinct_count(patterns: &[Pattern]) -> usize {
    patterns.iter().collect::<HashSet<_>>().len()
}

fn is_subset(small: &[Pattern], big: &[Pattern]) -> bool {
    let big: HashSet<&Pattern> = big.iter().collect();
    small.iter().all(|p| big.contains(p))
}

/// Trains seed, augmented, and reference models over a shared forced
/// vocabulary and reports their test perplexities plus relative losses
/// against the seed model.
pub fn augmentation_report(
    d0: &[Pattern],
    d_aug: &[Pattern],
    d_ref: &[Pattern],
    test: &[Pattern],
    order: usize,
    discount: f64,
) -> Result<AugmentationReport> {
    if !is_subset(d0, d_aug) || !is_subset(d0, d_ref) {
        return Err(Error::InvalidArgument(
            "augmented and reference corpora must both contain the seed corpus".into(),
        ));
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument(
            "augmentation study needs a non-empty test pool".into(),
        ));
    }
    let union: BTreeSet<String> = d0
        .iter()
        .chain(d_aug)
        .chain(d_ref)
        .flat_map(|p| p.tokens().iter().cloned())
        .collect();
    let sets: [(&str, &[Pattern]); 3] = [("seed", d0), ("augmented", d_aug), ("reference", d_ref)];
    let mut lms = Vec::new();
    for (_, patterns) in sets {
        lms.push(estimate_kneser_ney(&count_ngrams(patterns, order)?, discount)?);
    }
    let lms = unify_vocabulary(&lms, &union);
    let ppls: Vec<f64> = lms
        .iter()
        .map(|lm| perplexity(lm, test))
        .collect::<Result<_>>()?;
    let base = ppls[0];
    let rows = sets
        .iter()
        .zip(&ppls)
        .map(|((name, patterns), &ppl)| AugmentationRow {
            name: name.to_string(),
            sentences: patterns.len(),
            distinct_sentences: distinct_count(patterns),
            perplexity: ppl,
            relative_loss_pct: 100.0 * (ppl - base) / base,
        })
        .collect();
    Ok(AugmentationReport {
        order,
        discount,
        test_sentences: test.len(),
        rows,
    })
}

pub fn write_augmentation_csv<W: Write>(writer: W, report: &AugmentationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::LanguageModel(format!("augmentation csv: {e}"));
    w.write_record([
        "lm",
        "sentences",
        "distinct_sentences",
        "perplexity",
        "relative_loss_pct",
    ])
    .map_err(err)?;
    for row in &report.rows {
        w.write_record([
            row.name.clone(),
            row.sentences.to_string(),
            row.distinct_sentences.to_string(),
            row.perplexity.to_string(),
            row.relative_loss_pct.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::LanguageModel(format!("augmentation csv: {e}")))?;
    Ok(())
}

const ARPA_NEVER_PREDICTED: f64 = -99.0;

/// Writes the model in the ARPA text format: log10 probabilities, back-off
/// weights equal to the interpolation weights, entries closed under context
/// prefixes so a standard back-off evaluator reproduces the interpolated
/// model exactly.
pub fn export_arpa<W: Write>(mut writer: W, lm: &KneserNeyLm) -> Result<()> {
    // Entry sets per level: top order lists raw n-grams; lower levels list
    // tuples with continuation mass plus every prefix of a higher entry.
    let mut levels: Vec<BTreeSet<Vec<String>>> = vec![BTreeSet::new(); lm.order];
    for gram in lm.counts.counts.keys().filter(|g| g.len() == lm.order) {
        levels[lm.order - 1].insert(gram.clone());
    }
    if lm.order == 1 {
        for token in &lm.vocab {
            levels[0].insert(vec![token.clone()]);
        }
    }
    for k in (1..lm.order).rev() {
        let mut set: BTreeSet<Vec<String>> = lm
            .counts
            .continuation
            .keys()
            .filter(|t| t.len() == k)
            .cloned()
            .collect();
        if k == 1 {
            for token in &lm.vocab {
                set.insert(vec![token.clone()]);
            }
        }
        let prefixes: Vec<Vec<String>> =
            levels[k].iter().map(|t| t[..k].to_vec()).collect();
        set.extend(prefixes);
        levels[k - 1] = set;
    }

    let bow_log10 = |tuple: &[String]| -> f64 {
        let stats = if tuple.len() + 1 == lm.order {
            lm.top_ctx.get(tuple)
        } else {
            lm.cont_ctx[tuple.len() - 1].get(tuple)
        };
        match stats {
            Some(s) if s.mass > 0.0 => (lm.discount * s.types as f64 / s.mass).log10(),
            _ => 0.0,
        }
    };

    let io_err = |e: std::io::Error| Error::LanguageModel(format!("arpa export: {e}"));
    writeln!(writer, "\\data\\").map_err(io_err)?;
    for (i, set) in levels.iter().enumerate() {
        writeln!(writer, "ngram {}={}", i + 1, set.len()).map_err(io_err)?;
    }
    for (i, set) in levels.iter().enumerate() {
        let level = i + 1;
        writeln!(writer, "\n\\{level}-grams:").map_err(io_err)?;
        for tuple in set {
            let word = &tuple[level - 1];
            let log10p = if word == START_TOKEN {
                ARPA_NEVER_PREDICTED
            } else {
                lm.level_prob(level, &tuple[..level - 1], word).log10()
            };
            let joined = tuple.join(" ");
            if level < lm.order {
                writeln!(writer, "{log10p}\t{joined}\t{}", bow_log10(tuple)).map_err(io_err)?;
            } else {
                writeln!(writer, "{log10p}\t{joined}").map_err(io_err)?;
            }
        }
    }
    writeln!(writer, "\n\\end\\").map_err(io_err)?;
    Ok(())
}

/// A back-off model read from ARPA text, for interoperability checks.
#[derive(Debug, Clone)]
pub struct ArpaLm {
    order: usize,
    /// tables[k-1]: tuple -> (log10 p, log10 back-off weight).
    tables: Vec<HashMap<Vec<String>, (f64, f64)>>,
}

pub fn import_arpa<R: BufRead>(reader: R) -> Result<ArpaLm> {
    let bad = |msg: &str| Error::LanguageModel(format!("arpa import: {msg}"));
    let mut sizes: Vec<usize> = Vec::new();
    let mut tables: Vec<HashMap<Vec<String>, (f64, f64)>> = Vec::new();
    let mut current: Option<usize> = None;
    let mut in_data = false;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::LanguageModel(format!("arpa import: {e}")))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            in_data = true;
            continue;
        }
        if line == "\\end\\" {
            break;
        }
        if let Some(rest) = line.strip_prefix('\\') {
            if let Some(level_text) = rest.strip_suffix("-grams:") {
                let level: usize = level_text
                    .parse()
                    .map_err(|_| bad("malformed n-gram section header"))?;
                if level != tables.len() + 1 || level > sizes.len() {
                    return Err(bad("n-gram sections out of order"));
                }
                tables.push(HashMap::new());
                current = Some(level);
                in_data = false;
                continue;
            }
        }
        if in_data {
            let rest = line
                .strip_prefix("ngram ")
                .ok_or_else(|| bad("malformed data section"))?;
            let (level, count) = rest
                .split_once('=')
                .ok_or_else(|| bad("malformed ngram size line"))?;
            if level.trim().parse::<usize>() != Ok(sizes.len() + 1) {
                return Err(bad("ngram sizes out of order"));
            }
            sizes.push(count.trim().parse().map_err(|_| bad("bad ngram size"))?);
            continue;
        }
        let level = current.ok_or_else(|| bad("entry outside any section"))?;
        let mut fields = line.split('\t');
        let log10p: f64 = fields
            .next()
            .ok_or_else(|| bad("missing probability"))?
            .parse()
            .map_err(|_| bad("bad probability"))?;
        let tuple: Vec<String> = fields
            .next()
            .ok_or_else(|| bad("missing tokens"))?
            .split(' ')
            .map(|t| t.to_string())
            .collect();
        if tuple.len() != level {
            return Err(bad("entry arity does not match its section"));
        }
        let bow: f64 = match fields.next() {
            Some(text) => text.parse().map_err(|_| bad("bad back-off weight"))?,
            None => 0.0,
        };
        tables[level - 1].insert(tuple, (log10p, bow));
    }
    if tables.is_empty() || tables.len() != sizes.len() {
        return Err(bad("missing n-gram sections"));
    }
    for (i, (table, size)) in tables.iter().zip(&sizes).enumerate() {
        if table.len() != *size {
            return Err(bad(&format!(
                "level {} holds {} entries, header promised {}",
                i + 1,
                table.len(),
                size
            )));
        }
    }
    Ok(ArpaLm {
        order: tables.len(),
        tables,
    })
}

impl ArpaLm {
    pub fn order(&self) -> usize {
        self.order
    }

    fn word_log10(&self, context: &[String], word: &str) -> f64 {
        let mut gram = context.to_vec();
        gram.push(word.to_string());
        if let Some(&(p, _)) = self.tables[gram.len() - 1].get(gram.as_slice()) {
            return p;
        }
        if context.is_empty() {
            // Unknown word: the caller maps out-of-vocabulary tokens first.
            return ARPA_NEVER_PREDICTED;
        }
        let bow = self.tables[context.len() - 1]
            .get(context)
            .map(|&(_, b)| b)
            .unwrap_or(0.0);
        bow + self.word_log10(&context[1..], word)
    }

    /// Natural-log sequence probability under standard back-off evaluation,
    /// with the same padding and unknown-token mapping as the source model.
    pub fn sequence_log_prob(&self, pattern: &Pattern) -> f64 {
        let known = |t: &str| self.tables[0].contains_key([t.to_string()].as_slice());
        let mut padded: Vec<String> = vec![START_TOKEN.to_string(); self.order - 1];
        padded.extend(pattern.tokens().iter().map(|t| {
            if t == START_TOKEN || known(t) {
                t.clone()
            } else {
                UNK_TOKEN.to_string()
            }
        }));
        padded.push(END_TOKEN.to_string());
        let mut total_log10 = 0.0;
        for i in self.order - 1..padded.len() {
            total_log10 += self.word_log10(&padded[i + 1 - self.order..i], &padded[i]);
        }
        total_log10 * std::f64::consts::LN_10
    }
}
