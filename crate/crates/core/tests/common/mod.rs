//! Shared fixtures for integration tests: a brute-force interpolated
//! Kneser-Ney reference implementation written directly from the textbook
//! recursion (window scans, no count tables), plus toy corpora.

#![allow(dead_code)]

use std::collections::BTreeSet;

pub const START: &str = "<s>";
pub const END: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Brute-force interpolated Kneser-Ney scorer. Every count is recomputed on
/// demand by scanning padded sentences, so nothing here shares structure
/// with the production estimator.
pub struct KnOracle {
    order: usize,
    discount: f64,
    sentences: Vec<Vec<String>>,
    vocab: Vec<String>,
    injected: Vec<String>,
}

impl KnOracle {
    pub fn new(corpus: &[Vec<&str>], order: usize, discount: f64, forced: &[&str]) -> Self {
        assert!(order >= 1);
        let distinct: BTreeSet<&Vec<&str>> = corpus.iter().collect();
        let mut sentences = Vec::new();
        let mut observed: BTreeSet<String> = BTreeSet::new();
        for s in distinct {
            let mut padded = vec![START.to_string(); order - 1];
            padded.extend(s.iter().map(|t| t.to_string()));
            padded.push(END.to_string());
            for t in &padded[order - 1..] {
                observed.insert(t.clone());
            }
            sentences.push(padded);
        }
        let mut injected: Vec<String> = Vec::new();
        for t in forced.iter().map(|t| t.to_string()).chain([UNK.to_string()]) {
            if !observed.contains(&t) && !injected.contains(&t) {
                injected.push(t);
            }
        }
        let vocab: Vec<String> = observed
            .iter()
            .cloned()
            .chain(injected.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        KnOracle {
            order,
            discount,
            sentences,
            vocab,
            injected,
        }
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    fn raw(&self, gram: &[String]) -> usize {
        if gram.iter().all(|t| t == START) {
            return 0;
        }
        let mut n = 0;
        for s in &self.sentences {
            if s.len() >= gram.len() {
                n += s.windows(gram.len()).filter(|w| *w == gram).count();
            }
        }
        if gram.len() == 1 && self.injected.contains(&gram[0]) {
            n += 1;
        }
        n
    }

    fn cont(&self, tuple: &[String]) -> usize {
        let mut lefts: BTreeSet<&str> = BTreeSet::new();
        for s in &self.sentences {
            if s.len() > tuple.len() {
                for w in s.windows(tuple.len() + 1) {
                    if &w[1..] == tuple {
                        lefts.insert(w[0].as_str());
                    }
                }
            }
        }
        if tuple.iter().all(|t| t == START) {
            lefts.remove(START);
        }
        let mut n = lefts.len();
        if tuple.len() == 1 && self.injected.contains(&tuple[0]) {
            n += 1;
        }
        n
    }

    fn level_count(&self, level: usize, gram: &[String]) -> usize {
        if level == self.order || (level == 1 && self.order == 1) {
            self.raw(gram)
        } else {
            self.cont(gram)
        }
    }

    fn prob_at(&self, level: usize, context: &[String], word: &str) -> f64 {
        let d = self.discount;
        if level == 1 {
            let count = |w: &str| self.level_count(1, &[w.to_string()]);
            let total: usize = self.vocab.iter().map(|w| count(w)).sum();
            let types = self.vocab.iter().filter(|w| count(w) > 0).count();
            let num = count(word) as f64;
            let total = total as f64;
            return (num - d).max(0.0) / total
                + d * types as f64 / total / self.vocab.len() as f64;
        }
        let lower = self.prob_at(level - 1, &context[1..], word);
        let mut mass = 0usize;
        let mut types = 0usize;
        for w in &self.vocab {
            let mut gram = context.to_vec();
            gram.push(w.clone());
            let c = self.level_count(level, &gram);
            mass += c;
            if c > 0 {
                types += 1;
            }
        }
        if mass == 0 {
            return lower;
        }
        let mut gram = context.to_vec();
        gram.push(word.to_string());
        let num = self.level_count(level, &gram) as f64;
        let mass = mass as f64;
        (num - d).max(0.0) / mass + d * types as f64 / mass * lower
    }

    fn map_word(&self, t: &str) -> String {
        if self.vocab.iter().any(|v| v == t) {
            t.to_string()
        } else {
            UNK.to_string()
        }
    }

    pub fn prob(&self, context: &[&str], word: &str) -> f64 {
        let start = context.len().saturating_sub(self.order - 1);
        let ctx: Vec<String> = context[start..]
            .iter()
            .map(|t| {
                if *t == START {
                    t.to_string()
                } else {
                    self.map_word(t)
                }
            })
            .collect();
        self.prob_at(ctx.len() + 1, &ctx, &self.map_word(word))
    }

    pub fn sequence_log_prob(&self, tokens: &[&str]) -> f64 {
        let mut padded = vec![START.to_string(); self.order - 1];
        padded.extend(tokens.iter().map(|t| self.map_word(t)));
        padded.push(END.to_string());
        let mut total = 0.0;
        for i in self.order - 1..padded.len() {
            total += self
                .prob_at(self.order, &padded[i + 1 - self.order..i], &padded[i])
                .ln();
        }
        total
    }

    pub fn perplexity(&self, test: &[Vec<&str>]) -> f64 {
        let n: usize = test.iter().map(|s| s.len() + 1).sum();
        let total: f64 = test.iter().map(|s| self.sequence_log_prob(s)).sum();
        (-total / n as f64).exp()
    }
}

/// Small corpora (at most 5 sentences, vocabulary at most 10) exercising
/// repeats, shared prefixes, single tokens, and an empty sentence.
pub fn toy_corpora() -> Vec<Vec<Vec<&'static str>>> {
    vec![
        vec![vec!["a", "b"]],
        vec![vec!["a", "a", "a"]],
        vec![
            vec!["a", "b", "c", "d", "e"],
            vec!["b", "c", "d"],
            vec!["a", "b", "d"],
        ],
        vec![vec!["a"], vec!["b"], vec!["c"], vec!["a", "b"], vec!["b", "a"]],
        vec![
            vec!["red", "green"],
            vec!["green", "red", "blue"],
            vec!["blue", "blue"],
            vec!["red"],
        ],
        vec![
            vec!["x", "y", "z", "w", "v"],
            vec!["y", "z", "w", "x"],
            vec!["z", "z", "z"],
            vec!["w"],
            vec!["x", "y"],
        ],
        vec![vec!["a", "b", "a", "b", "a"], vec!["b", "a", "b"], vec!["a", "b"]],
        vec![vec![]],
        vec![
            vec!["p", "q", "r"],
            vec!["q", "r", "p"],
            vec!["r", "p", "q"],
            vec!["p", "p"],
            vec!["q"],
        ],
        vec![
            vec!["m", "n"],
            vec!["n", "m"],
            vec!["m", "m", "n", "n"],
            vec!["n", "n", "m"],
        ],
    ]
}

/// Contexts worth probing for a corpus: every window of every padded
/// sentence up to order-1 tokens, plus unseen and all-start contexts.
pub fn probe_contexts(corpus: &[Vec<&str>], order: usize) -> Vec<Vec<String>> {
    let mut contexts: BTreeSet<Vec<String>> = BTreeSet::new();
    contexts.insert(vec![]);
    for s in corpus {
        let mut padded = vec![START.to_string(); order - 1];
        padded.extend(s.iter().map(|t| t.to_string()));
        padded.push(END.to_string());
        for len in 1..order.max(2) {
            for w in padded.windows(len) {
                contexts.insert(w.to_vec());
            }
        }
    }
    contexts.insert(vec!["zzz-unseen".to_string()]);
    if order >= 3 {
        contexts.insert(vec!["zzz-unseen".to_string(), "zzz-two".to_string()]);
    }
    if order >= 2 {
        contexts.insert(vec![START.to_string(); order - 1]);
    }
    contexts.into_iter().collect()
}
