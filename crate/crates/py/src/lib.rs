//! Python bindings: corpus access, sentence BLEU, Kneser-Ney language
//! models, checkpoint-based generation, and the experiment pipeline. All
//! containers cross the boundary as plain Python lists and dicts.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use querygen::corpus::{load_dataset, subsample, DatasetFormat, Pattern};
use querygen::cvae::{generate, load_checkpoint, Checkpoint};
use querygen::experiment::{
    prepare_context, run_pipeline_with, ExperimentConfig, MixtureKind,
};
use querygen::metrics;
use querygen::ngram::{count_ngrams, estimate_kneser_ney, export_arpa, KneserNeyLm};
use querygen::synth::{write_corpus, SynthConfig};

fn py_err(e: querygen::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_patterns(sentences: Vec<Vec<String>>) -> Vec<Pattern> {
    sentences.into_iter().map(Pattern).collect()
}

/// Sentence BLEU of `hypothesis` against `references` with up to `max_n`-gram
/// precisions; 1.0 when the hypothesis equals a reference.
#[pyfunction]
#[pyo3(signature = (hypothesis, references, max_n = 4))]
fn bleu(hypothesis: Vec<String>, references: Vec<Vec<String>>, max_n: usize) -> f64 {
    let refs = to_patterns(references);
    metrics::bleu(&Pattern(hypothesis), refs.iter(), max_n)
}

/// An interpolated Kneser-Ney n-gram language model.
#[pyclass(name = "LanguageModel")]
struct PyLanguageModel {
    inner: KneserNeyLm,
}

#[pymethods]
impl PyLanguageModel {
    #[new]
    #[pyo3(signature = (sentences, order = 4, discount = 0.75))]
    fn new(sentences: Vec<Vec<String>>, order: usize, discount: f64) -> PyResult<Self> {
        let counts = count_ngrams(&to_patterns(sentences), order).map_err(py_err)?;
        let inner = estimate_kneser_ney(&counts, discount).map_err(py_err)?;
        Ok(PyLanguageModel { inner })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    #[getter]
    fn discount(&self) -> f64 {
        self.inner.discount()
    }

    /// Prediction vocabulary, including the sentence-end and unknown tokens.
    fn vocab(&self) -> Vec<String> {
        self.inner.vocab().iter().cloned().collect()
    }

    /// p(word | context); unknown words fall back to the unknown token.
    fn prob(&self, context: Vec<String>, word: &str) -> f64 {
        let refs: Vec<&str> = context.iter().map(String::as_str).collect();
        self.inner.prob(&refs, word)
    }

    /// Natural-log probability of a sentence, sentence end included.
    fn log_prob(&self, sentence: Vec<String>) -> f64 {
        self.inner.sequence_log_prob(&Pattern(sentence))
    }

    fn perplexity(&self, sentences: Vec<Vec<String>>) -> PyResult<f64> {
        querygen::ngram::perplexity(&self.inner, &to_patterns(sentences)).map_err(py_err)
    }

    /// Writes the model in ARPA text format.
    fn export_arpa(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path)
            .map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        export_arpa(std::io::BufWriter::new(file), &self.inner).map_err(py_err)
    }
}

/// An intent-labelled corpus of delexicalized sentences.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: querygen::corpus::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads every chunk-annotated JSON file under `path`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_dataset(&path, DatasetFormat::ChunkedJson).map_err(py_err)?;
        Ok(PyDataset { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Distinct intent names, in first-seen order.
    fn intents(&self) -> Vec<String> {
        self.inner.intents.clone()
    }

    /// Per-sentence intent labels, aligned with `patterns()`.
    fn intent_labels(&self) -> Vec<String> {
        self.inner.utterances.iter().map(|u| u.intent.clone()).collect()
    }

    /// Delexicalized token sequences, aligned with `intent_labels()`.
    fn patterns(&self) -> Vec<Vec<String>> {
        self.inner.patterns.iter().map(|p| p.0.clone()).collect()
    }

    /// A seeded draw of `n` sentences, balanced across intents by default.
    #[pyo3(signature = (n, seed, balanced = true))]
    fn subsample(&self, n: usize, seed: u64, balanced: bool) -> PyResult<Self> {
        let inner = subsample(&self.inner, n, seed, balanced).map_err(py_err)?;
        Ok(PyDataset { inner })
    }
}

/// A trained generator restored from a checkpoint file.
#[pyclass(name = "Generator")]
struct PyGenerator {
    checkpoint: Checkpoint,
}

#[pymethods]
impl PyGenerator {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let checkpoint = load_checkpoint(&path).map_err(py_err)?;
        Ok(PyGenerator { checkpoint })
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.checkpoint.config.n_classes
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.checkpoint.vocab.len()
    }

    /// Greedily decodes `n` sentences conditioned on a class index, each from
    /// a fresh seeded latent draw. Returns space-joined sentences.
    fn generate(&self, class_index: usize, n: usize, seed: u64) -> PyResult<Vec<String>> {
        let patterns = generate(
            &self.checkpoint.config,
            &self.checkpoint.params,
            &self.checkpoint.vocab,
            class_index,
            n,
            seed,
        )
        .map_err(py_err)?;
        Ok(patterns.iter().map(|p| p.to_string()).collect())
    }
}

/// Writes the bundled synthetic benchmark corpus as train/, test/, and
/// reservoir/ splits under `dir`.
#[pyfunction]
#[pyo3(signature = (dir, train_per_intent = 2000, test_per_intent = 100, reservoir_per_intent = 250, seed = 7))]
fn generate_corpus(
    dir: PathBuf,
    train_per_intent: usize,
    test_per_intent: usize,
    reservoir_per_intent: usize,
    seed: u64,
) -> PyResult<()> {
    write_corpus(
        &dir,
        &SynthConfig {
            train_per_intent,
            test_per_intent,
            reservoir_per_intent,
            seed,
        },
    )
    .map_err(py_err)
}

/// Trains one model per seed and evaluates its generated queries. Returns
/// the run directory and a summary dict keyed by metric name, each value a
/// dict with mean (None when undefined), std, and n_seeds.
#[pyfunction]
#[pyo3(signature = (
    output_dir,
    data_root = None,
    seeds = vec![1, 2, 3, 4, 5],
    alpha = 0.2,
    beta = 0.9,
    d0_size = 200,
    reservoir_size = 200,
    n_generate = 1000,
    epochs = 50,
    embedding_dim = 100,
    embed_dim = 100,
    hidden_dim = 256,
    mixture = "transfer",
))]
#[allow(clippy::too_many_arguments)]
fn run_pipeline<'py>(
    py: Python<'py>,
    output_dir: PathBuf,
    data_root: Option<PathBuf>,
    seeds: Vec<u64>,
    alpha: f64,
    beta: f64,
    d0_size: usize,
    reservoir_size: usize,
    n_generate: usize,
    epochs: usize,
    embedding_dim: usize,
    embed_dim: usize,
    hidden_dim: usize,
    mixture: &str,
) -> PyResult<(String, Bound<'py, PyDict>)> {
    let mixture = match mixture {
        "transfer" => MixtureKind::Transfer,
        "pseudo-label" => MixtureKind::PseudoLabel,
        other => {
            return Err(PyValueError::new_err(format!(
                "mixture must be 'transfer' or 'pseudo-label', got {other:?}"
            )))
        }
    };
    let mut config = ExperimentConfig {
        data_root,
        embedding_dim,
        n_seed_sentences: d0_size,
        n_reservoir_sentences: reservoir_size,
        seeds,
        alpha,
        beta,
        mixture,
        n_generate,
        output_dir,
        ..ExperimentConfig::default()
    };
    config.cvae.epochs = epochs;
    config.cvae.embed_dim = embed_dim;
    config.cvae.hidden_dim = hidden_dim;
    let ctx = prepare_context(&config).map_err(py_err)?;
    let dir = config.output_dir.join("pipeline");
    let output = run_pipeline_with(&ctx, &config, &dir).map_err(py_err)?;
    let summary = PyDict::new(py);
    for row in &output.summary {
        let entry = PyDict::new(py);
        entry.set_item("mean", row.mean.is_finite().then_some(row.mean))?;
        entry.set_item("std", row.std.is_finite().then_some(row.std))?;
        entry.set_item("n_seeds", row.n_seeds)?;
        summary.set_item(&row.metric, entry)?;
    }
    Ok((output.dir.display().to_string(), summary))
}

#[pymodule]
fn querygen_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(generate_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_class::<PyLanguageModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGenerator>()?;
    Ok(())
}
