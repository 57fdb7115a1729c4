//! Experiment orchestration: per-seed training pipelines, parameter sweeps,
//! the language-model augmentation study, and reservoir calibration. Every
//! run directory carries a manifest with the resolved configuration so any
//! number can be reproduced from disk.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocabulary, load_dataset, subsample, Dataset, DatasetFormat, Pattern};
use crate::cvae::{fit, generate, save_checkpoint, write_training_log, CvaeConfig};
use crate::embeddings::{
    intent_centroids, load_word_embeddings, max_centroid_cosines, select_reservoir,
    EmbeddingTable,
};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_generation, oracle_accuracy, train_oracle, write_audit_csv, write_report_csv,
    GenerationReport, OracleClassifier,
};
use crate::ngram::{augmentation_report, AugmentationReport, DEFAULT_DISCOUNT, DEFAULT_ORDER};
use crate::synth::{self, generate_split, SplitKind};
use crate::transfer::{build_pseudo_labelled_set, build_training_mixture};

/// Environment variable naming a directory with train/, test/, and
/// reservoir/ splits; used when the config does not set `data_root`.
pub const DATA_ROOT_ENV: &str = "QUERYGEN_DATA_ROOT";

/// Test-pool ceiling for the augmentation study.
pub const LM_TEST_POOL: usize = 700;

const GENERATE_SEED_SALT: u64 = 0x6765_6e71_7565_7279;
const REFERENCE_DRAW_SALT: u64 = 0x7265_665f_6472_6177;

/// How reservoir sentences enter the training mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureKind {
    /// Reservoir sentences join under a catch-all class with reduced
    /// supervision weight.
    Transfer,
    /// Reservoir sentences are filed under their nearest-centroid intent
    /// with full supervision weight.
    PseudoLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Directory holding train/, test/, and reservoir/ splits. Unset: the
    /// QUERYGEN_DATA_ROOT environment variable, then the bundled synthetic
    /// corpus.
    pub data_root: Option<PathBuf>,
    /// Word-vector text file (token then values, space separated). Unset:
    /// vectors bundled with the data root if present, else deterministic
    /// per-token fallback vectors.
    pub embeddings_path: Option<PathBuf>,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    /// Labelled seed sentences drawn per experiment seed (balanced).
    pub n_seed_sentences: usize,
    /// Reservoir sentences drawn from the similarity-selected pool.
    pub n_reservoir_sentences: usize,
    pub seeds: Vec<u64>,
    /// Supervision weight of the catch-all class.
    pub alpha: f64,
    /// Cosine threshold for reservoir selection.
    pub beta: f64,
    pub mixture: MixtureKind,
    /// Total generated sentences per seed, split as evenly as possible
    /// across intents.
    pub n_generate: usize,
    /// Sentences added in the augmentation study, as a fraction of the seed
    /// set size.
    pub augmentation_ratio: f64,
    /// Seed-set sizes for the augmentation study.
    pub lm_seed_sizes: Vec<usize>,
    pub output_dir: PathBuf,
    pub cvae: CvaeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_root: None,
            embeddings_path: None,
            embedding_dim: 100,
            embedding_seed: 5,
            n_seed_sentences: 200,
            n_reservoir_sentences: 200,
            seeds: vec![1, 2, 3, 4, 5],
            alpha: 0.2,
            beta: 0.9,
            mixture: MixtureKind::Transfer,
            n_generate: 1000,
            augmentation_ratio: 1.0,
            lm_seed_sizes: vec![125, 250, 500, 1000],
            output_dir: PathBuf::from("runs"),
            cvae: CvaeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load_toml(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if !(self.augmentation_ratio > 0.0) {
            return Err(Error::Config(format!(
                "augmentation_ratio must be > 0, got {}",
                self.augmentation_ratio
            )));
        }
        if self.alpha < 0.0 {
            return Err(Error::Config(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if !self.beta.is_finite() || self.beta >= 1.0 {
            return Err(Error::Config(format!(
                "beta must be a finite cosine threshold below 1, got {}",
                self.beta
            )));
        }
        if self.n_seed_sentences == 0 {
            return Err(Error::Config("n_seed_sentences must be positive".into()));
        }
        if self.n_generate == 0 {
            return Err(Error::Config("n_generate must be positive".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be positive".into()));
        }
        if self.lm_seed_sizes.is_empty() {
            return Err(Error::Config("lm_seed_sizes must be non-empty".into()));
        }
        for path in [&self.data_root, &self.embeddings_path].into_iter().flatten() {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "configured path does not exist: {}",
                    path.display()
                )));
            }
        }
        self.cvae.validate()
    }
}

#[derive(Debug)]
pub struct ResolvedData {
    pub train: Dataset,
    pub test: Dataset,
    pub reservoir: Dataset,
    pub source: String,
    /// Word vectors shipped beside a data root (or built alongside the
    /// in-memory corpus). An explicit `embeddings_path` overrides them.
    pub bundled: Option<EmbeddingTable>,
}

/// Loads the configured data root (or the environment fallback), or builds
/// the bundled synthetic corpus in memory.
pub fn resolve_data(config: &ExperimentConfig) -> Result<ResolvedData> {
    let root = config
        .data_root
        .clone()
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from));
    match root {
        Some(root) => {
            let vectors = root.join(synth::EMBEDDINGS_FILE);
            let bundled = if vectors.exists() {
                match load_word_embeddings(&vectors, config.embedding_dim, config.embedding_seed) {
                    Ok(table) => Some(table),
                    // Written at a different dimension: ignore, fall back.
                    Err(Error::EmbeddingFormat { .. }) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            Ok(ResolvedData {
                train: load_dataset(&root.join("train"), DatasetFormat::ChunkedJson)?,
                test: load_dataset(&root.join("test"), DatasetFormat::ChunkedJson)?,
                reservoir: load_dataset(&root.join("reservoir"), DatasetFormat::ChunkedJson)?,
                source: root.display().to_string(),
                bundled,
            })
        }
        None => Ok(ResolvedData {
            train: generate_split(SplitKind::InDomain, 2000, 7)?,
            test: generate_split(SplitKind::InDomain, 100, 7_u64.wrapping_add(0x5eed_0001))?,
            reservoir: generate_split(SplitKind::Reservoir, 250, 7_u64.wrapping_add(0x5eed_0002))?,
            source: "bundled synthetic corpus".into(),
            bundled: Some(synth::embedding_table(
                config.embedding_dim,
                config.embedding_seed,
            )?),
        }),
    }
}

/// Shared state for a batch of pipeline runs: data, embeddings, and the
/// reference intent oracle (trained once on the full training split).
pub struct PipelineContext {
    pub data: ResolvedData,
    pub table: EmbeddingTable,
    pub oracle: OracleClassifier,
    pub oracle_test_accuracy: f64,
}

pub fn prepare_context(config: &ExperimentConfig) -> Result<PipelineContext> {
    config.validate()?;
    let mut data = resolve_data(config)?;
    let table = match &config.embeddings_path {
        Some(path) => load_word_embeddings(path, config.embedding_dim, config.embedding_seed)?,
        None => data
            .bundled
            .take()
            .unwrap_or_else(|| EmbeddingTable::seeded(config.embedding_dim, config.embedding_seed)),
    };
    let oracle = train_oracle(&data.train, &table)?;
    let oracle_test_accuracy = oracle_accuracy(&oracle, &data.test, &table);
    Ok(PipelineContext {
        data,
        table,
        oracle,
        oracle_test_accuracy,
    })
}

/// Splits `total` across `k` groups as evenly as possible; the first
/// total mod k groups receive one extra.
pub fn per_intent_budget(total: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    let base = total / k;
    let extra = total % k;
    (0..k).map(|i| base + usize::from(i < extra)).collect()
}

/// Aggregate metrics of one seed run, lifted from its generation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub conditioning_accuracy: f64,
    pub bleu_quality: Option<f64>,
    pub bleu_diversity: Option<f64>,
    pub originality: Option<f64>,
}

impl SeedMetrics {
    /// Selection score: the sum of the four metrics, missing values as 0.
    pub fn score(&self) -> f64 {
        self.conditioning_accuracy
            + self.bleu_quality.unwrap_or(0.0)
            + self.bleu_diversity.unwrap_or(0.0)
            + self.originality.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub status: String,
    pub dir: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub n_seeds: usize,
}

pub struct SeedRun {
    pub metrics: SeedMetrics,
    pub report: GenerationReport,
    pub generated: BTreeMap<String, Vec<Pattern>>,
}

pub struct PipelineOutput {
    pub dir: PathBuf,
    pub summary: Vec<SummaryRow>,
    pub statuses: Vec<SeedStatus>,
    pub runs: Vec<SeedRun>,
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_generated_csv(path: &Path, generated: &BTreeMap<String, Vec<Pattern>>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Dataset(format!("generated csv: {e}"));
    w.write_record(["intent", "pattern"]).map_err(err)?;
    for (intent, patterns) in generated {
        for p in patterns {
            w.write_record([intent.as_str(), &p.to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Dataset(format!("generated csv: {e}")))?;
    Ok(())
}

/// Runs one seed end to end: mixture construction, training, generation,
/// evaluation, and artifact emission under `dir`.
pub fn run_seed(
    ctx: &PipelineContext,
    config: &ExperimentConfig,
    d0: &Dataset,
    seed: u64,
    dir: &Path,
) -> Result<SeedRun> {
    ensure_dir(dir)?;
    let centroids = intent_centroids(d0, &ctx.table);
    let selected = select_reservoir(&ctx.data.reservoir, &centroids, &ctx.table, config.beta);
    let mixture = match config.mixture {
        MixtureKind::Transfer => build_training_mixture(
            d0,
            &ctx.data.reservoir,
            &selected,
            config.n_reservoir_sentences,
            config.alpha,
            seed,
        )?,
        MixtureKind::PseudoLabel => build_pseudo_labelled_set(
            d0,
            &ctx.data.reservoir,
            &selected,
            config.n_reservoir_sentences,
            &centroids,
            &ctx.table,
            seed,
        )?,
    };
    let mixture_path = dir.join("mixture.jsonl");
    let mixture_file = fs::File::create(&mixture_path).map_err(|e| Error::io(&mixture_path, e))?;
    mixture.write_jsonl(mixture_file)?;

    let vocab = build_vocabulary(mixture.examples.iter().map(|e| &e.pattern), 1);
    let mut cvae_cfg = config.cvae.clone();
    cvae_cfg.seed = seed;
    cvae_cfg.n_classes = mixture.classes.len();
    let pretrained = config.embeddings_path.as_ref().map(|_| &ctx.table);
    let trained = fit::<f32>(&cvae_cfg, &mixture, &vocab, pretrained)?;

    let log_path = dir.join("training_log.csv");
    let log_file = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    write_training_log(log_file, &trained.log)?;

    let mut slots = ctx.data.train.slots.clone();
    slots.merge(&ctx.data.reservoir.slots);
    save_checkpoint(
        &dir.join("checkpoint.json"),
        &cvae_cfg,
        &trained.params,
        &vocab,
        &slots,
    )?;

    let budgets = per_intent_budget(config.n_generate, d0.intents.len());
    let mut generated: BTreeMap<String, Vec<Pattern>> = BTreeMap::new();
    for (i, intent) in d0.intents.iter().enumerate() {
        let gen_seed = (seed ^ GENERATE_SEED_SALT).wrapping_add(i as u64);
        let patterns = generate(&cvae_cfg, &trained.params, &vocab, i, budgets[i], gen_seed)?;
        generated.insert(intent.clone(), patterns);
    }
    write_generated_csv(&dir.join("generated.csv"), &generated)?;

    let training_patterns: HashSet<Pattern> =
        mixture.examples.iter().map(|e| e.pattern.clone()).collect();
    let report = evaluate_generation(
        &generated,
        &ctx.data.train,
        &training_patterns,
        &ctx.oracle,
        &ctx.table,
    )?;
    let report_file =
        fs::File::create(dir.join("report.csv")).map_err(|e| Error::io(dir, e))?;
    write_report_csv(report_file, &report)?;
    let audit_file = fs::File::create(dir.join("audit.csv")).map_err(|e| Error::io(dir, e))?;
    write_audit_csv(audit_file, &report.audit)?;

    let metrics = SeedMetrics {
        seed,
        conditioning_accuracy: report.conditioning_accuracy,
        bleu_quality: report.bleu_quality,
        bleu_diversity: report.bleu_diversity,
        originality: report.originality,
    };
    #[derive(Serialize)]
    struct SeedReportFile<'a> {
        seed: u64,
        cvae_config: &'a CvaeConfig,
        metrics: &'a SeedMetrics,
        report: &'a GenerationReport,
    }
    write_json(
        &dir.join("report.json"),
        &SeedReportFile {
            seed,
            cvae_config: &cvae_cfg,
            metrics: &metrics,
            report: &report,
        },
    )?;
    Ok(SeedRun {
        metrics,
        report,
        generated,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn summarize(runs: &[SeedRun]) -> Vec<SummaryRow> {
    let metrics: [(&str, fn(&SeedMetrics) -> Option<f64>); 4] = [
        ("conditioning_accuracy", |m| Some(m.conditioning_accuracy)),
        ("bleu_quality", |m| m.bleu_quality),
        ("bleu_diversity", |m| m.bleu_diversity),
        ("originality", |m| m.originality),
    ];
    metrics
        .iter()
        .map(|(name, pick)| {
            let values: Vec<f64> = runs.iter().filter_map(|r| pick(&r.metrics)).collect();
            let (mean, std) = mean_std(&values);
            SummaryRow {
                metric: name.to_string(),
                mean,
                std,
                n_seeds: values.len(),
            }
        })
        .collect()
}

fn num_cell(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Dataset(format!("summary csv: {e}"));
    w.write_record(["metric", "mean", "std", "n_seeds"]).map_err(err)?;
    for row in rows {
        w.write_record([
            row.metric.clone(),
            num_cell(row.mean),
            num_cell(row.std),
            row.n_seeds.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Dataset(format!("summary csv: {e}")))?;
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    data_source: &'a str,
    oracle_test_accuracy: f64,
    config: &'a ExperimentConfig,
    seeds: Vec<SeedStatus>,
}

/// Runs every configured seed under `dir` (each drawing its own seed set),
/// recording failures in the manifest while other seeds proceed.
pub fn run_pipeline_with(
    ctx: &PipelineContext,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<PipelineOutput> {
    ensure_dir(dir)?;
    let mut statuses = Vec::new();
    let mut runs = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = dir.join(format!("seed-{seed}"));
        let outcome = subsample(&ctx.data.train, config.n_seed_sentences, seed, true)
            .and_then(|d0| run_seed(ctx, config, &d0, seed, &seed_dir));
        let status = match outcome {
            Ok(run) => {
                eprintln!(
                    "seed {seed}: accuracy {:.3}, originality {}",
                    run.metrics.conditioning_accuracy,
                    run.metrics
                        .originality
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "n/a".into())
                );
                runs.push(run);
                "ok".to_string()
            }
            Err(e) => {
                eprintln!("seed {seed}: failed: {e}");
                format!("failed: {e}")
            }
        };
        statuses.push(SeedStatus {
            seed,
            status,
            dir: format!("seed-{seed}"),
        });
    }
    let summary = summarize(&runs);
    write_summary_csv(&dir.join("summary.csv"), &summary)?;
    #[derive(Serialize)]
    struct SummaryFile<'a> {
        config: &'a ExperimentConfig,
        rows: &'a [SummaryRow],
        per_seed: Vec<&'a SeedMetrics>,
    }
    write_json(
        &dir.join("summary.json"),
        &SummaryFile {
            config,
            rows: &summary,
            per_seed: runs.iter().map(|r| &r.metrics).collect(),
        },
    )?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            command: "pipeline",
            data_source: &ctx.data.source,
            oracle_test_accuracy: ctx.oracle_test_accuracy,
            config,
            seeds: statuses.clone(),
        },
    )?;
    Ok(PipelineOutput {
        dir: dir.to_path_buf(),
        summary,
        statuses,
        runs,
    })
}

/// Full pipeline command: context preparation plus a seed batch under
/// `<output_dir>/pipeline`.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<PathBuf> {
    let ctx = prepare_context(config)?;
    eprintln!(
        "data source: {} (oracle test accuracy {:.4})",
        ctx.data.source, ctx.oracle_test_accuracy
    );
    let dir = config.output_dir.join("pipeline");
    run_pipeline_with(&ctx, config, &dir).map(|out| out.dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    Alpha,
    Beta,
    ReservoirSize,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::Beta => "beta",
            SweepParameter::ReservoirSize => "reservoir-size",
        }
    }

    fn apply(self, config: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            SweepParameter::Alpha => config.alpha = value,
            SweepParameter::Beta => config.beta = value,
            SweepParameter::ReservoirSize => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!(
                        "reservoir-size values must be nonnegative integers, got {value}"
                    )));
                }
                config.n_reservoir_sentences = value as usize;
            }
        }
        Ok(())
    }
}

/// Python companion emitted next to sweep.csv; reads the CSV and plots one
/// curve per metric with error bars.
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot metric curves from a sweep.csv produced by the sweep command."""
import argparse
import collections
import csv

import matplotlib.pyplot as plt


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv_path")
    parser.add_argument("--out", default="sweep.png")
    args = parser.parse_args()

    curves = collections.defaultdict(list)
    with open(args.csv_path, newline="") as handle:
        for row in csv.DictReader(handle):
            if not row["mean"]:
                continue
            curves[row["metric"]].append(
                (float(row["value"]), float(row["mean"]), float(row["std"]))
            )

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for metric, points in sorted(curves.items()):
        points.sort()
        xs = [p[0] for p in points]
        means = [p[1] for p in points]
        stds = [p[2] for p in points]
        ax.errorbar(xs, means, yerr=stds, marker="o", capsize=3, label=metric)
    ax.set_xlabel("parameter value")
    ax.set_ylabel("metric")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
"#;

/// One pipeline per value under `<output_dir>/sweep-<parameter>/`, plus a
/// combined CSV of metric curves and a plotting script.
pub fn run_sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let ctx = prepare_context(config)?;
    eprintln!(
        "data source: {} (oracle test accuracy {:.4})",
        ctx.data.source, ctx.oracle_test_accuracy
    );
    let dir = config.output_dir.join(format!("sweep-{}", parameter.name()));
    ensure_dir(&dir)?;
    let mut curve_rows: Vec<(f64, SummaryRow)> = Vec::new();
    for &value in values {
        let mut point_config = config.clone();
        parameter.apply(&mut point_config, value)?;
        point_config.validate()?;
        let point_dir = dir.join(format!("{}-{value}", parameter.name()));
        eprintln!("sweep point {} = {value}", parameter.name());
        let output = run_pipeline_with(&ctx, &point_config, &point_dir)?;
        for row in output.summary {
            curve_rows.push((value, row));
        }
    }
    let csv_path = dir.join("sweep.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Dataset(format!("sweep csv: {e}"));
    w.write_record(["value", "metric", "mean", "std", "n_seeds"]).map_err(err)?;
    for (value, row) in &curve_rows {
        w.write_record([
            value.to_string(),
            row.metric.clone(),
            num_cell(row.mean),
            num_cell(row.std),
            row.n_seeds.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Dataset(format!("sweep csv: {e}")))?;
    let script_path = dir.join("plot_sweep.py");
    fs::write(&script_path, PLOT_SCRIPT).map_err(|e| Error::io(&script_path, e))?;
    Ok(dir)
}

fn multiset<'a, I: IntoIterator<Item = &'a Pattern>>(patterns: I) -> BTreeMap<&'a Pattern, usize> {
    let mut counts = BTreeMap::new();
    for p in patterns {
        *counts.entry(p).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Serialize)]
pub struct OccurrenceRow {
    pub pattern: String,
    pub generated_count: usize,
    pub seed_set_count: usize,
    pub corpus_count: usize,
}

/// Top generated patterns with their seed-set and full-corpus counts.
fn occurrence_rows(
    generated: &[&Pattern],
    d0: &Dataset,
    train: &Dataset,
    top: usize,
) -> Vec<OccurrenceRow> {
    let gen_counts = multiset(generated.iter().copied());
    let d0_counts = multiset(d0.patterns.iter());
    let train_counts = multiset(train.patterns.iter());
    let mut rows: Vec<(&Pattern, usize)> = gen_counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    rows.truncate(top);
    rows.into_iter()
        .map(|(pattern, count)| OccurrenceRow {
            pattern: pattern.to_string(),
            generated_count: count,
            seed_set_count: d0_counts.get(pattern).copied().unwrap_or(0),
            corpus_count: train_counts.get(pattern).copied().unwrap_or(0),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LmEvalSizeResult {
    pub d0_size: usize,
    pub selected_seeds: Vec<u64>,
    pub added_sentences: usize,
    pub added_target: usize,
    pub report: AugmentationReport,
}

#[derive(Serialize)]
struct LmSizeStatus {
    d0_size: usize,
    status: String,
    seeds: Vec<SeedStatus>,
}

/// The augmentation study: per seed-set size, train all seeds on one fixed
/// seed set, select the best three models by metric sum, augment with their
/// generated sentences (deduplicated, novel only), and compare perplexities
/// against a disjoint real-sentence reference.
pub fn run_lm_eval(config: &ExperimentConfig) -> Result<PathBuf> {
    let ctx = prepare_context(config)?;
    eprintln!(
        "data source: {} (oracle test accuracy {:.4})",
        ctx.data.source, ctx.oracle_test_accuracy
    );
    run_lm_eval_with(&ctx, config)
}

/// The augmentation study against an already prepared context.
pub fn run_lm_eval_with(ctx: &PipelineContext, config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.output_dir.join("lm-eval");
    ensure_dir(&dir)?;
    let test_pool: Vec<Pattern> = if ctx.data.test.len() > LM_TEST_POOL {
        subsample(&ctx.data.test, LM_TEST_POOL, 0, true)?.patterns
    } else {
        ctx.data.test.patterns.clone()
    };

    let mut size_statuses: Vec<LmSizeStatus> = Vec::new();
    let mut results: Vec<LmEvalSizeResult> = Vec::new();
    for &size in &config.lm_seed_sizes {
        eprintln!("seed set size {size}");
        let size_dir = dir.join(format!("size-{size}"));
        match run_lm_size(ctx, config, size, &size_dir, &test_pool) {
            Ok((result, seeds)) => {
                size_statuses.push(LmSizeStatus {
                    d0_size: size,
                    status: "ok".into(),
                    seeds,
                });
                results.push(result);
            }
            Err(e) => {
                eprintln!("size {size}: failed: {e}");
                size_statuses.push(LmSizeStatus {
                    d0_size: size,
                    status: format!("failed: {e}"),
                    seeds: Vec::new(),
                });
            }
        }
    }

    let csv_path = dir.join("augmentation.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::LanguageModel(format!("augmentation csv: {e}"));
    w.write_record([
        "d0_size",
        "ratio",
        "lm",
        "sentences",
        "distinct_sentences",
        "perplexity",
        "relative_loss_pct",
    ])
    .map_err(err)?;
    for result in &results {
        for row in &result.report.rows {
            w.write_record([
                result.d0_size.to_string(),
                config.augmentation_ratio.to_string(),
                row.name.clone(),
                row.sentences.to_string(),
                row.distinct_sentences.to_string(),
                row.perplexity.to_string(),
                row.relative_loss_pct.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::LanguageModel(format!("augmentation csv: {e}")))?;

    #[derive(Serialize)]
    struct LmManifest<'a> {
        command: &'static str,
        data_source: &'a str,
        oracle_test_accuracy: f64,
        config: &'a ExperimentConfig,
        sizes: &'a [LmSizeStatus],
    }
    write_json(
        &dir.join("manifest.json"),
        &LmManifest {
            command: "lm-eval",
            data_source: &ctx.data.source,
            oracle_test_accuracy: ctx.oracle_test_accuracy,
            config,
            sizes: &size_statuses,
        },
    )?;
    write_json(&dir.join("results.json"), &results)?;
    Ok(dir)
}

fn run_lm_size(
    ctx: &PipelineContext,
    config: &ExperimentConfig,
    size: usize,
    size_dir: &Path,
    test_pool: &[Pattern],
) -> Result<(LmEvalSizeResult, Vec<SeedStatus>)> {
    ensure_dir(size_dir)?;
    let lm_seed = config.seeds[0];
    let d0 = subsample(&ctx.data.train, size, lm_seed, true)?;
    let d0_set: HashSet<&Pattern> = d0.patterns.iter().collect();

    let mut statuses = Vec::new();
    let mut runs: Vec<SeedRun> = Vec::new();
    for &seed in &config.seeds {
        let seed_dir = size_dir.join(format!("seed-{seed}"));
        match run_seed(ctx, config, &d0, seed, &seed_dir) {
            Ok(run) => {
                statuses.push(SeedStatus {
                    seed,
                    status: "ok".into(),
                    dir: format!("seed-{seed}"),
                });
                runs.push(run);
            }
            Err(e) => statuses.push(SeedStatus {
                seed,
                status: format!("failed: {e}"),
                dir: format!("seed-{seed}"),
            }),
        }
    }
    if runs.is_empty() {
        return Err(Error::InvalidArgument(
            "every seed run failed; no models to select".into(),
        ));
    }
    // Best three models by metric sum, ties to the lower seed.
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| {
        runs[b]
            .metrics
            .score()
            .total_cmp(&runs[a].metrics.score())
            .then(runs[a].metrics.seed.cmp(&runs[b].metrics.seed))
    });
    order.truncate(3);
    let selected_seeds: Vec<u64> = order.iter().map(|&i| runs[i].metrics.seed).collect();

    let added_target = (size as f64 * config.augmentation_ratio).round() as usize;
    let mut added: Vec<Pattern> = Vec::new();
    let mut seen: HashSet<&Pattern> = HashSet::new();
    for &i in &order {
        for patterns in runs[i].generated.values() {
            for p in patterns {
                if added.len() == added_target {
                    break;
                }
                if !d0_set.contains(p) && seen.insert(p) {
                    added.push(p.clone());
                }
            }
        }
    }
    let mut d_aug = d0.patterns.clone();
    d_aug.extend(added.iter().cloned());

    // Reference arm: distinct real sentences outside the seed set, drawn
    // seeded.
    let mut candidates: Vec<&Pattern> = ctx
        .data
        .train
        .patterns
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|p| !d0_set.contains(*p))
        .collect();
    if candidates.len() < added_target {
        return Err(Error::InvalidArgument(format!(
            "reference arm needs {added_target} real sentences outside the seed set, only {} available",
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(lm_seed ^ REFERENCE_DRAW_SALT);
    candidates.shuffle(&mut rng);
    let mut d_ref = d0.patterns.clone();
    d_ref.extend(candidates[..added_target].iter().map(|p| (*p).clone()));

    let report = augmentation_report(
        &d0.patterns,
        &d_aug,
        &d_ref,
        test_pool,
        DEFAULT_ORDER,
        DEFAULT_DISCOUNT,
    )?;
    let all_generated: Vec<&Pattern> = order
        .iter()
        .flat_map(|&i| runs[i].generated.values().flatten())
        .collect();
    let occurrences = occurrence_rows(&all_generated, &d0, &ctx.data.train, 20);
    let occ_path = size_dir.join("occurrences.csv");
    let occ_file = fs::File::create(&occ_path).map_err(|e| Error::io(&occ_path, e))?;
    let mut w = csv::Writer::from_writer(occ_file);
    let err = |e: csv::Error| Error::Dataset(format!("occurrence csv: {e}"));
    w.write_record(["pattern", "generated_count", "seed_set_count", "corpus_count"])
        .map_err(err)?;
    for row in &occurrences {
        w.write_record([
            row.pattern.clone(),
            row.generated_count.to_string(),
            row.seed_set_count.to_string(),
            row.corpus_count.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Dataset(format!("occurrence csv: {e}")))?;

    let result = LmEvalSizeResult {
        d0_size: size,
        selected_seeds,
        added_sentences: added.len(),
        added_target,
        report,
    };
    write_json(&size_dir.join("augmentation.json"), &result)?;
    Ok((result, statuses))
}

/// Reservoir similarity audit: one row per reservoir sentence with its best
/// centroid cosine against the first seed draw, plus threshold coverage.
pub fn run_calibrate_beta(config: &ExperimentConfig) -> Result<PathBuf> {
    let ctx = prepare_context(config)?;
    eprintln!(
        "data source: {} (oracle test accuracy {:.4})",
        ctx.data.source, ctx.oracle_test_accuracy
    );
    let dir = config.output_dir.join("calibrate-beta");
    ensure_dir(&dir)?;
    let d0 = subsample(&ctx.data.train, config.n_seed_sentences, config.seeds[0], true)?;
    let centroids = intent_centroids(&d0, &ctx.table);
    let cosines = max_centroid_cosines(&ctx.data.reservoir, &centroids, &ctx.table);

    let csv_path = dir.join("calibration.csv");
    let file = fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Dataset(format!("calibration csv: {e}"));
    w.write_record(["utterance_id", "intent", "max_cosine"]).map_err(err)?;
    for (i, (utt, cos)) in ctx.data.reservoir.utterances.iter().zip(&cosines).enumerate() {
        w.write_record([
            i.to_string(),
            utt.intent.clone(),
            cos.map(|c| c.to_string()).unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Dataset(format!("calibration csv: {e}")))?;

    let thresholds = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95];
    #[derive(Serialize)]
    struct Coverage {
        beta: f64,
        selected: usize,
    }
    #[derive(Serialize)]
    struct CalibrationSummary<'a> {
        config: &'a ExperimentConfig,
        reservoir_sentences: usize,
        coverage: Vec<Coverage>,
    }
    let coverage = thresholds
        .iter()
        .map(|&beta| Coverage {
            beta,
            selected: cosines
                .iter()
                .filter(|c| c.is_some_and(|v| v > beta))
                .count(),
        })
        .collect();
    write_json(
        &dir.join("calibration_summary.json"),
        &CalibrationSummary {
            config,
            reservoir_sentences: ctx.data.reservoir.len(),
            coverage,
        },
    )?;
    Ok(dir)
}
