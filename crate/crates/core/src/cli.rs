//! Command-line interface. Options resolve as defaults < config file <
//! QUERYGEN_DATA_ROOT < flags; the resolved configuration lands in every run
//! manifest.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Result;
use crate::experiment::{
    run_calibrate_beta, run_lm_eval, run_pipeline, run_sweep, ExperimentConfig, MixtureKind,
    SweepParameter,
};
use crate::synth::{write_corpus, SynthConfig};

#[derive(Parser)]
#[command(
    name = "querygen",
    version,
    about = "Conditional generation of intent-labelled queries from small seed sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and evaluate its generated queries.
    Pipeline(RunArgs),
    /// Repeat the pipeline across parameter values and tabulate the curves.
    Sweep(SweepArgs),
    /// Measure how generated sentences shift language-model perplexity.
    LmEval(RunArgs),
    /// Audit reservoir similarity scores to pick a selection threshold.
    CalibrateBeta(RunArgs),
    /// Write the bundled synthetic corpus to disk as train/test/reservoir
    /// splits.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train/, test/, and reservoir/ splits.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Word-vector text file.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated experiment seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Supervision weight of the catch-all class.
    #[arg(long)]
    alpha: Option<f64>,
    /// Cosine threshold for reservoir selection.
    #[arg(long)]
    beta: Option<f64>,
    /// Labelled seed sentences per run.
    #[arg(long)]
    d0_size: Option<usize>,
    /// Reservoir sentences mixed into training.
    #[arg(long)]
    reservoir_size: Option<usize>,
    /// How reservoir sentences are labelled.
    #[arg(long, value_enum)]
    mixture: Option<MixtureKind>,
    /// Generated sentences per seed.
    #[arg(long)]
    generate: Option<usize>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Added sentences as a fraction of the seed set (lm-eval).
    #[arg(long)]
    ratio: Option<f64>,
    /// Comma-separated seed-set sizes (lm-eval).
    #[arg(long, value_delimiter = ',')]
    lm_sizes: Option<Vec<usize>>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load_toml(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.data_root {
            config.data_root = Some(v.clone());
        }
        if let Some(v) = &self.embeddings {
            config.embeddings_path = Some(v.clone());
        }
        if let Some(v) = &self.output_dir {
            config.output_dir = v.clone();
        }
        if let Some(v) = &self.seeds {
            config.seeds = v.clone();
        }
        if let Some(v) = self.alpha {
            config.alpha = v;
        }
        if let Some(v) = self.beta {
            config.beta = v;
        }
        if let Some(v) = self.d0_size {
            config.n_seed_sentences = v;
        }
        if let Some(v) = self.reservoir_size {
            config.n_reservoir_sentences = v;
        }
        if let Some(v) = self.mixture {
            config.mixture = v;
        }
        if let Some(v) = self.generate {
            config.n_generate = v;
        }
        if let Some(v) = self.epochs {
            config.cvae.epochs = v;
        }
        if let Some(v) = self.ratio {
            config.augmentation_ratio = v;
        }
        if let Some(v) = &self.lm_sizes {
            config.lm_seed_sizes = v.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Which knob to sweep.
    #[arg(long, value_enum)]
    parameter: SweepParameter,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Destination directory for the train/, test/, and reservoir/ splits.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    train_per_intent: usize,
    #[arg(long, default_value_t = 100)]
    test_per_intent: usize,
    #[arg(long, default_value_t = 250)]
    reservoir_per_intent: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(args) => {
            let dir = run_pipeline(&args.resolve()?)?;
            println!("{}", dir.display());
        }
        Command::Sweep(args) => {
            let dir = run_sweep(&args.run.resolve()?, args.parameter, &args.values)?;
            println!("{}", dir.display());
        }
        Command::LmEval(args) => {
            let dir = run_lm_eval(&args.resolve()?)?;
            println!("{}", dir.display());
        }
        Command::CalibrateBeta(args) => {
            let dir = run_calibrate_beta(&args.resolve()?)?;
            println!("{}", dir.display());
        }
        Command::GenData(args) => {
            write_corpus(
                &args.dir,
                &SynthConfig {
                    train_per_intent: args.train_per_intent,
                    test_per_intent: args.test_per_intent,
                    reservoir_per_intent: args.reservoir_per_intent,
                    seed: args.seed,
                },
            )?;
            println!("{}", args.dir.display());
        }
    }
    Ok(())
}

/// Entry point for the binary.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
