mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::{resolve, DecomposerKind, Overrides, RunConfig, SEED_ENV};

/// Listenable explanations for black-box audio classifiers.
#[derive(Parser)]
#[command(name = "audexplain", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain whole input files and render the top components as audio.
    Explain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        decompose: DecomposeArgs,
        #[command(flatten)]
        explain: ExplainArgs,
        /// Render the k most supportive components (0 disables rendering).
        #[arg(long, value_name = "K")]
        render_top: Option<usize>,
        /// Input WAV files or stem directories.
        inputs: Vec<PathBuf>,
    },
    /// Explain every fixed-length snippet of every input and export tables.
    BatchExplain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        predict: PredictArgs,
        #[command(flatten)]
        decompose: DecomposeArgs,
        #[command(flatten)]
        explain: ExplainArgs,
        /// Snippet length in seconds; a trailing partial snippet is dropped.
        #[arg(long, value_name = "SECONDS")]
        snippet_seconds: Option<f64>,
        /// Input files, stem directories or directories containing either.
        inputs: Vec<PathBuf>,
    },
    /// Run the synthetic confounder experiment over several seeded runs.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        explain: ExplainArgs,
        /// Number of runs.
        #[arg(long)]
        runs: Option<usize>,
        /// `hpss` adds an HPSS column next to the oracle decomposition.
        #[arg(long, value_enum)]
        decomposer: Option<DecomposerKind>,
    },
    /// Explain a trained model and randomized copies on the swapped test set.
    Sanity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        explain: ExplainArgs,
        /// Number of randomized models (at least 2).
        #[arg(long)]
        models: Option<usize>,
        /// Decomposition of the test snippets: oracle or hpss.
        #[arg(long, value_enum)]
        decomposer: Option<DecomposerKind>,
    },
    /// Write the synthetic confounded dataset to the output directory.
    SynthData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the built-in classifier on a dataset written by synth-data.
    TrainBuiltin {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        dataset: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Configuration file (TOML or JSON); flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Random seed; defaults to $AUDEXPLAIN_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    /// `builtin:<model file>` or `external:<command>`.
    #[arg(long, value_name = "SPEC")]
    predictor: Option<String>,
    /// Comma-separated labels requested from an external predictor.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    /// External predictor timeout in seconds.
    #[arg(long, value_name = "SECONDS")]
    timeout: Option<f64>,
    /// Label to explain; defaults to the predicted label.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Source decomposition.
    #[arg(long, value_enum)]
    decomposer: Option<DecomposerKind>,
    /// Time segments per source.
    #[arg(long)]
    tau: Option<usize>,
    /// Expected number of sources; an input yielding another count fails.
    #[arg(long)]
    sources: Option<usize>,
}

#[derive(Args)]
struct ExplainArgs {
    /// Maximum neighborhood size.
    #[arg(long)]
    n_max: Option<usize>,
    /// Proximity kernel: auto, uniform or exponential.
    #[arg(long)]
    kernel: Option<String>,
    /// Width of the exponential kernel.
    #[arg(long)]
    kernel_width: Option<f64>,
    /// Ridge penalty of the surrogate.
    #[arg(long = "lambda", value_name = "LAMBDA")]
    ridge_lambda: Option<f64>,
    /// Keep the decomposition residual in every perturbed remix.
    #[arg(long)]
    include_residual: bool,
}

impl Common {
    fn apply(&self, o: &mut Overrides) {
        o.seed = self.seed;
        o.out = self.out.clone();
        o.jobs = self.jobs;
    }
}

impl PredictArgs {
    fn apply(&self, o: &mut Overrides) {
        o.predictor = self.predictor.clone();
        o.labels = self.labels.clone();
        o.timeout_secs = self.timeout;
        o.target = self.target.clone();
    }
}

impl DecomposeArgs {
    fn apply(&self, o: &mut Overrides) {
        o.decomposer = self.decomposer;
        o.tau = self.tau;
        o.sources = self.sources;
    }
}

impl ExplainArgs {
    fn apply(&self, o: &mut Overrides) {
        o.n_max = self.n_max;
        o.kernel = self.kernel.clone();
        o.kernel_width = self.kernel_width;
        o.ridge_lambda = self.ridge_lambda;
        o.include_residual = self.include_residual;
    }
}

type Runner = fn(&RunConfig) -> Result<(), Failure>;

fn plan(command: &Command) -> (&Common, Overrides, Runner) {
    let mut o = Overrides::default();
    match command {
        Command::Explain {
            common,
            predict,
            decompose,
            explain,
            render_top,
            inputs,
        } => {
            predict.apply(&mut o);
            decompose.apply(&mut o);
            explain.apply(&mut o);
            o.render_top = *render_top;
            o.inputs = inputs.clone();
            (common, o, commands::cmd_explain)
        }
        Command::BatchExplain {
            common,
            predict,
            decompose,
            explain,
            snippet_seconds,
            inputs,
        } => {
            predict.apply(&mut o);
            decompose.apply(&mut o);
            explain.apply(&mut o);
            o.snippet_seconds = *snippet_seconds;
            o.inputs = inputs.clone();
            (common, o, commands::cmd_batch_explain)
        }
        Command::Experiment {
            common,
            explain,
            runs,
            decomposer,
        } => {
            explain.apply(&mut o);
            o.runs = *runs;
            o.decomposer = *decomposer;
            (common, o, commands::cmd_experiment)
        }
        Command::Sanity {
            common,
            explain,
            models,
            decomposer,
        } => {
            explain.apply(&mut o);
            o.models = *models;
            o.decomposer = *decomposer;
            (common, o, commands::cmd_sanity)
        }
        Command::SynthData { common } => (common, o, commands::cmd_synth_data),
        Command::TrainBuiltin { common, dataset } => {
            o.dataset = dataset.clone();
            (common, o, commands::cmd_train_builtin)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, mut overrides, runner) = plan(&cli.command);
    common.apply(&mut overrides);
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = resolve(common.config.as_deref(), env_seed.as_deref(), &overrides).map_err(Failure::Config)?;
    match cfg.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Runtime(e.to_string()))?
            .install(|| runner(&cfg)),
        None => runner(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
