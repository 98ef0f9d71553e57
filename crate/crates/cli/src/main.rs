//! `ontoembed`: train, average, evaluate and apply ontology-grounded text
//! encoders.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or failed
//! precondition, 64 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_IO: u8 = 1;
pub const EXIT_DOMAIN: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "ontoembed", version, about = "Ontology-grounded text embeddings")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic demo fixtures.
    Synth(SynthArgs),
    /// Write a freshly initialized encoder checkpoint.
    Init(InitArgs),
    /// Build the contrastive training corpus from an ontology.
    Verbalize(VerbalizeArgs),
    /// Train one phase.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Average several checkpoints into one.
    Soup(SoupArgs),
    /// Score a model on a benchmark file.
    Eval(EvalArgs),
    /// Embed one text per input line.
    Embed(EmbedArgs),
    /// Run every phase end to end on a fixture directory.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2023)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Overrides `init_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct OntologyArgs {
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub glossary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerbalizeArgs {
    #[command(flatten)]
    pub ontology: OntologyArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Templated descriptions sampled per concept.
    #[arg(long, default_value_t = 2)]
    pub per_concept: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainCommon {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum TrainCommand {
    /// Names against their descriptions with InfoNCE.
    Contrastive {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        ontology: OntologyArgs,
        #[command(flatten)]
        common: TrainCommon,
    },
    /// Cosine regression on an STS file.
    Sts {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: TrainCommon,
    },
    /// Regress a pre-contrastive model onto a teacher's PCA-reduced concept embeddings.
    SelfDistill {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        ontology: OntologyArgs,
        #[arg(long, default_value_t = 64)]
        target_dim: usize,
        #[command(flatten)]
        common: TrainCommon,
    },
    /// Train a fresh student to map texts and translations onto a teacher.
    Xlingual {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Init seed of the student (defaults to the training seed).
        #[arg(long)]
        student_seed: Option<u64>,
        #[command(flatten)]
        common: TrainCommon,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SoupStrategy {
    Uniform,
    Greedy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SoupMetric {
    Pearson,
    Spearman,
    #[value(name = "nel-top1")]
    NelTop1,
}

#[derive(Args, Debug)]
pub struct SoupArgs {
    /// Candidate checkpoints.
    #[arg(long, num_args = 1.., conflicts_with = "manifest")]
    pub models: Vec<PathBuf>,
    /// TSV of `checkpoint \t validation_score [\t label]`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Validation data for greedy selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SoupMetric::Pearson)]
    pub metric: SoupMetric,
    #[arg(long, value_enum, default_value_t = SoupStrategy::Greedy)]
    pub strategy: SoupStrategy,
    #[command(flatten)]
    pub ontology: OntologyArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Benchmark {
    Sts,
    Bcr,
    Nel,
    Nli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Pooling {
    Max,
    Mean,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub benchmark: Benchmark,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub ontology: OntologyArgs,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub topk: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Pooling::Max)]
    pub pooling: Pooling,
    /// Also write the report lines here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
