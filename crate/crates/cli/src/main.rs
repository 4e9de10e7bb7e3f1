//! `emovc`: corpus generation, training, conversion, evaluation and plots.

mod commands;
mod plot;
mod rundir;

use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "emovc",
    version,
    about = "Speaker and emotion style conversion on synthetic mel-like features"
)]
#[command(after_help = "Run names resolve under $EVC_RUN_ROOT (default `runs`); absolute paths are used as given.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    GenCorpus(GenCorpusArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Convert features with a trained model.
    Convert(ConvertArgs),
    /// Score conversions with the emotion probe and speaker embedder.
    Evaluate(EvaluateArgs),
    /// Plot every logged metric against the step.
    Report(ReportArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenCorpusArgs {
    /// Comma-separated speaker identifiers.
    #[arg(long, value_delimiter = ',', default_value = "spk0,spk1,spk2")]
    pub speakers: Vec<String>,
    /// Comma-separated emotion identifiers.
    #[arg(long, value_delimiter = ',', default_value = "neutral,happy,sad")]
    pub emotions: Vec<String>,
    /// Speakers recorded with the neutral emotion only.
    #[arg(long, value_delimiter = ',')]
    pub neutral_only: Vec<String>,
    #[arg(long, default_value = "neutral")]
    pub neutral_emotion: String,
    /// Utterances per seen (speaker, emotion) pair.
    #[arg(long, default_value_t = 20)]
    pub per_cell: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of every cell assigned to the train split.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    /// Number of feature bins.
    #[arg(long)]
    pub n_bins: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Replace an existing corpus in `--out-dir`.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Smoke,
    Standard,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Run name or path.
    #[arg(long)]
    pub run: PathBuf,
    /// Corpus directory; defaults to `corpus` from the configuration.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// TOML file with flat dotted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// full, no-vdp, no-fpm, no-anneal or no-f0norm.
    #[arg(long)]
    pub ablation: Option<String>,
    /// `dotted.key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub total_epochs: Option<u64>,
    #[arg(long)]
    pub classifier_start_epoch: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps_per_epoch: Option<u64>,
    #[arg(long)]
    pub crop_frames: Option<usize>,
    #[arg(long)]
    pub anneal_start_epoch: Option<f64>,
    #[arg(long)]
    pub anneal_end_epoch: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Stop after this many steps, checkpointing first.
    #[arg(long)]
    pub stop_at: Option<u64>,
    /// Progress line every this many steps.
    #[arg(long)]
    pub log_every: Option<u64>,
    /// Continue the run from its last checkpoint with its saved configuration.
    #[arg(long, conflicts_with_all = ["config", "preset", "ablation", "set", "force"])]
    pub resume: bool,
    /// Discard previous training output in the run directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mapped,
    Referenced,
}

#[derive(clap::Args, Debug)]
#[command(group(ArgGroup::new("model").required(true).args(["run", "checkpoint"])))]
pub struct ConvertArgs {
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint file; defaults to the run's last checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Target speaker identifier.
    #[arg(long, required_unless_present = "sweep")]
    pub speaker: Option<String>,
    /// Target emotion identifier.
    #[arg(long, required_unless_present = "sweep")]
    pub emotion: Option<String>,
    #[arg(long, value_enum, default_value = "mapped")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Source feature file.
    #[arg(long, required_unless_present = "sweep")]
    pub input: Option<PathBuf>,
    /// Output feature file.
    #[arg(long, required_unless_present = "sweep")]
    pub out: Option<PathBuf>,
    /// Speaker reference feature file for `--mode referenced`.
    #[arg(long)]
    pub ref_speaker: Option<PathBuf>,
    /// Emotion reference feature file for `--mode referenced`.
    #[arg(long)]
    pub ref_emotion: Option<PathBuf>,
    /// Corpus for references or for `--sweep`; defaults to the run's corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Convert the whole test split to every evaluated target.
    #[arg(long, conflicts_with_all = ["speaker", "emotion", "input", "out"])]
    pub sweep: bool,
    /// Where `--sweep` writes; defaults to `<run>/converted`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).multiple(true).args(["run", "converted"])))]
pub struct EvaluateArgs {
    /// Run to evaluate; repeat to compare runs side by side.
    #[arg(long)]
    pub run: Vec<PathBuf>,
    /// Directory written by `convert --sweep`, scored instead of converting.
    #[arg(long, conflicts_with = "run")]
    pub converted: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to `<first run>/eval`, or `<converted>/eval`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Defaults to `<run>/plots`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(a),
        Command::Train(a) => commands::train(a),
        Command::Convert(a) => commands::convert(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let gate = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<emovc::Error>(), Some(emovc::Error::Gate(_))));
            if gate {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
