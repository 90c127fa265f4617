//! `mtalk`: corpus generation, two-stage training, generation, evaluation
//! and the latency benchmark.

mod bench;
mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gesture_core::motion::Part;
use gesture_core::Error;

#[derive(Parser, Debug)]
#[command(name = "mtalk", version, about = "Speech-driven gesture synthesis with selective state-space scans")]
struct Cli {
    /// Seed for every stochastic step. Falls back to MTALK_SEED, then to
    /// the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired corpus.
    GenCorpus(GenCorpusArgs),
    /// Train the stage-1 VQ-VAE of one body part.
    TrainVqvae(TrainVqArgs),
    /// Train the stage-2 generator on frozen stage-1 models.
    TrainGen(TrainGenArgs),
    /// Generate motion for one input or for a whole corpus split.
    Generate(GenerateArgs),
    /// Score generated motion against a corpus split.
    Evaluate(EvaluateArgs),
    /// Per-module latency and scan-vs-attention scaling.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenCorpusArgs {
    /// Corpus spec (key=value); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainVqArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub part: Part,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; receives `<part>.mtvq` and its logs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainGenArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory holding the four `<part>.mtvq` checkpoints.
    #[arg(long)]
    pub vq_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Directory with `generator.mtg2` and the four stage-1 checkpoints.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, requires_all = ["tokens"], conflicts_with = "corpus")]
    pub audio: Option<PathBuf>,
    #[arg(long, requires = "audio")]
    pub tokens: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub speaker: usize,
    /// Generate for every clip of `--split` in this corpus instead.
    #[arg(long, required_unless_present = "audio")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Motion file for a single input, directory for a corpus split.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of `clip_<id>.mtmo` files (a corpus directory also works).
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Extractor settings (key=value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON report path; the CSV and resolved config go beside it.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Trained models for the per-module table; omitted, only scaling runs.
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096,8192")]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    /// Seconds of speech per generation call.
    #[arg(long, default_value_t = 8.0)]
    pub seconds: f64,
    #[arg(long)]
    pub report: PathBuf,
}

/// 2 usage, 3 data, 4 checkpoint.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Checkpoint(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let seed = match report::resolve_seed(cli.seed) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mtalk: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let res = match &cli.cmd {
        Command::GenCorpus(a) => commands::gen_corpus(a, seed),
        Command::TrainVqvae(a) => commands::train_vqvae(a, seed),
        Command::TrainGen(a) => commands::train_gen(a, seed),
        Command::Generate(a) => commands::generate(a),
        Command::Evaluate(a) => commands::evaluate(a, seed),
        Command::Bench(a) => bench::run(a, seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtalk: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
