use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mesin::ehr::Split;
use mesin::harness::{self, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "mesin", version, about = "Medication recommendation from lab, diagnosis and medication histories")]
struct Cli {
    /// TOML run configuration; command-line flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent directory for run directories.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a planted synthetic cohort, or convert an external record file.
    Generate {
        #[arg(long)]
        patients: Option<usize>,
        #[arg(long)]
        ingest: Option<PathBuf>,
    },
    /// Train one variant; writes best and final checkpoints and the epoch trace.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint and dump per-visit attention.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
    },
    /// Train several variants over shared seeds and tabulate mean ± sd.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Turn an evaluation directory into plot-ready CSV tables.
    Report {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

impl ModelArgs {
    fn fill(self, o: &mut Overrides) {
        o.cohort = self.cohort;
        o.variant = self.variant;
        o.epochs = self.epochs;
        o.learning_rate = self.lr;
        o.dropout = self.dropout;
        o.batch_size = self.batch_size;
    }
}

fn run(cli: Cli) -> mesin::error::Result<PathBuf> {
    let mut o = Overrides {
        seed: cli.seed,
        out: cli.out,
        ..Default::default()
    };
    let verb: fn(&RunConfig) -> mesin::error::Result<PathBuf> = match cli.command {
        Command::Generate { patients, ingest } => {
            o.patients = patients;
            o.ingest = ingest;
            harness::cmd_generate
        }
        Command::Train { model, resume } => {
            model.fill(&mut o);
            o.resume = resume;
            harness::cmd_train
        }
        Command::Evaluate { model, checkpoint, split } => {
            model.fill(&mut o);
            o.checkpoint = checkpoint;
            o.split = split.map(Split::from);
            harness::cmd_evaluate
        }
        Command::Ablate { model, variants, seeds } => {
            model.fill(&mut o);
            o.variants = variants;
            o.seeds = seeds;
            harness::cmd_ablate
        }
        Command::Report { input } => {
            o.input = input;
            harness::cmd_report
        }
    };
    let cfg = RunConfig::resolve(cli.config.as_deref(), &o)?;
    verb(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
