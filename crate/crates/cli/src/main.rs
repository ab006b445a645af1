//! Command-line entry point for the styleveil pipeline.
//!
//! Exit codes: 0 success, 1 usage/validation error, 2 training-health
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use styleveil::pipeline::{self, BaselineKind, PipelineConfig, SplitMode};

#[derive(Parser)]
#[command(
    name = "styleveil",
    about = "Adversarial authorship obfuscation: data preparation, training, rewriting, evaluation",
    version
)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Split protocol: closed or open.
    #[arg(long, global = true)]
    mode: Option<String>,

    /// Extra config override, repeatable: --set key=value.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-author corpus tree.
    SynthCorpus {
        #[arg(long)]
        authors: usize,
        #[arg(long)]
        sentences: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest a corpus tree, mask entities, split into train/validation/test.
    PrepareData {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the subword vocabulary and static embeddings.
    BuildVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Autoencoding pretraining of the generator only.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full training: pretraining phases plus the adversarial loop.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the latest checkpoint in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Rewrite sentences, one per input line.
    Anonymize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the trained system (and optionally the baselines).
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        with_baselines: bool,
    },
    /// Run one baseline over the test split.
    Baseline {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn build_config(common: &Common) -> styleveil::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = &common.mode {
        cfg.mode = SplitMode::parse(mode)?;
    }
    for pair in &common.set {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            styleveil::Error::config(format!("--set expects key=value, got {pair:?}"))
        })?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> styleveil::Result<()> {
    let cfg = build_config(&cli.common)?;
    match cli.command {
        Command::SynthCorpus { authors, sentences, out } => {
            let corpus = pipeline::cmd_synth_corpus(authors, sentences, &cfg, &out)?;
            println!(
                "wrote {} authors, {} sentences to {}",
                corpus.authors.len(),
                corpus.sentence_count(),
                out.display()
            );
        }
        Command::PrepareData { corpus, annotations, out } => {
            pipeline::cmd_prepare_data(&corpus, annotations.as_deref(), &cfg, &out)?;
            println!("prepared splits in {}", out.display());
        }
        Command::BuildVocab { data, out } => {
            pipeline::cmd_build_vocab(&data, &cfg, &out)?;
            println!("wrote vocab.txt and embeddings.txt to {}", out.display());
        }
        Command::Pretrain { data, vocab, out } => {
            pipeline::cmd_pretrain(&data, &vocab, &cfg, &out)?;
        }
        Command::Train { data, vocab, out, resume } => {
            pipeline::cmd_train(&data, &vocab, &cfg, &out, resume)?;
        }
        Command::Anonymize { model, vocab, input, out } => {
            let n = pipeline::cmd_anonymize(&model, &vocab, &input, &out, &cfg)?;
            println!("anonymized {n} sentences into {}", out.display());
        }
        Command::Evaluate { model, data, vocab, report, with_baselines } => {
            let artifacts =
                pipeline::cmd_evaluate(&model, &data, &vocab, &cfg, &report, with_baselines)?;
            print!("{}", artifacts.report.render());
            println!("report written to {}", artifacts.report_path.display());
        }
        Command::Baseline { kind, data, vocab, out } => {
            let kind = BaselineKind::parse(&kind)?;
            pipeline::cmd_baseline(kind, &data, &vocab, &cfg, &out)?;
            println!("baseline output written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
