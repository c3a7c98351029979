//! `domlm`: command-line driver for corpus generation, preprocessing,
//! pre-training, fine-tuning, prediction and evaluation.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | internal error |
//! | 2 | usage or configuration error |
//! | 3 | missing file or I/O failure |
//! | 4 | malformed input data or label/prediction schema mismatch |
//! | 5 | training diverged |

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "domlm",
    version,
    about = "Structure-aware language modelling over HTML DOM trees"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Attr,
    Openie,
    Qa,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Attr => "attr",
            Task::Openie => "openie",
            Task::Qa => "qa",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a templated synthetic corpus with gold labels.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a vocabulary from a corpus directory or manifest.
    BuildVocab {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        min_freq: Option<usize>,
        /// Only use pages of this split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut pages into windows and write linearized records (JSON Lines).
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Token budget per window.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Corrupt linearized records for masked language modelling.
    Mask {
        #[arg(long = "in")]
        input: PathBuf,
        /// Vocabulary the records were built with; bounds random replacements.
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        node_share: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pre-train the encoder on masked records.
    Pretrain {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Draw fresh masks every epoch instead of reusing the stored ones.
        #[arg(long)]
        remask: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a task head (and the encoder) from a checkpoint.
    Finetune {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "train")]
        train_split: String,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        dev_split: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Keep encoder weights fixed.
        #[arg(long)]
        freeze_encoder: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a fine-tuned checkpoint over pages.
    Predict {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against a label file.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Manifest giving each document's domain and split.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the windows of one page with their position features.
    InspectWindows {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        /// One JSON object per window instead of the token table.
        #[arg(long)]
        json: bool,
    },
    /// Print masked records token by token.
    MaskPreview {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Record to show (default: first).
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        node_share: Option<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.global.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| commands::usage(format!("cannot size worker pool: {e}")))?;
    }
    let g = &cli.global;
    match cli.command {
        Command::GenSynthetic { out } => commands::gen_synthetic(g, &out),
        Command::BuildVocab {
            input,
            min_freq,
            split,
            out,
        } => commands::build_vocab(g, &input, min_freq, split.as_deref(), &out),
        Command::Preprocess {
            input,
            vocab,
            window,
            stride,
            split,
            out,
        } => commands::preprocess(g, &input, &vocab, window, stride, split.as_deref(), &out),
        Command::Mask {
            input,
            vocab,
            rate,
            node_share,
            out,
        } => commands::mask(g, &input, &vocab, rate, node_share, &out),
        Command::Pretrain {
            input,
            vocab,
            steps,
            lr,
            remask,
            out,
        } => commands::pretrain(g, &input, &vocab, steps, lr, remask, &out),
        Command::Finetune {
            task,
            ckpt,
            train,
            train_split,
            dev,
            dev_split,
            steps,
            lr,
            freeze_encoder,
            out,
        } => commands::finetune(
            g,
            commands::FinetuneArgs {
                task,
                ckpt: &ckpt,
                train: &train,
                train_split: &train_split,
                dev: dev.as_deref(),
                dev_split: &dev_split,
                steps,
                lr,
                freeze_encoder,
                out: &out,
            },
        ),
        Command::Predict {
            task,
            ckpt,
            input,
            split,
            out,
        } => commands::predict(g, task, &ckpt, &input, split.as_deref(), &out),
        Command::Eval {
            task,
            pred,
            gold,
            manifest,
            split,
            out,
        } => commands::eval(
            task,
            &pred,
            &gold,
            manifest.as_deref(),
            split.as_deref(),
            &out,
        ),
        Command::InspectWindows {
            input,
            vocab,
            doc,
            window,
            stride,
            json,
        } => commands::inspect_windows(g, &input, &vocab, &doc, window, stride, json),
        Command::MaskPreview {
            input,
            vocab,
            index,
            rate,
            node_share,
        } => commands::mask_preview(g, &input, &vocab, index, rate, node_share),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
