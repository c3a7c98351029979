//! Subcommand implementations and error classification.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use domlm::corpus::{
    generate_synthetic, load_dataset, read_jsonl, write_corpus, write_jsonl, AttrLabel,
    CorpusError, Dataset, Labels, Manifest, Page, PairLabel, QaLabel, Schema, MANIFEST_FILE,
};
use domlm::dom::DomError;
use domlm::encoder::{CheckpointError, EncoderError, Params};
use domlm::experiment::{
    all_windows, attr_class_map, attr_training_set, eval_attr, eval_openie, eval_qa,
    openie_training_set, predict_attr_all, predict_openie_all, predict_qa_all, qa_training_set,
    window_pages, AttrPrediction, EvalReport, OpeniePrediction, QaPrediction, RunConfig, RunError,
};
use domlm::heads::{HeadConfig, HeadParams};
use domlm::linearizer::LinearRecord;
use domlm::masker::{mask_window, MaskAction, MaskedRecord, MaskedSequence};
use domlm::pipeline::{preprocess_page, PipelineError};
use domlm::tokenizer::{Vocab, VocabError};
use domlm::train::{
    balanced_class_weights, finetune_attr, finetune_openie, finetune_qa, MaskSource, Model,
    StepLog, TrainError,
};
use domlm::windower::WindowError;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, RESOLVED_FILE};
use crate::{GlobalArgs, Task};

pub const MODEL_FILE: &str = "model.bin";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const META_FILE: &str = "meta.json";
pub const TRACE_FILE: &str = "trace.jsonl";

/// Errors raised by the command layer itself.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Schema(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Schema(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    CliError::Usage(msg.into()).into()
}

fn schema(msg: impl Into<String>) -> anyhow::Error {
    CliError::Schema(msg.into()).into()
}

const USAGE: u8 = 2;
const IO: u8 = 3;
const SCHEMA: u8 = 4;
const DIVERGED: u8 = 5;

fn window_code(e: &WindowError) -> u8 {
    match e {
        WindowError::InvalidStride { .. }
        | WindowError::InvalidBudget
        | WindowError::BudgetTooSmall { .. } => USAGE,
        WindowError::CountMismatch { .. } => 1,
    }
}

fn corpus_code(e: &CorpusError) -> u8 {
    match e {
        CorpusError::MissingFile(_) | CorpusError::Io { .. } => IO,
        CorpusError::Dom {
            source: DomError::Io { .. },
            ..
        } => IO,
        CorpusError::ConfigInvalid(_) => USAGE,
        _ => SCHEMA,
    }
}

fn train_code(e: &TrainError) -> u8 {
    match e {
        TrainError::Encoder(EncoderError::DivergenceDetected { .. }) => DIVERGED,
        TrainError::Encoder(EncoderError::InvalidConfig(_)) | TrainError::MissingHeads => USAGE,
        TrainError::NoExamples => SCHEMA,
        _ => 1,
    }
}

fn pipeline_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Window(w) => window_code(w),
        PipelineError::Linearize(_) => USAGE,
        _ => 1,
    }
}

/// Exit code for an error, from the first recognised cause in its chain.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let code = if let Some(e) = cause.downcast_ref::<CliError>() {
            Some(match e {
                CliError::Usage(_) => USAGE,
                CliError::Schema(_) => SCHEMA,
            })
        } else if let Some(e) = cause.downcast_ref::<RunError>() {
            Some(match e {
                RunError::Corpus(c) => corpus_code(c),
                RunError::Pipeline(p) => pipeline_code(p),
                RunError::Train(t) => train_code(t),
                RunError::Config(_) => USAGE,
            })
        } else if let Some(e) = cause.downcast_ref::<CorpusError>() {
            Some(corpus_code(e))
        } else if let Some(e) = cause.downcast_ref::<TrainError>() {
            Some(train_code(e))
        } else if let Some(e) = cause.downcast_ref::<PipelineError>() {
            Some(pipeline_code(e))
        } else if let Some(e) = cause.downcast_ref::<WindowError>() {
            Some(window_code(e))
        } else if let Some(e) = cause.downcast_ref::<VocabError>() {
            Some(match e {
                VocabError::Io(_) => IO,
                VocabError::InvalidMinFreq => USAGE,
                _ => SCHEMA,
            })
        } else if let Some(e) = cause.downcast_ref::<CheckpointError>() {
            Some(if matches!(e, CheckpointError::Io(_)) {
                IO
            } else {
                SCHEMA
            })
        } else if cause.downcast_ref::<EncoderError>().is_some() {
            Some(USAGE)
        } else if cause.downcast_ref::<std::io::Error>().is_some() {
            Some(IO)
        } else if cause.downcast_ref::<serde_json::Error>().is_some() {
            Some(SCHEMA)
        } else {
            None
        };
        if let Some(c) = code {
            return c;
        }
    }
    1
}

// Shared helpers.

fn manifest_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(MANIFEST_FILE)
    } else {
        input.to_path_buf()
    }
}

fn load(input: &Path, cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = manifest_path(input);
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path).into());
    }
    Ok(load_dataset(&path, &cfg.clean)?)
}

fn select(ds: &Dataset, split: Option<&str>) -> Vec<Page> {
    ds.pages
        .iter()
        .filter(|p| split.is_none_or(|s| p.entry.split == s))
        .cloned()
        .collect()
}

fn load_vocab(path: &Path) -> anyhow::Result<Vocab> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()).into());
    }
    Ok(Vocab::load(path)?)
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn validated(cfg: RunConfig) -> anyhow::Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

/// Training metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    /// `mlm` for a pre-trained encoder, otherwise the fine-tuned task.
    task: String,
    steps: usize,
    initial_loss: Option<f64>,
    final_loss: Option<f64>,
    schema: Option<Schema>,
    parameters: usize,
}

fn save_checkpoint(
    dir: &Path,
    model: &Model,
    vocab: &Vocab,
    cfg: &RunConfig,
    meta: &Meta,
    trace: &[StepLog],
) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut buf = Vec::new();
    model.write_to(&mut buf)?;
    fs::write(dir.join(MODEL_FILE), buf)
        .with_context(|| format!("writing {}", dir.join(MODEL_FILE).display()))?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    write_json(&dir.join(META_FILE), meta)?;
    write_jsonl(&dir.join(TRACE_FILE), trace)?;
    config::write(cfg, &dir.join(RESOLVED_FILE))
}

fn load_checkpoint(dir: &Path) -> anyhow::Result<(Model, Vocab, Meta)> {
    let model_path = dir.join(MODEL_FILE);
    if !model_path.is_file() {
        return Err(CorpusError::MissingFile(model_path).into());
    }
    let bytes =
        fs::read(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let model = Model::read_from(bytes.as_slice())
        .with_context(|| format!("loading {}", model_path.display()))?;
    let vocab = load_vocab(&dir.join(VOCAB_FILE))?;
    let meta_path = dir.join(META_FILE);
    let meta: Meta = serde_json::from_str(
        &fs::read_to_string(&meta_path)
            .with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("parsing {}", meta_path.display()))?;
    if model.enc.cfg.vocab_size != vocab.len() {
        return Err(schema(format!(
            "checkpoint vocabulary has {} entries, encoder expects {}",
            vocab.len(),
            model.enc.cfg.vocab_size
        )));
    }
    Ok((model, vocab, meta))
}

fn print_step(s: &StepLog) {
    println!(
        "step {:>6}  loss {:.6}  lr {:.3e}  grad_norm {:.4}",
        s.step, s.loss, s.lr, s.grad_norm
    );
}

fn meta_for(task: &str, trace: &[StepLog], model: &Model, schema: Option<Schema>) -> Meta {
    let mut parameters = model.enc.num_parameters();
    if let Some(h) = &model.heads {
        parameters += h.tensors().iter().map(|(_, m)| m.data.len()).sum::<usize>();
    }
    Meta {
        task: task.to_string(),
        steps: trace.len(),
        initial_loss: trace.first().map(|s| s.loss),
        final_loss: trace.last().map(|s| s.loss),
        schema,
        parameters,
    }
}

// Subcommands.

pub fn gen_synthetic(g: &GlobalArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = config::resolve(g, None)?;
    let corpus = generate_synthetic(&cfg.synthetic)?;
    write_corpus(&corpus, out)?;
    config::write(&cfg, &out.join(RESOLVED_FILE))?;
    println!(
        "wrote {} pages, {} attribute labels, {} pairs, {} questions to {}",
        corpus.pages.len(),
        corpus.labels.attrs.len(),
        corpus.labels.pairs.len(),
        corpus.labels.qa.len(),
        out.display()
    );
    Ok(())
}

pub fn build_vocab(
    g: &GlobalArgs,
    input: &Path,
    min_freq: Option<usize>,
    split: Option<&str>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, None)?;
    if let Some(f) = min_freq {
        cfg.min_freq = f;
    }
    let ds = load(input, &cfg)?;
    let pages = select(&ds, split);
    let vocab = Vocab::build(pages.iter().map(|p| &p.tree), cfg.min_freq)?;
    create_parent(out)?;
    vocab.save(out)?;
    config::write(&cfg, &config::sidecar(out))?;
    println!(
        "vocabulary of {} tokens from {} pages",
        vocab.len(),
        pages.len()
    );
    Ok(())
}

pub fn preprocess(
    g: &GlobalArgs,
    input: &Path,
    vocab: &Path,
    window: Option<usize>,
    stride: Option<usize>,
    split: Option<&str>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, None)?;
    if let Some(m) = window {
        cfg.preprocess.window.max_tokens = m;
    }
    if let Some(s) = stride {
        cfg.preprocess.window.stride = s;
    }
    let cfg = validated(cfg)?;
    let vocab = load_vocab(vocab)?;
    let ds = load(input, &cfg)?;
    let pages = select(&ds, split);
    let windows = window_pages(&pages, &vocab, &cfg.preprocess)?;
    let records: Vec<LinearRecord> = all_windows(&windows)
        .iter()
        .map(|w| w.to_record())
        .collect();
    create_parent(out)?;
    write_jsonl(out, &records)?;
    config::write(&cfg, &config::sidecar(out))?;
    println!("{} windows from {} pages", records.len(), pages.len());
    Ok(())
}

pub fn mask(
    g: &GlobalArgs,
    input: &Path,
    vocab: &Path,
    rate: Option<f64>,
    node_share: Option<f64>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, None)?;
    if let Some(r) = rate {
        cfg.mask.rate = r;
    }
    if let Some(s) = node_share {
        cfg.mask.node_share = s;
    }
    let cfg = validated(cfg)?;
    let vocab = load_vocab(vocab)?;
    let records: Vec<LinearRecord> = read_jsonl(input)?;
    let masked = records
        .into_par_iter()
        .map(|r| mask_window(&r.into_sequence(), &cfg.mask, vocab.len()).map(|m| m.to_record()))
        .collect::<Result<Vec<MaskedRecord>, _>>()?;
    create_parent(out)?;
    write_jsonl(out, &masked)?;
    config::write(&cfg, &config::sidecar(out))?;
    let selected: usize = masked.iter().map(|m| m.actions.len()).sum();
    let total: usize = masked.iter().map(|m| m.labels.len()).sum();
    println!(
        "masked {selected} of {total} tokens in {} windows",
        masked.len()
    );
    Ok(())
}

pub fn pretrain(
    g: &GlobalArgs,
    input: &Path,
    vocab: &Path,
    steps: Option<usize>,
    lr: Option<f64>,
    remask: bool,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, None)?;
    if let Some(s) = steps {
        cfg.pretrain.total_steps = s;
    }
    if let Some(l) = lr {
        cfg.pretrain.lr = l;
    }
    let cfg = validated(cfg)?;
    let vocab = load_vocab(vocab)?;
    let masked: Vec<MaskedSequence> = read_jsonl::<MaskedRecord>(input)?
        .into_iter()
        .map(MaskedRecord::into_masked)
        .collect();
    if let Some(bad) = masked
        .iter()
        .flat_map(|m| m.masked_tokens.iter())
        .find(|&&t| t as usize >= vocab.len())
    {
        return Err(schema(format!(
            "token id {bad} is outside the vocabulary of {} entries",
            vocab.len()
        )));
    }
    let enc_cfg = cfg.encoder_config(&vocab);
    let mut model = Model::new(Params::init(&enc_cfg).map_err(TrainError::from)?, None);
    let seqs: Vec<_> = masked.iter().map(|m| m.seq.clone()).collect();
    let source = if remask {
        MaskSource::Dynamic {
            seqs: &seqs,
            cfg: cfg.mask.clone(),
            vocab_size: vocab.len(),
        }
    } else {
        MaskSource::Fixed(&masked)
    };
    let trace = domlm::train::pretrain(&mut model, source, &cfg.pretrain, print_step)?;
    let meta = meta_for("mlm", &trace, &model, None);
    save_checkpoint(out, &model, &vocab, &cfg, &meta, &trace)?;
    println!("saved checkpoint to {}", out.display());
    Ok(())
}

pub struct FinetuneArgs<'a> {
    pub task: Task,
    pub ckpt: &'a Path,
    pub train: &'a Path,
    pub train_split: &'a str,
    pub dev: Option<&'a Path>,
    pub dev_split: &'a str,
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub freeze_encoder: bool,
    pub out: &'a Path,
}

fn require_schema(ds: &Dataset) -> anyhow::Result<Schema> {
    ds.schema
        .clone()
        .ok_or_else(|| schema(format!("{} has no schema file", ds.manifest.dir.display())))
}

pub fn finetune(g: &GlobalArgs, a: FinetuneArgs<'_>) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, Some(&a.ckpt.join(RESOLVED_FILE)))?;
    if let Some(s) = a.steps {
        cfg.finetune.total_steps = s;
    }
    if let Some(l) = a.lr {
        cfg.finetune.lr = l;
    }
    let cfg = validated(cfg)?;
    let (mut model, vocab, _) = load_checkpoint(a.ckpt)?;
    let ds = load(a.train, &cfg)?;
    let pages = select(&ds, Some(a.train_split));
    if pages.is_empty() {
        return Err(usage(format!(
            "split {} of {} has no pages",
            a.train_split,
            a.train.display()
        )));
    }
    let windows = window_pages(&pages, &vocab, &cfg.preprocess)?;
    let schema_opt = match a.task {
        Task::Attr => Some(require_schema(&ds)?),
        _ => ds.schema.clone(),
    };
    let head_cfg = HeadConfig {
        num_attrs: schema_opt.as_ref().map_or(0, |s| s.attributes.len()),
        ..cfg.heads.clone()
    };
    model.heads = Some(HeadParams::init(&head_cfg, model.enc.cfg.hidden));
    model.freeze_encoder = a.freeze_encoder;
    let trace = match a.task {
        Task::Attr => {
            let schema = schema_opt.as_ref().expect("attr requires a schema");
            let examples = attr_training_set(&windows, &attr_class_map(&ds.labels, schema)?);
            let weights = cfg
                .balance_classes
                .then(|| balanced_class_weights(&examples, schema.attributes.len() + 1));
            finetune_attr(
                &mut model,
                &examples,
                weights.as_deref(),
                &cfg.finetune,
                print_step,
            )?
        }
        Task::Openie => {
            let examples = openie_training_set(&windows, &pages, &ds.labels, &model)?;
            finetune_openie(&mut model, &examples, &cfg.finetune, print_step)?
        }
        Task::Qa => {
            let examples = qa_training_set(&windows, &ds.labels.qa, &vocab, &cfg)?;
            finetune_qa(&mut model, &examples, &cfg.finetune, print_step)?
        }
    };
    let meta = meta_for(a.task.name(), &trace, &model, schema_opt.clone());
    save_checkpoint(a.out, &model, &vocab, &cfg, &meta, &trace)?;
    if let Some(dev) = a.dev {
        let dev_ds = load(dev, &cfg)?;
        let dev_pages = select(&dev_ds, Some(a.dev_split));
        let report = predict_and_score(
            a.task,
            &model,
            &vocab,
            &cfg,
            &dev_ds,
            &dev_pages,
            schema_opt.as_ref(),
            a.dev_split,
        )?;
        write_json(&a.out.join("dev_report.json"), &report)?;
        println!(
            "dev {}: {}",
            report.metric,
            serde_json::to_string(&report.aggregate)?
        );
    }
    println!("saved checkpoint to {}", a.out.display());
    Ok(())
}

enum Predictions {
    Attr(Vec<AttrPrediction>),
    Openie(Vec<OpeniePrediction>),
    Qa(Vec<QaPrediction>),
}

fn run_predictions(
    task: Task,
    model: &Model,
    vocab: &Vocab,
    cfg: &RunConfig,
    ds: &Dataset,
    pages: &[Page],
    schema_opt: Option<&Schema>,
) -> anyhow::Result<Predictions> {
    let windows = window_pages(pages, vocab, &cfg.preprocess)?;
    Ok(match task {
        Task::Attr => {
            let schema = schema_opt.ok_or_else(|| schema("attribute prediction needs a schema"))?;
            Predictions::Attr(predict_attr_all(model, &windows, schema)?)
        }
        Task::Openie => Predictions::Openie(predict_openie_all(model, &windows, pages)?),
        Task::Qa => Predictions::Qa(predict_qa_all(
            model,
            &windows,
            pages,
            &ds.labels.qa,
            vocab,
            cfg,
        )?),
    })
}

#[allow(clippy::too_many_arguments)]
fn predict_and_score(
    task: Task,
    model: &Model,
    vocab: &Vocab,
    cfg: &RunConfig,
    ds: &Dataset,
    pages: &[Page],
    schema_opt: Option<&Schema>,
    split: &str,
) -> anyhow::Result<EvalReport> {
    let docs: BTreeSet<String> = pages.iter().map(|p| p.entry.doc_id.clone()).collect();
    let entries = &ds.manifest.entries;
    Ok(
        match run_predictions(task, model, vocab, cfg, ds, pages, schema_opt)? {
            Predictions::Attr(p) => eval_attr(&p, &ds.labels, entries, &docs, split),
            Predictions::Openie(p) => eval_openie(&p, &ds.labels, entries, &docs, split),
            Predictions::Qa(p) => eval_qa(&p, &ds.labels, entries, &docs, split),
        },
    )
}

pub fn predict(
    g: &GlobalArgs,
    task: Task,
    ckpt: &Path,
    input: &Path,
    split: Option<&str>,
    out: &Path,
) -> anyhow::Result<()> {
    let cfg = validated(config::resolve(g, Some(&ckpt.join(RESOLVED_FILE)))?)?;
    let (model, vocab, meta) = load_checkpoint(ckpt)?;
    if meta.task != task.name() {
        bail!(usage(format!(
            "checkpoint was trained for {}, not {}",
            meta.task,
            task.name()
        )));
    }
    let ds = load(input, &cfg)?;
    let pages = select(&ds, split);
    let schema_opt = meta.schema.clone().or_else(|| ds.schema.clone());
    create_parent(out)?;
    let n = match run_predictions(task, &model, &vocab, &cfg, &ds, &pages, schema_opt.as_ref())? {
        Predictions::Attr(p) => write_jsonl(out, &p).map(|_| p.len()),
        Predictions::Openie(p) => write_jsonl(out, &p).map(|_| p.len()),
        Predictions::Qa(p) => write_jsonl(out, &p).map(|_| p.len()),
    }?;
    config::write(&cfg, &config::sidecar(out))?;
    println!("{n} predictions for {} pages", pages.len());
    Ok(())
}

pub fn eval(
    task: Task,
    pred: &Path,
    gold: &Path,
    manifest: Option<&Path>,
    split: Option<&str>,
    out: &Path,
) -> anyhow::Result<()> {
    let entries = match manifest {
        Some(m) => Manifest::load(&manifest_path(m))?.entries,
        None => Vec::new(),
    };
    let mut labels = Labels::default();
    let mut docs: BTreeSet<String> = BTreeSet::new();
    let report_split = split.unwrap_or("all");
    let keep =
        |doc: &str| split.is_none_or(|s| entries.iter().any(|e| e.doc_id == doc && e.split == s));
    if split.is_some() && manifest.is_none() {
        return Err(usage("--split needs --manifest"));
    }
    let report = match task {
        Task::Attr => {
            let p: Vec<AttrPrediction> = read_jsonl(pred)?;
            labels.attrs = read_jsonl::<AttrLabel>(gold)?;
            docs.extend(
                labels
                    .attrs
                    .iter()
                    .map(|l| l.doc_id.clone())
                    .chain(p.iter().map(|x| x.doc_id.clone())),
            );
            docs.retain(|d| keep(d));
            eval_attr(&p, &labels, &entries, &docs, report_split)
        }
        Task::Openie => {
            let p: Vec<OpeniePrediction> = read_jsonl(pred)?;
            labels.pairs = read_jsonl::<PairLabel>(gold)?;
            docs.extend(
                labels
                    .pairs
                    .iter()
                    .map(|l| l.doc_id.clone())
                    .chain(p.iter().map(|x| x.doc_id.clone())),
            );
            docs.retain(|d| keep(d));
            eval_openie(&p, &labels, &entries, &docs, report_split)
        }
        Task::Qa => {
            let p: Vec<QaPrediction> = read_jsonl(pred)?;
            labels.qa = read_jsonl::<QaLabel>(gold)?;
            docs.extend(
                labels
                    .qa
                    .iter()
                    .map(|l| l.doc_id.clone())
                    .chain(p.iter().map(|x| x.doc_id.clone())),
            );
            docs.retain(|d| keep(d));
            eval_qa(&p, &labels, &entries, &docs, report_split)
        }
    };
    create_parent(out)?;
    write_json(out, &report)?;
    println!(
        "{}: {}",
        report.metric,
        serde_json::to_string(&report.aggregate)?
    );
    Ok(())
}

fn token_name(vocab: &Vocab, id: u32) -> String {
    vocab
        .token(id)
        .map_or_else(|| format!("#{id}"), str::to_string)
}

#[derive(Serialize)]
struct WindowDump<'a> {
    doc_id: &'a str,
    window_index: usize,
    node_ids: Vec<usize>,
    token_total: usize,
}

pub fn inspect_windows(
    g: &GlobalArgs,
    input: &Path,
    vocab: &Path,
    doc: &str,
    window: Option<usize>,
    stride: Option<usize>,
    json: bool,
) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, None)?;
    if let Some(m) = window {
        cfg.preprocess.window.max_tokens = m;
    }
    if let Some(s) = stride {
        cfg.preprocess.window.stride = s;
    }
    let cfg = validated(cfg)?;
    let vocab = load_vocab(vocab)?;
    let ds = load(input, &cfg)?;
    let page = ds
        .page(doc)
        .ok_or_else(|| usage(format!("no document {doc}")))?;
    let pw = preprocess_page(doc, &page.tree, &vocab, &vocab.tag_table(), &cfg.preprocess)?;
    if json {
        for seq in &pw.windows {
            let node_ids: Vec<usize> = seq.nodes().map(|(v, _)| v).collect();
            let line = WindowDump {
                doc_id: doc,
                window_index: seq.window_index,
                token_total: seq.len() - seq.prefix_len,
                node_ids,
            };
            println!("{}", serde_json::to_string(&line)?);
        }
        return Ok(());
    }
    let w = &cfg.preprocess.window;
    println!(
        "{doc}: {} nodes, {} windows (budget {}, stride {})",
        page.tree.len(),
        pw.windows.len(),
        w.max_tokens,
        w.stride
    );
    for seq in &pw.windows {
        println!();
        println!(
            "window {}: {} nodes, {} tokens",
            seq.window_index,
            seq.node_anchor.len(),
            seq.len()
        );
        println!(
            "{:>5}  {:<20} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}  node",
            "pos", "token", "P0", "P1", "P2", "P3", "P4", "P5"
        );
        for (node, range) in seq.nodes() {
            for i in range {
                let p = seq.pos[i];
                let label = if i == seq.node_anchor[&node] {
                    page.tree.tag_path(node)
                } else {
                    String::new()
                };
                println!(
                    "{i:>5}  {:<20} {:>5} {:>5} {:>5} {:>5} {:>5} {:>5}  {label}",
                    token_name(&vocab, seq.tokens[i]),
                    p[0],
                    p[1],
                    p[2],
                    p[3],
                    p[4],
                    p[5]
                );
            }
        }
    }
    Ok(())
}

pub fn mask_preview(
    g: &GlobalArgs,
    input: &Path,
    vocab: &Path,
    index: usize,
    rate: Option<f64>,
    node_share: Option<f64>,
) -> anyhow::Result<()> {
    let mut cfg = config::resolve(g, None)?;
    if let Some(r) = rate {
        cfg.mask.rate = r;
    }
    if let Some(s) = node_share {
        cfg.mask.node_share = s;
    }
    let cfg = validated(cfg)?;
    let vocab = load_vocab(vocab)?;
    let lines: Vec<serde_json::Value> = read_jsonl(input)?;
    let value = lines
        .get(index)
        .cloned()
        .ok_or_else(|| usage(format!("{} has {} records", input.display(), lines.len())))?;
    let ms = match serde_json::from_value::<MaskedRecord>(value.clone()) {
        Ok(m) => m.into_masked(),
        Err(_) => {
            let rec: LinearRecord = serde_json::from_value(value).map_err(|e| {
                schema(format!(
                    "record {index} is neither linearized nor masked: {e}"
                ))
            })?;
            mask_window(&rec.into_sequence(), &cfg.mask, vocab.len())?
        }
    };
    let action: std::collections::BTreeMap<usize, MaskAction> = ms
        .plan
        .positions
        .iter()
        .copied()
        .zip(ms.plan.actions.iter().copied())
        .collect();
    let in_node: BTreeSet<usize> = ms
        .plan
        .node_masked
        .iter()
        .flat_map(|v| ms.seq.node_ranges[v].clone())
        .collect();
    println!(
        "{} window {}: {} tokens, {} selected ({} in {} whole nodes), seed {}",
        ms.seq.doc_id,
        ms.seq.window_index,
        ms.seq.len(),
        ms.plan.positions.len(),
        in_node.len(),
        ms.plan.node_masked.len(),
        ms.plan.seed
    );
    for i in 0..ms.seq.len() {
        let orig = token_name(&vocab, ms.seq.tokens[i]);
        let line = match action.get(&i) {
            None => orig,
            Some(a) => {
                let scope = if in_node.contains(&i) {
                    "node"
                } else {
                    "token"
                };
                let act = match a {
                    MaskAction::Mask => "mask",
                    MaskAction::Random => "random",
                    MaskAction::Keep => "keep",
                };
                format!(
                    "{:<20} <- {orig} ({act}, {scope})",
                    token_name(&vocab, ms.masked_tokens[i])
                )
            }
        };
        println!("{i:>5}  {line}");
    }
    Ok(())
}
