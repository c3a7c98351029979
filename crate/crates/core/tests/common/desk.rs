//! Small end-to-end runs on the generated corpus.

use std::collections::BTreeSet;
use std::time::Instant;

use domlm::corpus::{generate_synthetic, Page, SyntheticCorpus, SyntheticSiteConfig};
use domlm::encoder::{encode, mlm_row_logits, EncoderInput, Params};
use domlm::experiment::{
    all_windows, attr_class_map, attr_training_set, eval_attr, predict_attr_all, window_pages,
    RunConfig,
};
use domlm::heads::{HeadConfig, HeadParams};
use domlm::masker::{mask_window, MaskedSequence};
use domlm::tokenizer::Vocab;
use domlm::train::{
    balanced_class_weights, evaluate_mlm, finetune_attr, pretrain, MaskSource, Model,
};

/// Pages with this index or above, within each template of a training site,
/// are held out of pre-training.
pub const HELD_FROM_PAGE: usize = 15;

pub fn pages(corpus: &SyntheticCorpus) -> Vec<Page> {
    corpus
        .pages
        .iter()
        .map(|p| Page {
            entry: p.entry.clone(),
            tree: p.tree.clone(),
        })
        .collect()
}

fn page_index(doc_id: &str) -> usize {
    doc_id
        .rsplit("_p")
        .next()
        .and_then(|s| s.parse().ok())
        .expect("synthetic doc id")
}

#[derive(Debug)]
pub struct DeskReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub whole_node_accuracy: f64,
    pub whole_node_tokens: usize,
    /// Same accuracy recounted with [`whole_node_hits`].
    pub recounted_accuracy: f64,
    pub held_pages: usize,
    pub seconds: f64,
}

/// Pre-trains on the training sites minus the held-out pages, then measures
/// how many tokens of whole masked nodes on those pages are recovered.
pub fn desk_learning(steps: usize, batch: usize, lr: f64) -> DeskReport {
    let t0 = Instant::now();
    let corpus = generate_synthetic(&SyntheticSiteConfig::default()).unwrap();
    let (train, held): (Vec<Page>, Vec<Page>) = pages(&corpus)
        .into_iter()
        .filter(|p| p.entry.split == "train")
        .partition(|p| page_index(&p.entry.doc_id) < HELD_FROM_PAGE);
    let mut cfg = RunConfig::default();
    cfg.pretrain.total_steps = steps;
    cfg.pretrain.batch_size = batch;
    cfg.pretrain.lr = lr;
    let vocab = Vocab::build(train.iter().map(|p| &p.tree), cfg.min_freq).unwrap();
    let train_windows = all_windows(&window_pages(&train, &vocab, &cfg.preprocess).unwrap());
    let held_masked: Vec<MaskedSequence> =
        all_windows(&window_pages(&held, &vocab, &cfg.preprocess).unwrap())
            .iter()
            .map(|s| mask_window(s, &cfg.mask, vocab.len()).unwrap())
            .collect();
    let mut model = Model::new(Params::init(&cfg.encoder_config(&vocab)).unwrap(), None);
    let source = MaskSource::Dynamic {
        seqs: &train_windows,
        cfg: cfg.mask.clone(),
        vocab_size: vocab.len(),
    };
    let log = pretrain(&mut model, source, &cfg.pretrain, |_| {}).unwrap();
    let k = 10.min(log.len());
    let mean = |s: &[domlm::train::StepLog]| s.iter().map(|l| l.loss).sum::<f64>() / s.len() as f64;
    let eval = evaluate_mlm(&model.enc, &held_masked).unwrap();
    let (hit, total) = held_masked
        .iter()
        .map(|ms| whole_node_hits(&model, ms))
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    DeskReport {
        steps: log.len(),
        initial_loss: mean(&log[..k]),
        final_loss: mean(&log[log.len() - k..]),
        whole_node_accuracy: eval.whole_node_accuracy,
        whole_node_tokens: eval.whole_node_tokens,
        recounted_accuracy: hit as f64 / total.max(1) as f64,
        held_pages: held.len(),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

/// Recomputes whole-node recovery by hand for one masked sequence: the
/// fraction of tokens inside whole-node-masked nodes whose arg-max
/// prediction equals the original token.
pub fn whole_node_hits(model: &Model, ms: &MaskedSequence) -> (usize, usize) {
    let h = encode(EncoderInput::from(ms), &model.enc).unwrap();
    let (mut hit, mut total) = (0, 0);
    for v in &ms.plan.node_masked {
        let rows: Vec<usize> = ms.seq.node_ranges[v].clone().collect();
        let logits = mlm_row_logits(&h, &rows, &model.enc);
        for (k, &i) in rows.iter().enumerate() {
            let row = logits.row(k);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            hit += usize::from(best as i64 == ms.labels[i]);
            total += 1;
        }
    }
    (hit, total)
}

#[derive(Debug)]
pub struct DirectionalRun {
    pub seed: u64,
    pub structure_f1: f64,
    pub ablation_f1: f64,
}

/// Attribute extraction trained on the training sites and scored on the
/// unseen test sites, once with tree positions and once with the position
/// tables zeroed. Both arms share corpus, vocabulary, seeds and schedules.
pub fn directional_run(seed: u64, pretrain_steps: usize, finetune_steps: usize) -> DirectionalRun {
    let mut f1 = [0.0; 2];
    for (arm, use_structure) in [true, false].into_iter().enumerate() {
        let mut cfg = RunConfig::default();
        cfg.reseed(seed);
        cfg.encoder.use_structure = use_structure;
        cfg.pretrain.total_steps = pretrain_steps;
        cfg.finetune.total_steps = finetune_steps;
        let corpus = generate_synthetic(&cfg.synthetic).unwrap();
        let (train, test): (Vec<Page>, Vec<Page>) = pages(&corpus)
            .into_iter()
            .partition(|p| p.entry.split == "train");
        let vocab = Vocab::build(train.iter().map(|p| &p.tree), cfg.min_freq).unwrap();
        let train_windows = window_pages(&train, &vocab, &cfg.preprocess).unwrap();
        let test_windows = window_pages(&test, &vocab, &cfg.preprocess).unwrap();
        let enc_cfg = cfg.encoder_config(&vocab);
        let mut model = Model::new(Params::init(&enc_cfg).unwrap(), None);
        if pretrain_steps > 0 {
            let seqs = all_windows(&train_windows);
            let source = MaskSource::Dynamic {
                seqs: &seqs,
                cfg: cfg.mask.clone(),
                vocab_size: vocab.len(),
            };
            pretrain(&mut model, source, &cfg.pretrain, |_| {}).unwrap();
        }
        let heads = HeadConfig {
            num_attrs: corpus.schema.attributes.len(),
            ..cfg.heads.clone()
        };
        model.heads = Some(HeadParams::init(&heads, enc_cfg.hidden));
        let gold = attr_class_map(&corpus.labels, &corpus.schema).unwrap();
        let examples = attr_training_set(&train_windows, &gold);
        let weights = balanced_class_weights(&examples, heads.num_attrs + 1);
        finetune_attr(
            &mut model,
            &examples,
            cfg.balance_classes.then_some(&weights[..]),
            &cfg.finetune,
            |_| {},
        )
        .unwrap();
        let preds = predict_attr_all(&model, &test_windows, &corpus.schema).unwrap();
        let entries: Vec<_> = test.iter().map(|p| p.entry.clone()).collect();
        let docs: BTreeSet<String> = entries.iter().map(|e| e.doc_id.clone()).collect();
        f1[arm] = eval_attr(&preds, &corpus.labels, &entries, &docs, "test").aggregate["f1"];
    }
    DirectionalRun {
        seed,
        structure_f1: f1[0],
        ablation_f1: f1[1],
    }
}
