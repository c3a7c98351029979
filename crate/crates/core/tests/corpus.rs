use domlm::corpus::{
    generate_synthetic, load_dataset, read_jsonl, write_corpus, write_jsonl, CorpusError,
    SyntheticSiteConfig, ATTRS_FILE, MANIFEST_FILE,
};
use domlm::dom::CleanConfig;
use domlm::experiment::{all_windows, window_pages};
use domlm::linearizer::LinearRecord;
use domlm::masker::{mask_window, MaskConfig, MaskedRecord};
use domlm::pipeline::PreprocessConfig;
use domlm::tokenizer::Vocab;
use domlm::windower::WindowConfig;
use tempfile::TempDir;

fn small() -> SyntheticSiteConfig {
    SyntheticSiteConfig {
        sites: 3,
        templates_per_site: 2,
        pages_per_template: 3,
        test_sites: 1,
        ..Default::default()
    }
}

#[test]
fn written_corpus_loads_back_identically() {
    let corpus = generate_synthetic(&small()).unwrap();
    let dir = TempDir::new().unwrap();
    write_corpus(&corpus, dir.path()).unwrap();
    let ds = load_dataset(&dir.path().join(MANIFEST_FILE), &CleanConfig::default()).unwrap();
    assert_eq!(ds.pages.len(), corpus.pages.len());
    for (a, b) in ds.pages.iter().zip(&corpus.pages) {
        assert_eq!(a.entry, b.entry);
        assert_eq!(a.tree, b.tree);
    }
    assert_eq!(ds.labels, corpus.labels);
    assert_eq!(ds.schema.as_ref(), Some(&corpus.schema));
}

#[test]
fn hundred_examples_round_trip_through_jsonl() {
    let corpus = generate_synthetic(&small()).unwrap();
    let pages: Vec<_> = corpus
        .pages
        .iter()
        .map(|p| domlm::corpus::Page {
            entry: p.entry.clone(),
            tree: p.tree.clone(),
        })
        .collect();
    let vocab = Vocab::build(pages.iter().map(|p| &p.tree), 1).unwrap();
    let cfg = PreprocessConfig {
        window: WindowConfig::new(48, 16),
        ..Default::default()
    };
    let windows = all_windows(&window_pages(&pages, &vocab, &cfg).unwrap());
    assert!(windows.len() >= 100, "{}", windows.len());
    let records: Vec<LinearRecord> = windows.iter().take(100).map(|w| w.to_record()).collect();
    let masked: Vec<MaskedRecord> = windows
        .iter()
        .take(100)
        .map(|w| {
            mask_window(w, &MaskConfig::default(), vocab.len())
                .unwrap()
                .to_record()
        })
        .collect();
    let dir = TempDir::new().unwrap();
    let (lin, msk) = (dir.path().join("ex.jsonl"), dir.path().join("masked.jsonl"));
    write_jsonl(&lin, &records).unwrap();
    write_jsonl(&msk, &masked).unwrap();
    assert_eq!(read_jsonl::<LinearRecord>(&lin).unwrap(), records);
    assert_eq!(read_jsonl::<MaskedRecord>(&msk).unwrap(), masked);
    let back: Vec<_> = read_jsonl::<LinearRecord>(&lin)
        .unwrap()
        .into_iter()
        .map(LinearRecord::into_sequence)
        .collect();
    assert_eq!(back[..], windows[..100]);
}

fn corrupt_first_label(dir: &std::path::Path, edit: impl Fn(&mut serde_json::Value)) {
    let path = dir.join(ATTRS_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    edit(&mut v);
    lines[0] = v.to_string();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn label_beyond_the_tree_is_rejected() {
    let dir = TempDir::new().unwrap();
    write_corpus(&generate_synthetic(&small()).unwrap(), dir.path()).unwrap();
    corrupt_first_label(dir.path(), |v| v["node_id"] = 100_000.into());
    let err = load_dataset(&dir.path().join(MANIFEST_FILE), &CleanConfig::default()).unwrap_err();
    assert!(
        matches!(
            err,
            CorpusError::LabelNodeMismatch {
                node_id: 100_000,
                ..
            }
        ),
        "{err}"
    );
}

#[test]
fn recleaning_with_other_settings_is_caught() {
    let dir = TempDir::new().unwrap();
    write_corpus(&generate_synthetic(&small()).unwrap(), dir.path()).unwrap();
    let mut cfg = CleanConfig::default();
    cfg.removed_tags
        .extend(["h1", "h2", "span", "td", "th", "dt", "dd", "b"].map(String::from));
    let err = load_dataset(&dir.path().join(MANIFEST_FILE), &cfg).unwrap_err();
    assert!(
        matches!(err, CorpusError::LabelNodeMismatch { .. }),
        "{err}"
    );
}

#[test]
fn malformed_label_lines_report_their_line() {
    let dir = TempDir::new().unwrap();
    write_corpus(&generate_synthetic(&small()).unwrap(), dir.path()).unwrap();
    let path = dir.path().join(ATTRS_FILE);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"doc_id\": 3}\n");
    let n = text.lines().count();
    std::fs::write(&path, text).unwrap();
    match load_dataset(&dir.path().join(MANIFEST_FILE), &CleanConfig::default()) {
        Err(CorpusError::SchemaError { line, .. }) => assert_eq!(line, n),
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_manifest_is_reported() {
    let dir = TempDir::new().unwrap();
    let err = load_dataset(&dir.path().join(MANIFEST_FILE), &CleanConfig::default()).unwrap_err();
    assert!(matches!(err, CorpusError::MissingFile(_)));
}
