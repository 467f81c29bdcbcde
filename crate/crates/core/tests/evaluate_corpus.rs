use std::fs;

use imtrans_core::corpus::{builtin_texts, generate_corpus, BackgroundPool, CorpusConfig, LangPair};
use imtrans_core::eval::{evaluate_corpus, output_file_name, ComparisonTable, RowStatus};
use imtrans_core::font::FontSet;

fn corpus(dir: &std::path::Path, count: u64) -> imtrans_core::corpus::CorpusManifest {
    let langs = LangPair::new("en", "zh");
    let cfg = CorpusConfig {
        count,
        global_seed: 3,
        canvas: (64, 64),
        langs: langs.clone(),
        workers: 2,
    };
    generate_corpus(
        &FontSet::builtin(),
        &builtin_texts(&langs).unwrap(),
        &BackgroundPool::procedural(2, 96, 1),
        &cfg,
        dir,
    )
    .unwrap()
}

#[test]
fn perfect_outputs_score_one_and_missing_rows_are_counted() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = corpus(root.path(), 6);
    for e in m.entries.iter().skip(1) {
        fs::copy(
            root.path().join(&e.paths.target),
            out.path().join(output_file_name(e.pair_id)),
        )
        .unwrap();
    }
    let lines: Vec<String> = m
        .entries
        .iter()
        .map(|e| serde_json::json!({"pair_id": e.pair_id, "translation": e.tgt_text}).to_string())
        .collect();
    fs::write(out.path().join("translations.jsonl"), lines.join("\n")).unwrap();

    let r = evaluate_corpus(out.path(), root.path()).unwrap();
    assert_eq!(r.rows.len(), 6);
    assert_eq!((r.evaluated, r.failures), (5, 1));
    assert_eq!(r.rows[0].status, RowStatus::Missing);
    assert!((r.mean_ssim.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r.mean_l1, Some(0.0));
    assert_eq!(r.direction, "En-Zh");
    assert_eq!(r.config_hash, m.header.config_hash);
    let b = r.bleu.as_ref().unwrap();
    assert_eq!(b.precision(1), 1.0);

    let again = evaluate_corpus(out.path(), root.path()).unwrap();
    assert_eq!(again.to_json(), r.to_json());

    let mut t = ComparisonTable::published_baselines();
    t.add_reports("Desk", &[r]);
    assert_eq!(t.get("SSIM", "En-Zh", "Desk"), Some(1.0));
    assert_eq!(t.get("L1", "Fr-En", "Desk"), None);
}

#[test]
fn wrong_size_output_is_an_error_row() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let m = corpus(root.path(), 2);
    imtrans_core::Raster::new(32, 32, 3)
        .save_png(&out.path().join(output_file_name(m.entries[0].pair_id)))
        .unwrap();
    let r = evaluate_corpus(out.path(), root.path()).unwrap();
    assert_eq!(r.rows[0].status, RowStatus::Error);
    assert_eq!(r.rows[1].status, RowStatus::Missing);
    assert_eq!(r.mean_ssim, None);
    assert!(r.bleu.is_none());
}
