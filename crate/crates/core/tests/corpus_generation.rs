use std::path::Path;
use std::time::Instant;

use imtrans_core::corpus::{
    builtin_texts, check_pair_invariants, corpus_pair, generate_corpus, BackgroundPool, CorpusConfig, CorpusManifest,
    LangPair, MANIFEST_FILE,
};
use imtrans_core::font::FontSet;

fn config(count: u64, workers: usize) -> CorpusConfig {
    CorpusConfig {
        count,
        global_seed: 1,
        canvas: (64, 64),
        langs: LangPair::new("en", "zh"),
        workers,
    }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir);
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.strip_prefix(dir).unwrap().display().to_string(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn worker_count_does_not_change_output() {
    let fonts = FontSet::builtin();
    let texts = builtin_texts(&LangPair::new("en", "zh")).unwrap();
    let pool = BackgroundPool::procedural(4, 128, 5);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    generate_corpus(&fonts, &texts, &pool, &config(200, 1), a.path()).unwrap();
    generate_corpus(&fonts, &texts, &pool, &config(200, 8), b.path()).unwrap();
    generate_corpus(&fonts, &texts, &pool, &config(200, 1), c.path()).unwrap();
    let fa = read_all(a.path());
    assert_eq!(fa.len(), 200 * 6 + 1);
    assert_eq!(fa, read_all(b.path()));
    assert_eq!(fa, read_all(c.path()));
}

#[test]
fn manifest_round_trips_and_references_existing_files() {
    let fonts = FontSet::builtin();
    let texts = builtin_texts(&LangPair::new("en", "fr")).unwrap();
    let pool = BackgroundPool::procedural(2, 96, 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig {
        langs: LangPair::new("en", "fr"),
        ..config(20, 2)
    };
    let m = generate_corpus(&fonts, &texts, &pool, &cfg, dir.path()).unwrap();
    let back = CorpusManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.entries.len(), 20);
    for e in &back.entries {
        for rel in e.paths.all() {
            assert!(dir.path().join(rel).is_file());
        }
        let pair = back.load_pair(dir.path(), e).unwrap();
        // the style stored in the manifest is the one both renders used
        let regenerated = corpus_pair(&fonts, &texts, &pool, &cfg, e.pair_id).unwrap();
        assert_eq!(regenerated.style, e.style);
        assert_eq!(regenerated.source, pair.source);
        assert_eq!(regenerated.target, pair.target);
        assert_eq!(regenerated.glyph, pair.glyph);
        assert_eq!(regenerated.position, pair.position);
        check_pair_invariants(&fonts, &pair).unwrap();
    }
}

#[test]
fn missing_channel_file_is_reported() {
    let fonts = FontSet::builtin();
    let texts = builtin_texts(&LangPair::new("en", "zh")).unwrap();
    let pool = BackgroundPool::procedural(1, 64, 1);
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(&fonts, &texts, &pool, &config(2, 1), dir.path()).unwrap();
    std::fs::remove_file(dir.path().join(&m.entries[1].paths.glyph)).unwrap();
    let err = m.load_pair(dir.path(), &m.entries[1]).unwrap_err();
    assert!(err.to_string().contains("missing channel"));
}

#[test]
fn thousand_pairs_keep_style_consistent() {
    let fonts = FontSet::builtin();
    let texts = builtin_texts(&LangPair::new("en", "zh")).unwrap();
    let pool = BackgroundPool::procedural(8, 128, 2);
    let cfg = config(1000, 1);
    let start = Instant::now();
    for i in 0..1000 {
        let pair = corpus_pair(&fonts, &texts, &pool, &cfg, i).unwrap();
        check_pair_invariants(&fonts, &pair).unwrap();
    }
    eprintln!("1000 pairs generated and checked in {:?}", start.elapsed());
}
