use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::backend::{BackendMode, BackendRequest, TranslatorBackend};
use super::prompt::{build_prompt, parse_cot_response};
use super::region::TextRegion;
use super::TranslateError;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslateOptions {
    pub src_lang: String,
    pub tgt_lang: String,
    /// Ask for the scene description before the translation.
    pub cot: bool,
}

impl TranslateOptions {
    pub fn new(src_lang: impl Into<String>, tgt_lang: impl Into<String>) -> Self {
        Self {
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
            cot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub region: TextRegion,
    pub translation: String,
    /// Every parsed step, the translation last.
    pub cot_trace: Vec<String>,
    pub backend_id: String,
    pub mode: BackendMode,
    pub attempts: u32,
}

/// Translates one region. Retriable backend failures are retried with
/// exponential backoff up to the backend's retry budget.
pub fn translate_region(
    image: &Raster,
    image_id: &str,
    region_index: usize,
    region: &TextRegion,
    backend: &dyn TranslatorBackend,
    opts: &TranslateOptions,
) -> Result<TranslationResult, TranslateError> {
    if !backend.supports(&opts.src_lang, &opts.tgt_lang) {
        return Err(TranslateError::Unsupported {
            src: opts.src_lang.clone(),
            tgt: opts.tgt_lang.clone(),
        });
    }
    let prompt = build_prompt(&opts.src_lang, &opts.tgt_lang, region, opts.cot)?;
    let request = BackendRequest {
        image_id,
        image,
        region,
        prompt: &prompt,
        src_lang: &opts.src_lang,
        tgt_lang: &opts.tgt_lang,
    };
    let budget = backend.max_retries() + 1;
    let mut delay = backend.retry_backoff();
    let mut attempts = 0;
    let raw = loop {
        attempts += 1;
        match backend.complete(&request) {
            Ok(raw) => break raw,
            Err(e) if e.retriable && attempts < budget => {
                log::warn!(
                    "region {region_index}: {} (attempt {attempts}/{budget}), retrying",
                    e.message
                );
                std::thread::sleep(delay);
                delay *= 2;
            }
            Err(e) => {
                return Err(TranslateError::Backend {
                    region: region_index,
                    retriable: e.retriable,
                    attempts,
                    message: e.message,
                })
            }
        }
    };
    let (mut steps, translation) = parse_cot_response(&raw)?;
    steps.push(translation.clone());
    Ok(TranslationResult {
        region: region.clone(),
        translation,
        cot_trace: steps,
        backend_id: backend.id().to_owned(),
        mode: backend.mode(),
        attempts,
    })
}

/// Translates all regions of one image, concurrently unless the backend is
/// single-flight. Results keep the input order.
pub fn translate_regions(
    image: &Raster,
    image_id: &str,
    regions: &[TextRegion],
    backend: &dyn TranslatorBackend,
    opts: &TranslateOptions,
) -> Vec<Result<TranslationResult, TranslateError>> {
    let one = |(i, r): (usize, &TextRegion)| translate_region(image, image_id, i, r, backend, opts);
    if backend.single_flight() {
        regions.iter().enumerate().map(one).collect()
    } else {
        regions.par_iter().enumerate().map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::time::Duration;

    use super::*;
    use crate::corpus::LangPair;
    use crate::geom::TextBox;
    use crate::stage1::backend::{BackendError, MockBackend};

    fn mock() -> MockBackend {
        MockBackend::from_fixture(MockBackend::ambiguity_fixture()).unwrap()
    }

    fn region(text: &str) -> TextRegion {
        TextRegion::new(TextBox::new(4, 4, 40, 16), text, 1.0)
    }

    #[test]
    fn cot_trace_has_three_steps() {
        let img = Raster::new(64, 64, 3);
        let r = translate_region(
            &img,
            "riverside",
            0,
            &region("Bank"),
            &mock(),
            &TranslateOptions::new("en", "zh"),
        )
        .unwrap();
        assert_eq!(r.translation, "河岸");
        assert_eq!(r.cot_trace.len(), 3);
        assert_eq!(r.cot_trace[2], "河岸");
        assert_eq!(r.mode, BackendMode::Mock);
    }

    #[test]
    fn without_cot_context_is_ignored() {
        let img = Raster::new(64, 64, 3);
        let opts = TranslateOptions {
            cot: false,
            ..TranslateOptions::new("en", "zh")
        };
        let r = translate_region(&img, "riverside", 0, &region("Bank"), &mock(), &opts).unwrap();
        assert_eq!(r.translation, "银行");
        assert_eq!(r.cot_trace.len(), 1);
    }

    #[test]
    fn unsupported_pair_fails_fast() {
        let img = Raster::new(8, 8, 3);
        let e = translate_region(
            &img,
            "x",
            0,
            &region("Bank"),
            &mock(),
            &TranslateOptions::new("en", "fr"),
        )
        .unwrap_err();
        assert!(matches!(e, TranslateError::Unsupported { .. }));
    }

    #[test]
    fn batch_keeps_order() {
        let img = Raster::new(64, 64, 3);
        let regions: Vec<_> = ["Bank", "Hot", "Coffee", "Transfer"]
            .iter()
            .map(|t| region(t))
            .collect();
        let out = translate_regions(
            &img,
            "street-food",
            &regions,
            &mock(),
            &TranslateOptions::new("en", "zh"),
        );
        let got: Vec<_> = out.into_iter().map(|r| r.unwrap().translation).collect();
        assert_eq!(got, vec!["银行", "辣的", "咖啡", "转账"]);
    }

    struct Flaky {
        fails: u32,
        retriable: bool,
        calls: AtomicU32,
        langs: Vec<LangPair>,
    }

    impl TranslatorBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn mode(&self) -> BackendMode {
            BackendMode::Remote
        }
        fn languages(&self) -> &[LangPair] {
            &self.langs
        }
        fn max_retries(&self) -> u32 {
            2
        }
        fn retry_backoff(&self) -> Duration {
            Duration::from_millis(1)
        }
        fn complete(&self, _r: &BackendRequest<'_>) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fails {
                Err(BackendError {
                    retriable: self.retriable,
                    message: "down".into(),
                })
            } else {
                Ok("1: s\n2: t\n3: ok".into())
            }
        }
    }

    fn flaky(fails: u32, retriable: bool) -> Flaky {
        Flaky {
            fails,
            retriable,
            calls: AtomicU32::new(0),
            langs: vec![LangPair::new("en", "zh")],
        }
    }

    #[test]
    fn retries_then_succeeds() {
        let b = flaky(2, true);
        let r = translate_region(
            &Raster::new(8, 8, 3),
            "x",
            0,
            &region("a"),
            &b,
            &TranslateOptions::new("en", "zh"),
        )
        .unwrap();
        assert_eq!(r.attempts, 3);
        assert_eq!(r.translation, "ok");
    }

    #[test]
    fn retry_budget_is_bounded() {
        let b = flaky(5, true);
        let e = translate_region(
            &Raster::new(8, 8, 3),
            "x",
            7,
            &region("a"),
            &b,
            &TranslateOptions::new("en", "zh"),
        )
        .unwrap_err();
        assert_eq!(
            e,
            TranslateError::Backend {
                region: 7,
                retriable: true,
                attempts: 3,
                message: "down".into()
            }
        );
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let b = flaky(1, false);
        let e = translate_region(
            &Raster::new(8, 8, 3),
            "x",
            0,
            &region("a"),
            &b,
            &TranslateOptions::new("en", "zh"),
        )
        .unwrap_err();
        assert!(matches!(
            e,
            TranslateError::Backend {
                attempts: 1,
                retriable: false,
                ..
            }
        ));
    }
}
