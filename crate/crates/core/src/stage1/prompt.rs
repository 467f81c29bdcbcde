//! Step-by-step translation prompts, written in the target language, and
//! parsing of numbered step responses.

use std::sync::OnceLock;

use regex::Regex;

use super::region::TextRegion;
use super::TranslateError;

/// Wording for one target language. The scene step text doubles as the
/// marker a backend can use to tell whether scene description was requested.
#[derive(Debug, Clone, Copy)]
pub struct PromptTemplate {
    pub lang: &'static str,
    pub intro: &'static str,
    pub ocr_hint: &'static str,
    pub steps_header: &'static str,
    pub scene_step: &'static str,
    pub text_step: &'static str,
    pub translate_step: &'static str,
    pub direct_header: &'static str,
    pub direct_step: &'static str,
}

const TEMPLATES: &[PromptTemplate] = &[
    PromptTemplate {
        lang: "zh",
        intro: "请结合图片内容完成文字翻译。图片中位于文本框 {box} 的位置有一段{src}文字。",
        ocr_hint: "OCR 参考：“{text}”",
        steps_header: "请严格按以下步骤作答，每一步单独一行：",
        scene_step: "描述这张图片的场景。",
        text_step: "写出文本框中的{src}原文。",
        translate_step: "结合图片场景，给出该文本最恰当的{tgt}译文，只输出译文。",
        direct_header: "请直接给出该文本的{tgt}译文，格式如下：",
        direct_step: "{tgt}译文",
    },
    PromptTemplate {
        lang: "en",
        intro: "Translate the text shown in this image. The text box at {box} contains {src} text.",
        ocr_hint: "OCR hint: \"{text}\"",
        steps_header: "Answer strictly in the following steps, one per line:",
        scene_step: "Describe the scene shown in the image.",
        text_step: "Write out the {src} text inside the text box.",
        translate_step: "Give the {tgt} translation that best fits the scene; output only the translation.",
        direct_header: "Give the {tgt} translation of the text directly, in this format:",
        direct_step: "{tgt} translation",
    },
    PromptTemplate {
        lang: "fr",
        intro: "Traduisez le texte de cette image. La zone de texte {box} contient un texte en {src}.",
        ocr_hint: "Indice OCR : « {text} »",
        steps_header: "Répondez strictement selon les étapes suivantes, une par ligne :",
        scene_step: "Décrivez la scène représentée dans l'image.",
        text_step: "Recopiez le texte en {src} de la zone de texte.",
        translate_step: "Donnez la traduction en {tgt} la plus adaptée à la scène ; écrivez seulement la traduction.",
        direct_header: "Donnez directement la traduction en {tgt} du texte, dans ce format :",
        direct_step: "traduction en {tgt}",
    },
    PromptTemplate {
        lang: "de",
        intro: "Übersetze den Text in diesem Bild. Das Textfeld {box} enthält {src}en Text.",
        ocr_hint: "OCR-Hinweis: „{text}“",
        steps_header: "Antworte streng in den folgenden Schritten, jeweils in einer Zeile:",
        scene_step: "Beschreibe die im Bild gezeigte Szene.",
        text_step: "Schreibe den {src}en Text im Textfeld ab.",
        translate_step: "Gib die {tgt}e Übersetzung an, die am besten zur Szene passt; nur die Übersetzung.",
        direct_header: "Gib die {tgt}e Übersetzung des Textes direkt in diesem Format an:",
        direct_step: "{tgt}e Übersetzung",
    },
];

/// Language names as written in each prompt language.
fn language_name(prompt_lang: &str, lang: &str) -> Option<&'static str> {
    Some(match (prompt_lang, lang) {
        ("zh", "en") => "英文",
        ("zh", "zh") => "中文",
        ("zh", "fr") => "法文",
        ("zh", "de") => "德文",
        ("en", "en") => "English",
        ("en", "zh") => "Chinese",
        ("en", "fr") => "French",
        ("en", "de") => "German",
        ("fr", "en") => "anglais",
        ("fr", "zh") => "chinois",
        ("fr", "fr") => "français",
        ("fr", "de") => "allemand",
        ("de", "en") => "Englisch",
        ("de", "zh") => "Chinesisch",
        ("de", "fr") => "Französisch",
        ("de", "de") => "Deutsch",
        _ => return None,
    })
}

pub fn template_for(lang: &str) -> Option<&'static PromptTemplate> {
    TEMPLATES.iter().find(|t| t.lang == lang)
}

pub fn supported_languages() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|t| t.lang)
}

/// Serialization of a box inside prompts.
pub fn format_box(region: &TextRegion) -> String {
    let b = region.text_box;
    format!("(x={}, y={}, w={}, h={})", b.x, b.y, b.w, b.h)
}

/// Builds the prompt in the target language. With `cot` the model is asked
/// to (1) describe the scene, (2) state the text in the box and (3) give a
/// scene-consistent translation; without it, only for the translation.
pub fn build_prompt(src_lang: &str, tgt_lang: &str, region: &TextRegion, cot: bool) -> Result<String, TranslateError> {
    let unsupported = || TranslateError::Unsupported {
        src: src_lang.to_owned(),
        tgt: tgt_lang.to_owned(),
    };
    if src_lang == tgt_lang {
        return Err(unsupported());
    }
    let t = template_for(tgt_lang).ok_or_else(unsupported)?;
    let src = language_name(tgt_lang, src_lang).ok_or_else(unsupported)?;
    let tgt = language_name(tgt_lang, tgt_lang).ok_or_else(unsupported)?;
    let fill = |s: &str| {
        s.replace("{src}", src)
            .replace("{tgt}", tgt)
            .replace("{box}", &format_box(region))
    };
    let mut lines = vec![fill(t.intro)];
    if !region.recognized_text.is_empty() {
        lines.push(t.ocr_hint.replace("{text}", &region.recognized_text));
    }
    if cot {
        lines.push(fill(t.steps_header));
        lines.push(format!("1: {}", fill(t.scene_step)));
        lines.push(format!("2: {}", fill(t.text_step)));
        lines.push(format!("3: {}", fill(t.translate_step)));
    } else {
        lines.push(fill(t.direct_header));
        lines.push(format!("1: {}", fill(t.direct_step)));
    }
    Ok(lines.join("\n"))
}

/// [`build_prompt`] with the scene-description steps enabled.
pub fn build_cot_prompt(src_lang: &str, tgt_lang: &str, region: &TextRegion) -> Result<String, TranslateError> {
    build_prompt(src_lang, tgt_lang, region, true)
}

/// Whether `prompt` requests the scene-description step.
pub fn requests_scene_step(prompt: &str) -> bool {
    TEMPLATES
        .iter()
        .any(|t| prompt.contains(&format!("1: {}", t.scene_step)))
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|\s)(\d{1,2})\s*[:：]").expect("valid regex"))
}

/// Splits a numbered response (`1: … 2: … 3: …`) into its steps. Markers
/// must appear in order starting at 1; the text after the last one is the
/// translation. Returns `(earlier steps, translation)`.
pub fn parse_cot_response(raw: &str) -> Result<(Vec<String>, String), TranslateError> {
    let parse_err = |reason: &str| TranslateError::Parse {
        raw: raw.to_owned(),
        reason: reason.to_owned(),
    };
    if raw.trim().is_empty() {
        return Err(parse_err("empty response"));
    }
    let mut chain: Vec<(usize, usize)> = Vec::new();
    let mut expect = 1u32;
    for caps in marker_regex().captures_iter(raw) {
        let n: u32 = caps[1].parse().unwrap_or(0);
        if n == expect {
            let whole = caps.get(0).expect("match");
            chain.push((whole.start(), whole.end()));
            expect += 1;
        }
    }
    if chain.is_empty() {
        return Err(parse_err("no step marker found"));
    }
    let mut segments = Vec::with_capacity(chain.len());
    for (i, &(_, body_start)) in chain.iter().enumerate() {
        let end = chain.get(i + 1).map_or(raw.len(), |next| next.0);
        segments.push(raw[body_start..end].trim().to_owned());
    }
    let last = segments.pop().expect("non-empty chain");
    if last.is_empty() {
        return Err(parse_err("final step is empty"));
    }
    Ok((segments, last))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::TextBox;

    fn bank() -> TextRegion {
        TextRegion::new(TextBox::new(12, 30, 40, 14), "Bank", 1.0)
    }

    #[test]
    fn cot_prompt_has_three_steps_and_box() {
        let p = build_cot_prompt("en", "zh", &bank()).unwrap();
        for m in ["1: ", "2: ", "3: "] {
            assert!(p.contains(m), "{p}");
        }
        assert!(p.contains("(x=12, y=30, w=40, h=14)"));
        assert!(p.contains("Bank"));
        assert!(requests_scene_step(&p));
        assert!(!requests_scene_step(&build_prompt("en", "zh", &bank(), false).unwrap()));
    }

    #[test]
    fn prompt_body_is_in_target_language() {
        let p = build_cot_prompt("en", "zh", &bank()).unwrap();
        let without_hint: String = p.lines().filter(|l| !l.contains("Bank")).collect::<Vec<_>>().join("\n");
        let cjk = without_hint
            .chars()
            .filter(|c| ('\u{4e00}'..='\u{9fff}').contains(c))
            .count();
        let latin = without_hint.chars().filter(|c| c.is_ascii_alphabetic()).count();
        assert!(cjk > 30 && cjk > 3 * latin, "cjk={cjk} latin={latin}");
        let fr = build_cot_prompt("en", "fr", &bank()).unwrap();
        assert!(fr.contains("Décrivez la scène"));
    }

    #[test]
    fn prompt_is_deterministic_and_checks_languages() {
        assert_eq!(
            build_cot_prompt("en", "zh", &bank()).unwrap(),
            build_cot_prompt("en", "zh", &bank()).unwrap()
        );
        assert!(matches!(
            build_cot_prompt("en", "xx", &bank()),
            Err(TranslateError::Unsupported { .. })
        ));
        assert!(matches!(
            build_cot_prompt("xx", "zh", &bank()),
            Err(TranslateError::Unsupported { .. })
        ));
        assert!(matches!(
            build_cot_prompt("zh", "zh", &bank()),
            Err(TranslateError::Unsupported { .. })
        ));
    }

    #[test]
    fn parse_three_steps() {
        let (steps, last) = parse_cot_response("1: a river scene 2: Bank 3: 河岸").unwrap();
        assert_eq!(steps, vec!["a river scene", "Bank"]);
        assert_eq!(last, "河岸");
    }

    #[test]
    fn parse_ignores_trailing_blank_lines() {
        let a = parse_cot_response("1: 河边\n2: Bank\n3: 河岸").unwrap();
        let b = parse_cot_response("1: 河边\n2: Bank\n3: 河岸\n\n  \n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parse_accepts_fullwidth_colons() {
        let (_, last) = parse_cot_response("1：场景\n2：Hot\n3：辣的").unwrap();
        assert_eq!(last, "辣的");
    }

    #[test]
    fn parse_rejects_marker_free_and_empty_final() {
        assert!(matches!(
            parse_cot_response("just words"),
            Err(TranslateError::Parse { .. })
        ));
        assert!(matches!(
            parse_cot_response("1: x\n2:   "),
            Err(TranslateError::Parse { .. })
        ));
        assert!(parse_cot_response("   ").is_err());
    }

    #[test]
    fn out_of_order_markers_are_text() {
        let (steps, last) = parse_cot_response("1: open 9: am daily 2: x 3: y").unwrap();
        assert_eq!(steps, vec!["open 9: am daily", "x"]);
        assert_eq!(last, "y");
    }
}
