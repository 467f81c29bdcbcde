use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{bleu, BleuScore, Tokenizer};
use super::image::{l1_distance, ssim};
use super::rubric::RubricSummary;
use crate::corpus::{CorpusError, CorpusManifest, MANIFEST_FILE};
use crate::raster::Raster;

/// Name of the generated image for `pair_id` inside an outputs directory.
pub fn output_file_name(pair_id: u64) -> String {
    format!("{pair_id:06}.png")
}

/// Optional text outputs: one `{"pair_id": .., "translation": ..}` per line.
pub const TRANSLATIONS_FILE: &str = "translations.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationRow {
    pub pair_id: u64,
    pub translation: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Missing,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub pair_id: u64,
    pub status: RowStatus,
    pub ssim: Option<f64>,
    pub l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Direction label such as `En-Zh`.
    pub direction: String,
    pub config_hash: String,
    pub rows: Vec<ImageRow>,
    pub evaluated: usize,
    pub failures: usize,
    pub mean_ssim: Option<f64>,
    pub mean_l1: Option<f64>,
    pub bleu: Option<BleuScore>,
    /// Filled from an external scorer, never computed here.
    pub comet: Option<f64>,
    pub rubric: Option<RubricSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `en-zh` → `En-Zh`.
pub fn direction_label(src: &str, tgt: &str) -> String {
    let cap = |s: &str| {
        let mut c = s.chars();
        c.next()
            .map(|f| f.to_uppercase().chain(c).collect::<String>())
            .unwrap_or_default()
    };
    format!("{}-{}", cap(src), cap(tgt))
}

fn score_one(outputs: &Path, corpus_root: &Path, manifest: &CorpusManifest, idx: usize) -> ImageRow {
    let entry = &manifest.entries[idx];
    let out_path = outputs.join(output_file_name(entry.pair_id));
    let row = |status, error: Option<String>| ImageRow {
        pair_id: entry.pair_id,
        status,
        ssim: None,
        l1: None,
        error,
    };
    if !out_path.exists() {
        return row(RowStatus::Missing, Some(format!("{} not found", out_path.display())));
    }
    let loaded = Raster::load(&out_path)
        .and_then(|o| Raster::load(&corpus_root.join(&entry.paths.target)).map(|r| (o.to_rgb(), r.to_rgb())));
    let (output, reference) = match loaded {
        Ok(v) => v,
        Err(e) => return row(RowStatus::Error, Some(e.to_string())),
    };
    match (ssim(&output, &reference), l1_distance(&output, &reference)) {
        (Ok(s), Ok(l)) => ImageRow {
            pair_id: entry.pair_id,
            status: RowStatus::Ok,
            ssim: Some(s),
            l1: Some(l),
            error: None,
        },
        (Err(e), _) | (_, Err(e)) => row(RowStatus::Error, Some(e.to_string())),
    }
}

fn read_translations(path: &Path) -> Result<BTreeMap<u64, String>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        context: path.display().to_string(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row: TranslationRow = serde_json::from_str(line).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        out.insert(row.pair_id, row.translation);
    }
    Ok(out)
}

/// Scores every manifest entry against `outputs/{pair_id:06}.png`. Missing
/// or unreadable outputs become failure rows and are excluded from the means.
/// When `outputs/translations.jsonl` exists, corpus BLEU is computed against
/// the manifest target texts; ids without a translation count as empty.
pub fn evaluate_corpus(outputs: &Path, corpus_root: &Path) -> Result<EvalReport, CorpusError> {
    let manifest = CorpusManifest::read(&corpus_root.join(MANIFEST_FILE))?;
    let rows: Vec<ImageRow> = (0..manifest.entries.len())
        .into_par_iter()
        .map(|i| score_one(outputs, corpus_root, &manifest, i))
        .collect();
    let ok: Vec<&ImageRow> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
    let mean =
        |f: fn(&ImageRow) -> f64| (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64);
    let mean_ssim = mean(|r| r.ssim.unwrap_or_default());
    let mean_l1 = mean(|r| r.l1.unwrap_or_default());

    let tpath = outputs.join(TRANSLATIONS_FILE);
    let bleu = if tpath.exists() && !manifest.entries.is_empty() {
        let hyps = read_translations(&tpath)?;
        let (h, r): (Vec<String>, Vec<String>) = manifest
            .entries
            .iter()
            .map(|e| (hyps.get(&e.pair_id).cloned().unwrap_or_default(), e.tgt_text.clone()))
            .unzip();
        bleu(&h, &r, Tokenizer::for_lang(&manifest.header.langs.tgt)).ok()
    } else {
        None
    };
    Ok(EvalReport {
        direction: direction_label(&manifest.header.langs.src, &manifest.header.langs.tgt),
        config_hash: manifest.header.config_hash.clone(),
        evaluated: ok.len(),
        failures: rows.len() - ok.len(),
        rows,
        mean_ssim,
        mean_l1,
        bleu,
        comet: None,
        rubric: None,
    })
}

pub const TABLE_METRICS: [&str; 2] = ["SSIM", "L1"];
pub const TABLE_DIRECTIONS: [&str; 4] = ["En-Zh", "Zh-En", "En-Fr", "Fr-En"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: String,
    pub direction: String,
    /// One cell per system; `None` renders as `-`.
    pub values: Vec<Option<f64>>,
}

/// Method × direction × metric comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub systems: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    /// Empty grid with the standard metric and direction rows.
    pub fn new(systems: Vec<String>) -> Self {
        let rows = TABLE_METRICS
            .iter()
            .flat_map(|m| {
                TABLE_DIRECTIONS.iter().map(|d| TableRow {
                    metric: m.to_string(),
                    direction: d.to_string(),
                    values: vec![None; systems.len()],
                })
            })
            .collect();
        Self { systems, rows }
    }

    /// Published image-similarity results of three reference systems and
    /// of the two-stage method (last column) on a synthetic test set.
    pub fn published_baselines() -> Self {
        let mut t = Self::new(
            ["AliyunTrans", "YoudaoTrans", "Anytrans", "Ours"]
                .map(String::from)
                .to_vec(),
        );
        let grid: [(&str, &str, [Option<f64>; 4]); 8] = [
            ("SSIM", "En-Zh", [Some(0.605), Some(0.516), Some(0.381), Some(0.744)]),
            ("SSIM", "Zh-En", [Some(0.657), Some(0.622), Some(0.439), Some(0.685)]),
            ("SSIM", "En-Fr", [Some(0.581), Some(0.486), Some(0.356), Some(0.668)]),
            ("SSIM", "Fr-En", [None, Some(0.467), Some(0.281), Some(0.675)]),
            ("L1", "En-Zh", [Some(0.436), Some(0.561), Some(0.561), Some(0.402)]),
            ("L1", "Zh-En", [Some(0.363), Some(0.418), Some(0.418), Some(0.399)]),
            ("L1", "En-Fr", [Some(0.476), Some(0.588), Some(0.588), Some(0.445)]),
            ("L1", "Fr-En", [None, Some(0.625), Some(0.625), Some(0.467)]),
        ];
        for (m, d, vals) in grid {
            for (s, v) in t.systems.clone().iter().zip(vals) {
                if let Some(v) = v {
                    t.set(m, d, s, v);
                }
            }
        }
        t
    }

    pub fn get(&self, metric: &str, direction: &str, system: &str) -> Option<f64> {
        let col = self.systems.iter().position(|s| s == system)?;
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.direction == direction)?
            .values[col]
    }

    /// Sets a cell, adding the system column or the row if absent.
    pub fn set(&mut self, metric: &str, direction: &str, system: &str, value: f64) {
        let col = match self.systems.iter().position(|s| s == system) {
            Some(c) => c,
            None => {
                self.systems.push(system.to_owned());
                for r in &mut self.rows {
                    r.values.push(None);
                }
                self.systems.len() - 1
            }
        };
        let n = self.systems.len();
        let row = match self
            .rows
            .iter()
            .position(|r| r.metric == metric && r.direction == direction)
        {
            Some(i) => &mut self.rows[i],
            None => {
                self.rows.push(TableRow {
                    metric: metric.into(),
                    direction: direction.into(),
                    values: vec![None; n],
                });
                self.rows.last_mut().expect("just pushed")
            }
        };
        row.values[col] = Some(value);
    }

    /// Fills `system`'s column from corpus reports.
    pub fn add_reports(&mut self, system: &str, reports: &[EvalReport]) {
        for r in reports {
            if let Some(v) = r.mean_ssim {
                self.set("SSIM", &r.direction, system, v);
            }
            if let Some(v) = r.mean_l1 {
                self.set("L1", &r.direction, system, v);
            }
        }
    }

    /// Markdown grid; the metric name appears on the first row of its block.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| | Language | {} |\n", self.systems.join(" | "));
        s.push_str(&format!("|---|---|{}\n", "---|".repeat(self.systems.len())));
        let mut last = "";
        for r in &self.rows {
            let label = if r.metric != last { r.metric.as_str() } else { "" };
            last = &r.metric;
            let cells: Vec<String> = r
                .values
                .iter()
                .map(|v| v.map_or("-".into(), |v| format!("{v:.3}")))
                .collect();
            let lead = if label.is_empty() {
                "| |".to_owned()
            } else {
                format!("| {label} |")
            };
            s.push_str(&format!("{lead} {} | {} |\n", r.direction, cells.join(" | ")));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(direction_label("en", "zh"), "En-Zh");
        assert_eq!(direction_label("fr", "en"), "Fr-En");
    }

    #[test]
    fn baseline_cells() {
        let t = ComparisonTable::published_baselines();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.get("SSIM", "En-Zh", "Ours"), Some(0.744));
        assert_eq!(t.get("L1", "En-Zh", "Ours"), Some(0.402));
        assert_eq!(t.get("SSIM", "Fr-En", "AliyunTrans"), None);
        assert_eq!(t.get("L1", "Zh-En", "AliyunTrans"), Some(0.363));
    }

    #[test]
    fn set_adds_columns() {
        let mut t = ComparisonTable::new(vec!["A".into()]);
        t.set("SSIM", "En-Zh", "B", 0.5);
        assert_eq!(t.systems, vec!["A", "B"]);
        assert_eq!(t.get("SSIM", "En-Zh", "B"), Some(0.5));
        assert_eq!(t.get("SSIM", "En-Zh", "A"), None);
        let back: ComparisonTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
