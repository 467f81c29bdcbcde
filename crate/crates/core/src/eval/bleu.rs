use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::image::MetricError;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Tokenizer {
    /// Split on whitespace only.
    Whitespace,
    /// Every non-space character is a token.
    Character,
    /// CJK characters are single tokens; other scripts split on whitespace.
    #[default]
    Mixed,
}

impl Tokenizer {
    /// Character-level for Chinese/Japanese/Korean targets, whitespace otherwise.
    pub fn for_lang(lang: &str) -> Self {
        match lang {
            "zh" | "ja" | "ko" => Tokenizer::Mixed,
            _ => Tokenizer::Whitespace,
        }
    }

    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(str::to_owned).collect(),
            Tokenizer::Character => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
            Tokenizer::Mixed => {
                let mut out = Vec::new();
                let mut cur = String::new();
                for c in text.chars() {
                    if c.is_whitespace() || is_cjk(c) {
                        if !cur.is_empty() {
                            out.push(std::mem::take(&mut cur));
                        }
                        if !c.is_whitespace() {
                            out.push(c.to_string());
                        }
                    } else {
                        cur.push(c);
                    }
                }
                if !cur.is_empty() {
                    out.push(cur);
                }
                out
            }
        }
    }
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30ff | 0x3100..=0x312f | 0x3400..=0x4dbf | 0x4e00..=0x9fff
        | 0xac00..=0xd7af | 0xf900..=0xfaff | 0xff00..=0xffef | 0x3000..=0x303f
        | 0x20000..=0x2fa1f)
}

/// Corpus BLEU-4 with its sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0..=100.
    pub score: f64,
    /// Clipped matches and candidate n-gram totals for n = 1..=4.
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    /// Set when the score is zero because some precision has no matches.
    pub diagnostic: Option<String>,
}

impl BleuScore {
    pub fn precision(&self, n: usize) -> f64 {
        if self.totals[n - 1] == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / self.totals[n - 1] as f64
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 against one reference per line, no smoothing.
pub fn bleu(hypotheses: &[String], references: &[String], tokenizer: Tokenizer) -> Result<BleuScore, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::Length(hypotheses.len(), references.len()));
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hypotheses.iter().zip(references) {
        let ht = tokenizer.tokenize(h);
        let rt = tokenizer.tokenize(r);
        hyp_len += ht.len() as u64;
        ref_len += rt.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            for (g, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += ht.len().saturating_sub(n - 1) as u64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut diagnostic = None;
    let score = if let Some(n) = (0..MAX_ORDER).find(|&i| matches[i] == 0) {
        diagnostic = Some(format!("no matching {}-grams; score is 0", n + 1));
        0.0
    } else {
        let log_mean: f64 = (0..MAX_ORDER)
            .map(|i| (matches[i] as f64 / totals[i] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuScore {
        score,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        diagnostic,
    })
}
