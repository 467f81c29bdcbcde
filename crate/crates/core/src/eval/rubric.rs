use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One rater's judgement of one image on three 3-point scales.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    pub image_id: String,
    pub rater_id: String,
    pub translation_accuracy: u8,
    pub font_style_consistency: u8,
    pub background_coherence: u8,
}

pub const AXES: [&str; 3] = ["translation_accuracy", "font_style_consistency", "background_coherence"];

#[derive(Debug, Error, PartialEq)]
pub enum RubricError {
    #[error("line {line}: {field} = {value} is outside 1..=3")]
    OutOfRange {
        line: usize,
        field: &'static str,
        value: u8,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("no rubric scores")]
    Empty,
}

impl RubricScore {
    pub fn axes(&self) -> [u8; 3] {
        [
            self.translation_accuracy,
            self.font_style_consistency,
            self.background_coherence,
        ]
    }

    pub fn validate(&self, line: usize) -> Result<(), RubricError> {
        for (field, value) in AXES.iter().zip(self.axes()) {
            if !(1..=3).contains(&value) {
                return Err(RubricError::OutOfRange { line, field, value });
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines rubric rows. Blank lines are skipped.
pub fn parse_rubric_rows(text: &str) -> Result<Vec<RubricScore>, RubricError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RubricScore = serde_json::from_str(line).map_err(|e| RubricError::Syntax {
            line: i + 1,
            reason: e.to_string(),
        })?;
        row.validate(i + 1)?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSummary {
    pub axis: String,
    pub mean: f64,
    /// Counts of scores 1, 2 and 3.
    pub histogram: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricSummary {
    pub count: usize,
    pub axes: Vec<AxisSummary>,
}

impl RubricSummary {
    pub fn means(&self) -> [f64; 3] {
        [self.axes[0].mean, self.axes[1].mean, self.axes[2].mean]
    }
}

pub fn aggregate_rubric(scores: &[RubricScore]) -> Result<RubricSummary, RubricError> {
    if scores.is_empty() {
        return Err(RubricError::Empty);
    }
    for (i, s) in scores.iter().enumerate() {
        s.validate(i + 1)?;
    }
    let axes = (0..3)
        .map(|a| {
            let mut histogram = [0u64; 3];
            for s in scores {
                histogram[s.axes()[a] as usize - 1] += 1;
            }
            let total: u64 = histogram.iter().enumerate().map(|(k, c)| (k as u64 + 1) * c).sum();
            AxisSummary {
                axis: AXES[a].into(),
                mean: total as f64 / scores.len() as f64,
                histogram,
            }
        })
        .collect();
    Ok(RubricSummary {
        count: scores.len(),
        axes,
    })
}
