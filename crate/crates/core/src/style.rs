use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font::FontSet;

pub const MIN_SIZE_PX: u32 = 8;
pub const MAX_ROTATION_DEG: f32 = 15.0;
/// Reference canvas edge for the size range below.
pub const SIZE_REFERENCE_CANVAS: usize = 64;
pub const SIZE_RANGE_PX: (u32, u32) = (12, 48);

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("configuration error: font set is empty")]
    NoFonts,
    #[error("invalid style: {0}")]
    Invalid(String),
}

/// Text appearance held fixed across both sides of a parallel pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub font_id: u32,
    pub size_px: u32,
    /// RGBA, 8 bits per channel.
    pub color: [u8; 4],
    pub italic: bool,
    pub rotation_deg: f32,
    pub outline_px: u32,
}

impl StyleSpec {
    pub fn plain(font_id: u32, size_px: u32, color: [u8; 4]) -> Self {
        Self {
            font_id,
            size_px,
            color,
            italic: false,
            rotation_deg: 0.0,
            outline_px: 0,
        }
    }

    pub fn validate(&self, fonts: &FontSet) -> Result<(), StyleError> {
        if fonts.face(self.font_id).is_err() {
            return Err(StyleError::Invalid(format!(
                "font_id {} not in a set of {}",
                self.font_id,
                fonts.len()
            )));
        }
        if self.size_px < MIN_SIZE_PX {
            return Err(StyleError::Invalid(format!("size_px {} < {MIN_SIZE_PX}", self.size_px)));
        }
        if !self.rotation_deg.is_finite() || self.rotation_deg.abs() > MAX_ROTATION_DEG {
            return Err(StyleError::Invalid(format!(
                "rotation {} outside ±{MAX_ROTATION_DEG}",
                self.rotation_deg
            )));
        }
        Ok(())
    }
}

/// Draws a style from `seed`: fonts uniform over the set, RGB uniform over
/// the full cube, sizes uniform over 12..=48 px scaled by the canvas edge
/// relative to 64 px, rotation uniform in ±15°, 30% italic, 30% outlined.
pub fn sample_style(fonts: &FontSet, seed: u64, canvas: (usize, usize)) -> Result<StyleSpec, StyleError> {
    if fonts.is_empty() {
        return Err(StyleError::NoFonts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = canvas.0.min(canvas.1) as f32 / SIZE_REFERENCE_CANVAS as f32;
    let lo = ((SIZE_RANGE_PX.0 as f32 * scale).round() as u32).max(MIN_SIZE_PX);
    let hi = ((SIZE_RANGE_PX.1 as f32 * scale).round() as u32).max(lo);
    let font_id = rng.gen_range(0..fonts.len() as u32);
    let size_px = rng.gen_range(lo..=hi);
    let rgb: [u8; 3] = rng.gen();
    let italic = rng.gen_bool(0.3);
    let rotation_deg = rng.gen_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
    let outline_px = if rng.gen_bool(0.3) {
        rng.gen_range(1..=((2.0 * scale).round() as u32).max(1))
    } else {
        0
    };
    Ok(StyleSpec {
        font_id,
        size_px,
        color: [rgb[0], rgb[1], rgb[2], 255],
        italic,
        rotation_deg,
        outline_px,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_style() {
        let fonts = FontSet::builtin();
        assert_eq!(
            sample_style(&fonts, 7, (64, 64)).unwrap(),
            sample_style(&fonts, 7, (64, 64)).unwrap()
        );
    }

    #[test]
    fn fields_stay_in_range() {
        let fonts = FontSet::builtin();
        for seed in 0..2000 {
            let s = sample_style(&fonts, seed, (64, 64)).unwrap();
            s.validate(&fonts).unwrap();
            assert!((12..=48).contains(&s.size_px));
            assert_eq!(s.color[3], 255);
        }
    }

    #[test]
    fn more_than_twenty_fonts_observed() {
        let fonts = FontSet::builtin();
        let seen: std::collections::HashSet<u32> = (0..10_000)
            .map(|s| sample_style(&fonts, s, (64, 64)).unwrap().font_id)
            .collect();
        assert!(seen.len() >= 20, "{} fonts", seen.len());
    }

    #[test]
    fn adjacent_seeds_differ() {
        let fonts = FontSet::builtin();
        let differ = (0..1000u64)
            .filter(|&s| sample_style(&fonts, s, (64, 64)).unwrap() != sample_style(&fonts, s + 1, (64, 64)).unwrap())
            .count();
        assert!(differ >= 990, "{differ}/1000");
    }

    #[test]
    fn empty_font_set_is_configuration_error() {
        assert!(matches!(
            sample_style(&FontSet::empty(), 1, (64, 64)),
            Err(StyleError::NoFonts)
        ));
    }
}
