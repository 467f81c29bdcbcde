use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::TextBox;
use crate::raster::Raster;

/// A located text element, optionally with its recognized content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRegion {
    pub text_box: TextBox,
    pub recognized_text: String,
    pub confidence: f32,
}

impl TextRegion {
    pub fn new(text_box: TextBox, recognized_text: impl Into<String>, confidence: f32) -> Self {
        Self {
            text_box,
            recognized_text: recognized_text.into(),
            confidence,
        }
    }

    /// A located but unrecognized region.
    pub fn located(text_box: TextBox) -> Self {
        Self::new(text_box, "", 0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.text_box.is_valid()
            && (0.0..=1.0).contains(&self.confidence)
            && (!self.recognized_text.is_empty() || self.confidence == 0.0)
    }
}

#[derive(Debug, Error)]
#[error("region provider failed: {0}")]
pub struct DetectError(pub String);

pub trait RegionProvider: Send + Sync {
    fn detect(&self, image: &Raster) -> Result<Vec<TextRegion>, DetectError>;
}

/// Runs `provider`; failures degrade to "no regions" so the image passes
/// through untranslated.
pub fn detect_regions(image: &Raster, provider: &dyn RegionProvider) -> Vec<TextRegion> {
    match provider.detect(image) {
        Ok(regions) => regions
            .into_iter()
            .filter(|r| r.text_box.clip(image.width(), image.height()).is_some() && r.is_valid())
            .collect(),
        Err(e) => {
            log::warn!("{e}; continuing without regions");
            Vec::new()
        }
    }
}

/// Returns known boxes, e.g. from a synthetic corpus manifest.
#[derive(Debug, Clone, Default)]
pub struct GroundTruthProvider {
    pub regions: Vec<TextRegion>,
}

impl GroundTruthProvider {
    pub fn new(regions: Vec<TextRegion>) -> Self {
        Self { regions }
    }
}

impl RegionProvider for GroundTruthProvider {
    fn detect(&self, _image: &Raster) -> Result<Vec<TextRegion>, DetectError> {
        Ok(self.regions.clone())
    }
}

/// Heuristic detector: luma-gradient edges, dilated, grouped into connected
/// components; overlapping component boxes are merged.
#[derive(Debug, Clone)]
pub struct EdgeDetector {
    /// Minimum absolute luma difference to a 4-neighbour.
    pub edge_threshold: f64,
    /// Dilation radius joining the strokes of one word.
    pub join_px: usize,
    pub min_area: i64,
}

impl Default for EdgeDetector {
    fn default() -> Self {
        Self {
            edge_threshold: 48.0,
            join_px: 3,
            min_area: 12,
        }
    }
}

impl RegionProvider for EdgeDetector {
    fn detect(&self, image: &Raster) -> Result<Vec<TextRegion>, DetectError> {
        let (w, h) = image.dims();
        if w == 0 || h == 0 {
            return Err(DetectError("empty image".into()));
        }
        let luma = image.luma();
        let mut edge = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let v = luma[y * w + x];
                let right = (x + 1 < w).then(|| luma[y * w + x + 1]);
                let down = (y + 1 < h).then(|| luma[(y + 1) * w + x]);
                if right.is_some_and(|r| (r - v).abs() >= self.edge_threshold)
                    || down.is_some_and(|d| (d - v).abs() >= self.edge_threshold)
                {
                    edge[y * w + x] = true;
                }
            }
        }
        let r = self.join_px as i64;
        let mut grown = vec![false; w * h];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !edge[y as usize * w + x as usize] {
                    continue;
                }
                for yy in (y - r).max(0)..=(y + r).min(h as i64 - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w as i64 - 1) {
                        grown[yy as usize * w + xx as usize] = true;
                    }
                }
            }
        }
        let mut seen = vec![false; w * h];
        let mut boxes: Vec<TextBox> = Vec::new();
        for start in 0..w * h {
            if !grown[start] || seen[start] {
                continue;
            }
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                let mut push = |j: usize| {
                    if grown[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < w {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - w);
                }
                if y + 1 < h {
                    push(i + w);
                }
            }
            let b = TextBox::new(x0 as i64, y0 as i64, (x1 - x0 + 1) as i64, (y1 - y0 + 1) as i64);
            if b.area() >= self.min_area {
                boxes.push(b);
            }
        }
        // merge until no two boxes overlap
        loop {
            let mut merged = false;
            'outer: for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    if boxes[i].intersects(&boxes[j]) {
                        let u = boxes[i].union(&boxes[j]);
                        boxes[i] = u;
                        boxes.swap_remove(j);
                        merged = true;
                        break 'outer;
                    }
                }
            }
            if !merged {
                break;
            }
        }
        boxes.sort_by(TextBox::reading_order);
        Ok(boxes.into_iter().map(TextRegion::located).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::font::FontSet;
    use crate::render::render_text;
    use crate::style::StyleSpec;

    struct Failing;

    impl RegionProvider for Failing {
        fn detect(&self, _image: &Raster) -> Result<Vec<TextRegion>, DetectError> {
            Err(DetectError("boom".into()))
        }
    }

    #[test]
    fn ground_truth_returns_exact_box() {
        let b = TextBox::new(3, 4, 20, 10);
        let p = GroundTruthProvider::new(vec![TextRegion::new(b, "Bank", 1.0)]);
        let found = detect_regions(&Raster::new(32, 32, 3), &p);
        assert_eq!(found, vec![TextRegion::new(b, "Bank", 1.0)]);
    }

    #[test]
    fn blank_image_has_no_regions() {
        let img = Raster::filled(64, 64, &[200, 180, 20]);
        assert!(detect_regions(&img, &EdgeDetector::default()).is_empty());
    }

    #[test]
    fn provider_failure_degrades_to_empty() {
        assert!(detect_regions(&Raster::new(8, 8, 3), &Failing).is_empty());
    }

    #[test]
    fn two_word_composite_yields_two_disjoint_regions() {
        let fonts = FontSet::builtin();
        let canvas = Raster::filled(96, 64, &[240, 240, 240]);
        let a = TextBox::new(4, 4, 40, 16);
        let b = TextBox::new(50, 40, 40, 16);
        let style = StyleSpec::plain(2, 14, [10, 10, 10, 255]);
        let (img, _) = render_text(&fonts, "Bank", &style, &canvas, &a).unwrap();
        let (img, _) = render_text(&fonts, "Hot", &style, &img, &b).unwrap();
        let found = detect_regions(&img, &EdgeDetector::default());
        assert_eq!(found.len(), 2, "{found:?}");
        assert!(!found[0].text_box.intersects(&found[1].text_box));
        assert!(found[0].text_box.intersects(&a));
        assert!(found[1].text_box.intersects(&b));
    }
}
