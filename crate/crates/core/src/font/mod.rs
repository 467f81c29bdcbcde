//! Font set management and single-line coverage rendering.
//!
//! Two kinds of faces are supported: the built-in stroke faces (always
//! available, cover every code point) and outline fonts loaded from TTF/OTF
//! files. Characters an outline font lacks are drawn with the built-in
//! standard stroke face.

mod stroke;

use std::path::{Path, PathBuf};

use ab_glyph::{Font, FontVec, PxScale, ScaleFont};
use thiserror::Error;

pub use stroke::StrokeFace;

#[derive(Debug, Error)]
pub enum FontError {
    #[error("font directory {0} does not exist or is not a directory")]
    MissingDir(PathBuf),
    #[error("no loadable fonts in {0}")]
    EmptyDir(PathBuf),
    #[error("failed to read font {path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("font set is empty")]
    EmptySet,
    #[error("font id {0} out of range")]
    UnknownId(u32),
}

/// Upright anti-aliased coverage in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Coverage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Coverage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample at continuous texel coordinates (texel centers at
    /// integer + 0.5); zero outside.
    pub fn sample(&self, u: f32, v: f32) -> f32 {
        let fx = u - 0.5;
        let fy = v - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let get = |x: f32, y: f32| -> f32 {
            if x < 0.0 || y < 0.0 || x >= self.width as f32 || y >= self.height as f32 {
                0.0
            } else {
                self.at(x as usize, y as usize)
            }
        };
        let a = get(x0, y0) * (1.0 - tx) + get(x0 + 1.0, y0) * tx;
        let b = get(x0, y0 + 1.0) * (1.0 - tx) + get(x0 + 1.0, y0 + 1.0) * tx;
        a * (1.0 - ty) + b * ty
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&c| c <= 0.0)
    }

    /// Crops to the inked bounding box plus a one-texel empty border.
    /// Blank coverage collapses to a 2×2 empty map.
    pub fn trim(&self) -> Coverage {
        let mut x0 = usize::MAX;
        let mut y0 = usize::MAX;
        let mut x1 = 0;
        let mut y1 = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.at(x, y) > 0.0 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == usize::MAX {
            return Coverage::new(2, 2);
        }
        let w = x1 - x0 + 2;
        let h = y1 - y0 + 2;
        let mut out = Coverage::new(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                out.data[(y - y0 + 1) * w + (x - x0 + 1)] = self.at(x, y);
            }
        }
        out
    }
}

pub struct OutlineFace {
    name: String,
    font: FontVec,
}

impl std::fmt::Debug for OutlineFace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OutlineFace").field("name", &self.name).finish()
    }
}

impl OutlineFace {
    pub fn load(path: &Path) -> Result<Self, FontError> {
        let bytes = std::fs::read(path).map_err(|e| FontError::Load {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let font = FontVec::try_from_vec(bytes).map_err(|e| FontError::Load {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self { name, font })
    }

    fn has_glyph(&self, ch: char) -> bool {
        self.font.glyph_id(ch).0 != 0
    }
}

#[derive(Debug)]
pub enum Face {
    Stroke(StrokeFace),
    Outline(OutlineFace),
}

impl Face {
    pub fn name(&self) -> &str {
        match self {
            Face::Stroke(s) => &s.name,
            Face::Outline(o) => &o.name,
        }
    }

    /// Whether the face draws `ch` itself rather than through the fallback.
    pub fn covers(&self, ch: char) -> bool {
        match self {
            Face::Stroke(_) => true,
            Face::Outline(o) => ch.is_whitespace() || o.has_glyph(ch),
        }
    }

    /// Renders `text` on one line at em height `em_px` and trims to the ink.
    pub fn render_line(&self, text: &str, em_px: f32, fallback: &StrokeFace) -> Coverage {
        let ascent_px = em_px * stroke::ASCENT_UNITS / stroke::UNITS_PER_EM;
        let pad = (em_px * 0.5).ceil() + 2.0;
        let advance: f32 = match self {
            Face::Stroke(s) => text.chars().map(|c| s.advance_units(c)).sum::<f32>() * em_px / stroke::UNITS_PER_EM,
            Face::Outline(o) => {
                let scaled = o.font.as_scaled(PxScale::from(em_px));
                text.chars()
                    .map(|c| {
                        if c.is_whitespace() || o.has_glyph(c) {
                            scaled.h_advance(o.font.glyph_id(c))
                        } else {
                            fallback.advance_units(c) * em_px / stroke::UNITS_PER_EM
                        }
                    })
                    .sum()
            }
        };
        let width = (advance + 2.0 * pad).ceil() as usize;
        let height = (em_px + 2.0 * pad).ceil() as usize;
        let mut cov = Coverage::new(width, height);
        let baseline = pad + ascent_px;
        let mut caret = pad;
        match self {
            Face::Stroke(s) => {
                for c in text.chars() {
                    caret += s.draw_char(&mut cov, c, caret, baseline, em_px);
                }
            }
            Face::Outline(o) => {
                let scaled = o.font.as_scaled(PxScale::from(em_px));
                let glyph_ascent = scaled.ascent();
                let mut prev = None;
                for c in text.chars() {
                    if !c.is_whitespace() && !o.has_glyph(c) {
                        caret += fallback.draw_char(&mut cov, c, caret, baseline, em_px);
                        prev = None;
                        continue;
                    }
                    let id = o.font.glyph_id(c);
                    if let Some(p) = prev {
                        caret += scaled.kern(p, id);
                    }
                    let g =
                        id.with_scale_and_position(PxScale::from(em_px), ab_glyph::point(caret, pad + glyph_ascent));
                    if let Some(outlined) = o.font.outline_glyph(g) {
                        let b = outlined.px_bounds();
                        outlined.draw(|gx, gy, c| {
                            let x = b.min.x as i64 + gx as i64;
                            let y = b.min.y as i64 + gy as i64;
                            if x >= 0 && y >= 0 && (x as usize) < cov.width && (y as usize) < cov.height {
                                let i = y as usize * cov.width + x as usize;
                                cov.data[i] = cov.data[i].max(c.clamp(0.0, 1.0));
                            }
                        });
                    }
                    caret += scaled.h_advance(id);
                    prev = Some(id);
                }
            }
        }
        cov.trim()
    }
}

/// The fonts available to the style sampler plus the standard face used for
/// glyph condition images.
#[derive(Debug)]
pub struct FontSet {
    faces: Vec<Face>,
    standard: Face,
    fallback: StrokeFace,
}

impl FontSet {
    /// 24 stroke faces: 4 weights × 3 widths × {sans, serif}.
    pub fn builtin() -> Self {
        let mut faces = Vec::new();
        for (wname, weight) in [("light", 0.55), ("regular", 0.8), ("bold", 1.1), ("heavy", 1.45)] {
            for (sname, scale) in [("condensed", 0.8), ("normal", 1.0), ("wide", 1.2)] {
                for serif in [false, true] {
                    let name = format!("stroke-{}-{wname}-{sname}", if serif { "serif" } else { "sans" });
                    faces.push(Face::Stroke(StrokeFace::new(name, weight, scale, serif)));
                }
            }
        }
        Self {
            faces,
            standard: Face::Stroke(StrokeFace::standard()),
            fallback: StrokeFace::standard(),
        }
    }

    /// Loads every `.ttf`/`.otf` in `dir` (sorted by file name for stable ids).
    /// `standard` names the file stem of the face used for glyph images; when
    /// absent the built-in standard stroke face is used.
    pub fn from_dir(dir: &Path, standard: Option<&str>) -> Result<Self, FontError> {
        if !dir.is_dir() {
            return Err(FontError::MissingDir(dir.to_owned()));
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| FontError::Load {
                path: dir.to_owned(),
                reason: e.to_string(),
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("ttf") || e.eq_ignore_ascii_case("otf"))
            })
            .collect();
        paths.sort();
        let faces: Vec<Face> = paths
            .iter()
            .filter_map(|p| OutlineFace::load(p).ok().map(Face::Outline))
            .collect();
        if faces.is_empty() {
            return Err(FontError::EmptyDir(dir.to_owned()));
        }
        let standard_face = match standard {
            Some(stem) => {
                let path = paths
                    .iter()
                    .find(|p| p.file_stem().is_some_and(|s| s == stem))
                    .ok_or_else(|| FontError::Load {
                        path: dir.join(stem),
                        reason: "standard font not found".into(),
                    })?;
                Face::Outline(OutlineFace::load(path)?)
            }
            None => Face::Stroke(StrokeFace::standard()),
        };
        Ok(Self {
            faces,
            standard: standard_face,
            fallback: StrokeFace::standard(),
        })
    }

    pub fn empty() -> Self {
        Self {
            faces: Vec::new(),
            standard: Face::Stroke(StrokeFace::standard()),
            fallback: StrokeFace::standard(),
        }
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn face(&self, id: u32) -> Result<&Face, FontError> {
        self.faces.get(id as usize).ok_or(FontError::UnknownId(id))
    }

    pub fn standard(&self) -> &Face {
        &self.standard
    }

    pub fn fallback(&self) -> &StrokeFace {
        &self.fallback
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.faces.iter().map(|f| f.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_set_has_more_than_twenty_distinct_faces() {
        let set = FontSet::builtin();
        assert!(set.len() > 20);
        let renders: std::collections::HashSet<Vec<u32>> = (0..set.len() as u32)
            .map(|i| {
                let c = set.face(i).unwrap().render_line("Ag", 24.0, set.fallback());
                c.data.iter().map(|v| (v * 1000.0) as u32).collect()
            })
            .collect();
        assert_eq!(renders.len(), set.len());
    }

    #[test]
    fn cjk_renders_with_ink() {
        let set = FontSet::builtin();
        let c = set.standard().render_line("中转", 20.0, set.fallback());
        assert!(!c.is_blank());
        assert!(c.width > c.height);
    }

    #[test]
    fn trim_leaves_empty_border() {
        let set = FontSet::builtin();
        let c = set.standard().render_line("H", 16.0, set.fallback());
        for x in 0..c.width {
            assert_eq!(c.at(x, 0), 0.0);
            assert_eq!(c.at(x, c.height - 1), 0.0);
        }
        for y in 0..c.height {
            assert_eq!(c.at(0, y), 0.0);
            assert_eq!(c.at(c.width - 1, y), 0.0);
        }
    }

    #[test]
    fn missing_dir_is_reported() {
        let err = FontSet::from_dir(Path::new("/definitely/not/here"), None).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here"));
    }

    #[test]
    fn system_outline_font_with_fallback() {
        let dir = Path::new("/usr/share/fonts/truetype/dejavu");
        if !dir.is_dir() {
            return;
        }
        let set = FontSet::from_dir(dir, None).unwrap();
        let face = set.face(0).unwrap();
        assert!(face.covers('A'));
        assert!(!face.covers('河'));
        let latin = face.render_line("Bank", 20.0, set.fallback());
        let mixed = face.render_line("Bank河", 20.0, set.fallback());
        assert!(!latin.is_blank());
        assert!(mixed.width > latin.width);
    }
}
