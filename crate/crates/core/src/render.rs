//! Rasterization of styled text and the auxiliary condition channels
//! (glyph image, position mask, masked image).

use thiserror::Error;

use crate::font::{Coverage, Face, FontError, FontSet};
use crate::geom::TextBox;
use crate::raster::Raster;
use crate::style::{StyleSpec, MIN_SIZE_PX};

/// Fill value for the text region of the masked image.
pub const MASK_FILL: [u8; 3] = [128, 128, 128];
/// Horizontal shear applied to italic text.
pub const ITALIC_SHEAR: f32 = 0.21;
/// Extra dilation beyond the outline width that absorbs anti-aliasing bleed.
pub const BLEED_PX: i64 = 2;
/// Value of "1" in position masks and other binary rasters.
pub const MASK_ON: u8 = 255;
/// Em size used for glyph condition images before shrink-to-fit.
const GLYPH_START_PX: u32 = 256;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("text is empty")]
    EmptyText,
    #[error("box {bx:?} is not inside a {width}x{height} canvas")]
    BoxOutside { bx: TextBox, width: usize, height: usize },
    #[error("text {text:?} does not fit box {bx:?} even at {min_px} px")]
    TooLarge { text: String, bx: TextBox, min_px: u32 },
    #[error(transparent)]
    Font(#[from] FontError),
    #[error("canvas must be RGB, got {0} channels")]
    Channels(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderInfo {
    /// Em size actually used after shrink-to-fit.
    pub effective_px: u32,
}

/// The region outside of which a render leaves the canvas untouched.
pub fn dilated_box(bx: &TextBox, style: &StyleSpec) -> TextBox {
    bx.expand(style.outline_px as i64 + BLEED_PX)
}

/// Maps text-space offsets (from the line center) to canvas offsets:
/// italic shear followed by a counter-clockwise rotation.
#[derive(Debug, Clone, Copy)]
struct LineTransform {
    shear: f32,
    cos: f32,
    sin: f32,
}

impl LineTransform {
    fn new(shear: f32, rotation_deg: f32) -> Self {
        let r = rotation_deg.to_radians();
        Self {
            shear,
            cos: r.cos(),
            sin: r.sin(),
        }
    }

    fn forward(&self, u: f32, v: f32) -> (f32, f32) {
        let u = u - self.shear * v;
        (u * self.cos + v * self.sin, -u * self.sin + v * self.cos)
    }

    fn inverse(&self, x: f32, y: f32) -> (f32, f32) {
        let u = x * self.cos - y * self.sin;
        let v = x * self.sin + y * self.cos;
        (u + self.shear * v, v)
    }

    fn extents(&self, w: f32, h: f32) -> (f32, f32) {
        let mut mx = 0.0f32;
        let mut my = 0.0f32;
        for (u, v) in [(-w, -h), (w, -h), (-w, h), (w, h)] {
            let (x, y) = self.forward(u / 2.0, v / 2.0);
            mx = mx.max(x.abs());
            my = my.max(y.abs());
        }
        (2.0 * mx, 2.0 * my)
    }
}

fn fit_line(
    face: &Face,
    fonts: &FontSet,
    text: &str,
    start_px: u32,
    xf: &LineTransform,
    bx: &TextBox,
) -> Result<(Coverage, u32), RenderError> {
    let mut em = start_px.max(MIN_SIZE_PX);
    loop {
        let cov = face.render_line(text, em as f32, fonts.fallback());
        let (ew, eh) = xf.extents(cov.width as f32, cov.height as f32);
        if ew <= bx.w as f32 && eh <= bx.h as f32 {
            return Ok((cov, em));
        }
        if em <= MIN_SIZE_PX {
            return Err(RenderError::TooLarge {
                text: text.to_owned(),
                bx: *bx,
                min_px: MIN_SIZE_PX,
            });
        }
        let ratio = (bx.w as f32 / ew).min(bx.h as f32 / eh);
        let next = ((em as f32 * ratio).floor() as u32).min(em - 1);
        em = next.max(MIN_SIZE_PX);
    }
}

/// Samples the transformed line coverage over `region` (canvas coordinates).
fn place(cov: &Coverage, xf: &LineTransform, bx: &TextBox, region: &TextBox) -> Vec<f32> {
    let (cx, cy) = bx.center();
    let mut out = vec![0.0f32; region.area() as usize];
    for ry in 0..region.h {
        for rx in 0..region.w {
            let px = (region.x + rx) as f32 + 0.5 - cx;
            let py = (region.y + ry) as f32 + 0.5 - cy;
            let (u, v) = xf.inverse(px, py);
            out[(ry * region.w + rx) as usize] = cov.sample(u + cov.width as f32 / 2.0, v + cov.height as f32 / 2.0);
        }
    }
    out
}

fn dilate(values: &[f32], w: usize, h: usize, radius: u32) -> Vec<f32> {
    let r = radius as i64;
    let mut out = vec![0.0f32; values.len()];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut m = 0.0f32;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy > r * r {
                        continue;
                    }
                    let (sx, sy) = (x + dx, y + dy);
                    if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                        m = m.max(values[(sy as usize) * w + sx as usize]);
                    }
                }
            }
            out[(y as usize) * w + x as usize] = m;
        }
    }
    out
}

fn blend(dst: u8, src: u8, a: f32) -> u8 {
    (dst as f32 * (1.0 - a) + src as f32 * a).round().clamp(0.0, 255.0) as u8
}

fn check_text_and_box(text: &str, bx: &TextBox, width: usize, height: usize) -> Result<(), RenderError> {
    if text.trim().is_empty() {
        return Err(RenderError::EmptyText);
    }
    if !bx.fits_in(width, height) {
        return Err(RenderError::BoxOutside { bx: *bx, width, height });
    }
    Ok(())
}

/// Renders `text` with `style` centered in `bx`, shrinking the em size until
/// the rotated, sheared line fits. Only pixels inside [`dilated_box`] change.
pub fn render_text(
    fonts: &FontSet,
    text: &str,
    style: &StyleSpec,
    canvas: &Raster,
    bx: &TextBox,
) -> Result<(Raster, RenderInfo), RenderError> {
    if canvas.channels() != 3 {
        return Err(RenderError::Channels(canvas.channels()));
    }
    check_text_and_box(text, bx, canvas.width(), canvas.height())?;
    let face = fonts.face(style.font_id)?;
    let xf = LineTransform::new(if style.italic { ITALIC_SHEAR } else { 0.0 }, style.rotation_deg);
    let (cov, em) = fit_line(face, fonts, text, style.size_px, &xf, bx)?;

    let region = dilated_box(bx, style)
        .clip(canvas.width(), canvas.height())
        .expect("box inside canvas");
    let ink = place(&cov, &xf, bx, &region);
    let (rw, rh) = (region.w as usize, region.h as usize);
    let alpha = style.color[3] as f32 / 255.0;
    let luma = 0.299 * style.color[0] as f32 + 0.587 * style.color[1] as f32 + 0.114 * style.color[2] as f32;
    let outline_color = if luma > 127.5 { [0u8; 3] } else { [255u8; 3] };
    let outline = (style.outline_px > 0).then(|| dilate(&ink, rw, rh, style.outline_px));

    let mut out = canvas.clone();
    for ry in 0..rh {
        for rx in 0..rw {
            let i = ry * rw + rx;
            let (x, y) = (region.x as usize + rx, region.y as usize + ry);
            let p = out.pixel_mut(x, y);
            if let Some(o) = &outline {
                if o[i] > 0.0 {
                    for c in 0..3 {
                        p[c] = blend(p[c], outline_color[c], o[i] * alpha);
                    }
                }
            }
            if ink[i] > 0.0 {
                for c in 0..3 {
                    p[c] = blend(p[c], style.color[c], ink[i] * alpha);
                }
            }
        }
    }
    Ok((out, RenderInfo { effective_px: em }))
}

/// Glyph condition image: `text` in the standard face, dark on a white
/// single-channel field, upright and centered in `bx`. Style-independent.
pub fn render_glyph(fonts: &FontSet, text: &str, bx: &TextBox, dims: (usize, usize)) -> Result<Raster, RenderError> {
    check_text_and_box(text, bx, dims.0, dims.1)?;
    let xf = LineTransform::new(0.0, 0.0);
    let start = (bx.h as u32).clamp(MIN_SIZE_PX, GLYPH_START_PX);
    let (cov, _) = fit_line(fonts.standard(), fonts, text, start, &xf, bx)?;
    let ink = place(&cov, &xf, bx, bx);
    let mut out = Raster::filled(dims.0, dims.1, &[255]);
    for ry in 0..bx.h as usize {
        for rx in 0..bx.w as usize {
            let a = ink[ry * bx.w as usize + rx];
            if a > 0.0 {
                out.set(bx.x as usize + rx, bx.y as usize + ry, 0, blend(255, 0, a));
            }
        }
    }
    Ok(out)
}

/// Binary single-channel mask: [`MASK_ON`] inside `bx`, 0 elsewhere.
pub fn render_position_mask(bx: &TextBox, dims: (usize, usize)) -> Result<Raster, RenderError> {
    if !bx.fits_in(dims.0, dims.1) {
        return Err(RenderError::BoxOutside {
            bx: *bx,
            width: dims.0,
            height: dims.1,
        });
    }
    let mut out = Raster::new(dims.0, dims.1, 1);
    for y in bx.y..bx.bottom() {
        for x in bx.x..bx.right() {
            out.set(x as usize, y as usize, 0, MASK_ON);
        }
    }
    Ok(out)
}

/// Number of set pixels in a binary mask.
pub fn mask_area(mask: &Raster) -> usize {
    mask.data().iter().filter(|&&v| v != 0).count()
}

/// Copy of `image` with the part of `bx` inside the canvas set to [`MASK_FILL`].
pub fn make_masked_image(image: &Raster, bx: &TextBox) -> Raster {
    let mut out = image.clone();
    if let Some(r) = bx.clip(image.width(), image.height()) {
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                let p = out.pixel_mut(x as usize, y as usize);
                for (c, v) in p.iter_mut().enumerate() {
                    *v = MASK_FILL[c.min(2)];
                }
            }
        }
    }
    out
}
