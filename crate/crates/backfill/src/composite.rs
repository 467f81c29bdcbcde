use imtrans_core::{Raster, TextBox};

use crate::BackfillError;

/// Alpha of a pixel `d` px inside the box border (0 on the border row).
fn feather_alpha(d: i64, feather_px: usize) -> f32 {
    if feather_px == 0 {
        1.0
    } else {
        ((d + 1) as f32 / (feather_px + 1) as f32).min(1.0)
    }
}

/// Pastes `patch` (box-sized) over `base` at `bx`, ramping alpha linearly
/// over the innermost `feather_px` pixels of the box border. Pixels outside
/// `bx` are untouched.
pub fn composite(base: &Raster, patch: &Raster, bx: &TextBox, feather_px: usize) -> Result<Raster, BackfillError> {
    if !bx.fits_in(base.width(), base.height()) {
        return Err(BackfillError::Dims(format!("box {bx:?} outside {:?}", base.dims())));
    }
    if patch.dims() != (bx.w as usize, bx.h as usize) || patch.channels() != base.channels() {
        return Err(BackfillError::Dims(format!(
            "patch {:?}x{} for box {}x{} on {}-channel image",
            patch.dims(),
            patch.channels(),
            bx.w,
            bx.h,
            base.channels()
        )));
    }
    let mut out = base.clone();
    let c = base.channels();
    for py in 0..bx.h {
        for px in 0..bx.w {
            let d = px.min(py).min(bx.w - 1 - px).min(bx.h - 1 - py);
            let a = feather_alpha(d, feather_px);
            let (x, y) = ((bx.x + px) as usize, (bx.y + py) as usize);
            for k in 0..c {
                let b = base.get(x, y, k) as f32;
                let p = patch.get(px as usize, py as usize, k) as f32;
                out.set(x, y, k, (b + a * (p - b)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(out)
}
