use imtrans_core::{Raster, TextBox};

use crate::BackfillError;

/// A region crop and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub image: Raster,
    /// Effective (padded, clipped) box in image coordinates.
    pub paste_box: TextBox,
    /// The requested box, clipped, in crop coordinates.
    pub inner_box: TextBox,
}

/// Crops `bx` grown by `pad_px` on every side, clipped to the image.
pub fn crop_region(image: &Raster, bx: &TextBox, pad_px: usize) -> Result<Crop, BackfillError> {
    let (w, h) = image.dims();
    let inner = bx.clip(w, h).ok_or(BackfillError::DegenerateBox(*bx))?;
    let paste_box = bx
        .expand(pad_px as i64)
        .clip(w, h)
        .ok_or(BackfillError::DegenerateBox(*bx))?;
    let inner_box = TextBox::new(inner.x - paste_box.x, inner.y - paste_box.y, inner.w, inner.h);
    Ok(Crop {
        image: image.crop(&paste_box)?,
        paste_box,
        inner_box,
    })
}

impl Crop {
    /// Writes the (possibly modified) crop back at its paste box.
    pub fn paste_into(&self, target: &mut Raster, patch: &Raster) -> Result<(), BackfillError> {
        if patch.dims() != self.image.dims() {
            return Err(BackfillError::Dims(format!(
                "patch {:?} vs crop {:?}",
                patch.dims(),
                self.image.dims()
            )));
        }
        target.paste(patch, self.paste_box.x as usize, self.paste_box.y as usize)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Raster {
        let mut r = Raster::new(w, h, 3);
        for (i, v) in r.data_mut().iter_mut().enumerate() {
            *v = (i * 7 % 256) as u8;
        }
        r
    }

    #[test]
    fn interior_box_without_padding() {
        let img = ramp(32, 24);
        let c = crop_region(&img, &TextBox::new(5, 6, 10, 4), 0).unwrap();
        assert_eq!(c.image.dims(), (10, 4));
        assert_eq!(c.paste_box, TextBox::new(5, 6, 10, 4));
        assert_eq!(c.inner_box, TextBox::new(0, 0, 10, 4));
    }

    #[test]
    fn corner_box_is_clipped() {
        let img = ramp(32, 24);
        let c = crop_region(&img, &TextBox::new(0, 0, 6, 5), 4).unwrap();
        assert_eq!(c.paste_box, TextBox::new(0, 0, 10, 9));
        assert_eq!(c.image.dims(), (10, 9));
        assert_eq!(c.inner_box, TextBox::new(0, 0, 6, 5));
        let c = crop_region(&img, &TextBox::new(28, 20, 4, 4), 4).unwrap();
        assert_eq!(c.paste_box, TextBox::new(24, 16, 8, 8));
        assert_eq!(c.inner_box, TextBox::new(4, 4, 4, 4));
    }

    #[test]
    fn crop_then_paste_is_identity() {
        let img = ramp(32, 24);
        let c = crop_region(&img, &TextBox::new(20, 3, 15, 9), 3).unwrap();
        let mut out = img.clone();
        c.paste_into(&mut out, &c.image).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn degenerate_boxes_fail() {
        let img = ramp(8, 8);
        assert!(matches!(
            crop_region(&img, &TextBox::new(9, 9, 3, 3), 2),
            Err(BackfillError::DegenerateBox(_))
        ));
        assert!(crop_region(&img, &TextBox::new(2, 2, 0, 3), 2).is_err());
    }
}
