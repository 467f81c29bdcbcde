use imtrans_core::corpus::ImagePair;
use imtrans_core::Raster;

use crate::tensor::{Scalar, Tensor};

/// RGB raster → 1×3×H×W in [−1, 1].
pub fn image_tensor<F: Scalar>(r: &Raster) -> Tensor<F> {
    let rgb = r.to_rgb();
    let (w, h) = rgb.dims();
    let mut out = vec![F::zero(); 3 * w * h];
    for (i, p) in rgb.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * w * h + i] = F::of(p[c] as f64 / 127.5 - 1.0);
        }
    }
    Tensor::from_vec(&[1, 3, h, w], out)
}

/// Glyph raster (dark ink on white) → 1×1×H×W ink coverage in [0, 1].
pub fn ink_tensor<F: Scalar>(glyph: &Raster) -> Tensor<F> {
    let g = glyph.to_gray();
    let (w, h) = g.dims();
    Tensor::from_vec(
        &[1, 1, h, w],
        g.data().iter().map(|&v| F::of((255 - v) as f64 / 255.0)).collect(),
    )
}

/// Position mask raster → 1×1×H×W in [0, 1].
pub fn mask_tensor<F: Scalar>(mask: &Raster) -> Tensor<F> {
    let g = mask.to_gray();
    let (w, h) = g.dims();
    Tensor::from_vec(
        &[1, 1, h, w],
        g.data().iter().map(|&v| F::of(v as f64 / 255.0)).collect(),
    )
}

/// Item `index` of an N×3×H×W tensor in [−1, 1] → RGB raster.
pub fn tensor_to_raster<F: Scalar>(t: &Tensor<F>, index: usize) -> Raster {
    let (_, c, h, w) = t.dims4();
    assert_eq!(c, 3, "expected RGB tensor");
    let plane = &t.data()[index * 3 * h * w..(index + 1) * 3 * h * w];
    let mut data = vec![0u8; 3 * w * h];
    for i in 0..w * h {
        for ch in 0..3 {
            let v = plane[ch * w * h + i].to_f64().unwrap_or(0.0);
            data[i * 3 + ch] = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
        }
    }
    Raster::from_vec(w, h, 3, data).expect("consistent dims")
}

/// Rule-based generation prompt for text `y` in language `lang`. The text
/// appears verbatim between ASCII double quotes.
pub fn region_prompt(y: &str, lang: &str) -> String {
    match lang {
        "zh" => format!("图像上渲染的文字 \"{y}\""),
        "fr" => format!("Texte \"{y}\" rendu sur l'image"),
        "de" => format!("Text \"{y}\" im Bild dargestellt"),
        _ => format!("Text \"{y}\" rendered on the image"),
    }
}

/// Conditioning inputs for one or more items, all at canvas resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CondImages<F> {
    /// S (or the cropped S^p at inference).
    pub style: Tensor<F>,
    pub background: Tensor<F>,
    /// l_g as ink coverage.
    pub glyph: Tensor<F>,
    /// l_p in {0, 1}.
    pub position: Tensor<F>,
    /// l_m.
    pub masked: Tensor<F>,
    pub prompts: Vec<String>,
}

impl<F: Scalar> CondImages<F> {
    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn canvas(&self) -> (usize, usize) {
        let (_, _, h, w) = self.style.dims4();
        (w, h)
    }

    pub fn from_rasters(
        style: &Raster,
        background: &Raster,
        glyph: &Raster,
        position: &Raster,
        masked: &Raster,
        prompt: &str,
    ) -> Self {
        Self {
            style: image_tensor(style),
            background: image_tensor(background),
            glyph: ink_tensor(glyph),
            position: mask_tensor(position),
            masked: image_tensor(masked),
            prompts: vec![prompt.to_owned()],
        }
    }

    pub fn stack(items: &[&Self]) -> Self {
        let pick = |f: fn(&Self) -> &Tensor<F>| Tensor::stack(&items.iter().map(|i| f(i)).collect::<Vec<_>>());
        Self {
            style: pick(|i| &i.style),
            background: pick(|i| &i.background),
            glyph: pick(|i| &i.glyph),
            position: pick(|i| &i.position),
            masked: pick(|i| &i.masked),
            prompts: items.iter().flat_map(|i| i.prompts.iter().cloned()).collect(),
        }
    }

    pub fn cast<G: Scalar>(&self) -> CondImages<G> {
        CondImages {
            style: self.style.cast(),
            background: self.background.cast(),
            glyph: self.glyph.cast(),
            position: self.position.cast(),
            masked: self.masked.cast(),
            prompts: self.prompts.clone(),
        }
    }
}

/// One training example: conditioning plus the target image T.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem<F> {
    pub pair_id: u64,
    pub cond: CondImages<F>,
    pub target: Tensor<F>,
}

impl<F: Scalar> TrainItem<F> {
    /// The prompt is [`region_prompt`] of the target text.
    pub fn from_pair(pair: &ImagePair) -> Self {
        Self {
            pair_id: pair.pair_id,
            cond: CondImages::from_rasters(
                &pair.source,
                &pair.background,
                &pair.glyph,
                &pair.position,
                &pair.masked,
                &region_prompt(&pair.tgt_text, &pair.tgt_lang),
            ),
            target: image_tensor(&pair.target),
        }
    }

    pub fn cast<G: Scalar>(&self) -> TrainItem<G> {
        TrainItem {
            pair_id: self.pair_id,
            cond: self.cond.cast(),
            target: self.target.cast(),
        }
    }
}

/// Stacked items.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub cond: CondImages<F>,
    pub target: Tensor<F>,
}

impl<F: Scalar> Batch<F> {
    pub fn collate(items: &[&TrainItem<F>]) -> Self {
        Self {
            cond: CondImages::stack(&items.iter().map(|i| &i.cond).collect::<Vec<_>>()),
            target: Tensor::stack(&items.iter().map(|i| &i.target).collect::<Vec<_>>()),
        }
    }

    pub fn len(&self) -> usize {
        self.cond.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cond.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_round_trip() {
        let mut r = Raster::new(5, 4, 3);
        for (i, v) in r.data_mut().iter_mut().enumerate() {
            *v = (i * 13 % 256) as u8;
        }
        let t: Tensor<f32> = image_tensor(&r);
        assert_eq!(t.shape(), &[1, 3, 4, 5]);
        assert_eq!(tensor_to_raster(&t, 0), r);
    }

    #[test]
    fn ink_and_mask_ranges() {
        let g = Raster::filled(2, 2, &[255]);
        assert!(ink_tensor::<f64>(&g).data().iter().all(|&v| v == 0.0));
        let m = Raster::filled(2, 2, &[255]);
        assert!(mask_tensor::<f64>(&m).data().iter().all(|&v| v == 1.0));
    }
}
