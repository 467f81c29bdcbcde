use thiserror::Error;

use crate::raster::Raster;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of 8-bit images.
pub const VALUE_RANGE: f64 = 255.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    Dims((usize, usize, usize), (usize, usize, usize)),
    #[error("image {0}x{1} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")]
    TooSmall(usize, usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("hypothesis count {0} differs from reference count {1}")]
    Length(usize, usize),
}

fn shape(r: &Raster) -> (usize, usize, usize) {
    (r.width(), r.height(), r.channels())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `w`×`h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM on luma with an 11×11 Gaussian window (σ = 1.5),
/// evaluated at every position where the window fits.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::Dims(shape(a), shape(b)));
    }
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(MetricError::TooSmall(w, h));
    }
    Ok(ssim_planes(&a.luma(), &b.luma(), w, h))
}

/// SSIM on raw planes in [0, 255].
pub fn ssim_planes(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    ssim_terms(x, y, w, h).0
}

/// Mean of the contrast-structure factor alone. Unlike full SSIM it does not
/// change when the same constant is added to both planes.
pub fn contrast_structure_planes(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    ssim_terms(x, y, w, h).1
}

fn ssim_terms(x: &[f64], y: &[f64], w: usize, h: usize) -> (f64, f64) {
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (0.01 * VALUE_RANGE).powi(2);
    let c2 = (0.03 * VALUE_RANGE).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, &k);
    let my = filter_valid(y, w, h, &k);
    let sxx = filter_valid(&xx, w, h, &k);
    let syy = filter_valid(&yy, w, h, &k);
    let sxy = filter_valid(&xy, w, h, &k);
    let (mut total, mut cs_total) = (0.0, 0.0);
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        let cs = (2.0 * cov + c2) / (vx + vy + c2);
        cs_total += cs;
        total += (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1) * cs;
    }
    let n = mx.len() as f64;
    (total / n, cs_total / n)
}

/// Mean absolute per-channel difference over the value range, in [0, 1].
pub fn l1_distance(a: &Raster, b: &Raster) -> Result<f64, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::Dims(shape(a), shape(b)));
    }
    if a.data().is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as i32 - q as i32).unsigned_abs() as u64)
        .sum();
    Ok(sum as f64 / (a.data().len() as f64 * VALUE_RANGE))
}

/// [`l1_distance`] restricted to pixels where `mask` (single channel) is
/// nonzero. An empty mask gives 0.
pub fn masked_l1_distance(a: &Raster, b: &Raster, mask: &Raster) -> Result<f64, MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::Dims(shape(a), shape(b)));
    }
    let m = mask.to_gray();
    if (m.width(), m.height()) != (a.width(), a.height()) {
        return Err(MetricError::Dims(shape(a), shape(mask)));
    }
    let c = a.channels();
    let mut sum = 0u64;
    let mut count = 0usize;
    for (i, &mv) in m.data().iter().enumerate() {
        if mv == 0 {
            continue;
        }
        for k in 0..c {
            sum += (a.data()[i * c + k] as i32 - b.data()[i * c + k] as i32).unsigned_abs() as u64;
        }
        count += c;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum as f64 / (count as f64 * VALUE_RANGE))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_symmetry() {
        let mut a = Raster::new(20, 16, 3);
        let mut b = Raster::new(20, 16, 3);
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = (i * 37 % 251) as u8;
        }
        for (i, v) in b.data_mut().iter_mut().enumerate() {
            *v = (i * 91 % 241) as u8;
        }
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }

    #[test]
    fn rejects_small_and_mismatched() {
        assert!(matches!(
            ssim(&Raster::new(10, 20, 1), &Raster::new(10, 20, 1)),
            Err(MetricError::TooSmall(10, 20))
        ));
        assert!(matches!(
            ssim(&Raster::new(12, 12, 1), &Raster::new(12, 13, 1)),
            Err(MetricError::Dims(..))
        ));
        assert!(l1_distance(&Raster::new(2, 2, 1), &Raster::new(2, 2, 3)).is_err());
    }

    #[test]
    fn masked_l1_counts_only_masked_pixels() {
        let a = Raster::filled(4, 1, &[0, 0, 0]);
        let mut b = a.clone();
        b.data_mut()[..3].copy_from_slice(&[255, 255, 255]);
        let mut mask = Raster::new(4, 1, 1);
        mask.data_mut()[0] = 255;
        mask.data_mut()[1] = 255;
        assert_eq!(masked_l1_distance(&a, &b, &mask).unwrap(), 0.5);
        assert_eq!(masked_l1_distance(&a, &b, &Raster::new(4, 1, 1)).unwrap(), 0.0);
        assert!(masked_l1_distance(&a, &b, &Raster::new(3, 1, 1)).is_err());
    }

    #[test]
    fn l1_endpoints_and_half() {
        let black = Raster::new(8, 8, 3);
        let white = Raster::filled(8, 8, &[255, 255, 255]);
        assert_eq!(l1_distance(&black, &black).unwrap(), 0.0);
        assert_eq!(l1_distance(&black, &white).unwrap(), 1.0);
        let mut half = black.clone();
        for y in 0..4 {
            for x in 0..8 {
                half.pixel_mut(x, y).copy_from_slice(&[255, 255, 255]);
            }
        }
        assert_eq!(l1_distance(&black, &half).unwrap(), 0.5);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(11, 1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(k[i], k[10 - i]);
        }
    }
}
