use imtrans_core::eval::{bleu, contrast_structure_planes, l1_distance, ssim, ssim_planes, ComparisonTable, Tokenizer};
use imtrans_core::Raster;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force SSIM: explicit 2-D Gaussian weights, per-window sums.
fn reference_ssim(a: &Raster, b: &Raster) -> f64 {
    let (w, h) = a.dims();
    let gray = |r: &Raster| -> Vec<f64> {
        r.data()
            .chunks(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    };
    let (x, y) = (gray(a), gray(b));
    let mut win = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = ((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
            *v = (-d2).exp();
            norm += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / norm;
                    let idx = (oy + i) * w + ox + j;
                    mx += k * x[idx];
                    my += k * y[idx];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / norm;
                    let idx = (oy + i) * w + ox + j;
                    vx += k * (x[idx] - mx).powi(2);
                    vy += k * (y[idx] - my).powi(2);
                    cov += k * (x[idx] - mx) * (y[idx] - my);
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn random_pair(rng: &mut ChaCha8Rng) -> (Raster, Raster) {
    let mut a = Raster::new(64, 64, 3);
    rng.fill(a.data_mut());
    let mut b = a.clone();
    let noise: i32 = rng.gen_range(5..120);
    for v in b.data_mut() {
        *v = (*v as i32 + rng.gen_range(-noise..=noise)).clamp(0, 255) as u8;
    }
    (a, b)
}

#[test]
fn ssim_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (a, b) = random_pair(&mut rng);
        let fast = ssim(&a, &b).unwrap();
        let slow = reference_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        assert!((-1.0..=1.0).contains(&fast));
    }
}

#[test]
fn ssim_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (a, _) = random_pair(&mut rng);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn contrast_structure_is_offset_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let x: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..200.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| (v + rng.gen_range(-30.0..30.0f64)).clamp(0.0, 200.0))
            .collect();
        let c = rng.gen_range(1.0..55.0);
        let xs: Vec<f64> = x.iter().map(|v| v + c).collect();
        let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
        let d = contrast_structure_planes(&x, &y, 32, 32) - contrast_structure_planes(&xs, &ys, 32, 32);
        assert!(d.abs() < 1e-6, "{d}");
        assert!((ssim_planes(&xs, &xs, 32, 32) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn l1_triangle_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let mut r = [Raster::new(16, 16, 3), Raster::new(16, 16, 3), Raster::new(16, 16, 3)];
        for x in &mut r {
            rng.fill(x.data_mut());
        }
        let d = |i: usize, j: usize| l1_distance(&r[i], &r[j]).unwrap();
        assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
    }
}

#[test]
fn bleu_hand_example() {
    let b = bleu(
        &["the the the the".into()],
        &["the cat is here".into()],
        Tokenizer::Whitespace,
    )
    .unwrap();
    assert_eq!(b.precision(1), 0.25);
    assert_eq!(b.brevity_penalty, 1.0);
}

#[test]
fn comparison_table_matches_fixture() {
    let expected = include_str!("fixtures/comparison_table.md");
    assert_eq!(ComparisonTable::published_baselines().to_markdown(), expected);
}
