mod support;

use bimangen::edgecontrol::{canny, gaussian_kernel_q12, CannyParams};
use bimangen::raster::GrayImage;
use support::canny_oracle as oracle;

fn lib(img: &[u8], p: &oracle::Params) -> Vec<bool> {
    let params =
        CannyParams { gaussian_sigma: p.sigma, kernel_size: p.ksize, low_threshold: p.low, high_threshold: p.high };
    let g = GrayImage::from_raw(64, 64, img.to_vec()).unwrap();
    let e = canny(&g, &params).unwrap();
    (0..64 * 64).map(|i| e.is_edge(i % 64, i / 64)).collect()
}

#[test]
fn kernel_taps_agree() {
    for (s, n) in [(1.4, 5), (1.0, 3), (2.0, 7), (0.8, 5), (3.0, 9)] {
        let t: Vec<u32> = oracle::taps(s, n).into_iter().map(|v| v as u32).collect();
        assert_eq!(t, gaussian_kernel_q12(s, n), "sigma {s} size {n}");
    }
}

#[test]
fn random_images_match_oracle() {
    let variants = [
        oracle::DEFAULT,
        oracle::Params { sigma: 1.0, ksize: 3, low: 30, high: 90 },
        oracle::Params { sigma: 2.0, ksize: 7, low: 20, high: 60 },
    ];
    let mut with_edges = 0;
    for k in 0..50u64 {
        let img = oracle::random_image(k, 64, 64);
        let p = &variants[k as usize % variants.len()];
        let want = oracle::canny(&img, 64, 64, p);
        assert_eq!(lib(&img, p), want, "image {k}");
        with_edges += want.iter().any(|&e| e) as usize;
    }
    assert!(with_edges >= 45, "only {with_edges} images produced edges");
}

#[test]
fn structured_fixtures_match_oracle() {
    for (name, img) in oracle::structured_images(64, 64) {
        let want = oracle::canny(&img, 64, 64, &oracle::DEFAULT);
        assert!(want.iter().any(|&e| e), "{name} has no edges");
        assert_eq!(lib(&img, &oracle::DEFAULT), want, "{name}");
    }
}

#[test]
fn vertical_step_gives_one_band() {
    let (_, img) = oracle::structured_images(64, 64).remove(0);
    let e = lib(&img, &oracle::DEFAULT);
    for y in 0..64 {
        let cols: Vec<usize> = (0..64).filter(|&x| e[y * 64 + x]).collect();
        assert!(!cols.is_empty(), "row {y}");
        assert!(cols.iter().all(|&x| (30..=33).contains(&x)), "row {y}: {cols:?}");
    }
}
