//! Straightforward reference Canny: direct 2-D convolution, angle-binned
//! non-maximum suppression and fixed-point hysteresis. Slow on purpose.

#![allow(dead_code)]

use bimangen::seed::splitmix64;

pub struct Params {
    pub sigma: f64,
    pub ksize: usize,
    pub low: u8,
    pub high: u8,
}

pub const DEFAULT: Params = Params { sigma: 1.4, ksize: 5, low: 50, high: 150 };

fn px(img: &[u8], w: usize, h: usize, x: i64, y: i64) -> i64 {
    let x = x.max(0).min(w as i64 - 1) as usize;
    let y = y.max(0).min(h as i64 - 1) as usize;
    img[y * w + x] as i64
}

/// 1-D Gaussian taps scaled to 4096, rounding drift moved into the center.
pub fn taps(sigma: f64, n: usize) -> Vec<i64> {
    let c = (n / 2) as i64;
    let g: Vec<f64> = (0..n as i64).map(|i| (-((i - c) * (i - c)) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let mut t: Vec<i64> = g.iter().map(|v| (4096.0 * v / s).round() as i64).collect();
    let drift = 4096 - t.iter().sum::<i64>();
    t[n / 2] += drift;
    t
}

pub fn blur(img: &[u8], w: usize, h: usize, sigma: f64, n: usize) -> Vec<u8> {
    let t = taps(sigma, n);
    let r = (n / 2) as i64;
    let mut out = vec![0u8; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0i64;
            for j in 0..n as i64 {
                for i in 0..n as i64 {
                    acc += t[j as usize] * t[i as usize] * px(img, w, h, x + i - r, y + j - r);
                }
            }
            out[y as usize * w + x as usize] = ((acc + (1 << 23)) / (1 << 24)) as u8;
        }
    }
    out
}

pub fn canny(img: &[u8], w: usize, h: usize, p: &Params) -> Vec<bool> {
    let b = blur(img, w, h, p.sigma, p.ksize);
    const KX: [[i64; 3]; 3] = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]];
    const KY: [[i64; 3]; 3] = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]];
    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let (mut sx, mut sy) = (0, 0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = px(&b, w, h, x + i as i64 - 1, y + j as i64 - 1);
                    sx += KX[j][i] * v;
                    sy += KY[j][i] * v;
                }
            }
            gx[y as usize * w + x as usize] = sx;
            gy[y as usize * w + x as usize] = sy;
        }
    }
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| ((a * a + b * b) as f64).sqrt()).collect();
    let at = |x: i64, y: i64| {
        let x = x.max(0).min(w as i64 - 1) as usize;
        let y = y.max(0).min(h as i64 - 1) as usize;
        mag[y * w + x]
    };

    // keep local maxima: strictly above the raster-earlier neighbor, at
    // least the raster-later one
    let mut thin = vec![0.0f64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let k = y as usize * w + x as usize;
            if mag[k] == 0.0 {
                continue;
            }
            let mut deg = (gy[k] as f64).atan2(gx[k] as f64).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            let (dx, dy) = if !(22.5..157.5).contains(&deg) {
                (1, 0)
            } else if deg < 67.5 {
                (1, 1)
            } else if deg < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (early, late) =
                if dy == 0 { (at(x - 1, y), at(x + 1, y)) } else { (at(x - dx, y - dy), at(x + dx, y + dy)) };
            if mag[k] > early && mag[k] >= late {
                thin[k] = mag[k];
            }
        }
    }

    let mut on: Vec<bool> = thin.iter().map(|&m| m > 0.0 && m >= p.high as f64).collect();
    let weak: Vec<bool> = thin.iter().map(|&m| m > 0.0 && m >= p.low as f64).collect();
    loop {
        let mut changed = false;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let k = y as usize * w + x as usize;
                if on[k] || !weak[k] {
                    continue;
                }
                let touches = (-1..=1).any(|j: i64| {
                    (-1..=1).any(|i: i64| {
                        let (nx, ny) = (x + i, y + j);
                        nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && on[ny as usize * w + nx as usize]
                    })
                });
                if touches {
                    on[k] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return on;
        }
    }
}

/// Deterministic test images: noise, blocks and noisy ramps with a patch.
pub fn random_image(k: u64, w: usize, h: usize) -> Vec<u8> {
    let mut s = splitmix64(0xC0FFEE ^ k);
    let mut next = move || {
        s = splitmix64(s);
        s
    };
    match k % 3 {
        0 => (0..w * h).map(|_| next() as u8).collect(),
        1 => {
            let cells: Vec<u8> = (0..64).map(|_| next() as u8).collect();
            (0..w * h).map(|i| cells[((i / w) / 8 % 8) * 8 + (i % w) / 8 % 8]).collect()
        }
        _ => {
            let r = [
                next() as usize % (w / 2),
                next() as usize % (h / 2),
                8 + next() as usize % (w / 3),
                8 + next() as usize % (h / 3),
            ];
            let fill = next() % 256;
            (0..w * h)
                .map(|i| {
                    let (x, y) = (i % w, i / w);
                    let ramp = (x * 3 + y * 2) as i64;
                    let base =
                        if x >= r[0] && x < r[0] + r[2] && y >= r[1] && y < r[1] + r[3] { fill as i64 } else { ramp };
                    (base + (next() % 41) as i64 - 20).clamp(0, 255) as u8
                })
                .collect()
        }
    }
}

/// Vertical step, horizontal step, diagonal half plane, disc, checkerboard.
pub fn structured_images(w: usize, h: usize) -> Vec<(&'static str, Vec<u8>)> {
    let f = |g: &dyn Fn(usize, usize) -> u8| (0..w * h).map(|i| g(i % w, i / w)).collect::<Vec<u8>>();
    vec![
        ("vertical_step", f(&|x, _| if x < w / 2 { 0 } else { 255 })),
        ("horizontal_step", f(&|_, y| if y < h / 2 { 40 } else { 200 })),
        ("diagonal", f(&|x, y| if x + y < w { 30 } else { 220 })),
        (
            "disc",
            f(&|x, y| {
                let (dx, dy) = (x as f64 - 31.5, y as f64 - 31.5);
                if dx * dx + dy * dy < 400.0 {
                    230
                } else {
                    20
                }
            }),
        ),
        ("checker", f(&|x, y| if (x / 8 + y / 8) % 2 == 0 { 60 } else { 190 })),
    ]
}
