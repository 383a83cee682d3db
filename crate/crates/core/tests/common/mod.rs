#![allow(dead_code)]

use image::{Rgb, RgbImage};
use nbb_core::{Coord, FeaturePyramid, Region, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    let data = (0..c * h * w).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor3::from_vec(c, h, w, data).unwrap()
}

pub fn crop(t: &Tensor3, r: &Region) -> Tensor3 {
    let mut out = Tensor3::zeros(t.channels(), r.height(), r.width());
    for c in 0..t.channels() {
        for y in 0..r.height() {
            for x in 0..r.width() {
                out.set(c, y, x, t.get(c, r.y0 + y, r.x0 + x));
            }
        }
    }
    out
}

pub fn random_region(rng: &mut ChaCha8Rng, level: usize, h: usize, w: usize) -> Region {
    let (x0, x1) = {
        let a = rng.gen_range(0..w);
        let b = rng.gen_range(0..w);
        (a.min(b), a.max(b))
    };
    let (y0, y1) = {
        let a = rng.gen_range(0..h);
        let b = rng.gen_range(0..h);
        (a.min(b), a.max(b))
    };
    Region::new(level, x0, y0, x1, y1).unwrap()
}

/// Patch similarity straight from its definition, in f64.
pub fn similarity_oracle(a: &Tensor3, b: &Tensor3, p: Coord, q: Coord, nbhd: usize) -> f64 {
    let unit = |t: &Tensor3, x: usize, y: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..t.channels()).map(|c| t.get(c, y, x) as f64).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n == 0.0 {
            v
        } else {
            v.iter().map(|x| x / n).collect()
        }
    };
    let half = (nbhd / 2) as isize;
    let mut d = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let (px, py) = (p.x as isize + dx, p.y as isize + dy);
            let (qx, qy) = (q.x as isize + dx, q.y as isize + dy);
            let ok_a = px >= 0 && py >= 0 && px < a.width() as isize && py < a.height() as isize;
            let ok_b = qx >= 0 && qy >= 0 && qx < b.width() as isize && qy < b.height() as isize;
            if ok_a && ok_b {
                let ua = unit(a, px as usize, py as usize);
                let ub = unit(b, qx as usize, qy as usize);
                d += ua.iter().zip(&ub).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    d
}

/// All mutual nearest neighbours by exhaustive comparison of a score table;
/// ties go to the smallest row-major index.
pub fn mutual_nn_oracle(scores: &[Vec<f32>]) -> Vec<(usize, usize)> {
    let n_a = scores.len();
    let n_b = scores.first().map_or(0, |r| r.len());
    let mut out = Vec::new();
    for i in 0..n_a {
        let mut best_j = 0;
        for j in 0..n_b {
            if scores[i][j] > scores[i][best_j] {
                best_j = j;
            }
        }
        let mut best_i = 0;
        for k in 0..n_a {
            if scores[k][best_j] > scores[best_i][best_j] {
                best_i = k;
            }
        }
        if best_i == i {
            out.push((i, best_j));
        }
    }
    out
}

/// Black image with a bright disk.
pub fn blob_image(size: u32, cx: f32, cy: f32, radius: f32) -> RgbImage {
    RgbImage::from_fn(size, size, |x, y| {
        let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
        let v = (255.0 * (1.0 - (d - radius).clamp(0.0, 1.0))) as u8;
        Rgb([v, v, (v as f32 * 0.8) as u8])
    })
}

/// A deterministic image with shapes and gradients.
pub fn scene_image(size: u32, variant: u32) -> RgbImage {
    let s = size as f32;
    RgbImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f32 / s, y as f32 / s);
        let mut c =
            [40.0 + 60.0 * fx, 30.0 + 50.0 * fy, 80.0 + 40.0 * ((fx * 7.0 + variant as f32).sin() * (fy * 5.0).cos())];
        let shapes = [
            (0.3 + 0.05 * variant as f32, 0.35, 0.15, [220.0, 60.0, 40.0]),
            (0.7, 0.6 - 0.04 * variant as f32, 0.12, [40.0, 200.0, 90.0]),
            (0.45, 0.78, 0.08, [250.0, 240.0, 60.0]),
        ];
        for (sx, sy, r, col) in shapes {
            if (fx - sx).powi(2) + (fy - sy).powi(2) < r * r {
                c = col;
            }
        }
        if (fx - 0.8).abs() < 0.08 && (fy - 0.2).abs() < 0.05 {
            c = [20.0, 20.0, 230.0];
        }
        Rgb([c[0] as u8, c[1] as u8, c[2] as u8])
    })
}

/// A pyramid with the given random level features (finest first, 5 levels
/// with halving sizes starting at `side`).
pub fn random_pyramid(seed: u64, side: usize, channels: [usize; 5]) -> FeaturePyramid {
    let mut r = rng(seed);
    let feats = (0..5)
        .map(|l| {
            let t = random_tensor(&mut r, channels[l], side >> l, side >> l);
            Tensor3::from_vec(t.channels(), t.height(), t.width(), t.data().iter().map(|v| v.max(0.0)).collect())
                .unwrap()
        })
        .collect();
    FeaturePyramid::from_features(feats, (side, side), (side, side)).unwrap()
}
