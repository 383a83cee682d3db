//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, and exits non-zero if any fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use image::RgbImage;
use nbb_core::backbone::image_pyramid;
use nbb_core::document::KeypointPair;
use nbb_core::engine::NbbConfig;
use nbb_core::{
    align_pair, bilinear_resize, common_appearance, conv2d, eval_pck, find_nbbs, load_weights, match_images, maxpool2,
    mls_map, normalize_activations, patch_similarity, run_nbb, AnnotationDocument, BackboneWeights, Buddy, ControlSet,
    ConvLayer, Coord, MatchOptions, Pixel, Point2, RegionPair, Tensor3,
};
use rand::Rng;

const WEIGHT_SEED: u64 = 2018;

fn weights() -> BackboneWeights {
    // Written to disk and read back so the NBBW path is exercised too.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("random.nbbw");
    BackboneWeights::randomized(WEIGHT_SEED).save(&path).unwrap();
    load_weights(&path).unwrap()
}

fn opts(side: usize, k: usize, gamma: f32, threads: usize) -> MatchOptions {
    MatchOptions { k, gamma, side, seed: 0, threads: Some(threads) }
}

fn max_abs(a: &Tensor3, b: &Tensor3) -> f32 {
    assert_eq!((a.channels(), a.height(), a.width()), (b.channels(), b.height(), b.width()));
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn kernel_oracles() -> String {
    let start = Instant::now();
    let mut r = rng(100);
    let mut worst = 0.0f32;
    for case in 0..50 {
        let c = r.gen_range(1..=4);
        let h = 2 * r.gen_range(1..=4);
        let w = 2 * r.gen_range(1..=4);
        let x = random_tensor(&mut r, c, h, w);

        // conv: quadruple loop with explicit zero padding
        let o = r.gen_range(1..=4);
        let k = if case % 3 == 0 { 1 } else { 3 };
        let wts: Vec<f32> = (0..o * c * k * k).map(|_| r.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f32> = (0..o).map(|_| r.gen_range(-1.0..1.0)).collect();
        let layer = ConvLayer::new("t", o, c, k, k, wts, bias).unwrap();
        let pad = k / 2;
        let mut want = Tensor3::zeros(o, h, w);
        for oc in 0..o {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = layer.biases[oc] as f64;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad as isize;
                                let ix = xx as isize + kx as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                    acc += layer.weight(oc, ic, ky, kx) as f64
                                        * x.get(ic, iy as usize, ix as usize) as f64;
                                }
                            }
                        }
                    }
                    want.set(oc, y, xx, acc as f32);
                }
            }
        }
        worst = worst.max(max_abs(&conv2d(&x, &layer, pad).unwrap(), &want));

        // pool: window scan
        let mut want = Tensor3::zeros(c, h / 2, w / 2);
        for ch in 0..c {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| x.get(ch, 2 * y + dy, 2 * xx + dx))
                        .fold(f32::NEG_INFINITY, f32::max);
                    want.set(ch, y, xx, m);
                }
            }
        }
        worst = worst.max(max_abs(&maxpool2(&x).unwrap(), &want));

        // resize: corner-aligned bilinear in f64
        let (nh, nw) = (r.gen_range(1..=8), r.gen_range(1..=8));
        let mut want = Tensor3::zeros(c, nh, nw);
        let src = |i: usize, s: usize, d: usize| {
            if d == 1 || s == 1 {
                0.0
            } else {
                i as f64 * (s - 1) as f64 / (d - 1) as f64
            }
        };
        for ch in 0..c {
            for y in 0..nh {
                for xx in 0..nw {
                    let (sy, sx) = (src(y, h, nh), src(xx, w, nw));
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                    let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                    let g = |yy: usize, xv: usize| x.get(ch, yy, xv) as f64;
                    let v = (1.0 - ty) * ((1.0 - tx) * g(y0, x0) + tx * g(y0, x1))
                        + ty * ((1.0 - tx) * g(y1, x0) + tx * g(y1, x1));
                    want.set(ch, y, xx, v as f32);
                }
            }
        }
        worst = worst.max(max_abs(&bilinear_resize(&x, nh, nw).unwrap(), &want));
    }
    let elapsed = start.elapsed();
    assert!(worst <= 1e-5, "max deviation {worst}");
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    format!("max |err| {worst:.2e}, {:.2?}", elapsed)
}

fn mutual_nn_oracle_suite() -> String {
    let start = Instant::now();
    let mut r = rng(200);
    let mut total_pairs = 0;
    for case in 0..30 {
        let c = r.gen_range(1..=8);
        let (h, w) = (r.gen_range(1..=10), r.gen_range(1..=10));
        let mut a = random_tensor(&mut r, c, h, w);
        let mut b = random_tensor(&mut r, c, h, w);
        if case % 3 == 0 {
            // duplicate rows to create exact ties
            for t in [&mut a, &mut b] {
                for ch in 0..c {
                    for y in (1..h).step_by(2) {
                        for x in 0..w {
                            let v = t.get(ch, y - 1, x);
                            t.set(ch, y, x, v);
                        }
                    }
                }
            }
            if case % 2 == 0 {
                b = a.clone();
            }
        }
        let pair = RegionPair::new(random_region(&mut r, 1, h, w), random_region(&mut r, 1, h, w)).unwrap();
        let nbhd = [1, 3, 5][case % 3];
        let got = find_nbbs(&a, &b, &pair, nbhd).unwrap();
        let (ca, cb) = (crop(&a, &pair.p_region), crop(&b, &pair.q_region));
        let scores: Vec<Vec<f32>> = (0..ca.height() * ca.width())
            .map(|i| {
                (0..cb.height() * cb.width())
                    .map(|j| {
                        patch_similarity(
                            &ca,
                            &cb,
                            Coord::new(i % ca.width(), i / ca.width()),
                            Coord::new(j % cb.width(), j / cb.width()),
                            nbhd,
                        )
                        .unwrap()
                    })
                    .collect()
            })
            .collect();
        let want: Vec<(Coord, Coord)> = mutual_nn_oracle(&scores)
            .into_iter()
            .map(|(i, j)| {
                (
                    Coord::new(pair.p_region.x0 + i % ca.width(), pair.p_region.y0 + i / ca.width()),
                    Coord::new(pair.q_region.x0 + j % cb.width(), pair.q_region.y0 + j / cb.width()),
                )
            })
            .collect();
        assert_eq!(got, want, "case {case}");
        total_pairs += got.len();
    }
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    format!("30 cases, {total_pairs} pairs, {elapsed:.2?}")
}

fn common_appearance_suite() -> String {
    let mut r = rng(300);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = r.gen_range(1..=8);
        let (h, w) = (r.gen_range(2..=10), r.gen_range(2..=10));
        let a = random_tensor(&mut r, c, h, w);
        let b = random_tensor(&mut r, c, h, w).scaled(r.gen_range(0.5..4.0));
        let mut pr = random_region(&mut r, 2, h, w);
        let mut qr = random_region(&mut r, 2, h, w);
        // at least two cells so the std is non-zero
        if pr.cell_count() < 2 {
            pr = nbb_core::Region::full(2, h, w).unwrap();
        }
        if qr.cell_count() < 2 {
            qr = nbb_core::Region::full(2, h, w).unwrap();
        }
        let (ca, cb) = common_appearance(&a, &b, &pr, &qr).unwrap();
        let stats = |t: &Tensor3, ch: usize| {
            let v: Vec<f64> = t.plane(ch).iter().map(|&x| x as f64).collect();
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
        };
        let (ra, rb) = (crop(&a, &pr), crop(&b, &qr));
        for ch in 0..c {
            let ((ma, sa), (mb, sb)) = (stats(&ra, ch), stats(&rb, ch));
            let (mm, sm) = ((ma + mb) / 2.0, (sa + sb) / 2.0);
            for t in [&ca, &cb] {
                let (m, s) = stats(t, ch);
                worst = worst.max((m - mm).abs()).max((s - sm).abs());
            }
        }
    }
    assert!(worst <= 1e-4, "max stat deviation {worst}");

    let a = random_tensor(&mut r, 4, 5, 5);
    let full = nbb_core::Region::full(3, 5, 5).unwrap();
    let (ca, cb) = common_appearance(&a, &a, &full, &full).unwrap();
    let id = max_abs(&ca, &a).max(max_abs(&cb, &a));
    assert!(id <= 1e-5, "identity deviation {id}");
    format!("max stat deviation {worst:.2e}, identity deviation {id:.2e}")
}

fn activation_suite() -> String {
    let mut r = rng(400);
    let mut worst = 0.0f32;
    for _ in 0..20 {
        let c = r.gen_range(1..=16);
        let (h, w) = (r.gen_range(2..=12), r.gen_range(2..=12));
        let f = random_tensor(&mut r, c, h, w);
        let hmap = normalize_activations(&f);
        let min = hmap.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let max = hmap.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(hmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!((min, max), (0.0, 1.0));
        for s in [0.5f32, 3.0, 100.0] {
            worst = worst.max(max_abs(&normalize_activations(&f.scaled(s)), &hmap));
        }
    }
    assert!(worst <= 1e-5, "scale deviation {worst}");
    format!("scale deviation {worst:.2e}")
}

fn e2e_identity() -> String {
    let w = weights();
    let img = scene_image(224, 0);
    let start = Instant::now();
    let out = match_images(&img, &img, ("scene.png", "scene.png"), &w, &opts(224, 5, 0.05, 1)).unwrap();
    let elapsed = start.elapsed();
    assert!(out.total_found >= 5, "only {} buddies found", out.total_found);
    assert_eq!(out.selected.len(), 5);
    for b in &out.document.buddies {
        assert_eq!(b.pixel_a, b.pixel_b);
    }
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    format!("{} buddies, 5 selected, {elapsed:.2?} single-threaded", out.total_found)
}

fn synthetic_pairs() -> Vec<(RgbImage, RgbImage)> {
    vec![
        (blob_image(64, 20.0, 22.0, 8.0), blob_image(64, 38.0, 30.0, 8.0)),
        (scene_image(64, 0), scene_image(64, 2)),
        (scene_image(80, 1), blob_image(56, 28.0, 28.0, 12.0)),
    ]
}

fn swap_symmetry() -> String {
    let w = weights();
    let mut sizes = Vec::new();
    for (a, b) in synthetic_pairs() {
        let o = opts(64, 10, 0.05, 1);
        let ab = match_images(&a, &b, ("a", "b"), &w, &o).unwrap();
        let ba = match_images(&b, &a, ("b", "a"), &w, &o).unwrap();
        let x: HashSet<_> = ab.document.buddies.iter().map(|r| (r.pixel_a, r.pixel_b, r.rank.to_bits())).collect();
        let y: HashSet<_> = ba.document.buddies.iter().map(|r| (r.pixel_b, r.pixel_a, r.rank.to_bits())).collect();
        assert_eq!(x, y);
        sizes.push(x.len());
    }
    format!("selected set sizes {sizes:?}")
}

fn determinism() -> String {
    let w = weights();
    let (a, b) = synthetic_pairs().swap_remove(1);
    let run = |t| match_images(&a, &b, ("a.png", "b.png"), &w, &opts(64, 10, 0.05, t)).unwrap().document.to_json();
    let first = run(1);
    for t in [1, 1, 4, 4] {
        assert_eq!(run(t), first, "threads={t}");
    }
    let full_a = image_pyramid(&a, 64, &w).unwrap();
    let full_b = image_pyramid(&b, 64, &w).unwrap();
    let all = |t| nbb_core::par::with_threads(Some(t), || run_nbb(&full_a, &full_b, &NbbConfig::default()).unwrap());
    assert_eq!(all(1), all(4));
    format!("{} bytes identical across 5 runs at 1 and 4 threads", first.len())
}

fn mls_suite() -> String {
    let mut r = rng(500);
    let src: Vec<Point2> = (0..6).map(|_| Point2::new(r.gen_range(0.0..100.0), r.gen_range(0.0..100.0))).collect();
    let dst: Vec<Point2> = (0..6).map(|_| Point2::new(r.gen_range(0.0..100.0), r.gen_range(0.0..100.0))).collect();
    let c = ControlSet::new(src.clone(), dst.clone()).unwrap();
    for (s, d) in src.iter().zip(&dst) {
        assert_eq!(mls_map(*s, &c), *d);
    }
    let t = |p: Point2| Point2::new(0.8 * p.x + 0.35 * p.y - 12.0, -0.2 * p.x + 1.1 * p.y + 7.5);
    let affine = ControlSet::new(src.clone(), src.iter().map(|&p| t(p)).collect()).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = Point2::new(r.gen_range(-20.0..120.0), r.gen_range(-20.0..120.0));
        worst = worst.max(mls_map(p, &affine).distance(t(p)));
    }
    assert!(worst <= 1e-4, "affine deviation {worst}");

    let img = scene_image(48, 3);
    let buddies: Vec<Buddy> = [(5u32, 7u32), (30, 12), (20, 40)]
        .iter()
        .map(|&(x, y)| Buddy {
            chain_a: vec![Coord::new(0, 0); 5],
            chain_b: vec![Coord::new(0, 0); 5],
            activations_a: vec![0.5; 5],
            activations_b: vec![0.5; 5],
            pixel_a: Pixel { x, y },
            pixel_b: Pixel { x, y },
            rank: 5.0,
        })
        .collect();
    let (wa, wb) = align_pair(&img, &img, &buddies).unwrap();
    assert!(wa == img && wb == img);
    format!("affine deviation {worst:.2e}, identity alignment exact")
}

fn pck_suite() -> String {
    let shift = vec![(Point2::new(0.0, 0.0), Point2::new(5.0, 0.0))];
    let ann = |pairs: Vec<([f64; 2], [f64; 2])>| AnnotationDocument {
        size_a: [224, 224],
        size_b: [224, 224],
        pairs: pairs.into_iter().map(|(a, b)| KeypointPair { gt_a: a, gt_b: b }).collect(),
    };
    // errors of 0, 10, 11.3, 20, 23 px
    let doc = ann(vec![
        ([10.0, 10.0], [15.0, 10.0]),
        ([10.0, 10.0], [15.0, 20.0]),
        ([10.0, 10.0], [15.0, 21.3]),
        ([100.0, 100.0], [105.0, 120.0]),
        ([100.0, 100.0], [105.0, 123.0]),
    ]);
    let expect = [(0.0, 1, 0.0), (0.05, 2, 11.2), (0.1, 4, 22.4)];
    for (alpha, correct, thr) in expect {
        let r = eval_pck(&shift, &doc, alpha).unwrap();
        assert!((r.threshold - thr).abs() < 1e-9, "alpha {alpha}: threshold {}", r.threshold);
        assert_eq!(r.correct, correct, "alpha {alpha}");
        assert_eq!(r.pck, correct as f64 / 5.0);
    }
    let half =
        eval_pck(&shift, &ann(vec![([100.0, 100.0], [105.0, 123.0]), ([50.0, 50.0], [55.0, 70.0])]), 0.1).unwrap();
    assert_eq!(half.pck, 0.5);

    let mut r = rng(600);
    let matches: Vec<(Point2, Point2)> = (0..8)
        .map(|_| {
            (
                Point2::new(r.gen_range(0.0..224.0), r.gen_range(0.0..224.0)),
                Point2::new(r.gen_range(0.0..224.0), r.gen_range(0.0..224.0)),
            )
        })
        .collect();
    let random = ann((0..40)
        .map(|_| {
            ([r.gen_range(0.0..224.0), r.gen_range(0.0..224.0)], [r.gen_range(0.0..224.0), r.gen_range(0.0..224.0)])
        })
        .collect());
    let mut last = -1.0;
    for i in 0..=40 {
        let p = eval_pck(&matches, &random, i as f64 * 0.025).unwrap().pck;
        assert!(p >= last, "PCK decreased at alpha {}", i as f64 * 0.025);
        last = p;
    }
    "thresholds 0 / 11.2 / 22.4 px give 1/5, 2/5, 4/5; monotone over 41 alphas".to_string()
}

fn gamma_monotonicity() -> String {
    let w = weights();
    let (a, b) = synthetic_pairs().swap_remove(0);
    let pa = image_pyramid(&a, 64, &w).unwrap();
    let pb = image_pyramid(&b, 64, &w).unwrap();
    let set = |g: f32| -> HashSet<(Pixel, Pixel)> {
        run_nbb(&pa, &pb, &NbbConfig::with_gamma(g)).unwrap().iter().map(|b| (b.pixel_a, b.pixel_b)).collect()
    };
    let (s0, s05, s2) = (set(0.0), set(0.05), set(0.2));
    assert!(s2.is_subset(&s05) && s05.is_subset(&s0));
    assert!(!s2.is_empty(), "no buddies at gamma 0.2");
    format!("|γ=0.2| {} ⊆ |γ=0.05| {} ⊆ |γ=0| {}", s2.len(), s05.len(), s0.len())
}

/// A named criterion; the check returns a one-line detail or panics.
type Criterion = (&'static str, fn() -> String);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("conv/pool/resize oracle equivalence", kernel_oracles),
        ("mutual-NN oracle", mutual_nn_oracle_suite),
        ("common-appearance exactness", common_appearance_suite),
        ("activation-map bounds and scale invariance", activation_suite),
        ("end-to-end identity", e2e_identity),
        ("swap symmetry", swap_symmetry),
        ("determinism", determinism),
        ("MLS interpolation, affine reproduction, identity alignment", mls_suite),
        ("PCK harness", pck_suite),
        ("gamma monotonicity", gamma_monotonicity),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let start = Instant::now();
        match catch_unwind(AssertUnwindSafe(f)) {
            Ok(detail) => println!("PASS  {name} ({detail})"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name} after {:.2?}: {msg}", start.elapsed());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
