//! Ranking and spatially diverse selection of buddies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::LEVELS;
use crate::engine::{Buddy, Pixel};
use crate::error::{invalid, Result};

/// Sum over levels of both neurons' normalized activations, accumulated
/// finest level first as `Σ (a + b)`.
pub fn compute_rank(buddy: &Buddy) -> Result<f32> {
    if buddy.activations_a.len() != LEVELS
        || buddy.activations_b.len() != LEVELS
        || buddy.chain_a.len() != LEVELS
        || buddy.chain_b.len() != LEVELS
    {
        return invalid(format!("buddy chains must cover all {LEVELS} levels"));
    }
    Ok(buddy.activations_a.iter().zip(&buddy.activations_b).fold(0.0f32, |acc, (a, b)| acc + (a + b)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl SelectionConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        SelectionConfig { k, seed, max_iters: 100 }
    }
}

/// `(width, height)` of image A and image B, used to normalize pixel
/// coordinates before clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub a: (u32, u32),
    pub b: (u32, u32),
}

fn yx(p: Pixel) -> (u32, u32) {
    (p.y, p.x)
}

// Descending rank, then the unordered endpoint pair, then endpoint A. Stays
// consistent when the two images swap roles.
fn canonical_cmp(x: &Buddy, y: &Buddy) -> std::cmp::Ordering {
    let key = |b: &Buddy| {
        let (pa, pb) = (yx(b.pixel_a), yx(b.pixel_b));
        (pa.min(pb), pa.max(pb), pa)
    };
    y.rank.total_cmp(&x.rank).then_with(|| key(x).cmp(&key(y)))
}

fn output_cmp(x: &Buddy, y: &Buddy) -> std::cmp::Ordering {
    y.rank
        .total_cmp(&x.rank)
        .then_with(|| yx(x.pixel_a).cmp(&yx(y.pixel_a)))
        .then_with(|| yx(x.pixel_b).cmp(&yx(y.pixel_b)))
}

type Point4 = [f64; 4];

fn embed(b: &Buddy, dims: ImageDims) -> Point4 {
    [
        b.pixel_a.x as f64 / dims.a.0.max(1) as f64,
        b.pixel_a.y as f64 / dims.a.1.max(1) as f64,
        b.pixel_b.x as f64 / dims.b.0.max(1) as f64,
        b.pixel_b.y as f64 / dims.b.1.max(1) as f64,
    ]
}

// Summed as (x terms) + (y terms), each symmetric in the two endpoints.
#[inline]
fn dist2(p: &Point4, c: &Point4) -> f64 {
    let d = |i: usize| (p[i] - c[i]) * (p[i] - c[i]);
    (d(0) + d(2)) + (d(1) + d(3))
}

fn nearest(p: &Point4, centers: &[Point4]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

/// k-means++ seeding followed by Lloyd iterations. Returns the cluster index
/// of every point. Fewer than `k` clusters are produced when the points have
/// fewer than `k` distinct positions.
pub(crate) fn kmeans(points: &[Point4], k: usize, seed: u64, max_iters: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..n)]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in d2.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let Some(i) = pick else { break };
        let c = points[i];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
    }

    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..max_iters {
        let mut sums = vec![[0.0f64; 4]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &a) in points.iter().zip(&assign) {
            for d in 0..4 {
                sums[a][d] += p[d];
            }
            counts[a] += 1;
        }
        for ((c, s), &n) in centers.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                for d in 0..4 {
                    c[d] = s[d] / n as f64;
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Picks at most `k` highly ranked, spatially spread buddies: the buddies
/// are clustered into `k` groups in the joint normalized `(A, B)` position
/// space and the best-ranked member of each nonempty cluster is kept.
pub fn select_top_k(buddies: &[Buddy], dims: ImageDims, cfg: &SelectionConfig) -> Result<Vec<Buddy>> {
    if cfg.k == 0 {
        return invalid("k must be at least 1");
    }
    let mut ordered: Vec<Buddy> = buddies.to_vec();
    if ordered.len() <= cfg.k {
        ordered.sort_by(output_cmp);
        return Ok(ordered);
    }
    ordered.sort_by(canonical_cmp);
    let points: Vec<Point4> = ordered.iter().map(|b| embed(b, dims)).collect();
    let assign = kmeans(&points, cfg.k, cfg.seed, cfg.max_iters);
    let mut winners: Vec<Option<usize>> = vec![None; cfg.k];
    // `ordered` is best-first, so the first member seen wins its cluster.
    for (i, &c) in assign.iter().enumerate() {
        winners[c].get_or_insert(i);
    }
    let mut out: Vec<Buddy> = winners.into_iter().flatten().map(|i| ordered[i].clone()).collect();
    out.sort_by(output_cmp);
    Ok(out)
}
