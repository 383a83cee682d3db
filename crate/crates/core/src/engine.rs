//! Coarse-to-fine neural best-buddy search.
//!
//! At each pyramid level, mutual nearest neighbours are found inside pairs of
//! corresponding regions, using a patch cross-correlation of features that
//! were first renormalized to the regions' shared mean/std. Pairs whose
//! neurons are weakly activated are dropped, and the survivors seed search
//! windows one level down.

use std::collections::{HashMap, HashSet};

use crate::backbone::{FeaturePyramid, LEVELS};
use crate::error::{invalid, Result};
use crate::par;
use crate::select::compute_rank;
use crate::tensor::{corner_aligned, Tensor3};

/// A neuron position in a level's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }

    #[inline]
    pub fn index(self, width: usize) -> usize {
        self.y * width + self.x
    }
}

/// A position in original-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Pixel {
    pub x: u32,
    pub y: u32,
}

/// Inclusive rectangle in one level's grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub level: usize,
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn new(level: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 > x1 || y0 > y1 {
            return invalid(format!("empty region [{x0},{x1}]x[{y0},{y1}]"));
        }
        Ok(Region { level, x0, y0, x1, y1 })
    }

    /// The whole `height × width` grid.
    pub fn full(level: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return invalid("cannot build a region over an empty grid");
        }
        Region::new(level, 0, 0, width - 1, height - 1)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn cell_count(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, c: Coord) -> bool {
        (self.x0..=self.x1).contains(&c.x) && (self.y0..=self.y1).contains(&c.y)
    }

    fn fits(&self, t: &Tensor3) -> bool {
        self.x1 < t.width() && self.y1 < t.height()
    }

    fn local_to_global(&self, i: usize) -> Coord {
        Coord::new(self.x0 + i % self.width(), self.y0 + i / self.width())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegionPair {
    pub p_region: Region,
    pub q_region: Region,
}

impl RegionPair {
    pub fn new(p_region: Region, q_region: Region) -> Result<Self> {
        if p_region.level != q_region.level {
            return invalid("regions of a pair must share a level");
        }
        Ok(RegionPair { p_region, q_region })
    }
}

/// A matched neuron pair traced through every level.
#[derive(Clone, Debug, PartialEq)]
pub struct Buddy {
    /// `chain_a[ℓ - 1]` is the level-ℓ ancestor in image A; `chain_a[0]`
    /// is the final level-1 match.
    pub chain_a: Vec<Coord>,
    pub chain_b: Vec<Coord>,
    /// Normalized activations along each chain, indexed like the chains.
    pub activations_a: Vec<f32>,
    pub activations_b: Vec<f32>,
    pub pixel_a: Pixel,
    pub pixel_b: Pixel,
    pub rank: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NbbConfig {
    /// Both neurons of a pair must have normalized activation above this.
    pub gamma: f32,
    /// Patch side used by the similarity at each level, finest first.
    pub neighborhoods: [usize; LEVELS],
    /// `radii[ℓ - 1]` is the search-window extent used when refining a
    /// level-ℓ match into level ℓ−1. The level-1 entry is unused.
    pub radii: [usize; LEVELS],
}

impl Default for NbbConfig {
    fn default() -> Self {
        NbbConfig { gamma: 0.05, neighborhoods: [5, 5, 5, 3, 3], radii: [0, 4, 4, 6, 6] }
    }
}

impl NbbConfig {
    pub fn with_gamma(gamma: f32) -> Self {
        NbbConfig { gamma, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return invalid(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.neighborhoods.iter().any(|n| n % 2 == 0) {
            return invalid("neighborhood sizes must be odd");
        }
        Ok(())
    }
}

fn crop(t: &Tensor3, r: &Region) -> Tensor3 {
    let (rw, rh) = (r.width(), r.height());
    let mut data = Vec::with_capacity(t.channels() * rw * rh);
    for c in 0..t.channels() {
        let plane = t.plane(c);
        for y in r.y0..=r.y1 {
            data.extend_from_slice(&plane[y * t.width() + r.x0..=y * t.width() + r.x1]);
        }
    }
    Tensor3::from_vec(t.channels(), rh, rw, data).expect("crop stays in bounds")
}

fn channel_stats(t: &Tensor3) -> Vec<(f64, f64)> {
    (0..t.channels())
        .map(|c| {
            let p = t.plane(c);
            let n = p.len() as f64;
            let mean = p.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = p.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

fn transfer(t: &Tensor3, own: &[(f64, f64)], common: &[(f64, f64)]) -> Tensor3 {
    let mut out = t.clone();
    let plane = t.height() * t.width();
    for (c, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let (mu, sigma) = own[c];
        let (mu_m, sigma_m) = common[c];
        for v in chunk.iter_mut() {
            let z = if sigma > 0.0 { (*v as f64 - mu) / sigma } else { 0.0 };
            *v = (z * sigma_m + mu_m) as f32;
        }
    }
    out
}

/// Renormalizes both regions so each channel has the average of the two
/// regions' spatial mean and standard deviation. Returns region-sized maps.
///
/// A channel with zero variance maps to the common mean.
pub fn common_appearance(
    f_a: &Tensor3,
    f_b: &Tensor3,
    p_region: &Region,
    q_region: &Region,
) -> Result<(Tensor3, Tensor3)> {
    if f_a.channels() != f_b.channels() {
        return invalid("feature maps have different channel counts");
    }
    if p_region.level != q_region.level {
        return invalid("regions of a pair must share a level");
    }
    if !p_region.fits(f_a) || !q_region.fits(f_b) {
        return invalid("region exceeds its feature map");
    }
    let a = crop(f_a, p_region);
    let b = crop(f_b, q_region);
    let sa = channel_stats(&a);
    let sb = channel_stats(&b);
    let common: Vec<(f64, f64)> =
        sa.iter().zip(&sb).map(|(&(ma, da), &(mb, db))| ((ma + mb) / 2.0, (da + db) / 2.0)).collect();
    Ok((transfer(&a, &sa, &common), transfer(&b, &sb, &common)))
}

/// Location-major unit channel vectors. Zero vectors stay zero.
struct UnitField {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl UnitField {
    fn new(t: &Tensor3) -> Self {
        let (k, n) = (t.channels(), t.height() * t.width());
        let mut data = vec![0.0f32; n * k];
        for c in 0..k {
            for (i, &v) in t.plane(c).iter().enumerate() {
                data[i * k + c] = v;
            }
        }
        for v in data.chunks_mut(k.max(1)) {
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
        }
        UnitField { width: t.width(), height: t.height(), channels: k, data }
    }

    fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    fn at(&self, i: usize) -> &[f32] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }
}

/// Fixed-order dot product; `dot(a, b)` and `dot(b, a)` are bit-identical.
#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            lanes[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]));
    s + tail
}

/// Sum of aligned-offset terms; `term(i, j)` scores A-cell `i` against B-cell `j`.
#[inline]
fn window_sum(
    (aw, ah): (usize, usize),
    (bw, bh): (usize, usize),
    p: Coord,
    q: Coord,
    nbhd: usize,
    term: impl Fn(usize, usize) -> f32,
) -> f32 {
    let half = (nbhd / 2) as isize;
    let mut d = 0.0f32;
    for dy in -half..=half {
        let (py, qy) = (p.y as isize + dy, q.y as isize + dy);
        if py < 0 || qy < 0 || py >= ah as isize || qy >= bh as isize {
            continue;
        }
        for dx in -half..=half {
            let (px, qx) = (p.x as isize + dx, q.x as isize + dx);
            if px < 0 || qx < 0 || px >= aw as isize || qx >= bw as isize {
                continue;
            }
            d += term(py as usize * aw + px as usize, qy as usize * bw + qx as usize);
        }
    }
    d
}

/// Cross-correlation of unit-normalized channel vectors over an
/// `nbhd × nbhd` patch, summed over aligned offsets. Offsets that leave
/// either map are skipped in both.
pub fn patch_similarity(c_a: &Tensor3, c_b: &Tensor3, p: Coord, q: Coord, nbhd: usize) -> Result<f32> {
    if nbhd.is_multiple_of(2) {
        return invalid("neighborhood size must be odd");
    }
    if c_a.channels() != c_b.channels() {
        return invalid("maps have different channel counts");
    }
    if p.x >= c_a.width() || p.y >= c_a.height() || q.x >= c_b.width() || q.y >= c_b.height() {
        return invalid(format!("coordinate out of bounds: p={p:?} q={q:?}"));
    }
    let ua = UnitField::new(c_a);
    let ub = UnitField::new(c_b);
    Ok(window_sum((ua.width, ua.height), (ub.width, ub.height), p, q, nbhd, |i, j| dot(ua.at(i), ub.at(j))))
}

/// Index of the first maximum.
fn first_argmax(values: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mutual nearest neighbours between two region-sized maps, as local
/// row-major indices ordered by the A index.
fn mutual_nearest(c_a: &Tensor3, c_b: &Tensor3, nbhd: usize) -> Vec<(usize, usize)> {
    let ua = UnitField::new(c_a);
    let ub = UnitField::new(c_b);
    let (na, nb) = (ua.len(), ub.len());
    let dots: Vec<f32> = par::map_range(na, |i| (0..nb).map(|j| dot(ua.at(i), ub.at(j))).collect::<Vec<_>>()).concat();
    let scores: Vec<Vec<f32>> = par::map_range(na, |i| {
        let p = Coord::new(i % ua.width, i / ua.width);
        (0..nb)
            .map(|j| {
                let q = Coord::new(j % ub.width, j / ub.width);
                window_sum((ua.width, ua.height), (ub.width, ub.height), p, q, nbhd, |s, t| dots[s * nb + t])
            })
            .collect()
    });
    let nn_a: Vec<usize> = scores.iter().map(|row| first_argmax(row.iter().copied())).collect();
    let nn_b: Vec<usize> = (0..nb).map(|j| first_argmax(scores.iter().map(|row| row[j]))).collect();
    nn_a.iter().enumerate().filter(|&(i, &j)| nn_b[j] == i).map(|(i, &j)| (i, j)).collect()
}

/// Mutual nearest neighbours under [`patch_similarity`] within one region
/// pair. `c_a`/`c_b` are whole-level maps; the similarity only sees cells
/// inside the regions. Ties go to the smallest row-major index and the
/// output is ordered by `p`.
pub fn find_nbbs(c_a: &Tensor3, c_b: &Tensor3, pair: &RegionPair, nbhd: usize) -> Result<Vec<(Coord, Coord)>> {
    if nbhd.is_multiple_of(2) {
        return invalid("neighborhood size must be odd");
    }
    if c_a.channels() != c_b.channels() {
        return invalid("maps have different channel counts");
    }
    if !pair.p_region.fits(c_a) || !pair.q_region.fits(c_b) {
        return invalid("region exceeds its feature map");
    }
    let a = crop(c_a, &pair.p_region);
    let b = crop(c_b, &pair.q_region);
    Ok(mutual_nearest(&a, &b, nbhd)
        .into_iter()
        .map(|(i, j)| (pair.p_region.local_to_global(i), pair.q_region.local_to_global(j)))
        .collect())
}

/// Keeps pairs whose neurons both have activation strictly above `gamma`.
pub fn filter_by_activation(cands: &[(Coord, Coord)], h_a: &Tensor3, h_b: &Tensor3, gamma: f32) -> Vec<(Coord, Coord)> {
    cands.iter().copied().filter(|&(p, q)| h_a.get(0, p.y, p.x) > gamma && h_b.get(0, q.y, q.x) > gamma).collect()
}

/// Search window one level down: `[2c - r/2, 2c + r/2]` per axis, clamped
/// to `dims = (height, width)`.
fn refine_window(c: Coord, r: usize, level: usize, (h, w): (usize, usize)) -> Region {
    let half = r / 2;
    let span = |v: usize, len: usize| {
        let lo = (2 * v).saturating_sub(half).min(len - 1);
        let hi = (2 * v + half).min(len - 1);
        (lo, hi)
    };
    let (x0, x1) = span(c.x, w);
    let (y0, y1) = span(c.y, h);
    Region { level, x0, y0, x1, y1 }
}

/// Maps level-`level` matches to search-region pairs at `level - 1`,
/// dropping exact duplicates (first occurrence kept).
pub fn propagate_regions(
    pairs: &[(Coord, Coord)],
    level: usize,
    r: usize,
    next_dims: (usize, usize),
) -> Result<Vec<RegionPair>> {
    if level < 2 {
        return invalid("cannot propagate below level 1");
    }
    if next_dims.0 == 0 || next_dims.1 == 0 {
        return invalid("next level is empty");
    }
    let mut seen = HashSet::new();
    Ok(pairs
        .iter()
        .map(|&(p, q)| RegionPair {
            p_region: refine_window(p, r, level - 1, next_dims),
            q_region: refine_window(q, r, level - 1, next_dims),
        })
        .filter(|rp| seen.insert(*rp))
        .collect())
}

/// Partial ancestry of a candidate, coarsest level first.
#[derive(Clone, Debug)]
struct Track {
    a: Vec<Coord>,
    b: Vec<Coord>,
    act_a: Vec<f32>,
    act_b: Vec<f32>,
    partial: f32,
}

impl Track {
    fn extend(parent: Option<&Track>, p: Coord, q: Coord, ha: f32, hb: f32) -> Track {
        let mut t = parent.cloned().unwrap_or(Track {
            a: Vec::with_capacity(LEVELS),
            b: Vec::with_capacity(LEVELS),
            act_a: Vec::with_capacity(LEVELS),
            act_b: Vec::with_capacity(LEVELS),
            partial: 0.0,
        });
        t.a.push(p);
        t.b.push(q);
        t.act_a.push(ha);
        t.act_b.push(hb);
        t.partial += ha + hb;
        t
    }

    /// Swap-invariant tie-break key: per level, the unordered pair of
    /// coordinates, then image A's coordinate.
    fn key(&self) -> Vec<(Coord, Coord, Coord)> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&p, &q)| {
                let (lo, hi) = if (p.y, p.x) <= (q.y, q.x) { (p, q) } else { (q, p) };
                (yx(lo), yx(hi), yx(p))
            })
            .collect()
    }

    /// The same neuron pair reached through different ancestors keeps the
    /// ancestry with the highest accumulated activation.
    fn better_than(&self, other: &Track) -> bool {
        if self.partial != other.partial {
            return self.partial > other.partial;
        }
        self.key() < other.key()
    }
}

// Row-major ordering key.
fn yx(c: Coord) -> Coord {
    Coord::new(c.y, c.x)
}

fn insert_best(map: &mut HashMap<(Coord, Coord), Track>, key: (Coord, Coord), track: Track) {
    match map.get(&key) {
        Some(existing) if !track.better_than(existing) => {}
        _ => {
            map.insert(key, track);
        }
    }
}

fn level_dims(t: &Tensor3) -> (usize, usize) {
    (t.height(), t.width())
}

/// Level-1 grid coordinate to original-image pixel, using the same
/// corner-aligned mapping as input resizing.
fn to_pixel(c: Coord, input: (usize, usize), original: (usize, usize)) -> Pixel {
    let map = |v: usize, src: usize, orig: usize| {
        let f = corner_aligned(v, orig, src).round();
        (f as u32).min(orig.saturating_sub(1) as u32)
    };
    Pixel { x: map(c.x, input.1, original.1), y: map(c.y, input.0, original.0) }
}

/// Full coarse-to-fine search. Output is sorted by descending rank, ties by
/// image A's level-1 row-major position, then image B's.
pub fn run_nbb(pyr_a: &FeaturePyramid, pyr_b: &FeaturePyramid, cfg: &NbbConfig) -> Result<Vec<Buddy>> {
    cfg.validate()?;
    if pyr_a.input_size != pyr_b.input_size {
        return invalid(format!(
            "pyramids were built from different input sizes {:?} and {:?}",
            pyr_a.input_size, pyr_b.input_size
        ));
    }
    if pyr_a.levels.len() != LEVELS || pyr_b.levels.len() != LEVELS {
        return invalid("pyramids must have five levels");
    }
    for l in 1..=LEVELS {
        let (fa, fb) = (&pyr_a.level(l).features, &pyr_b.level(l).features);
        if level_dims(fa) != level_dims(fb) || fa.channels() != fb.channels() {
            return invalid(format!("level {l} shapes differ between pyramids"));
        }
    }

    let top = &pyr_a.level(LEVELS).features;
    let full = Region::full(LEVELS, top.height(), top.width())?;
    let mut regions: Vec<(RegionPair, Option<Track>)> = vec![(RegionPair::new(full, full)?, None)];
    let mut survivors: Vec<((Coord, Coord), Track)> = Vec::new();

    for level in (1..=LEVELS).rev() {
        let (la, lb) = (pyr_a.level(level), pyr_b.level(level));
        let nbhd = cfg.neighborhoods[level - 1];
        let found: Vec<Result<Vec<(Coord, Coord)>>> = par::map_slice(&regions, |(pair, _)| {
            let (ca, cb) = if level == LEVELS {
                (crop(&la.features, &pair.p_region), crop(&lb.features, &pair.q_region))
            } else {
                common_appearance(&la.features, &lb.features, &pair.p_region, &pair.q_region)?
            };
            Ok(mutual_nearest(&ca, &cb, nbhd)
                .into_iter()
                .map(|(i, j)| (pair.p_region.local_to_global(i), pair.q_region.local_to_global(j)))
                .collect())
        });

        let mut best: HashMap<(Coord, Coord), Track> = HashMap::new();
        for ((_, parent), cands) in regions.iter().zip(found) {
            for (p, q) in cands? {
                let ha = la.activation.get(0, p.y, p.x);
                let hb = lb.activation.get(0, q.y, q.x);
                insert_best(&mut best, (p, q), Track::extend(parent.as_ref(), p, q, ha, hb));
            }
        }
        let mut kept: Vec<((Coord, Coord), Track)> = best
            .into_iter()
            .filter(|(_, t)| {
                t.act_a.last().copied().unwrap_or(0.0) > cfg.gamma && t.act_b.last().copied().unwrap_or(0.0) > cfg.gamma
            })
            .collect();
        kept.sort_by_key(|&((p, q), _)| (yx(p), yx(q)));

        if level > 1 {
            let next = level_dims(&pyr_a.level(level - 1).features);
            let r = cfg.radii[level - 1];
            let mut index: HashMap<RegionPair, usize> = HashMap::new();
            let mut next_regions: Vec<(RegionPair, Option<Track>)> = Vec::new();
            for ((p, q), track) in kept {
                let rp = RegionPair {
                    p_region: refine_window(p, r, level - 1, next),
                    q_region: refine_window(q, r, level - 1, next),
                };
                match index.get(&rp) {
                    Some(&i) => {
                        let slot = next_regions[i].1.as_mut().expect("tracked");
                        if track.better_than(slot) {
                            *slot = track;
                        }
                    }
                    None => {
                        index.insert(rp, next_regions.len());
                        next_regions.push((rp, Some(track)));
                    }
                }
            }
            regions = next_regions;
            if regions.is_empty() {
                return Ok(Vec::new());
            }
        } else {
            survivors = kept;
        }
    }

    let mut buddies = survivors
        .into_iter()
        .map(|((p, q), t)| {
            let mut buddy = Buddy {
                chain_a: t.a.into_iter().rev().collect(),
                chain_b: t.b.into_iter().rev().collect(),
                activations_a: t.act_a.into_iter().rev().collect(),
                activations_b: t.act_b.into_iter().rev().collect(),
                pixel_a: to_pixel(p, pyr_a.input_size, pyr_a.original_size),
                pixel_b: to_pixel(q, pyr_b.input_size, pyr_b.original_size),
                rank: 0.0,
            };
            buddy.rank = compute_rank(&buddy)?;
            Ok(buddy)
        })
        .collect::<Result<Vec<_>>>()?;
    buddies.sort_by(|x, y| {
        y.rank
            .total_cmp(&x.rank)
            .then_with(|| yx(x.chain_a[0]).cmp(&yx(y.chain_a[0])))
            .then_with(|| yx(x.chain_b[0]).cmp(&yx(y.chain_b[0])))
    });
    Ok(buddies)
}
