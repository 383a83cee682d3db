//! Affine moving-least-squares deformation, midpoint alignment and
//! inverse-mapped image warping.

use image::RgbImage;

use crate::engine::Buddy;
use crate::error::{invalid, Result};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn distance(self, o: Point2) -> f64 {
        let d = self.sub(o);
        (d.x * d.x + d.y * d.y).sqrt()
    }
}

impl From<crate::engine::Pixel> for Point2 {
    fn from(p: crate::engine::Pixel) -> Self {
        Point2::new(p.x as f64, p.y as f64)
    }
}

/// Matched control points. Sources are pairwise distinct.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    sources: Vec<Point2>,
    targets: Vec<Point2>,
    alpha_exponent: f64,
}

impl ControlSet {
    pub fn new(sources: Vec<Point2>, targets: Vec<Point2>) -> Result<Self> {
        Self::with_exponent(sources, targets, 1.0)
    }

    pub fn with_exponent(sources: Vec<Point2>, targets: Vec<Point2>, alpha_exponent: f64) -> Result<Self> {
        if sources.is_empty() {
            return invalid("control set is empty");
        }
        if sources.len() != targets.len() {
            return invalid("control sources and targets differ in length");
        }
        for (i, s) in sources.iter().enumerate() {
            if sources[..i].contains(s) {
                return invalid(format!("control source {s:?} appears twice"));
            }
        }
        if alpha_exponent.is_nan() || alpha_exponent <= 0.0 {
            return invalid("MLS weight exponent must be positive");
        }
        Ok(ControlSet { sources, targets, alpha_exponent })
    }

    /// Builds a control set from pairs, skipping any pair whose source was
    /// already seen.
    pub fn from_pairs_dedup(pairs: impl IntoIterator<Item = (Point2, Point2)>) -> Result<Self> {
        let mut sources = Vec::new();
        let mut targets = Vec::new();
        for (s, t) in pairs {
            if !sources.contains(&s) {
                sources.push(s);
                targets.push(t);
            }
        }
        Self::new(sources, targets)
    }

    pub fn sources(&self) -> &[Point2] {
        &self.sources
    }

    pub fn targets(&self) -> &[Point2] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Targets become sources. Pairs whose target repeats an earlier one are
    /// dropped.
    pub fn inverted(&self) -> Result<ControlSet> {
        let mut inv = Self::from_pairs_dedup(self.targets.iter().copied().zip(self.sources.iter().copied()))?;
        inv.alpha_exponent = self.alpha_exponent;
        Ok(inv)
    }

    fn is_identity(&self) -> bool {
        self.sources == self.targets
    }
}

/// Deforms `point` with the weighted least-squares affine map fitted to the
/// controls, weights `1 / |point - source|^(2·exponent)`.
pub fn mls_map(point: Point2, controls: &ControlSet) -> Point2 {
    if controls.is_identity() {
        return point;
    }
    if let Some(i) = controls.sources.iter().position(|&s| s == point) {
        return controls.targets[i];
    }
    let weights: Vec<f64> = controls
        .sources
        .iter()
        .map(|&s| {
            let d = s.sub(point);
            1.0 / (d.x * d.x + d.y * d.y).powf(controls.alpha_exponent)
        })
        .collect();
    let w_sum: f64 = weights.iter().sum();
    let centroid = |pts: &[Point2]| {
        let (sx, sy) = pts.iter().zip(&weights).fold((0.0, 0.0), |(ax, ay), (p, w)| (ax + w * p.x, ay + w * p.y));
        Point2::new(sx / w_sum, sy / w_sum)
    };
    let p_star = centroid(&controls.sources);
    let q_star = centroid(&controls.targets);

    // Weighted covariance of the sources and cross-covariance with targets.
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    let (mut m11, mut m12, mut m21, mut m22) = (0.0, 0.0, 0.0, 0.0);
    for ((s, t), &w) in controls.sources.iter().zip(&controls.targets).zip(&weights) {
        let ph = s.sub(p_star);
        let qh = t.sub(q_star);
        a += w * ph.x * ph.x;
        b += w * ph.x * ph.y;
        d += w * ph.y * ph.y;
        m11 += w * ph.x * qh.x;
        m12 += w * ph.x * qh.y;
        m21 += w * ph.y * qh.x;
        m22 += w * ph.y * qh.y;
    }
    let det = a * d - b * b;
    let v = point.sub(p_star);
    if !det.is_finite() || det.abs() <= 1e-12 * (a + d) * (a + d) {
        return v.add(q_star);
    }
    // row vector v · A⁻¹ · M
    let (i11, i12, i22) = (d / det, -b / det, a / det);
    let u = Point2::new(v.x * i11 + v.y * i12, v.x * i12 + v.y * i22);
    Point2::new(u.x * m11 + u.y * m21 + q_star.x, u.x * m12 + u.y * m22 + q_star.y)
}

/// `0.5 · (α + β)` for each matched pair.
pub fn midpoints(matches: &[(Point2, Point2)]) -> Vec<Point2> {
    matches.iter().map(|&(a, b)| Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))).collect()
}

const EDGE_SLACK: f64 = 1e-6;

fn sample_bilinear(image: &RgbImage, p: Point2) -> [u8; 3] {
    let (w, h) = (image.width() as f64, image.height() as f64);
    if p.x < -EDGE_SLACK || p.y < -EDGE_SLACK || p.x > w - 1.0 + EDGE_SLACK || p.y > h - 1.0 + EDGE_SLACK {
        return [0, 0, 0];
    }
    let x = p.x.clamp(0.0, w - 1.0);
    let y = p.y.clamp(0.0, h - 1.0);
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let (tx, ty) = (x - x0 as f64, y - y0 as f64);
    let px = |x, y| image.get_pixel(x, y).0;
    let (c00, c10, c01, c11) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = c00[c] as f64 + (c10[c] as f64 - c00[c] as f64) * tx;
        let bottom = c01[c] as f64 + (c11[c] as f64 - c01[c] as f64) * tx;
        out[c] = (top + (bottom - top) * ty).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Warps `image` so that each control source moves onto its target. Each
/// output pixel is pulled from the input through the inverse deformation and
/// sampled bilinearly; samples outside the input are black.
pub fn warp_image(image: &RgbImage, controls: &ControlSet) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return invalid("cannot warp an empty image");
    }
    if controls.is_identity() {
        return Ok(image.clone());
    }
    let inverse = controls.inverted()?;
    let mut buf = vec![0u8; (w * h * 3) as usize];
    par::for_each_chunk_mut(&mut buf, (w * 3) as usize, |y, row| {
        for x in 0..w as usize {
            let src = mls_map(Point2::new(x as f64, y as f64), &inverse);
            row[x * 3..x * 3 + 3].copy_from_slice(&sample_bilinear(image, src));
        }
    });
    Ok(RgbImage::from_raw(w, h, buf).expect("buffer sized to image"))
}

/// Warps both images so matched points meet at their midpoints.
pub fn align_pair(img_a: &RgbImage, img_b: &RgbImage, buddies: &[Buddy]) -> Result<(RgbImage, RgbImage)> {
    let matches: Vec<(Point2, Point2)> =
        buddies.iter().map(|b| (Point2::from(b.pixel_a), Point2::from(b.pixel_b))).collect();
    align_matches(img_a, img_b, &matches)
}

/// [`align_pair`] over raw `(A point, B point)` matches.
pub fn align_matches(img_a: &RgbImage, img_b: &RgbImage, matches: &[(Point2, Point2)]) -> Result<(RgbImage, RgbImage)> {
    if matches.is_empty() {
        return invalid("alignment needs at least one correspondence");
    }
    let eta = midpoints(matches);
    let ctrl_a = ControlSet::from_pairs_dedup(matches.iter().map(|m| m.0).zip(eta.iter().copied()))?;
    let ctrl_b = ControlSet::from_pairs_dedup(matches.iter().map(|m| m.1).zip(eta.iter().copied()))?;
    Ok((warp_image(img_a, &ctrl_a)?, warp_image(img_b, &ctrl_b)?))
}
