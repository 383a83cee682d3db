//! End-to-end orchestration used by the command-line tool.

use std::path::Path;

pub use image::RgbImage;

use crate::backbone::{image_pyramid, BackboneWeights, DEFAULT_SIDE};
use crate::document::{ConfigEcho, ImageInfo, MatchDocument};
use crate::engine::{run_nbb, Buddy, NbbConfig};
use crate::error::{NbbError, Result};
use crate::par;
use crate::select::{select_top_k, ImageDims, SelectionConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct MatchOptions {
    pub k: usize,
    pub gamma: f32,
    pub side: usize,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions { k: 10, gamma: 0.05, side: DEFAULT_SIDE, seed: 0, threads: None }
    }
}

#[derive(Clone, Debug)]
pub struct MatchOutput {
    pub document: MatchDocument,
    /// The selected buddies, in document order.
    pub selected: Vec<Buddy>,
    /// Number of buddies before k-selection.
    pub total_found: usize,
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    image::open(path).map(|img| img.to_rgb8()).map_err(|source| match source {
        image::ImageError::IoError(source) => NbbError::Io { path: path.to_path_buf(), source },
        source => NbbError::Image { path: path.to_path_buf(), source },
    })
}

/// Pyramids for both images, the full buddy search and k-selection.
pub fn match_images(
    img_a: &RgbImage,
    img_b: &RgbImage,
    names: (&str, &str),
    weights: &BackboneWeights,
    opts: &MatchOptions,
) -> Result<MatchOutput> {
    let cfg = NbbConfig::with_gamma(opts.gamma);
    cfg.validate()?;
    let sel = SelectionConfig::new(opts.k, opts.seed);
    par::with_threads(opts.threads, || {
        let (pa, pb) =
            par::join(|| image_pyramid(img_a, opts.side, weights), || image_pyramid(img_b, opts.side, weights));
        let (pa, pb) = (pa?, pb?);
        let all = run_nbb(&pa, &pb, &cfg)?;
        let dims = ImageDims { a: img_a.dimensions(), b: img_b.dimensions() };
        let selected = select_top_k(&all, dims, &sel)?;
        let info =
            |path: &str, img: &RgbImage| ImageInfo { path: path.to_string(), width: img.width(), height: img.height() };
        let document = MatchDocument::new(
            info(names.0, img_a),
            info(names.1, img_b),
            ConfigEcho { gamma: opts.gamma, k: opts.k, seed: opts.seed, side: opts.side },
            &selected,
        );
        Ok(MatchOutput { document, selected, total_found: all.len() })
    })
}

pub fn match_files(
    path_a: impl AsRef<Path>,
    path_b: impl AsRef<Path>,
    weights: &BackboneWeights,
    opts: &MatchOptions,
) -> Result<MatchOutput> {
    let (path_a, path_b) = (path_a.as_ref(), path_b.as_ref());
    let img_a = load_image(path_a)?;
    let img_b = load_image(path_b)?;
    match_images(&img_a, &img_b, (&path_a.to_string_lossy(), &path_b.to_string_lossy()), weights, opts)
}
