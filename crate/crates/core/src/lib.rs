//! Sparse cross-domain correspondences from neural best-buddies.
//!
//! Two images are pushed through the convolutional trunk of VGG-19 and the
//! activations after `relu1_1` … `relu5_1` form a five-level pyramid. Mutual
//! nearest neighbours are found at the coarsest level, filtered by
//! activation strength and refined level by level inside small windows
//! around their receptive fields, ending at pixel resolution. The resulting
//! pairs are ranked, thinned with k-means, and can drive moving-least-squares
//! alignment or keypoint-transfer evaluation.
//!
//! Data-parallel loops run on rayon when the `parallel` feature (on by
//! default) is enabled and sequentially otherwise; results are identical
//! either way.

pub mod annotate;
pub mod backbone;
pub mod document;
pub mod engine;
pub mod error;
pub mod mls;
pub mod par;
pub mod pck;
pub mod pipeline;
pub mod select;
pub mod tensor;

pub use backbone::{extract_pyramid, load_weights, normalize_activations, preprocess, BackboneWeights, FeaturePyramid};
pub use document::{AnnotationDocument, MatchDocument};
pub use engine::{
    common_appearance, filter_by_activation, find_nbbs, patch_similarity, propagate_regions, run_nbb, Buddy, Coord,
    NbbConfig, Pixel, Region, RegionPair,
};
pub use error::{NbbError, Result};
pub use mls::{align_pair, midpoints, mls_map, warp_image, ControlSet, Point2};
pub use pck::{eval_pck, PckReport};
pub use pipeline::{match_files, match_images, MatchOptions, MatchOutput};
pub use select::{compute_rank, select_top_k, ImageDims, SelectionConfig};
pub use tensor::{bilinear_resize, conv2d, maxpool2, relu, ConvLayer, Tensor3};
