//! JSON documents exchanged by the command-line tools.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Buddy, Pixel};
use crate::error::{invalid, NbbError, Result};
use crate::mls::Point2;

pub const MATCH_VERSION: &str = "nbb-match/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub gamma: f32,
    pub k: usize,
    pub seed: u64,
    pub side: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuddyRecord {
    pub pixel_a: [u32; 2],
    pub pixel_b: [u32; 2],
    pub rank: f32,
    /// Level-grid coordinates `[x, y]`, coarsest level (5) first.
    pub chain_a: Vec<[usize; 2]>,
    pub chain_b: Vec<[usize; 2]>,
}

impl From<&Buddy> for BuddyRecord {
    fn from(b: &Buddy) -> Self {
        let chain = |c: &[crate::engine::Coord]| c.iter().rev().map(|c| [c.x, c.y]).collect();
        BuddyRecord {
            pixel_a: [b.pixel_a.x, b.pixel_a.y],
            pixel_b: [b.pixel_b.x, b.pixel_b.y],
            rank: b.rank,
            chain_a: chain(&b.chain_a),
            chain_b: chain(&b.chain_b),
        }
    }
}

impl BuddyRecord {
    pub fn pixel_a(&self) -> Pixel {
        Pixel { x: self.pixel_a[0], y: self.pixel_a[1] }
    }

    pub fn pixel_b(&self) -> Pixel {
        Pixel { x: self.pixel_b[0], y: self.pixel_b[1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchDocument {
    pub version: String,
    pub image_a: ImageInfo,
    pub image_b: ImageInfo,
    pub config: ConfigEcho,
    pub buddies: Vec<BuddyRecord>,
}

impl MatchDocument {
    pub fn new(image_a: ImageInfo, image_b: ImageInfo, config: ConfigEcho, buddies: &[Buddy]) -> Self {
        MatchDocument {
            version: MATCH_VERSION.to_string(),
            image_a,
            image_b,
            config,
            buddies: buddies.iter().map(BuddyRecord::from).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc: MatchDocument = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_json())
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MATCH_VERSION {
            return invalid(format!("unsupported match document version {:?}", self.version));
        }
        for (i, b) in self.buddies.iter().enumerate() {
            if b.pixel_a[0] >= self.image_a.width || b.pixel_a[1] >= self.image_a.height {
                return invalid(format!("buddy {i}: pixel_a outside image A"));
            }
            if b.pixel_b[0] >= self.image_b.width || b.pixel_b[1] >= self.image_b.height {
                return invalid(format!("buddy {i}: pixel_b outside image B"));
            }
        }
        if self.buddies.windows(2).any(|w| w[0].rank < w[1].rank) {
            return invalid("buddies are not sorted by descending rank");
        }
        Ok(())
    }

    /// `(pixel_a, pixel_b)` of every buddy as points.
    pub fn point_pairs(&self) -> Vec<(Point2, Point2)> {
        self.buddies.iter().map(|b| (Point2::from(b.pixel_a()), Point2::from(b.pixel_b()))).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointPair {
    pub gt_a: [f64; 2],
    pub gt_b: [f64; 2],
}

/// Ground-truth keypoint correspondences. Sizes are `[width, height]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDocument {
    pub size_a: [u32; 2],
    pub size_b: [u32; 2],
    pub pairs: Vec<KeypointPair>,
}

impl AnnotationDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let doc: AnnotationDocument = read_json(path)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        let inside =
            |p: [f64; 2], s: [u32; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= s[0] as f64 && p[1] <= s[1] as f64;
        for (i, kp) in self.pairs.iter().enumerate() {
            if !inside(kp.gt_a, self.size_a) || !inside(kp.gt_b, self.size_b) {
                return invalid(format!("annotation {i} lies outside its image"));
            }
        }
        Ok(())
    }
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| NbbError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| NbbError::Json { path: path.to_path_buf(), source })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| NbbError::Io { path: path.to_path_buf(), source })
}
