//! VGG-19 convolutional trunk up to `conv5_1`: weight loading, input
//! canonicalization and the five-level feature pyramid.

use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, NbbError, Result};
use crate::tensor::{bilinear_resize, conv2d, maxpool2, relu_in_place, ConvLayer, Tensor3};

pub const NBBW_MAGIC: &[u8; 4] = b"NBBW";
pub const NBBW_VERSION: u32 = 1;
/// Pixels scaled to `[0, 1]`, then per-channel `(x - mean) / std`.
pub const NORM_UNIT_MEAN_STD: u8 = 1;

pub const CHANNEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const CHANNEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

pub const DEFAULT_SIDE: usize = 224;
pub const LEVELS: usize = 5;

/// `(name, out_channels, in_channels)` of every stored layer, in execution order.
pub const VGG19_LAYERS: [(&str, usize, usize); 13] = [
    ("conv1_1", 64, 3),
    ("conv1_2", 64, 64),
    ("conv2_1", 128, 64),
    ("conv2_2", 128, 128),
    ("conv3_1", 256, 128),
    ("conv3_2", 256, 256),
    ("conv3_3", 256, 256),
    ("conv3_4", 256, 256),
    ("conv4_1", 512, 256),
    ("conv4_2", 512, 512),
    ("conv4_3", 512, 512),
    ("conv4_4", 512, 512),
    ("conv5_1", 512, 512),
];

/// Pyramid taps: index into `VGG19_LAYERS` of the first conv of each block.
const TAP_LAYERS: [usize; LEVELS] = [0, 2, 4, 8, 12];

pub const LEVEL_CHANNELS: [usize; LEVELS] = [64, 128, 256, 512, 512];

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights {
    layers: Vec<ConvLayer>,
}

impl BackboneWeights {
    /// Validates layer names, order and shapes against the VGG-19 trunk.
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.len() != VGG19_LAYERS.len() {
            return Err(NbbError::Schema(format!("expected {} layers, found {}", VGG19_LAYERS.len(), layers.len())));
        }
        for (layer, &(name, out, inp)) in layers.iter().zip(VGG19_LAYERS.iter()) {
            check_layer_header(
                &layer.name,
                layer.out_channels,
                layer.in_channels,
                layer.kernel_h,
                layer.kernel_w,
                name,
                out,
                inp,
            )?;
        }
        Ok(BackboneWeights { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&ConvLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    /// Deterministic He-uniform weights and small random biases. Stands in
    /// for the pretrained checkpoint in tests and benchmarks.
    pub fn randomized(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = VGG19_LAYERS
            .iter()
            .map(|&(name, out, inp)| {
                let bound = (6.0 / (inp * 9) as f32).sqrt();
                let weights = (0..out * inp * 9).map(|_| rng.gen_range(-bound..bound)).collect();
                let biases = (0..out).map(|_| rng.gen_range(-0.05..0.05)).collect();
                ConvLayer::new(name, out, inp, 3, 3, weights, biases).expect("shape is consistent")
            })
            .collect();
        BackboneWeights { layers }
    }

    /// All weights zero, biases set to `bias`.
    pub fn constant(bias: f32) -> Self {
        let layers = VGG19_LAYERS
            .iter()
            .map(|&(name, out, inp)| {
                ConvLayer::new(name, out, inp, 3, 3, vec![0.0; out * inp * 9], vec![bias; out])
                    .expect("shape is consistent")
            })
            .collect();
        BackboneWeights { layers }
    }

    pub fn to_nbbw_bytes(&self) -> Vec<u8> {
        let params: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        let mut buf = Vec::with_capacity(13 + params * 4 + self.layers.len() * 32);
        buf.extend_from_slice(NBBW_MAGIC);
        buf.extend_from_slice(&NBBW_VERSION.to_le_bytes());
        buf.push(NORM_UNIT_MEAN_STD);
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(l.name.as_bytes());
            for d in [l.out_channels, l.in_channels, l.kernel_h, l.kernel_w] {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in l.weights.iter().chain(&l.biases) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_nbbw_bytes()).map_err(|source| NbbError::Io { path: path.to_path_buf(), source })
    }

    pub fn from_nbbw_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "header")?;
        if magic != NBBW_MAGIC {
            return Err(NbbError::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.u32("header")?;
        if version != NBBW_VERSION {
            return Err(NbbError::Format(format!("unsupported version {version}")));
        }
        let norm = r.take(1, "header")?[0];
        if norm != NORM_UNIT_MEAN_STD {
            return Err(NbbError::Format(format!("unknown normalization tag {norm}")));
        }
        let count = r.u32("header")? as usize;
        if count != VGG19_LAYERS.len() {
            return Err(NbbError::Schema(format!("expected {} layers, found {count}", VGG19_LAYERS.len())));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, &(want, want_out, want_in)) in VGG19_LAYERS.iter().enumerate() {
            let ctx = format!("layer {i} header");
            let name_len = r.u16(&ctx)? as usize;
            let name = String::from_utf8(r.take(name_len, &ctx)?.to_vec())
                .map_err(|_| NbbError::Format(format!("layer {i} name is not UTF-8")))?;
            let out = r.u32(&name)? as usize;
            let inp = r.u32(&name)? as usize;
            let kh = r.u32(&name)? as usize;
            let kw = r.u32(&name)? as usize;
            check_layer_header(&name, out, inp, kh, kw, want, want_out, want_in)?;
            let weights = r.f32s(out * inp * kh * kw, &format!("{name} weights"))?;
            let biases = r.f32s(out, &format!("{name} biases"))?;
            if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
                return Err(NbbError::Format(format!("{name} contains non-finite values")));
            }
            layers.push(ConvLayer::new(name, out, inp, kh, kw, weights, biases)?);
        }
        if r.pos != bytes.len() {
            return Err(NbbError::Format(format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
        }
        Ok(BackboneWeights { layers })
    }
}

#[allow(clippy::too_many_arguments)]
fn check_layer_header(
    name: &str,
    out: usize,
    inp: usize,
    kh: usize,
    kw: usize,
    want: &str,
    want_out: usize,
    want_in: usize,
) -> Result<()> {
    if name != want {
        return Err(NbbError::Schema(format!("expected layer {want}, found {name}")));
    }
    if (out, inp, kh, kw) != (want_out, want_in, 3, 3) {
        return Err(NbbError::Schema(format!(
            "{name} has shape ({out},{inp},{kh},{kw}), expected ({want_out},{want_in},3,3)"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NbbError::Truncated(ctx.to_string())),
        }
    }

    fn u16(&mut self, ctx: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, ctx)?.try_into().unwrap()))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, ctx: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, ctx)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

/// Reads and validates an NBBW weight file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<BackboneWeights> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NbbError::Io { path: path.to_path_buf(), source })?;
    BackboneWeights::from_nbbw_bytes(&bytes)
}

/// Resizes `image` to `side × side` and applies the mean/std normalization
/// declared by the weight format.
pub fn preprocess(image: &RgbImage, side: usize) -> Result<Tensor3> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return invalid("image is empty");
    }
    if side == 0 || !side.is_multiple_of(16) {
        return invalid(format!("side must be a positive multiple of 16, got {side}"));
    }
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    let raw = Tensor3::from_vec(3, h, w, data)?;
    let mut t = bilinear_resize(&raw, side, side)?;
    let plane = side * side;
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v = (*v - CHANNEL_MEAN[c]) / CHANNEL_STD[c]);
    }
    Ok(t)
}

/// Per-location L2 norm of the channel vector, min-max rescaled to `[0, 1]`.
/// A map whose norms are all equal normalizes to zeros.
pub fn normalize_activations(features: &Tensor3) -> Tensor3 {
    let (h, w) = (features.height(), features.width());
    let plane = h * w;
    let mut norms = vec![0.0f64; plane];
    for c in 0..features.channels() {
        for (n, &v) in norms.iter_mut().zip(features.plane(c)) {
            *n += (v as f64) * (v as f64);
        }
    }
    norms.iter_mut().for_each(|n| *n = n.sqrt());
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data = if plane == 0 || hi == lo {
        vec![0.0; plane]
    } else {
        norms.iter().map(|&n| ((n - lo) / (hi - lo)) as f32).collect()
    };
    Tensor3::from_vec(1, h, w, data).expect("finite by construction")
}

/// One pyramid level: features tapped after `relu{level}_1` and their
/// normalized activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct PyramidLevel {
    pub features: Tensor3,
    pub activation: Tensor3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    /// `levels[0]` is the finest level (ℓ = 1).
    pub levels: Vec<PyramidLevel>,
    /// `(height, width)` of the canonicalized network input.
    pub input_size: (usize, usize),
    /// `(height, width)` of the source image.
    pub original_size: (usize, usize),
}

impl FeaturePyramid {
    /// Builds a pyramid from precomputed per-level features, finest first.
    pub fn from_features(
        features: Vec<Tensor3>,
        input_size: (usize, usize),
        original_size: (usize, usize),
    ) -> Result<Self> {
        if features.len() != LEVELS {
            return invalid(format!("pyramid needs {LEVELS} levels, got {}", features.len()));
        }
        for (l, f) in features.iter().enumerate() {
            let (eh, ew) = (input_size.0 >> l, input_size.1 >> l);
            if f.height() != eh || f.width() != ew {
                return invalid(format!("level {} is {}x{}, expected {eh}x{ew}", l + 1, f.height(), f.width()));
            }
        }
        let levels = features
            .into_iter()
            .map(|features| PyramidLevel { activation: normalize_activations(&features), features })
            .collect();
        Ok(FeaturePyramid { levels, input_size, original_size })
    }

    /// Level `ℓ` in `1..=5`.
    pub fn level(&self, level: usize) -> &PyramidLevel {
        &self.levels[level - 1]
    }

    pub fn with_original_size(mut self, height: usize, width: usize) -> Self {
        self.original_size = (height, width);
        self
    }
}

/// Runs the conv/relu chain with 2×2 pooling between blocks and taps the
/// first ReLU of each block.
pub fn extract_pyramid(input: &Tensor3, weights: &BackboneWeights) -> Result<FeaturePyramid> {
    if input.channels() != 3 {
        return invalid(format!("backbone input needs 3 channels, got {}", input.channels()));
    }
    let (h, w) = (input.height(), input.width());
    if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
        return invalid(format!("backbone input {h}x{w} is not a multiple of 16"));
    }
    let mut taps = Vec::with_capacity(LEVELS);
    let mut x = input.clone();
    for (i, layer) in weights.layers.iter().enumerate() {
        if i > 0 && TAP_LAYERS.contains(&i) {
            x = maxpool2(&x)?;
        }
        x = conv2d(&x, layer, layer.same_padding())?;
        relu_in_place(&mut x);
        if TAP_LAYERS.contains(&i) {
            taps.push(x.clone());
        }
    }
    FeaturePyramid::from_features(taps, (h, w), (h, w))
}

/// Preprocesses `image` and extracts its pyramid, recording the image's own size.
pub fn image_pyramid(image: &RgbImage, side: usize, weights: &BackboneWeights) -> Result<FeaturePyramid> {
    let input = preprocess(image, side)?;
    let (w, h) = image.dimensions();
    Ok(extract_pyramid(&input, weights)?.with_original_size(h as usize, w as usize))
}
