//! Dense channel-major tensors and the handful of kernels the backbone needs.

use crate::error::{invalid, Result};
use crate::par;

/// A `channels × height × width` map of `f32`, channel-major with each
/// channel plane stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Tensor3 { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return invalid(format!("tensor data has {} values, expected {channels}x{height}x{width}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("tensor data contains non-finite values");
        }
        Ok(Tensor3 { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Returns `self * s` elementwise.
    pub fn scaled(&self, s: f32) -> Tensor3 {
        Tensor3 { data: self.data.iter().map(|v| v * s).collect(), ..self.clone() }
    }
}

/// Parameters of one stride-1 convolution layer, weights in
/// `(out, in, kh, kw)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weights: Vec<f32>,
        biases: Vec<f32>,
    ) -> Result<Self> {
        let name = name.into();
        if weights.len() != out_channels * in_channels * kernel_h * kernel_w {
            return invalid(format!("{name}: weight count does not match shape"));
        }
        if biases.len() != out_channels {
            return invalid(format!("{name}: bias count does not match out_channels"));
        }
        Ok(ConvLayer { name, out_channels, in_channels, kernel_h, kernel_w, weights, biases })
    }

    #[inline]
    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn same_padding(&self) -> usize {
        (self.kernel_h - 1) / 2
    }
}

/// Stride-1 zero-padded convolution producing a same-size output.
///
/// Every output pixel accumulates `bias`, then input channels in order, then
/// kernel taps row-major, so results are identical for any thread count.
pub fn conv2d(input: &Tensor3, layer: &ConvLayer, padding: usize) -> Result<Tensor3> {
    if layer.in_channels != input.channels {
        return invalid(format!(
            "{}: expects {} input channels, got {}",
            layer.name, layer.in_channels, input.channels
        ));
    }
    if layer.kernel_h.is_multiple_of(2) || layer.kernel_w.is_multiple_of(2) {
        return invalid(format!("{}: kernel dimensions must be odd", layer.name));
    }
    if layer.kernel_h != layer.kernel_w || padding != layer.same_padding() {
        return invalid(format!("{}: padding {padding} does not give a same-size output", layer.name));
    }
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    let mut out = Tensor3::zeros(layer.out_channels, h, w);
    if plane == 0 {
        return Ok(out);
    }
    let k = layer.kernel_h;
    let per_out = layer.in_channels * k * k;

    par::for_each_chunk_mut(&mut out.data, plane, |o, dst| {
        dst.fill(layer.biases[o]);
        let wo = &layer.weights[o * per_out..(o + 1) * per_out];
        for ic in 0..layer.in_channels {
            let src = input.plane(ic);
            let wk = &wo[ic * k * k..(ic + 1) * k * k];
            for y in 0..h {
                let row = &mut dst[y * w..(y + 1) * w];
                for ky in 0..k {
                    let iy = y as isize + ky as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    let taps = &wk[ky * k..(ky + 1) * k];
                    if k == 3 {
                        accumulate_row3(row, srow, [taps[0], taps[1], taps[2]]);
                    } else {
                        accumulate_row(row, srow, taps, padding);
                    }
                }
            }
        }
    });
    Ok(out)
}

// row[x] += t0*src[x-1] + t1*src[x] + t2*src[x+1], left to right, skipping
// taps that fall outside the row.
#[inline]
fn accumulate_row3(row: &mut [f32], src: &[f32], t: [f32; 3]) {
    let w = row.len();
    if w == 1 {
        row[0] += t[1] * src[0];
        return;
    }
    row[0] = row[0] + t[1] * src[0] + t[2] * src[1];
    for (o, s) in row[1..w - 1].iter_mut().zip(src.windows(3)) {
        *o = *o + t[0] * s[0] + t[1] * s[1] + t[2] * s[2];
    }
    row[w - 1] = row[w - 1] + t[0] * src[w - 2] + t[1] * src[w - 1];
}

fn accumulate_row(row: &mut [f32], src: &[f32], taps: &[f32], padding: usize) {
    let w = row.len() as isize;
    for (x, o) in row.iter_mut().enumerate() {
        let mut acc = *o;
        for (kx, &t) in taps.iter().enumerate() {
            let ix = x as isize + kx as isize - padding as isize;
            if ix >= 0 && ix < w {
                acc += t * src[ix as usize];
            }
        }
        *o = acc;
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor3) -> Tensor3 {
    let mut out = input.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(t: &mut Tensor3) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// 2×2 max pooling with stride 2.
pub fn maxpool2(input: &Tensor3) -> Result<Tensor3> {
    if !input.height.is_multiple_of(2) || !input.width.is_multiple_of(2) {
        return invalid(format!("maxpool2 needs even dimensions, got {}x{}", input.height, input.width));
    }
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut out = Tensor3::zeros(input.channels, oh, ow);
    if oh * ow == 0 {
        return Ok(out);
    }
    par::for_each_chunk_mut(&mut out.data, oh * ow, |c, dst| {
        let src = input.plane(c);
        let w = input.width;
        for y in 0..oh {
            let r0 = &src[2 * y * w..];
            let r1 = &src[(2 * y + 1) * w..];
            for x in 0..ow {
                let m = r0[2 * x].max(r0[2 * x + 1]).max(r1[2 * x]).max(r1[2 * x + 1]);
                dst[y * ow + x] = m;
            }
        }
    });
    Ok(out)
}

/// Corner-aligned source coordinate for output index `i`: output corners map
/// exactly onto input corners.
#[inline]
pub fn corner_aligned(i: usize, src_len: usize, dst_len: usize) -> f64 {
    if dst_len <= 1 || src_len <= 1 {
        0.0
    } else {
        i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Bilinear resampling with corner-aligned sample positions.
pub fn bilinear_resize(input: &Tensor3, new_h: usize, new_w: usize) -> Result<Tensor3> {
    if new_h == 0 || new_w == 0 {
        return invalid("bilinear_resize target dimensions must be at least 1");
    }
    if input.height == 0 || input.width == 0 {
        return invalid("bilinear_resize input is empty");
    }
    let (h, w) = (input.height, input.width);
    let taps = |len: usize, src_len: usize| -> Vec<(usize, usize, f32)> {
        (0..len)
            .map(|i| {
                let s = corner_aligned(i, src_len, len);
                let i0 = (s.floor() as usize).min(src_len - 1);
                let i1 = (i0 + 1).min(src_len - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(new_h, h);
    let xs = taps(new_w, w);
    let mut out = Tensor3::zeros(input.channels, new_h, new_w);
    par::for_each_chunk_mut(&mut out.data, new_h * new_w, |c, dst| {
        let src = input.plane(c);
        for (y, &(y0, y1, ty)) in ys.iter().enumerate() {
            for (x, &(x0, x1, tx)) in xs.iter().enumerate() {
                let top = lerp(src[y0 * w + x0], src[y0 * w + x1], tx);
                let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], tx);
                dst[y * new_w + x] = lerp(top, bottom, ty);
            }
        }
    });
    Ok(out)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}
