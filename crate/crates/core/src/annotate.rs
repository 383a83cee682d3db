//! Side-by-side visualization of correspondences: numbered, color-matched
//! ring markers on both images.

use image::{Rgb, RgbImage};

use crate::engine::Pixel;

const GAP: u32 = 8;

/// Marker colors, indexed by position in the rank-ordered buddy list.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
];

// 3×5 bitmaps, one row per entry, high bit on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

fn put(canvas: &mut RgbImage, x: i64, y: i64, color: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as u32) < canvas.width() && (y as u32) < canvas.height() {
        canvas.put_pixel(x as u32, y as u32, Rgb(color));
    }
}

fn ring(canvas: &mut RgbImage, cx: i64, cy: i64, radius: i64, color: [u8; 3]) {
    let (inner, outer) = ((radius - 1).pow(2), (radius + 1).pow(2));
    for dy in -radius - 1..=radius + 1 {
        for dx in -radius - 1..=radius + 1 {
            let d = dx * dx + dy * dy;
            if d >= inner && d <= outer {
                put(canvas, cx + dx, cy + dy, color);
            }
        }
    }
    put(canvas, cx, cy, color);
}

fn label(canvas: &mut RgbImage, x: i64, y: i64, n: usize, scale: i64, color: [u8; 3]) {
    for (i, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let ox = x + i as i64 * 4 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits >> (2 - col) & 1 == 1 {
                    for sy in 0..scale {
                        for sx in 0..scale {
                            put(canvas, ox + col * scale + sx, y + row as i64 * scale + sy, color);
                        }
                    }
                }
            }
        }
    }
}

/// Places `img_a` and `img_b` side by side and marks each pair `i` with the
/// number `i + 1` in `PALETTE[i % 10]`.
pub fn draw_matches(img_a: &RgbImage, img_b: &RgbImage, pairs: &[(Pixel, Pixel)]) -> RgbImage {
    let width = img_a.width() + GAP + img_b.width();
    let height = img_a.height().max(img_b.height());
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    image::imageops::replace(&mut canvas, img_a, 0, 0);
    let offset = (img_a.width() + GAP) as i64;
    image::imageops::replace(&mut canvas, img_b, offset, 0);

    let min_side = img_a.width().min(img_a.height()).min(img_b.width()).min(img_b.height()) as i64;
    let radius = (min_side / 40).max(3);
    let scale = (min_side / 100).max(1);
    for (i, (a, b)) in pairs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for (x, y) in [(a.x as i64, a.y as i64), (b.x as i64 + offset, b.y as i64)] {
            ring(&mut canvas, x, y, radius, color);
            label(&mut canvas, x + radius + 2, y - radius - 2, i + 1, scale, color);
        }
    }
    canvas
}
