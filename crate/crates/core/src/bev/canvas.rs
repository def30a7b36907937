//! Integer-only raster drawing: no anti-aliasing, so output is byte-stable.

use font8x8::legacy::BASIC_LEGACY;
use image::{Rgb, RgbImage};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const GRAY: Rgb<u8> = Rgb([127, 127, 127]);

/// Glyph cell edge in pixels at scale 1.
pub const GLYPH: i64 = 8;

/// Ten-color categorical palette; instance `id` uses entry `id % 10`.
pub const PALETTE: [Rgb<u8>; 10] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
    Rgb([188, 189, 34]),
    Rgb([23, 190, 207]),
];

pub fn instance_color(id: Option<u32>) -> Rgb<u8> {
    id.map_or(GRAY, |i| PALETTE[i as usize % PALETTE.len()])
}

pub fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

pub fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
    for y in y0..=y1 {
        for x in x0..=x1 {
            put(img, x, y, c);
        }
    }
}

/// Rectangle outline `thickness` pixels wide, drawn inward from the given corners.
pub fn stroke_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, thickness: i64, c: Rgb<u8>) {
    for t in 0..thickness {
        fill_rect(img, x0 + t, y0 + t, x1 - t, y0 + t, c);
        fill_rect(img, x0 + t, y1 - t, x1 - t, y1 - t, c);
        fill_rect(img, x0 + t, y0 + t, x0 + t, y1 - t, c);
        fill_rect(img, x1 - t, y0 + t, x1 - t, y1 - t, c);
    }
}

pub fn fill_circle(img: &mut RgbImage, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                put(img, cx + dx, cy + dy, c);
            }
        }
    }
}

/// Filled arrowhead with its tip at `(x, y)` pointing right.
pub fn arrow_right(img: &mut RgbImage, x: i64, y: i64, size: i64, c: Rgb<u8>) {
    for i in 0..=size {
        fill_rect(img, x - i, y - i, x - i, y + i, c);
    }
}

/// Filled arrowhead with its tip at `(x, y)` pointing up.
pub fn arrow_up(img: &mut RgbImage, x: i64, y: i64, size: i64, c: Rgb<u8>) {
    for i in 0..=size {
        fill_rect(img, x - i, y + i, x + i, y + i, c);
    }
}

/// Width in pixels of `text` at `scale`.
pub fn text_width(text: &str, scale: i64) -> i64 {
    text.chars().count() as i64 * GLYPH * scale
}

/// Draw `text` with its top-left corner at `(x, y)`. Characters outside
/// 7-bit ASCII render as `?`.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64, c: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let code = if ch.is_ascii() { ch as usize } else { '?' as usize };
        let glyph = BASIC_LEGACY[code];
        let ox = x + i as i64 * GLYPH * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                if bits >> col & 1 == 1 {
                    fill_rect(
                        img,
                        ox + col * scale,
                        y + row as i64 * scale,
                        ox + col * scale + scale - 1,
                        y + row as i64 * scale + scale - 1,
                        c,
                    );
                }
            }
        }
    }
}

/// Text on a solid label plate with `pad` pixels of padding.
pub fn draw_label(img: &mut RgbImage, x: i64, y: i64, text: &str, scale: i64, pad: i64, fg: Rgb<u8>, bg: Rgb<u8>) {
    fill_rect(img, x, y, x + text_width(text, scale) + 2 * pad - 1, y + GLYPH * scale + 2 * pad - 1, bg);
    draw_text(img, x + pad, y + pad, text, scale, fg);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_pixel_count_matches_lattice_count() {
        let mut img = RgbImage::from_pixel(64, 64, WHITE);
        fill_circle(&mut img, 32, 32, 10, BLACK);
        let drawn = img.pixels().filter(|p| **p == BLACK).count();
        let lattice = (-10i64..=10).flat_map(|y| (-10i64..=10).map(move |x| x * x + y * y)).filter(|d| *d <= 100).count();
        assert_eq!(drawn, lattice);
        assert_eq!(*img.get_pixel(42, 32), BLACK);
        assert_eq!(*img.get_pixel(43, 32), WHITE);
    }

    #[test]
    fn drawing_is_clipped() {
        let mut img = RgbImage::from_pixel(10, 10, WHITE);
        fill_circle(&mut img, 0, 0, 5, BLACK);
        draw_text(&mut img, 5, 5, "WW", 2, BLACK);
    }

    #[test]
    fn glyph_bits_are_left_to_right() {
        let mut img = RgbImage::from_pixel(8, 8, WHITE);
        draw_text(&mut img, 0, 0, "L", 1, BLACK);
        // 'L' has its stem on the left.
        assert_eq!(*img.get_pixel(1, 3), BLACK);
        assert_eq!(*img.get_pixel(6, 3), WHITE);
    }

    #[test]
    fn palette_wraps() {
        assert_eq!(instance_color(Some(3)), instance_color(Some(13)));
        assert_eq!(instance_color(None), GRAY);
    }
}
