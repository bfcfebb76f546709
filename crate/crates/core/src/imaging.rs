//! Minimal 8-bit raster support: PNG I/O, cropping with white padding and
//! bilinear rotation about the image center.

use std::path::Path;

use thiserror::Error;

use crate::geometry::{Angle, AxisBox};

/// Sample value used for everything outside the source image.
pub const WHITE: u8 = 255;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid raster: {0}")]
    Invalid(String),
    #[error("box ({left:.4},{top:.4})-({right:.4},{bottom:.4}) lies outside the image")]
    OutsideImage { left: f64, top: f64, right: f64, bottom: f64 },
    #[error("image i/o: {0}")]
    Codec(#[from] image::ImageError),
}

/// Row-major 8-bit raster with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid(format!("{width}x{height} has no pixels")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Invalid(format!("{channels} channels")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(ImageError::Invalid(format!(
                "buffer holds {} samples, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImageError> {
        let n = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; n])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let o = self.offset(x, y);
        &self.pixels[o..o + self.channels as usize]
    }

    pub fn pixel_mut(&mut self, x: u32, y: u32) -> &mut [u8] {
        let o = self.offset(x, y);
        let c = self.channels as usize;
        &mut self.pixels[o..o + c]
    }

    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Raster { channels: 3, pixels, ..*self }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let img = image::open(path)?;
        Ok(match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Raster::new(w, h, 1, g.into_raw())?
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Raster::new(w, h, 3, rgb.into_raw())?
            }
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.pixels,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

/// Reads only the PNG header.
pub fn png_dimensions(path: impl AsRef<Path>) -> Result<(u32, u32), ImageError> {
    Ok(image::image_dimensions(path)?)
}

/// Pixel rectangle; may overhang the image it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub x0: i64,
    pub y0: i64,
    pub w: u32,
    pub h: u32,
}

impl PixelRect {
    pub fn center(&self) -> (f64, f64) {
        (self.x0 as f64 + self.w as f64 / 2.0, self.y0 as f64 + self.h as f64 / 2.0)
    }
}

/// Converts a normalized box to whole pixels: edges are rounded to the
/// nearest pixel and clamped to the image, and each side keeps at least one
/// pixel.
pub fn to_pixel_rect(b: &AxisBox, image_w: u32, image_h: u32) -> Result<PixelRect, ImageError> {
    if b.right() <= 0.0 || b.left() >= 1.0 || b.bottom() <= 0.0 || b.top() >= 1.0 {
        return Err(ImageError::OutsideImage {
            left: b.left(),
            top: b.top(),
            right: b.right(),
            bottom: b.bottom(),
        });
    }
    let (x0, w) = snap(b.left(), b.right(), image_w);
    let (y0, h) = snap(b.top(), b.bottom(), image_h);
    Ok(PixelRect { x0, y0, w, h })
}

fn snap(lo: f64, hi: f64, size: u32) -> (i64, u32) {
    let size_i = size as i64;
    let mut a = ((lo * size as f64).round() as i64).clamp(0, size_i);
    let mut b = ((hi * size as f64).round() as i64).clamp(0, size_i);
    if b <= a {
        if a >= size_i {
            a = size_i - 1;
        }
        b = a + 1;
    }
    (a, (b - a) as u32)
}

/// Copies `r` out of `img`; parts of `r` outside the image are white.
pub fn crop(img: &Raster, r: PixelRect) -> Raster {
    let c = img.channels as usize;
    let mut out = Raster::filled(r.w, r.h, img.channels, WHITE).expect("rect has positive size");
    let src_x0 = r.x0.max(0);
    let src_x1 = (r.x0 + r.w as i64).min(img.width as i64);
    if src_x1 <= src_x0 {
        return out;
    }
    let span = (src_x1 - src_x0) as usize * c;
    for oy in 0..r.h {
        let sy = r.y0 + oy as i64;
        if sy < 0 || sy >= img.height as i64 {
            continue;
        }
        let src = img.offset(src_x0 as u32, sy as u32);
        let dst = out.offset((src_x0 - r.x0) as u32, oy);
        out.pixels[dst..dst + span].copy_from_slice(&img.pixels[src..src + span]);
    }
    out
}

/// Rotates the image content by `angle` about the image center, keeping the
/// dimensions. A positive angle turns content clockwise on screen (y-down),
/// matching [`crate::geometry::Point::rotate_about`]. Each output pixel is
/// bilinearly sampled from the inverse-rotated source position; taps
/// outside the source read as white.
pub fn rotate_about_center(img: &Raster, angle: Angle) -> Raster {
    if angle.radians() == 0.0 {
        return img.clone();
    }
    let (w, h, c) = (img.width as usize, img.height as usize, img.channels as usize);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = angle.radians().sin_cos();
    let mut out = vec![WHITE; img.pixels.len()];
    let tap = |x: i64, y: i64, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            WHITE as f64
        } else {
            img.pixels[(y as usize * w + x as usize) * c + ch] as f64
        }
    };
    for oy in 0..h {
        let dy = oy as f64 + 0.5 - cy;
        for ox in 0..w {
            let dx = ox as f64 + 0.5 - cx;
            // inverse rotation, then back to sample-index space
            let sx = cx + cos * dx + sin * dy - 0.5;
            let sy = cy - sin * dx + cos * dy - 0.5;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let base = (oy * w + ox) * c;
            for ch in 0..c {
                let top = tap(x0, y0, ch) * (1.0 - fx) + tap(x0 + 1, y0, ch) * fx;
                let bottom = tap(x0, y0 + 1, ch) * (1.0 - fx) + tap(x0 + 1, y0 + 1, ch) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out[base + ch] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Raster { pixels: out, ..*img }
}

/// Whether bit (`gx`, `gy`) of the 8x8 bitmap glyph for `c` is set.
/// Characters without a glyph render as blanks.
pub fn glyph_bit(c: char, gx: u32, gy: u32) -> bool {
    use font8x8::UnicodeFonts;
    font8x8::BASIC_FONTS
        .get(c)
        .is_some_and(|rows| rows[gy as usize & 7] >> (gx & 7) & 1 == 1)
}

impl Raster {
    /// Sets one pixel if it lies inside the image. `color` is repeated or
    /// truncated to the channel count.
    pub fn put(&mut self, x: i64, y: i64, color: &[u8]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let o = self.offset(x as u32, y as u32);
        for ch in 0..self.channels as usize {
            self.pixels[o + ch] = color[ch.min(color.len() - 1)];
        }
    }

    /// Draws a straight segment `thickness` pixels wide.
    pub fn draw_line(&mut self, from: (f64, f64), to: (f64, f64), thickness: u32, color: &[u8]) {
        let (dx, dy) = (to.0 - from.0, to.1 - from.1);
        let steps = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
        let r = thickness as i64 / 2;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let (x, y) = ((from.0 + t * dx).floor() as i64, (from.1 + t * dy).floor() as i64);
            for oy in -r..thickness as i64 - r {
                for ox in -r..thickness as i64 - r {
                    self.put(x + ox, y + oy, color);
                }
            }
        }
    }

    /// Draws the outline of a pixel rectangle, growing inwards.
    pub fn draw_rect(&mut self, r: PixelRect, thickness: u32, color: &[u8]) {
        for t in 0..thickness as i64 {
            let (x0, y0) = (r.x0 + t, r.y0 + t);
            let (x1, y1) = (r.x0 + r.w as i64 - 1 - t, r.y0 + r.h as i64 - 1 - t);
            if x1 < x0 || y1 < y0 {
                break;
            }
            for x in x0..=x1 {
                self.put(x, y0, color);
                self.put(x, y1, color);
            }
            for y in y0..=y1 {
                self.put(x0, y, color);
                self.put(x1, y, color);
            }
        }
    }

    /// Renders `text` with the 8x8 bitmap font, each font pixel drawn as a
    /// `scale` x `scale` block, top-left corner at (`x`, `y`).
    pub fn draw_text(&mut self, x: i64, y: i64, scale: u32, text: &str, color: &[u8]) {
        let s = scale.max(1) as i64;
        for (i, c) in text.chars().enumerate() {
            let left = x + i as i64 * 8 * s;
            for gy in 0..8 {
                for gx in 0..8 {
                    if !glyph_bit(c, gx, gy) {
                        continue;
                    }
                    for oy in 0..s {
                        for ox in 0..s {
                            self.put(left + gx as i64 * s + ox, y + gy as i64 * s + oy, color);
                        }
                    }
                }
            }
        }
    }
}
