//! Line crops: cut the envelope of a line out of a page and rotate it so the
//! text runs horizontally, with the coordinate maps between page and crop.
//!
//! Angles are measured in pixel space. On non-square pages the inclination
//! of a box in normalized coordinates differs from the visual one, and a
//! rotation is only rigid in pixel units.

use thiserror::Error;

use crate::geometry::{Angle, AxisBox, GeometryError, OrientedBox, Point};
use crate::imaging::{self, ImageError, PixelRect, Raster};

#[derive(Debug, Error)]
pub enum DeskewError {
    #[error("line geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("line crop: {0}")]
    Image(#[from] ImageError),
}

/// Rotates the center of a pixel-space box by `-angle` about `center`; the
/// width and height are kept unchanged.
pub fn deskew_box(b: &AxisBox, center: Point, angle: Angle) -> AxisBox {
    let c = b.center().rotate_about(center, -angle);
    AxisBox { cx: c.x, cy: c.y, w: b.w, h: b.h }
}

/// Inverse of [`deskew_box`].
pub fn reskew_box(b: &AxisBox, center: Point, angle: Angle) -> AxisBox {
    let c = b.center().rotate_about(center, angle);
    AxisBox { cx: c.x, cy: c.y, w: b.w, h: b.h }
}

/// Inclination of a page-normalized line measured in pixels.
pub fn pixel_angle(line: &OrientedBox, page_w: u32, page_h: u32) -> Angle {
    line.scale(page_w as f64, page_h as f64).angle()
}

/// Placement of a line crop on its page: the pixel rectangle cut out and
/// the inclination the crop is rotated back by.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropFrame {
    pub rect: PixelRect,
    /// Pixel-space inclination of the source line; the crop is rotated by
    /// its negation.
    pub angle: Angle,
    pub page_w: u32,
    pub page_h: u32,
}

impl CropFrame {
    pub fn for_line(line: &OrientedBox, page_w: u32, page_h: u32) -> Result<Self, DeskewError> {
        let envelope = line.envelope()?;
        let rect = imaging::to_pixel_rect(&envelope, page_w, page_h)?;
        let angle = pixel_angle(line, page_w, page_h);
        Ok(Self { rect, angle, page_w, page_h })
    }

    /// Rotation center in crop-local pixels.
    pub fn center(&self) -> Point {
        Point::new(self.rect.w as f64 / 2.0, self.rect.h as f64 / 2.0)
    }

    /// Page-normalized box to crop-local pixels.
    pub fn page_to_crop_px(&self, b: &AxisBox) -> AxisBox {
        let px = b
            .scale(self.page_w as f64, self.page_h as f64)
            .translate(-self.rect.x0 as f64, -self.rect.y0 as f64);
        deskew_box(&px, self.center(), self.angle)
    }

    /// Page-normalized box to crop-normalized coordinates.
    pub fn page_to_crop(&self, b: &AxisBox) -> AxisBox {
        self.page_to_crop_px(b)
            .scale(1.0 / self.rect.w as f64, 1.0 / self.rect.h as f64)
    }

    /// Crop-normalized box back to page-normalized coordinates.
    pub fn crop_to_page(&self, b: &AxisBox) -> AxisBox {
        let px = b.scale(self.rect.w as f64, self.rect.h as f64);
        reskew_box(&px, self.center(), self.angle)
            .translate(self.rect.x0 as f64, self.rect.y0 as f64)
            .scale(1.0 / self.page_w as f64, 1.0 / self.page_h as f64)
    }

    /// Page-normalized point to crop-local pixels.
    pub fn point_to_crop_px(&self, p: Point) -> Point {
        Point::new(
            p.x * self.page_w as f64 - self.rect.x0 as f64,
            p.y * self.page_h as f64 - self.rect.y0 as f64,
        )
        .rotate_about(self.center(), -self.angle)
    }

    /// A page-normalized line expressed in deskewed crop-local pixels.
    pub fn deskewed_line(&self, line: &OrientedBox) -> Result<OrientedBox, GeometryError> {
        line.map(|p| self.point_to_crop_px(p))
    }
}

/// A deskewed line image and its frame.
#[derive(Debug, Clone)]
pub struct LineCrop {
    pub frame: CropFrame,
    pub image: Raster,
}

impl LineCrop {
    pub fn new(page: &Raster, line: &OrientedBox) -> Result<Self, DeskewError> {
        let frame = CropFrame::for_line(line, page.width(), page.height())?;
        Ok(Self::with_frame(page, frame))
    }

    pub fn with_frame(page: &Raster, frame: CropFrame) -> Self {
        let raw = imaging::crop(page, frame.rect);
        let image = imaging::rotate_about_center(&raw, -frame.angle);
        Self { frame, image }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sloped_line() -> OrientedBox {
        OrientedBox::from_coords([0.1, 0.30, 0.9, 0.38, 0.9, 0.46, 0.1, 0.38]).unwrap()
    }

    #[test]
    fn deskew_keeps_extents_bit_exact() {
        let b = AxisBox::new(123.456, 78.9, 33.3, 12.1).unwrap();
        let d = deskew_box(&b, Point::new(50.0, 40.0), Angle(0.0871));
        assert_eq!(d.w.to_bits(), b.w.to_bits());
        assert_eq!(d.h.to_bits(), b.h.to_bits());
        let back = reskew_box(&d, Point::new(50.0, 40.0), Angle(0.0871));
        assert!((back.cx - b.cx).abs() < 1e-9 && (back.cy - b.cy).abs() < 1e-9);
    }

    #[test]
    fn deskewed_line_is_horizontal() {
        for (w, h) in [(800, 800), (1200, 700)] {
            let crop = CropFrame::for_line(&sloped_line(), w, h).unwrap();
            let d = crop.deskewed_line(&sloped_line()).unwrap();
            assert!(d.angle().radians().abs() < 1e-9, "{w}x{h}: {:?}", d.angle());
            assert!((d.top_left().y - d.top_right().y).abs() < 1e-9);
        }
    }

    #[test]
    fn page_crop_round_trip() {
        let crop = CropFrame::for_line(&sloped_line(), 1000, 640).unwrap();
        let word = AxisBox::new(0.4, 0.36, 0.05, 0.02).unwrap();
        let local = crop.page_to_crop(&word);
        let back = crop.crop_to_page(&local);
        assert!((back.cx - word.cx).abs() < 1e-12);
        assert!((back.cy - word.cy).abs() < 1e-12);
        assert!((back.w - word.w).abs() < 1e-12);
        assert!((back.h - word.h).abs() < 1e-12);
    }

    #[test]
    fn horizontal_line_is_a_plain_crop() {
        let line = OrientedBox::from_axis(&AxisBox::new(0.5, 0.5, 0.5, 0.1).unwrap());
        let mut page = Raster::filled(100, 100, 1, 200).unwrap();
        page.pixel_mut(30, 47)[0] = 7;
        let crop = LineCrop::new(&page, &line).unwrap();
        assert_eq!(crop.frame.angle, Angle(0.0));
        assert_eq!(crop.frame.rect, PixelRect { x0: 25, y0: 45, w: 50, h: 10 });
        assert_eq!(crop.image.pixel(5, 2)[0], 7);
        let word = AxisBox::new(0.3, 0.5, 0.04, 0.06).unwrap();
        let local = crop.frame.page_to_crop(&word);
        assert!((local.cx - 0.1).abs() < 1e-12 && (local.cy - 0.5).abs() < 1e-12);
    }
}
