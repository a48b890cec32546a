//! Annotated side-by-side renderings: the untouched image on the left, the
//! same image with overlays on the right.

use dyntile::geometry::make_grid;
use dyntile::{BBox, GridConfig};
use image::{Rgb, RgbImage};

pub const DETECTION: Rgb<u8> = Rgb([230, 30, 30]);
pub const GROUND_TRUTH: Rgb<u8> = Rgb([30, 200, 60]);
pub const GRID: Rgb<u8> = Rgb([40, 90, 255]);
pub const DYNAMIC_TILE: Rgb<u8> = Rgb([255, 200, 0]);

#[derive(Default)]
pub struct Overlay {
    pub grid: Option<GridConfig>,
    pub dynamic_tiles: Vec<BBox>,
    pub ground_truth: Vec<BBox>,
    pub detections: Vec<BBox>,
}

fn hline(img: &mut RgbImage, x0: i64, x1: i64, y: i64, c: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if !(0..h).contains(&y) {
        return;
    }
    for x in x0.max(0)..=x1.min(w - 1) {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn vline(img: &mut RgbImage, x: i64, y0: i64, y1: i64, c: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if !(0..w).contains(&x) {
        return;
    }
    for y in y0.max(0)..=y1.min(h - 1) {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Outline `b` with the given stroke width, drawn inward from the edges.
pub fn draw_rect(img: &mut RgbImage, b: &BBox, c: Rgb<u8>, stroke: i64) {
    let x0 = b.x_min.floor() as i64;
    let y0 = b.y_min.floor() as i64;
    let x1 = b.x_max.ceil() as i64 - 1;
    let y1 = b.y_max.ceil() as i64 - 1;
    for k in 0..stroke {
        hline(img, x0, x1, y0 + k, c);
        hline(img, x0, x1, y1 - k, c);
        vline(img, x0 + k, y0, y1, c);
        vline(img, x1 - k, y0, y1, c);
    }
}

/// Draw order puts detections on top: grid, dynamic tiles, ground truth,
/// detections.
pub fn annotate(base: &RgbImage, overlay: &Overlay) -> RgbImage {
    let mut right = base.clone();
    if let Some(grid) = &overlay.grid {
        if let Ok(tiles) = make_grid(grid, "render") {
            for t in tiles {
                draw_rect(&mut right, &t.rect, GRID, 2);
            }
        }
    }
    for b in &overlay.dynamic_tiles {
        draw_rect(&mut right, b, DYNAMIC_TILE, 2);
    }
    for b in &overlay.ground_truth {
        draw_rect(&mut right, b, GROUND_TRUTH, 1);
    }
    for b in &overlay.detections {
        draw_rect(&mut right, b, DETECTION, 1);
    }
    let (w, h) = base.dimensions();
    let mut out = RgbImage::new(w * 2, h);
    image::imageops::replace(&mut out, base, 0, 0);
    image::imageops::replace(&mut out, &right, w as i64, 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_outline_stays_inside_box() {
        let mut img = RgbImage::new(20, 20);
        draw_rect(&mut img, &BBox::new(2.0, 3.0, 10.0, 9.0).unwrap(), DETECTION, 1);
        assert_eq!(*img.get_pixel(2, 3), DETECTION);
        assert_eq!(*img.get_pixel(9, 8), DETECTION);
        assert_eq!(*img.get_pixel(10, 9), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(5, 5), Rgb([0, 0, 0]));
    }

    #[test]
    fn out_of_frame_boxes_are_clipped() {
        let mut img = RgbImage::new(8, 8);
        draw_rect(&mut img, &BBox::new(-5.0, -5.0, 30.0, 4.0).unwrap(), GRID, 1);
        assert_eq!(*img.get_pixel(0, 3), GRID);
    }

    #[test]
    fn side_by_side_layout() {
        let base = RgbImage::from_pixel(60, 40, Rgb([9, 9, 9]));
        let overlay = Overlay {
            grid: Some(GridConfig::new(60, 40, 3, 2)),
            ..Overlay::default()
        };
        let out = annotate(&base, &overlay);
        assert_eq!(out.dimensions(), (120, 40));
        assert_eq!(*out.get_pixel(20, 5), Rgb([9, 9, 9]));
        assert_eq!(*out.get_pixel(60 + 20, 5), GRID);
    }
}
