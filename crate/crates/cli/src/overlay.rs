//! Contour overlays: video contour points (white) and the model's visible
//! occluding contours at a given pose (green), drawn with flat lines.

use image::{Rgb, RgbImage};
use vimlop::camera::CameraFrame;
use vimlop::correspondence::visible_set;
use vimlop::geometry::{SimilarityTransform, Vec2};
use vimlop::mesh::TriangleMesh;
use vimlop::render::ContourSample;

const VIDEO: Rgb<u8> = Rgb([255, 255, 255]);
const MODEL: Rgb<u8> = Rgb([0, 220, 0]);
/// Half length of the tangent stroke drawn at each video contour point, px.
const STROKE: f64 = 3.0;

pub struct Overlay {
    pub image: RgbImage,
    pub model_samples: usize,
    /// Mean distance from each video contour point to the nearest projected
    /// model contour sample; `None` when either side is empty.
    pub mean_distance_px: Option<f64>,
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham line between rounded endpoints.
pub fn draw_line(img: &mut RgbImage, a: &Vec2, b: &Vec2, c: Rgb<u8>) {
    let (mut x0, mut y0) = (a.x.round() as i64, a.y.round() as i64);
    let (x1, y1) = (b.x.round() as i64, b.y.round() as i64);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x0, y0, c);
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

pub fn mean_nearest_distance(points: &[Vec2], samples: &[ContourSample]) -> Option<f64> {
    if points.is_empty() || samples.is_empty() {
        return None;
    }
    let total: f64 = points
        .iter()
        .map(|p| {
            samples
                .iter()
                .map(|s| (s.pixel - p).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    Some(total / points.len() as f64)
}

pub fn render_overlay(
    mesh: &TriangleMesh,
    frame: &CameraFrame,
    t: &SimilarityTransform,
    tolerance: f64,
) -> vimlop::Result<Overlay> {
    let k = frame.intrinsics;
    let mut image = RgbImage::new(k.width, k.height);
    let (vis, _) = visible_set(mesh, &frame.camera(t), tolerance)?;
    let samples = vis.samples;
    if frame.contours.is_empty() {
        log::warn!("frame {} has no contour points; writing a blank overlay", frame.id);
        return Ok(Overlay {
            image,
            model_samples: samples.len(),
            mean_distance_px: None,
        });
    }
    let points: Vec<Vec2> = frame.contours.iter().map(|c| c.position).collect();
    for c in &frame.contours {
        let tangent = Vec2::new(-c.normal.y, c.normal.x) * STROKE;
        draw_line(&mut image, &(c.position - tangent), &(c.position + tangent), VIDEO);
    }
    for pair in samples.windows(2) {
        if pair[0].edge == pair[1].edge {
            draw_line(&mut image, &pair[0].pixel, &pair[1].pixel, MODEL);
        }
    }
    for s in &samples {
        put(&mut image, s.pixel.x.round() as i64, s.pixel.y.round() as i64, MODEL);
    }
    Ok(Overlay {
        image,
        model_samples: samples.len(),
        mean_distance_px: mean_nearest_distance(&points, &samples),
    })
}
