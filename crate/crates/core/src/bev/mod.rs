//! Schematic top-down (pseudo-BEV) renders, RGB keyframe overlays and the
//! storyboard montage.
//!
//! The BEV canvas maps image column to X (rightward) and normalized relative
//! depth to Z (upward: farther objects sit higher). Each tracked object is a
//! filled circle whose radius grows with detection confidence.

pub mod canvas;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::KEYFRAME_SIZE;
use crate::model::{Detection, Keyframe};
use crate::raster::encode_png;
use crate::scene_graph::{SceneGraph, SceneNode};
use canvas::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BevError {
    #[error("CONFIDENCE_RANGE: confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("COUNT_MISMATCH: {rgb} RGB panels vs {bev} BEV panels")]
    CountMismatch { rgb: usize, bev: usize },
    #[error("INVALID_SPEC: {0}")]
    InvalidSpec(String),
}

impl BevError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::ConfidenceRange(_) => "CONFIDENCE_RANGE",
            Self::CountMismatch { .. } => "COUNT_MISMATCH",
            Self::InvalidSpec(_) => "INVALID_SPEC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevSpec {
    pub canvas_size: u32,
    pub r_min: u32,
    pub r_max: u32,
    pub margin: u32,
}

impl Default for BevSpec {
    fn default() -> Self {
        Self { canvas_size: 256, r_min: 3, r_max: 10, margin: 24 }
    }
}

impl BevSpec {
    pub fn validate(&self) -> Result<(), BevError> {
        if self.r_min >= self.r_max {
            return Err(BevError::InvalidSpec("r_min must be below r_max".into()));
        }
        if 2 * self.margin >= self.canvas_size {
            return Err(BevError::InvalidSpec("margin leaves no drawable area".into()));
        }
        Ok(())
    }

    fn span(&self) -> f64 {
        (self.canvas_size - 1 - 2 * self.margin) as f64
    }
}

/// `clamp(round(s · r_max), r_min, r_max)`.
pub fn radius_for_confidence(s: f64, spec: &BevSpec) -> Result<u32, BevError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(BevError::ConfidenceRange(s));
    }
    let r = (s * spec.r_max as f64).round() as u32;
    Ok(r.clamp(spec.r_min, spec.r_max))
}

/// Canvas pixel for an image column `cx` (keyframe pixels) and relative depth `z`.
pub fn project_to_canvas(cx: f64, z: f64, spec: &BevSpec) -> (u32, u32) {
    let cx = cx.clamp(0.0, KEYFRAME_SIZE as f64);
    let z = z.clamp(0.0, 1.0);
    let u = spec.margin + (cx / KEYFRAME_SIZE as f64 * spec.span()).round() as u32;
    let v = spec.margin + ((1.0 - z) * spec.span()).round() as u32;
    (u, v)
}

/// Caption used on both the BEV and the RGB overlay.
pub fn keyframe_caption(ordinal: usize, t: f64) -> String {
    format!("KF {ordinal} @ {t:.2}s")
}

fn draw_axes(img: &mut RgbImage, spec: &BevSpec) {
    let n = spec.canvas_size as i64;
    let axis_y = n - 12;
    let axis_x = 11;
    fill_rect(img, axis_x, axis_y, n - 14, axis_y, BLACK);
    arrow_right(img, n - 10, axis_y, 4, BLACK);
    draw_text(img, n - 8, axis_y - 4, "X", 1, BLACK);
    fill_rect(img, axis_x, 18, axis_x, axis_y, BLACK);
    arrow_up(img, axis_x, 14, 4, BLACK);
    draw_text(img, axis_x + 4, 18, "Z", 1, BLACK);
}

fn draw_node(img: &mut RgbImage, node: &SceneNode, spec: &BevSpec) -> Result<(), BevError> {
    let r = radius_for_confidence(node.confidence, spec)? as i64;
    let (u, v) = project_to_canvas(node.pixel_center[0], node.centroid[2], spec);
    let (u, v) = (u as i64, v as i64);
    fill_circle(img, u, v, r, instance_color(Some(node.instance_id)));
    let tag = format!("{}#{}", node.class_label, node.instance_id);
    draw_text(img, u + r + 2, v - GLYPH / 2, &tag, 1, BLACK);
    Ok(())
}

/// BEV raster for one keyframe graph. Nodes are drawn by ascending instance id.
pub fn render_bev_image(graph: &SceneGraph, t_k: f64, ordinal: usize, spec: &BevSpec) -> Result<RgbImage, BevError> {
    spec.validate()?;
    let mut img = RgbImage::from_pixel(spec.canvas_size, spec.canvas_size, WHITE);
    draw_axes(&mut img, spec);
    let mut nodes: Vec<&SceneNode> = graph.nodes.iter().collect();
    nodes.sort_by_key(|n| n.instance_id);
    for node in nodes {
        draw_node(&mut img, node, spec)?;
    }
    draw_text(&mut img, spec.margin as i64, 4, &keyframe_caption(ordinal, t_k), 1, BLACK);
    Ok(img)
}

/// [`render_bev_image`] encoded as PNG.
pub fn render_bev(graph: &SceneGraph, t_k: f64, ordinal: usize, spec: &BevSpec) -> Result<Vec<u8>, BevError> {
    render_bev_image(graph, t_k, ordinal, spec).map(|img| encode_png(&img))
}

/// Copy of the keyframe with detection boxes, `class#id conf` labels and the
/// caption burned in. Colors follow the instance id.
pub fn overlay_keyframe(kf: &Keyframe, ordinal: usize, dets: &[Detection]) -> RgbImage {
    let mut img = kf.image.clone();
    let scale = 2;
    for d in dets {
        let c = instance_color(d.instance_id);
        let b = &d.bbox;
        let (x0, y0) = (b.x_min.floor() as i64, b.y_min.floor() as i64);
        let (x1, y1) = ((b.x_max.ceil() as i64 - 1).max(x0), (b.y_max.ceil() as i64 - 1).max(y0));
        stroke_rect(&mut img, x0, y0, x1, y1, 2, c);
        let text = format!("{} {:.2}", d.tag(), d.confidence);
        let plate_h = GLYPH * scale + 4;
        let ly = if y0 >= plate_h { y0 - plate_h } else { y0 };
        draw_label(&mut img, x0, ly, &text, scale, 2, WHITE, c);
    }
    draw_label(&mut img, 4, 4, &keyframe_caption(ordinal, kf.timestamp), scale, 3, WHITE, BLACK);
    img
}

fn fit_cell(img: &RgbImage, cell: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    if (w, h) == (cell, cell) {
        return img.clone();
    }
    if w == 2 * cell && h == 2 * cell {
        return RgbImage::from_fn(cell, cell, |x, y| {
            let mut acc = [0u32; 3];
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let p = img.get_pixel(2 * x + dx, 2 * y + dy);
                for c in 0..3 {
                    acc[c] += p[c] as u32;
                }
            }
            Rgb(acc.map(|v| ((v + 2) / 4) as u8))
        });
    }
    image::imageops::resize(img, cell, cell, image::imageops::FilterType::Nearest)
}

/// Montage with the RGB overlays on the top row and, when given, the BEVs
/// aligned beneath. Every panel is scaled to a 256-pixel cell.
pub fn render_storyboard_image(rgb: &[RgbImage], bev: Option<&[RgbImage]>) -> Result<RgbImage, BevError> {
    if let Some(b) = bev {
        if b.len() != rgb.len() {
            return Err(BevError::CountMismatch { rgb: rgb.len(), bev: b.len() });
        }
    }
    if rgb.is_empty() {
        return Err(BevError::CountMismatch { rgb: 0, bev: bev.map_or(0, <[_]>::len) });
    }
    let cell = 256u32;
    let rows = if bev.is_some() { 2 } else { 1 };
    let mut out = RgbImage::from_pixel(cell * rgb.len() as u32, cell * rows, WHITE);
    for (i, img) in rgb.iter().enumerate() {
        image::imageops::replace(&mut out, &fit_cell(img, cell), (i as u32 * cell) as i64, 0);
    }
    if let Some(b) = bev {
        for (i, img) in b.iter().enumerate() {
            image::imageops::replace(&mut out, &fit_cell(img, cell), (i as u32 * cell) as i64, cell as i64);
        }
    }
    Ok(out)
}

pub fn render_storyboard(rgb: &[RgbImage], bev: Option<&[RgbImage]>) -> Result<Vec<u8>, BevError> {
    render_storyboard_image(rgb, bev).map(|img| encode_png(&img))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u32, cx: f64, z: f64, s: f64) -> SceneNode {
        SceneNode { instance_id: id, class_label: "cup".into(), centroid: [0.0, 0.0, z], pixel_center: [cx, 256.0], confidence: s }
    }

    #[test]
    fn radius_examples() {
        let spec = BevSpec::default();
        let r: Vec<u32> = [1.0, 0.0, 0.5, 0.2].iter().map(|&s| radius_for_confidence(s, &spec).unwrap()).collect();
        assert_eq!(r, vec![10, 3, 5, 3]);
        assert_eq!(radius_for_confidence(1.2, &spec).unwrap_err().code(), "CONFIDENCE_RANGE");
        assert!(radius_for_confidence(-0.1, &spec).is_err());
    }

    #[test]
    fn radius_monotone_in_range() {
        let spec = BevSpec::default();
        let mut last = 0;
        for i in 0..=1000 {
            let r = radius_for_confidence(i as f64 / 1000.0, &spec).unwrap();
            assert!(r >= last && (3..=10).contains(&r));
            last = r;
        }
    }

    #[test]
    fn projection_examples() {
        let spec = BevSpec::default();
        assert_eq!(project_to_canvas(256.0, 0.5, &spec), (128, 128));
        assert_eq!(project_to_canvas(0.0, 0.0, &spec), (24, 231));
        assert_eq!(project_to_canvas(512.0, 1.0, &spec), (231, 24));
    }

    #[test]
    fn single_node_circle() {
        let spec = BevSpec::default();
        let g = SceneGraph { keyframe_ordinal: 0, nodes: vec![node(1, 256.0, 0.5, 1.0)], edges: vec![] };
        let img = render_bev_image(&g, 0.0, 0, &spec).unwrap();
        let c = PALETTE[1];
        assert_eq!(*img.get_pixel(128, 128), c);
        assert_eq!(*img.get_pixel(128, 118), c);
        assert_eq!(*img.get_pixel(128, 117), WHITE);
        assert_eq!(*img.get_pixel(118, 128), c);
    }

    #[test]
    fn empty_graph_has_axes_and_caption_only() {
        let spec = BevSpec::default();
        let img = render_bev_image(&SceneGraph::default(), 1.5, 2, &spec).unwrap();
        assert!(img.pixels().all(|p| *p == WHITE || *p == BLACK));
        assert_eq!(*img.get_pixel(100, 244), BLACK);
        assert_eq!(*img.get_pixel(11, 100), BLACK);
        assert_eq!(*img.get_pixel(128, 128), WHITE);
    }

    #[test]
    fn bev_is_deterministic() {
        let spec = BevSpec::default();
        let g = SceneGraph { keyframe_ordinal: 0, nodes: vec![node(2, 100.0, 0.2, 0.7), node(1, 400.0, 0.9, 0.4)], edges: vec![] };
        assert_eq!(render_bev(&g, 3.25, 1, &spec).unwrap(), render_bev(&g, 3.25, 1, &spec).unwrap());
    }

    #[test]
    fn caption_format() {
        assert_eq!(keyframe_caption(3, 2.0), "KF 3 @ 2.00s");
        assert_eq!(keyframe_caption(0, 0.125), "KF 0 @ 0.12s");
    }

    #[test]
    fn storyboard_layout() {
        let rgb = vec![RgbImage::from_pixel(512, 512, Rgb([10, 20, 30])); 8];
        let bev = vec![RgbImage::from_pixel(256, 256, WHITE); 8];
        let s = render_storyboard_image(&rgb, Some(&bev)).unwrap();
        assert_eq!(s.dimensions(), (8 * 256, 512));
        assert_eq!(*s.get_pixel(700, 100), Rgb([10, 20, 30]));
        assert_eq!(*s.get_pixel(700, 300), WHITE);
        let one = render_storyboard_image(&rgb[..1], Some(&bev[..1])).unwrap();
        assert_eq!(one.dimensions(), (256, 512));
        assert_eq!(render_storyboard_image(&rgb, Some(&bev[..3])).unwrap_err().code(), "COUNT_MISMATCH");
        assert_eq!(render_storyboard_image(&rgb, None).unwrap().dimensions(), (8 * 256, 256));
    }

    #[test]
    fn overlay_without_detections_only_adds_caption() {
        let kf = Keyframe {
            frame_index: 0,
            timestamp: 0.5,
            image: RgbImage::from_pixel(512, 512, Rgb([200, 200, 200])),
            selection_reason: crate::model::SelectionReason::MotionPeak,
        };
        let out = overlay_keyframe(&kf, 0, &[]);
        assert_eq!(*out.get_pixel(300, 300), Rgb([200, 200, 200]));
        assert_eq!(*out.get_pixel(5, 5), BLACK);
        assert_eq!(out, overlay_keyframe(&kf, 0, &[]));
    }
}
