//! Annotation schema, validation and rasterization.
//!
//! Coordinates are real-valued pixels with the origin at the top-left image
//! corner. Pixel `(row, col)` has its center at `(col + 0.5, row + 0.5)`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};

/// Cable polylines are rasterized this thick unless told otherwise.
pub const DEFAULT_CABLE_THICKNESS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Open chain of at least two points.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid(format!(
                "polyline needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::invalid("polyline has a non-finite coordinate"));
        }
        Ok(Polyline { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }
}

/// Axis-aligned box with `x_min < x_max` and `y_min < y_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::invalid(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Half-open containment of a point, matching the rasterization rule.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x < self.x_max && self.y_min <= y && y < self.y_max
    }

    fn intersects_image(&self, width: u32, height: u32) -> bool {
        self.x_min < width as f64
            && self.x_max > 0.0
            && self.y_min < height as f64
            && self.y_max > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub recording_id: String,
    pub location_group: String,
}

/// All annotations of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSet {
    pub meta: ImageMeta,
    pub cables: Vec<Polyline>,
    pub pylons: Vec<BBox>,
    pub exclusions: Vec<BBox>,
}

impl AnnotationSet {
    /// Checks every geometric invariant against the image rectangle.
    pub fn validate(&self) -> Result<()> {
        let m = &self.meta;
        let fail = |element: String, message: String| Error::Validation {
            image_id: m.image_id.clone(),
            element,
            message,
        };
        if m.width == 0 || m.height == 0 {
            return Err(fail(
                "image".into(),
                format!("non-positive size {}x{}", m.width, m.height),
            ));
        }
        let (w, h) = (m.width as f64, m.height as f64);
        for (i, cable) in self.cables.iter().enumerate() {
            if cable.points.len() < 2 {
                return Err(fail(format!("cable {i}"), "fewer than 2 points".into()));
            }
            for (j, p) in cable.points.iter().enumerate() {
                if !(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h) {
                    return Err(fail(
                        format!("cable {i}, point {j}"),
                        format!("({}, {}) outside [0, {w}] x [0, {h}]", p.x, p.y),
                    ));
                }
            }
        }
        for (kind, boxes) in [("pylon", &self.pylons), ("exclusion", &self.exclusions)] {
            for (i, b) in boxes.iter().enumerate() {
                if !(b.x_min < b.x_max && b.y_min < b.y_max) {
                    return Err(fail(format!("{kind} {i}"), "degenerate box".into()));
                }
                if !b.intersects_image(m.width, m.height) {
                    return Err(fail(
                        format!("{kind} {i}"),
                        "box does not intersect the image".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A validated collection of annotated images with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<AnnotationSet>,
}

impl Dataset {
    pub fn new(items: Vec<AnnotationSet>) -> Result<Self> {
        let mut seen = HashSet::new();
        for item in &items {
            item.validate()?;
            if !seen.insert(item.meta.image_id.as_str()) {
                return Err(Error::Validation {
                    image_id: item.meta.image_id.clone(),
                    element: "image_id".into(),
                    message: "duplicate image_id".into(),
                });
            }
        }
        Ok(Dataset { items })
    }

    pub fn get(&self, image_id: &str) -> Option<&AnnotationSet> {
        self.items.iter().find(|a| a.meta.image_id == image_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentRepr {
    images: Vec<ImageRepr>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageRepr {
    image_id: String,
    width: u32,
    height: u32,
    recording_id: String,
    location_group: String,
    #[serde(default)]
    cables: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    pylons: Vec<[f64; 4]>,
    #[serde(default)]
    exclusions: Vec<[f64; 4]>,
}

/// Parses and validates an annotation document.
pub fn parse_annotations(text: &str) -> Result<Dataset> {
    // Decode per record so errors can name the offending image.
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        record: "document".into(),
        message: e.to_string(),
    })?;
    let images = raw
        .get("images")
        .and_then(|v| v.as_array())
        .ok_or_else(|| Error::Parse {
            record: "document".into(),
            message: "missing top-level `images` array".into(),
        })?;

    let mut items = Vec::with_capacity(images.len());
    for (idx, value) in images.iter().enumerate() {
        let record = value
            .get("image_id")
            .and_then(|v| v.as_str())
            .map(|id| format!("images[{idx}] (`{id}`)"))
            .unwrap_or_else(|| format!("images[{idx}]"));
        let repr: ImageRepr = serde_json::from_value(value.clone()).map_err(|e| Error::Parse {
            record: record.clone(),
            message: e.to_string(),
        })?;
        items.push(repr.into_annotation_set()?);
    }
    Dataset::new(items)
}

impl ImageRepr {
    fn into_annotation_set(self) -> Result<AnnotationSet> {
        let id = self.image_id.clone();
        let invalid = |element: String, e: Error| Error::Validation {
            image_id: id.clone(),
            element,
            message: match e {
                Error::InvalidArgument(m) => m,
                other => other.to_string(),
            },
        };
        let cables = self
            .cables
            .into_iter()
            .enumerate()
            .map(|(i, pts)| {
                Polyline::new(pts.into_iter().map(|[x, y]| Point::new(x, y)).collect())
                    .map_err(|e| invalid(format!("cable {i}"), e))
            })
            .collect::<Result<Vec<_>>>()?;
        let boxes = |kind: &str, raw: Vec<[f64; 4]>| {
            raw.into_iter()
                .enumerate()
                .map(|(i, [a, b, c, d])| {
                    BBox::new(a, b, c, d).map_err(|e| invalid(format!("{kind} {i}"), e))
                })
                .collect::<Result<Vec<_>>>()
        };
        let pylons = boxes("pylon", self.pylons)?;
        let exclusions = boxes("exclusion", self.exclusions)?;
        Ok(AnnotationSet {
            meta: ImageMeta {
                image_id: self.image_id,
                width: self.width,
                height: self.height,
                recording_id: self.recording_id,
                location_group: self.location_group,
            },
            cables,
            pylons,
            exclusions,
        })
    }
}

/// Serializes a dataset into the annotation document format.
pub fn to_document(ds: &Dataset) -> String {
    let images = ds
        .items
        .iter()
        .map(|a| ImageRepr {
            image_id: a.meta.image_id.clone(),
            width: a.meta.width,
            height: a.meta.height,
            recording_id: a.meta.recording_id.clone(),
            location_group: a.meta.location_group.clone(),
            cables: a
                .cables
                .iter()
                .map(|c| c.points.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
            pylons: a.pylons.iter().map(box_repr).collect(),
            exclusions: a.exclusions.iter().map(box_repr).collect(),
        })
        .collect();
    serde_json::to_string_pretty(&DocumentRepr { images }).expect("annotation document serializes")
}

fn box_repr(b: &BBox) -> [f64; 4] {
    [b.x_min, b.y_min, b.x_max, b.y_max]
}

/// Squared distance from `(px, py)` to the segment `a`–`b`.
pub fn point_segment_dist2(px: f64, py: f64, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (a.x + t * dx - px, a.y + t * dy - py);
    ex * ex + ey * ey
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "mask dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Marks every pixel whose center lies within `(thickness - 1) / 2` of a
/// cable segment.
pub fn rasterize_cables(
    cables: &[Polyline],
    width: u32,
    height: u32,
    thickness: u32,
) -> Result<BinaryMask> {
    check_dims(width, height)?;
    if thickness == 0 || thickness.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "cable thickness must be odd and positive, got {thickness}"
        )));
    }
    let radius = (thickness - 1) as f64 / 2.0;
    let r2 = radius * radius;
    let (w, h) = (width as usize, height as usize);
    let mut mask = Grid::new(w, h, false);
    for cable in cables {
        for (a, b) in cable.segments() {
            // Pixel-index window that can hold centers within `radius`.
            let col_lo = ((a.x.min(b.x) - radius - 0.5).floor().max(0.0)) as usize;
            let col_hi = ((a.x.max(b.x) + radius - 0.5).ceil().max(0.0) as usize).min(w - 1);
            let row_lo = ((a.y.min(b.y) - radius - 0.5).floor().max(0.0)) as usize;
            let row_hi = ((a.y.max(b.y) + radius - 0.5).ceil().max(0.0) as usize).min(h - 1);
            for row in row_lo..=row_hi {
                let cy = row as f64 + 0.5;
                for col in col_lo..=col_hi {
                    if !mask[(row, col)] && point_segment_dist2(col as f64 + 0.5, cy, a, b) <= r2 {
                        mask[(row, col)] = true;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// Fills pixels whose center lies inside any box; boxes are clipped to the image.
pub fn rasterize_boxes(boxes: &[BBox], width: u32, height: u32) -> Result<BinaryMask> {
    check_dims(width, height)?;
    let (w, h) = (width as usize, height as usize);
    let mut mask = Grid::new(w, h, false);
    let clip = |lo: f64, hi: f64, n: usize| {
        let first = (lo - 1.0).floor().clamp(0.0, n as f64) as usize;
        let last = (hi + 1.0).ceil().clamp(0.0, n as f64) as usize;
        first..last
    };
    for b in boxes {
        for row in clip(b.y_min, b.y_max, h) {
            let cy = row as f64 + 0.5;
            if !(b.y_min <= cy && cy < b.y_max) {
                continue;
            }
            for col in clip(b.x_min, b.x_max, w) {
                let cx = col as f64 + 0.5;
                if b.x_min <= cx && cx < b.x_max {
                    mask[(row, col)] = true;
                }
            }
        }
    }
    Ok(mask)
}

pub fn rasterize_pylons(pylons: &[BBox], width: u32, height: u32) -> Result<BinaryMask> {
    rasterize_boxes(pylons, width, height)
}

pub fn rasterize_exclusions(exclusions: &[BBox], width: u32, height: u32) -> Result<BinaryMask> {
    rasterize_boxes(exclusions, width, height)
}

/// Mirrors all geometry about the vertical image axis (`x -> width - x`).
pub fn hflip_annotations(a: &AnnotationSet) -> AnnotationSet {
    let w = a.meta.width as f64;
    let flip_box = |b: &BBox| BBox {
        x_min: w - b.x_max,
        y_min: b.y_min,
        x_max: w - b.x_min,
        y_max: b.y_max,
    };
    AnnotationSet {
        meta: a.meta.clone(),
        cables: a
            .cables
            .iter()
            .map(|c| Polyline {
                points: c.points.iter().map(|p| Point::new(w - p.x, p.y)).collect(),
            })
            .collect(),
        pylons: a.pylons.iter().map(flip_box).collect(),
        exclusions: a.exclusions.iter().map(flip_box).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(images: &str) -> String {
        format!(r#"{{"images": [{images}]}}"#)
    }

    fn image(id: &str, extra: &str) -> String {
        format!(
            r#"{{"image_id": "{id}", "width": 10, "height": 8, "recording_id": "r0",
                "location_group": "g0"{extra}}}"#
        )
    }

    #[test]
    fn parses_minimal_document() {
        let ds = parse_annotations(&doc(&image("a", r#", "cables": [[[1, 2], [3, 2]]]"#))).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.items[0].cables.len(), 1);
        assert!(ds.items[0].exclusions.is_empty());
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let ds = parse_annotations(&doc(&image("a", r#", "camera": "left""#))).unwrap();
        assert_eq!(ds.items[0].meta.width, 10);
    }

    #[test]
    fn rejects_degenerate_box() {
        let err =
            parse_annotations(&doc(&image("a", r#", "pylons": [[2, 1, 2, 5]]"#))).unwrap_err();
        match err {
            Error::Validation {
                image_id, element, ..
            } => {
                assert_eq!(image_id, "a");
                assert_eq!(element, "pylon 0");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_ids() {
        let text = doc(&format!("{},{}", image("a", ""), image("a", "")));
        assert!(matches!(
            parse_annotations(&text),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn rejects_out_of_bounds_point() {
        let err =
            parse_annotations(&doc(&image("b", r#", "cables": [[[1, 2], [11, 2]]]"#))).unwrap_err();
        match err {
            Error::Validation {
                image_id, element, ..
            } => {
                assert_eq!(image_id, "b");
                assert_eq!(element, "cable 0, point 1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_box_outside_image_and_short_polyline() {
        assert!(parse_annotations(&doc(&image("a", r#", "pylons": [[11, 1, 12, 5]]"#))).is_err());
        assert!(parse_annotations(&doc(&image("a", r#", "cables": [[[1, 2]]]"#))).is_err());
    }

    #[test]
    fn malformed_record_is_named() {
        let text = doc(&format!(
            "{},{}",
            image("ok", ""),
            r#"{"image_id": "bad", "width": "wide"}"#
        ));
        match parse_annotations(&text).unwrap_err() {
            Error::Parse { record, .. } => assert!(record.contains("bad"), "{record}"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_annotations("{]"), Err(Error::Parse { .. })));
    }

    #[test]
    fn document_round_trips() {
        let text = doc(&image(
            "a",
            r#", "cables": [[[1.5, 2], [3, 2.25]]], "pylons": [[1, 1, 4, 4]], "exclusions": [[5, 5, 6, 7]]"#,
        ));
        let ds = parse_annotations(&text).unwrap();
        assert_eq!(parse_annotations(&to_document(&ds)).unwrap(), ds);
    }

    #[test]
    fn empty_cable_list_is_background() {
        let m = rasterize_cables(&[], 8, 8, 5).unwrap();
        assert_eq!(m.count_ones(), 0);
        assert!(rasterize_cables(&[], 0, 8, 5).is_err());
        assert!(rasterize_cables(&[], 8, 8, 4).is_err());
    }

    #[test]
    fn pylon_box_fill() {
        let b = BBox::new(2.0, 2.0, 5.0, 5.0).unwrap();
        let m = rasterize_pylons(&[b], 8, 8).unwrap();
        assert_eq!(m.count_ones(), 9);
        for r in 2..5 {
            for c in 2..5 {
                assert!(m[(r, c)]);
            }
        }
        let b2 = BBox::new(4.0, 4.0, 7.0, 6.0).unwrap();
        let u = rasterize_pylons(&[b, b2], 8, 8).unwrap();
        let expected = m.union(&rasterize_pylons(&[b2], 8, 8).unwrap()).unwrap();
        assert_eq!(u, expected);
    }

    #[test]
    fn exclusion_box_clipped() {
        let b = BBox::new(-3.0, 6.0, 2.0, 20.0).unwrap();
        let m = rasterize_exclusions(&[b], 8, 8).unwrap();
        assert_eq!(m.count_ones(), 4);
        assert!(m[(6, 0)] && m[(7, 1)]);
    }

    #[test]
    fn hflip_examples() {
        let a = AnnotationSet {
            meta: ImageMeta {
                image_id: "a".into(),
                width: 10,
                height: 4,
                recording_id: "r".into(),
                location_group: "g".into(),
            },
            cables: vec![Polyline::new(vec![Point::new(1.0, 2.0), Point::new(3.0, 2.0)]).unwrap()],
            pylons: vec![BBox::new(2.0, 0.0, 5.0, 1.0).unwrap()],
            exclusions: vec![],
        };
        let f = hflip_annotations(&a);
        assert_eq!(
            f.cables[0].points(),
            &[Point::new(9.0, 2.0), Point::new(7.0, 2.0)]
        );
        assert_eq!(f.pylons[0], BBox::new(5.0, 0.0, 8.0, 1.0).unwrap());
        assert_eq!(hflip_annotations(&f), a);
    }
}
