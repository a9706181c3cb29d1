//! Axis-aligned boxes, overlap measures and binary occupancy masks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-pair box `(x1, y1)`-`(x2, y2)` in continuous pixel coordinates.
///
/// Boxes are half-open regions; zero width or height is allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box from two corners in any order.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_finite(&self) -> bool {
        self.x1.is_finite() && self.y1.is_finite() && self.x2.is_finite() && self.y2.is_finite()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Clamps the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox::new(cx(self.x1), cy(self.y1), cx(self.x2), cy(self.y2))
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn clip(b: &BBox, width: f64, height: f64) -> BBox {
    b.clip(width, height)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "bbox")]
    pub bbox: BBox,
    pub category: u32,
    pub confidence: f64,
}

impl Detection {
    pub fn new(bbox: BBox, category: u32, confidence: f64) -> Self {
        Detection {
            bbox,
            category,
            confidence,
        }
    }

    /// Ground-truth objects carry full confidence.
    pub fn ground_truth(bbox: BBox, category: u32) -> Self {
        Detection::new(bbox, category, 1.0)
    }
}

/// Greedy per-category non-maximum suppression.
///
/// Survivors are returned confidence-descending (ties keep input order),
/// truncated to `max_detections`.
pub fn nms(dets: &[Detection], iou_threshold: f64, max_detections: usize) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence));

    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept.len() == max_detections {
            break;
        }
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            dets[k].category == d.category && iou(&dets[k].bbox, &d.bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}

/// Row-major binary pixel grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OccupancyMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl OccupancyMask {
    pub fn new(width: usize, height: usize) -> Self {
        OccupancyMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        OccupancyMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = OccupancyMask::new(width, height);
        for row in 0..height {
            for col in 0..width {
                m.bits[row * width + col] = f(row, col);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &OccupancyMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check_dims(&self, other: &OccupancyMask) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::arg(format!(
                "mask dimensions differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn union(&self, other: &OccupancyMask) -> Result<OccupancyMask> {
        self.check_dims(other)?;
        Ok(OccupancyMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Pixels set here and clear in `other`.
    pub fn difference(&self, other: &OccupancyMask) -> Result<OccupancyMask> {
        self.check_dims(other)?;
        Ok(OccupancyMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && !*b).collect(),
        })
    }

    /// Binary PGM (P5), 255 for set pixels.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        out.write_all(&bytes)
    }
}

/// Projects boxes onto a pixel grid.
///
/// Pixel `(row, col)` is set when some box overlaps the cell
/// `[col, col+1) x [row, row+1)` with positive area.
pub fn rasterize(boxes: &[BBox], width: usize, height: usize) -> OccupancyMask {
    let mut mask = OccupancyMask::new(width, height);
    for b in boxes {
        let b = b.clip(width as f64, height as f64);
        if b.area() <= 0.0 {
            continue;
        }
        let c0 = b.x1.floor() as usize;
        let c1 = (b.x2.ceil() as usize).min(width);
        let r0 = b.y1.floor() as usize;
        let r1 = (b.y2.ceil() as usize).min(height);
        for row in r0..r1 {
            for col in c0..c1 {
                mask.bits[row * width + col] = true;
            }
        }
    }
    mask
}

/// Pixels occupied in `a` but not in `b`.
pub fn mask_diff(a: &OccupancyMask, b: &OccupancyMask) -> Result<OccupancyMask> {
    a.difference(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    /// Counts covered cells of a `res`-times refined grid.
    fn iou_by_counting(a: &BBox, c: &BBox, res: f64) -> f64 {
        let inside = |bx: &BBox, x: f64, y: f64| x >= bx.x1 && x < bx.x2 && y >= bx.y1 && y < bx.y2;
        let (mut inter, mut union) = (0u64, 0u64);
        let lo = a.x1.min(c.x1).min(a.y1).min(c.y1);
        let hi = a.x2.max(c.x2).max(a.y2).max(c.y2);
        let n = ((hi - lo) * res) as i64;
        for i in 0..n {
            for j in 0..n {
                let x = lo + (j as f64 + 0.5) / res;
                let y = lo + (i as f64 + 0.5) / res;
                let (p, q) = (inside(a, x, y), inside(c, x, y));
                inter += (p && q) as u64;
                union += (p || q) as u64;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let shifted = b(5.0, 0.0, 15.0, 10.0);
        let oracle = iou_by_counting(&a, &shifted, 8.0);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&a, &shifted) - oracle).abs() < 1e-12);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
    }

    #[test]
    fn iou_of_degenerate_boxes_is_zero() {
        let z = b(3.0, 3.0, 3.0, 9.0);
        assert_eq!(iou(&z, &z), 0.0);
        assert_eq!(iou(&z, &b(0.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(&b(-5.0, -5.0, 5.0, 5.0), 100.0, 100.0), b(0.0, 0.0, 5.0, 5.0));
        assert_eq!(
            clip(&b(90.0, 90.0, 200.0, 200.0), 100.0, 100.0),
            b(90.0, 90.0, 100.0, 100.0)
        );
        let out = clip(&b(150.0, 150.0, 200.0, 200.0), 100.0, 100.0);
        assert_eq!(out, b(100.0, 100.0, 100.0, 100.0));
        assert_eq!(out.area(), 0.0);
    }

    #[test]
    fn nms_examples() {
        let one = Detection::new(b(0.0, 0.0, 10.0, 10.0), 1, 0.9);
        let two = Detection::new(b(0.0, 0.0, 10.0, 10.0), 1, 0.8);
        assert_eq!(nms(&[two, one], 0.5, 1000), vec![one]);

        let far = Detection::new(b(50.0, 50.0, 60.0, 60.0), 1, 0.8);
        assert_eq!(nms(&[one, far], 0.5, 1000).len(), 2);

        // Different categories never suppress each other.
        let other_cat = Detection::new(b(0.0, 0.0, 10.0, 10.0), 2, 0.8);
        assert_eq!(nms(&[one, other_cat], 0.5, 1000).len(), 2);
    }

    #[test]
    fn nms_caps_at_max_detections() {
        let dets: Vec<Detection> = (0..1500)
            .map(|i| {
                let x = (i % 50) as f64 * 3.0;
                let y = (i / 50) as f64 * 3.0;
                Detection::new(b(x, y, x + 2.0, y + 2.0), 0, i as f64 / 1500.0)
            })
            .collect();
        let kept = nms(&dets, 0.5, 1000);
        assert_eq!(kept.len(), 1000);
        assert!(kept.iter().all(|d| d.confidence >= 500.0 / 1500.0));
        assert!(kept.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    }

    #[test]
    fn rasterize_examples() {
        let m = rasterize(&[b(10.0, 10.0, 30.0, 30.0)], 100, 100);
        assert_eq!(m.count(), 400);
        let twice = rasterize(&[b(10.0, 10.0, 30.0, 30.0), b(10.0, 10.0, 30.0, 30.0)], 100, 100);
        assert_eq!(twice, m);
        assert!(rasterize(&[], 100, 100).is_empty());
        // Fractional extents cover every touched cell.
        assert_eq!(rasterize(&[b(0.5, 0.5, 2.5, 1.0)], 10, 10).count(), 3);
        // Zero-area boxes occupy nothing.
        assert_eq!(rasterize(&[b(4.0, 4.0, 4.0, 9.0)], 10, 10).count(), 0);
    }

    #[test]
    fn mask_diff_examples() {
        let full = OccupancyMask::full(20, 20);
        let empty = OccupancyMask::new(20, 20);
        assert!(mask_diff(&full, &full).unwrap().is_empty());
        assert_eq!(mask_diff(&full, &empty).unwrap(), full);

        let a = OccupancyMask::from_fn(20, 20, |r, _| r < 10);
        let c = OccupancyMask::from_fn(20, 20, |r, _| (5..15).contains(&r));
        let expected = OccupancyMask::from_fn(20, 20, |r, _| {
            let in_a = r < 10;
            let in_c = (5..15).contains(&r);
            in_a && !in_c
        });
        let d = mask_diff(&a, &c).unwrap();
        assert_eq!(d, expected);
        assert_eq!(d.count(), 5 * 20);
        assert!(mask_diff(&a, &OccupancyMask::new(10, 20)).is_err());
    }

    #[test]
    fn pgm_header() {
        let mut buf = Vec::new();
        OccupancyMask::from_fn(3, 2, |r, c| r == c).write_pgm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P5\n3 2\n255\n");
        assert_eq!(&buf[11..], &[255, 0, 0, 0, 255, 0]);
    }
}
