//! Axis-aligned boxes, overlap, and the center/log-size regression offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound applied to `dw`/`dh` before exponentiation.
pub const DELTA_SIZE_CLAMP: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

/// Axis-aligned box in corner form.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(c: [f64; 4]) -> Self {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    /// Checked constructor: corners must be finite and ordered.
    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BBox { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidParameter {
                name: "bbox",
                reason: alloc::format!("corners out of order or non-finite: {:?}", [x1, y1, x2, y2]),
            })
        }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn is_valid(&self) -> bool {
        self.x1.is_finite()
            && self.y1.is_finite()
            && self.x2.is_finite()
            && self.y2.is_finite()
            && self.x1 <= self.x2
            && self.y1 <= self.y2
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Clip to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union. Zero-area or disjoint pairs give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Regression offsets: center shift over source size, log size ratio.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Delta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl From<[f64; 4]> for Delta {
    fn from(c: [f64; 4]) -> Self {
        Delta::new(c[0], c[1], c[2], c[3])
    }
}

impl From<Delta> for [f64; 4] {
    fn from(d: Delta) -> Self {
        d.to_array()
    }
}

impl Delta {
    pub const ZERO: Delta = Delta::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Delta { dx, dy, dw, dh }
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Elementwise product with `s`.
    pub fn scaled(&self, s: [f64; 4]) -> Delta {
        Delta::new(self.dx * s[0], self.dy * s[1], self.dw * s[2], self.dh * s[3])
    }

    /// Summed smooth-L1 distance to `target` over the four offsets.
    pub fn smooth_l1_to(&self, target: &Delta) -> f64 {
        let (a, b) = (self.to_array(), target.to_array());
        a.iter().zip(b.iter()).map(|(x, y)| smooth_l1(x - y)).sum()
    }

    /// Gradient of [`Delta::smooth_l1_to`] with respect to `self`.
    pub fn smooth_l1_grad(&self, target: &Delta) -> Delta {
        let (a, b) = (self.to_array(), target.to_array());
        Delta::new(
            smooth_l1_grad(a[0] - b[0]),
            smooth_l1_grad(a[1] - b[1]),
            smooth_l1_grad(a[2] - b[2]),
            smooth_l1_grad(a[3] - b[3]),
        )
    }
}

/// Offsets that move `src` onto `target`.
pub fn encode_delta(src: &BBox, target: &BBox) -> Result<Delta> {
    let (w, h) = (src.width(), src.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateSource {
            width: w,
            height: h,
        });
    }
    let (tw, th) = (target.width(), target.height());
    if !(tw > 0.0 && th > 0.0) {
        return Err(Error::InvalidParameter {
            name: "target",
            reason: alloc::format!("regression target has non-positive extent ({tw} x {th})"),
        });
    }
    let (cx, cy) = src.center();
    let (tx, ty) = target.center();
    Ok(Delta::new(
        (tx - cx) / w,
        (ty - cy) / h,
        libm::log(tw / w),
        libm::log(th / h),
    ))
}

/// Decode `d` relative to `src`. Size offsets are clamped to [`DELTA_SIZE_CLAMP`].
pub fn apply_delta(src: &BBox, d: &Delta) -> Result<BBox> {
    let (w, h) = (src.width(), src.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateSource {
            width: w,
            height: h,
        });
    }
    if !d.is_finite() {
        return Err(Error::NonFinite("delta"));
    }
    let (cx, cy) = src.center();
    let pcx = cx + d.dx * w;
    let pcy = cy + d.dy * h;
    let pw = w * libm::exp(d.dw.min(DELTA_SIZE_CLAMP));
    let ph = h * libm::exp(d.dh.min(DELTA_SIZE_CLAMP));
    Ok(BBox::from_center(pcx, pcy, pw, ph))
}

/// Huber-style loss with unit transition point.
#[inline]
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

#[inline]
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_identity_disjoint_and_partial() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(0.0, 0.0, 2.0, 2.0);
        let c = BBox::new(4.0, 4.0, 6.0, 6.0);
        assert_eq!(iou(&b, &c), 0.0);
        // intersection 1, union 4 + 4 - 1
        let d = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&b, &d) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn iou_zero_area_is_zero() {
        let p = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = BBox::new(0.0, 0.0, 5.0, 0.0);
        assert_eq!(iou(&line, &BBox::new(0.0, 0.0, 5.0, 5.0)), 0.0);
    }

    #[test]
    fn encode_identity_and_scale() {
        let s = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(encode_delta(&s, &s).unwrap(), Delta::ZERO);
        let d = encode_delta(&s, &BBox::new(0.0, 0.0, 4.0, 4.0)).unwrap();
        assert!((d.dx - 0.5).abs() < 1e-15 && (d.dy - 0.5).abs() < 1e-15);
        assert!((d.dw - core::f64::consts::LN_2).abs() < 1e-15);
        assert!((d.dh - core::f64::consts::LN_2).abs() < 1e-15);
        let back = apply_delta(&s, &d).unwrap();
        assert!((back.x2 - 4.0).abs() < 1e-12 && (back.y2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_source_rejected() {
        let s = BBox::new(0.0, 0.0, 0.0, 2.0);
        assert!(matches!(
            encode_delta(&s, &BBox::new(0.0, 0.0, 1.0, 1.0)),
            Err(Error::DegenerateSource { .. })
        ));
        assert!(apply_delta(&s, &Delta::ZERO).is_err());
    }

    #[test]
    fn zero_delta_is_identity() {
        let s = BBox::new(3.0, 4.0, 9.0, 12.0);
        assert_eq!(apply_delta(&s, &Delta::ZERO).unwrap(), s);
    }

    #[test]
    fn huge_size_offset_is_clamped() {
        let s = BBox::new(0.0, 0.0, 16.0, 16.0);
        let b = apply_delta(&s, &Delta::new(0.0, 0.0, 80.0, 80.0)).unwrap();
        assert!(b.is_valid());
        // clamp caps the scale at 1000 / 16
        assert!((b.width() - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn smooth_l1_branches() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
    }

    #[test]
    fn smooth_l1_derivative_continuous_at_one() {
        let h = 1e-7;
        for x in [1.0_f64, -1.0] {
            let left = (smooth_l1(x - h) - smooth_l1(x - 2.0 * h)) / h;
            let right = (smooth_l1(x + 2.0 * h) - smooth_l1(x + h)) / h;
            assert!((left - right).abs() < 1e-6, "{left} vs {right}");
        }
    }

    #[test]
    fn clip_stays_inside() {
        let b = BBox::new(-5.0, 2.0, 120.0, 80.0).clip(100.0, 50.0);
        assert_eq!(b, BBox::new(0.0, 2.0, 100.0, 50.0));
    }
}
