//! Bounding-box representations, coordinate conversions, IoU and box warps.
//!
//! Boxes are closed intervals over continuous coordinates. Area is
//! `(x2 - x1) * (y2 - y1)` with no "+1" pixel convention, so IoU does not
//! depend on image resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

/// Homogeneous `w` at or below this value is treated as the plane at infinity.
pub const MIN_HOMOGENEOUS_W: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    InvalidDims { width: u32, height: u32 },
    #[error("degenerate transform: corner ({x}, {y}) maps to homogeneous w = {w}")]
    DegenerateTransform { x: f64, y: f64, w: f64 },
    #[error("invalid box: {0}")]
    InvalidBox(String),
}

/// Image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        let dims = Self { width, height };
        dims.check()?;
        Ok(dims)
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidDims {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn width_as<T: Scalar>(&self) -> T {
        T::lit(f64::from(self.width))
    }

    pub fn height_as<T: Scalar>(&self) -> T {
        T::lit(f64::from(self.height))
    }
}

/// Box in normalized center form; every field is a fraction of the image size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormBox<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub h: T,
}

impl<T: Scalar> NormBox<T> {
    pub fn new(cx: T, cy: T, w: T, h: T) -> Result<Self, GeometryError> {
        let b = Self { cx, cy, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::InvalidBox(format!(
                "normalized box ({cx}, {cy}, {w}, {h}) outside [0,1] or zero-sized"
            )))
        }
    }

    /// `0 <= cx, cy <= 1` and `0 < w, h <= 1`.
    pub fn is_valid(&self) -> bool {
        let unit = |v: T| v >= T::zero() && v <= T::one();
        unit(self.cx) && unit(self.cy) && unit(self.w) && unit(self.h) && self.w > T::zero() && self.h > T::zero()
    }

    /// True when the implied corners lie within the unit square.
    pub fn is_within_frame(&self, tolerance: T) -> bool {
        let c = self.corners();
        c.x1 >= -tolerance
            && c.y1 >= -tolerance
            && c.x2 <= T::one() + tolerance
            && c.y2 <= T::one() + tolerance
    }

    /// Corner form in normalized units.
    pub fn corners(&self) -> AbsBox<T> {
        let two = T::lit(2.0);
        AbsBox {
            x1: self.cx - self.w / two,
            y1: self.cy - self.h / two,
            x2: self.cx + self.w / two,
            y2: self.cy + self.h / two,
        }
    }

    /// Inverse of [`NormBox::corners`]; the result is not range-checked.
    pub fn from_corners(c: &AbsBox<T>) -> Self {
        let two = T::lit(2.0);
        Self {
            cx: (c.x1 + c.x2) / two,
            cy: (c.y1 + c.y2) / two,
            w: c.x2 - c.x1,
            h: c.y2 - c.y1,
        }
    }

    /// Horizontal mirror about the image center.
    pub fn mirrored(&self) -> Self {
        Self {
            cx: T::one() - self.cx,
            ..*self
        }
    }

    pub fn area(&self) -> T {
        self.w * self.h
    }

    pub fn cast<U: Scalar>(&self) -> NormBox<U> {
        NormBox {
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            w: U::lit(self.w.as_f64()),
            h: U::lit(self.h.as_f64()),
        }
    }
}

/// Box in absolute corner form (pixels, continuous).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AbsBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> AbsBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    /// Zero for inverted or degenerate boxes.
    pub fn area(&self) -> T {
        let w = self.width().max(T::zero());
        let h = self.height().max(T::zero());
        w * h
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x1 + self.x2) / two, (self.y1 + self.y2) / two)
    }

    pub fn is_valid(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn corner_points(&self) -> [(T, T); 4] {
        [
            (self.x1, self.y1),
            (self.x2, self.y1),
            (self.x2, self.y2),
            (self.x1, self.y2),
        ]
    }

    /// Axis-aligned enclosure of a point set. Panics on an empty slice.
    pub fn enclosing(points: &[(T, T)]) -> Self {
        let (x0, y0) = points[0];
        points.iter().skip(1).fold(
            Self::new(x0, y0, x0, y0),
            |acc, &(x, y)| Self {
                x1: acc.x1.min(x),
                y1: acc.y1.min(y),
                x2: acc.x2.max(x),
                y2: acc.y2.max(y),
            },
        )
    }
}

pub fn norm_to_abs<T: Scalar>(b: &NormBox<T>, d: ImageDims) -> AbsBox<T> {
    let (w, h) = (d.width_as::<T>(), d.height_as::<T>());
    let c = b.corners();
    AbsBox {
        x1: c.x1 * w,
        y1: c.y1 * h,
        x2: c.x2 * w,
        y2: c.y2 * h,
    }
}

pub fn abs_to_norm<T: Scalar>(b: &AbsBox<T>, d: ImageDims) -> Result<NormBox<T>, GeometryError> {
    d.check()?;
    let (w, h) = (d.width_as::<T>(), d.height_as::<T>());
    let scaled = AbsBox {
        x1: b.x1 / w,
        y1: b.y1 / h,
        x2: b.x2 / w,
        y2: b.y2 / h,
    };
    Ok(NormBox::from_corners(&scaled))
}

/// Intersection over union. Zero-area unions yield 0.
pub fn iou<T: Scalar>(a: &AbsBox<T>, b: &AbsBox<T>) -> T {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= T::zero() || ih <= T::zero() {
        return T::zero();
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one()).max(T::zero())
}

/// IoU of two normalized boxes. Per-axis scaling preserves IoU, so no image
/// dimensions are needed.
pub fn norm_iou<T: Scalar>(a: &NormBox<T>, b: &NormBox<T>) -> T {
    iou(&a.corners(), &b.corners())
}

/// Clamp to `[0,width] x [0,height]`; `None` if nothing of positive area remains.
pub fn clip_box<T: Scalar>(b: &AbsBox<T>, d: ImageDims) -> Option<AbsBox<T>> {
    let (w, h) = (d.width_as::<T>(), d.height_as::<T>());
    let clamp = |v: T, hi: T| v.max(T::zero()).min(hi);
    let out = AbsBox {
        x1: clamp(b.x1, w),
        y1: clamp(b.y1, h),
        x2: clamp(b.x2, w),
        y2: clamp(b.y2, h),
    };
    if out.is_valid() && out.area() > T::zero() {
        Some(out)
    } else {
        None
    }
}

/// 3x3 projective transform acting on column vectors `(x, y, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Scalar> Homography<T> {
    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn translation(tx: T, ty: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, tx], [z, o, ty], [z, z, o]])
    }

    /// Scaling by `(sx, sy)` about the point `(px, py)`.
    pub fn scaling_about(sx: T, sy: T, px: T, py: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([
            [sx, z, px - sx * px],
            [z, sy, py - sy * py],
            [z, z, o],
        ])
    }

    /// Counter-clockwise rotation by `theta` radians about `(px, py)`.
    pub fn rotation_about(theta: T, px: T, py: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        let (s, c) = theta.sin_cos();
        Self::from_rows([
            [c, -s, px - c * px + s * py],
            [s, c, py - s * px - c * py],
            [z, z, o],
        ])
    }

    /// Homography taking each `src[i]` to `dst[i]`. `None` when the four
    /// correspondences do not determine a transform (collinear points).
    pub fn from_quad(src: &[(T, T); 4], dst: &[(T, T); 4]) -> Option<Self> {
        // h33 fixed to 1; eight unknowns h11..h32.
        let mut a = [[T::zero(); 9]; 8];
        for (i, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
            let (o, z) = (T::one(), T::zero());
            a[2 * i] = [x, y, o, z, z, z, -u * x, -u * y, u];
            a[2 * i + 1] = [z, z, z, x, y, o, -v * x, -v * y, v];
        }
        let h = solve_augmented(&mut a)?;
        Some(Self::from_rows([
            [h[0], h[1], h[2]],
            [h[3], h[4], h[5]],
            [h[6], h[7], T::one()],
        ]))
    }

    /// `other ∘ self`: apply `self` first, then `other`.
    pub fn then(&self, other: &Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).fold(T::zero(), |acc, k| acc + other.m[r][k] * self.m[k][c]);
            }
        }
        Self::from_rows(out)
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det.abs() <= T::epsilon() || !det.is_finite() {
            return None;
        }
        let m = &self.m;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut out = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = adj[r][c] / det;
            }
        }
        Some(Self::from_rows(out))
    }

    /// Last row is `(0, 0, 1)`.
    pub fn is_affine(&self) -> bool {
        self.m[2][0] == T::zero() && self.m[2][1] == T::zero() && self.m[2][2] == T::one()
    }

    /// Homogeneous coordinates of the image of `(x, y)`.
    pub fn apply_homogeneous(&self, x: T, y: T) -> (T, T, T) {
        let m = &self.m;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
            m[2][0] * x + m[2][1] * y + m[2][2],
        )
    }

    /// Image of `(x, y)`, or an error when it lands at (or behind) infinity.
    pub fn apply(&self, x: T, y: T) -> Result<(T, T), GeometryError> {
        let (u, v, w) = self.apply_homogeneous(x, y);
        if w <= T::lit(MIN_HOMOGENEOUS_W) {
            return Err(GeometryError::DegenerateTransform {
                x: x.as_f64(),
                y: y.as_f64(),
                w: w.as_f64(),
            });
        }
        if self.is_affine() {
            Ok((u, v))
        } else {
            Ok((u / w, v / w))
        }
    }
}

/// Gaussian elimination with partial pivoting on an 8x9 augmented system.
fn solve_augmented<T: Scalar>(a: &mut [[T; 9]; 8]) -> Option<[T; 8]> {
    const N: usize = 8;
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot][col].abs() <= T::epsilon() {
            return None;
        }
        a.swap(col, pivot);
        for row in (col + 1)..N {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (x, v) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *x = *x - f * v;
            }
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let s = ((row + 1)..N).fold(a[row][N], |acc, k| acc - a[row][k] * x[k]);
        x[row] = s / a[row][row];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Axis-aligned enclosure of the four transformed corners of `b`.
pub fn warp_box<T: Scalar>(b: &AbsBox<T>, m: &Homography<T>) -> Result<AbsBox<T>, GeometryError> {
    let mut pts = [(T::zero(), T::zero()); 4];
    for (slot, (x, y)) in pts.iter_mut().zip(b.corner_points()) {
        *slot = m.apply(x, y)?;
    }
    Ok(AbsBox::enclosing(&pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    /// Counts grid-cell centers inside both / either box over their joint extent.
    fn raster_iou(a: &AbsBox<f64>, b: &AbsBox<f64>, n: usize) -> f64 {
        let x0 = a.x1.min(b.x1);
        let y0 = a.y1.min(b.y1);
        let sx = (a.x2.max(b.x2) - x0) / n as f64;
        let sy = (a.y2.max(b.y2) - y0) / n as f64;
        let inside = |bx: &AbsBox<f64>, x: f64, y: f64| x >= bx.x1 && x <= bx.x2 && y >= bx.y1 && y <= bx.y2;
        let (mut inter, mut union) = (0u64, 0u64);
        for i in 0..n {
            let x = x0 + (i as f64 + 0.5) * sx;
            for j in 0..n {
                let y = y0 + (j as f64 + 0.5) * sy;
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn full_image_box() {
        let b = NormBox::new(0.5, 0.5, 1.0, 1.0).unwrap();
        assert_eq!(norm_to_abs(&b, dims(416, 416)), AbsBox::new(0.0, 0.0, 416.0, 416.0));
        let back = abs_to_norm(&AbsBox::new(0.0, 0.0, 416.0, 416.0), dims(416, 416)).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn quarter_box_conversions() {
        let b = NormBox::new(0.5, 0.5, 0.25, 0.25).unwrap();
        assert_eq!(norm_to_abs(&b, dims(416, 416)), AbsBox::new(156.0, 156.0, 260.0, 260.0));
        let n = abs_to_norm(&AbsBox::new(104.0, 104.0, 312.0, 312.0), dims(416, 416)).unwrap();
        assert_eq!(n, NormBox::new(0.5, 0.5, 0.5, 0.5).unwrap());
    }

    #[test]
    fn abs_to_norm_rejects_zero_dims() {
        let zero = ImageDims { width: 0, height: 10 };
        assert!(matches!(
            abs_to_norm(&AbsBox::new(0.0, 0.0, 1.0, 1.0), zero),
            Err(GeometryError::InvalidDims { .. })
        ));
        assert!(ImageDims::new(3, 0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = AbsBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&AbsBox::new(0.0, 0.0, 1.0, 1.0), &AbsBox::new(2.0, 2.0, 3.0, 3.0)), 0.0);
        let b = AbsBox::new(1.0, 1.0, 3.0, 3.0);
        let oracle = raster_iou(&a, &b, 1536);
        assert!((oracle - 1.0 / 7.0).abs() < 2e-3);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_degenerate_union_is_zero() {
        let p = AbsBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
    }

    #[test]
    fn iou_generic_over_f32() {
        let a = AbsBox::<f32>::new(0.0, 0.0, 2.0, 2.0);
        let b = AbsBox::<f32>::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn clip_examples() {
        let d = dims(416, 416);
        let inside = AbsBox::new(10.0, 20.0, 30.0, 40.0);
        assert_eq!(clip_box(&inside, d), Some(inside));
        assert_eq!(clip_box(&AbsBox::new(-10.0, -10.0, 5.0, 5.0), d), Some(AbsBox::new(0.0, 0.0, 5.0, 5.0)));
        assert_eq!(clip_box(&AbsBox::new(-5.0, -5.0, -1.0, -1.0), d), None);
    }

    #[test]
    fn warp_identity_and_translation() {
        let b = AbsBox::new(3.0, 4.0, 10.0, 12.0);
        assert_eq!(warp_box(&b, &Homography::identity()).unwrap(), b);
        let t = Homography::translation(10.0, 20.0);
        assert_eq!(
            warp_box(&AbsBox::new(0.0, 0.0, 4.0, 4.0), &t).unwrap(),
            AbsBox::new(10.0, 20.0, 14.0, 24.0)
        );
    }

    #[test]
    fn warp_rotation_45_encloses_diagonal() {
        let s = 10.0_f64;
        let b = AbsBox::new(5.0, 5.0, 5.0 + s, 5.0 + s);
        let (cx, cy) = b.center();
        let r = Homography::rotation_about(std::f64::consts::FRAC_PI_4, cx, cy);
        let out = warp_box(&b, &r).unwrap();
        // Corner arithmetic: corners land on the axes through the center at distance s/sqrt(2).
        let half = s / 2.0 * 2f64.sqrt();
        assert!((out.width() - 2.0 * half).abs() < 1e-9);
        assert!((out.height() - s * 2f64.sqrt()).abs() < 1e-9);
        let (ox, oy) = out.center();
        assert!((ox - cx).abs() < 1e-9 && (oy - cy).abs() < 1e-9);
    }

    #[test]
    fn warp_degenerate_transform() {
        // Maps x = 1 onto the plane at infinity.
        let m = Homography::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]);
        let err = warp_box(&AbsBox::new(0.0, 0.0, 1.0, 1.0), &m).unwrap_err();
        assert!(matches!(err, GeometryError::DegenerateTransform { .. }));
    }

    #[test]
    fn quad_homography_maps_corners() {
        let src: [(f64, f64); 4] = [(0.0, 0.0), (100.0, 0.0), (100.0, 80.0), (0.0, 80.0)];
        let dst = [(3.0, -2.0), (97.0, 4.0), (104.0, 77.0), (-1.0, 83.0)];
        let h = Homography::from_quad(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(dst.iter()) {
            let (u, v) = h.apply(s.0, s.1).unwrap();
            assert!((u - d.0).abs() < 1e-9 && (v - d.1).abs() < 1e-9);
        }
        let inv = h.inverse().unwrap();
        let (x, y) = inv.apply(50.0, 40.0).and_then(|(u, v)| h.apply(u, v)).unwrap();
        assert!((x - 50.0).abs() < 1e-9 && (y - 40.0).abs() < 1e-9);
    }

    #[test]
    fn quad_identity_is_identity() {
        let q = [(0.0, 0.0), (416.0, 0.0), (416.0, 416.0), (0.0, 416.0)];
        let h = Homography::from_quad(&q, &q).unwrap();
        let id = Homography::<f64>::identity();
        for r in 0..3 {
            for c in 0..3 {
                assert!((h.m[r][c] - id.m[r][c]).abs() < 1e-12);
            }
        }
    }

    fn arb_abs() -> impl Strategy<Value = AbsBox<f64>> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(x, y, w, h)| AbsBox::new(x, y, x + w, y + h))
    }

    fn arb_norm() -> impl Strategy<Value = NormBox<f64>> {
        (0.0..=1.0f64, 0.0..=1.0f64, 1e-4..=1.0f64, 1e-4..=1.0f64)
            .prop_map(|(cx, cy, w, h)| NormBox::new(cx, cy, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_bounded(a in arb_abs(), b in arb_abs()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn norm_abs_round_trip(b in arb_norm(), w in 1u32..4000, h in 1u32..4000) {
            let d = dims(w, h);
            let back = abs_to_norm(&norm_to_abs(&b, d), d).unwrap();
            prop_assert!((back.cx - b.cx).abs() <= 1e-9);
            prop_assert!((back.cy - b.cy).abs() <= 1e-9);
            prop_assert!((back.w - b.w).abs() <= 1e-9);
            prop_assert!((back.h - b.h).abs() <= 1e-9);
        }

        #[test]
        fn affine_warp_maps_enclosure_exactly(
            b in arb_abs(),
            s in 0.25..4.0f64,
            tx in -50.0..50.0f64,
            ty in -50.0..50.0f64,
        ) {
            let m = Homography::scaling_about(s, s, 0.0, 0.0).then(&Homography::translation(tx, ty));
            let out = warp_box(&b, &m).unwrap();
            prop_assert!((out.x1 - (b.x1 * s + tx)).abs() < 1e-9);
            prop_assert!((out.y2 - (b.y2 * s + ty)).abs() < 1e-9);
            prop_assert!((out.width() - b.width() * s).abs() < 1e-9);
            prop_assert!((out.height() - b.height() * s).abs() < 1e-9);
        }
    }
}
