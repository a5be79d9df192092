//! Polyline preferential paths and the conforming space-time mesh built
//! around them.

mod mesh;

pub use mesh::{build_mesh, remesh, CurveEdge, SpaceTimeMesh};

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Default distance kept between the curve and the boundary of the unit square.
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the cross product of the zero-extended 3-vectors.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.x, -self.y)
    }
}

impl Mul<Point> for f64 {
    type Output = Point;
    fn mul(self, p: Point) -> Point {
        Point::new(self * p.x, self * p.y)
    }
}

/// Distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + t * ab)
}

fn orientation(a: Point, b: Point, c: Point) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed segment-segment intersection test (touching counts).
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let scale = [a, b, c, d]
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(1.0_f64, f64::max);
    let eps = 1e-14 * scale * scale;
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    let sgn = |v: f64| {
        if v > eps {
            1
        } else if v < -eps {
            -1
        } else {
            0
        }
    };
    let (s1, s2, s3, s4) = (sgn(o1), sgn(o2), sgn(o3), sgn(o4));
    if s1 * s2 < 0 && s3 * s4 < 0 {
        return true;
    }
    (s1 == 0 && on_segment(c, a, b))
        || (s2 == 0 && on_segment(d, a, b))
        || (s3 == 0 && on_segment(a, c, d))
        || (s4 == 0 && on_segment(b, c, d))
}

/// An open piecewise-linear curve `γ_0, …, γ_n` inside the unit square.
///
/// Segment `i` joins `points[i]` to `points[i + 1]`. An empty polyline
/// stands for "no preferential path".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polyline {
    points: Vec<Point>,
}

impl Polyline {
    /// Builds a polyline and checks its invariants.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        let curve = Polyline { points };
        curve.validate()?;
        Ok(curve)
    }

    pub fn from_points_unchecked(points: Vec<Point>) -> Self {
        Polyline { points }
    }

    pub fn empty() -> Self {
        Polyline { points: Vec::new() }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn n_segments(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn segment(&self, i: usize) -> (Point, Point) {
        (self.points[i], self.points[i + 1])
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        self.points[i].distance(self.points[i + 1])
    }

    /// Unit tangent of segment `i`.
    pub fn tangent(&self, i: usize) -> Point {
        let (a, b) = self.segment(i);
        (1.0 / self.segment_length(i)) * (b - a)
    }

    pub fn length(&self) -> f64 {
        (0..self.n_segments()).map(|i| self.segment_length(i)).sum()
    }

    /// Flattened coordinates `[x_0, y_0, x_1, y_1, …]`.
    pub fn coords(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn from_coords(coords: &[f64]) -> Self {
        assert!(coords.len() % 2 == 0, "odd coordinate count");
        Polyline {
            points: coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect(),
        }
    }

    pub fn translated(&self, d: Point) -> Self {
        Polyline {
            points: self.points.iter().map(|&p| p + d).collect(),
        }
    }

    pub fn reversed(&self) -> Self {
        Polyline {
            points: self.points.iter().rev().copied().collect(),
        }
    }

    /// Minimum distance from `p` to the curve, `+∞` for an empty curve.
    pub fn distance_to(&self, p: Point) -> f64 {
        match self.points.len() {
            0 => f64::INFINITY,
            1 => p.distance(self.points[0]),
            _ => (0..self.n_segments())
                .map(|i| {
                    let (a, b) = self.segment(i);
                    point_segment_distance(p, a, b)
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// True if every coordinate lies in `[δ, 1 − δ]`.
    pub fn within_box(&self, delta: f64) -> bool {
        self.points
            .iter()
            .all(|p| (delta..=1.0 - delta).contains(&p.x) && (delta..=1.0 - delta).contains(&p.y))
    }

    /// Checks finiteness, distinct consecutive points, and that no two
    /// segments overlap other than consecutive ones meeting at their shared
    /// vertex.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() == 1 {
            return Err(Error::InvalidCurve("a curve needs at least two points".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::InvalidCurve(format!("point {i} is not finite")));
            }
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(Error::InvalidCurve(format!(
                    "point {i} = ({}, {}) lies outside the unit square",
                    p.x, p.y
                )));
            }
        }
        let n = self.n_segments();
        for i in 0..n {
            if self.segment_length(i) <= 0.0 {
                return Err(Error::CurveSelfIntersection(format!(
                    "segment {i} has zero length"
                )));
            }
        }
        for i in 0..n {
            let (a, b) = self.segment(i);
            if i + 1 < n {
                // Consecutive segments may only share their common vertex.
                let c = self.points[i + 2];
                let u = b - a;
                let v = c - b;
                let collinear = u.cross(v).abs() <= 1e-14 * u.norm() * v.norm();
                if collinear && u.dot(v) < 0.0 {
                    return Err(Error::CurveSelfIntersection(format!(
                        "segments {i} and {} fold back onto each other",
                        i + 1
                    )));
                }
            }
            for j in i + 2..n {
                let (c, d) = self.segment(j);
                if segments_intersect(a, b, c, d) {
                    return Err(Error::CurveSelfIntersection(format!(
                        "segments {i} and {j} intersect"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Componentwise clamp of every point into `[δ, 1 − δ]²`.
///
/// Clamping is total; the result is not re-validated here.
pub fn project_box(curve: &Polyline, delta: f64) -> Polyline {
    let clamp = |v: f64| (1.0 - delta).min(v.max(delta));
    Polyline::from_points_unchecked(
        curve
            .points()
            .iter()
            .map(|p| Point::new(clamp(p.x), clamp(p.y)))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(pts: &[[f64; 2]]) -> Polyline {
        Polyline::from_points_unchecked(pts.iter().map(|&p| p.into()).collect())
    }

    #[test]
    fn project_box_examples() {
        let c = pl(&[[0.5, 0.5], [-0.2, 1.3], [0.05, 0.5]]);
        let p = project_box(&c, 0.05);
        assert_eq!(p.points()[0], Point::new(0.5, 0.5));
        assert_eq!(p.points()[1], Point::new(0.05, 0.95));
        assert_eq!(p.points()[2], Point::new(0.05, 0.5));
    }

    #[test]
    fn repeated_point_is_self_intersection() {
        let err = Polyline::new(vec![Point::new(0.5, 0.5), Point::new(0.5, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::CurveSelfIntersection(_)));
    }

    #[test]
    fn crossing_and_folding_curves_are_rejected() {
        let cross = pl(&[[0.2, 0.2], [0.8, 0.8], [0.8, 0.2], [0.2, 0.8]]);
        assert!(matches!(cross.validate(), Err(Error::CurveSelfIntersection(_))));
        let fold = pl(&[[0.2, 0.5], [0.8, 0.5], [0.4, 0.5]]);
        assert!(matches!(fold.validate(), Err(Error::CurveSelfIntersection(_))));
        let closed = pl(&[[0.2, 0.2], [0.8, 0.2], [0.5, 0.7], [0.2, 0.2]]);
        assert!(closed.validate().is_err());
    }

    #[test]
    fn u_curve_is_valid() {
        let u = pl(&[[0.3, 0.7], [0.4, 0.3], [0.6, 0.3], [0.7, 0.7]]);
        u.validate().unwrap();
        assert_eq!(u.n_segments(), 3);
        assert!((u.segment_length(1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_point_and_outside_points_are_invalid() {
        assert!(matches!(pl(&[[0.5, 0.5]]).validate(), Err(Error::InvalidCurve(_))));
        assert!(matches!(
            pl(&[[0.5, 0.5], [1.2, 0.5]]).validate(),
            Err(Error::InvalidCurve(_))
        ));
        Polyline::empty().validate().unwrap();
    }

    #[test]
    fn serde_uses_coordinate_pairs() {
        let c = pl(&[[0.1, 0.2], [0.3, 0.4]]);
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, "[[0.1,0.2],[0.3,0.4]]");
        let back: Polyline = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn project_box_is_idempotent(
                coords in proptest::collection::vec(-0.5f64..1.5, 2..20),
                delta in 0.001f64..0.49,
            ) {
                let mut coords = coords;
                if coords.len() % 2 == 1 { coords.pop(); }
                let c = Polyline::from_coords(&coords);
                let once = project_box(&c, delta);
                let twice = project_box(&once, delta);
                prop_assert_eq!(&once, &twice);
                prop_assert!(once.within_box(delta));
            }
        }
    }
}
