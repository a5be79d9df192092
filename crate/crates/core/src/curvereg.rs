//! Discrete curve regularizer: tangent-point energy, endpoint-separation log
//! barrier and length, plus central finite differences in the control points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, Polyline};

/// Default tangent-point exponent.
pub const DEFAULT_P: f64 = 3.0;

/// Endpoints closer than this are treated as a closed curve.
const CLOSED_GAP: f64 = 1e-12;

/// Radius of the circle tangent to the line `x + s·τ` at `x` that passes
/// through `y`, i.e. `|x − y|² / (2 dist(y, T_x))`.
///
/// Returns `+∞` when `y − x` is parallel to `τ`.
pub fn tangent_point_radius(x: Point, tau: Point, y: Point) -> Result<f64> {
    let d = y - x;
    let r2 = d.norm_squared();
    if r2 == 0.0 {
        return Err(Error::DegenerateInput);
    }
    let tn = tau.norm();
    if tn == 0.0 {
        return Err(Error::DegenerateInput);
    }
    let dist = (tau.cross(d) / tn).abs();
    if dist == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(r2 / (2.0 * dist))
}

/// Corner-averaged kernel `k_p(i, j, τ_i)` between segments `[a0, a1]` and
/// `[b0, b1]`, with `tau` the unit tangent of the first one.
fn kernel(a0: Point, a1: Point, tau: Point, b0: Point, b1: Point, p: f64) -> f64 {
    let mut sum = 0.0;
    for x in [a0, a1] {
        for y in [b0, b1] {
            let d = x - y;
            let r2 = d.norm_squared();
            sum += tau.cross(d).abs().powf(p) / r2.powf(p);
        }
    }
    0.25 * sum
}

/// `Σ_i Σ_j k_p(i, j, τ_i) l_i l_j` over ordered pairs of non-adjacent
/// segments of the chain through `points`.
///
/// With `closed`, the first and last segments count as adjacent as well
/// (the chain is expected to repeat its first point at the end).
pub fn tangent_point_sum(points: &[Point], closed: bool, p: f64) -> f64 {
    let n = points.len().saturating_sub(1);
    let len: Vec<f64> = (0..n).map(|i| points[i].distance(points[i + 1])).collect();
    let mut total = 0.0;
    for i in 0..n {
        if len[i] == 0.0 {
            continue;
        }
        let tau = (1.0 / len[i]) * (points[i + 1] - points[i]);
        for j in 0..n {
            if i.abs_diff(j) <= 1 || (closed && i.abs_diff(j) == n - 1) || len[j] == 0.0 {
                continue;
            }
            total += kernel(points[i], points[i + 1], tau, points[j], points[j + 1], p)
                * len[i]
                * len[j];
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerValue {
    pub tpe: f64,
    /// `−log|γ_0 − γ_n|`; `+∞` for closed curves.
    pub endpoint_log: f64,
    pub length: f64,
    pub total: f64,
    pub closed: bool,
}

/// Evaluates `R_h(γ) = tpe − log|γ_0 − γ_n| + length` for exponent `p > 2`.
///
/// The curve is not validated here; self-intersections show up as large
/// (or infinite) tangent-point terms.
pub fn discrete_regularizer(curve: &Polyline, p: f64) -> Result<RegularizerValue> {
    if !(p > 2.0) {
        return Err(Error::Validation(vec![format!(
            "tangent-point exponent must exceed 2, got {p}"
        )]));
    }
    let pts = curve.points();
    if pts.len() < 2 {
        return Err(Error::InvalidCurve("a curve needs at least two points".into()));
    }
    let gap = pts[0].distance(pts[pts.len() - 1]);
    let closed = gap < CLOSED_GAP;
    let tpe = tangent_point_sum(pts, closed, p);
    let endpoint_log = if closed { f64::INFINITY } else { -gap.ln() };
    let length = curve.length();
    Ok(RegularizerValue {
        tpe,
        endpoint_log,
        length,
        total: tpe + endpoint_log + length,
        closed,
    })
}

/// Central-difference gradient over the flattened coordinates
/// `[x_0, y_0, x_1, …]`; `valid[k]` is false when either perturbed curve
/// failed validation (the value is then 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdGradient {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl FdGradient {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Central differences of `eval` with respect to every coordinate of `curve`.
///
/// Perturbed curves are validated first; a failed validation or an error
/// from `eval` marks the component invalid rather than aborting.
pub fn fd_gradient<F>(curve: &Polyline, eps: f64, mut eval: F) -> FdGradient
where
    F: FnMut(&Polyline) -> Result<f64>,
{
    let base = curve.coords();
    let mut values = vec![0.0; base.len()];
    let mut valid = vec![false; base.len()];
    for k in 0..base.len() {
        let mut side = |sign: f64| -> Option<f64> {
            let mut c = base.clone();
            c[k] += sign * eps;
            let perturbed = Polyline::from_coords(&c);
            perturbed.validate().ok()?;
            eval(&perturbed).ok().filter(|v| v.is_finite())
        };
        if let (Some(plus), Some(minus)) = (side(1.0), side(-1.0)) {
            values[k] = (plus - minus) / (2.0 * eps);
            valid[k] = true;
        }
    }
    FdGradient { values, valid }
}

/// Finite-difference gradient of `R_h`.
pub fn fd_gradient_reg(curve: &Polyline, p: f64, eps: f64) -> FdGradient {
    fd_gradient(curve, eps, |c| discrete_regularizer(c, p).map(|r| r.total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pl(pts: &[[f64; 2]]) -> Polyline {
        Polyline::from_points_unchecked(pts.iter().map(|&p| p.into()).collect())
    }

    fn polygon(n: usize, r: f64, c: Point) -> Vec<Point> {
        (0..=n)
            .map(|k| {
                let t = 2.0 * PI * (k % n) as f64 / n as f64;
                c + Point::new(r * t.cos(), r * t.sin())
            })
            .collect()
    }

    fn hairpin(d: f64) -> Polyline {
        pl(&[[0.2, 0.5 + d / 2.0], [0.8, 0.5 + d / 2.0], [0.8, 0.5 - d / 2.0], [0.2, 0.5 - d / 2.0]])
    }

    #[test]
    fn radius_examples() {
        let r = tangent_point_radius(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0))
            .unwrap();
        assert!((r - 1.0).abs() < 1e-15);
        let r = tangent_point_radius(Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(3.0, 0.0))
            .unwrap();
        assert!(r.is_infinite());
        assert!(matches!(
            tangent_point_radius(Point::new(0.3, 0.3), Point::new(1.0, 0.0), Point::new(0.3, 0.3)),
            Err(Error::DegenerateInput)
        ));
    }

    #[test]
    fn radius_on_circle_is_the_circle_radius() {
        let rad = 0.7;
        let at = |t: f64| Point::new(rad * t.cos(), rad * t.sin());
        for k in 0..20 {
            let s = 0.3 * k as f64;
            let t = s + 0.1 + 0.29 * k as f64;
            let tau = Point::new(-s.sin(), s.cos());
            let r = tangent_point_radius(at(s), tau, at(t)).unwrap();
            assert!((r - rad).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn straight_polyline() {
        let c = pl(&[[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]]);
        let r = discrete_regularizer(&c, 3.0).unwrap();
        assert_eq!(r.tpe, 0.0);
        assert!((r.length - 0.8).abs() < 1e-15);
        assert!((r.endpoint_log - 0.2231435513142097).abs() < 1e-12);
        assert!(!r.closed);
        let c = pl(&[[0.3, 0.1], [0.3, 0.4], [0.3, 0.5], [0.3, 0.8]]);
        assert_eq!(discrete_regularizer(&c, 3.0).unwrap().tpe, 0.0);
    }

    #[test]
    fn regular_polygon_matches_circle_energy() {
        let (rad, p) = (0.25, 3.0);
        let c = Polyline::from_points_unchecked(polygon(64, rad, Point::new(0.5, 0.5)));
        let r = discrete_regularizer(&c, p).unwrap();
        assert!(r.closed && r.endpoint_log.is_infinite());
        let l = 2.0 * PI * rad;
        let analytic = 2f64.powf(-p) * l * l / rad.powf(p);
        assert!((analytic - 19.739208802178716).abs() < 1e-10);
        assert!((r.tpe - analytic).abs() <= 0.1 * analytic, "{} vs {analytic}", r.tpe);
    }

    #[test]
    fn hairpin_energy_grows_as_the_gap_closes() {
        let e = |d: f64| discrete_regularizer(&hairpin(d), 3.0).unwrap().tpe;
        assert!(e(0.01) > e(0.1) && e(0.1) > e(0.5));
        let mut d = 1e-4;
        while d < 0.5 {
            assert!(e(d) >= e(2.0 * d), "d = {d}");
            d *= 2.0;
        }
        assert!(e(1e-4) > 1e10);
    }

    #[test]
    fn scaling_law() {
        let pts = vec![
            Point::new(0.1, 0.2),
            Point::new(0.4, 0.25),
            Point::new(0.6, 0.7),
            Point::new(0.3, 0.8),
            Point::new(0.2, 0.6),
        ];
        let base = tangent_point_sum(&pts, false, 3.0);
        for lam in [0.5, 2.0] {
            let scaled: Vec<Point> = pts.iter().map(|&q| lam * q).collect();
            let s = tangent_point_sum(&scaled, false, 3.0);
            let expected = base * lam.powf(2.0 - 3.0);
            assert!(((s - expected) / expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn reversal_invariance() {
        let c = pl(&[[0.1, 0.2], [0.4, 0.25], [0.6, 0.7], [0.3, 0.8], [0.2, 0.6]]);
        let a = discrete_regularizer(&c, 3.0).unwrap();
        let b = discrete_regularizer(&c.reversed(), 3.0).unwrap();
        assert!((a.tpe - b.tpe).abs() <= 1e-14 * a.tpe);
        assert_eq!(a.endpoint_log, b.endpoint_log);
        assert!((a.length - b.length).abs() <= 1e-15);
    }

    #[test]
    fn closed_is_flagged_not_an_error() {
        let c = pl(&[[0.2, 0.2], [0.8, 0.2], [0.5, 0.8], [0.2, 0.2]]);
        let r = discrete_regularizer(&c, 3.0).unwrap();
        assert!(r.closed && r.total.is_infinite());
        assert!(discrete_regularizer(&c, 2.0).is_err());
    }

    #[test]
    fn fd_on_straight_line_is_symmetric() {
        let c = pl(&[[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]]);
        let g = fd_gradient(&c, 1e-4, |c| Ok(c.length()));
        assert!(g.valid.iter().all(|&v| v));
        assert!(g.values[3].abs() < 1e-12);
        let t = fd_gradient(&c, 1e-4, |c| discrete_regularizer(c, 3.0).map(|r| r.tpe));
        assert!(t.values[3] >= -1e-12 && t.values[3].abs() < 1e-9);
    }

    #[test]
    fn fd_length_gradient_converges_quadratically() {
        let c = pl(&[[0.1, 0.2], [0.45, 0.3], [0.6, 0.75], [0.85, 0.6]]);
        // Analytic gradient: difference of adjacent unit tangents.
        let pts = c.points();
        let mut exact = vec![0.0; 2 * pts.len()];
        for i in 0..c.n_segments() {
            let t = c.tangent(i);
            exact[2 * i] -= t.x;
            exact[2 * i + 1] -= t.y;
            exact[2 * i + 2] += t.x;
            exact[2 * i + 3] += t.y;
        }
        let err = |eps: f64| {
            let g = fd_gradient(&c, eps, |c| Ok(c.length()));
            g.values.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e3, e4) = (err(1e-3), err(1e-4));
        assert!(e3 < 1e-5);
        let ratio = e3 / e4;
        assert!((60.0..160.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn fd_endpoint_log_gradient() {
        let c = pl(&[[0.2, 0.3], [0.5, 0.6], [0.7, 0.4]]);
        let g = fd_gradient(&c, 1e-5, |c| discrete_regularizer(c, 3.0).map(|r| r.endpoint_log));
        let d = c.points()[0] - c.points()[2];
        let expected = (-1.0 / d.norm_squared()) * d;
        assert!((g.values[0] - expected.x).abs() < 1e-6);
        assert!((g.values[1] - expected.y).abs() < 1e-6);
    }

    #[test]
    fn fd_marks_invalid_perturbations() {
        let c = pl(&[[0.0, 0.5], [0.5, 0.5], [0.9, 0.5]]);
        let g = fd_gradient_reg(&c, 3.0, 1e-4);
        assert!(!g.valid[0]);
        assert_eq!(g.values[0], 0.0);
        assert!(g.valid[1] && g.valid[2]);
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(
            coords in proptest::collection::vec(0.1f64..0.9, 10),
            angle in 0.0f64..(2.0 * PI),
            shift in (-2.0f64..2.0, -2.0f64..2.0),
        ) {
            let pts: Vec<Point> = coords.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
            let (s, co) = angle.sin_cos();
            let moved: Vec<Point> = pts
                .iter()
                .map(|q| Point::new(co * q.x - s * q.y + shift.0, s * q.x + co * q.y + shift.1))
                .collect();
            let a = tangent_point_sum(&pts, false, 3.0);
            let b = tangent_point_sum(&moved, false, 3.0);
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300) || (a - b).abs() < 1e-300,
                "{} vs {}", a, b);
        }
    }
}
