//! Pointwise Euclidean projections onto the dual feasibility sets
//!
//! ```text
//! bulk:  { (a, b) ∈ ℝ × ℝ² : a + |b|²/2 ≤ 0 }
//! curve: { (a, v, w) ∈ ℝ³  : a + v²/(2α₁) + w²/(2α₂) ≤ 0 }
//! ```
//!
//! Infeasible points are mapped to the boundary by solving the KKT
//! polynomials for the moduli of the momentum components.

use serde::{Deserialize, Serialize};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_NEWTON: usize = 100;

/// Provisional bulk duals `η_ρ = ∂_tφ + ρ/r₁`, `η_J = ∇φ + J/r₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BulkEta {
    pub eta_rho: f64,
    pub eta_j: [f64; 2],
}

/// Provisional curve duals `η_μ`, `η_V`, `η_f`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveEta {
    pub eta_mu: f64,
    pub eta_v: f64,
    pub eta_f: f64,
}

/// How a projection was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionPath {
    /// The input was feasible and is returned unchanged.
    Feasible,
    /// Closed form (zero momentum) or converged Newton iteration.
    Newton,
    /// Newton failed; the result comes from bisection on the multiplier.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BulkProjection {
    pub rho: f64,
    pub j: [f64; 2],
    pub path: ProjectionPath,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveProjection {
    pub mu: f64,
    pub v: f64,
    pub f: f64,
    pub path: ProjectionPath,
}

/// Projects `eta` onto `{ρ* + |J*|²/2 ≤ 0}`.
///
/// For infeasible input, `x = |J*|` is the unique root in `[0, |η_J|]` of
/// `x³ + 2(1 + η_ρ)x − 2|η_J|`.
pub fn project_bulk(eta: &BulkEta, tol: f64) -> BulkProjection {
    let n = eta.eta_j[0].hypot(eta.eta_j[1]);
    if eta.eta_rho + 0.5 * n * n <= 0.0 {
        return BulkProjection {
            rho: eta.eta_rho,
            j: eta.eta_j,
            path: ProjectionPath::Feasible,
        };
    }
    if n == 0.0 {
        // infeasible with zero momentum means η_ρ > 0
        return BulkProjection {
            rho: 0.0,
            j: [0.0, 0.0],
            path: ProjectionPath::Newton,
        };
    }
    let c = 2.0 * (1.0 + eta.eta_rho);
    let g = |x: f64| (x * x + c) * x - 2.0 * n;
    let dg = |x: f64| 3.0 * x * x + c;
    let (x, converged) = safeguarded_newton(g, dg, 0.0, n, (2.0 * n).cbrt(), tol);
    let x = if converged {
        x
    } else {
        bisect(g, 0.0, n)
    };
    let scale = x / n;
    BulkProjection {
        rho: -0.5 * x * x,
        j: [scale * eta.eta_j[0], scale * eta.eta_j[1]],
        path: if converged {
            ProjectionPath::Newton
        } else {
            ProjectionPath::Fallback
        },
    }
}

/// Projects `eta` onto `{μ* + V*²/(2α₁) + f*²/(2α₂) ≤ 0}`.
///
/// For infeasible input, `(x, y) = (|V*|, |f*|)` solves
///
/// ```text
/// x³ + (α₁/α₂)xy² + 2(α₁² + α₁η_μ)x − 2α₁²|η_V| = 0
/// y³ + (α₂/α₁)yx² + 2(α₂² + α₂η_μ)y − 2α₂²|η_f| = 0
/// ```
///
/// by damped Newton inside the box `[0, |η_V|] × [0, |η_f|]`.
pub fn project_curve(eta: &CurveEta, alpha1: f64, alpha2: f64, tol: f64) -> CurveProjection {
    let (a1, a2) = (alpha1, alpha2);
    let big_x = eta.eta_v.abs();
    let big_y = eta.eta_f.abs();
    if eta.eta_mu + 0.5 * (big_x * big_x / a1 + big_y * big_y / a2) <= 0.0 {
        return CurveProjection {
            mu: eta.eta_mu,
            v: eta.eta_v,
            f: eta.eta_f,
            path: ProjectionPath::Feasible,
        };
    }
    let (x, y, path) = if big_x == 0.0 && big_y == 0.0 {
        (0.0, 0.0, ProjectionPath::Newton)
    } else if big_y == 0.0 {
        let c = 2.0 * (a1 * a1 + a1 * eta.eta_mu);
        let g = |x: f64| (x * x + c) * x - 2.0 * a1 * a1 * big_x;
        let dg = |x: f64| 3.0 * x * x + c;
        let (x, ok) = safeguarded_newton(g, dg, 0.0, big_x, big_x, tol);
        if ok {
            (x, 0.0, ProjectionPath::Newton)
        } else {
            (bisect(g, 0.0, big_x), 0.0, ProjectionPath::Fallback)
        }
    } else if big_x == 0.0 {
        let c = 2.0 * (a2 * a2 + a2 * eta.eta_mu);
        let g = |y: f64| (y * y + c) * y - 2.0 * a2 * a2 * big_y;
        let dg = |y: f64| 3.0 * y * y + c;
        let (y, ok) = safeguarded_newton(g, dg, 0.0, big_y, big_y, tol);
        if ok {
            (0.0, y, ProjectionPath::Newton)
        } else {
            (0.0, bisect(g, 0.0, big_y), ProjectionPath::Fallback)
        }
    } else {
        match newton_2x2(eta.eta_mu, big_x, big_y, a1, a2, tol) {
            Some((x, y)) => (x, y, ProjectionPath::Newton),
            None => {
                let (x, y) = multiplier_bisection(eta.eta_mu, big_x, big_y, a1, a2);
                (x, y, ProjectionPath::Fallback)
            }
        }
    };
    CurveProjection {
        mu: -0.5 * (x * x / a1 + y * y / a2),
        v: x.copysign(eta.eta_v),
        f: y.copysign(eta.eta_f),
        path,
    }
}

/// Newton on a function with `g(lo) < 0 < g(hi)`, falling back to bisection
/// steps whenever an iterate leaves the current bracket. Returns the root and
/// whether the residual tolerance was met within the iteration cap.
fn safeguarded_newton(
    g: impl Fn(f64) -> f64,
    dg: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    x0: f64,
    tol: f64,
) -> (f64, bool) {
    let scale = g(lo).abs().max(g(hi).abs()).max(1.0);
    let mut x = x0.clamp(lo, hi);
    for _ in 0..MAX_NEWTON {
        let gx = g(x);
        if gx == 0.0 {
            return (x, true);
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = dg(x);
        let mut next = x - gx / d;
        if !(next > lo && next < hi) || d <= 0.0 {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) || hi - lo <= 2.0 * f64::EPSILON * hi {
            let r = g(next);
            return (next, r.abs() <= tol * scale);
        }
        x = next;
    }
    (x, false)
}

fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn newton_2x2(eta_mu: f64, big_x: f64, big_y: f64, a1: f64, a2: f64, tol: f64) -> Option<(f64, f64)> {
    let r12 = a1 / a2;
    let r21 = a2 / a1;
    let c1 = 2.0 * (a1 * a1 + a1 * eta_mu);
    let c2 = 2.0 * (a2 * a2 + a2 * eta_mu);
    let s1 = 2.0 * a1 * a1 * big_x;
    let s2 = 2.0 * a2 * a2 * big_y;
    let res = |x: f64, y: f64| {
        [
            x * x * x + r12 * x * y * y + c1 * x - s1,
            y * y * y + r21 * y * x * x + c2 * y - s2,
        ]
    };
    let scale1 = s1.max(1e-300);
    let scale2 = s2.max(1e-300);
    let merit = |r: [f64; 2]| (r[0] / scale1).hypot(r[1] / scale2);

    let (mut x, mut y) = (big_x, big_y);
    let mut r = res(x, y);
    let mut m = merit(r);
    for _ in 0..MAX_NEWTON {
        let j11 = 3.0 * x * x + r12 * y * y + c1;
        let j12 = 2.0 * r12 * x * y;
        let j21 = 2.0 * r21 * x * y;
        let j22 = 3.0 * y * y + r21 * x * x + c2;
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx = (j22 * r[0] - j12 * r[1]) / det;
        let dy = (j11 * r[1] - j21 * r[0]) / det;
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let nx = (x - step * dx).clamp(0.0, big_x);
            let ny = (y - step * dy).clamp(0.0, big_y);
            let nr = res(nx, ny);
            let nm = merit(nr);
            if nm < m || nm == 0.0 {
                accepted = Some((nx, ny, nr, nm));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, ny, nr, nm)) = accepted else {
            // no decrease possible: either converged to rounding or stuck
            return (m <= tol).then_some((x, y));
        };
        let moved = (nx - x).abs().max((ny - y).abs());
        x = nx;
        y = ny;
        r = nr;
        m = nm;
        if m == 0.0 || moved <= 4.0 * f64::EPSILON * x.max(y) {
            return (m <= tol).then_some((x, y));
        }
    }
    None
}

/// `(x, y)` from the multiplier equation
/// `η_μ − λ + (X²/(α₁(1+λ/α₁)²) + Y²/(α₂(1+λ/α₂)²))/2 = 0`, which is
/// decreasing in `λ ≥ 0`.
fn multiplier_bisection(eta_mu: f64, big_x: f64, big_y: f64, a1: f64, a2: f64) -> (f64, f64) {
    let h = |l: f64| {
        let x = big_x * a1 / (a1 + l);
        let y = big_y * a2 / (a2 + l);
        eta_mu - l + 0.5 * (x * x / a1 + y * y / a2)
    };
    let hi = h(0.0).max(0.0) + 1.0;
    // h(hi) < 0 because the quadratic part is at most h(0) − η_μ.
    let l = bisect(|l| -h(l), 0.0, hi);
    (big_x * a1 / (a1 + l), big_y * a2 / (a2 + l))
}

/// Feasibility residual of a bulk dual pair; nonpositive when feasible.
pub fn bulk_violation(rho: f64, j: [f64; 2]) -> f64 {
    rho + 0.5 * (j[0] * j[0] + j[1] * j[1])
}

/// Feasibility residual of a curve dual triple; nonpositive when feasible.
pub fn curve_violation(mu: f64, v: f64, f: f64, alpha1: f64, alpha2: f64) -> f64 {
    mu + 0.5 * (v * v / alpha1 + f * f / alpha2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bulk(r: f64, jx: f64, jy: f64) -> BulkProjection {
        project_bulk(
            &BulkEta {
                eta_rho: r,
                eta_j: [jx, jy],
            },
            DEFAULT_TOL,
        )
    }

    fn curve(m: f64, v: f64, f: f64, a1: f64, a2: f64) -> CurveProjection {
        project_curve(
            &CurveEta {
                eta_mu: m,
                eta_v: v,
                eta_f: f,
            },
            a1,
            a2,
            DEFAULT_TOL,
        )
    }

    #[test]
    fn bulk_examples() {
        let p = bulk(-1.0, 0.0, 0.0);
        assert_eq!((p.rho, p.j, p.path), (-1.0, [0.0, 0.0], ProjectionPath::Feasible));
        let p = bulk(0.0, 0.0, 0.0);
        assert_eq!((p.rho, p.j), (0.0, [0.0, 0.0]));
        // root of x³ + 3x − 2
        let p = bulk(0.5, 1.0, 0.0);
        let x = 0.596_071_637_983_321_4;
        assert!((p.j[0] - x).abs() < 1e-14, "{}", p.j[0]);
        assert!((p.rho + 0.5 * x * x).abs() < 1e-14);
        assert_eq!(p.j[1], 0.0);
        assert_eq!(p.path, ProjectionPath::Newton);
    }

    #[test]
    fn bulk_zero_momentum_infeasible() {
        let p = bulk(2.0, 0.0, 0.0);
        assert_eq!((p.rho, p.j), (0.0, [0.0, 0.0]));
    }

    #[test]
    fn bulk_very_negative_density_stays_in_bracket() {
        // the cubic has negative slope at 0 here
        let p = bulk(-40.0, 9.5, 0.0);
        assert!(bulk_violation(p.rho, p.j).abs() < 1e-12);
        assert!(p.j[0] > 0.0 && p.j[0] <= 9.5);
        assert_eq!(p.path, ProjectionPath::Newton);
    }

    #[test]
    fn curve_examples() {
        let p = curve(1.0, 0.0, 0.0, 1.0, 1.0);
        assert_eq!((p.mu, p.v, p.f), (0.0, 0.0, 0.0));
        let p = curve(-5.0, 0.1, 0.1, 1.0, 1.0);
        assert_eq!((p.mu, p.v, p.f, p.path), (-5.0, 0.1, 0.1, ProjectionPath::Feasible));
        // symmetric root of x³ + x − 1
        let p = curve(0.0, 1.0, 1.0, 1.0, 1.0);
        let x = 0.682_327_803_828_019_3;
        assert!((p.v - x).abs() < 1e-13 && (p.f - x).abs() < 1e-13, "{p:?}");
        assert!((p.mu + x * x).abs() < 1e-13);
        assert_eq!(p.path, ProjectionPath::Newton);
    }

    #[test]
    fn curve_signs_follow_eta() {
        let p = curve(0.3, -2.0, 0.5, 0.1, 10.0);
        assert!(p.v < 0.0 && p.f > 0.0);
        let q = curve(0.3, 2.0, -0.5, 0.1, 10.0);
        assert_eq!((q.v, q.f, q.mu), (-p.v, -p.f, p.mu));
    }

    #[test]
    fn curve_single_component() {
        let p = curve(0.2, 0.0, 3.0, 1.0, 0.01);
        assert_eq!(p.v, 0.0);
        assert!(curve_violation(p.mu, p.v, p.f, 1.0, 0.01).abs() < 1e-12);
        let q = curve(0.2, 3.0, 0.0, 100.0, 1.0);
        assert_eq!(q.f, 0.0);
        assert!(curve_violation(q.mu, q.v, q.f, 100.0, 1.0).abs() < 1e-12);
    }

    #[test]
    fn multiplier_fallback_agrees_with_newton() {
        for &(m, v, f, a1, a2) in &[(0.4, 1.3, -0.7, 0.01, 0.01), (2.0, 5.0, 5.0, 100.0, 0.5), (-3.0, 4.0, 1.0, 1.0, 1.0)] {
            let p = curve(m, v, f, a1, a2);
            let (x, y) = multiplier_bisection(m, v.abs(), f.abs(), a1, a2);
            assert!((p.v.abs() - x).abs() < 1e-11 * (1.0 + x), "{p:?} vs {x}");
            assert!((p.f.abs() - y).abs() < 1e-11 * (1.0 + y), "{p:?} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn bulk_output_is_feasible_and_idempotent(r in -10.0..10.0f64, jx in -10.0..10.0f64, jy in -10.0..10.0f64) {
            let p = bulk(r, jx, jy);
            prop_assert!(bulk_violation(p.rho, p.j) <= 1e-10);
            let q = bulk(p.rho, p.j[0], p.j[1]);
            prop_assert!((q.rho - p.rho).abs() <= 1e-10);
            prop_assert!((q.j[0] - p.j[0]).abs() <= 1e-10 && (q.j[1] - p.j[1]).abs() <= 1e-10);
        }

        #[test]
        fn bulk_is_rotation_equivariant(r in -5.0..5.0f64, jx in -5.0..5.0f64, jy in -5.0..5.0f64, th in 0.0..6.3f64) {
            let p = bulk(r, jx, jy);
            let (s, c) = th.sin_cos();
            let q = bulk(r, c * jx - s * jy, s * jx + c * jy);
            prop_assert!((q.rho - p.rho).abs() <= 1e-10);
            prop_assert!((q.j[0] - (c * p.j[0] - s * p.j[1])).abs() <= 1e-10);
            prop_assert!((q.j[1] - (s * p.j[0] + c * p.j[1])).abs() <= 1e-10);
        }

        #[test]
        fn curve_output_is_feasible_and_idempotent(
            m in -10.0..10.0f64, v in -10.0..10.0f64, f in -10.0..10.0f64,
            la1 in -2.0..2.0f64, la2 in -2.0..2.0f64,
        ) {
            let (a1, a2) = (10f64.powf(la1), 10f64.powf(la2));
            let p = curve(m, v, f, a1, a2);
            prop_assert!(curve_violation(p.mu, p.v, p.f, a1, a2) <= 1e-10);
            prop_assert!(p.path != ProjectionPath::Fallback);
            let q = curve(p.mu, p.v, p.f, a1, a2);
            prop_assert!((q.mu - p.mu).abs() <= 1e-10);
            prop_assert!((q.v - p.v).abs() <= 1e-10 && (q.f - p.f).abs() <= 1e-10);
        }
    }
}
