//! Independent reference computations: exact discrete optimal transport,
//! mass bookkeeping, bisection root finders and brute-force projections.

use crate::dualproj::{BulkEta, CurveEta};
use crate::error::{Error, Result};
use crate::geometry::{Point, SpaceTimeMesh};
use crate::transport::{BoundaryData, PrimalState};

/// Largest support accepted by [`w2_squared_lp`].
pub const MAX_ATOMS: usize = 400;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DiscreteMeasure {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(points: Vec<Point>, weights: Vec<f64>) -> Self {
        DiscreteMeasure { points, weights }
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn translated(&self, v: Point) -> Self {
        DiscreteMeasure {
            points: self.points.iter().map(|&p| p + v).collect(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DiscreteMeasurePair {
    pub initial: DiscreteMeasure,
    pub terminal: DiscreteMeasure,
}

/// Optimal plan with its dual certificate.
#[derive(Clone, Debug)]
pub struct TransportPlan {
    pub cost: f64,
    /// `(i, j, mass)` for every arc carrying mass.
    pub flows: Vec<(usize, usize, f64)>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// Largest violation of dual feasibility, complementary slackness or the
    /// duality gap.
    pub certificate_residual: f64,
}

/// `inf_π ∫|x − y|² dπ` by successive shortest paths on the transport
/// network, with Dijkstra on reduced costs.
pub fn w2_squared_lp(pair: &DiscreteMeasurePair) -> Result<TransportPlan> {
    let a = &pair.initial;
    let b = &pair.terminal;
    let mut problems = Vec::new();
    for (name, m) in [("initial", a), ("terminal", b)] {
        if m.points.len() != m.weights.len() {
            problems.push(format!("{name}: {} points but {} weights", m.points.len(), m.weights.len()));
        }
        if m.points.is_empty() || m.points.len() > MAX_ATOMS {
            problems.push(format!("{name}: support size {} outside 1..={MAX_ATOMS}", m.points.len()));
        }
        if m.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            problems.push(format!("{name}: weights must be nonnegative"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let (ma, mb) = (a.mass(), b.mass());
    if (ma - mb).abs() > 1e-12 * ma.max(mb).max(1.0) {
        return Err(Error::Infeasible(format!("masses differ: {ma} vs {mb}")));
    }

    let n = a.points.len();
    let m = b.points.len();
    let cost = |i: usize, j: usize| (a.points[i] - b.points[j]).norm_squared();
    let eps = 1e-15 * ma.max(1e-300);

    let mut supply = a.weights.clone();
    let mut demand = b.weights.clone();
    let mut flow = vec![0.0; n * m];
    // Node potentials with reduced costs c + π(tail) − π(head); the super
    // source stays at 0, the super sink is tracked in `pi_t`.
    let mut pi_a: Vec<f64> = vec![0.0; n];
    let mut pi_b: Vec<f64> = vec![0.0; m];
    let mut pi_t: f64 = 0.0;

    #[derive(Clone, Copy, PartialEq)]
    enum Prev {
        None,
        Root,
        FromSource(usize),
        FromSink(usize),
    }

    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= eps * (n as f64) {
            break;
        }
        // Dense Dijkstra over sources (0..n) and sinks (n..n+m).
        let mut dist = vec![f64::INFINITY; n + m];
        let mut prev = vec![Prev::None; n + m];
        let mut done = vec![false; n + m];
        for i in 0..n {
            if supply[i] > eps {
                dist[i] = (-pi_a[i]).max(0.0);
                prev[i] = Prev::Root;
            }
        }
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for k in 0..n + m {
                if !done[k] && dist[k] < best_d {
                    best_d = dist[k];
                    best = k;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best < n {
                let i = best;
                for j in 0..m {
                    let k = n + j;
                    if done[k] {
                        continue;
                    }
                    let rc = (cost(i, j) + pi_a[i] - pi_b[j]).max(0.0);
                    if best_d + rc < dist[k] {
                        dist[k] = best_d + rc;
                        prev[k] = Prev::FromSource(i);
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= 0.0 {
                        continue;
                    }
                    let rc = (-cost(i, j) + pi_b[j] - pi_a[i]).max(0.0);
                    if best_d + rc < dist[i] {
                        dist[i] = best_d + rc;
                        prev[i] = Prev::FromSink(j);
                    }
                }
            }
        }
        let mut target = None;
        let mut target_dist = f64::INFINITY;
        for j in 0..m {
            if demand[j] > eps {
                let d = dist[n + j] + (pi_b[j] - pi_t).max(0.0);
                if d < target_dist {
                    target_dist = d;
                    target = Some(j);
                }
            }
        }
        let Some(tj) = target else {
            return Err(Error::Infeasible("no augmenting path".into()));
        };
        for i in 0..n {
            pi_a[i] += dist[i].min(target_dist);
        }
        for j in 0..m {
            pi_b[j] += dist[n + j].min(target_dist);
        }
        pi_t += target_dist;

        // trace the path back and find the bottleneck
        let mut amount = demand[tj];
        let mut k = n + tj;
        let mut path = Vec::new();
        loop {
            match prev[k] {
                Prev::FromSource(i) => {
                    path.push((i, k - n, true));
                    k = i;
                }
                Prev::FromSink(j) => {
                    let i = k;
                    amount = amount.min(flow[i * m + j]);
                    path.push((i, j, false));
                    k = n + j;
                }
                Prev::Root => {
                    amount = amount.min(supply[k]);
                    break;
                }
                Prev::None => unreachable!("broken shortest-path tree"),
            }
        }
        let source = k;
        for (i, j, forward) in path {
            if forward {
                flow[i * m + j] += amount;
            } else {
                flow[i * m + j] -= amount;
                if flow[i * m + j] < eps {
                    flow[i * m + j] = 0.0;
                }
            }
        }
        supply[source] -= amount;
        demand[tj] -= amount;
        if supply[source] < eps {
            supply[source] = 0.0;
        }
        if demand[tj] < eps {
            demand[tj] = 0.0;
        }
    }

    // Dual certificate: u_i + v_j ≤ c_ij with equality on the support.
    let u: Vec<f64> = pi_a.iter().map(|p| -p).collect();
    let v = pi_b;
    let mut total = 0.0;
    let mut flows = Vec::new();
    let mut residual: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let c = cost(i, j);
            let slack = c - u[i] - v[j];
            residual = residual.max(-slack);
            let f = flow[i * m + j];
            if f > 0.0 {
                total += f * c;
                flows.push((i, j, f));
                residual = residual.max(slack.abs());
            }
        }
    }
    let dual_value: f64 = a.weights.iter().zip(&u).map(|(w, x)| w * x).sum::<f64>()
        + b.weights.iter().zip(&v).map(|(w, x)| w * x).sum::<f64>();
    residual = residual.max((total - dual_value).abs());
    Ok(TransportPlan {
        cost: total,
        flows,
        u,
        v,
        certificate_residual: residual,
    })
}

/// Per-slab total mass `Σ ρ|T| + Σ μ|e|` and its largest deviation from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct MassReport {
    pub per_slab: Vec<f64>,
    pub max_deviation: f64,
}

pub fn check_mass_conservation(state: &PrimalState, mesh: &SpaceTimeMesh) -> MassReport {
    let nt = mesh.n_triangles();
    let ne = mesh.n_curve_edges();
    let per_slab: Vec<f64> = (0..mesh.n_slabs())
        .map(|s| {
            let bulk: f64 = (0..nt).map(|t| state.rho[s * nt + t] * mesh.area(t)).sum();
            let curve: f64 = mesh
                .curve_edges()
                .iter()
                .enumerate()
                .map(|(k, e)| state.mu[s * ne + k] * e.length)
                .sum();
            bulk + curve
        })
        .collect();
    let max_deviation = per_slab.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max);
    MassReport {
        per_slab,
        max_deviation,
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`, to `|f| ≤ 1e−13` or
/// until the bracket cannot shrink further.
pub fn bracketed_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> Result<f64> {
    let (flo, fhi) = (f(lo), f(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return Err(Error::NoBracket { lo, hi });
    }
    let increasing = fhi > 0.0;
    let (mut a, mut b) = (lo, hi);
    loop {
        let mid = 0.5 * (a + b);
        if mid <= a.min(b) || mid >= a.max(b) {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 || (fm.abs() <= 1e-13 && (b - a).abs() <= 1e-15 * mid.abs().max(1.0)) {
            return Ok(mid);
        }
        if (fm > 0.0) == increasing {
            b = mid;
        } else {
            a = mid;
        }
    }
}

/// Root of `c₃x³ + c₂x² + c₁x + c₀` on a sign-changing bracket.
pub fn cubic_root(coeffs: [f64; 4], lo: f64, hi: f64) -> Result<f64> {
    let [c3, c2, c1, c0] = coeffs;
    bracketed_root(|x| ((c3 * x + c2) * x + c1) * x + c0, lo, hi)
}

/// Bulk projection through the multiplier `λ ≥ 0` of the constraint:
/// `J* = η_J/(1 + λ)`, `ρ* = η_ρ − λ`.
pub fn bulk_projection_oracle(eta: &BulkEta) -> (f64, [f64; 2]) {
    let n2 = eta.eta_j[0].powi(2) + eta.eta_j[1].powi(2);
    let g = |l: f64| eta.eta_rho - l + 0.5 * n2 / (1.0 + l).powi(2);
    if g(0.0) <= 0.0 {
        return (eta.eta_rho, eta.eta_j);
    }
    let l = bracketed_root(|l| -g(l), 0.0, g(0.0)).expect("g decreases to below zero on [0, g(0)]");
    (eta.eta_rho - l, [eta.eta_j[0] / (1.0 + l), eta.eta_j[1] / (1.0 + l)])
}

/// Curve projection through the constraint multiplier, analogous to
/// [`bulk_projection_oracle`].
pub fn curve_projection_oracle(eta: &CurveEta, alpha1: f64, alpha2: f64) -> (f64, f64, f64) {
    let g = |l: f64| {
        let v = eta.eta_v * alpha1 / (alpha1 + l);
        let f = eta.eta_f * alpha2 / (alpha2 + l);
        eta.eta_mu - l + 0.5 * (v * v / alpha1 + f * f / alpha2)
    };
    if g(0.0) <= 0.0 {
        return (eta.eta_mu, eta.eta_v, eta.eta_f);
    }
    let l = bracketed_root(|l| -g(l), 0.0, g(0.0)).expect("g decreases to below zero on [0, g(0)]");
    (
        eta.eta_mu - l,
        eta.eta_v * alpha1 / (alpha1 + l),
        eta.eta_f * alpha2 / (alpha2 + l),
    )
}

/// Minimizes `d(p)` over a square grid of parameters, first coarsely and
/// then finely around the coarse winner.
fn grid_argmin(d: impl Fn(f64, f64) -> f64, center: [f64; 2], radius: f64) -> [f64; 2] {
    let search = |c: [f64; 2], r: f64, step: f64| {
        let k = (r / step).ceil() as i64;
        let mut best = (f64::INFINITY, c);
        for a in -k..=k {
            for b in -k..=k {
                let p = [c[0] + a as f64 * step, c[1] + b as f64 * step];
                let v = d(p[0], p[1]);
                if v < best.0 {
                    best = (v, p);
                }
            }
        }
        best.1
    };
    let coarse = search(center, radius, 0.05);
    search(coarse, 0.1, 1e-3)
}

/// Nearest point of the bulk feasible set by grid search over its boundary
/// parametrized by `J*`.
pub fn bulk_grid_nearest(eta: &BulkEta) -> (f64, [f64; 2]) {
    let [jx, jy] = eta.eta_j;
    if eta.eta_rho + 0.5 * (jx * jx + jy * jy) <= 0.0 {
        return (eta.eta_rho, eta.eta_j);
    }
    let d = |a: f64, b: f64| {
        let rho = -0.5 * (a * a + b * b);
        (rho - eta.eta_rho).powi(2) + (a - jx).powi(2) + (b - jy).powi(2)
    };
    let r = jx.abs().max(jy.abs()) + 0.1;
    let [a, b] = grid_argmin(d, [0.0, 0.0], r);
    (-0.5 * (a * a + b * b), [a, b])
}

/// Nearest point of the curve feasible set by grid search over its boundary
/// parametrized by `(V*, f*)`.
pub fn curve_grid_nearest(eta: &CurveEta, alpha1: f64, alpha2: f64) -> (f64, f64, f64) {
    let (v0, f0) = (eta.eta_v, eta.eta_f);
    if eta.eta_mu + 0.5 * (v0 * v0 / alpha1 + f0 * f0 / alpha2) <= 0.0 {
        return (eta.eta_mu, v0, f0);
    }
    let d = |v: f64, f: f64| {
        let mu = -0.5 * (v * v / alpha1 + f * f / alpha2);
        (mu - eta.eta_mu).powi(2) + (v - v0).powi(2) + (f - f0).powi(2)
    };
    let r = v0.abs().max(f0.abs()) + 0.1;
    let [v, f] = grid_argmin(d, [0.0, 0.0], r);
    (-0.5 * (v * v / alpha1 + f * f / alpha2), v, f)
}

/// Lumps nodal boundary densities into at most `bins × bins` atoms placed at
/// the mass centroid of each bin.
pub fn atomize(mesh: &SpaceTimeMesh, rho: &[f64], mu: &[f64], bins: usize) -> DiscreteMeasure {
    let mut mass = vec![0.0; bins * bins];
    let mut moment = vec![Point::new(0.0, 0.0); bins * bins];
    let mut add = |p: Point, w: f64| {
        if w <= 0.0 {
            return;
        }
        let bx = ((p.x * bins as f64) as usize).min(bins - 1);
        let by = ((p.y * bins as f64) as usize).min(bins - 1);
        mass[by * bins + bx] += w;
        moment[by * bins + bx] = moment[by * bins + bx] + w * p;
    };
    for ((p, w), r) in mesh.vertices().iter().zip(mesh.lumped_vertex_areas()).zip(rho) {
        add(*p, w * r);
    }
    for ((&v, w), m) in mesh.curve_vertices().iter().zip(mesh.lumped_curve_lengths()).zip(mu) {
        add(mesh.vertices()[v], w * m);
    }
    let mut out = DiscreteMeasure::default();
    for k in 0..bins * bins {
        if mass[k] > 0.0 {
            out.points.push((1.0 / mass[k]) * moment[k]);
            out.weights.push(mass[k]);
        }
    }
    out
}

/// Initial and final boundary data as atomic measures.
pub fn atomize_boundary_data(mesh: &SpaceTimeMesh, data: &BoundaryData, bins: usize) -> DiscreteMeasurePair {
    DiscreteMeasurePair {
        initial: atomize(mesh, &data.rho0, &data.mu0, bins),
        terminal: atomize(mesh, &data.rho1, &data.mu1, bins),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn measure(pts: &[(f64, f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(
            pts.iter().map(|&(x, y, _)| Point::new(x, y)).collect(),
            pts.iter().map(|&(_, _, w)| w).collect(),
        )
    }

    fn w2(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
        let plan = w2_squared_lp(&DiscreteMeasurePair {
            initial: a.clone(),
            terminal: b.clone(),
        })
        .unwrap();
        assert!(plan.certificate_residual <= 1e-9, "{}", plan.certificate_residual);
        plan.cost
    }

    #[test]
    fn lp_examples() {
        let a = measure(&[(0.25, 0.25, 1.0)]);
        let b = measure(&[(0.75, 0.75, 1.0)]);
        assert!((w2(&a, &b) - 0.5).abs() < 1e-15);
        assert_eq!(w2(&a, &a), 0.0);
        let a = measure(&[(0.0, 0.0, 0.5), (1.0, 0.0, 0.5)]);
        let b = measure(&[(0.0, 0.0, 0.5), (0.0, 1.0, 0.5)]);
        // the two vertex plans cost ½·0 + ½·2 and ½·1 + ½·1
        assert!((w2(&a, &b) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lp_rejects_mass_mismatch() {
        let a = measure(&[(0.0, 0.0, 1.0)]);
        let b = measure(&[(1.0, 0.0, 0.5)]);
        assert!(matches!(
            w2_squared_lp(&DiscreteMeasurePair { initial: a, terminal: b }),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn lp_matches_brute_force_on_permutations() {
        // uniform weights: the optimum is a permutation
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 5;
            let pa: Vec<Point> = (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect();
            let pb: Vec<Point> = (0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect();
            let w = vec![1.0 / n as f64; n];
            let got = w2(&DiscreteMeasure::new(pa.clone(), w.clone()), &DiscreteMeasure::new(pb.clone(), w));
            let mut perm: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut perm, 0, &mut |p| {
                let c: f64 = p.iter().enumerate().map(|(i, &j)| (pa[i] - pb[j]).norm_squared()).sum::<f64>() / n as f64;
                best = best.min(c);
            });
            assert!((got - best).abs() < 1e-12, "{got} vs {best}");
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn translation_covariance_single_atoms() {
        let a = measure(&[(0.1, 0.2, 1.0)]);
        let b = measure(&[(0.7, 0.4, 1.0)]);
        let v = Point::new(0.3, -0.2);
        assert!((w2(&a.translated(v), &b.translated(v)) - w2(&a, &b)).abs() < 1e-15);
        // |x + v − y|² = |x − y|² + 2⟨x − y, v⟩ + |v|²
        let d = Point::new(0.1 - 0.7, 0.2 - 0.4);
        let expected = d.norm_squared() + 2.0 * d.dot(v) + v.norm_squared();
        assert!((w2(&a.translated(v), &b) - expected).abs() < 1e-15);
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        let mut w: Vec<f64> = w.iter().map(|x| x / s).collect();
        let last: f64 = w[..n - 1].iter().sum();
        w[n - 1] = 1.0 - last;
        DiscreteMeasure::new((0..n).map(|_| Point::new(rng.gen(), rng.gen())).collect(), w)
    }

    #[test]
    fn lp_symmetry_and_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let na = rng.gen_range(1..=20);
            let a = random_measure(&mut rng, na);
            let nb = rng.gen_range(1..=20);
            let b = random_measure(&mut rng, nb);
            let nc = rng.gen_range(1..=20);
            let c = random_measure(&mut rng, nc);
            let ab = w2(&a, &b);
            assert!((ab - w2(&b, &a)).abs() < 1e-12);
            let ac = w2(&a, &c).sqrt();
            let bc = w2(&b, &c).sqrt();
            assert!(ac <= ab.sqrt() + bc + 1e-8);
        }
    }

    #[test]
    fn root_examples() {
        let x = cubic_root([1.0, 0.0, 3.0, -2.0], 0.0, 1.0).unwrap();
        assert!((x - 0.596_071_637_983_321_4).abs() < 1e-15);
        let x = cubic_root([1.0, 0.0, 1.0, -1.0], 0.0, 1.0).unwrap();
        assert!((x - 0.682_327_803_828_019_3).abs() < 1e-15);
        let x = cubic_root([1.0, 0.0, 2.0, 0.0], -1.0, 1.0).unwrap();
        assert!(x.abs() < 1e-15);
        assert!(matches!(cubic_root([1.0, 0.0, 1.0, 5.0], 0.0, 1.0), Err(Error::NoBracket { .. })));
    }

    #[test]
    fn projection_oracles_on_examples() {
        let (r, j) = bulk_projection_oracle(&BulkEta { eta_rho: 0.5, eta_j: [1.0, 0.0] });
        assert!((j[0] - 0.596_071_637_983_321_4).abs() < 1e-12);
        assert!((r + 0.5 * j[0] * j[0]).abs() < 1e-12);
        let (m, v, f) = curve_projection_oracle(&CurveEta { eta_mu: 0.0, eta_v: 1.0, eta_f: 1.0 }, 1.0, 1.0);
        assert!((v - 0.682_327_803_828_019_3).abs() < 1e-12 && (f - v).abs() < 1e-15);
        assert!((m + v * v).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn grid_oracle_agrees_with_multiplier_oracle(r in -3.0..3.0f64, jx in -3.0..3.0f64, jy in -3.0..3.0f64) {
            let eta = BulkEta { eta_rho: r, eta_j: [jx, jy] };
            let (a, ja) = bulk_projection_oracle(&eta);
            let (b, jb) = bulk_grid_nearest(&eta);
            prop_assert!((a - b).abs() < 2e-3 && (ja[0] - jb[0]).abs() < 2e-3 && (ja[1] - jb[1]).abs() < 2e-3);
        }
    }
}
