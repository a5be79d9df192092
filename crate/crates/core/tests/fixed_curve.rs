use prefpath::dualproj::{bulk_violation, curve_violation};
use prefpath::geometry::{Point, Polyline};
use prefpath::transport::{
    curve_flux_share, flux_integrals, solve_fixed_curve, AlgConfig, Bump, DataSpec, EndpointSpec,
    FixedCurveSolver, Placement,
};

fn u_curve() -> Polyline {
    Polyline::new(vec![
        Point::new(0.3, 0.7),
        Point::new(0.4, 0.3),
        Point::new(0.6, 0.3),
        Point::new(0.7, 0.7),
    ])
    .unwrap()
}

fn split_data() -> DataSpec {
    let mut a = Bump::new(0.2, 0.8, 0.1);
    let mut b = Bump::new(0.8, 0.8, 0.1);
    a.weight = 0.5;
    b.weight = 0.5;
    DataSpec {
        initial: EndpointSpec::joint(vec![Bump::new(0.5, 0.2, 0.1)]),
        terminal: EndpointSpec::joint(vec![a, b]),
    }
}

fn mirror(p: Point) -> Point {
    Point::new(1.0 - p.x, p.y)
}

#[test]
fn residual_falls_by_an_order_of_magnitude() {
    let mut solver = FixedCurveSolver::for_curve(&u_curve(), 0.1, 10, &split_data(), AlgConfig::new(0.1, 0.1)).unwrap();
    let report = solver.run(500).unwrap();
    let first = report.trace[0].err_omega + report.trace[0].err_gamma;
    let last = report.trace.last().unwrap();
    assert!(last.err_omega + last.err_gamma <= first / 10.0, "{first} -> {last:?}");
}

#[test]
fn duals_stay_feasible_along_the_iteration() {
    let cfg = AlgConfig::new(0.05, 0.2);
    let (a1, a2) = (cfg.alpha1, cfg.alpha2);
    let mut solver = FixedCurveSolver::for_curve(&u_curve(), 0.1, 6, &split_data(), cfg).unwrap();
    for _ in 0..60 {
        solver.step().unwrap();
        let d = &solver.state.dual;
        for (r, j) in d.rho.iter().zip(&d.j) {
            assert!(bulk_violation(*r, *j) <= 1e-10);
        }
        for k in 0..d.mu.len() {
            assert!(curve_violation(d.mu[k], d.v[k], d.f[k], a1, a2) <= 1e-10);
        }
    }
}

#[test]
fn mirrored_problem_has_the_same_action() {
    let curve = Polyline::new(vec![Point::new(0.2, 0.3), Point::new(0.5, 0.5), Point::new(0.6, 0.8)]).unwrap();
    let data = DataSpec {
        initial: EndpointSpec::joint(vec![Bump::new(0.3, 0.2, 0.1)]),
        terminal: EndpointSpec::joint(vec![Bump::new(0.7, 0.8, 0.1)]),
    };
    let flip = |e: &EndpointSpec| EndpointSpec {
        bumps: e
            .bumps
            .iter()
            .map(|b| Bump {
                center: [1.0 - b.center[0], b.center[1]],
                ..b.clone()
            })
            .collect(),
        placement: e.placement,
    };
    let flipped = DataSpec {
        initial: flip(&data.initial),
        terminal: flip(&data.terminal),
    };
    let mirrored = Polyline::new(curve.points().iter().map(|&p| mirror(p)).collect()).unwrap();

    let mut cfg = AlgConfig::new(0.1, 0.1);
    cfg.max_iter = 300;
    let a = solve_fixed_curve(&curve, 0.1, 8, &data, &cfg).unwrap();
    let b = solve_fixed_curve(&mirrored, 0.1, 8, &flipped, &cfg).unwrap();
    let rel = (a.report.action - b.report.action).abs() / a.report.action;
    assert!(rel <= 1e-2, "{} vs {}", a.report.action, b.report.action);
}

#[test]
fn cheap_curve_carries_more_flux_than_the_bulk_around_it() {
    let mut cheap = AlgConfig::new(0.01, 0.01);
    cheap.max_iter = 400;
    let mut dear = AlgConfig::new(100.0, 100.0);
    dear.max_iter = 400;
    let tube = Some(0.1);

    let s = solve_fixed_curve(&u_curve(), 0.1, 10, &split_data(), &cheap).unwrap();
    let (curve, bulk) = flux_integrals(s.primal(), &s.mesh, tube);
    assert!(curve > bulk, "cheap: curve {curve} tube {bulk}");

    let s = solve_fixed_curve(&u_curve(), 0.1, 10, &split_data(), &dear).unwrap();
    let (curve, bulk) = flux_integrals(s.primal(), &s.mesh, tube);
    assert!(curve < bulk, "dear: curve {curve} tube {bulk}");
    assert!(curve_flux_share(s.primal(), &s.mesh) < 0.05);
}

#[test]
fn exchange_cost_drives_the_incompatible_action() {
    let spec = DataSpec {
        initial: EndpointSpec {
            bumps: vec![Bump::new(0.5, 0.2, 0.1)],
            placement: Placement::BulkOnly,
        },
        terminal: EndpointSpec {
            bumps: vec![Bump::new(0.5, 0.8, 0.1)],
            placement: Placement::CurveOnly,
        },
    };
    let curve = Polyline::new(vec![Point::new(0.2, 0.7), Point::new(0.8, 0.7)]).unwrap();
    let mut last = 0.0;
    for alpha2 in [1.0, 10.0, 100.0] {
        let mut cfg = AlgConfig::new(1.0, alpha2);
        cfg.max_iter = 400;
        let s = solve_fixed_curve(&curve, 0.1, 8, &spec, &cfg).unwrap();
        assert!(s.report.action > last, "alpha2 {alpha2}: {} after {last}", s.report.action);
        last = s.report.action;
    }
}
