use prefpath::curvereg::fd_gradient_reg;
use prefpath::geometry::{Point, Polyline};
use prefpath::pathopt::{fd_gradient_action, optimize_path, PathOptConfig};
use prefpath::transport::{AlgConfig, Bump, DataSpec, EndpointSpec, FixedCurveSolver};

fn line() -> Polyline {
    Polyline::new(vec![Point::new(0.05, 0.5), Point::new(0.5, 0.5), Point::new(0.95, 0.5)]).unwrap()
}

fn diagonal_data() -> DataSpec {
    DataSpec {
        initial: EndpointSpec::joint(vec![Bump::new(0.25, 0.25, 0.05)]),
        terminal: EndpointSpec::joint(vec![Bump::new(0.75, 0.75, 0.05)]),
    }
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

fn warm_solver(data: &DataSpec) -> FixedCurveSolver {
    let mut s = FixedCurveSolver::for_curve(&line(), 0.1, 10, data, AlgConfig::new(0.01, 0.01)).unwrap();
    s.run(600).unwrap();
    s
}

#[test]
fn endpoints_are_pulled_towards_the_bumps() {
    let data = diagonal_data();
    let s = warm_solver(&data);
    let g = fd_gradient_action(&line(), &s.mesh, &s.state, &data, &s.config, &PathOptConfig::default());
    assert!(g.valid.iter().all(|&v| v));
    // coordinates are (x0, y0, x1, y1, x2, y2): raising the left end costs,
    // raising the right end pays
    let (left, right) = (g.values[1], g.values[5]);
    assert!(left > 0.0 && right < 0.0, "{:?}", g.values);
}

#[test]
fn action_gradient_is_stable_under_halving_eps() {
    let data = diagonal_data();
    let s = warm_solver(&data);
    let coarse = PathOptConfig::default();
    let fine = PathOptConfig {
        eps_fd: coarse.eps_fd / 2.0,
        ..coarse.clone()
    };
    let a = fd_gradient_action(&line(), &s.mesh, &s.state, &data, &s.config, &coarse);
    let b = fd_gradient_action(&line(), &s.mesh, &s.state, &data, &s.config, &fine);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    assert!(norm(&diff) <= 0.25 * norm(&a.values), "{:?} vs {:?}", a.values, b.values);
}

#[test]
fn split_data_bends_the_line_into_a_v() {
    let alg = AlgConfig::new(0.01, 0.01);
    let cfg = PathOptConfig {
        it_max: 30,
        update_alg_iters: 100,
        ..PathOptConfig::default()
    };
    let res = optimize_path(&line(), 0.1, 10, &split_data(), &alg, &cfg).unwrap();
    let p = res.curve.points();
    let (l, m, r) = (p[0], p[1], p[2]);
    assert!(m.y < l.y && m.y < r.y, "{p:?}");
    assert!(res.curve.within_box(cfg.delta));
    let e = &res.trace.entries;
    assert!(e.last().unwrap().cost < e[0].cost);
}

#[test]
fn stationary_data_leaves_the_curve_in_place() {
    let ep = EndpointSpec::joint(vec![Bump::new(0.5, 0.3, 0.15)]);
    let data = DataSpec {
        initial: ep.clone(),
        terminal: ep,
    };
    // no symmetry, so every regularizer derivative is clearly nonzero and
    // the filter compares the action noise against something
    let curve = Polyline::new(vec![Point::new(0.2, 0.3), Point::new(0.35, 0.45), Point::new(0.8, 0.28)]).unwrap();
    let reg = fd_gradient_reg(&curve, 3.0, 1e-4);
    assert!(reg.values.iter().all(|g| g.abs() > 0.05), "{:?}", reg.values);
    let alg = AlgConfig {
        max_iter: 6000,
        tol: 1e-14,
        ..AlgConfig::new(0.01, 0.01)
    };
    let cfg = PathOptConfig {
        it_max: 5,
        tol: 1e-14,
        ..PathOptConfig::default()
    };
    let res = optimize_path(&curve, 0.1, 4, &data, &alg, &cfg).unwrap();
    assert_eq!(res.trace.entries.len(), 6);
    for e in &res.trace.entries[1..] {
        assert_eq!(e.frozen, 6, "{e:?}");
        assert_eq!(e.step, 0.0);
    }
    assert_eq!(res.curve, curve);
}
