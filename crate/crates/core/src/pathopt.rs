//! Projected gradient descent over the control points of the preferential
//! path.
//!
//! Each outer iteration estimates the action gradient by central
//! differences (remesh at `γ ± εe_i`, warm-start, a few ALG iterations),
//! filters components where the penalty dominates, takes a normalized step
//! and re-solves the transport problem on the new curve.

use serde::{Deserialize, Serialize};

use crate::curvereg::{self, discrete_regularizer, fd_gradient, FdGradient};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, project_box, Point, Polyline, SpaceTimeMesh, DEFAULT_DELTA};
use crate::transport::{
    make_boundary_data, transfer_state, AlgConfig, AlgState, BoundaryData, DataSpec,
    FixedCurveSolver, PrimalState, SolveReport,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathOptConfig {
    /// Perturbation of the finite differences.
    #[serde(default = "d_eps_fd")]
    pub eps_fd: f64,
    #[serde(default = "d_step0")]
    pub step0: f64,
    /// Initial weight `c` of the regularizer.
    #[serde(default = "d_c0")]
    pub c0: f64,
    #[serde(default = "d_c_low")]
    pub c_low: f64,
    /// Consecutive zero directions before `c` is halved.
    #[serde(default = "d_n_iter")]
    pub n_iter: usize,
    #[serde(default = "d_it_max")]
    pub it_max: usize,
    /// ALG iterations per finite-difference evaluation.
    #[serde(default = "d_inner")]
    pub inner_alg_iters: usize,
    /// Cap on the warm-started ALG solve after each accepted curve update.
    #[serde(default = "d_update_iters")]
    pub update_alg_iters: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    /// Distance kept from the boundary of the square.
    #[serde(default = "d_delta")]
    pub delta: f64,
    /// Tangent-point exponent.
    #[serde(default = "d_p")]
    pub p: f64,
    #[serde(default = "d_max_halvings")]
    pub max_halvings: usize,
    /// Relative cost increase tolerated before a step is rejected.
    #[serde(default = "d_cost_slack")]
    pub cost_slack: f64,
}

fn d_eps_fd() -> f64 {
    1e-4
}
fn d_step0() -> f64 {
    0.01
}
fn d_c0() -> f64 {
    1e-3
}
fn d_c_low() -> f64 {
    1e-6
}
fn d_n_iter() -> usize {
    5
}
fn d_it_max() -> usize {
    200
}
fn d_inner() -> usize {
    1
}
fn d_update_iters() -> usize {
    200
}
fn d_tol() -> f64 {
    1e-6
}
fn d_delta() -> f64 {
    DEFAULT_DELTA
}
fn d_p() -> f64 {
    curvereg::DEFAULT_P
}
fn d_max_halvings() -> usize {
    5
}
fn d_cost_slack() -> f64 {
    0.05
}

impl Default for PathOptConfig {
    fn default() -> Self {
        PathOptConfig {
            eps_fd: d_eps_fd(),
            step0: d_step0(),
            c0: d_c0(),
            c_low: d_c_low(),
            n_iter: d_n_iter(),
            it_max: d_it_max(),
            inner_alg_iters: d_inner(),
            update_alg_iters: d_update_iters(),
            tol: d_tol(),
            delta: d_delta(),
            p: d_p(),
            max_halvings: d_max_halvings(),
            cost_slack: d_cost_slack(),
        }
    }
}

impl PathOptConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("eps_fd", self.eps_fd),
            ("step0", self.step0),
            ("c0", self.c0),
            ("c_low", self.c_low),
            ("tol", self.tol),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("pathopt.{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.c_low < self.c0) {
            problems.push(format!(
                "pathopt.c_low ({}) must be smaller than pathopt.c0 ({})",
                self.c_low, self.c0
            ));
        }
        if self.delta >= 0.5 {
            problems.push(format!("pathopt.delta must be below 0.5, got {}", self.delta));
        }
        if !(self.p > 2.0) {
            problems.push(format!("pathopt.p must exceed 2, got {}", self.p));
        }
        if !(self.cost_slack >= 0.0) {
            problems.push(format!("pathopt.cost_slack must be nonnegative, got {}", self.cost_slack));
        }
        for (name, v) in [
            ("n_iter", self.n_iter),
            ("inner_alg_iters", self.inner_alg_iters),
            ("update_alg_iters", self.update_alg_iters),
        ] {
            if v == 0 {
                problems.push(format!("pathopt.{name} must be at least 1"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// One outer iteration; entry 0 describes the initial curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTraceEntry {
    pub iter: usize,
    pub curve: Vec<Point>,
    pub action: f64,
    pub reg: f64,
    /// `action + c · reg` with the `c` of this entry.
    pub cost: f64,
    /// Step actually taken (0 when the curve did not move).
    pub step: f64,
    pub c: f64,
    /// Components of the direction that were filtered out or invalid.
    pub frozen: usize,
    pub err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Tolerance,
    IterationCap,
    /// Zero directions with `c` already at its floor.
    Stalled,
    /// Every backtracking candidate left the admissible curves.
    SelfIntersection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathTrace {
    pub entries: Vec<PathTraceEntry>,
    pub stop: StopReason,
}

#[derive(Debug)]
pub struct PathOptResult {
    pub curve: Polyline,
    pub trace: PathTrace,
    pub mesh: SpaceTimeMesh,
    pub data: BoundaryData,
    pub state: AlgState,
    /// Report of the last fixed-curve solve.
    pub report: SolveReport,
}

impl PathOptResult {
    pub fn primal(&self) -> &PrimalState {
        &self.state.primal
    }
}

/// The fixed-curve problem around the current curve.
struct Current {
    curve: Polyline,
    mesh: SpaceTimeMesh,
    state: AlgState,
    report: SolveReport,
    data: BoundaryData,
}

/// Meshes `curve`, transfers `warm` and runs at most `iters` iterations.
///
/// With `deform`, the previous mesh is bent onto the curve when possible so
/// the state carries over index by index; otherwise the domain is remeshed.
fn evaluate(
    curve: &Polyline,
    from: &SpaceTimeMesh,
    warm: &AlgState,
    spec: &DataSpec,
    alg: &AlgConfig,
    iters: usize,
    deform: bool,
) -> Result<FixedCurveSolver> {
    let (mesh, state) = match deform.then(|| from.deform(curve)).flatten() {
        Some(mesh) => (mesh, warm.clone()),
        None => {
            let mesh = build_mesh(curve, from.h(), from.n_slabs())?;
            let state = transfer_state(from, warm, &mesh)?;
            (mesh, state)
        }
    };
    let data = make_boundary_data(spec, &mesh)?;
    let mut solver = FixedCurveSolver::new(mesh, data, alg.clone())?.with_state(state)?;
    solver.run(iters)?;
    Ok(solver)
}

/// Central-difference gradient of the discrete action with respect to the
/// control points, each side evaluated after `config.inner_alg_iters`
/// warm-started ALG iterations on the perturbed domain.
///
/// Perturbed domains reuse the current connectivity whenever the deformed
/// mesh stays admissible; remeshing for an `ε`-sized move can flip
/// triangulation edges and swamp the difference quotient.
pub fn fd_gradient_action(
    curve: &Polyline,
    mesh: &SpaceTimeMesh,
    warm: &AlgState,
    spec: &DataSpec,
    alg: &AlgConfig,
    config: &PathOptConfig,
) -> FdGradient {
    fd_gradient(curve, config.eps_fd, |c| {
        let solver = evaluate(c, mesh, warm, spec, alg, config.inner_alg_iters, true)?;
        Ok(solver.action().value())
    })
}

/// Componentwise filtered direction: `sign(D_iA + c D_iR)` where
/// `|D_iA| > c |D_iR|` and both entries are valid, 0 elsewhere, then scaled
/// to unit length. An all-zero result signals a stall.
///
/// The result points uphill; the optimizer steps along its negative.
pub fn descent_direction(grad_a: &FdGradient, grad_r: &FdGradient, c: f64) -> Vec<f64> {
    assert_eq!(grad_a.len(), grad_r.len(), "gradient lengths differ");
    let mut p: Vec<f64> = (0..grad_a.len())
        .map(|i| {
            let (a, r) = (grad_a.values[i], grad_r.values[i]);
            if grad_a.valid[i] && grad_r.valid[i] && a.abs() > c * r.abs() {
                let g = a + c * r;
                if g == 0.0 {
                    0.0
                } else {
                    g / g.abs()
                }
            } else {
                0.0
            }
        })
        .collect();
    let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        p.iter_mut().for_each(|v| *v /= norm);
    }
    p
}

fn regularizer(curve: &Polyline, p: f64) -> Result<f64> {
    let r = discrete_regularizer(curve, p)?;
    if r.total.is_finite() {
        Ok(r.total)
    } else {
        Err(Error::CurveSelfIntersection("closed or degenerate curve".into()))
    }
}

fn sup_distance(a: &Polyline, b: &Polyline) -> f64 {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs the curve optimization from `initial`. The observer sees every
/// trace entry as it is recorded.
pub fn optimize_path_with(
    initial: &Polyline,
    h: f64,
    n_t: usize,
    spec: &DataSpec,
    alg: &AlgConfig,
    config: &PathOptConfig,
    mut observer: impl FnMut(&PathTraceEntry),
) -> Result<PathOptResult> {
    config.validate()?;
    alg.validate()?;
    if initial.n_points() < 2 {
        return Err(Error::InvalidCurve("the optimizer needs at least two control points".into()));
    }
    let start = project_box(initial, config.delta);
    start.validate()?;

    let mut solver = FixedCurveSolver::for_curve(&start, h, n_t, spec, alg.clone())?;
    solver.solve()?;
    let mut c = config.c0;
    let mut cur = {
        let report = solver.report();
        let (mesh, data, state, _) = solver.into_parts();
        Current {
            curve: start,
            mesh,
            state,
            report,
            data,
        }
    };
    let mut reg = regularizer(&cur.curve, config.p)?;
    let mut entries = Vec::new();
    let first = PathTraceEntry {
        iter: 0,
        curve: cur.curve.points().to_vec(),
        action: cur.report.action,
        reg,
        cost: cur.report.action + c * reg,
        step: 0.0,
        c,
        frozen: 0,
        err: f64::INFINITY,
    };
    observer(&first);
    entries.push(first);

    let mut stalled = 0usize;
    let mut stop = StopReason::IterationCap;
    for k in 1..=config.it_max {
        if stalled >= config.n_iter && c > config.c_low {
            c *= 0.5;
            stalled = 0;
        }
        let ga = fd_gradient_action(&cur.curve, &cur.mesh, &cur.state, spec, alg, config);
        let gr = curvereg::fd_gradient_reg(&cur.curve, config.p, config.eps_fd);
        let dir = descent_direction(&ga, &gr, c);
        let frozen = dir.iter().filter(|&&v| v == 0.0).count();
        let cost = cur.report.action + c * reg;

        let mut moved = None;
        let mut any_admissible = false;
        if frozen < dir.len() {
            let base = cur.curve.coords();
            let mut step = config.step0;
            for _ in 0..=config.max_halvings {
                let cand: Vec<f64> = base.iter().zip(&dir).map(|(x, d)| x - step * d).collect();
                let cand = project_box(&Polyline::from_coords(&cand), config.delta);
                let trial = cand.validate().and_then(|_| {
                    let r = regularizer(&cand, config.p)?;
                    let s = evaluate(&cand, &cur.mesh, &cur.state, spec, alg, config.update_alg_iters, false)?;
                    Ok((r, s))
                });
                if let Ok((r, s)) = trial {
                    any_admissible = true;
                    let new_cost = s.action().value() + c * r;
                    if new_cost <= cost + config.cost_slack * cost.abs() {
                        moved = Some((cand, r, s, step));
                        break;
                    }
                }
                step *= 0.5;
            }
        } else {
            stalled += 1;
        }

        let (err, step) = match moved {
            Some((cand, r, s, step)) => {
                stalled = 0;
                let report = s.report();
                let shift = sup_distance(&cur.curve, &cand);
                let (mesh, data, state, _) = s.into_parts();
                cur = Current {
                    curve: cand,
                    mesh,
                    state,
                    report,
                    data,
                };
                reg = r;
                (shift + cur.report.err, step)
            }
            None => (cur.report.err, 0.0),
        };
        let entry = PathTraceEntry {
            iter: k,
            curve: cur.curve.points().to_vec(),
            action: cur.report.action,
            reg,
            cost: cur.report.action + c * reg,
            step,
            c,
            frozen,
            err,
        };
        observer(&entry);
        entries.push(entry);

        if frozen < dir.len() && !any_admissible {
            stop = StopReason::SelfIntersection;
            break;
        }
        if step > 0.0 && err <= config.tol {
            stop = StopReason::Tolerance;
            break;
        }
        if stalled >= config.n_iter && c <= config.c_low {
            stop = StopReason::Stalled;
            break;
        }
    }

    Ok(PathOptResult {
        curve: cur.curve,
        trace: PathTrace { entries, stop },
        mesh: cur.mesh,
        data: cur.data,
        state: cur.state,
        report: cur.report,
    })
}

pub fn optimize_path(
    initial: &Polyline,
    h: f64,
    n_t: usize,
    spec: &DataSpec,
    alg: &AlgConfig,
    config: &PathOptConfig,
) -> Result<PathOptResult> {
    optimize_path_with(initial, h, n_t, spec, alg, config, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{Bump, EndpointSpec};

    fn grad(values: &[f64]) -> FdGradient {
        FdGradient {
            values: values.to_vec(),
            valid: vec![true; values.len()],
        }
    }

    #[test]
    fn filter_examples() {
        let p = descent_direction(&grad(&[0.5, 0.1, -0.4]), &grad(&[200.0, 200.0, 100.0]), 1e-3);
        assert_eq!(p[1], 0.0);
        let s = 0.5f64.sqrt();
        assert!((p[0] - s).abs() < 1e-15 && (p[2] + s).abs() < 1e-15);
        assert_eq!(descent_direction(&grad(&[0.0; 4]), &grad(&[1.0; 4]), 1e-3), vec![0.0; 4]);
    }

    #[test]
    fn invalid_components_are_frozen() {
        let mut a = grad(&[1.0, -1.0]);
        a.valid[0] = false;
        let p = descent_direction(&a, &grad(&[0.0, 0.0]), 1.0);
        assert_eq!(p, vec![0.0, -1.0]);
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let cfg = PathOptConfig {
            step0: -1.0,
            c_low: 1.0,
            n_iter: 0,
            ..PathOptConfig::default()
        };
        match cfg.validate() {
            Err(Error::Validation(v)) => assert_eq!(v.len(), 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    fn stationary() -> DataSpec {
        let b = EndpointSpec::joint(vec![Bump::new(0.5, 0.5, 0.15)]);
        DataSpec {
            initial: b.clone(),
            terminal: b,
        }
    }

    #[test]
    fn stationary_data_has_flat_action() {
        let curve = Polyline::new(vec![Point::new(0.2, 0.3), Point::new(0.5, 0.35), Point::new(0.8, 0.3)]).unwrap();
        let alg = AlgConfig::new(0.01, 0.01);
        let mut s = FixedCurveSolver::for_curve(&curve, 0.1, 4, &stationary(), alg.clone()).unwrap();
        s.run(6000).unwrap();
        let g = fd_gradient_action(&curve, &s.mesh, &s.state, &stationary(), &alg, &PathOptConfig::default());
        assert!(g.valid.iter().all(|&v| v));
        let worst = g.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-4, "{:?}", g.values);
    }

    #[test]
    fn floor_stall_exits_with_unchanged_curve() {
        let curve = Polyline::new(vec![Point::new(0.2, 0.5), Point::new(0.45, 0.6), Point::new(0.8, 0.45)]).unwrap();
        let alg = AlgConfig {
            max_iter: 100,
            ..AlgConfig::new(0.01, 0.01)
        };
        // A huge penalty weight freezes every component; c is already at its floor.
        let cfg = PathOptConfig {
            c0: 1e9,
            c_low: 1e8,
            n_iter: 2,
            it_max: 20,
            ..PathOptConfig::default()
        };
        let res = optimize_path(&curve, 0.1, 4, &stationary(), &alg, &cfg).unwrap();
        assert_eq!(res.trace.stop, StopReason::Stalled);
        assert_eq!(res.curve, curve);
        let cs: Vec<f64> = res.trace.entries.iter().map(|e| e.c).collect();
        assert!(cs.windows(2).all(|w| w[1] <= w[0]));
        assert!(cs.iter().all(|&c| c >= cfg.c_low / 2.0));
        assert!(res.trace.entries.len() < 20);
    }
}
