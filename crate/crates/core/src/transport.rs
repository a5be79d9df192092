//! Fixed-curve augmented Lagrangian solver.
//!
//! Each iteration solves for the potentials (Step 1), projects the
//! provisional duals onto the feasibility sets (Step 2) and takes one ascent
//! step on the multipliers `ρ, J, μ, V, f` (Step 3).

use serde::{Deserialize, Serialize};

use crate::dualproj::{self, BulkEta, CurveEta, ProjectionPath};
use crate::error::{Error, Result};
use crate::femspace::{
    assemble_matrix, assemble_rhs, project_derivatives, solve_potentials, LinearBackend,
    Potentials, SaddleSystem, TimeModeSolver,
};
use crate::geometry::{build_mesh, Point, Polyline, SpaceTimeMesh};

/// Gaussian bump `w · exp(−|x − c|² / (2σ²))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub sigma: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Bump {
    pub fn new(mx: f64, my: f64, sigma: f64) -> Self {
        Bump {
            center: [mx, my],
            sigma,
            weight: 1.0,
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        self.weight * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Where the bump sum of an endpoint puts its mass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// `μ = η|_Γ`, `ρ = η − μ̄`: the lumped nodal mass of the bump sum at the
    /// curve vertices moves onto the curve, the rest stays in the bulk.
    #[default]
    Joint,
    /// All mass in the bulk, none on the curve.
    BulkOnly,
    /// Line density equal to the trace of the bump sum, no bulk mass.
    CurveOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSpec {
    pub bumps: Vec<Bump>,
    #[serde(default)]
    pub placement: Placement,
}

impl EndpointSpec {
    pub fn joint(bumps: Vec<Bump>) -> Self {
        EndpointSpec {
            bumps,
            placement: Placement::Joint,
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.bumps.iter().map(|b| b.eval(p)).sum()
    }
}

/// Initial and final data as bump sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub initial: EndpointSpec,
    #[serde(rename = "final")]
    pub terminal: EndpointSpec,
}

/// Nodal boundary densities: `rho*` on bulk vertices, `mu*` on curve
/// vertices (per unit arclength).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub rho0: Vec<f64>,
    pub rho1: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl BoundaryData {
    pub fn bulk_mass(mesh: &SpaceTimeMesh, rho: &[f64]) -> f64 {
        mesh.lumped_vertex_areas().iter().zip(rho).map(|(w, r)| w * r).sum()
    }

    pub fn curve_mass(mesh: &SpaceTimeMesh, mu: &[f64]) -> f64 {
        mesh.lumped_curve_lengths().iter().zip(mu).map(|(w, m)| w * m).sum()
    }
}

fn endpoint_data(spec: &EndpointSpec, mesh: &SpaceTimeMesh) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut problems = Vec::new();
    for (i, b) in spec.bumps.iter().enumerate() {
        if !(b.sigma > 0.0 && b.sigma.is_finite()) {
            problems.push(format!("bump {i}: sigma must be positive"));
        }
        if !(b.weight > 0.0 && b.weight.is_finite()) {
            problems.push(format!("bump {i}: weight must be positive"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let verts = mesh.vertices();
    let mut rho: Vec<f64> = verts.iter().map(|&p| spec.eval(p)).collect();
    let mut mu: Vec<f64> = mesh
        .curve_vertices()
        .iter()
        .map(|&v| spec.eval(verts[v]))
        .collect();
    match spec.placement {
        Placement::Joint => {
            let areas = mesh.lumped_vertex_areas();
            let lengths = mesh.lumped_curve_lengths();
            for (c, &v) in mesh.curve_vertices().iter().enumerate() {
                mu[c] = areas[v] * rho[v] / lengths[c];
                rho[v] = 0.0;
            }
        }
        Placement::BulkOnly => mu.iter_mut().for_each(|m| *m = 0.0),
        Placement::CurveOnly => rho.iter_mut().for_each(|r| *r = 0.0),
    }
    let mass = BoundaryData::bulk_mass(mesh, &rho) + BoundaryData::curve_mass(mesh, &mu);
    if !(mass > 1e-300) || !mass.is_finite() {
        return Err(Error::ZeroMass);
    }
    rho.iter_mut().for_each(|r| *r /= mass);
    mu.iter_mut().for_each(|m| *m /= mass);
    Ok((rho, mu))
}

/// Samples the bump sums on the mesh and normalizes each endpoint to total
/// (bulk + curve) mass 1.
pub fn make_boundary_data(spec: &DataSpec, mesh: &SpaceTimeMesh) -> Result<BoundaryData> {
    let (rho0, mu0) = endpoint_data(&spec.initial, mesh)?;
    let (rho1, mu1) = endpoint_data(&spec.terminal, mesh)?;
    Ok(BoundaryData {
        rho0,
        rho1,
        mu0,
        mu1,
    })
}

/// Multipliers: densities and fluxes, piecewise constant on prisms.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PrimalState {
    pub rho: Vec<f64>,
    pub j: Vec<[f64; 2]>,
    pub mu: Vec<f64>,
    pub v: Vec<f64>,
    pub f: Vec<f64>,
}

impl PrimalState {
    pub fn zeros(mesh: &SpaceTimeMesh) -> Self {
        let np = mesh.n_bulk_prisms();
        let nq = mesh.n_curve_prisms();
        PrimalState {
            rho: vec![0.0; np],
            j: vec![[0.0; 2]; np],
            mu: vec![0.0; nq],
            v: vec![0.0; nq],
            f: vec![0.0; nq],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(&self.mu).chain(&self.v).chain(&self.f).all(|x| x.is_finite())
            && self.j.iter().all(|j| j[0].is_finite() && j[1].is_finite())
    }
}

/// Projected duals `ρ*, J*, μ*, V*, f*`, same layout as [`PrimalState`].
pub type DualState = PrimalState;

/// Everything the iteration carries from one step to the next.
#[derive(Clone, Debug)]
pub struct AlgState {
    pub primal: PrimalState,
    pub dual: DualState,
    pub potentials: Potentials,
}

impl AlgState {
    pub fn zeros(mesh: &SpaceTimeMesh) -> Self {
        AlgState {
            primal: PrimalState::zeros(mesh),
            dual: PrimalState::zeros(mesh),
            potentials: Potentials::zeros(
                mesh.n_vertices(),
                mesh.n_curve_vertices(),
                mesh.n_time_nodes(),
            ),
        }
    }
}

/// Parameters of the fixed-curve solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default = "one")]
    pub r1: f64,
    #[serde(default = "one")]
    pub r2: f64,
    /// Stop once `err_Ω + err_Γ` falls to this value.
    #[serde(default = "default_alg_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relative residual of the Step-1 linear solve.
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    /// KKT residual tolerance of the pointwise projections.
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
    #[serde(default)]
    pub backend: LinearBackend,
}

fn default_alg_tol() -> f64 {
    1e-5
}
fn default_max_iter() -> usize {
    2000
}
fn default_linear_tol() -> f64 {
    1e-8
}
fn default_projection_tol() -> f64 {
    dualproj::DEFAULT_TOL
}

impl AlgConfig {
    pub fn new(alpha1: f64, alpha2: f64) -> Self {
        AlgConfig {
            alpha1,
            alpha2,
            r1: 1.0,
            r2: 1.0,
            tol: default_alg_tol(),
            max_iter: default_max_iter(),
            linear_tol: default_linear_tol(),
            projection_tol: default_projection_tol(),
            backend: LinearBackend::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("r1", self.r1),
            ("r2", self.r2),
            ("tol", self.tol),
            ("linear_tol", self.linear_tol),
            ("projection_tol", self.projection_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Error metrics of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepErrors {
    pub err_omega: f64,
    pub err_gamma: f64,
}

impl StepErrors {
    pub fn total(&self) -> f64 {
        self.err_omega + self.err_gamma
    }
}

/// Step-1 linear solver bound to one assembled system.
#[derive(Debug)]
pub enum Step1Solver {
    Direct(TimeModeSolver),
    Cg { tol: f64 },
}

impl Step1Solver {
    pub fn new(system: &SaddleSystem, backend: LinearBackend, tol: f64) -> Result<Self> {
        Ok(match backend {
            LinearBackend::TimeModes => Step1Solver::Direct(TimeModeSolver::new(system, tol)?),
            LinearBackend::Cg => Step1Solver::Cg { tol },
        })
    }

    pub fn solve(&self, system: &SaddleSystem, rhs: &[f64]) -> Result<Potentials> {
        Ok(match self {
            Step1Solver::Direct(s) => s.solve(system, rhs)?.potentials,
            Step1Solver::Cg { tol } => solve_potentials(system, rhs, *tol, None)?.potentials,
        })
    }
}

/// One augmented Lagrangian iteration, updating `state` in place.
pub fn alg_step(
    mesh: &SpaceTimeMesh,
    system: &SaddleSystem,
    solver: &Step1Solver,
    data: &BoundaryData,
    state: &mut AlgState,
    config: &AlgConfig,
) -> Result<StepErrors> {
    let (r1, r2) = (config.r1, config.r2);
    let rhs = assemble_rhs(mesh, &state.primal, &state.dual, data, r1, r2)?;
    let potentials = solver.solve(system, &rhs)?;
    if !potentials.is_finite() {
        return Err(Error::SolverStagnation {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    let d = project_derivatives(mesh, &potentials);
    state.potentials = potentials;

    let primal = &mut state.primal;
    let dual = &mut state.dual;
    let mut err_omega: f64 = 0.0;
    for p in 0..primal.rho.len() {
        let eta = BulkEta {
            eta_rho: d.dt_phi[p] + primal.rho[p] / r1,
            eta_j: [
                d.grad_phi[p][0] + primal.j[p][0] / r1,
                d.grad_phi[p][1] + primal.j[p][1] / r1,
            ],
        };
        let proj = dualproj::project_bulk(&eta, config.projection_tol);
        dual.rho[p] = proj.rho;
        dual.j[p] = proj.j;
        err_omega = err_omega
            .max((d.dt_phi[p] - proj.rho).abs())
            .max((d.grad_phi[p][0] - proj.j[0]).abs())
            .max((d.grad_phi[p][1] - proj.j[1]).abs());
        if proj.path == ProjectionPath::Feasible {
            primal.rho[p] = 0.0;
            primal.j[p] = [0.0; 2];
        } else {
            let rho = r1 * (eta.eta_rho - proj.rho);
            if rho > 0.0 {
                primal.rho[p] = rho;
                primal.j[p] = [
                    r1 * (eta.eta_j[0] - proj.j[0]),
                    r1 * (eta.eta_j[1] - proj.j[1]),
                ];
            } else {
                primal.rho[p] = 0.0;
                primal.j[p] = [0.0; 2];
            }
        }
    }

    let mut err_gamma: f64 = 0.0;
    for q in 0..primal.mu.len() {
        let eta = CurveEta {
            eta_mu: d.dt_psi[q] + primal.mu[q] / r2,
            eta_v: d.ds_psi[q] + primal.v[q] / r2,
            eta_f: d.jump[q] + primal.f[q] / r2,
        };
        let proj = dualproj::project_curve(&eta, config.alpha1, config.alpha2, config.projection_tol);
        dual.mu[q] = proj.mu;
        dual.v[q] = proj.v;
        dual.f[q] = proj.f;
        err_gamma = err_gamma
            .max((d.dt_psi[q] - proj.mu).abs())
            .max((d.ds_psi[q] - proj.v).abs())
            .max((d.jump[q] - proj.f).abs());
        let mu = r2 * (eta.eta_mu - proj.mu);
        if proj.path != ProjectionPath::Feasible && mu > 0.0 {
            primal.mu[q] = mu;
            primal.v[q] = r2 * (eta.eta_v - proj.v);
            primal.f[q] = r2 * (eta.eta_f - proj.f);
        } else {
            primal.mu[q] = 0.0;
            primal.v[q] = 0.0;
            primal.f[q] = 0.0;
        }
    }
    Ok(StepErrors {
        err_omega,
        err_gamma,
    })
}

/// Discrete action, possibly infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ActionValue {
    pub bulk: f64,
    pub curve: f64,
    /// Set when some cell has vanishing (or invalid) density but nonzero flux.
    pub infinite: bool,
}

impl ActionValue {
    pub fn value(&self) -> f64 {
        if self.infinite {
            f64::INFINITY
        } else {
            self.bulk + self.curve
        }
    }
}

/// `Ψ(u, v) = |v|²/(2u)` with `Ψ(0, 0) = 0`; `None` encodes `+∞`.
fn psi(u: f64, v2: f64) -> Option<f64> {
    if u > 0.0 {
        Some(0.5 * v2 / u)
    } else if u == 0.0 && v2 == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// `Σ Ψ(ρ, J)|P| + α₁ Σ Ψ(μ, V)|Q| + α₂ Σ Ψ(μ, f)|Q|` over bulk prisms `P`
/// and curve prisms `Q`.
pub fn discrete_action(
    state: &PrimalState,
    mesh: &SpaceTimeMesh,
    alpha1: f64,
    alpha2: f64,
) -> ActionValue {
    let dt = mesh.dt();
    let nt = mesh.n_triangles();
    let ne = mesh.n_curve_edges();
    let mut out = ActionValue {
        bulk: 0.0,
        curve: 0.0,
        infinite: false,
    };
    for (p, (&rho, j)) in state.rho.iter().zip(&state.j).enumerate() {
        match psi(rho, j[0] * j[0] + j[1] * j[1]) {
            Some(v) => out.bulk += v * mesh.area(p % nt) * dt,
            None => out.infinite = true,
        }
    }
    if ne > 0 {
        for q in 0..state.mu.len() {
            let len = mesh.curve_edges()[q % ne].length;
            let mu = state.mu[q];
            match (psi(mu, state.v[q] * state.v[q]), psi(mu, state.f[q] * state.f[q])) {
                (Some(a), Some(b)) => out.curve += (alpha1 * a + alpha2 * b) * len * dt,
                _ => out.infinite = true,
            }
        }
    }
    out
}

/// Concave mobility `m` on the closed interval `[lower, upper]`.
pub struct Mobility {
    func: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    lower: f64,
    upper: f64,
}

impl std::fmt::Debug for Mobility {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mobility[{}, {}]", self.lower, self.upper)
    }
}

impl Mobility {
    pub fn new(func: impl Fn(f64) -> f64 + Send + Sync + 'static, lower: f64, upper: f64) -> Self {
        Mobility {
            func: Box::new(func),
            lower,
            upper,
        }
    }

    /// `m(z) = z`.
    pub fn linear() -> Self {
        Mobility::new(|z| z, 0.0, f64::INFINITY)
    }

    /// `m(z) = z(1 − z)`.
    pub fn saturating() -> Self {
        Mobility::new(|z| z * (1.0 - z), 0.0, 1.0)
    }

    /// `|w|²/m(z)`, with `0` for zero flux at `m = 0`; `None` is `+∞`.
    fn integrand(&self, z: f64, w2: f64) -> Option<f64> {
        if !(z >= self.lower && z <= self.upper) {
            return None;
        }
        let m = (self.func)(z);
        if m > 0.0 {
            Some(w2 / m)
        } else if w2 == 0.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

/// Action with general mobilities, `∫|J|²/m_Ω(ρ) + α₁∫|V|²/m_Γ(μ) +
/// α₂∫|f|²/m_Γ(μ)`. With linear mobilities this is twice [`discrete_action`].
pub fn evaluate_mobility_action(
    state: &PrimalState,
    mesh: &SpaceTimeMesh,
    mobility_omega: &Mobility,
    mobility_gamma: &Mobility,
    alpha1: f64,
    alpha2: f64,
) -> ActionValue {
    let dt = mesh.dt();
    let nt = mesh.n_triangles();
    let ne = mesh.n_curve_edges();
    let mut out = ActionValue {
        bulk: 0.0,
        curve: 0.0,
        infinite: false,
    };
    for (p, (&rho, j)) in state.rho.iter().zip(&state.j).enumerate() {
        match mobility_omega.integrand(rho, j[0] * j[0] + j[1] * j[1]) {
            Some(v) => out.bulk += v * mesh.area(p % nt) * dt,
            None => out.infinite = true,
        }
    }
    if ne > 0 {
        for q in 0..state.mu.len() {
            let len = mesh.curve_edges()[q % ne].length;
            let mu = state.mu[q];
            let a = mobility_gamma.integrand(mu, state.v[q] * state.v[q]);
            let b = mobility_gamma.integrand(mu, state.f[q] * state.f[q]);
            match (a, b) {
                (Some(a), Some(b)) => out.curve += (alpha1 * a + alpha2 * b) * len * dt,
                _ => out.infinite = true,
            }
        }
    }
    out
}

/// Fraction of the total momentum carried by the curve,
/// `∫∫|V| / (∫∫|V| + ∫∫|J|)`.
pub fn curve_flux_share(state: &PrimalState, mesh: &SpaceTimeMesh) -> f64 {
    let (curve, bulk) = flux_integrals(state, mesh, None);
    if curve + bulk > 0.0 {
        curve / (curve + bulk)
    } else {
        0.0
    }
}

/// `(∫∫|V|, ∫∫|J|)`, the latter optionally restricted to prisms whose
/// triangle barycenter lies within `tube` of the curve.
pub fn flux_integrals(state: &PrimalState, mesh: &SpaceTimeMesh, tube: Option<f64>) -> (f64, f64) {
    let dt = mesh.dt();
    let nt = mesh.n_triangles();
    let ne = mesh.n_curve_edges();
    let inside: Vec<bool> = (0..nt)
        .map(|t| match tube {
            None => true,
            Some(w) => mesh.curve().distance_to(mesh.barycenter(t)) <= w,
        })
        .collect();
    let bulk: f64 = state
        .j
        .iter()
        .enumerate()
        .filter(|(p, _)| inside[p % nt])
        .map(|(p, j)| j[0].hypot(j[1]) * mesh.area(p % nt) * dt)
        .sum();
    let curve: f64 = if ne == 0 {
        0.0
    } else {
        state
            .v
            .iter()
            .enumerate()
            .map(|(q, v)| v.abs() * mesh.curve_edges()[q % ne].length * dt)
            .sum()
    };
    (curve, bulk)
}

/// One trace record of the fixed-curve solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub err_omega: f64,
    pub err_gamma: f64,
    pub action: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub err: f64,
    pub action: f64,
    pub trace: Vec<TraceEntry>,
}

/// Fixed-curve solver with its mesh, assembled operator and state.
#[derive(Debug)]
pub struct FixedCurveSolver {
    pub mesh: SpaceTimeMesh,
    pub data: BoundaryData,
    pub config: AlgConfig,
    pub state: AlgState,
    system: SaddleSystem,
    solver: Step1Solver,
    iterations: usize,
    trace: Vec<TraceEntry>,
    last_err: f64,
}

impl FixedCurveSolver {
    pub fn new(mesh: SpaceTimeMesh, data: BoundaryData, config: AlgConfig) -> Result<Self> {
        config.validate()?;
        let system = assemble_matrix(&mesh, config.r1, config.r2)?;
        let solver = Step1Solver::new(&system, config.backend, config.linear_tol)?;
        let state = AlgState::zeros(&mesh);
        Ok(FixedCurveSolver {
            mesh,
            data,
            config,
            state,
            system,
            solver,
            iterations: 0,
            trace: Vec::new(),
            last_err: f64::INFINITY,
        })
    }

    /// Builds the mesh and boundary data for `curve`.
    pub fn for_curve(curve: &Polyline, h: f64, n_t: usize, data: &DataSpec, config: AlgConfig) -> Result<Self> {
        let mesh = build_mesh(curve, h, n_t)?;
        let data = make_boundary_data(data, &mesh)?;
        FixedCurveSolver::new(mesh, data, config)
    }

    /// Replaces the state, e.g. with one transferred from another mesh.
    pub fn with_state(mut self, state: AlgState) -> Result<Self> {
        if state.primal.rho.len() != self.mesh.n_bulk_prisms()
            || state.primal.mu.len() != self.mesh.n_curve_prisms()
        {
            return Err(Error::DimensionMismatch {
                what: "warm-start state",
                expected: self.mesh.n_bulk_prisms(),
                found: state.primal.rho.len(),
            });
        }
        self.state = state;
        Ok(self)
    }

    pub fn system(&self) -> &SaddleSystem {
        &self.system
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn last_error(&self) -> f64 {
        self.last_err
    }

    pub fn action(&self) -> ActionValue {
        discrete_action(&self.state.primal, &self.mesh, self.config.alpha1, self.config.alpha2)
    }

    /// Runs one iteration and records it in the trace.
    pub fn step(&mut self) -> Result<StepErrors> {
        let errs = alg_step(
            &self.mesh,
            &self.system,
            &self.solver,
            &self.data,
            &mut self.state,
            &self.config,
        )?;
        self.iterations += 1;
        self.last_err = errs.total();
        self.trace.push(TraceEntry {
            iter: self.iterations,
            err_omega: errs.err_omega,
            err_gamma: errs.err_gamma,
            action: self.action().value(),
        });
        Ok(errs)
    }

    /// Iterates until `err ≤ tol` or `max_iter` further iterations.
    pub fn run(&mut self, max_iter: usize) -> Result<SolveReport> {
        let mut done = 0;
        while done < max_iter && !(self.last_err <= self.config.tol) {
            self.step()?;
            done += 1;
        }
        Ok(self.report())
    }

    pub fn solve(&mut self) -> Result<SolveReport> {
        self.run(self.config.max_iter)
    }

    pub fn report(&self) -> SolveReport {
        SolveReport {
            iterations: self.iterations,
            converged: self.last_err <= self.config.tol,
            err: self.last_err,
            action: self.action().value(),
            trace: self.trace.clone(),
        }
    }

    pub fn into_parts(self) -> (SpaceTimeMesh, BoundaryData, AlgState, SolveReport) {
        let report = self.report();
        (self.mesh, self.data, self.state, report)
    }
}

/// Result of [`solve_fixed_curve`].
#[derive(Debug)]
pub struct FixedCurveSolution {
    pub mesh: SpaceTimeMesh,
    pub data: BoundaryData,
    pub state: AlgState,
    pub report: SolveReport,
}

impl FixedCurveSolution {
    pub fn primal(&self) -> &PrimalState {
        &self.state.primal
    }
}

/// Meshes `curve`, samples the data and runs the solver from zero.
pub fn solve_fixed_curve(
    curve: &Polyline,
    h: f64,
    n_t: usize,
    data: &DataSpec,
    config: &AlgConfig,
) -> Result<FixedCurveSolution> {
    let mut solver = FixedCurveSolver::for_curve(curve, h, n_t, data, config.clone())?;
    solver.solve()?;
    let (mesh, data, state, report) = solver.into_parts();
    Ok(FixedCurveSolution {
        mesh,
        data,
        state,
        report,
    })
}

fn nearest(points: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, q) in points.iter().enumerate() {
        let d = (*q - p).norm_squared();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Moves a state to another mesh with the same number of slabs by nearest
/// barycenter (bulk prisms), nearest midpoint (curve prisms) and nearest
/// vertex (potentials).
pub fn transfer_state(from: &SpaceTimeMesh, state: &AlgState, to: &SpaceTimeMesh) -> Result<AlgState> {
    if from.n_slabs() != to.n_slabs() {
        return Err(Error::DimensionMismatch {
            what: "time slabs",
            expected: to.n_slabs(),
            found: from.n_slabs(),
        });
    }
    let from_bary: Vec<Point> = (0..from.n_triangles()).map(|t| from.barycenter(t)).collect();
    let tri_map: Vec<usize> = (0..to.n_triangles())
        .map(|t| nearest(&from_bary, to.barycenter(t)))
        .collect();
    let from_mid: Vec<Point> = (0..from.n_curve_edges()).map(|e| from.curve_edge_midpoint(e)).collect();
    let edge_map: Vec<Option<usize>> = (0..to.n_curve_edges())
        .map(|e| (!from_mid.is_empty()).then(|| nearest(&from_mid, to.curve_edge_midpoint(e))))
        .collect();
    let vert_map: Vec<usize> = to.vertices().iter().map(|&p| nearest(from.vertices(), p)).collect();
    let from_cv: Vec<Point> = from.curve_vertices().iter().map(|&v| from.vertices()[v]).collect();
    let cv_map: Vec<Option<usize>> = to
        .curve_vertices()
        .iter()
        .map(|&v| (!from_cv.is_empty()).then(|| nearest(&from_cv, to.vertices()[v])))
        .collect();

    let (fnt, fne) = (from.n_triangles(), from.n_curve_edges());
    let (tnt, tne) = (to.n_triangles(), to.n_curve_edges());
    let move_fields = |src: &PrimalState| {
        let mut out = PrimalState::zeros(to);
        for s in 0..to.n_slabs() {
            for t in 0..tnt {
                let p = s * fnt + tri_map[t];
                out.rho[s * tnt + t] = src.rho[p];
                out.j[s * tnt + t] = src.j[p];
            }
            for e in 0..tne {
                if let Some(k) = edge_map[e] {
                    let q = s * fne + k;
                    out.mu[s * tne + e] = src.mu[q];
                    out.v[s * tne + e] = src.v[q];
                    out.f[s * tne + e] = src.f[q];
                }
            }
        }
        out
    };
    let mut pot = Vec::with_capacity((to.n_vertices() + to.n_curve_vertices()) * to.n_time_nodes());
    for j in 0..to.n_time_nodes() {
        let b = state.potentials.bulk(j);
        let c = state.potentials.curve(j);
        pot.extend(vert_map.iter().map(|&v| b[v]));
        pot.extend(cv_map.iter().map(|m| m.map_or(0.0, |k| c[k])));
    }
    let potentials = Potentials::with_shape(to.n_vertices(), to.n_curve_vertices(), to.n_time_nodes(), pot);
    Ok(AlgState {
        primal: move_fields(&state.primal),
        dual: move_fields(&state.dual),
        potentials,
    })
}
