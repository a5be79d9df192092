//! Run configuration, experiment modes and CSV/JSON output.
//!
//! A run is described by one JSON file (see [`RunConfig`]). Every float in
//! the CSV files is written with 17 significant digits, and nothing in the
//! output depends on wall-clock time, so identical configurations give
//! byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::femspace::LinearBackend;
use crate::geometry::{build_mesh, Polyline, SpaceTimeMesh};
use crate::oracle::{atomize_boundary_data, check_mass_conservation, w2_squared_lp, MAX_ATOMS};
use crate::pathopt::{optimize_path_with, PathOptConfig, PathTrace, StopReason};
use crate::transport::{
    curve_flux_share, make_boundary_data, AlgConfig, DataSpec, FixedCurveSolver, PrimalState,
    SolveReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solve,
    Optimize,
    SweepAlpha,
    OracleW2,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Optimize => "optimize",
            Mode::SweepAlpha => "sweep-alpha",
            Mode::OracleW2 => "oracle-w2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Values used for both `alpha1` and `alpha2`.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.1, 1.0, 10.0, 100.0]
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            alphas: default_alphas(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// The boundary data is lumped onto a `bins × bins` grid of atoms.
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { bins: default_bins() }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Spatial mesh size.
    pub h: f64,
    /// Number of time slabs.
    pub n_t: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default = "one")]
    pub r1: f64,
    #[serde(default = "one")]
    pub r2: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_linear_tol")]
    pub linear_tol: f64,
    #[serde(default = "default_projection_tol")]
    pub projection_tol: f64,
    #[serde(default)]
    pub backend: LinearBackend,
    /// Control points of the preferential path; empty for none.
    #[serde(default)]
    pub curve: Polyline,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathopt: Option<PathOptConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    /// Output directory; the command line `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Only used to generate random test instances.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    AlgConfig::new(1.0, 1.0).tol
}

fn default_max_iter() -> usize {
    AlgConfig::new(1.0, 1.0).max_iter
}

fn default_linear_tol() -> f64 {
    AlgConfig::new(1.0, 1.0).linear_tol
}

fn default_projection_tol() -> f64 {
    AlgConfig::new(1.0, 1.0).projection_tol
}

impl RunConfig {
    pub fn alg_config(&self) -> AlgConfig {
        AlgConfig {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            r1: self.r1,
            r2: self.r2,
            tol: self.tol,
            max_iter: self.max_iter,
            linear_tol: self.linear_tol,
            projection_tol: self.projection_tol,
            backend: self.backend,
        }
    }

    /// Collects every violated constraint instead of stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.h > 0.0 && self.h <= 0.5) {
            problems.push(format!("h must lie in (0, 0.5], got {}", self.h));
        }
        if self.n_t == 0 {
            problems.push("n_t must be at least 1".to_string());
        }
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
        let curve = self.curve.validate();
        if let Err(e) = &curve {
            problems.push(format!("curve: {e}"));
        }
        for (end, spec) in [("initial", &self.data.initial), ("final", &self.data.terminal)] {
            if spec.bumps.is_empty() {
                problems.push(format!("data.{end} needs at least one bump"));
            }
            for (i, b) in spec.bumps.iter().enumerate() {
                if !(b.sigma > 0.0 && b.sigma.is_finite()) {
                    problems.push(format!("data.{end}.bumps[{i}].sigma must be positive, got {}", b.sigma));
                }
                if !(b.weight > 0.0 && b.weight.is_finite()) {
                    problems.push(format!("data.{end}.bumps[{i}].weight must be positive, got {}", b.weight));
                }
                if !b.center.iter().all(|c| c.is_finite()) {
                    problems.push(format!("data.{end}.bumps[{i}].center must be finite"));
                }
            }
        }
        match self.mode {
            Mode::Optimize => match &self.pathopt {
                None => problems.push("mode optimize requires a pathopt block".to_string()),
                Some(p) => {
                    if let Err(Error::Validation(v)) = p.validate() {
                        problems.extend(v);
                    }
                    if self.curve.n_points() < 2 {
                        problems.push("mode optimize requires an initial curve".to_string());
                    }
                }
            },
            Mode::SweepAlpha => {
                let sweep = self.sweep.clone().unwrap_or_default();
                if sweep.alphas.is_empty() {
                    problems.push("sweep.alphas must not be empty".to_string());
                }
                for a in &sweep.alphas {
                    if !(*a > 0.0 && a.is_finite()) {
                        problems.push(format!("sweep.alphas must be positive, got {a}"));
                    }
                }
            }
            Mode::OracleW2 => {
                let bins = self.oracle.clone().unwrap_or_default().bins;
                if bins == 0 || bins * bins > MAX_ATOMS {
                    problems.push(format!(
                        "oracle.bins must lie in 1..={}, got {bins}",
                        (MAX_ATOMS as f64).sqrt() as usize
                    ));
                }
            }
            Mode::Solve => {}
        }
        match curve {
            // a bad curve on its own is a geometry failure, not a typo
            Err(e) if problems.len() == 1 => Err(e),
            _ if problems.is_empty() => Ok(()),
            _ => Err(Error::Validation(problems)),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }
}

/// Parses a configuration without validating it.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    let config = parse_config(&text)?;
    config.validate()?;
    Ok(config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub action: f64,
    pub curve_flux_share: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathCost {
    pub outer_iter: usize,
    pub action: f64,
    pub reg: f64,
    pub cost: f64,
    pub step: f64,
    pub c: f64,
    pub frozen: usize,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_flux_share: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub path_costs: Vec<PathCost>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub sweep: Vec<SweepRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w2_squared: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_residual: Option<f64>,
    pub config: RunConfig,
}

impl RunSummary {
    fn new(config: &RunConfig) -> Self {
        RunSummary {
            mode: config.mode,
            action: None,
            iterations: None,
            converged: None,
            err: None,
            mass_deviation: None,
            curve_flux_share: None,
            stop_reason: None,
            path_costs: Vec::new(),
            sweep: Vec::new(),
            w2_squared: None,
            certificate_residual: None,
            config: config.clone(),
        }
    }

    fn record_solution(&mut self, state: &PrimalState, mesh: &SpaceTimeMesh, report: &SolveReport) {
        self.action = Some(report.action);
        self.iterations = Some(report.iterations);
        self.converged = Some(report.converged);
        self.err = Some(report.err);
        self.mass_deviation = Some(check_mass_conservation(state, mesh).max_deviation);
        self.curve_flux_share = Some(curve_flux_share(state, mesh));
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// `bulk_fields.csv`: one row per bulk prism.
pub fn write_bulk_fields<W: Write>(mut out: W, state: &PrimalState, mesh: &SpaceTimeMesh) -> Result<()> {
    writeln!(out, "t_index,tri_id,bary_x,bary_y,rho,Jx,Jy")?;
    let nt = mesh.n_triangles();
    for s in 0..mesh.n_slabs() {
        for t in 0..nt {
            let b = mesh.barycenter(t);
            let k = s * nt + t;
            writeln!(
                out,
                "{s},{t},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                b.x, b.y, state.rho[k], state.j[k][0], state.j[k][1]
            )?;
        }
    }
    Ok(())
}

/// `curve_fields.csv`: one row per curve prism.
pub fn write_curve_fields<W: Write>(mut out: W, state: &PrimalState, mesh: &SpaceTimeMesh) -> Result<()> {
    writeln!(out, "t_index,seg_id,s_mid,mu,V,f")?;
    let ne = mesh.n_curve_edges();
    let s_mid = mesh.curve_edge_midpoint_arclengths();
    for s in 0..mesh.n_slabs() {
        for e in 0..ne {
            let k = s * ne + e;
            writeln!(
                out,
                "{s},{e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s_mid[e], state.mu[k], state.v[k], state.f[k]
            )?;
        }
    }
    Ok(())
}

/// `cost_trace.csv`: one row per ALG iteration.
pub fn write_cost_trace<W: Write>(mut out: W, report: &SolveReport) -> Result<()> {
    writeln!(out, "iter,err_omega,err_gamma,action")?;
    for e in &report.trace {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            e.iter, e.err_omega, e.err_gamma, e.action
        )?;
    }
    Ok(())
}

/// `curve_evolution.csv`: every control point of every outer iteration.
pub fn write_curve_evolution<W: Write>(mut out: W, trace: &PathTrace) -> Result<()> {
    writeln!(out, "outer_iter,point_idx,x,y")?;
    for e in &trace.entries {
        for (i, p) in e.curve.iter().enumerate() {
            writeln!(out, "{},{i},{:.16e},{:.16e}", e.iter, p.x, p.y)?;
        }
    }
    Ok(())
}

/// `sweep.csv`: one row per α.
pub fn write_sweep<W: Write>(mut out: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(out, "alpha,action,curve_flux_share")?;
    for r in rows {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", r.alpha, r.action, r.curve_flux_share)?;
    }
    Ok(())
}

/// Writes the field, trace and summary files of a fixed-curve or optimized
/// run into `dir`.
pub fn write_outputs(
    dir: &Path,
    state: &PrimalState,
    mesh: &SpaceTimeMesh,
    report: &SolveReport,
    path: Option<&PathTrace>,
    summary: &RunSummary,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = create(dir, "bulk_fields.csv")?;
    write_bulk_fields(&mut w, state, mesh)?;
    w.flush()?;
    let mut w = create(dir, "curve_fields.csv")?;
    write_curve_fields(&mut w, state, mesh)?;
    w.flush()?;
    let mut w = create(dir, "cost_trace.csv")?;
    write_cost_trace(&mut w, report)?;
    w.flush()?;
    if let Some(trace) = path {
        let mut w = create(dir, "curve_evolution.csv")?;
        write_curve_evolution(&mut w, trace)?;
        w.flush()?;
    }
    write_summary(dir, summary)
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, summary).map_err(std::io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Runs `config.mode`, writes its outputs into `out` and returns the
/// summary. `log` receives progress lines.
pub fn run(config: &RunConfig, out: &Path, mut log: impl FnMut(&str)) -> Result<RunSummary> {
    config.validate()?;
    let alg = config.alg_config();
    let mut summary = RunSummary::new(config);
    match config.mode {
        Mode::Solve => {
            let mut solver = FixedCurveSolver::for_curve(&config.curve, config.h, config.n_t, &config.data, alg)?;
            log(&format!(
                "mesh: {} triangles, {} curve edges, {} slabs",
                solver.mesh.n_triangles(),
                solver.mesh.n_curve_edges(),
                solver.mesh.n_slabs()
            ));
            let report = solver.solve()?;
            log(&format!(
                "solve: {} iterations, err {:.3e}, action {:.6e}{}",
                report.iterations,
                report.err,
                report.action,
                if report.converged { "" } else { " (not converged)" }
            ));
            summary.record_solution(&solver.state.primal, &solver.mesh, &report);
            write_outputs(out, &solver.state.primal, &solver.mesh, &report, None, &summary)?;
        }
        Mode::Optimize => {
            let popt = config.pathopt.clone().expect("validated");
            let res = optimize_path_with(&config.curve, config.h, config.n_t, &config.data, &alg, &popt, |e| {
                log(&format!(
                    "outer {}: action {:.6e}, cost {:.6e}, step {:.3e}, c {:.3e}, frozen {}",
                    e.iter, e.action, e.cost, e.step, e.c, e.frozen
                ))
            })?;
            log(&format!("optimize: stopped ({:?})", res.trace.stop));
            summary.record_solution(&res.state.primal, &res.mesh, &res.report);
            summary.stop_reason = Some(res.trace.stop);
            summary.path_costs = res
                .trace
                .entries
                .iter()
                .map(|e| PathCost {
                    outer_iter: e.iter,
                    action: e.action,
                    reg: e.reg,
                    cost: e.cost,
                    step: e.step,
                    c: e.c,
                    frozen: e.frozen,
                })
                .collect();
            write_outputs(out, &res.state.primal, &res.mesh, &res.report, Some(&res.trace), &summary)?;
        }
        Mode::SweepAlpha => {
            let sweep = config.sweep.clone().unwrap_or_default();
            let mesh = build_mesh(&config.curve, config.h, config.n_t)?;
            let data = make_boundary_data(&config.data, &mesh)?;
            for &alpha in &sweep.alphas {
                let cfg = AlgConfig {
                    alpha1: alpha,
                    alpha2: alpha,
                    ..alg.clone()
                };
                let mut solver = FixedCurveSolver::new(mesh.clone(), data.clone(), cfg)?;
                let report = solver.solve()?;
                let share = curve_flux_share(&solver.state.primal, &solver.mesh);
                log(&format!(
                    "alpha {alpha:e}: action {:.6e}, curve flux share {share:.4}, {} iterations",
                    report.action, report.iterations
                ));
                summary.sweep.push(SweepRow {
                    alpha,
                    action: report.action,
                    curve_flux_share: share,
                    iterations: report.iterations,
                    converged: report.converged,
                });
            }
            fs::create_dir_all(out)?;
            let mut w = create(out, "sweep.csv")?;
            write_sweep(&mut w, &summary.sweep)?;
            w.flush()?;
            write_summary(out, &summary)?;
        }
        Mode::OracleW2 => {
            let bins = config.oracle.clone().unwrap_or_default().bins;
            let mesh = build_mesh(&config.curve, config.h, config.n_t)?;
            let data = make_boundary_data(&config.data, &mesh)?;
            let pair = atomize_boundary_data(&mesh, &data, bins);
            let plan = w2_squared_lp(&pair)?;
            log(&format!(
                "oracle-w2: {} and {} atoms, W2^2 = {:.6e}",
                pair.initial.points.len(),
                pair.terminal.points.len(),
                plan.cost
            ));
            summary.w2_squared = Some(plan.cost);
            summary.certificate_residual = Some(plan.certificate_residual);
            write_summary(out, &summary)?;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "mode": "solve",
        "h": 0.1,
        "n_t": 4,
        "alpha1": 0.01,
        "alpha2": 0.01,
        "max_iter": 20,
        "curve": [[0.3, 0.7], [0.4, 0.3], [0.6, 0.3], [0.7, 0.7]],
        "data": {
            "initial": {"bumps": [{"center": [0.5, 0.2], "sigma": 0.1}]},
            "final": {"bumps": [{"center": [0.5, 0.8], "sigma": 0.1}]}
        }
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = parse_config(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.r1, 1.0);
        assert_eq!(cfg.curve.n_points(), 4);
        let again = parse_config(&cfg.to_json()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_json(), cfg.to_json());
    }

    #[test]
    fn parse_errors_carry_a_position() {
        let broken = EXAMPLE.replace("\"n_t\": 4,", "\"n_t\": 4,,");
        match parse_config(&broken) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 4);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
        let unknown = EXAMPLE.replace("\"max_iter\"", "\"max_iterations\"");
        assert!(matches!(parse_config(&unknown), Err(Error::Parse { .. })));
    }

    #[test]
    fn validation_names_every_field() {
        let mut cfg = parse_config(EXAMPLE).unwrap();
        cfg.alpha1 = -1.0;
        cfg.h = 0.0;
        cfg.mode = Mode::Optimize;
        match cfg.validate() {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 3, "{v:?}");
                assert!(v.iter().any(|m| m.starts_with("alpha1")));
                assert!(v.iter().any(|m| m.contains("pathopt")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oracle_bins_are_capped() {
        let mut cfg = parse_config(EXAMPLE).unwrap();
        cfg.mode = Mode::OracleW2;
        cfg.oracle = Some(OracleConfig { bins: 21 });
        assert!(cfg.validate().is_err());
        cfg.oracle = Some(OracleConfig { bins: 20 });
        cfg.validate().unwrap();
    }

    #[test]
    fn solve_writes_the_documented_files() {
        let cfg = parse_config(EXAMPLE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&cfg, dir.path(), |_| {}).unwrap();
        assert_eq!(summary.iterations, Some(20));
        assert_eq!(summary.converged, Some(false));
        let mesh = build_mesh(&cfg.curve, cfg.h, cfg.n_t).unwrap();
        let count = |name: &str| fs::read_to_string(dir.path().join(name)).unwrap().lines().count();
        assert_eq!(count("bulk_fields.csv"), 1 + cfg.n_t * mesh.n_triangles());
        assert_eq!(count("curve_fields.csv"), 1 + cfg.n_t * mesh.n_curve_edges());
        assert_eq!(count("cost_trace.csv"), 1 + 20);
        assert!(!dir.path().join("curve_evolution.csv").exists());
        let header = fs::read_to_string(dir.path().join("bulk_fields.csv")).unwrap();
        assert!(header.starts_with("t_index,tri_id,bary_x,bary_y,rho,Jx,Jy\n"));
        let back: RunSummary =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(back.config, cfg);
    }

    #[test]
    fn zero_iterations_is_not_an_error() {
        let mut cfg = parse_config(EXAMPLE).unwrap();
        cfg.max_iter = 0;
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&cfg, dir.path(), |_| {}).unwrap();
        assert_eq!(summary.iterations, Some(0));
        assert_eq!(summary.converged, Some(false));
        assert_eq!(count_lines(&dir.path().join("cost_trace.csv")), 1);
    }

    fn count_lines(p: &Path) -> usize {
        fs::read_to_string(p).unwrap().lines().count()
    }
}
