//! Space-time finite elements for the potential update.
//!
//! Potentials are continuous and piecewise linear in time and space. Bulk
//! potentials `φ` live on the mesh vertices and curve potentials `φ¹ᵈ` on the
//! curve vertices; at time node `j` the stacked coefficient vector holds
//! `[φ(t_j, ·), φ¹ᵈ(t_j, ·)]`, so the global index is `j * n_space + s`.
//!
//! The Step-1 operator separates into time and space factors,
//!
//! ```text
//! A = K_t ⊗ S_K + M_t ⊗ S_M
//! S_K = diag((r₁/r₂) M_x, M_c)
//! S_M = [(r₁/r₂) K_x + RᵀM_cR, −RᵀM_c; −M_cR, K_c + M_c]
//! ```
//!
//! where `K_t`, `M_t` are the 1-D stiffness and mass matrices of the time
//! grid and `R` restricts bulk values to the curve vertices.

use nalgebra::{DMatrix, SymmetricEigen};
use sprs::{CsMat, FillInReduction};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::geometry::SpaceTimeMesh;
use crate::transport::{BoundaryData, DualState, PrimalState};

/// Symmetric sparse matrix pair sharing one sparsity pattern.
#[derive(Clone, Debug)]
struct PairedCsr {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    k: Vec<f64>,
    m: Vec<f64>,
}

impl PairedCsr {
    fn from_triplets(n: usize, mut entries: Vec<(usize, usize, f64, f64)>) -> Self {
        entries.sort_unstable_by_key(|&(i, j, _, _)| (i, j));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut k = Vec::with_capacity(entries.len());
        let mut m = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, kv, mv) in entries {
            if last == Some((i, j)) {
                *k.last_mut().unwrap() += kv;
                *m.last_mut().unwrap() += mv;
            } else {
                indices.push(j);
                k.push(kv);
                m.push(mv);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        PairedCsr {
            n,
            indptr,
            indices,
            k,
            m,
        }
    }

    /// `yk = K x`, `ym = M x`.
    fn apply_both(&self, x: &[f64], yk: &mut [f64], ym: &mut [f64]) {
        for i in 0..self.n {
            let (mut sk, mut sm) = (0.0, 0.0);
            for p in self.indptr[i]..self.indptr[i + 1] {
                let xj = x[self.indices[p]];
                sk += self.k[p] * xj;
                sm += self.m[p] * xj;
            }
            yk[i] = sk;
            ym[i] = sm;
        }
    }

    fn diagonal(&self) -> (Vec<f64>, Vec<f64>) {
        let mut dk = vec![0.0; self.n];
        let mut dm = vec![0.0; self.n];
        for i in 0..self.n {
            for p in self.indptr[i]..self.indptr[i + 1] {
                if self.indices[p] == i {
                    dk[i] = self.k[p];
                    dm[i] = self.m[p];
                }
            }
        }
        (dk, dm)
    }

    /// `lambda K + M` as a CSR matrix; with `pin`, that row and column are
    /// replaced by the identity.
    fn combined(&self, lambda: f64, pin: Option<usize>) -> CsMat<f64> {
        let mut data: Vec<f64> = self
            .k
            .iter()
            .zip(&self.m)
            .map(|(k, m)| lambda * k + m)
            .collect();
        if let Some(pin) = pin {
            for i in 0..self.n {
                for p in self.indptr[i]..self.indptr[i + 1] {
                    let j = self.indices[p];
                    if i == pin || j == pin {
                        data[p] = if i == j { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        CsMat::new(
            (self.n, self.n),
            self.indptr.clone(),
            self.indices.clone(),
            data,
        )
    }
}

/// Tridiagonal time matrices of the uniform grid with `n_nodes` nodes.
#[derive(Clone, Debug)]
struct TimeMatrices {
    kt_diag: Vec<f64>,
    kt_off: f64,
    mt_diag: Vec<f64>,
    mt_off: f64,
}

impl TimeMatrices {
    fn new(n_slabs: usize) -> Self {
        let dt = 1.0 / n_slabs as f64;
        let n = n_slabs + 1;
        let interior = |j: usize| j > 0 && j + 1 < n;
        TimeMatrices {
            kt_diag: (0..n)
                .map(|j| if interior(j) { 2.0 } else { 1.0 } / dt)
                .collect(),
            kt_off: -1.0 / dt,
            mt_diag: (0..n)
                .map(|j| if interior(j) { 4.0 } else { 2.0 } * dt / 6.0)
                .collect(),
            mt_off: dt / 6.0,
        }
    }

    fn dense(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.kt_diag.len();
        let kt = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => self.kt_diag[i],
            1 => self.kt_off,
            _ => 0.0,
        });
        let mt = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => self.mt_diag[i],
            1 => self.mt_off,
            _ => 0.0,
        });
        (kt, mt)
    }
}

/// The Step-1 operator on stacked `(φ, φ¹ᵈ)` coefficients.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    n_bulk: usize,
    n_curve: usize,
    n_nodes: usize,
    r1: f64,
    r2: f64,
    space: PairedCsr,
    time: TimeMatrices,
}

/// Assembles the Step-1 operator for penalty weights `r1`, `r2`.
pub fn assemble_matrix(mesh: &SpaceTimeMesh, r1: f64, r2: f64) -> Result<SaddleSystem> {
    if !(r1 > 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()) {
        return Err(Error::Validation(vec![format!(
            "penalty weights must be positive, got r1 = {r1}, r2 = {r2}"
        )]));
    }
    let nb = mesh.n_vertices();
    let nc = mesh.n_curve_vertices();
    let ratio = r1 / r2;
    let mut entries: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(9 * mesh.n_triangles() + 16 * nc);

    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        let grads = mesh.basis_gradients(t);
        for a in 0..3 {
            for b in 0..3 {
                let mass = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                let stiff = area * grads[a].dot(grads[b]);
                entries.push((tri[a], tri[b], ratio * mass, ratio * stiff));
            }
        }
    }
    for (k, e) in mesh.curve_edges().iter().enumerate() {
        let len = e.length;
        let curve = [nb + k, nb + k + 1];
        let bulk = [e.v0, e.v1];
        for a in 0..2 {
            for b in 0..2 {
                let mass = len / 6.0 * if a == b { 2.0 } else { 1.0 };
                let stiff = if a == b { 1.0 } else { -1.0 } / len;
                entries.push((curve[a], curve[b], mass, stiff + mass));
                entries.push((bulk[a], bulk[b], 0.0, mass));
                entries.push((bulk[a], curve[b], 0.0, -mass));
                entries.push((curve[a], bulk[b], 0.0, -mass));
            }
        }
    }

    Ok(SaddleSystem {
        n_bulk: nb,
        n_curve: nc,
        n_nodes: mesh.n_time_nodes(),
        r1,
        r2,
        space: PairedCsr::from_triplets(nb + nc, entries),
        time: TimeMatrices::new(mesh.n_slabs()),
    })
}

impl SaddleSystem {
    pub fn n_bulk(&self) -> usize {
        self.n_bulk
    }

    pub fn n_curve(&self) -> usize {
        self.n_curve
    }

    pub fn n_space(&self) -> usize {
        self.n_bulk + self.n_curve
    }

    pub fn n_time_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn ndof(&self) -> usize {
        self.n_space() * self.n_nodes
    }

    pub fn r1(&self) -> f64 {
        self.r1
    }

    pub fn r2(&self) -> f64 {
        self.r2
    }

    /// Joint constant vector spanning the kernel.
    pub fn kernel_mode(&self) -> Vec<f64> {
        vec![1.0; self.ndof()]
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let ns = self.n_space();
        let nn = self.n_nodes;
        assert_eq!(x.len(), ns * nn);
        assert_eq!(y.len(), ns * nn);
        let mut kx = vec![0.0; ns * nn];
        let mut mx = vec![0.0; ns * nn];
        for j in 0..nn {
            let r = j * ns..(j + 1) * ns;
            self.space
                .apply_both(&x[r.clone()], &mut kx[r.clone()], &mut mx[r]);
        }
        let tm = &self.time;
        for j in 0..nn {
            let yj = &mut y[j * ns..(j + 1) * ns];
            for s in 0..ns {
                yj[s] = tm.kt_diag[j] * kx[j * ns + s] + tm.mt_diag[j] * mx[j * ns + s];
            }
            for i in [j.wrapping_sub(1), j + 1] {
                if i < nn {
                    for s in 0..ns {
                        yj[s] += tm.kt_off * kx[i * ns + s] + tm.mt_off * mx[i * ns + s];
                    }
                }
            }
        }
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; x.len()];
        self.apply(x, &mut y);
        dot(x, &y)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let (dk, dm) = self.space.diagonal();
        let ns = self.n_space();
        let mut d = Vec::with_capacity(self.ndof());
        for j in 0..self.n_nodes {
            for s in 0..ns {
                d.push(self.time.kt_diag[j] * dk[s] + self.time.mt_diag[j] * dm[s]);
            }
        }
        d
    }

    /// The assembled matrix as an explicit sparse matrix (for inspection).
    pub fn to_csr(&self) -> CsMat<f64> {
        let ns = self.n_space();
        let mut tri = sprs::TriMat::new((self.ndof(), self.ndof()));
        let sp = &self.space;
        for i in 0..ns {
            for p in sp.indptr[i]..sp.indptr[i + 1] {
                let j = sp.indices[p];
                for a in 0..self.n_nodes {
                    for b in a.saturating_sub(1)..(a + 2).min(self.n_nodes) {
                        let (kt, mt) = if a == b {
                            (self.time.kt_diag[a], self.time.mt_diag[a])
                        } else {
                            (self.time.kt_off, self.time.mt_off)
                        };
                        let v = kt * sp.k[p] + mt * sp.m[p];
                        if v != 0.0 {
                            tri.add_triplet(a * ns + i, b * ns + j, v);
                        }
                    }
                }
            }
        }
        tri.to_csr()
    }

    /// Removes the joint-constant component.
    pub fn project_out_kernel(&self, v: &mut [f64]) {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= mean);
    }
}

/// Nodal potentials `(φ, φ¹ᵈ)` in the stacked layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials {
    n_bulk: usize,
    n_curve: usize,
    n_nodes: usize,
    values: Vec<f64>,
}

impl Potentials {
    pub fn zeros(n_bulk: usize, n_curve: usize, n_nodes: usize) -> Self {
        Potentials {
            n_bulk,
            n_curve,
            n_nodes,
            values: vec![0.0; (n_bulk + n_curve) * n_nodes],
        }
    }

    pub fn from_values(system: &SaddleSystem, values: Vec<f64>) -> Result<Self> {
        if values.len() != system.ndof() {
            return Err(Error::DimensionMismatch {
                what: "potential vector",
                expected: system.ndof(),
                found: values.len(),
            });
        }
        Ok(Potentials {
            n_bulk: system.n_bulk,
            n_curve: system.n_curve,
            n_nodes: system.n_nodes,
            values,
        })
    }

    /// # Panics
    /// If `values` does not hold `(n_bulk + n_curve) · n_nodes` entries.
    pub fn with_shape(n_bulk: usize, n_curve: usize, n_nodes: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (n_bulk + n_curve) * n_nodes);
        Potentials {
            n_bulk,
            n_curve,
            n_nodes,
            values,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_time_nodes(&self) -> usize {
        self.n_nodes
    }

    fn n_space(&self) -> usize {
        self.n_bulk + self.n_curve
    }

    /// Bulk values `φ(t_j, ·)`.
    pub fn bulk(&self, j: usize) -> &[f64] {
        let start = j * self.n_space();
        &self.values[start..start + self.n_bulk]
    }

    /// Curve values `φ¹ᵈ(t_j, ·)`.
    pub fn curve(&self, j: usize) -> &[f64] {
        let start = j * self.n_space() + self.n_bulk;
        &self.values[start..start + self.n_curve]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// P0 projections of the potential derivatives, one value per prism
/// (slab-major).
#[derive(Clone, Debug, Default)]
pub struct DerivativeFields {
    /// `∂_t φ` on bulk prisms.
    pub dt_phi: Vec<f64>,
    /// `∇φ` on bulk prisms.
    pub grad_phi: Vec<[f64; 2]>,
    /// `∂_t φ¹ᵈ` on curve prisms.
    pub dt_psi: Vec<f64>,
    /// `∂_s φ¹ᵈ` on curve prisms.
    pub ds_psi: Vec<f64>,
    /// `φ¹ᵈ − φ∘γ` on curve prisms.
    pub jump: Vec<f64>,
}

/// Averages of the potential derivatives over each prism, i.e. their
/// L²-projections onto piecewise constants.
pub fn project_derivatives(mesh: &SpaceTimeMesh, pot: &Potentials) -> DerivativeFields {
    let nt = mesh.n_triangles();
    let ne = mesh.n_curve_edges();
    let dt = mesh.dt();
    let mut out = DerivativeFields {
        dt_phi: Vec::with_capacity(nt * mesh.n_slabs()),
        grad_phi: Vec::with_capacity(nt * mesh.n_slabs()),
        dt_psi: Vec::with_capacity(ne * mesh.n_slabs()),
        ds_psi: Vec::with_capacity(ne * mesh.n_slabs()),
        jump: Vec::with_capacity(ne * mesh.n_slabs()),
    };
    for s in 0..mesh.n_slabs() {
        let (b0, b1) = (pot.bulk(s), pot.bulk(s + 1));
        let (c0, c1) = (pot.curve(s), pot.curve(s + 1));
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let mean0 = (b0[tri[0]] + b0[tri[1]] + b0[tri[2]]) / 3.0;
            let mean1 = (b1[tri[0]] + b1[tri[1]] + b1[tri[2]]) / 3.0;
            out.dt_phi.push((mean1 - mean0) / dt);
            let g = mesh.basis_gradients(t);
            let mut grad = [0.0; 2];
            for k in 0..3 {
                let avg = 0.5 * (b0[tri[k]] + b1[tri[k]]);
                grad[0] += avg * g[k].x;
                grad[1] += avg * g[k].y;
            }
            out.grad_phi.push(grad);
        }
        for (k, e) in mesh.curve_edges().iter().enumerate() {
            let m0 = 0.5 * (c0[k] + c0[k + 1]);
            let m1 = 0.5 * (c1[k] + c1[k + 1]);
            out.dt_psi.push((m1 - m0) / dt);
            let d0 = c0[k + 1] - c0[k];
            let d1 = c1[k + 1] - c1[k];
            out.ds_psi.push(0.5 * (d0 + d1) / e.length);
            let jump = c0[k] + c0[k + 1] + c1[k] + c1[k + 1]
                - b0[e.v0]
                - b0[e.v1]
                - b1[e.v0]
                - b1[e.v1];
            out.jump.push(0.25 * jump);
        }
    }
    out
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Linear form of Step 1 for the current multipliers and projected duals.
pub fn assemble_rhs(
    mesh: &SpaceTimeMesh,
    state: &PrimalState,
    duals: &DualState,
    data: &BoundaryData,
    r1: f64,
    r2: f64,
) -> Result<Vec<f64>> {
    let nb = mesh.n_vertices();
    let nc = mesh.n_curve_vertices();
    let np = mesh.n_bulk_prisms();
    let nq = mesh.n_curve_prisms();
    check_len("rho", np, state.rho.len())?;
    check_len("J", np, state.j.len())?;
    check_len("mu", nq, state.mu.len())?;
    check_len("V", nq, state.v.len())?;
    check_len("f", nq, state.f.len())?;
    check_len("rho*", np, duals.rho.len())?;
    check_len("J*", np, duals.j.len())?;
    check_len("mu*", nq, duals.mu.len())?;
    check_len("V*", nq, duals.v.len())?;
    check_len("f*", nq, duals.f.len())?;
    check_len("rho0", nb, data.rho0.len())?;
    check_len("rho1", nb, data.rho1.len())?;
    check_len("mu0", nc, data.mu0.len())?;
    check_len("mu1", nc, data.mu1.len())?;

    let ns = nb + nc;
    let n_slabs = mesh.n_slabs();
    let dt = mesh.dt();
    let ratio = r1 / r2;
    let mut rhs = vec![0.0; ns * (n_slabs + 1)];

    // Boundary terms (1/r₂)(⟨ψ₁, ρ₁⟩ − ⟨ψ₀, ρ₀⟩) with consistent mass matrices.
    let last = n_slabs * ns;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.area(t);
        for a in 0..3 {
            for b in 0..3 {
                let m = area / 12.0 * if a == b { 2.0 } else { 1.0 } / r2;
                rhs[last + tri[a]] += m * data.rho1[tri[b]];
                rhs[tri[a]] -= m * data.rho0[tri[b]];
            }
        }
    }
    for (k, e) in mesh.curve_edges().iter().enumerate() {
        for a in 0..2 {
            for b in 0..2 {
                let m = e.length / 6.0 * if a == b { 2.0 } else { 1.0 } / r2;
                rhs[last + nb + k + a] += m * data.mu1[k + b];
                rhs[nb + k + a] -= m * data.mu0[k + b];
            }
        }
    }

    let nt = mesh.n_triangles();
    let ne = mesh.n_curve_edges();
    for s in 0..n_slabs {
        let lo = s * ns;
        let hi = (s + 1) * ns;
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let p = s * nt + t;
            let area = mesh.area(t);
            let gt = ratio * duals.rho[p] - state.rho[p] / r2;
            let gx = [
                ratio * duals.j[p][0] - state.j[p][0] / r2,
                ratio * duals.j[p][1] - state.j[p][1] / r2,
            ];
            let grads = mesh.basis_gradients(t);
            for a in 0..3 {
                let v = tri[a];
                rhs[hi + v] += gt * area / 3.0;
                rhs[lo + v] -= gt * area / 3.0;
                let gx_term = 0.5 * dt * area * (grads[a].x * gx[0] + grads[a].y * gx[1]);
                rhs[hi + v] += gx_term;
                rhs[lo + v] += gx_term;
            }
        }
        for (k, e) in mesh.curve_edges().iter().enumerate() {
            let q = s * ne + k;
            let len = e.length;
            let gf = state.f[q] / r2 - duals.f[q];
            let corner = gf * 0.5 * dt * 0.5 * len;
            for base in [lo, hi] {
                rhs[base + e.v0] += corner;
                rhs[base + e.v1] += corner;
                rhs[base + nb + k] -= corner;
                rhs[base + nb + k + 1] -= corner;
            }
            let gm = duals.mu[q] - state.mu[q] / r2;
            for c in [k, k + 1] {
                rhs[hi + nb + c] += gm * 0.5 * len;
                rhs[lo + nb + c] -= gm * 0.5 * len;
            }
            let gv = duals.v[q] - state.v[q] / r2;
            for base in [lo, hi] {
                rhs[base + nb + k] -= 0.5 * dt * gv;
                rhs[base + nb + k + 1] += 0.5 * dt * gv;
            }
        }
    }
    Ok(rhs)
}

/// Which linear solver handles Step 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearBackend {
    /// Diagonalize the time factor and factorize one sparse spatial system
    /// per time mode.
    #[default]
    TimeModes,
    /// Jacobi-preconditioned conjugate gradients with the kernel deflated.
    Cg,
}

/// Solution of a Step-1 solve with its convergence record.
#[derive(Clone, Debug)]
pub struct LinearSolve {
    pub potentials: Potentials,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Conjugate-gradient solve with Jacobi preconditioning and the joint
/// constant mode deflated. `max_iter` defaults to `10 · ndof`.
pub fn solve_potentials(
    system: &SaddleSystem,
    rhs: &[f64],
    tol: f64,
    max_iter: Option<usize>,
) -> Result<LinearSolve> {
    let x0 = vec![0.0; system.ndof()];
    pcg(system, rhs, x0, tol, max_iter.unwrap_or(10 * system.ndof()))
}

fn pcg(
    system: &SaddleSystem,
    rhs: &[f64],
    mut x: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<LinearSolve> {
    let n = system.ndof();
    check_len("right-hand side", n, rhs.len())?;
    let mut b = rhs.to_vec();
    system.project_out_kernel(&mut b);
    system.project_out_kernel(&mut x);
    let b_norm = norm(&b);
    let finish = |mut x: Vec<f64>, iterations, res: f64| -> Result<LinearSolve> {
        system.project_out_kernel(&mut x);
        Ok(LinearSolve {
            potentials: Potentials::from_values(system, x)?,
            iterations,
            relative_residual: res,
        })
    };
    if b_norm == 0.0 {
        return finish(vec![0.0; n], 0, 0.0);
    }
    let inv_diag: Vec<f64> = system
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut ax = vec![0.0; n];
    system.apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    system.project_out_kernel(&mut r);
    let mut res = norm(&r) / b_norm;
    if res <= tol {
        return finish(x, 0, res);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    system.project_out_kernel(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        system.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r) / b_norm;
        if res <= tol {
            return finish(x, it, res);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        system.project_out_kernel(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverStagnation {
        iterations: max_iter,
        residual: res,
    })
}

/// Direct Step-1 solver.
///
/// With `QᵀM_tQ = I` and `QᵀK_tQ = Λ`, the change of variables `x = (Q ⊗ I) y`
/// turns `A` into the block diagonal `λ_k S_K + S_M`, each factorized once.
/// The `λ = 0` mode has the spatial constant as kernel and is pinned.
pub struct TimeModeSolver {
    q: DMatrix<f64>,
    factors: Vec<LdlNumeric<f64, usize>>,
    pin_mode: usize,
    tol: f64,
}

impl std::fmt::Debug for TimeModeSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TimeModeSolver")
            .field("modes", &self.factors.len())
            .field("tol", &self.tol)
            .finish()
    }
}

impl TimeModeSolver {
    /// Factorizes all modes. `tol` is the relative residual above which a
    /// direct solution is polished by conjugate gradients.
    pub fn new(system: &SaddleSystem, tol: f64) -> Result<Self> {
        let (kt, mt) = system.time.dense();
        let chol = mt
            .cholesky()
            .ok_or_else(|| Error::Factorization("time mass matrix".into()))?;
        let linv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::Factorization("time mass matrix".into()))?;
        let c = &linv * kt * linv.transpose();
        let c = 0.5 * (&c + c.transpose());
        let eig = SymmetricEigen::new(c);
        let q_raw = linv.transpose() * eig.eigenvectors;
        let pin_mode = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, _)| k)
            .unwrap();

        let mut q = q_raw;
        // The null mode of K_t is exactly the constant, M_t-normalized to 1.
        for j in 0..q.nrows() {
            q[(j, pin_mode)] = 1.0;
        }
        let mut factors = Vec::with_capacity(q.ncols());
        for k in 0..q.ncols() {
            let (lambda, pin) = if k == pin_mode {
                (0.0, Some(0))
            } else {
                (eig.eigenvalues[k], None)
            };
            let mat = system.space.combined(lambda, pin);
            let ldl = Ldl::new()
                .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
                .check_symmetry(sprs::SymmetryCheck::DontCheckSymmetry)
                .numeric(mat.view())
                .map_err(|e| Error::Factorization(format!("time mode {k}: {e}")))?;
            factors.push(ldl);
        }
        Ok(TimeModeSolver {
            q,
            factors,
            pin_mode,
            tol,
        })
    }

    pub fn solve(&self, system: &SaddleSystem, rhs: &[f64]) -> Result<LinearSolve> {
        let ns = system.n_space();
        let nn = system.n_nodes;
        check_len("right-hand side", ns * nn, rhs.len())?;
        let mut b = rhs.to_vec();
        system.project_out_kernel(&mut b);
        let b_norm = norm(&b);
        if b_norm == 0.0 {
            return Ok(LinearSolve {
                potentials: Potentials::from_values(system, vec![0.0; ns * nn])?,
                iterations: 0,
                relative_residual: 0.0,
            });
        }

        let mut x = vec![0.0; ns * nn];
        let mut ck = vec![0.0; ns];
        for k in 0..nn {
            ck.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..nn {
                let qjk = self.q[(j, k)];
                for (c, bj) in ck.iter_mut().zip(&b[j * ns..(j + 1) * ns]) {
                    *c += qjk * bj;
                }
            }
            if k == self.pin_mode {
                ck[0] = 0.0;
            }
            let yk: Vec<f64> = self.factors[k].solve(&ck[..]);
            for j in 0..nn {
                let qjk = self.q[(j, k)];
                for (xv, y) in x[j * ns..(j + 1) * ns].iter_mut().zip(&yk) {
                    *xv += qjk * y;
                }
            }
        }
        system.project_out_kernel(&mut x);

        let mut ax = vec![0.0; x.len()];
        system.apply(&x, &mut ax);
        let res = b.iter().zip(&ax).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt() / b_norm;
        if res <= self.tol {
            return Ok(LinearSolve {
                potentials: Potentials::from_values(system, x)?,
                iterations: 1,
                relative_residual: res,
            });
        }
        pcg(system, &b, x, self.tol, 10 * system.ndof())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
