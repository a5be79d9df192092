use std::collections::{HashMap, HashSet};
use std::io::Write;

use spade::handles::FixedVertexHandle;
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use super::{Point, Polyline};
use crate::error::{Error, Result};

/// Triangles with a smaller interior angle than this are rejected.
const MIN_ANGLE_DEGREES: f64 = 1.0;
/// Lattice points closer than this fraction of `h` to the curve are dropped
/// so the curve vertices do not create slivers.
const CURVE_CLEARANCE: f64 = 0.35;
const MAX_REFINEMENT_ROUNDS: usize = 40;

/// A mesh edge lying on the curve, oriented along increasing curve parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveEdge {
    /// Bulk vertex at the start of the edge.
    pub v0: usize,
    /// Bulk vertex at the end of the edge.
    pub v1: usize,
    /// Polyline segment containing this edge.
    pub segment: usize,
    pub length: f64,
}

/// Triangulation of `[0, 1]²` in which the curve is a chain of edges,
/// extruded over `n_slabs` uniform time slabs.
///
/// Bulk prisms are the implicit pairs `(slab, triangle)` and curve prisms the
/// pairs `(slab, curve edge)`; both are stored slab-major.
#[derive(Clone, Debug)]
pub struct SpaceTimeMesh {
    h: f64,
    n_slabs: usize,
    curve: Polyline,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    areas: Vec<f64>,
    gradients: Vec<[Point; 3]>,
    /// Bulk vertex ids of the curve chain, in curve order.
    curve_vertices: Vec<usize>,
    /// `curve_edges[k]` joins `curve_vertices[k]` and `curve_vertices[k + 1]`.
    curve_edges: Vec<CurveEdge>,
}

/// Builds the conforming space-time mesh for `curve`.
///
/// Segments longer than `h` are split into equal pieces of length at most
/// `h`; the spatial triangulation is a constrained Delaunay triangulation of
/// a triangular lattice plus the curve vertices, refined until no edge is
/// longer than `h`.
pub fn build_mesh(curve: &Polyline, h: f64, n_t: usize) -> Result<SpaceTimeMesh> {
    let mut problems = Vec::new();
    if !(h > 0.0 && h <= 0.5) {
        problems.push(format!("mesh size h = {h} must lie in (0, 0.5]"));
    }
    if n_t == 0 {
        problems.push("n_t must be at least 1".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    curve.validate()?;

    // Curve chain: polyline vertices plus equal subdivisions.
    let mut chain: Vec<Point> = Vec::new();
    let mut chain_segment: Vec<usize> = Vec::new();
    for i in 0..curve.n_segments() {
        let (a, b) = curve.segment(i);
        let pieces = ((a.distance(b) / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        if i == 0 {
            chain.push(a);
        }
        for k in 1..=pieces {
            let p = if k == pieces {
                b
            } else {
                let t = k as f64 / pieces as f64;
                a + t * (b - a)
            };
            chain.push(p);
            chain_segment.push(i);
        }
    }

    let mut points = lattice_points(h);
    let n_boundary_free = points.len();
    let keep: Vec<bool> = points
        .iter()
        .map(|&p| {
            on_boundary(p) || curve.is_empty() || curve.distance_to(p) > CURVE_CLEARANCE * h
        })
        .collect();
    let mut filtered: Vec<Point> = (0..n_boundary_free)
        .filter(|&i| keep[i])
        .map(|i| points[i])
        .collect();
    points.clear();
    let chain_offset = filtered.len();
    filtered.extend_from_slice(&chain);

    let spade_points: Vec<Point2<f64>> = filtered.iter().map(|p| Point2::new(p.x, p.y)).collect();
    let edges: Vec<[usize; 2]> = (0..chain.len().saturating_sub(1))
        .map(|k| [chain_offset + k, chain_offset + k + 1])
        .collect();
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::bulk_load_cdt(spade_points, edges)
        .map_err(|e| Error::MeshingFailure(format!("triangulation failed: {e:?}")))?;
    if cdt.num_vertices() != filtered.len() {
        return Err(Error::MeshingFailure(
            "duplicate vertices between lattice and curve".into(),
        ));
    }

    refine_long_edges(&mut cdt, h)?;

    for k in 0..chain.len().saturating_sub(1) {
        let a = FixedVertexHandle::from_index(chain_offset + k);
        let b = FixedVertexHandle::from_index(chain_offset + k + 1);
        if !cdt.exists_constraint(a, b) {
            return Err(Error::MeshingFailure(format!(
                "curve edge {k} was split by the triangulation"
            )));
        }
    }

    let vertices: Vec<Point> = cdt
        .vertices()
        .map(|v| {
            let p = v.position();
            Point::new(p.x, p.y)
        })
        .collect();
    let mut triangles: Vec<[usize; 3]> = cdt
        .inner_faces()
        .map(|f| {
            let [a, b, c] = f.vertices();
            [a.fix().index(), b.fix().index(), c.fix().index()]
        })
        .collect();
    // Spade's face order depends on insertion history only; sort for a
    // canonical numbering.
    for t in triangles.iter_mut() {
        let (a, b, c) = (vertices[t[0]], vertices[t[1]], vertices[t[2]]);
        if (b - a).cross(c - a) < 0.0 {
            t.swap(1, 2);
        }
        let min_pos = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(min_pos);
    }
    triangles.sort_unstable();

    let curve_vertices: Vec<usize> = (0..chain.len()).map(|k| chain_offset + k).collect();
    let curve_edges: Vec<CurveEdge> = (0..chain.len().saturating_sub(1))
        .map(|k| {
            let v0 = curve_vertices[k];
            let v1 = curve_vertices[k + 1];
            CurveEdge {
                v0,
                v1,
                segment: chain_segment[k],
                length: vertices[v0].distance(vertices[v1]),
            }
        })
        .collect();

    let mesh = SpaceTimeMesh::from_parts(
        h,
        n_t,
        curve.clone(),
        vertices,
        triangles,
        curve_vertices,
        curve_edges,
    )?;
    let min_angle = mesh.min_angle_degrees();
    if min_angle < MIN_ANGLE_DEGREES {
        return Err(Error::MeshingFailure(format!(
            "sliver triangle with minimum angle {min_angle:.3}°"
        )));
    }
    Ok(mesh)
}

/// Rebuilds the mesh for an updated curve, keeping only `h` and `n_t`.
pub fn remesh(curve: &Polyline, prev: &SpaceTimeMesh) -> Result<SpaceTimeMesh> {
    build_mesh(curve, prev.h(), prev.n_slabs())
}

fn on_boundary(p: Point) -> bool {
    p.x == 0.0 || p.x == 1.0 || p.y == 0.0 || p.y == 1.0
}

/// Triangular lattice over the unit square with boundary points at spacing
/// at most `h` and lattice edges of length at most `h`.
fn lattice_points(h: f64) -> Vec<Point> {
    let nx = (1.0 / h - 1e-12).ceil().max(1.0) as usize;
    let ny = (1.0 / (h * 3f64.sqrt() / 2.0) - 1e-12).ceil().max(1.0) as usize;
    let dx = 1.0 / nx as f64;
    let mut pts = Vec::new();
    for k in 0..=ny {
        let y = if k == ny { 1.0 } else { k as f64 / ny as f64 };
        if k == 0 || k == ny || k % 2 == 0 {
            for i in 0..=nx {
                let x = if i == nx { 1.0 } else { i as f64 * dx };
                pts.push(Point::new(x, y));
            }
        } else {
            pts.push(Point::new(0.0, y));
            for i in 0..nx {
                pts.push(Point::new((i as f64 + 0.5) * dx, y));
            }
            pts.push(Point::new(1.0, y));
        }
    }
    pts
}

fn refine_long_edges(cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, h: f64) -> Result<()> {
    let limit = h * (1.0 + 1e-9);
    for _ in 0..MAX_REFINEMENT_ROUNDS {
        let mut midpoints: Vec<Point2<f64>> = Vec::new();
        for e in cdt.undirected_edges() {
            if e.is_constraint_edge() {
                continue;
            }
            let [a, b] = e.vertices();
            let (pa, pb) = (a.position(), b.position());
            let len = (pa.x - pb.x).hypot(pa.y - pb.y);
            if len > limit {
                midpoints.push(Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)));
            }
        }
        if midpoints.is_empty() {
            return Ok(());
        }
        for m in midpoints {
            cdt.insert(m)
                .map_err(|e| Error::MeshingFailure(format!("refinement insert failed: {e:?}")))?;
        }
    }
    Err(Error::MeshingFailure(
        "edge-length refinement did not terminate".into(),
    ))
}

impl SpaceTimeMesh {
    /// Assembles a mesh from explicit parts. Triangles must be
    /// counter-clockwise.
    pub fn from_parts(
        h: f64,
        n_slabs: usize,
        curve: Polyline,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        curve_vertices: Vec<usize>,
        curve_edges: Vec<CurveEdge>,
    ) -> Result<Self> {
        let mut areas = Vec::with_capacity(triangles.len());
        let mut gradients = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|i| vertices[i]);
            let twice_area = (b - a).cross(c - a);
            if twice_area <= 0.0 {
                return Err(Error::MeshingFailure(format!(
                    "triangle {t} is degenerate or clockwise"
                )));
            }
            // ∇λ_k = rot90(opposite edge) / (2|T|)
            let g = |p: Point, q: Point| {
                let e = q - p;
                Point::new(-e.y / twice_area, e.x / twice_area)
            };
            areas.push(0.5 * twice_area);
            gradients.push([g(b, c), g(c, a), g(a, b)]);
        }
        Ok(SpaceTimeMesh {
            h,
            n_slabs,
            curve,
            vertices,
            triangles,
            areas,
            gradients,
            curve_vertices,
            curve_edges,
        })
    }

    /// Moves the curve chain onto `curve` while keeping the connectivity.
    ///
    /// Applies when `curve` has as many points as the current one and the
    /// chain can be redistributed with the same number of pieces per
    /// segment; returns `None` if not, or if a triangle would invert or
    /// become a sliver. Small curve perturbations therefore change the
    /// discrete problem smoothly, which a full remesh does not guarantee.
    pub fn deform(&self, curve: &Polyline) -> Option<SpaceTimeMesh> {
        if curve.n_points() != self.curve.n_points() || curve.validate().is_err() {
            return None;
        }
        let mut pieces = vec![0usize; curve.n_segments()];
        for e in &self.curve_edges {
            pieces[e.segment] += 1;
        }
        let mut vertices = self.vertices.clone();
        let mut within = 0;
        if let Some(&first) = self.curve_vertices.first() {
            vertices[first] = curve.points()[0];
        }
        for (k, e) in self.curve_edges.iter().enumerate() {
            within = if k > 0 && self.curve_edges[k - 1].segment == e.segment { within + 1 } else { 1 };
            let (a, b) = curve.segment(e.segment);
            let p = if within == pieces[e.segment] {
                b
            } else {
                a + (within as f64 / pieces[e.segment] as f64) * (b - a)
            };
            vertices[self.curve_vertices[k + 1]] = p;
        }
        if vertices.iter().any(|p| !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y)) {
            return None;
        }
        let curve_edges = self
            .curve_edges
            .iter()
            .map(|e| CurveEdge {
                length: vertices[e.v0].distance(vertices[e.v1]),
                ..*e
            })
            .collect();
        let mesh = SpaceTimeMesh::from_parts(
            self.h,
            self.n_slabs,
            curve.clone(),
            vertices,
            self.triangles.clone(),
            self.curve_vertices.clone(),
            curve_edges,
        )
        .ok()?;
        (mesh.min_angle_degrees() >= MIN_ANGLE_DEGREES).then_some(mesh)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_slabs(&self) -> usize {
        self.n_slabs
    }

    pub fn n_time_nodes(&self) -> usize {
        self.n_slabs + 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_slabs as f64
    }

    pub fn curve(&self) -> &Polyline {
        &self.curve
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    /// Gradients of the three barycentric basis functions of triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> &[Point; 3] {
        &self.gradients[t]
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        (1.0 / 3.0) * (a + b + c)
    }

    pub fn curve_vertices(&self) -> &[usize] {
        &self.curve_vertices
    }

    pub fn n_curve_vertices(&self) -> usize {
        self.curve_vertices.len()
    }

    pub fn curve_edges(&self) -> &[CurveEdge] {
        &self.curve_edges
    }

    pub fn n_curve_edges(&self) -> usize {
        self.curve_edges.len()
    }

    pub fn n_bulk_prisms(&self) -> usize {
        self.n_slabs * self.triangles.len()
    }

    pub fn n_curve_prisms(&self) -> usize {
        self.n_slabs * self.curve_edges.len()
    }

    pub fn curve_edge_midpoint(&self, e: usize) -> Point {
        let ce = self.curve_edges[e];
        0.5 * (self.vertices[ce.v0] + self.vertices[ce.v1])
    }

    /// Arclength at the midpoint of every curve edge.
    pub fn curve_edge_midpoint_arclengths(&self) -> Vec<f64> {
        let mut s = 0.0;
        self.curve_edges
            .iter()
            .map(|e| {
                let mid = s + 0.5 * e.length;
                s += e.length;
                mid
            })
            .collect()
    }

    /// Lumped P1 weights `∫ N_i` of the bulk vertices.
    pub fn lumped_vertex_areas(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                w[v] += self.areas[t] / 3.0;
            }
        }
        w
    }

    /// Lumped P1 weights `∫_Γ N_c` of the curve vertices.
    pub fn lumped_curve_lengths(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.curve_vertices.len()];
        for (k, e) in self.curve_edges.iter().enumerate() {
            w[k] += 0.5 * e.length;
            w[k + 1] += 0.5 * e.length;
        }
        w
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k], t[(k + 1) % 3])))
            .map(|(a, b)| self.vertices[a].distance(self.vertices[b]))
            .fold(0.0, f64::max)
    }

    pub fn min_angle_degrees(&self) -> f64 {
        let mut min = f64::INFINITY;
        for tri in &self.triangles {
            for k in 0..3 {
                let p = self.vertices[tri[k]];
                let u = self.vertices[tri[(k + 1) % 3]] - p;
                let v = self.vertices[tri[(k + 2) % 3]] - p;
                let angle = u.cross(v).abs().atan2(u.dot(v));
                min = min.min(angle.to_degrees());
            }
        }
        min
    }

    /// Number of triangles sharing each undirected edge.
    pub fn edge_triangle_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Bit `k` is set when edge `(v_k, v_{k+1 mod 3})` of triangle `t` lies on the curve.
    pub fn curve_edge_mask(&self, t: usize) -> u8 {
        let on_curve: HashSet<(usize, usize)> = self.curve_edge_keys();
        self.mask_with(&on_curve, t)
    }

    fn curve_edge_keys(&self) -> HashSet<(usize, usize)> {
        self.curve_edges
            .iter()
            .map(|e| (e.v0.min(e.v1), e.v0.max(e.v1)))
            .collect()
    }

    fn mask_with(&self, on_curve: &HashSet<(usize, usize)>, t: usize) -> u8 {
        let tri = self.triangles[t];
        let mut mask = 0u8;
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if on_curve.contains(&(a.min(b), a.max(b))) {
                mask |= 1 << k;
            }
        }
        mask
    }

    /// Debug dump: `tri_id, v0x, v0y, v1x, v1y, v2x, v2y, on_curve_edge_mask`.
    pub fn write_triangles_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let keys = self.curve_edge_keys();
        writeln!(out, "tri_id,v0x,v0y,v1x,v1y,v2x,v2y,on_curve_edge_mask")?;
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            writeln!(
                out,
                "{t},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                a.x,
                a.y,
                b.x,
                b.y,
                c.x,
                c.y,
                self.mask_with(&keys, t)
            )?;
        }
        Ok(())
    }
}
