//! Equivariant triangulation of the fundamental octagon and the discrete
//! operators on it.
//!
//! The octagon is split into 8 center triangles, each subdivided
//! geodesic-barycentrically into n^2 cells. Octagon sides are subdivided at
//! equal arclength fractions, so the side pairings map boundary nodes to
//! boundary nodes exactly and the identified complex is a closed genus-2
//! surface. Stiffness weights come from comparison Euclidean triangles with
//! the same hyperbolic side lengths; the mass matrix is lumped.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::hyperbolic::{
    dist_z, geodesic_from, group_ball, sigma, DiskPoint, FuchsianGroup, MobiusIsometry,
};
use crate::{Error, Result};

/// One real value per canonical vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(n: usize, v: f64) -> Self {
        Self { values: vec![v; n] }
    }

    pub fn from_fn(mesh: &EquivariantMesh, f: impl Fn(Complex64) -> f64) -> Self {
        let values = (0..mesh.n_canonical)
            .map(|c| f(mesh.vertices[mesh.canon_rep[c]].z()))
            .collect();
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

/// Boundary vertex identification: `vertex` maps onto the canonical class of
/// `canonical_rep` (both global vertex ids); `pairing` carries the vertex to
/// the representative's chart position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrbitPair {
    pub vertex: usize,
    pub canonical_rep: usize,
    pub pairing: MobiusIsometry,
}

/// Symmetric sparse matrix in CSR form (canonical indices).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseSym {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseSym {
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.row_ptr.len() - 1 {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            out[i] = acc;
        }
    }

    /// Difference form sum_j w_ij (x_j - x_i): identical to `apply` for
    /// zero-row-sum matrices but annihilates constants exactly.
    pub fn apply_diff(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.row_ptr.len() - 1 {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                if j != i {
                    acc += self.vals[k] * (x[j] - x[i]);
                }
            }
            out[i] = acc;
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivariantMesh {
    /// Chart positions in the closed fundamental octagon (global ids).
    pub vertices: Vec<DiskPoint>,
    /// Triangles as global vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Global id -> canonical slot.
    pub canon: Vec<usize>,
    /// Canonical slot -> representative global id.
    pub canon_rep: Vec<usize>,
    /// Identifications of non-canonical boundary vertices.
    pub orbit_map: Vec<OrbitPair>,
    /// Lumped hyperbolic area per canonical vertex.
    pub vertex_area: Vec<f64>,
    /// Comparison-triangle cotangent stiffness, zero row sums.
    pub stiffness: SparseSym,
    /// Hyperbolic edge lengths keyed by canonical vertex pairs.
    pub edge_lengths: Vec<(usize, usize, f64)>,
    /// True for global vertices on the octagon boundary.
    pub boundary: Vec<bool>,
    pub n_canonical: usize,
    pub n_sub: usize,
    pub target_h: f64,
    /// Hyperbolic triangle areas (angle deficit).
    #[serde(skip)]
    pub tri_area: Vec<f64>,
    /// Hyperbolic side lengths per triangle, opposite each corner.
    #[serde(skip)]
    pub tri_sides: Vec<[f64; 3]>,
    /// Canonical one-ring adjacency.
    #[serde(skip)]
    pub neighbors: Vec<Vec<usize>>,
    /// Triangles incident to each global vertex.
    #[serde(skip)]
    pub vertex_tris: Vec<Vec<usize>>,
    #[serde(skip)]
    locator: Locator,
}

/// Uniform chart-grid index over vertices and triangles.
#[derive(Debug, Clone, Default)]
struct Locator {
    cell: f64,
    min_x: f64,
    min_y: f64,
    nx: usize,
    ny: usize,
    verts: Vec<Vec<usize>>,
    tris: Vec<Vec<usize>>,
}

fn point_along(p: Complex64, q: Complex64, frac: f64) -> Complex64 {
    if frac <= 0.0 {
        return p;
    }
    if frac >= 1.0 {
        return q;
    }
    let w = (q - p) / (Complex64::new(1.0, 0.0) - p.conj() * q);
    geodesic_from(p, w, frac * dist_z(p, q))
}

pub(crate) fn hyp_angles(a: f64, b: f64, c: f64) -> [f64; 3] {
    // Angle opposite each side, hyperbolic law of cosines.
    let ang = |opp: f64, s1: f64, s2: f64| -> f64 {
        let v = (s1.cosh() * s2.cosh() - opp.cosh()) / (s1.sinh() * s2.sinh());
        v.clamp(-1.0, 1.0).acos()
    };
    [ang(a, b, c), ang(b, c, a), ang(c, a, b)]
}

pub(crate) fn euc_angles(a: f64, b: f64, c: f64) -> [f64; 3] {
    let ang = |opp: f64, s1: f64, s2: f64| -> f64 {
        let v = (s1 * s1 + s2 * s2 - opp * opp) / (2.0 * s1 * s2);
        v.clamp(-1.0, 1.0).acos()
    };
    [ang(a, b, c), ang(b, c, a), ang(c, a, b)]
}

struct PointSet {
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Complex64>,
}

impl PointSet {
    fn new() -> Self {
        Self { buckets: HashMap::new(), points: Vec::new() }
    }

    fn insert(&mut self, p: Complex64) -> usize {
        let q = 1e7;
        let kx = (p.re * q).round() as i64;
        let ky = (p.im * q).round() as i64;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for &i in ids {
                        if (self.points[i] - p).norm() < 1e-9 {
                            return i;
                        }
                    }
                }
            }
        }
        let id = self.points.len();
        self.points.push(p);
        self.buckets.entry((kx, ky)).or_default().push(id);
        id
    }
}

/// Builds the equivariant mesh at hyperbolic edge-length target `target_h`.
pub fn build_mesh(group: &FuchsianGroup, target_h: f64) -> Result<EquivariantMesh> {
    if !(0.01..=0.5).contains(&target_h) {
        return Err(Error::Config(format!("target_h {target_h} outside [0.01, 0.5]")));
    }
    let side_len = 2.0 * ((PI / 8.0).cos() / (PI / 8.0).sin()).acosh();
    let n = (side_len / target_h).ceil() as usize;
    build_mesh_subdivided(group, n, target_h)
}

fn build_mesh_subdivided(
    group: &FuchsianGroup,
    n: usize,
    target_h: f64,
) -> Result<EquivariantMesh> {
    let origin = Complex64::new(0.0, 0.0);
    let mut set = PointSet::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    // side_nodes[k][j]: node at arclength fraction j/n along side k (from
    // corner v_k to corner v_{k+1}).
    let mut side_nodes = vec![vec![0usize; n + 1]; 8];

    for slice in 0..8 {
        let a = group.octagon[slice].z();
        let b = group.octagon[(slice + 1) % 8].z();
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let fi = i as f64 / n as f64;
            let qa = point_along(origin, a, fi);
            let qb = point_along(origin, b, fi);
            let mut row = Vec::with_capacity(i + 1);
            for j in 0..=i {
                let p = if i == 0 { origin } else { point_along(qa, qb, j as f64 / i as f64) };
                row.push(set.insert(p));
            }
            rows.push(row);
        }
        for (j, id) in rows[n].iter().enumerate() {
            side_nodes[slice][j] = *id;
        }
        for i in 1..=n {
            for j in 0..i {
                triangles.push([rows[i - 1][j], rows[i][j], rows[i][j + 1]]);
                if j + 1 <= i - 1 {
                    triangles.push([rows[i - 1][j], rows[i][j + 1], rows[i - 1][j + 1]]);
                }
            }
        }
    }

    let vertices: Vec<DiskPoint> = set.points.iter().map(|z| DiskPoint::raw(z.re, z.im)).collect();
    let nv = vertices.len();

    let mut boundary = vec![false; nv];
    for nodes in &side_nodes {
        for &id in nodes {
            boundary[id] = true;
        }
    }

    // Orbit identification: all corners into the class of corner 0; side k+4
    // node j onto side k node n-j (k = 0..3).
    let corner_ids: Vec<usize> = (0..8).map(|k| side_nodes[k][0]).collect();
    let mut canon_of = (0..nv).collect::<Vec<usize>>();
    let mut pairings: HashMap<usize, MobiusIsometry> = HashMap::new();

    let ball = group_ball(group, 4, 100_000)?;
    let v0 = vertices[corner_ids[0]].z();
    for &cid in corner_ids.iter() {
        if cid == corner_ids[0] {
            continue;
        }
        let z = vertices[cid].z();
        let mut found = false;
        for e in &ball {
            if (e.matrix.apply_z(z) - v0).norm() < 1e-9 {
                canon_of[cid] = corner_ids[0];
                pairings.insert(cid, e.matrix);
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Config("corner orbit not closed in ball".into()));
        }
    }
    for k in 0..4 {
        let g = group.generators[k];
        for j in 1..n {
            let from = side_nodes[k + 4][j];
            let to = side_nodes[k][n - j];
            let img = g.apply_z(vertices[from].z());
            if (img - vertices[to].z()).norm() > 1e-9 {
                return Err(Error::Config(format!(
                    "side pairing mismatch at side {k} node {j}: {}",
                    (img - vertices[to].z()).norm()
                )));
            }
            canon_of[from] = to;
            pairings.insert(from, g);
        }
    }

    // Compress to canonical slots.
    let mut canon = vec![usize::MAX; nv];
    let mut canon_rep = Vec::new();
    for v in 0..nv {
        if canon_of[v] == v {
            canon[v] = canon_rep.len();
            canon_rep.push(v);
        }
    }
    for v in 0..nv {
        if canon_of[v] != v {
            canon[v] = canon[canon_of[v]];
        }
    }
    let n_canonical = canon_rep.len();
    let orbit_map: Vec<OrbitPair> = (0..nv)
        .filter(|&v| canon_of[v] != v)
        .map(|v| OrbitPair { vertex: v, canonical_rep: canon_of[v], pairing: pairings[&v] })
        .collect();

    // Per-triangle geometry: hyperbolic sides and angle-deficit area;
    // comparison angles for stiffness and the quality gate.
    let mut tri_area = Vec::with_capacity(triangles.len());
    let mut tri_sides = Vec::with_capacity(triangles.len());
    let mut vertex_area = vec![0.0; n_canonical];
    let mut edge_w: HashMap<(usize, usize), f64> = HashMap::new();
    let mut edge_len: HashMap<(usize, usize), f64> = HashMap::new();
    let min_angle_deg = 5.0;
    for t in &triangles {
        let p0 = vertices[t[0]].z();
        let p1 = vertices[t[1]].z();
        let p2 = vertices[t[2]].z();
        let s = [dist_z(p1, p2), dist_z(p2, p0), dist_z(p0, p1)];
        let hyp = hyp_angles(s[0], s[1], s[2]);
        let area = PI - hyp[0] - hyp[1] - hyp[2];
        let comp = euc_angles(s[0], s[1], s[2]);
        for &ang in &comp {
            if ang < min_angle_deg * PI / 180.0 {
                return Err(Error::MeshQualityFailure {
                    angle_deg: ang * 180.0 / PI,
                    min_deg: min_angle_deg,
                });
            }
        }
        tri_area.push(area);
        tri_sides.push(s);
        for corner in 0..3 {
            vertex_area[canon[t[corner]]] += area / 3.0;
            let (i, j) = ((corner + 1) % 3, (corner + 2) % 3);
            let (ci, cj) = (canon[t[i]], canon[t[j]]);
            let key = (ci.min(cj), ci.max(cj));
            let w = 0.5 / comp[corner].tan();
            *edge_w.entry(key).or_insert(0.0) += w;
            edge_len.entry(key).or_insert(s[corner]);
        }
    }

    // CSR assembly with deterministic ordering.
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_canonical];
    for (&(i, j), &w) in &edge_w {
        rows[i].push((j, w));
        rows[j].push((i, w));
    }
    let mut row_ptr = vec![0usize; n_canonical + 1];
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        row.sort_by_key(|&(j, _)| j);
        let diag: f64 = -row.iter().map(|&(_, w)| w).sum::<f64>();
        let mut inserted = false;
        for &(j, w) in row.iter() {
            if !inserted && j > i {
                col_idx.push(i);
                vals.push(diag);
                inserted = true;
            }
            col_idx.push(j);
            vals.push(w);
        }
        if !inserted {
            col_idx.push(i);
            vals.push(diag);
        }
        row_ptr[i + 1] = col_idx.len();
    }
    let stiffness = SparseSym { row_ptr, col_idx, vals };

    let mut edge_lengths: Vec<(usize, usize, f64)> =
        edge_len.iter().map(|(&(i, j), &l)| (i, j, l)).collect();
    edge_lengths.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n_canonical];
    for &(i, j, _) in &edge_lengths {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    for nb in &mut neighbors {
        nb.sort_unstable();
        nb.dedup();
    }
    let mut vertex_tris: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (ti, t) in triangles.iter().enumerate() {
        for &v in t {
            vertex_tris[v].push(ti);
        }
    }

    let locator = Locator::build(&vertices, &triangles);

    Ok(EquivariantMesh {
        vertices,
        triangles,
        canon,
        canon_rep,
        orbit_map,
        vertex_area,
        stiffness,
        edge_lengths,
        boundary,
        n_canonical,
        n_sub: n,
        target_h,
        tri_area,
        tri_sides,
        neighbors,
        vertex_tris,
        locator,
    })
}

impl Locator {
    fn build(vertices: &[DiskPoint], triangles: &[[usize; 3]]) -> Self {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for v in vertices {
            min_x = min_x.min(v.x);
            max_x = max_x.max(v.x);
            min_y = min_y.min(v.y);
            max_y = max_y.max(v.y);
        }
        let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
        let target_cells = (vertices.len() as f64).sqrt().ceil() as usize;
        let cell = span / target_cells.max(1) as f64;
        let nx = ((max_x - min_x) / cell).ceil() as usize + 2;
        let ny = ((max_y - min_y) / cell).ceil() as usize + 2;
        let mut verts = vec![Vec::new(); nx * ny];
        let mut tris = vec![Vec::new(); nx * ny];
        let clampi = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
        let cell_of = |x: f64, y: f64| -> (usize, usize) {
            (
                clampi(((x - min_x) / cell).floor() as isize, nx),
                clampi(((y - min_y) / cell).floor() as isize, ny),
            )
        };
        for (i, v) in vertices.iter().enumerate() {
            let (ix, iy) = cell_of(v.x, v.y);
            verts[iy * nx + ix].push(i);
        }
        for (ti, t) in triangles.iter().enumerate() {
            let xs = [vertices[t[0]].x, vertices[t[1]].x, vertices[t[2]].x];
            let ys = [vertices[t[0]].y, vertices[t[1]].y, vertices[t[2]].y];
            let lo = cell_of(
                xs.iter().cloned().fold(f64::INFINITY, f64::min),
                ys.iter().cloned().fold(f64::INFINITY, f64::min),
            );
            let hi = cell_of(
                xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            );
            for iy in lo.1..=hi.1 {
                for ix in lo.0..=hi.0 {
                    tris[iy * nx + ix].push(ti);
                }
            }
        }
        Self { cell, min_x, min_y, nx, ny, verts, tris }
    }

    fn cell_of(&self, z: Complex64) -> (usize, usize) {
        let ix = (((z.re - self.min_x) / self.cell).floor() as isize)
            .clamp(0, self.nx as isize - 1) as usize;
        let iy = (((z.im - self.min_y) / self.cell).floor() as isize)
            .clamp(0, self.ny as isize - 1) as usize;
        (ix, iy)
    }
}

impl EquivariantMesh {
    /// Nearest global vertex to a chart point.
    pub fn nearest_vertex(&self, z: Complex64) -> usize {
        let (ix, iy) = self.locator.cell_of(z);
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        let mut ring = 0isize;
        loop {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let x = ix as isize + dx;
                    let y = iy as isize + dy;
                    if x < 0 || y < 0 || x >= self.locator.nx as isize
                        || y >= self.locator.ny as isize
                    {
                        continue;
                    }
                    for &v in &self.locator.verts[y as usize * self.locator.nx + x as usize] {
                        let d = (self.vertices[v].z() - z).norm();
                        if d < best_d {
                            best_d = d;
                            best = v;
                        }
                    }
                }
            }
            if best != usize::MAX && ring as f64 * self.locator.cell > best_d {
                return best;
            }
            if ring > (self.locator.nx + self.locator.ny) as isize {
                return best;
            }
            ring += 1;
        }
    }

    /// Triangle containing the chart point, with clamped barycentric
    /// coordinates (nearest triangle when marginally outside).
    pub fn locate(&self, z: Complex64) -> (usize, [f64; 3]) {
        let (ix, iy) = self.locator.cell_of(z);
        let mut best_t = usize::MAX;
        let mut best_score = f64::NEG_INFINITY;
        let mut best_bc = [0.0; 3];
        for ring in 0..3isize {
            for dy in -ring..=ring {
                for dx in -ring..=ring {
                    if dx.abs() != ring && dy.abs() != ring {
                        continue;
                    }
                    let x = ix as isize + dx;
                    let y = iy as isize + dy;
                    if x < 0 || y < 0 || x >= self.locator.nx as isize
                        || y >= self.locator.ny as isize
                    {
                        continue;
                    }
                    for &ti in &self.locator.tris[y as usize * self.locator.nx + x as usize] {
                        let bc = self.barycentric(ti, z);
                        let score = bc[0].min(bc[1]).min(bc[2]);
                        if score > best_score {
                            best_score = score;
                            best_t = ti;
                            best_bc = bc;
                        }
                    }
                }
            }
            if best_score >= 0.0 {
                break;
            }
        }
        if best_t == usize::MAX {
            for ti in 0..self.triangles.len() {
                let bc = self.barycentric(ti, z);
                let score = bc[0].min(bc[1]).min(bc[2]);
                if score > best_score {
                    best_score = score;
                    best_t = ti;
                    best_bc = bc;
                }
            }
        }
        let sum: f64 = best_bc.iter().map(|v| v.max(0.0)).sum();
        let bc = [
            best_bc[0].max(0.0) / sum,
            best_bc[1].max(0.0) / sum,
            best_bc[2].max(0.0) / sum,
        ];
        (best_t, bc)
    }

    fn barycentric(&self, ti: usize, z: Complex64) -> [f64; 3] {
        let t = &self.triangles[ti];
        let p0 = self.vertices[t[0]].z();
        let p1 = self.vertices[t[1]].z();
        let p2 = self.vertices[t[2]].z();
        let det = (p1.re - p0.re) * (p2.im - p0.im) - (p2.re - p0.re) * (p1.im - p0.im);
        let l1 = ((z.re - p0.re) * (p2.im - p0.im) - (p2.re - p0.re) * (z.im - p0.im)) / det;
        let l2 = ((p1.re - p0.re) * (z.im - p0.im) - (z.re - p0.re) * (p1.im - p0.im)) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Piecewise-linear interpolation of a canonical field.
    pub fn interp_linear(&self, f: &ScalarField, z: Complex64) -> f64 {
        let (ti, bc) = self.locate(z);
        let t = &self.triangles[ti];
        bc[0] * f.values[self.canon[t[0]]]
            + bc[1] * f.values[self.canon[t[1]]]
            + bc[2] * f.values[self.canon[t[2]]]
    }

    pub fn value_at_global(&self, f: &ScalarField, v: usize) -> f64 {
        f.values[self.canon[v]]
    }

    /// Euler characteristic of the identified complex.
    pub fn euler_characteristic(&self) -> i64 {
        self.n_canonical as i64 - self.edge_lengths.len() as i64 + self.triangles.len() as i64
    }

    /// True when the canonical vertex lies on the octagon boundary.
    pub fn canonical_on_boundary(&self, c: usize) -> bool {
        self.boundary[self.canon_rep[c]]
    }

    /// Geometry-and-identification document for golden-file tests.
    pub fn document(&self) -> serde_json::Value {
        serde_json::json!({
            "vertices": self.vertices,
            "triangles": self.triangles,
            "orbit_map": self.orbit_map,
        })
    }
}

/// Discrete Laplace-Beltrami operator: `(1/area) * (stiffness * f)`.
pub fn laplacian_apply(mesh: &EquivariantMesh, f: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; mesh.n_canonical];
    mesh.stiffness.apply_diff(&f.values, &mut out);
    for (i, v) in out.iter_mut().enumerate() {
        *v /= mesh.vertex_area[i];
    }
    ScalarField { values: out }
}

/// Lumped integral over the surface.
pub fn integrate(mesh: &EquivariantMesh, f: &ScalarField) -> f64 {
    f.values.iter().zip(&mesh.vertex_area).map(|(v, a)| v * a).sum()
}

/// Quadratic least-squares patches of a canonical field over vertex
/// two-rings: smooth pointwise values and first derivatives between vertices.
pub struct VertexPatches {
    /// [f, fx, fy, fxx, fxy, fyy] per canonical vertex, in displacement
    /// coordinates about the representative position.
    pub coeff: Vec<[f64; 6]>,
}

impl VertexPatches {
    pub fn build(mesh: &EquivariantMesh, f: &ScalarField) -> Self {
        let mut coeff = vec![[0.0; 6]; mesh.n_canonical];
        for c in 0..mesh.n_canonical {
            let z0 = mesh.vertices[mesh.canon_rep[c]].z();
            let mut ring: Vec<usize> = vec![c];
            for &n1 in &mesh.neighbors[c] {
                ring.push(n1);
                for &n2 in &mesh.neighbors[n1] {
                    ring.push(n2);
                }
            }
            ring.sort_unstable();
            ring.dedup();
            let mut ata = [[0.0f64; 6]; 6];
            let mut atb = [0.0f64; 6];
            for &nb in &ring {
                let zn = mesh.vertices[mesh.canon_rep[nb]].z();
                let d = zn - z0;
                // Representatives identified across the octagon sit far away
                // in the chart; they carry no local information here.
                if d.norm() > 12.0 * mesh.target_h {
                    continue;
                }
                let row = [1.0, d.re, d.im, 0.5 * d.re * d.re, d.re * d.im, 0.5 * d.im * d.im];
                let w = 1.0 / (1.0 + (d.norm() / mesh.target_h).powi(2));
                for i in 0..6 {
                    for j in 0..6 {
                        ata[i][j] += w * row[i] * row[j];
                    }
                    atb[i] += w * row[i] * f.values[nb];
                }
            }
            coeff[c] = solve6(ata, atb, f.values[c]);
        }
        Self { coeff }
    }

    pub fn eval_about(&self, c: usize, d: Complex64) -> f64 {
        let k = &self.coeff[c];
        k[0] + k[1] * d.re
            + k[2] * d.im
            + 0.5 * k[3] * d.re * d.re
            + k[4] * d.re * d.im
            + 0.5 * k[5] * d.im * d.im
    }

    pub fn grad_about(&self, c: usize, d: Complex64) -> (f64, f64) {
        let k = &self.coeff[c];
        (k[1] + k[3] * d.re + k[4] * d.im, k[2] + k[4] * d.re + k[5] * d.im)
    }
}

fn solve6(mut a: [[f64; 6]; 6], mut b: [f64; 6], fallback_value: f64) -> [f64; 6] {
    let n = 6;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-14 {
            let mut out = [0.0; 6];
            out[0] = fallback_value;
            return out;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 6];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperbolic::build_octagon_group;

    fn small_mesh() -> (FuchsianGroup, EquivariantMesh) {
        let g = build_octagon_group();
        let m = build_mesh(&g, 0.25).unwrap();
        (g, m)
    }

    #[test]
    fn total_area_is_gauss_bonnet() {
        let (_, m) = small_mesh();
        let total: f64 = m.vertex_area.iter().sum();
        // Geodesic triangles tile the octagon exactly; only roundoff remains.
        assert!((total - 4.0 * PI).abs() < 1e-9, "area {total}");
        let one = ScalarField::constant(m.n_canonical, 1.0);
        assert!((integrate(&m, &one) - 4.0 * PI).abs() < 5e-3);
        let zero = ScalarField::constant(m.n_canonical, 0.0);
        assert_eq!(integrate(&m, &zero), 0.0);
    }

    #[test]
    fn euler_characteristic_is_minus_two() {
        let (_, m) = small_mesh();
        assert_eq!(m.euler_characteristic(), -2);
    }

    #[test]
    fn corners_identify_to_single_vertex() {
        let (g, m) = small_mesh();
        let classes: Vec<usize> = g
            .octagon
            .iter()
            .map(|v| m.canon[m.nearest_vertex(v.z())])
            .collect();
        for c in &classes {
            assert_eq!(*c, classes[0]);
        }
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let (_, m) = small_mesh();
        let f = ScalarField::constant(m.n_canonical, 3.7);
        let lf = laplacian_apply(&m, &f);
        for v in lf.values {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        let (_, m) = small_mesh();
        let f = ScalarField::from_fn(&m, |z| (1.3 * z.re - 0.4 * z.im).sin());
        let g = ScalarField::from_fn(&m, |z| z.re * z.re - 0.7 * z.im);
        let lf = laplacian_apply(&m, &f);
        let lg = laplacian_apply(&m, &g);
        let a = integrate(&m, &lf.zip(&g, |x, y| x * y));
        let b = integrate(&m, &f.zip(&lg, |x, y| x * y));
        assert!((a - b).abs() < 1e-10, "green identity residual {}", (a - b).abs());
    }

    #[test]
    fn laplacian_matches_finite_difference_oracle() {
        // Oracle: 5-point finite-difference Euclidean Laplacian divided by
        // sigma, on a smooth chart function.
        let g = build_octagon_group();
        let f = |z: Complex64| (z.re * z.re * z.re) * z.im - 0.5 * z.im * z.im + 0.3 * z.re;
        let oracle = |z: Complex64| {
            let h = 1e-5;
            let lap = (f(z + Complex64::new(h, 0.0))
                + f(z - Complex64::new(h, 0.0))
                + f(z + Complex64::new(0.0, h))
                + f(z - Complex64::new(0.0, h))
                - 4.0 * f(z))
                / (h * h);
            lap / sigma(z)
        };
        let mut errs = Vec::new();
        for &h in &[0.2, 0.1] {
            let m = build_mesh(&g, h).unwrap();
            let field = ScalarField::from_fn(&m, f);
            let lap = laplacian_apply(&m, &field);
            let mut e = Vec::new();
            for c in 0..m.n_canonical {
                if m.canonical_on_boundary(c) {
                    continue;
                }
                let z = m.vertices[m.canon_rep[c]].z();
                e.push((lap.values[c] - oracle(z)).abs());
            }
            e.sort_by(f64::total_cmp);
            errs.push(e[e.len() / 2]);
        }
        assert!(errs[1] < 0.1, "median error at h=0.1: {}", errs[1]);
        assert!(errs[1] < 0.75 * errs[0], "no refinement gain: {errs:?}");
    }

    #[test]
    fn orbit_pairings_are_isometric_identifications() {
        let (_, m) = small_mesh();
        for p in &m.orbit_map {
            let img = p.pairing.apply_z(m.vertices[p.vertex].z());
            let rep = m.vertices[p.canonical_rep].z();
            assert!((img - rep).norm() < 1e-9);
        }
        for (v, &is_b) in m.boundary.iter().enumerate() {
            if is_b {
                assert!(m.canon[v] < m.n_canonical);
            }
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let (_, m) = small_mesh();
        let ones = vec![1.0; m.n_canonical];
        let mut out = vec![0.0; m.n_canonical];
        m.stiffness.apply(&ones, &mut out);
        for v in out {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn total_angle_defect_matches_gauss_bonnet() {
        let (_, m) = small_mesh();
        // Hyperbolic angles close up exactly around every canonical vertex:
        // the identified complex is a smooth hyperbolic surface.
        let mut hyp_sum = vec![0.0; m.n_canonical];
        // Comparison (Euclidean) angles carry the curvature: their total
        // defect is 2*pi*chi.
        let mut euc_sum = vec![0.0; m.n_canonical];
        for (ti, t) in m.triangles.iter().enumerate() {
            let s = m.tri_sides[ti];
            let ha = hyp_angles(s[0], s[1], s[2]);
            let ea = euc_angles(s[0], s[1], s[2]);
            for corner in 0..3 {
                hyp_sum[m.canon[t[corner]]] += ha[corner];
                euc_sum[m.canon[t[corner]]] += ea[corner];
            }
        }
        for (c, &a) in hyp_sum.iter().enumerate() {
            assert!((a - 2.0 * PI).abs() < 1e-9, "cone angle at {c}: {a}");
        }
        let total_defect: f64 = euc_sum.iter().map(|&a| 2.0 * PI - a).sum();
        assert!((total_defect + 4.0 * PI).abs() < 5e-3, "total defect {total_defect}");
    }

    #[test]
    fn fields_live_on_orbits() {
        let (_, m) = small_mesh();
        let f = ScalarField::from_fn(&m, |z| z.re + 2.0 * z.im);
        for p in &m.orbit_map {
            assert_eq!(m.value_at_global(&f, p.vertex), m.value_at_global(&f, p.canonical_rep));
        }
        let lf = laplacian_apply(&m, &f);
        assert_eq!(lf.len(), m.n_canonical);
    }

    #[test]
    fn mesh_document_serializes_deterministically() {
        let g = build_octagon_group();
        let m1 = build_mesh(&g, 0.3).unwrap();
        let m2 = build_mesh(&g, 0.3).unwrap();
        let d1 = serde_json::to_string(&m1.document()).unwrap();
        let d2 = serde_json::to_string(&m2.document()).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn locate_and_interp_are_consistent() {
        let (_, m) = small_mesh();
        let f = ScalarField::from_fn(&m, |z| 1.0 + z.re - 0.5 * z.im);
        for &(x, y) in &[(0.1, 0.05), (-0.3, 0.2), (0.4, -0.35), (0.0, 0.0)] {
            let z = Complex64::new(x, y);
            let v = m.interp_linear(&f, z);
            assert!((v - (1.0 + x - 0.5 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_patches_reproduce_quadratics() {
        let (_, m) = small_mesh();
        let f = ScalarField::from_fn(&m, |z| 2.0 + z.re + 3.0 * z.im + z.re * z.im - z.im * z.im);
        let patches = VertexPatches::build(&m, &f);
        for c in (0..m.n_canonical).step_by(37) {
            if m.canonical_on_boundary(c) {
                continue;
            }
            let z0 = m.vertices[m.canon_rep[c]].z();
            let d = Complex64::new(0.02, -0.015);
            let z = z0 + d;
            let exact = 2.0 + z.re + 3.0 * z.im + z.re * z.im - z.im * z.im;
            let v = patches.eval_about(c, d);
            assert!((v - exact).abs() < 1e-9, "patch error {}", (v - exact).abs());
        }
    }

    #[test]
    fn rejects_bad_target() {
        let g = build_octagon_group();
        assert!(build_mesh(&g, 0.005).is_err());
        assert!(build_mesh(&g, 0.9).is_err());
    }
}
