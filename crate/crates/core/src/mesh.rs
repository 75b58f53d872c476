//! Periodic meshes: 2-D triangulations of a torus and 3-D cubical lattices.
//!
//! Every p-face is stored once with a fixed orientation. Because a vertex id
//! can be reached through several periodic images, a face is identified by
//! its vertex ids together with the integer period shifts of each vertex,
//! translated so that the first vertex carries zero shift.
//!
//! Orientation conventions:
//! * simplices are oriented by ascending `(vertex id, shift)`;
//! * cube edges point along `+axis`, squares are oriented `dy^dz`, `dz^dx`,
//!   `dx^dy` for normals x, y, z, and cells are right-handed.

use crate::error::{FeecError, Result};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::str::FromStr;

pub type Shift = [i32; 3];
type FaceKey = Vec<(usize, Shift)>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Simplex,
    Cube,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Simplex => "simplex",
            CellKind::Cube => "cube",
        }
    }
}

/// One oriented p-face: vertex ids in orientation order plus their shifts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Face {
    pub vertices: Vec<usize>,
    pub shifts: Vec<Shift>,
}

/// Boundary map from p-faces to (p-1)-faces.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedIncidence {
    pub p: usize,
    pub entries: Vec<Vec<(usize, i8)>>,
}

impl SignedIncidence {
    /// Number of (p-1)-faces the entries refer to.
    pub fn compose(&self, lower: &SignedIncidence, n_lower_lower: usize) -> Vec<Vec<(usize, i64)>> {
        assert_eq!(lower.p + 1, self.p);
        self.entries
            .iter()
            .map(|row| {
                let mut acc: BTreeMap<usize, i64> = BTreeMap::new();
                for &(f, s) in row {
                    for &(g, t) in &lower.entries[f] {
                        assert!(g < n_lower_lower);
                        *acc.entry(g).or_default() += s as i64 * t as i64;
                    }
                }
                acc.into_iter().filter(|&(_, v)| v != 0).collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice<T> {
    pub counts: [usize; 3],
    pub spacings: [T; 3],
}

#[derive(Clone, Debug)]
pub struct PeriodicMesh<T> {
    dimension: usize,
    periods: [T; 3],
    vertices: Vec<[T; 3]>,
    cell_kind: CellKind,
    lattice: Option<Lattice<T>>,
    faces: Vec<Vec<Face>>,
    incidence: Vec<SignedIncidence>,
    cell_faces: Vec<Vec<Vec<usize>>>,
}

/// Local vertex index of the cube corner `(a, b, c)`.
#[inline]
pub const fn cube_vertex(a: usize, b: usize, c: usize) -> usize {
    a + 2 * b + 4 * c
}

/// Local edge `axis*4 + s + 2t` of a cube, where `(s, t)` are the offsets in
/// the two remaining axes taken in increasing axis order.
pub fn cube_edge_vertices(local: usize) -> [usize; 2] {
    let axis = local / 4;
    let s = local % 2;
    let t = (local / 2) % 2;
    match axis {
        0 => [cube_vertex(0, s, t), cube_vertex(1, s, t)],
        1 => [cube_vertex(s, 0, t), cube_vertex(s, 1, t)],
        _ => [cube_vertex(s, t, 0), cube_vertex(s, t, 1)],
    }
}

/// Local square `normal*2 + side` of a cube, as an oriented vertex cycle.
pub fn cube_square_vertices(local: usize) -> [usize; 4] {
    let normal = local / 2;
    let s = local % 2;
    match normal {
        0 => [cube_vertex(s, 0, 0), cube_vertex(s, 1, 0), cube_vertex(s, 1, 1), cube_vertex(s, 0, 1)],
        1 => [cube_vertex(0, s, 0), cube_vertex(0, s, 1), cube_vertex(1, s, 1), cube_vertex(1, s, 0)],
        _ => [cube_vertex(0, 0, s), cube_vertex(1, 0, s), cube_vertex(1, 1, s), cube_vertex(0, 1, s)],
    }
}

/// Local edges of a triangle with sorted vertices.
pub const TRIANGLE_EDGES: [[usize; 2]; 3] = [[0, 1], [0, 2], [1, 2]];

fn canonical(verts: &[(usize, Shift)]) -> FaceKey {
    let base = verts[0].1;
    verts
        .iter()
        .map(|&(v, s)| (v, [s[0] - base[0], s[1] - base[1], s[2] - base[2]]))
        .collect()
}

struct Builder {
    keys: Vec<HashMap<FaceKey, usize>>,
    faces: Vec<Vec<Face>>,
}

impl Builder {
    fn new(dim: usize) -> Self {
        Builder {
            keys: vec![HashMap::new(); dim + 1],
            faces: vec![Vec::new(); dim + 1],
        }
    }

    fn intern(&mut self, p: usize, verts: &[(usize, Shift)]) -> usize {
        let key = canonical(verts);
        if let Some(&id) = self.keys[p].get(&key) {
            return id;
        }
        let id = self.faces[p].len();
        self.faces[p].push(Face {
            vertices: key.iter().map(|k| k.0).collect(),
            shifts: key.iter().map(|k| k.1).collect(),
        });
        self.keys[p].insert(key, id);
        id
    }

    fn lookup(&self, p: usize, verts: &[(usize, Shift)]) -> Option<usize> {
        self.keys[p].get(&canonical(verts)).copied()
    }
}

fn face_key(face: &Face) -> Vec<(usize, Shift)> {
    face.vertices.iter().copied().zip(face.shifts.iter().copied()).collect()
}

fn push_merged(row: &mut Vec<(usize, i8)>, id: usize, sign: i8) {
    if let Some(e) = row.iter_mut().find(|e| e.0 == id) {
        e.1 += sign;
    } else {
        row.push((id, sign));
    }
}

impl<T: Scalar> PeriodicMesh<T> {
    /// Assembles faces, incidence, and cell-to-face maps from top cells given
    /// as local vertex lists (sorted for simplices, `cube_vertex` order for
    /// cubes).
    fn from_cells(
        dimension: usize,
        periods: [T; 3],
        vertices: Vec<[T; 3]>,
        cell_kind: CellKind,
        lattice: Option<Lattice<T>>,
        cells: Vec<Vec<(usize, Shift)>>,
    ) -> Result<Self> {
        let mut b = Builder::new(dimension);
        for v in 0..vertices.len() {
            b.intern(0, &[(v, [0; 3])]);
        }
        let mut cell_faces = vec![vec![Vec::new(); cells.len()]; dimension + 1];
        for (ci, cell) in cells.iter().enumerate() {
            cell_faces[0][ci] = cell.iter().map(|v| v.0).collect();
            match cell_kind {
                CellKind::Simplex => {
                    for p in 1..=dimension {
                        for subset in subsets(cell.len(), p + 1) {
                            let verts: Vec<_> = subset.iter().map(|&i| cell[i]).collect();
                            let id = b.intern(p, &verts);
                            cell_faces[p][ci].push(id);
                        }
                    }
                }
                CellKind::Cube => {
                    for le in 0..12 {
                        let [a, c] = cube_edge_vertices(le);
                        cell_faces[1][ci].push(b.intern(1, &[cell[a], cell[c]]));
                    }
                    for ls in 0..6 {
                        let q = cube_square_vertices(ls);
                        let verts: Vec<_> = q.iter().map(|&i| cell[i]).collect();
                        cell_faces[2][ci].push(b.intern(2, &verts));
                    }
                    cell_faces[3][ci].push(b.intern(3, cell));
                }
            }
        }

        let mut incidence = vec![SignedIncidence { p: 0, entries: vec![Vec::new(); b.faces[0].len()] }];
        for p in 1..=dimension {
            let mut entries = Vec::with_capacity(b.faces[p].len());
            for face in &b.faces[p] {
                let verts = face_key(face);
                let mut row = Vec::new();
                let missing = || FeecError::DegenerateMesh(format!("boundary of a {p}-face is not registered"));
                match (cell_kind, p) {
                    (CellKind::Simplex, _) | (CellKind::Cube, 1) => {
                        for i in 0..verts.len() {
                            let mut sub = verts.clone();
                            sub.remove(i);
                            let id = b.lookup(p - 1, &sub).ok_or_else(missing)?;
                            push_merged(&mut row, id, if i % 2 == 0 { 1 } else { -1 });
                        }
                    }
                    (CellKind::Cube, 2) => {
                        for k in 0..4 {
                            let u = verts[k];
                            let w = verts[(k + 1) % 4];
                            if let Some(id) = b.lookup(1, &[u, w]) {
                                push_merged(&mut row, id, 1);
                            } else {
                                let id = b.lookup(1, &[w, u]).ok_or_else(missing)?;
                                push_merged(&mut row, id, -1);
                            }
                        }
                    }
                    (CellKind::Cube, _) => {
                        for ls in 0..6 {
                            let q = cube_square_vertices(ls);
                            let sub: Vec<_> = q.iter().map(|&i| verts[i]).collect();
                            let id = b.lookup(2, &sub).ok_or_else(missing)?;
                            push_merged(&mut row, id, if ls % 2 == 1 { 1 } else { -1 });
                        }
                    }
                }
                row.retain(|e| e.1 != 0);
                row.sort_unstable();
                entries.push(row);
            }
            incidence.push(SignedIncidence { p, entries });
        }

        Ok(PeriodicMesh {
            dimension,
            periods,
            vertices,
            cell_kind,
            lattice,
            faces: b.faces,
            incidence,
            cell_faces,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn periods(&self) -> &[T] {
        &self.periods[..self.dimension]
    }

    pub fn vertices(&self) -> &[[T; 3]] {
        &self.vertices
    }

    pub fn cell_kind(&self) -> CellKind {
        self.cell_kind
    }

    pub fn lattice(&self) -> Option<&Lattice<T>> {
        self.lattice.as_ref()
    }

    pub fn faces(&self, p: usize) -> &[Face] {
        &self.faces[p]
    }

    pub fn num_faces(&self, p: usize) -> usize {
        self.faces[p].len()
    }

    pub fn num_cells(&self) -> usize {
        self.faces[self.dimension].len()
    }

    /// Global ids of the local p-subfaces of a top cell, in the local
    /// ordering of its cell kind.
    pub fn cell_faces(&self, p: usize, cell: usize) -> &[usize] {
        &self.cell_faces[p][cell]
    }

    /// Position of a vertex translated by a period shift.
    pub fn image(&self, v: usize, shift: Shift) -> [T; 3] {
        let mut x = self.vertices[v];
        for (d, xd) in x.iter_mut().enumerate().take(self.dimension) {
            *xd += T::lit(shift[d] as f64) * self.periods[d];
        }
        x
    }

    /// Unwrapped coordinates of the vertices of a p-face.
    pub fn face_coords(&self, p: usize, id: usize) -> Vec<[T; 3]> {
        let f = &self.faces[p][id];
        f.vertices.iter().zip(&f.shifts).map(|(&v, &s)| self.image(v, s)).collect()
    }

    pub fn cell_coords(&self, cell: usize) -> Vec<[T; 3]> {
        self.face_coords(self.dimension, cell)
    }

    /// Orientation of a 2-D triangle relative to `dx^dy`.
    pub fn triangle_orientation(&self, cell: usize) -> T {
        let x = self.cell_coords(cell);
        let det = (x[1][0] - x[0][0]) * (x[2][1] - x[0][1]) - (x[1][1] - x[0][1]) * (x[2][0] - x[0][0]);
        det.signum()
    }

    pub fn boundary_incidence(&self, p: usize) -> Result<&SignedIncidence> {
        if p == 0 || p > self.dimension {
            return Err(FeecError::FaceDimension { p, dim: self.dimension });
        }
        Ok(&self.incidence[p])
    }

    /// Minimal-image displacement from `a` to `b`.
    pub fn periodic_delta(&self, a: [T; 3], b: [T; 3]) -> [T; 3] {
        let mut d = [T::zero(); 3];
        for k in 0..self.dimension {
            let l = self.periods[k];
            let mut x = b[k] - a[k];
            x -= (x / l).round() * l;
            d[k] = x;
        }
        d
    }

    pub fn periodic_distance(&self, a: [T; 3], b: [T; 3]) -> T {
        let d = self.periodic_delta(a, b);
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }

    /// Largest pairwise vertex distance over all cells.
    pub fn mesh_diameter(&self) -> T {
        let mut h = T::zero();
        for c in 0..self.num_cells() {
            let x = self.cell_coords(c);
            for i in 0..x.len() {
                for j in (i + 1)..x.len() {
                    h = h.max(dist(x[i], x[j]));
                }
            }
        }
        h
    }

    pub fn longest_edge(&self) -> T {
        (0..self.num_faces(1))
            .map(|e| {
                let x = self.face_coords(1, e);
                dist(x[0], x[1])
            })
            .fold(T::zero(), T::max)
    }

    /// Vertices minus edges plus faces minus ...
    pub fn euler_characteristic(&self) -> i64 {
        (0..=self.dimension)
            .map(|p| if p % 2 == 0 { 1 } else { -1 } * self.num_faces(p) as i64)
            .sum()
    }

    /// Smallest interior angle of any triangle, in degrees.
    pub fn min_angle_degrees(&self) -> T {
        let mut worst = T::lit(180.0);
        if self.cell_kind != CellKind::Simplex || self.dimension != 2 {
            return worst;
        }
        for c in 0..self.num_cells() {
            worst = worst.min(triangle_min_angle(&self.cell_coords(c)));
        }
        worst
    }

    /// Serializes `{dimension, periods, vertices, faces}`.
    pub fn to_json(&self) -> serde_json::Value {
        let dim = self.dimension;
        let vertices: Vec<Vec<f64>> = self.vertices.iter().map(|x| x[..dim].iter().map(|v| v.as_f64()).collect()).collect();
        let mut faces = serde_json::Map::new();
        for p in 1..=dim {
            let list: Vec<Vec<usize>> = self.faces[p].iter().map(|f| f.vertices.clone()).collect();
            faces.insert(p.to_string(), serde_json::to_value(list).expect("face lists serialize"));
        }
        serde_json::json!({
            "dimension": dim,
            "periods": self.periods[..dim].iter().map(|v| v.as_f64()).collect::<Vec<_>>(),
            "vertices": vertices,
            "faces": faces,
        })
    }
}

fn dist<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn triangle_min_angle<T: Scalar>(x: &[[T; 3]]) -> T {
    let mut worst = T::lit(180.0);
    for i in 0..3 {
        let a = x[i];
        let b = x[(i + 1) % 3];
        let c = x[(i + 2) % 3];
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        let cos = (u[0] * v[0] + u[1] * v[1]) / ((u[0] * u[0] + u[1] * u[1]).sqrt() * (v[0] * v[0] + v[1] * v[1]).sqrt());
        let ang = cos.max(-T::one()).min(T::one()).acos().to_degrees();
        worst = worst.min(ang);
    }
    worst
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Periodic cubical lattice with `nx*ny*nz` cells.
pub fn generate_cubical_lattice<T: Scalar>(counts: [usize; 3], spacings: [T; 3]) -> Result<PeriodicMesh<T>> {
    if counts.iter().any(|&n| n == 0) {
        return Err(FeecError::InvalidParameter(format!("cell counts must be positive, got {counts:?}")));
    }
    if spacings.iter().any(|&s| !(s > T::zero()) || !s.is_finite()) {
        return Err(FeecError::InvalidParameter("lattice spacings must be positive".into()));
    }
    let [nx, ny, nz] = counts;
    let vid = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
    let mut vertices = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                vertices.push([
                    T::from_count(i) * spacings[0],
                    T::from_count(j) * spacings[1],
                    T::from_count(k) * spacings[2],
                ]);
            }
        }
    }
    let mut cells = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut cell = vec![(0usize, [0i32; 3]); 8];
                for c in 0..2 {
                    for b in 0..2 {
                        for a in 0..2 {
                            let (gi, gj, gk) = (i + a, j + b, k + c);
                            let shift = [(gi / nx) as i32, (gj / ny) as i32, (gk / nz) as i32];
                            cell[cube_vertex(a, b, c)] = (vid(gi % nx, gj % ny, gk % nz), shift);
                        }
                    }
                }
                cells.push(cell);
            }
        }
    }
    let periods = [
        T::from_count(nx) * spacings[0],
        T::from_count(ny) * spacings[1],
        T::from_count(nz) * spacings[2],
    ];
    PeriodicMesh::from_cells(3, periods, vertices, CellKind::Cube, Some(Lattice { counts, spacings }), cells)
}

impl<T: Scalar> PeriodicMesh<T> {
    /// Linear index of lattice cell `(i, j, k)`; periodic wrap applied.
    pub fn lattice_cell(&self, i: isize, j: isize, k: isize) -> usize {
        let l = self.lattice.as_ref().expect("cubical lattice");
        let [nx, ny, nz] = l.counts.map(|n| n as isize);
        let (i, j, k) = (i.rem_euclid(nx), j.rem_euclid(ny), k.rem_euclid(nz));
        (i + nx * (j + ny * k)) as usize
    }

    /// Edge along `axis` starting at lattice vertex `(i, j, k)`.
    pub fn lattice_edge(&self, axis: usize, i: isize, j: isize, k: isize) -> usize {
        self.cell_faces[1][self.lattice_cell(i, j, k)][axis * 4]
    }

    /// Square with normal `axis` whose lowest corner is lattice vertex `(i, j, k)`.
    pub fn lattice_square(&self, normal: usize, i: isize, j: isize, k: isize) -> usize {
        self.cell_faces[2][self.lattice_cell(i, j, k)][normal * 2]
    }
}

/// Strategy for placing and connecting torus vertices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeshMethod {
    /// Uniform random points, periodic Delaunay via a 3x3 tiling.
    DelaunayTiled,
    /// Regular grid with uniform jitter of the given amplitude, in units of
    /// the grid spacing, each square split along its diagonal.
    StructuredJittered { jitter: f64 },
}

impl MeshMethod {
    pub fn name(&self) -> &'static str {
        match self {
            MeshMethod::DelaunayTiled => "delaunay-tiled",
            MeshMethod::StructuredJittered { .. } => "structured-jittered",
        }
    }
}

impl FromStr for MeshMethod {
    type Err = FeecError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delaunay-tiled" => Ok(MeshMethod::DelaunayTiled),
            "structured-jittered" => Ok(MeshMethod::StructuredJittered { jitter: 0.2 }),
            _ => match s.strip_prefix("structured-jittered:") {
                Some(a) => a
                    .parse::<f64>()
                    .map(|jitter| MeshMethod::StructuredJittered { jitter })
                    .map_err(|_| FeecError::Parse(format!("bad jitter in mesh method `{s}`"))),
                None => Err(FeecError::Parse(format!("unknown mesh method `{s}`"))),
            },
        }
    }
}

/// Minimum interior angle below which a triangulation is regenerated.
pub const MIN_ANGLE_DEGREES: f64 = 1.0;
const MAX_REGENERATIONS: usize = 200;

/// Periodic triangulation of `[0,lx) x [0,ly)`; deterministic for a seed.
pub fn generate_periodic_triangulation<T: Scalar>(
    n_vertices: usize,
    lx: T,
    ly: T,
    seed: u64,
    method: MeshMethod,
) -> Result<PeriodicMesh<T>> {
    if n_vertices < 4 {
        return Err(FeecError::InvalidParameter(format!("need at least 4 vertices, got {n_vertices}")));
    }
    if !(lx > T::zero() && ly > T::zero()) {
        return Err(FeecError::InvalidParameter("periods must be positive".into()));
    }
    let (lxf, lyf) = (lx.as_f64(), ly.as_f64());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match method {
        MeshMethod::StructuredJittered { jitter } => {
            if !(0.0..0.5).contains(&jitter) {
                return Err(FeecError::InvalidParameter(format!("jitter must lie in [0, 0.5), got {jitter}")));
            }
            let kx = ((n_vertices as f64 * lxf / lyf).sqrt().round() as usize).max(2);
            let ky = ((n_vertices as f64 / kx as f64).round() as usize).max(2);
            for _ in 0..MAX_REGENERATIONS {
                let mesh: PeriodicMesh<T> = structured(kx, ky, lxf, lyf, jitter, &mut rng)?;
                if mesh.min_angle_degrees().as_f64() >= MIN_ANGLE_DEGREES {
                    return Ok(mesh);
                }
            }
            Err(FeecError::DegenerateMesh("jittered grid keeps producing slivers".into()))
        }
        MeshMethod::DelaunayTiled => {
            let mut pts: Vec<[f64; 2]> = (0..n_vertices).map(|_| [rng.gen::<f64>() * lxf, rng.gen::<f64>() * lyf]).collect();
            let mut last_err = None;
            for _ in 0..MAX_REGENERATIONS {
                match delaunay_tiled::<T>(&pts, lxf, lyf) {
                    Ok(mesh) => {
                        let bad: Vec<usize> = (0..mesh.num_cells())
                            .filter(|&c| triangle_min_angle(&mesh.cell_coords(c)).as_f64() < MIN_ANGLE_DEGREES)
                            .flat_map(|c| mesh.cell_faces(0, c).to_vec())
                            .collect();
                        if bad.is_empty() {
                            return Ok(mesh);
                        }
                        for v in bad {
                            pts[v] = [rng.gen::<f64>() * lxf, rng.gen::<f64>() * lyf];
                        }
                        last_err = Some(FeecError::DegenerateMesh("sliver triangles persisted".into()));
                    }
                    Err(e) => {
                        // jitter everything slightly and retry
                        for p in &mut pts {
                            p[0] = (p[0] + 1e-3 * lxf * (rng.gen::<f64>() - 0.5)).rem_euclid(lxf);
                            p[1] = (p[1] + 1e-3 * lyf * (rng.gen::<f64>() - 0.5)).rem_euclid(lyf);
                        }
                        last_err = Some(e);
                    }
                }
            }
            Err(last_err.unwrap_or_else(|| FeecError::DegenerateMesh("no valid triangulation".into())))
        }
    }
}

fn wrap_point(x: f64, l: f64) -> (f64, i32) {
    let k = (x / l).floor();
    let mut w = x - k * l;
    let mut k = k as i32;
    if w >= l {
        w -= l;
        k += 1;
    }
    (w, k)
}

fn structured<T: Scalar>(kx: usize, ky: usize, lx: f64, ly: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Result<PeriodicMesh<T>> {
    let hx = lx / kx as f64;
    let hy = ly / ky as f64;
    let mut raw = Vec::with_capacity(kx * ky);
    for j in 0..ky {
        for i in 0..kx {
            let dx = if jitter > 0.0 { (rng.gen::<f64>() * 2.0 - 1.0) * jitter } else { 0.0 };
            let dy = if jitter > 0.0 { (rng.gen::<f64>() * 2.0 - 1.0) * jitter } else { 0.0 };
            raw.push([(i as f64 + dx) * hx, (j as f64 + dy) * hy]);
        }
    }
    let mut vertices = Vec::with_capacity(raw.len());
    let mut base_shift = Vec::with_capacity(raw.len());
    for p in &raw {
        let (x, sx) = wrap_point(p[0], lx);
        let (y, sy) = wrap_point(p[1], ly);
        vertices.push([T::lit(x), T::lit(y), T::zero()]);
        base_shift.push([sx, sy]);
    }
    let vid = |i: usize, j: usize| (i % kx) + kx * (j % ky);
    // shift of grid node (i, j) (i <= kx, j <= ky) relative to its stored vertex
    let node = |i: usize, j: usize| {
        let v = vid(i, j);
        let s = base_shift[v];
        (v, [s[0] + (i / kx) as i32, s[1] + (j / ky) as i32, 0])
    };
    let mut cells = Vec::with_capacity(2 * kx * ky);
    for j in 0..ky {
        for i in 0..kx {
            let a = node(i, j);
            let b = node(i + 1, j);
            let c = node(i + 1, j + 1);
            let d = node(i, j + 1);
            for mut tri in [vec![a, b, c], vec![a, c, d]] {
                tri.sort();
                cells.push(tri);
            }
        }
    }
    PeriodicMesh::from_cells(2, [T::lit(lx), T::lit(ly), T::one()], vertices, CellKind::Simplex, None, cells)
}

fn delaunay_tiled<T: Scalar>(pts: &[[f64; 2]], lx: f64, ly: f64) -> Result<PeriodicMesh<T>> {
    let n = pts.len();
    let mut tiled = Vec::with_capacity(9 * n);
    let mut origin = Vec::with_capacity(9 * n);
    for ty in -1i32..=1 {
        for tx in -1i32..=1 {
            for (v, p) in pts.iter().enumerate() {
                tiled.push(delaunator::Point { x: p[0] + tx as f64 * lx, y: p[1] + ty as f64 * ly });
                origin.push((v, [tx, ty, 0]));
            }
        }
    }
    let tri = delaunator::triangulate(&tiled);
    if tri.triangles.is_empty() {
        return Err(FeecError::DegenerateMesh("planar Delaunay produced no triangles".into()));
    }
    let mut cells = Vec::with_capacity(2 * n);
    for t in tri.triangles.chunks_exact(3) {
        let (a, b, c) = (&tiled[t[0]], &tiled[t[1]], &tiled[t[2]]);
        let Some((cx, cy)) = circumcenter([a.x, a.y], [b.x, b.y], [c.x, c.y]) else {
            continue;
        };
        if (0.0..lx).contains(&cx) && (0.0..ly).contains(&cy) {
            let mut cell: Vec<(usize, Shift)> = t.iter().map(|&i| origin[i]).collect();
            cell.sort();
            cells.push(cell);
        }
    }
    if cells.len() != 2 * n {
        return Err(FeecError::DegenerateMesh(format!(
            "periodic extraction produced {} triangles, expected {}",
            cells.len(),
            2 * n
        )));
    }
    let vertices = pts.iter().map(|p| [T::lit(p[0]), T::lit(p[1]), T::zero()]).collect();
    let mesh = PeriodicMesh::from_cells(2, [T::lit(lx), T::lit(ly), T::one()], vertices, CellKind::Simplex, None, cells)?;
    // every edge must border exactly two triangles
    let mut uses = vec![0usize; mesh.num_faces(1)];
    for c in 0..mesh.num_cells() {
        for &e in mesh.cell_faces(1, c) {
            uses[e] += 1;
        }
    }
    if uses.iter().any(|&u| u != 2) || mesh.euler_characteristic() != 0 {
        return Err(FeecError::DegenerateMesh("tiled triangulation is not a closed torus".into()));
    }
    Ok(mesh)
}

pub(crate) fn circumcenter(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<(f64, f64)> {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d == 0.0 {
        return None;
    }
    let a2 = a[0] * a[0] + a[1] * a[1];
    let b2 = b[0] * b[0] + b[1] * b[1];
    let c2 = c[0] * c[0] + c[1] * c[1];
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    Some((ux, uy))
}
