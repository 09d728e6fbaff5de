//! Triangulated surfaces, conformal factors and the mesh-level queries the
//! rest of the pipeline relies on.
//!
//! A [`TriMesh`] is validated on construction: every triangle references three
//! distinct vertices, every edge is shared by at most two triangles with
//! opposite orientations, no triangle is degenerate, and boundary edges are
//! chained into loops. Geometry is taken from vertex positions, or from
//! per-triangle intrinsic edge lengths for surfaces that have no isometric
//! embedding in three dimensions (the flat torus).

mod off;
pub mod shapes;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub use off::{parse_off, write_off};

/// Triangle areas below this fraction of the squared mesh scale are rejected.
const MIN_RELATIVE_AREA: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct TriMesh {
    positions: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    /// Length of the edge opposite each corner, when the metric is intrinsic.
    intrinsic: Option<Vec<[f64; 3]>>,
    edges: Vec<[usize; 2]>,
    edge_lengths: Vec<f64>,
    /// Per vertex: (neighbor, edge index), sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    boundary_loops: Vec<Vec<usize>>,
    on_boundary: Vec<bool>,
}

impl TriMesh {
    /// Builds an embedded mesh whose metric is induced by the vertex positions.
    pub fn new(positions: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        Self::build(positions, triangles, None)
    }

    /// Builds a mesh whose metric is given by intrinsic edge lengths.
    ///
    /// `lengths[t][i]` is the length of the edge of triangle `t` opposite its
    /// corner `i`. Positions are kept for display and export only.
    pub fn with_intrinsic_lengths(
        positions: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        lengths: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if lengths.len() != triangles.len() {
            return Err(Error::InvalidInput(format!(
                "{} intrinsic length triples for {} triangles",
                lengths.len(),
                triangles.len()
            )));
        }
        for (t, l) in lengths.iter().enumerate() {
            let ok = l.iter().all(|x| x.is_finite() && *x > 0.0)
                && l[0] < l[1] + l[2]
                && l[1] < l[0] + l[2]
                && l[2] < l[0] + l[1];
            if !ok {
                return Err(Error::Topology(format!(
                    "triangle {t} violates the triangle inequality: {l:?}"
                )));
            }
        }
        Self::build(positions, triangles, Some(lengths))
    }

    fn build(
        positions: Vec<[f64; 3]>,
        triangles: Vec<[usize; 3]>,
        intrinsic: Option<Vec<[f64; 3]>>,
    ) -> Result<Self> {
        let n = positions.len();
        if triangles.is_empty() {
            return Err(Error::Topology("mesh has no triangles".into()));
        }
        if positions.iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::InvalidInput("non-finite vertex position".into()));
        }
        let mut referenced = vec![false; n];
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::Topology(format!(
                        "triangle {t} references vertex {v} but the mesh has {n} vertices"
                    )));
                }
                referenced[v] = true;
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Topology(format!(
                    "triangle {t} repeats a vertex: {tri:?}"
                )));
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(Error::Topology(format!(
                "vertex {v} is not referenced by any triangle"
            )));
        }

        // Undirected edge multiplicity first, then orientation of shared edges.
        let mut undirected: HashMap<[usize; 2], usize> = HashMap::new();
        for tri in &triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *undirected.entry([a.min(b), a.max(b)]).or_default() += 1;
            }
        }
        if let Some((e, c)) = undirected.iter().find(|(_, c)| **c > 2) {
            return Err(Error::Topology(format!(
                "non-manifold edge {e:?} shared by {c} triangles"
            )));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let key = (tri[k], tri[(k + 1) % 3]);
                if let Some(other) = directed.insert(key, t) {
                    return Err(Error::Topology(format!(
                        "inconsistent orientation: edge {key:?} traversed in the same direction by triangles {other} and {t}"
                    )));
                }
            }
        }

        let mut edges: Vec<[usize; 2]> = undirected.keys().copied().collect();
        edges.sort_unstable();

        // Boundary half-edges a -> b have no twin b -> a.
        let mut next_on_boundary: HashMap<usize, usize> = HashMap::new();
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) && next_on_boundary.insert(a, b).is_some() {
                return Err(Error::Topology(format!(
                    "non-manifold boundary vertex {a}"
                )));
            }
        }
        let mut on_boundary = vec![false; n];
        let mut starts: Vec<usize> = next_on_boundary.keys().copied().collect();
        starts.sort_unstable();
        let mut visited = vec![false; n];
        let mut boundary_loops = Vec::new();
        for s in starts {
            if visited[s] {
                continue;
            }
            let mut lp = vec![s];
            visited[s] = true;
            on_boundary[s] = true;
            let mut cur = next_on_boundary[&s];
            while cur != s {
                if visited[cur] {
                    return Err(Error::Topology(format!(
                        "boundary passes twice through vertex {cur}"
                    )));
                }
                visited[cur] = true;
                on_boundary[cur] = true;
                lp.push(cur);
                cur = *next_on_boundary.get(&cur).ok_or_else(|| {
                    Error::Topology(format!("open boundary chain at vertex {cur}"))
                })?;
            }
            boundary_loops.push(lp);
        }

        let mut mesh = TriMesh {
            positions,
            triangles,
            intrinsic,
            edges,
            edge_lengths: Vec::new(),
            adjacency: vec![Vec::new(); n],
            boundary_loops,
            on_boundary,
        };
        mesh.edge_lengths = mesh.compute_edge_lengths()?;
        for (e, &[a, b]) in mesh.edges.iter().enumerate() {
            mesh.adjacency[a].push((b, e));
            mesh.adjacency[b].push((a, e));
        }
        for adj in &mut mesh.adjacency {
            adj.sort_unstable();
        }

        let scale = mesh.scale();
        for t in 0..mesh.triangles.len() {
            let area = mesh.triangle_area(t);
            if !(area > MIN_RELATIVE_AREA * scale * scale) {
                return Err(Error::Topology(format!(
                    "triangle {t} has (near) zero area {area:e}"
                )));
            }
        }
        Ok(mesh)
    }

    fn compute_edge_lengths(&self) -> Result<Vec<f64>> {
        let index: HashMap<[usize; 2], usize> = self
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| (*e, i))
            .collect();
        let mut lengths = vec![f64::NAN; self.edges.len()];
        for t in 0..self.triangles.len() {
            let tri = self.triangles[t];
            let l = self.triangle_edge_lengths(t);
            for k in 0..3 {
                let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let e = index[&[a.min(b), a.max(b)]];
                if lengths[e].is_nan() {
                    lengths[e] = l[k];
                } else if (lengths[e] - l[k]).abs() > 1e-9 * lengths[e].max(l[k]) {
                    return Err(Error::Topology(format!(
                        "intrinsic lengths disagree on edge ({a}, {b}): {} vs {}",
                        lengths[e], l[k]
                    )));
                }
            }
        }
        Ok(lengths)
    }

    pub fn load_off(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (positions, triangles) = parse_off(&text)?;
        Self::new(positions, triangles)
    }

    pub fn save_off(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, write_off(&self.positions, &self.triangles))
            .map_err(|e| Error::io(path, e))
    }

    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        self.edge_lengths[e]
    }

    pub fn is_intrinsic(&self) -> bool {
        self.intrinsic.is_some()
    }

    /// Neighbors of `v` with the connecting edge index.
    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn boundary_loops(&self) -> &[Vec<usize>] {
        &self.boundary_loops
    }

    pub fn has_boundary(&self) -> bool {
        !self.boundary_loops.is_empty()
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.on_boundary[v]
    }

    /// Boundary vertices in ascending index order.
    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices())
            .filter(|&v| self.on_boundary[v])
            .collect()
    }

    /// Boundary edges as (a, b) following the loop orientation.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        self.boundary_loops
            .iter()
            .flat_map(|lp| (0..lp.len()).map(move |i| [lp[i], lp[(i + 1) % lp.len()]]))
            .collect()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices() as i64 - self.num_edges() as i64 + self.num_triangles() as i64
    }

    /// Genus from χ = 2 - 2g - b, assuming a connected orientable surface.
    pub fn genus(&self) -> i64 {
        (2 - self.euler_characteristic() - self.boundary_loops.len() as i64) / 2
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_vertices();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(w, _) in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    }

    /// Characteristic length: bounding-box diagonal, or the longest edge for
    /// intrinsic meshes.
    pub fn scale(&self) -> f64 {
        if self.intrinsic.is_some() {
            return self.edge_lengths.iter().cloned().fold(0.0, f64::max);
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2) + (hi[2] - lo[2]).powi(2)).sqrt()
    }

    /// Lengths of the edges opposite corners 0, 1, 2 of triangle `t`.
    pub fn triangle_edge_lengths(&self, t: usize) -> [f64; 3] {
        if let Some(l) = &self.intrinsic {
            return l[t];
        }
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.positions[a], self.positions[b], self.positions[c]);
        [norm(sub(pc, pb)), norm(sub(pa, pc)), norm(sub(pb, pa))]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        match &self.intrinsic {
            Some(l) => heron(l[t]),
            None => {
                let [a, b, c] = self.triangles[t];
                let p = &self.positions;
                0.5 * norm(cross(sub(p[b], p[a]), sub(p[c], p[a])))
            }
        }
    }

    /// Cotangents of the three corner angles of triangle `t`.
    pub fn triangle_cotangents(&self, t: usize) -> [f64; 3] {
        match &self.intrinsic {
            Some(l) => {
                let l = l[t];
                let four_area = 4.0 * heron(l);
                let sq = [l[0] * l[0], l[1] * l[1], l[2] * l[2]];
                [
                    (sq[1] + sq[2] - sq[0]) / four_area,
                    (sq[2] + sq[0] - sq[1]) / four_area,
                    (sq[0] + sq[1] - sq[2]) / four_area,
                ]
            }
            None => {
                let tri = self.triangles[t];
                let p = &self.positions;
                let mut out = [0.0; 3];
                for k in 0..3 {
                    let o = p[tri[k]];
                    let u = sub(p[tri[(k + 1) % 3]], o);
                    let v = sub(p[tri[(k + 2) % 3]], o);
                    out[k] = dot(u, v) / norm(cross(u, v));
                }
                out
            }
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn boundary_length(&self) -> f64 {
        self.boundary_edges()
            .iter()
            .map(|&[a, b]| self.edge_length(self.edge_index(a, b).expect("boundary edge")))
            .sum()
    }

    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .binary_search_by(|probe| probe.0.cmp(&b))
            .ok()
            .map(|i| self.adjacency[a][i].1)
    }

    /// 1→4 midpoint subdivision applied `levels` times. With `sphere_project`
    /// every vertex is pushed radially onto the unit sphere after each level.
    pub fn refine(&self, levels: usize, sphere_project: bool) -> Result<TriMesh> {
        if sphere_project && self.intrinsic.is_some() {
            return Err(Error::InvalidInput(
                "sphere projection needs an embedded mesh".into(),
            ));
        }
        let mut mesh = self.clone();
        for _ in 0..levels {
            mesh = mesh.subdivide_once(sphere_project)?;
        }
        Ok(mesh)
    }

    fn subdivide_once(&self, sphere_project: bool) -> Result<TriMesh> {
        let n = self.num_vertices();
        let mut positions = self.positions.clone();
        let mut midpoint: HashMap<[usize; 2], usize> = HashMap::new();
        for &[a, b] in &self.edges {
            midpoint.insert([a, b], positions.len());
            let (pa, pb) = (self.positions[a], self.positions[b]);
            positions.push([
                0.5 * (pa[0] + pb[0]),
                0.5 * (pa[1] + pb[1]),
                0.5 * (pa[2] + pb[2]),
            ]);
        }
        let mid = |a: usize, b: usize| midpoint[&[a.min(b), a.max(b)]];
        let mut triangles = Vec::with_capacity(4 * self.num_triangles());
        let mut lengths = self.intrinsic.as_ref().map(|_| Vec::new());
        for (t, &[v0, v1, v2]) in self.triangles.iter().enumerate() {
            let (m01, m12, m20) = (mid(v0, v1), mid(v1, v2), mid(v2, v0));
            triangles.push([v0, m01, m20]);
            triangles.push([v1, m12, m01]);
            triangles.push([v2, m20, m12]);
            triangles.push([m01, m12, m20]);
            if let Some(out) = lengths.as_mut() {
                let l = self.intrinsic.as_ref().unwrap()[t];
                let h = [0.5 * l[0], 0.5 * l[1], 0.5 * l[2]];
                out.push([h[0], h[1], h[2]]);
                out.push([h[1], h[2], h[0]]);
                out.push([h[2], h[0], h[1]]);
                out.push([h[2], h[0], h[1]]);
            }
        }
        if sphere_project {
            for p in positions.iter_mut() {
                let r = norm(*p);
                *p = [p[0] / r, p[1] / r, p[2] / r];
            }
        }
        debug_assert_eq!(positions.len(), n + self.num_edges());
        match lengths {
            Some(l) => TriMesh::with_intrinsic_lengths(positions, triangles, l),
            None => TriMesh::new(positions, triangles),
        }
    }

    /// Graph-geodesic distances from `center` (Dijkstra over edge lengths).
    ///
    /// With a metric factor `f`, each edge length is multiplied by the mean of
    /// `sqrt(f)` at its endpoints, which is the length element of `f·g`.
    pub fn graph_distances(&self, center: usize, metric_factor: Option<&ConformalFactor>) -> Vec<f64> {
        let n = self.num_vertices();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        dist[center] = 0.0;
        heap.push(HeapItem { dist: 0.0, vertex: center });
        while let Some(HeapItem { dist: d, vertex: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(w, e) in &self.adjacency[v] {
                let mut len = self.edge_lengths[e];
                if let Some(f) = metric_factor {
                    len *= 0.5 * (f.values()[v].sqrt() + f.values()[w].sqrt());
                }
                let nd = d + len;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(HeapItem { dist: nd, vertex: w });
                }
            }
        }
        dist
    }

    /// Vertices within graph-geodesic distance `radius` of `center`, sorted.
    pub fn geodesic_ball(
        &self,
        center: usize,
        radius: f64,
        metric_factor: Option<&ConformalFactor>,
    ) -> Result<Vec<usize>> {
        if center >= self.num_vertices() {
            return Err(Error::InvalidInput(format!("center vertex {center} out of range")));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
        }
        let dist = self.graph_distances(center, metric_factor);
        let ball: Vec<usize> = (0..self.num_vertices()).filter(|&v| dist[v] <= radius).collect();
        if ball.len() <= 1 {
            return Err(Error::EmptyBall { center, radius });
        }
        Ok(ball)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    vertex: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by vertex index for determinism
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Where a conformal factor acts: on the whole surface (Laplace) or on the
/// boundary only (Steklov).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Support {
    Interior,
    Boundary,
}

/// Strictly positive per-vertex density `f = e^{2u}`.
///
/// Values are stored for every vertex. With [`Support::Boundary`] only the
/// boundary entries are meaningful; interior entries are kept at whatever the
/// caller supplied and never enter an assembled operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalFactor {
    values: Vec<f64>,
    support: Support,
}

impl ConformalFactor {
    pub fn new(values: Vec<f64>, support: Support) -> Result<Self> {
        if let Some((v, x)) = values
            .iter()
            .enumerate()
            .find(|(_, x)| !(x.is_finite() && **x > 0.0))
        {
            return Err(Error::InvalidInput(format!(
                "conformal factor must be finite and positive; vertex {v} has {x}"
            )));
        }
        Ok(ConformalFactor { values, support })
    }

    /// Same as [`ConformalFactor::new`] but also enforces a positive floor.
    pub fn with_floor(values: Vec<f64>, support: Support, floor: f64) -> Result<Self> {
        if let Some((v, x)) = values.iter().enumerate().find(|(_, x)| **x < floor) {
            return Err(Error::InvalidInput(format!(
                "conformal factor below floor {floor} at vertex {v}: {x}"
            )));
        }
        Self::new(values, support)
    }

    pub fn uniform(mesh: &TriMesh, support: Support, value: f64) -> Result<Self> {
        Self::new(vec![value; mesh.num_vertices()], support)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|x| c * x).collect(), self.support)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable Heron formula (Kahan).
fn heron(l: [f64; 3]) -> f64 {
    let mut s = l;
    s.sort_by(|a, b| b.total_cmp(a));
    let (a, b, c) = (s[0], s[1], s[2]);
    let p = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    0.25 * p.max(0.0).sqrt()
}
