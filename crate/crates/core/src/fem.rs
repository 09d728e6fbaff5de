//! Linear finite elements: cotangent stiffness, lumped interior mass and
//! lumped boundary mass.
//!
//! In two dimensions the Dirichlet energy is invariant under conformal
//! rescaling, so the stiffness never depends on the conformal factor; only
//! the mass matrices do, and they are linear in it.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ConformalFactor, Support, TriMesh};
use crate::sparse::{SkylineCholesky, SparseSymMatrix};

/// Corner angles below this are rejected: the cotangent has lost all precision.
pub const MIN_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Laplace,
    Steklov,
}

impl ProblemKind {
    pub fn support(self) -> Support {
        match self {
            ProblemKind::Laplace => Support::Interior,
            ProblemKind::Steklov => Support::Boundary,
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(ProblemKind::Laplace),
            "steklov" => Ok(ProblemKind::Steklov),
            other => Err(Error::Config(format!("unknown problem kind {other:?}"))),
        }
    }
}

/// Cotangent-weight stiffness matrix; rows sum to zero.
pub fn assemble_stiffness(mesh: &TriMesh) -> Result<SparseSymMatrix> {
    let max_cot = 1.0 / MIN_ANGLE.tan();
    let mut trip = Vec::with_capacity(mesh.num_triangles() * 6 + mesh.num_vertices());
    let mut diag = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let cot = mesh.triangle_cotangents(t);
        for k in 0..3 {
            if !cot[k].is_finite() || cot[k].abs() > max_cot {
                let angle = (1.0 / cot[k]).atan().rem_euclid(std::f64::consts::PI);
                return Err(Error::DegenerateTriangle {
                    triangle: t,
                    angle: angle.min(std::f64::consts::PI - angle),
                });
            }
            // corner k is opposite edge (k+1, k+2)
            let (a, b) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
            let w = 0.5 * cot[k];
            trip.push((a.min(b), a.max(b), -w));
            diag[a] += w;
            diag[b] += w;
        }
    }
    for (v, d) in diag.into_iter().enumerate() {
        trip.push((v, v, d));
    }
    Ok(SparseSymMatrix::from_triplets(mesh.num_vertices(), &trip))
}

/// Lumped vertex areas `(1/3) Σ area(T)` over incident triangles.
pub fn vertex_areas(mesh: &TriMesh) -> Vec<f64> {
    let mut a = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let third = mesh.triangle_area(t) / 3.0;
        for &v in tri {
            a[v] += third;
        }
    }
    a
}

/// Lumped boundary lengths `(1/2) Σ length(e)` over incident boundary edges;
/// zero for interior vertices.
pub fn boundary_lengths(mesh: &TriMesh) -> Vec<f64> {
    let mut b = vec![0.0; mesh.num_vertices()];
    for [u, v] in mesh.boundary_edges() {
        let half = 0.5 * mesh.edge_length(mesh.edge_index(u, v).expect("boundary edge"));
        b[u] += half;
        b[v] += half;
    }
    b
}

fn check_factor(mesh: &TriMesh, f: &ConformalFactor, support: Support) -> Result<()> {
    if f.len() != mesh.num_vertices() {
        return Err(Error::InvalidInput(format!(
            "conformal factor has {} values for {} vertices",
            f.len(),
            mesh.num_vertices()
        )));
    }
    if f.support() != support {
        return Err(Error::InvalidInput(format!(
            "expected a {support:?}-supported factor, got {:?}",
            f.support()
        )));
    }
    Ok(())
}

/// Diagonal mass of `f·dA`: entry `v` is `f_v` times the lumped area of `v`.
pub fn assemble_mass(mesh: &TriMesh, f: &ConformalFactor) -> Result<SparseSymMatrix> {
    check_factor(mesh, f, Support::Interior)?;
    let a = vertex_areas(mesh);
    let d: Vec<f64> = a.iter().zip(f.values()).map(|(a, f)| a * f).collect();
    Ok(SparseSymMatrix::from_diagonal(&d))
}

/// Diagonal mass of `f·dL` on the boundary; interior rows are zero.
pub fn assemble_boundary_mass(mesh: &TriMesh, f: &ConformalFactor) -> Result<SparseSymMatrix> {
    if !mesh.has_boundary() {
        return Err(Error::NoBoundary);
    }
    check_factor(mesh, f, Support::Boundary)?;
    let b = boundary_lengths(mesh);
    let d: Vec<f64> = b.iter().zip(f.values()).map(|(b, f)| b * f).collect();
    Ok(SparseSymMatrix::from_diagonal(&d))
}

/// A generalized eigenproblem `K φ = λ M φ` (Laplace) or `K φ = σ B φ` (Steklov).
#[derive(Debug, Clone)]
pub struct SpectralProblem {
    pub kind: ProblemKind,
    pub stiffness: Arc<SparseSymMatrix>,
    /// Diagonal of `M(f)` or `B(f)`.
    pub mass: Vec<f64>,
    /// Area(f) or Length(f); equals the sum of `mass`.
    pub total_measure: f64,
    /// Boundary elimination data, attached for Steklov problems built by a
    /// [`Discretization`].
    pub schur: Option<Arc<SchurComplement>>,
}

impl SpectralProblem {
    pub fn mass_matrix(&self) -> SparseSymMatrix {
        SparseSymMatrix::from_diagonal(&self.mass)
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }
}

/// Dense Dirichlet-to-Neumann data for the Steklov problem.
#[derive(Debug, Clone)]
pub struct SchurComplement {
    /// Boundary vertices, ascending.
    pub boundary: Vec<usize>,
    /// Interior vertices, ascending.
    pub interior: Vec<usize>,
    /// `S = K_bb - K_bi K_ii⁻¹ K_ib`, row-major `nb × nb`.
    pub dtn: nalgebra::DMatrix<f64>,
    /// `X = K_ii⁻¹ K_ib`; the harmonic extension of `φ_b` is `-X φ_b`.
    pub extension: nalgebra::DMatrix<f64>,
}

/// Everything about a mesh that does not depend on the conformal factor.
#[derive(Debug)]
pub struct Discretization {
    mesh: Arc<TriMesh>,
    stiffness: Arc<SparseSymMatrix>,
    vertex_areas: Vec<f64>,
    boundary_lengths: Vec<f64>,
    schur: OnceLock<std::result::Result<Arc<SchurComplement>, String>>,
}

impl Discretization {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        Self::from_arc(Arc::new(mesh))
    }

    pub fn from_arc(mesh: Arc<TriMesh>) -> Result<Self> {
        let stiffness = Arc::new(assemble_stiffness(&mesh)?);
        let vertex_areas = vertex_areas(&mesh);
        let boundary_lengths = boundary_lengths(&mesh);
        Ok(Discretization {
            mesh,
            stiffness,
            vertex_areas,
            boundary_lengths,
            schur: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> Arc<TriMesh> {
        self.mesh.clone()
    }

    pub fn stiffness(&self) -> &Arc<SparseSymMatrix> {
        &self.stiffness
    }

    pub fn vertex_areas(&self) -> &[f64] {
        &self.vertex_areas
    }

    pub fn boundary_lengths(&self) -> &[f64] {
        &self.boundary_lengths
    }

    pub fn num_vertices(&self) -> usize {
        self.vertex_areas.len()
    }

    /// Background lumped weights for the given kind (areas or boundary lengths).
    pub fn base_weights(&self, kind: ProblemKind) -> &[f64] {
        match kind {
            ProblemKind::Laplace => &self.vertex_areas,
            ProblemKind::Steklov => &self.boundary_lengths,
        }
    }

    /// Vertices carrying measure for the given kind.
    pub fn support_vertices(&self, kind: ProblemKind) -> Vec<usize> {
        match kind {
            ProblemKind::Laplace => (0..self.num_vertices()).collect(),
            ProblemKind::Steklov => self.mesh.boundary_vertices(),
        }
    }

    pub fn problem(&self, kind: ProblemKind, f: &ConformalFactor) -> Result<SpectralProblem> {
        if kind == ProblemKind::Steklov && !self.mesh.has_boundary() {
            return Err(Error::NoBoundary);
        }
        check_factor(&self.mesh, f, kind.support())?;
        let mass: Vec<f64> = self
            .base_weights(kind)
            .iter()
            .zip(f.values())
            .map(|(w, f)| w * f)
            .collect();
        let total_measure = mass.iter().sum();
        let schur = match kind {
            ProblemKind::Steklov => Some(self.schur()?),
            ProblemKind::Laplace => None,
        };
        Ok(SpectralProblem {
            kind,
            stiffness: self.stiffness.clone(),
            mass,
            total_measure,
            schur,
        })
    }

    /// Schur complement of the stiffness onto the boundary, computed once.
    pub fn schur(&self) -> Result<Arc<SchurComplement>> {
        if !self.mesh.has_boundary() {
            return Err(Error::NoBoundary);
        }
        self.schur
            .get_or_init(|| {
                build_schur(&self.stiffness, &self.mesh.boundary_vertices())
                    .map(Arc::new)
                    .map_err(|e| e.to_string())
            })
            .clone()
            .map_err(Error::InvalidInput)
    }
}

/// Eliminates every vertex not in `boundary` (ascending) from `k`.
pub fn build_schur(k: &SparseSymMatrix, boundary: &[usize]) -> Result<SchurComplement> {
    let n = k.dim();
    let boundary = boundary.to_vec();
    let nb = boundary.len();
    let mut bpos = vec![usize::MAX; n];
    for (i, &v) in boundary.iter().enumerate() {
        bpos[v] = i;
    }
    let interior: Vec<usize> = (0..n).filter(|&v| bpos[v] == usize::MAX).collect();
    let ni = interior.len();
    let mut ipos = vec![usize::MAX; n];
    for (i, &v) in interior.iter().enumerate() {
        ipos[v] = i;
    }
    let mut dtn = nalgebra::DMatrix::<f64>::zeros(nb, nb);
    for (a, &v) in boundary.iter().enumerate() {
        for (w, val) in k.row(v) {
            if bpos[w] != usize::MAX {
                dtn[(a, bpos[w])] = val;
            }
        }
    }
    let mut extension = nalgebra::DMatrix::<f64>::zeros(ni, nb);
    if ni > 0 {
        let kii = k.submatrix(&interior);
        let chol = SkylineCholesky::factor(&kii)?;
        let mut col = vec![0.0; ni];
        for (a, &v) in boundary.iter().enumerate() {
            col.iter_mut().for_each(|x| *x = 0.0);
            for (w, val) in k.row(v) {
                if ipos[w] != usize::MAX {
                    col[ipos[w]] = val;
                }
            }
            chol.solve_in_place(&mut col);
            for i in 0..ni {
                extension[(i, a)] = col[i];
            }
        }
        // S -= K_bi X
        for (a, &v) in boundary.iter().enumerate() {
            for (w, val) in k.row(v) {
                let i = ipos[w];
                if i != usize::MAX {
                    for c in 0..nb {
                        dtn[(a, c)] -= val * extension[(i, c)];
                    }
                }
            }
        }
        // symmetrize rounding noise
        let t = dtn.transpose();
        dtn = (&dtn + &t) * 0.5;
    }
    Ok(SchurComplement {
        boundary,
        interior,
        dtn,
        extension,
    })
}
