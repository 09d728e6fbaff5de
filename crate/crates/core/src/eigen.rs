//! Lowest eigenpairs of the Laplace and Steklov pencils.
//!
//! Both solvers work internally with the mass normalized to total measure 1,
//! so the iteration sees the same matrices (up to rounding) for `f` and `c·f`
//! and returns renormalized eigenvalues directly. The constant mode is
//! deflated and pinned to eigenvalue 0.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{build_schur, ProblemKind, SchurComplement, SpectralProblem};
use crate::sparse::{SkylineCholesky, SparseSymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Residual target, relative to `max(1, λ̄)` in renormalized units.
    pub eig_tol: f64,
    pub max_iter: usize,
    /// Extra block vectors beyond the requested count.
    pub guard: usize,
    pub seed: u64,
    pub cluster_tol: f64,
    /// Problems up to this dimension are solved densely.
    pub dense_threshold: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eig_tol: 1e-8,
            max_iter: 1000,
            guard: 4,
            seed: 0x5eed,
            cluster_tol: 1e-3,
            dense_threshold: 300,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eig_tol > 0.0) || !(self.cluster_tol >= 0.0) || self.max_iter == 0 {
            return Err(Error::Config(
                "solver: eig_tol must be > 0, cluster_tol ≥ 0 and max_iter ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Computed eigenpairs, ascending, with multiplicity clusters.
#[derive(Debug, Clone)]
pub struct EigenPackage {
    pub kind: ProblemKind,
    pub values: Vec<f64>,
    /// `λ_k · Area(f)` or `σ_k · Length(f)`.
    pub renormalized: Vec<f64>,
    /// Columns are eigenvectors over all vertices, `φᵀ M φ = 1`.
    pub vectors: DMatrix<f64>,
    /// Contiguous index groups, from the renormalized values.
    pub clusters: Vec<Vec<usize>>,
    /// `‖Kφ − λMφ‖_{M⁻¹} / ‖φ‖_M` scaled by the total measure.
    pub residuals: Vec<f64>,
    pub total_measure: f64,
    pub iterations: usize,
    pub eig_tol: f64,
}

impl EigenPackage {
    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i).iter().copied().collect()
    }

    /// The cluster holding index `i`.
    pub fn cluster_of(&self, i: usize) -> &[usize] {
        self.clusters
            .iter()
            .find(|c| c.contains(&i))
            .map(Vec::as_slice)
            .expect("index within computed range")
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |a, &b| a.max(b))
    }

    pub fn recluster(&mut self, cluster_tol: f64) {
        self.clusters = cluster_eigenvalues(&self.renormalized, cluster_tol);
    }
}

/// Groups consecutive values with `v[i+1] − v[i] ≤ tol·max(1, v[i+1])`.
pub fn cluster_eigenvalues(values: &[f64], cluster_tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(last) if v - values[i - 1] <= cluster_tol * v.max(1.0) => last.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

/// Dispatches on the problem kind.
pub fn solve(problem: &SpectralProblem, count: usize, opts: &SolverOptions) -> Result<EigenPackage> {
    match problem.kind {
        ProblemKind::Laplace => solve_laplace(problem, count, opts),
        ProblemKind::Steklov => solve_steklov(problem, count, opts),
    }
}

pub fn solve_laplace(problem: &SpectralProblem, count: usize, opts: &SolverOptions) -> Result<EigenPackage> {
    solve_laplace_warm(problem, count, opts, None)
}

/// Laplace solve seeded with previous eigenvectors (columns, any scaling).
pub fn solve_laplace_warm(
    problem: &SpectralProblem,
    count: usize,
    opts: &SolverOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<EigenPackage> {
    opts.validate()?;
    if problem.kind != ProblemKind::Laplace {
        return Err(Error::InvalidInput("solve_laplace needs a Laplace problem".into()));
    }
    let n = problem.dim();
    if count == 0 || count > n {
        return Err(Error::InvalidInput(format!("count {count} outside 1..={n}")));
    }
    let total = problem.total_measure;
    let m: Vec<f64> = problem.mass.iter().map(|x| x / total).collect();
    let k = &*problem.stiffness;

    let (mu, xhat, iterations) = if n <= opts.dense_threshold || count + opts.guard + 1 >= n / 3 {
        let (vals, vecs) = dense_generalized(&k.to_dense(), &m)?;
        let mut vecs = vecs.columns(0, count).into_owned();
        let mut vals = vals[..count].to_vec();
        pin_constant(&mut vals, &mut vecs, &m);
        (vals, vecs, 0)
    } else {
        let out = lobpcg(k, &m, count - 1, true, 1.0, opts, warm)?;
        let mut vecs = DMatrix::zeros(n, count);
        vecs.column_mut(0).fill(1.0);
        vecs.columns_mut(1, count - 1).copy_from(&out.vectors.columns(0, count - 1));
        let mut vals = vec![0.0];
        vals.extend_from_slice(&out.values[..count - 1]);
        (vals, vecs, out.iterations)
    };
    let residuals: Vec<f64> = (0..count)
        .map(|j| residual(k, &m, mu[j], xhat.column(j).as_slice()))
        .collect();
    package(problem.kind, mu, xhat, residuals, total, iterations, opts)
}

pub fn solve_steklov(problem: &SpectralProblem, count: usize, opts: &SolverOptions) -> Result<EigenPackage> {
    opts.validate()?;
    if problem.kind != ProblemKind::Steklov {
        return Err(Error::InvalidInput("solve_steklov needs a Steklov problem".into()));
    }
    let schur: Arc<SchurComplement> = match &problem.schur {
        Some(s) => s.clone(),
        None => {
            let boundary: Vec<usize> = (0..problem.dim()).filter(|&v| problem.mass[v] > 0.0).collect();
            if boundary.is_empty() {
                return Err(Error::NoBoundary);
            }
            Arc::new(build_schur(&problem.stiffness, &boundary)?)
        }
    };
    let nb = schur.boundary.len();
    if count == 0 || count > nb {
        return Err(Error::InvalidInput(format!("count {count} outside 1..={nb}")));
    }
    let total = problem.total_measure;
    let mb: Vec<f64> = schur.boundary.iter().map(|&v| problem.mass[v] / total).collect();
    if mb.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("boundary mass must be positive on every boundary vertex".into()));
    }
    let (vals, vecs) = dense_generalized(&schur.dtn, &mb)?;
    let mut yb = vecs.columns(0, count).into_owned();
    let mut mu = vals[..count].to_vec();
    pin_constant(&mut mu, &mut yb, &mb);
    let residuals: Vec<f64> = (0..count)
        .map(|j| {
            let x = yb.column(j);
            let r = &schur.dtn * x - DVector::from_iterator(nb, x.iter().zip(&mb).map(|(x, m)| mu[j] * m * x));
            let num: f64 = r.iter().zip(&mb).map(|(r, m)| r * r / m).sum();
            num.sqrt()
        })
        .collect();
    // harmonic extension into the interior
    let n = problem.dim();
    let interior_vals = -(&schur.extension * &yb);
    let mut full = DMatrix::zeros(n, count);
    for (a, &v) in schur.boundary.iter().enumerate() {
        full.row_mut(v).copy_from(&yb.row(a));
    }
    for (i, &v) in schur.interior.iter().enumerate() {
        full.row_mut(v).copy_from(&interior_vals.row(i));
    }
    package(problem.kind, mu, full, residuals, total, 0, opts)
}

fn package(
    kind: ProblemKind,
    mu: Vec<f64>,
    xhat: DMatrix<f64>,
    residuals_hat: Vec<f64>,
    total: f64,
    iterations: usize,
    opts: &SolverOptions,
) -> Result<EigenPackage> {
    let worst = residuals_hat
        .iter()
        .zip(&mu)
        .map(|(r, m)| r / m.max(1.0))
        .fold(0.0, f64::max);
    if !(worst <= opts.eig_tol) {
        return Err(Error::NoConvergence {
            iterations,
            worst_residual: worst,
        });
    }
    let values: Vec<f64> = mu.iter().map(|m| m / total).collect();
    let vectors = xhat / total.sqrt();
    let clusters = cluster_eigenvalues(&mu, opts.cluster_tol);
    Ok(EigenPackage {
        kind,
        values,
        renormalized: mu,
        vectors,
        clusters,
        residuals: residuals_hat,
        total_measure: total,
        iterations,
        eig_tol: opts.eig_tol,
    })
}

/// Replaces the lowest pair by the exact constant mode and re-orthogonalizes.
fn pin_constant(vals: &mut [f64], vecs: &mut DMatrix<f64>, m: &[f64]) {
    let total: f64 = m.iter().sum();
    let c = 1.0 / total.sqrt();
    vals[0] = 0.0;
    vecs.column_mut(0).fill(c);
    for j in 1..vecs.ncols() {
        let p: f64 = vecs.column(j).iter().zip(m).map(|(x, w)| x * w).sum::<f64>() * c;
        vecs.column_mut(j).add_scalar_mut(-p * c);
        let nrm = m_norm(vecs.column(j).as_slice(), m);
        vecs.column_mut(j).scale_mut(1.0 / nrm);
    }
}

fn m_norm(x: &[f64], m: &[f64]) -> f64 {
    x.iter().zip(m).map(|(x, w)| x * x * w).sum::<f64>().sqrt()
}

/// `‖Kx − μ M x‖_{M⁻¹} / ‖x‖_M` for diagonal `M`.
pub(crate) fn residual(k: &SparseSymMatrix, m: &[f64], mu: f64, x: &[f64]) -> f64 {
    let kx = k.mul_vec(x);
    let num: f64 = kx
        .iter()
        .zip(x)
        .zip(m)
        .map(|((kx, x), m)| {
            let r = kx - mu * m * x;
            r * r / m
        })
        .sum();
    num.sqrt() / m_norm(x, m)
}

/// All eigenpairs of `K x = μ diag(m) x` with `m > 0`, ascending, M-orthonormal.
pub(crate) fn dense_generalized(k: &DMatrix<f64>, m: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.len();
    if m.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("mass must be positive".into()));
    }
    let s: Vec<f64> = m.iter().map(|x| 1.0 / x.sqrt()).collect();
    let mut a = k.clone();
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] *= s[i] * s[j];
        }
    }
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        // fix the sign so results are reproducible
        let piv = col.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sgn = if piv < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vecs[(r, c)] = sgn * col[r] * s[r];
        }
    }
    Ok((vals, vecs))
}

pub(crate) struct LobpcgOutput {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub iterations: usize,
}

/// Locally optimal block preconditioned CG for the lowest `nwant` pairs of
/// `K x = μ diag(m) x`, optionally in the M-complement of constants.
/// The preconditioner is an exact factorization of `K + shift·diag(m)`.
pub(crate) fn lobpcg(
    k: &SparseSymMatrix,
    m: &[f64],
    nwant: usize,
    deflate_constant: bool,
    shift: f64,
    opts: &SolverOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<LobpcgOutput> {
    let n = k.dim();
    if nwant == 0 {
        return Ok(LobpcgOutput {
            values: vec![],
            vectors: DMatrix::zeros(n, 0),
            iterations: 0,
        });
    }
    let b = (nwant + opts.guard).min(n.saturating_sub(1) / 3).max(nwant);
    let total_m: f64 = m.iter().sum();
    let project = |x: &mut DMatrix<f64>| {
        if deflate_constant {
            for mut col in x.column_iter_mut() {
                let p: f64 = col.iter().zip(m).map(|(x, w)| x * w).sum::<f64>() / total_m;
                col.add_scalar_mut(-p);
            }
        }
    };
    let precond = SkylineCholesky::factor(&k.add_diagonal(&m.iter().map(|x| shift * x).collect::<Vec<_>>()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = DMatrix::<f64>::zeros(n, b);
    let nwarm = warm.map_or(0, |w| w.ncols().min(b));
    if let Some(w) = warm {
        if w.nrows() != n {
            return Err(Error::InvalidInput("warm start has the wrong dimension".into()));
        }
        x.columns_mut(0, nwarm).copy_from(&w.columns(0, nwarm));
    }
    for j in nwarm..b {
        for i in 0..n {
            x[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    project(&mut x);
    let x = svqb(&x, m)?;
    let (mut lambda, mut x, mut kx) = rayleigh_ritz(k, &x, x.ncols().min(b));
    let mut p: Option<DMatrix<f64>> = None;
    let mut worst = f64::INFINITY;

    for it in 1..=opts.max_iter {
        // residuals
        let mut r = kx.clone();
        for j in 0..x.ncols() {
            for i in 0..n {
                r[(i, j)] -= lambda[j] * m[i] * x[(i, j)];
            }
        }
        let res: Vec<f64> = (0..x.ncols())
            .map(|j| r.column(j).iter().zip(m).map(|(r, m)| r * r / m).sum::<f64>().sqrt())
            .collect();
        let ok = |j: usize| res[j] <= 0.5 * opts.eig_tol * lambda[j].max(1.0);
        worst = (0..nwant).map(|j| res[j] / lambda[j].max(1.0)).fold(0.0, f64::max);
        if (0..nwant).all(ok) {
            return Ok(LobpcgOutput {
                values: lambda[..nwant].to_vec(),
                vectors: x.columns(0, nwant).into_owned(),
                iterations: it - 1,
            });
        }
        let active: Vec<usize> = (0..x.ncols()).filter(|&j| !ok(j)).collect();
        let mut w = DMatrix::<f64>::zeros(n, active.len());
        for (c, &j) in active.iter().enumerate() {
            let sol = precond.solve(r.column(j).as_slice());
            w.column_mut(c).copy_from_slice(&sol);
        }
        project(&mut w);
        // two passes of block Gram-Schmidt against X
        for _ in 0..2 {
            let mw = scale_rows(&w, m);
            let coef = x.transpose() * mw;
            w -= &x * coef;
        }
        let mut blocks = vec![x.clone(), w];
        if let Some(pp) = &p {
            blocks.push(pp.clone());
        }
        let s = hcat(&blocks);
        let q = svqb(&s, m)?;
        let q = svqb(&q, m)?;
        let keep = b.min(q.ncols());
        let (lam_new, x_new, kx_new) = rayleigh_ritz(k, &q, keep);
        let mx = scale_rows(&x_new, m);
        let overlap = x.transpose() * mx;
        let dir = &x_new - &x * overlap;
        let mut pn = DMatrix::<f64>::zeros(n, active.len());
        for (c, &j) in active.iter().enumerate() {
            if j < dir.ncols() {
                pn.column_mut(c).copy_from(&dir.column(j));
            }
        }
        p = Some(pn);
        lambda = lam_new;
        x = x_new;
        kx = kx_new;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        worst_residual: worst,
    })
}

fn scale_rows(x: &DMatrix<f64>, m: &[f64]) -> DMatrix<f64> {
    let mut y = x.clone();
    for j in 0..y.ncols() {
        for i in 0..y.nrows() {
            y[(i, j)] *= m[i];
        }
    }
    y
}

fn hcat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, total);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// M-orthonormal basis of the span of `s` (columns), dropping near-dependent directions.
fn svqb(s: &DMatrix<f64>, m: &[f64]) -> Result<DMatrix<f64>> {
    let g = s.transpose() * scale_rows(s, m);
    let q = g.ncols();
    let d: Vec<f64> = (0..q)
        .map(|i| if g[(i, i)] > 0.0 { 1.0 / g[(i, i)].sqrt() } else { 0.0 })
        .collect();
    let mut gs = g.clone();
    for j in 0..q {
        for i in 0..q {
            gs[(i, j)] *= d[i] * d[j];
        }
    }
    let gs = (&gs + gs.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gs);
    let tmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    if !(tmax > 0.0) {
        return Err(Error::NoConvergence {
            iterations: 0,
            worst_residual: f64::NAN,
        });
    }
    let mut keep: Vec<usize> = (0..q).filter(|&j| eig.eigenvalues[j] > 1e-13 * tmax).collect();
    keep.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut t = DMatrix::zeros(q, keep.len());
    for (c, &j) in keep.iter().enumerate() {
        let sc = 1.0 / eig.eigenvalues[j].sqrt();
        for i in 0..q {
            t[(i, c)] = d[i] * eig.eigenvectors[(i, j)] * sc;
        }
    }
    Ok(s * t)
}

/// Ritz pairs of `K` on an M-orthonormal basis `q`; returns the lowest `keep`.
fn rayleigh_ritz(k: &SparseSymMatrix, q: &DMatrix<f64>, keep: usize) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = q.nrows();
    let mut kq = DMatrix::zeros(n, q.ncols());
    for j in 0..q.ncols() {
        let y = k.mul_vec(q.column(j).as_slice());
        kq.column_mut(j).copy_from_slice(&y);
    }
    let a = q.transpose() * &kq;
    let a = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(a);
    let mut order: Vec<usize> = (0..q.ncols()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut c = DMatrix::zeros(q.ncols(), keep);
    let mut vals = Vec::with_capacity(keep);
    for (col, &i) in order.iter().take(keep).enumerate() {
        c.column_mut(col).copy_from(&eig.eigenvectors.column(i));
        vals.push(eig.eigenvalues[i]);
    }
    (vals, q * &c, kq * c)
}
