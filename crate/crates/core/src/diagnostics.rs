//! Health checks at (near-)critical points: the eigenmap `Φ` and its norm
//! `ω`, the energy identity, and Dirichlet eigenvalues of small balls.
//!
//! All quantities use the measure rescaled to total mass one, so eigenvalues
//! are the renormalized ones and eigenvectors are `φ̃ = √T·φ`.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::eigen::{dense_generalized, lobpcg, SolverOptions};
use crate::error::{Error, Result};
use crate::fem::{Discretization, ProblemKind};
use crate::functional::Evaluation;
use crate::game::solve_matrix_game;
use crate::mesh::ConformalFactor;
use crate::sparse::SparseSymMatrix;

/// How the coordinate weights `c_j = λ̄_j t_j` of the eigenmap are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRule {
    /// `|∂_i F| λ̄_{k_i}` spread evenly over the cluster of `k_i`.
    Gradient,
    /// Convex weights minimizing `max_v |ω_v² − 1|`.
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereMapOptions {
    pub weights: WeightRule,
    /// Relative gap under which eigenvalues are grouped into one coordinate block.
    pub cluster_tol: f64,
}

impl Default for SphereMapOptions {
    fn default() -> Self {
        SphereMapOptions {
            weights: WeightRule::Fit,
            cluster_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyIdentity {
    /// `Σ_j t_j φ̃_jᵀ K φ̃_j`
    pub dirichlet_energy: f64,
    /// `Σ_j t_j λ̄_j`
    pub mass_weighted_sum: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereMapReport {
    /// Eigen indices used as coordinates of `Φ`.
    pub coordinates: Vec<usize>,
    pub t: Vec<f64>,
    pub omega: Vec<f64>,
    /// `max |ω_v² − 1|` over the support.
    pub delta: f64,
    /// Discrete `∫ |∇ω|² / ω`.
    pub omega_energy: f64,
    /// `‖K(Φ/ω)‖_∞` on vertices carrying no measure.
    pub harmonic_residual: f64,
    /// `∫ dμ`, `∫ |Φ|²_Λ dμ` and `∫ |∇Φ|²`.
    pub normalizations: [f64; 3],
    /// `Σ_j λ̄_j t_j`
    pub lambda_t_sum: f64,
    pub energy: EnergyIdentity,
}

fn stiffness(eval: &Evaluation) -> &SparseSymMatrix {
    &eval.problem.stiffness
}

fn scaled_vector(eval: &Evaluation, j: usize) -> Vec<f64> {
    let s = eval.eigen.total_measure.sqrt();
    eval.eigen.vectors.column(j).iter().map(|x| s * x).collect()
}

/// Energy identity for coordinates `coords` with weights `t`.
pub fn energy_identity_with(eval: &Evaluation, coords: &[usize], t: &[f64]) -> EnergyIdentity {
    let k = stiffness(eval);
    let mut dirichlet = 0.0;
    let mut sum = 0.0;
    for (&j, &tj) in coords.iter().zip(t) {
        let phi = scaled_vector(eval, j);
        dirichlet += tj * k.quad_form(&phi);
        sum += tj * eval.eigen.renormalized[j];
    }
    EnergyIdentity {
        dirichlet_energy: dirichlet,
        mass_weighted_sum: sum,
        gap: (dirichlet - sum).abs() / dirichlet.abs().max(1.0),
    }
}

/// Energy identity over the distinct functional indices with equal weights
/// `c_j = 1/m`.
pub fn energy_identity_check(eval: &Evaluation) -> Result<EnergyIdentity> {
    let mut coords = eval.indices.clone();
    coords.dedup();
    let m = coords.len() as f64;
    let t = coords
        .iter()
        .map(|&j| {
            let l = eval.eigen.renormalized[j];
            if l > 0.0 {
                Ok(1.0 / (m * l))
            } else {
                Err(Error::NormalizationFailure(format!("λ̄_{j} = {l:e} is not positive")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(energy_identity_with(eval, &coords, &t))
}

pub fn sphere_map_report(eval: &Evaluation, opts: &SphereMapOptions) -> Result<SphereMapReport> {
    let eig = &eval.eigen;
    let mut pkg = (**eig).clone();
    pkg.recluster(opts.cluster_tol);
    // only indices that F actually sees contribute coordinates
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (i, &k) in eval.indices.iter().enumerate() {
        if eval.d[i] == 0.0 {
            continue;
        }
        let c = pkg.cluster_of(k).to_vec();
        if !blocks.contains(&c) {
            blocks.push(c);
        }
    }
    if blocks.is_empty() {
        return Err(Error::NormalizationFailure(
            "∂F vanishes on every index; Σ λ t cannot reach 1".into(),
        ));
    }
    // the top block may be cut off by the computed range; keep what was solved
    let coords: Vec<usize> = blocks.iter().flatten().copied().collect();
    let lam: Vec<f64> = coords.iter().map(|&j| pkg.renormalized[j]).collect();
    if let Some((j, l)) = coords.iter().zip(&lam).find(|(_, l)| !(**l > 1e-12)) {
        return Err(Error::NormalizationFailure(format!("λ̄_{j} = {l:e} is not positive")));
    }
    let phis: Vec<Vec<f64>> = coords.iter().map(|&j| scaled_vector(eval, j)).collect();
    let mu: Vec<f64> = eval.pairing_weights();
    let support: Vec<usize> = (0..mu.len()).filter(|&v| mu[v] > 0.0).collect();

    let c: Vec<f64> = match opts.weights {
        WeightRule::Gradient => {
            let mut c = vec![0.0; coords.len()];
            for (i, &k) in eval.indices.iter().enumerate() {
                let block = pkg.cluster_of(k);
                let share = eval.d[i].abs() * eval.lambdas[i] / block.len() as f64;
                for (slot, &j) in coords.iter().enumerate() {
                    if block.contains(&j) {
                        c[slot] += share;
                    }
                }
            }
            let s: f64 = c.iter().sum();
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::NormalizationFailure(
                    "∂F vanishes on every index; Σ λ t cannot reach 1".into(),
                ));
            }
            c.iter().map(|x| x / s).collect()
        }
        WeightRule::Fit => fit_weights(&phis, &support)?,
    };
    let t: Vec<f64> = c.iter().zip(&lam).map(|(c, l)| c / l).collect();
    let n = mu.len();
    let omega2: Vec<f64> = (0..n)
        .map(|v| c.iter().zip(&phis).map(|(c, p)| c * p[v] * p[v]).sum())
        .collect();
    let omega: Vec<f64> = omega2.iter().map(|x: &f64| x.sqrt()).collect();
    let delta = support.iter().map(|&v| (omega2[v] - 1.0).abs()).fold(0.0, f64::max);

    let k = stiffness(eval);
    let mut omega_energy = 0.0;
    for v in 0..n {
        for (u, kv) in k.row(v) {
            if u > v && kv != 0.0 {
                let mean = (0.5 * (omega[u] + omega[v])).max(1e-300);
                omega_energy += -kv * (omega[u] - omega[v]).powi(2) / mean;
            }
        }
    }
    let mut harmonic_residual: f64 = 0.0;
    let off: Vec<usize> = (0..n).filter(|&v| mu[v] == 0.0).collect();
    if !off.is_empty() {
        for (j, p) in phis.iter().enumerate() {
            let scale = t[j].sqrt();
            let q: Vec<f64> = (0..n).map(|v| scale * p[v] / omega[v].max(1e-300)).collect();
            let kq = k.mul_vec(&q);
            harmonic_residual = off.iter().fold(harmonic_residual, |a, &v| a.max(kq[v].abs()));
        }
    }
    let energy = energy_identity_with(eval, &coords, &t);
    let normalizations = [
        mu.iter().sum(),
        (0..n).map(|v| mu[v] * omega2[v]).sum(),
        energy.dirichlet_energy,
    ];
    Ok(SphereMapReport {
        lambda_t_sum: t.iter().zip(&lam).map(|(t, l)| t * l).sum(),
        coordinates: coords,
        t,
        omega,
        delta,
        omega_energy,
        harmonic_residual,
        normalizations,
        energy,
    })
}

/// Convex weights minimizing `max_v |Σ_j c_j φ̃_j(v)² − 1|` on `support`.
fn fit_weights(phis: &[Vec<f64>], support: &[usize]) -> Result<Vec<f64>> {
    if phis.len() == 1 {
        return Ok(vec![1.0]);
    }
    // rows (v, ±) maximize, coordinate columns minimize
    let a = nalgebra::DMatrix::from_fn(2 * support.len(), phis.len(), |row, j| {
        let v = support[row / 2];
        let s = if row % 2 == 0 { 1.0 } else { -1.0 };
        s * (phis[j][v] * phis[j][v] - 1.0)
    });
    Ok(solve_matrix_game(&a)?.col_strategy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CenterSampling {
    /// Every admissible vertex up to 3000 of them, otherwise 256 farthest points.
    Auto,
    All,
    Farthest { count: usize },
    List { vertices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BadPointOptions {
    /// Positive and ascending, in the background metric.
    pub radii: Vec<f64>,
    pub centers: CenterSampling,
    pub eig_tol: f64,
    /// Balls with more free vertices than this use the iterative solver.
    pub dense_limit: usize,
    pub threads: usize,
}

impl Default for BadPointOptions {
    fn default() -> Self {
        BadPointOptions {
            radii: vec![0.2, 0.3, 0.4, 0.5, 0.6],
            centers: CenterSampling::Auto,
            eig_tol: 1e-10,
            dense_limit: 400,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BadPointReport {
    pub centers: Vec<usize>,
    pub radii: Vec<f64>,
    /// `λ_*` per center and radius; `None` where the ball was too small.
    pub lambda_star: Vec<Vec<Option<f64>>>,
    /// `λ̄_{k_m}`, the flagging threshold.
    pub threshold: f64,
    pub k_m: usize,
    pub hits: Vec<(usize, f64)>,
    /// Greedily chosen pairwise disjoint hits.
    pub disjoint_hits: Vec<(usize, f64)>,
    pub within_bound: bool,
    pub skipped: usize,
    /// Pairs of consecutive radii where `λ_*` grew by more than `1e-8` relative.
    pub monotonicity_violations: usize,
}

/// Ball vertices whose neighbours all lie in the ball; the rest are clamped.
fn free_vertices(disc: &Discretization, ball: &[usize]) -> Vec<usize> {
    let mesh = disc.mesh();
    let mut inside = vec![false; mesh.num_vertices()];
    for &v in ball {
        inside[v] = true;
    }
    ball.iter()
        .copied()
        .filter(|&v| mesh.neighbors(v).iter().all(|&(u, _)| inside[u]))
        .collect()
}

/// First Dirichlet eigenvalue on a ball against the probability measure `mu`.
pub fn dirichlet_ball_eigenvalue(
    disc: &Discretization,
    kind: ProblemKind,
    mu: &[f64],
    ball: &[usize],
    center: usize,
    radius: f64,
    opts: &BadPointOptions,
) -> Result<f64> {
    let free = free_vertices(disc, ball);
    let (loaded, unloaded): (Vec<usize>, Vec<usize>) = free.iter().partition(|&&v| mu[v] > 0.0);
    if loaded.len() < 4 {
        return Err(Error::BallTooSmall {
            center,
            radius,
            interior: loaded.len(),
        });
    }
    let k = disc.stiffness();
    match kind {
        ProblemKind::Laplace if unloaded.is_empty() => {
            let kf = k.submatrix(&free);
            let m: Vec<f64> = free.iter().map(|&v| mu[v]).collect();
            lowest(&kf, &m, opts)
        }
        _ => {
            // condense the massless vertices away
            let kll = k.submatrix(&loaded).to_dense();
            let s = if unloaded.is_empty() {
                kll
            } else {
                let kuu = k.submatrix(&unloaded).to_dense();
                let klu = nalgebra::DMatrix::from_fn(loaded.len(), unloaded.len(), |i, j| k.get(loaded[i], unloaded[j]));
                let chol = nalgebra::Cholesky::new(kuu)
                    .ok_or_else(|| Error::InvalidInput(format!("singular interior block in ball around {center}")))?;
                let x = chol.solve(&klu.transpose());
                kll - &klu * x
            };
            let m: Vec<f64> = loaded.iter().map(|&v| mu[v]).collect();
            Ok(dense_generalized(&s, &m)?.0[0])
        }
    }
}

fn lowest(k: &SparseSymMatrix, m: &[f64], opts: &BadPointOptions) -> Result<f64> {
    if k.dim() <= opts.dense_limit {
        return Ok(dense_generalized(&k.to_dense(), m)?.0[0]);
    }
    let so = SolverOptions {
        eig_tol: opts.eig_tol,
        ..SolverOptions::default()
    };
    let out = lobpcg(k, m, 1, false, 1.0, &so, None)?;
    Ok(out.values[0])
}

fn farthest_points(disc: &Discretization, pool: &[usize], count: usize) -> Vec<usize> {
    let mesh = disc.mesh();
    let mut chosen = vec![pool[0]];
    let mut best = mesh.graph_distances(pool[0], None);
    while chosen.len() < count.min(pool.len()) {
        let next = *pool
            .iter()
            .max_by(|&&a, &&b| best[a].total_cmp(&best[b]).then(b.cmp(&a)))
            .expect("nonempty pool");
        if best[next] == 0.0 {
            break;
        }
        chosen.push(next);
        let d = mesh.graph_distances(next, None);
        for (b, d) in best.iter_mut().zip(d) {
            *b = b.min(d);
        }
    }
    chosen
}

fn sample_centers(disc: &Discretization, kind: ProblemKind, sampling: &CenterSampling) -> Result<Vec<usize>> {
    let pool = disc.support_vertices(kind);
    Ok(match sampling {
        CenterSampling::All => pool,
        CenterSampling::Auto if pool.len() <= 3000 => pool,
        CenterSampling::Auto => farthest_points(disc, &pool, 256),
        CenterSampling::Farthest { count } => farthest_points(disc, &pool, *count),
        CenterSampling::List { vertices } => {
            if let Some(&v) = vertices.iter().find(|&&v| v >= disc.num_vertices()) {
                return Err(Error::InvalidInput(format!("center vertex {v} out of range")));
            }
            vertices.clone()
        }
    })
}

/// Scans geodesic balls for concentration of the measure of `f`.
pub fn bad_point_scan(
    disc: &Discretization,
    f: &ConformalFactor,
    eval: &Evaluation,
    opts: &BadPointOptions,
) -> Result<BadPointReport> {
    if opts.radii.is_empty() || opts.radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::Config("radius grid must be nonempty and positive".into()));
    }
    if opts.radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("radius grid must be strictly ascending".into()));
    }
    let kind = eval.problem.kind;
    if f.len() != disc.num_vertices() {
        return Err(Error::InvalidInput("factor does not match the mesh".into()));
    }
    let mu = eval.pairing_weights();
    let centers = sample_centers(disc, kind, &opts.centers)?;
    let k_m = *eval.indices.iter().max().expect("nonempty");
    let threshold = eval.eigen.renormalized[k_m];

    let scan_center = |c: usize| -> Result<Vec<Option<f64>>> {
        let dist = disc.mesh().graph_distances(c, None);
        opts.radii
            .iter()
            .map(|&r| {
                let ball: Vec<usize> = (0..dist.len()).filter(|&v| dist[v] <= r).collect();
                match dirichlet_ball_eigenvalue(disc, kind, &mu, &ball, c, r, opts) {
                    Ok(l) => Ok(Some(l)),
                    Err(Error::BallTooSmall { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect()
    };
    let threads = if opts.threads == 0 {
        thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        opts.threads
    };
    let chunk = centers.len().div_ceil(threads.max(1)).max(1);
    let lambda_star: Vec<Vec<Option<f64>>> = thread::scope(|s| {
        let handles: Vec<_> = centers
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(|&c| scan_center(c)).collect::<Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(centers.len());
        for h in handles {
            out.extend(h.join().expect("ball solver thread panicked")?);
        }
        Ok::<_, Error>(out)
    })?;

    let skipped = lambda_star.iter().flatten().filter(|x| x.is_none()).count();
    if skipped == centers.len() * opts.radii.len() {
        return Err(Error::BallTooSmall {
            center: centers[0],
            radius: *opts.radii.last().expect("nonempty"),
            interior: 0,
        });
    }
    let mut monotonicity_violations = 0;
    let mut hits = Vec::new();
    for (ci, row) in lambda_star.iter().enumerate() {
        let vals: Vec<f64> = row.iter().flatten().copied().collect();
        monotonicity_violations += vals.windows(2).filter(|w| w[1] > w[0] + 1e-8 * w[0].abs().max(1.0)).count();
        for (ri, l) in row.iter().enumerate() {
            if let Some(l) = l {
                if *l <= threshold {
                    hits.push((ci, ri, *l));
                }
            }
        }
    }
    // smallest balls first, then the strongest concentration
    hits.sort_by(|a, b| a.1.cmp(&b.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)));
    let mut taken = vec![false; disc.num_vertices()];
    let mut disjoint_hits = Vec::new();
    for &(ci, ri, _) in &hits {
        let ball = disc.mesh().geodesic_ball(centers[ci], opts.radii[ri], None)?;
        if ball.iter().all(|&v| !taken[v]) {
            ball.iter().for_each(|&v| taken[v] = true);
            disjoint_hits.push((centers[ci], opts.radii[ri]));
        }
    }
    Ok(BadPointReport {
        within_bound: disjoint_hits.len() <= k_m,
        hits: hits.iter().map(|&(ci, ri, _)| (centers[ci], opts.radii[ri])).collect(),
        disjoint_hits,
        centers,
        radii: opts.radii.clone(),
        lambda_star,
        threshold,
        k_m,
        skipped,
        monotonicity_violations,
    })
}
