//! Finite approximations of the generalized gradient, the pseudo-norm game
//! and criticality tests.
//!
//! A candidate is `ψ = Σ_i d_i λ̄_i (1 − φ̃_i²)` where `φ̃ = √T·φ` has mean
//! square one against the pairing weights `w = diag(M(f)) / T`. With this
//! scaling `Σ_v w_v ψ_v = 0` exactly, and the derivative of `E` along the
//! multiplicative variation `f·(1 + t·h)` is `Σ_v w_v h_v ψ_v`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::{directional_derivative_fd, Evaluation, FdOptions, FdResult, Objective};
use crate::game::solve_matrix_game;
use crate::mesh::ConformalFactor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubgradientOptions {
    /// Haar-random frames per non-trivial cluster.
    pub samples: usize,
    pub seed: u64,
    pub max_cluster_dim: usize,
}

impl Default for SubgradientOptions {
    fn default() -> Self {
        SubgradientOptions {
            samples: 32,
            seed: 0x5eed,
            max_cluster_dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CandidateSource {
    /// The computed eigenbasis.
    Canonical,
    /// Uniform density matrix on every touched cluster.
    Symmetrized,
    /// A random frame in one cluster, the others symmetrized.
    Frame { cluster: usize, sample: usize },
}

#[derive(Debug, Clone)]
pub struct Subgradient {
    pub psi: Vec<f64>,
    pub source: CandidateSource,
}

#[derive(Debug, Clone)]
pub struct SubgradientSet {
    pub candidates: Vec<Subgradient>,
    /// Shared pairing weights, summing to one.
    pub weights: Vec<f64>,
    /// Vertices with positive weight; the pseudo-norm game is played on these.
    pub support: Vec<usize>,
    /// Touched clusters as eigen-index groups.
    pub clusters: Vec<Vec<usize>>,
    pub options: SubgradientOptions,
}

impl SubgradientSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// `Σ_v w_v ψ_v` for candidate `a`.
    pub fn mean(&self, a: usize) -> f64 {
        self.candidates[a].psi.iter().zip(&self.weights).map(|(p, w)| p * w).sum()
    }

    pub fn max_mean_violation(&self) -> f64 {
        (0..self.len()).map(|a| self.mean(a).abs()).fold(0.0, f64::max)
    }

    /// `Σ_v w_v h_v ψ_a(v)`.
    pub fn pairing(&self, a: usize, h: &[f64]) -> f64 {
        self.candidates[a]
            .psi
            .iter()
            .zip(&self.weights)
            .zip(h)
            .map(|((p, w), h)| p * w * h)
            .sum()
    }

    /// Largest `|ψ_a(v)|` over candidates and support.
    pub fn scale(&self) -> f64 {
        self.candidates
            .iter()
            .flat_map(|c| self.support.iter().map(move |&v| c.psi[v].abs()))
            .fold(0.0, f64::max)
    }

    fn payoff(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.support.len(), |a, j| self.candidates[a].psi[self.support[j]])
    }
}

pub fn generate_candidates(eval: &Evaluation, opts: &SubgradientOptions) -> Result<SubgradientSet> {
    let eigen = &eval.eigen;
    let n = eigen.vectors.nrows();
    let t = eigen.total_measure;
    let weights = eval.pairing_weights();
    let support: Vec<usize> = (0..n).filter(|&v| weights[v] > 0.0).collect();

    // touched clusters and the spec positions falling in each
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (i, &k) in eval.indices.iter().enumerate() {
        let c = eigen.cluster_of(k).to_vec();
        match clusters.iter().position(|x| *x == c) {
            Some(p) => members[p].push(i),
            None => {
                clusters.push(c);
                members.push(vec![i]);
            }
        }
    }
    for (c, mem) in clusters.iter().zip(&members) {
        if c.len() > opts.max_cluster_dim {
            return Err(Error::ClusterTooLarge {
                dim: c.len(),
                max: opts.max_cluster_dim,
            });
        }
        if mem.len() > c.len() {
            return Err(Error::InvalidInput(format!(
                "{} indices fall in a cluster of dimension {}",
                mem.len(),
                c.len()
            )));
        }
    }
    let coef = |i: usize| eval.d[i] * eval.lambdas[i];
    let base: f64 = (0..eval.indices.len()).map(coef).sum();

    // Φ̃ per cluster, n × D
    let phis: Vec<DMatrix<f64>> = clusters
        .iter()
        .map(|c| DMatrix::from_fn(n, c.len(), |v, j| eigen.vectors[(v, c[j])] * t.sqrt()))
        .collect();

    // Σ_s coef_s (Φ̃ Q_s)² for a frame Q (D × r)
    let framed = |ci: usize, q: &DMatrix<f64>| -> Vec<f64> {
        let y = &phis[ci] * q;
        (0..n)
            .map(|v| members[ci].iter().enumerate().map(|(s, &i)| coef(i) * y[(v, s)].powi(2)).sum())
            .collect()
    };
    let symmetrized = |ci: usize| -> Vec<f64> {
        let d = clusters[ci].len() as f64;
        let total: f64 = members[ci].iter().map(|&i| coef(i)).sum();
        (0..n)
            .map(|v| total * phis[ci].row(v).iter().map(|x| x * x).sum::<f64>() / d)
            .collect()
    };
    let canonical = |ci: usize| -> DMatrix<f64> {
        // increasing distinct positions at or after each index
        let c0 = clusters[ci][0];
        let (dim, r) = (clusters[ci].len(), members[ci].len());
        let mut q = DMatrix::zeros(dim, r);
        let mut next = 0;
        for (s, &i) in members[ci].iter().enumerate() {
            let pos = (eval.indices[i] - c0).max(next);
            q[(pos, s)] = 1.0;
            next = pos + 1;
        }
        q
    };
    let assemble = |parts: &[Vec<f64>]| -> Vec<f64> {
        (0..n).map(|v| base - parts.iter().map(|p| p[v]).sum::<f64>()).collect()
    };

    let canon_parts: Vec<Vec<f64>> = (0..clusters.len()).map(|ci| framed(ci, &canonical(ci))).collect();
    let mut candidates = vec![Subgradient {
        psi: assemble(&canon_parts),
        source: CandidateSource::Canonical,
    }];
    if clusters.iter().any(|c| c.len() > 1) {
        let sym_parts: Vec<Vec<f64>> = (0..clusters.len()).map(symmetrized).collect();
        candidates.push(Subgradient {
            psi: assemble(&sym_parts),
            source: CandidateSource::Symmetrized,
        });
        for ci in 0..clusters.len() {
            let (dim, r) = (clusters[ci].len(), members[ci].len());
            if dim == 1 {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(0x9e37_79b9 * (ci as u64 + 1)));
            for sample in 0..opts.samples {
                let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
                let q = g.qr().q().columns(0, r).into_owned();
                let mut parts = sym_parts.clone();
                parts[ci] = framed(ci, &q);
                candidates.push(Subgradient {
                    psi: assemble(&parts),
                    source: CandidateSource::Frame { cluster: ci, sample },
                });
            }
        }
        dedupe(&mut candidates, &support);
    }
    Ok(SubgradientSet {
        candidates,
        weights,
        support,
        clusters,
        options: opts.clone(),
    })
}

/// Drops candidates equal to an earlier one on the support (to rounding).
fn dedupe(c: &mut Vec<Subgradient>, support: &[usize]) {
    let scale = c
        .iter()
        .flat_map(|x| support.iter().map(move |&v| x.psi[v].abs()))
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut keep: Vec<Subgradient> = Vec::with_capacity(c.len());
    for cand in c.drain(..) {
        let dup = keep
            .iter()
            .any(|k| support.iter().all(|&v| (k.psi[v] - cand.psi[v]).abs() <= 1e-13 * scale));
        if !dup {
            keep.push(cand);
        }
    }
    *c = keep;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoNormResult {
    /// `−min_τ max_a ⟨τ, ψ_a⟩`.
    pub value: f64,
    /// Optimal probability vector over all vertices (zero off the support).
    pub tau: Vec<f64>,
    /// Optimal convex weights over candidates.
    pub worst_mix: Vec<f64>,
    pub duality_gap: f64,
    pub lp_pivots: usize,
}

pub fn pseudo_norm(set: &SubgradientSet) -> Result<PseudoNormResult> {
    if set.is_empty() || set.support.is_empty() {
        return Err(Error::LpFailure("empty candidate set".into()));
    }
    let n = set.weights.len();
    let mut tau = vec![0.0; n];
    if set.len() == 1 {
        let psi = &set.candidates[0].psi;
        let min = set.support.iter().map(|&v| psi[v]).fold(f64::INFINITY, f64::min);
        let argmin: Vec<usize> = set.support.iter().copied().filter(|&v| psi[v] == min).collect();
        for &v in &argmin {
            tau[v] = 1.0 / argmin.len() as f64;
        }
        return Ok(PseudoNormResult {
            value: -min,
            tau,
            worst_mix: vec![1.0],
            duality_gap: 0.0,
            lp_pivots: 0,
        });
    }
    let sol = solve_matrix_game(&set.payoff())?;
    for (j, &v) in set.support.iter().enumerate() {
        tau[v] = sol.col_strategy[j];
    }
    Ok(PseudoNormResult {
        value: -sol.value,
        tau,
        worst_mix: sol.row_strategy,
        duality_gap: sol.duality_gap,
        lp_pivots: sol.pivots,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum Certificate {
    /// A probability vector along which every candidate pairs to `−value < −tol`.
    Descent { tau: Vec<f64>, value: f64 },
    /// Convex weights whose mixture is uniformly small.
    ZeroInHull { weights: Vec<f64>, sup_norm: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalityReport {
    pub critical: bool,
    pub pseudo_norm: f64,
    pub tol: f64,
    pub certificate: Certificate,
    /// Whether some mixture is entrywise `≥ −tol`, with the best margin `max_c min_v ψ_c(v)`.
    pub nonneg_mixture: bool,
    pub nonneg_margin: f64,
    /// `min_c ‖Σ_a c_a ψ_a‖_∞` over the support.
    pub min_sup_norm: f64,
}

/// Convex weights minimizing the sup-norm of the mixture.
pub fn min_sup_mixture(set: &SubgradientSet) -> Result<(Vec<f64>, f64)> {
    let ns = set.support.len();
    if set.len() == 1 {
        let psi = &set.candidates[0].psi;
        return Ok((vec![1.0], set.support.iter().map(|&v| psi[v].abs()).fold(0.0, f64::max)));
    }
    // rows (v, ±) maximize, candidate columns minimize
    let h = DMatrix::from_fn(2 * ns, set.len(), |row, a| {
        let v = set.support[row / 2];
        let s = if row % 2 == 0 { 1.0 } else { -1.0 };
        s * set.candidates[a].psi[v]
    });
    let sol = solve_matrix_game(&h)?;
    let c = sol.col_strategy;
    let sup = set
        .support
        .iter()
        .map(|&v| (0..set.len()).map(|a| c[a] * set.candidates[a].psi[v]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Ok((c, sup))
}

pub fn is_critical(set: &SubgradientSet, tol: f64) -> Result<CriticalityReport> {
    let pn = pseudo_norm(set)?;
    let critical = pn.value <= tol;
    let (weights, sup) = min_sup_mixture(set)?;
    let certificate = if critical {
        Certificate::ZeroInHull {
            weights,
            sup_norm: sup,
        }
    } else {
        Certificate::Descent {
            tau: pn.tau.clone(),
            value: pn.value,
        }
    };
    Ok(CriticalityReport {
        critical,
        pseudo_norm: pn.value,
        tol,
        certificate,
        nonneg_mixture: -pn.value >= -tol,
        nonneg_margin: -pn.value,
        min_sup_norm: sup,
    })
}

/// Whether some mixture `ψ_c` satisfies `ψ_c + δ ≥ −tol` entrywise on the
/// support; returns the margin `max_c min_v ψ_c(v) + δ`.
pub fn ps_condition(set: &SubgradientSet, delta: f64, tol: f64) -> Result<(bool, f64)> {
    let pn = pseudo_norm(set)?;
    let margin = -pn.value + delta;
    Ok((margin >= -tol, margin))
}

/// `max_a Σ_v w_v h_v ψ_a(v)` for a nonnegative density with `⟨w, h⟩ = 1`.
pub fn support_function(set: &SubgradientSet, h: &[f64]) -> Result<f64> {
    if h.len() != set.weights.len() {
        return Err(Error::InvalidInput("direction has the wrong length".into()));
    }
    if h.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidInput("direction must be nonnegative".into()));
    }
    let mass: f64 = h.iter().zip(&set.weights).map(|(h, w)| h * w).sum();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("⟨w, h⟩ = {mass}, expected 1")));
    }
    Ok((0..set.len()).map(|a| set.pairing(a, h)).fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportCheck {
    pub support_value: f64,
    pub fd: FdResult,
    /// `|support − fd| / max(|fd|, floor)`.
    pub rel_err: f64,
}

/// Compares the support function with a finite-difference derivative along `h`.
pub fn support_function_check(
    obj: &Objective,
    f: &ConformalFactor,
    set: &SubgradientSet,
    h: &[f64],
    fd: &FdOptions,
) -> Result<SupportCheck> {
    let support_value = support_function(set, h)?;
    let fdr = directional_derivative_fd(obj, f, h, fd)?;
    let floor = 1e-8 * set.scale().max(1.0);
    let rel_err = (support_value - fdr.derivative).abs() / fdr.derivative.abs().max(floor);
    Ok(SupportCheck {
        support_value,
        fd: fdr,
        rel_err,
    })
}

/// Derivative of `E` along a signed direction, as predicted by the unique
/// candidate at a simple point.
pub fn linear_prediction(set: &SubgradientSet, h: &[f64]) -> f64 {
    set.pairing(0, h)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairingValidation {
    /// False when the point has a multiple eigenvalue and nothing was checked.
    pub performed: bool,
    pub max_rel_err: f64,
    pub directions: usize,
}

/// Checks at a simple point that the pairing reproduces finite differences
/// along `directions` random smooth-ish densities.
pub fn validate_pairing(
    obj: &Objective,
    f: &ConformalFactor,
    eval: &Evaluation,
    directions: usize,
    seed: u64,
) -> Result<PairingValidation> {
    let set = generate_candidates(eval, &SubgradientOptions::default())?;
    if set.len() != 1 {
        return Ok(PairingValidation {
            performed: false,
            max_rel_err: 0.0,
            directions: 0,
        });
    }
    let mesh = obj.disc.mesh();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        // random linear-plus-quadratic field in the embedding coordinates
        let c: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
        let h: Vec<f64> = mesh
            .positions()
            .iter()
            .map(|p| {
                c[0] * p[0] + c[1] * p[1] + c[2] * p[2] + c[3] * p[0] * p[1] + c[4] * p[1] * p[2]
                    + c[5] * p[0] * p[2] + c[6] * p[0] * p[0] + c[7] * p[1] * p[1] + c[8] * p[2] * p[2]
            })
            .collect();
        let hmax = h.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
        let h: Vec<f64> = h.iter().map(|x| x / hmax).collect();
        let pred = linear_prediction(&set, &h);
        let fd = directional_derivative_fd(obj, f, &h, &FdOptions::default())?;
        let floor = 1e-6 * set.scale().max(1.0);
        worst = worst.max((pred - fd.derivative).abs() / fd.derivative.abs().max(floor));
    }
    Ok(PairingValidation {
        performed: true,
        max_rel_err: worst,
        directions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::SolverOptions;
    use crate::fem::{Discretization, ProblemKind};
    use crate::functional::FunctionalSpec;
    use crate::mesh::{shapes, Support};
    use std::sync::Arc;

    fn objective(mesh: crate::mesh::TriMesh, spec: FunctionalSpec) -> Objective {
        Objective::new(spec, Arc::new(Discretization::new(mesh).unwrap()), SolverOptions::default()).unwrap()
    }

    fn bumpy(obj: &Objective, amp: f64) -> ConformalFactor {
        let vals = obj
            .disc
            .mesh()
            .positions()
            .iter()
            .map(|p| 1.0 + amp * (0.9 * p[0] + 0.5 * p[1] * p[2] - 0.3 * p[2] * p[2] + 0.2 * p[0] * p[1]))
            .collect();
        ConformalFactor::new(vals, Support::Interior).unwrap()
    }

    fn set_from_psis(psis: Vec<Vec<f64>>, w: Vec<f64>) -> SubgradientSet {
        let n = w.len();
        SubgradientSet {
            candidates: psis
                .into_iter()
                .map(|psi| Subgradient {
                    psi,
                    source: CandidateSource::Canonical,
                })
                .collect(),
            weights: w,
            support: (0..n).collect(),
            clusters: vec![],
            options: SubgradientOptions::default(),
        }
    }

    #[test]
    fn singleton_pseudo_norm_is_minus_min() {
        let s = set_from_psis(vec![vec![1.0, -2.0, 0.5, 0.5]], vec![0.25; 4]);
        let r = pseudo_norm(&s).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.tau, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_candidates_give_zero() {
        let s = set_from_psis(vec![vec![0.0; 5], vec![0.0; 5]], vec![0.2; 5]);
        assert!(pseudo_norm(&s).unwrap().value.abs() < 1e-15);
    }

    #[test]
    fn hand_solved_two_by_two() {
        let s = set_from_psis(vec![vec![1.0, -1.0], vec![-1.0, 1.0]], vec![0.5, 0.5]);
        let r = pseudo_norm(&s).unwrap();
        assert!(r.value.abs() < 1e-12);
        assert!((r.tau[0] - 0.5).abs() < 1e-12 && (r.tau[1] - 0.5).abs() < 1e-12);
        assert!(r.duality_gap <= 1e-9);
    }

    #[test]
    fn adding_candidates_never_raises_pseudo_norm() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let w = vec![1.0 / n as f64; n];
        let mut psis: Vec<Vec<f64>> = Vec::new();
        let mut prev = f64::INFINITY;
        for _ in 0..12 {
            let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m: f64 = p.iter().sum::<f64>() / n as f64;
            p.iter_mut().for_each(|x| *x -= m);
            psis.push(p);
            let v = pseudo_norm(&set_from_psis(psis.clone(), w.clone())).unwrap().value;
            // the inner max runs over a larger set
            assert!(v <= prev + 1e-9);
            assert!(v >= -1e-9);
            prev = v;
        }
    }

    #[test]
    fn simple_point_has_one_candidate_and_zero_mean() {
        let obj = objective(shapes::icosphere(2), FunctionalSpec::neg_single(ProblemKind::Laplace, 1));
        let f = bumpy(&obj, 0.3);
        let e = obj.evaluate(&f).unwrap();
        assert_eq!(e.eigen.cluster_of(1).len(), 1);
        let s = generate_candidates(&e, &SubgradientOptions { samples: 50, ..Default::default() }).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.max_mean_violation() <= 1e-8 * s.scale());
        let r = pseudo_norm(&s).unwrap();
        let min = s.candidates[0].psi.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        assert_eq!(r.value, -min);
    }

    #[test]
    fn round_sphere_symmetrized_candidate_vanishes() {
        let obj = objective(shapes::icosphere(3), FunctionalSpec::neg_single(ProblemKind::Laplace, 1));
        let f = ConformalFactor::uniform(obj.disc.mesh(), Support::Interior, 1.0).unwrap();
        let e = obj.evaluate(&f).unwrap();
        let s = generate_candidates(&e, &SubgradientOptions::default()).unwrap();
        assert_eq!(s.clusters, vec![vec![1, 2, 3]]);
        let sym = s.candidates.iter().find(|c| c.source == CandidateSource::Symmetrized).unwrap();
        let sup = sym.psi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        assert!(sup <= 0.05 * e.lambdas[0], "{sup}");
        assert!(s.max_mean_violation() <= 1e-8);
        let c = is_critical(&s, 0.05 * e.lambdas[0]).unwrap();
        assert!(c.critical);
        assert!(c.nonneg_mixture);
        assert!(matches!(c.certificate, Certificate::ZeroInHull { sup_norm, .. } if sup_norm <= 0.05 * e.lambdas[0]));
    }

    #[test]
    fn cluster_too_large() {
        let obj = objective(shapes::icosphere(2), FunctionalSpec::neg_single(ProblemKind::Laplace, 4));
        let f = ConformalFactor::uniform(obj.disc.mesh(), Support::Interior, 1.0).unwrap();
        let e = obj.evaluate(&f).unwrap();
        let r = generate_candidates(&e, &SubgradientOptions { max_cluster_dim: 3, ..Default::default() });
        assert!(matches!(r, Err(Error::ClusterTooLarge { dim: 5, max: 3 })));
    }

    #[test]
    fn support_function_matches_fd_at_simple_point() {
        let obj = objective(shapes::icosphere(2), FunctionalSpec::neg_single(ProblemKind::Laplace, 1));
        let f = bumpy(&obj, 0.3);
        let e = obj.evaluate(&f).unwrap();
        let s = generate_candidates(&e, &SubgradientOptions::default()).unwrap();
        // nonnegative density with ⟨w,h⟩ = 1
        let raw: Vec<f64> = obj.disc.mesh().positions().iter().map(|p| 1.0 + 0.8 * p[2]).collect();
        let mass: f64 = raw.iter().zip(&s.weights).map(|(h, w)| h * w).sum();
        let h: Vec<f64> = raw.iter().map(|x| x / mass).collect();
        let chk = support_function_check(&obj, &f, &s, &h, &FdOptions::default()).unwrap();
        assert!(chk.rel_err < 1e-4, "{chk:?}");
        // uniform density: scale invariance
        let u = vec![1.0; h.len()];
        assert!(support_function(&s, &u).unwrap().abs() < 1e-10);
        // along the optimal τ the support function is −|∂E|
        let pn = pseudo_norm(&s).unwrap();
        let ht: Vec<f64> = pn.tau.iter().zip(&s.weights).map(|(t, w)| t / w).collect();
        assert!((support_function(&s, &ht).unwrap() + pn.value).abs() < 1e-9 * pn.value.max(1.0));
    }

    #[test]
    fn pairing_validation_passes_on_steklov_disk() {
        let obj = objective(shapes::unit_disk(6), FunctionalSpec::neg_single(ProblemKind::Steklov, 1));
        let vals = obj.disc.mesh().positions().iter().map(|p| 1.0 + 0.3 * p[0] + 0.1 * p[1]).collect();
        let f = ConformalFactor::new(vals, Support::Boundary).unwrap();
        let e = obj.evaluate(&f).unwrap();
        let v = validate_pairing(&obj, &f, &e, 3, 1).unwrap();
        assert!(v.performed);
        assert!(v.max_rel_err < 1e-4, "{v:?}");
        let s = generate_candidates(&e, &SubgradientOptions::default()).unwrap();
        assert!(s.support.iter().all(|&v| obj.disc.mesh().is_boundary_vertex(v)));
    }

    #[test]
    fn generic_point_is_not_critical() {
        let obj = objective(shapes::icosphere(2), FunctionalSpec::neg_single(ProblemKind::Laplace, 1));
        let f = bumpy(&obj, 0.3);
        let e = obj.evaluate(&f).unwrap();
        let s = generate_candidates(&e, &SubgradientOptions::default()).unwrap();
        let c = is_critical(&s, 0.05 * e.lambdas[0]).unwrap();
        assert!(!c.critical);
        assert!(matches!(c.certificate, Certificate::Descent { .. }));
        let (holds, _) = ps_condition(&s, c.pseudo_norm, 1e-9).unwrap();
        assert!(holds);
    }
}
