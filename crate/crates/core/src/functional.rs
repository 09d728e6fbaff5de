//! Objective `E(f) = F(λ̄_{k_1}, …, λ̄_{k_m})` and its finite-difference
//! directional derivative.
//!
//! Variations are multiplicative: a direction `h` moves the factor along
//! `f·(1 + t·h)`, so `h ≡ 1` is uniform scaling.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen::{self, EigenPackage, SolverOptions};
use crate::error::{Error, Result};
use crate::fem::{Discretization, ProblemKind, SpectralProblem};
use crate::mesh::ConformalFactor;

/// Renormalized eigenvalues below this make `InvSum` blow up.
pub const DEGENERATE_EIGENVALUE: f64 = 1e-12;

/// User-supplied `F` with its gradient.
pub trait CustomF: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn name(&self) -> &str {
        "custom"
    }
}

/// `F(x) = (x − a)²(x − b)²` on the first argument: two wells at `a`, `b`
/// with a barrier of height `((b − a)/2)⁴` halfway. Not monotone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoWell {
    pub a: f64,
    pub b: f64,
}

impl TwoWell {
    pub fn barrier(&self) -> f64 {
        ((self.b - self.a) / 2.0).powi(4)
    }
}

impl CustomF for TwoWell {
    fn value(&self, x: &[f64]) -> f64 {
        (x[0] - self.a).powi(2) * (x[0] - self.b).powi(2)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (p, q) = (x[0] - self.a, x[0] - self.b);
        let mut g = vec![0.0; x.len()];
        g[0] = 2.0 * p * q * (p + q);
        g
    }

    fn name(&self) -> &str {
        "two_well"
    }
}

#[derive(Clone)]
pub enum Form {
    /// `F = −Σ c_i x_i`
    NegSum,
    /// `F = Σ c_i / x_i`
    InvSum,
    Custom(Arc<dyn CustomF>),
}

impl fmt::Debug for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Form::NegSum => write!(f, "NegSum"),
            Form::InvSum => write!(f, "InvSum"),
            Form::Custom(c) => write!(f, "Custom({})", c.name()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormName {
    NegSum,
    InvSum,
}

#[derive(Clone, Debug)]
pub struct FunctionalSpec {
    pub kind: ProblemKind,
    /// `k_1 ≤ … ≤ k_m`, each ≥ 1.
    pub indices: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub form: Form,
    /// Accept a custom `F` whose gradient has positive entries.
    pub allow_nonmonotone: bool,
}

impl FunctionalSpec {
    pub fn new(kind: ProblemKind, form: Form, indices: Vec<usize>, coefficients: Vec<f64>) -> Result<Self> {
        let spec = FunctionalSpec {
            kind,
            indices,
            coefficients,
            form,
            allow_nonmonotone: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `−c·λ̄_k` (or `−c·σ̄_k`).
    pub fn neg_single(kind: ProblemKind, k: usize) -> Self {
        Self::new(kind, Form::NegSum, vec![k], vec![1.0]).expect("valid")
    }

    pub fn custom(kind: ProblemKind, f: Arc<dyn CustomF>, indices: Vec<usize>, allow_nonmonotone: bool) -> Result<Self> {
        let m = indices.len();
        let spec = FunctionalSpec {
            kind,
            indices,
            coefficients: vec![1.0; m],
            form: Form::Custom(f),
            allow_nonmonotone,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::Config("functional needs at least one index".into()));
        }
        if self.indices.iter().any(|&k| k == 0) {
            return Err(Error::Config("eigenvalue indices start at 1".into()));
        }
        if self.indices.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("indices must be non-decreasing".into()));
        }
        if self.coefficients.len() != self.indices.len() {
            return Err(Error::Config(format!(
                "{} coefficients for {} indices",
                self.coefficients.len(),
                self.indices.len()
            )));
        }
        if self.coefficients.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("coefficients must be positive".into()));
        }
        if let Form::Custom(c) = &self.form {
            if !self.allow_nonmonotone {
                check_monotone(c.as_ref(), self.indices.len())?;
            }
        }
        Ok(())
    }

    pub fn max_index(&self) -> usize {
        *self.indices.last().expect("nonempty")
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        match &self.form {
            Form::NegSum => -self.coefficients.iter().zip(x).map(|(c, x)| c * x).sum::<f64>(),
            Form::InvSum => self.coefficients.iter().zip(x).map(|(c, x)| c / x).sum(),
            Form::Custom(c) => c.value(x),
        }
    }

    pub fn gradient_at(&self, x: &[f64]) -> Vec<f64> {
        match &self.form {
            Form::NegSum => self.coefficients.iter().map(|c| -c).collect(),
            Form::InvSum => self.coefficients.iter().zip(x).map(|(c, x)| -c / (x * x)).collect(),
            Form::Custom(c) => c.gradient(x),
        }
    }
}

/// Samples the positive orthant (log-uniform in [1e-2, 1e3]) for `∂_i F > 0`.
fn check_monotone(f: &dyn CustomF, m: usize) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..256 {
        let x: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-2.0..3.0))).collect();
        let g = f.gradient(&x);
        if let Some((i, gi)) = g.iter().enumerate().find(|(_, g)| **g > 0.0) {
            return Err(Error::NotMonotone(format!(
                "∂_{i}F = {gi:e} > 0 at {x:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    /// Requested indices `k_i`.
    pub indices: Vec<usize>,
    /// `λ̄_{k_i}` in the order of `indices`.
    pub lambdas: Vec<f64>,
    /// `∂_i F` at `lambdas`.
    pub d: Vec<f64>,
    pub eigen: Arc<EigenPackage>,
    pub problem: SpectralProblem,
}

impl Evaluation {
    /// Diagonal of `M(f)` (or `B(f)`) divided by its total.
    pub fn pairing_weights(&self) -> Vec<f64> {
        let t = self.problem.total_measure;
        self.problem.mass.iter().map(|m| m / t).collect()
    }
}

/// Everything needed to evaluate `E` repeatedly on one mesh.
#[derive(Debug, Clone)]
pub struct Objective {
    pub spec: FunctionalSpec,
    pub disc: Arc<Discretization>,
    pub solver: SolverOptions,
    /// Largest cluster the evaluation will grow the computed range to cover.
    pub max_cluster_dim: usize,
}

impl Objective {
    pub fn new(spec: FunctionalSpec, disc: Arc<Discretization>, solver: SolverOptions) -> Result<Self> {
        spec.validate()?;
        solver.validate()?;
        if spec.kind == ProblemKind::Steklov && !disc.mesh().has_boundary() {
            return Err(Error::NoBoundary);
        }
        Ok(Objective {
            spec,
            disc,
            solver,
            max_cluster_dim: 8,
        })
    }

    pub fn kind(&self) -> ProblemKind {
        self.spec.kind
    }

    pub fn evaluate(&self, f: &ConformalFactor) -> Result<Evaluation> {
        evaluate_with(&self.spec, &self.disc, f, &self.solver, self.max_cluster_dim)
    }

    /// `E(f)` only.
    pub fn value(&self, f: &ConformalFactor) -> Result<f64> {
        Ok(self.evaluate(f)?.value)
    }
}

/// Assembles, solves and evaluates `E` at `f`.
pub fn evaluate(spec: &FunctionalSpec, disc: &Discretization, f: &ConformalFactor, solver: &SolverOptions) -> Result<Evaluation> {
    evaluate_with(spec, disc, f, solver, 8)
}

fn evaluate_with(
    spec: &FunctionalSpec,
    disc: &Discretization,
    f: &ConformalFactor,
    solver: &SolverOptions,
    max_cluster_dim: usize,
) -> Result<Evaluation> {
    let problem = disc.problem(spec.kind, f)?;
    let limit = match spec.kind {
        ProblemKind::Laplace => problem.dim(),
        ProblemKind::Steklov => disc.mesh().boundary_vertices().len(),
    };
    let kmax = spec.max_index();
    if kmax + 1 > limit {
        return Err(Error::InvalidInput(format!(
            "index {kmax} beyond the discrete spectrum ({limit} eigenvalues)"
        )));
    }
    // a couple of extra pairs so the top cluster is seen whole
    let mut count = (kmax + 3).min(limit);
    let eigen = loop {
        let e = eigen::solve(&problem, count, solver)?;
        let top = e.cluster_of(kmax);
        let reaches_end = *top.last().unwrap() + 1 == count;
        if !reaches_end || count == limit || count > kmax + 1 + max_cluster_dim {
            break e;
        }
        count = (count + 4).min(limit);
    };
    let lambdas: Vec<f64> = spec.indices.iter().map(|&k| eigen.renormalized[k]).collect();
    if matches!(spec.form, Form::InvSum) {
        if let Some((i, &l)) = lambdas.iter().enumerate().find(|(_, &l)| !(l >= DEGENERATE_EIGENVALUE)) {
            return Err(Error::DegenerateEigenvalue {
                index: spec.indices[i],
                value: l,
            });
        }
    }
    let value = spec.value_at(&lambdas);
    let d = spec.gradient_at(&lambdas);
    if !value.is_finite() || d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("F is not finite at {lambdas:?}")));
    }
    Ok(Evaluation {
        value,
        indices: spec.indices.clone(),
        lambdas,
        d,
        eigen: Arc::new(eigen),
        problem,
    })
}

/// Multiplicative perturbation `f·(1 + t·h)`, floored at zero-safe values.
pub fn perturb(f: &ConformalFactor, h: &[f64], t: f64) -> Result<ConformalFactor> {
    if h.len() != f.len() {
        return Err(Error::InvalidInput("direction has the wrong length".into()));
    }
    ConformalFactor::new(
        f.values().iter().zip(h).map(|(f, h)| f * (1.0 + t * h)).collect(),
        f.support(),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdOptions {
    /// Decreasing step sizes; consecutive ratios of 2 make the extrapolation exact to O(t⁴).
    pub steps: Vec<f64>,
    /// Relative mismatch between one-sided derivatives that signals a kink.
    pub kink_tol: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            steps: vec![4e-3, 2e-3, 1e-3],
            kink_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FdResult {
    /// Extrapolated central difference.
    pub derivative: f64,
    /// Extrapolated one-sided derivatives along `+h` and `−h` (as `d/dt` at `0±`).
    pub forward: f64,
    pub backward: f64,
    /// Central estimates per step.
    pub central: Vec<f64>,
    pub steps: Vec<f64>,
    /// Set when the one-sided derivatives disagree or the sequence has not settled.
    pub unstable: bool,
}

/// Richardson-extrapolated derivative of `t ↦ E(f·(1 + t·h))` at `t = 0`.
pub fn directional_derivative_fd(obj: &Objective, f: &ConformalFactor, h: &[f64], opts: &FdOptions) -> Result<FdResult> {
    if opts.steps.is_empty() {
        return Err(Error::InvalidInput("empty step schedule".into()));
    }
    let hmax = h.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut steps = opts.steps.clone();
    // keep 1 ± t·h ≥ 1/2
    while steps[0] * hmax > 0.5 {
        for s in steps.iter_mut() {
            *s *= 0.5;
        }
        if steps[0] < 1e-12 {
            return Err(Error::StepUnderflow);
        }
    }
    let e0 = obj.value(f)?;
    let mut central = Vec::new();
    let mut fwd = Vec::new();
    let mut bwd = Vec::new();
    for &t in &steps {
        let ep = obj.value(&perturb(f, h, t)?)?;
        let em = obj.value(&perturb(f, h, -t)?)?;
        central.push((ep - em) / (2.0 * t));
        fwd.push((ep - e0) / t);
        bwd.push((e0 - em) / t);
    }
    let derivative = richardson(&central, &steps, 2);
    let forward = richardson(&fwd, &steps, 1);
    let backward = richardson(&bwd, &steps, 1);
    let floor = 1e-7 * e0.abs().max(1.0);
    let scale = forward.abs().max(backward.abs());
    let mut unstable = (forward - backward).abs() > opts.kink_tol * scale + floor;
    if central.len() >= 3 {
        let a = richardson(&central[..central.len() - 1], &steps[..steps.len() - 1], 2);
        unstable |= (a - derivative).abs() > opts.kink_tol * derivative.abs() + floor;
    }
    Ok(FdResult {
        derivative,
        forward,
        backward,
        central,
        steps,
        unstable,
    })
}

/// Repeated Richardson extrapolation of `D(t) = D + c t^p + c' t^{p+1}…`
/// (`p = 2` for central, `p = 1` for one-sided differences, each pass raising it).
fn richardson(values: &[f64], steps: &[f64], order: i32) -> f64 {
    let mut row: Vec<f64> = values.to_vec();
    let mut p = order;
    let inc = if order == 2 { 2 } else { 1 };
    while row.len() > 1 {
        row = (0..row.len() - 1)
            .map(|j| {
                let r = (steps[j] / steps[j + 1]).powi(p);
                (r * row[j + 1] - row[j]) / (r - 1.0)
            })
            .collect();
        p += inc;
    }
    row[0]
}
