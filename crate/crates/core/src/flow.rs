//! Descent flow along downhill densities and min-max deformation of paths.
//!
//! Each step solves the pseudo-norm game, turns the optimal vertex measure
//! into a density `h = τ / w`, and moves `f ← f·(1 + dt·h)` under an Armijo
//! rule. Since `h ≥ 0` the update only adds measure; renormalization keeps
//! the total measure fixed, which `E` does not see.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::ProblemKind;
use crate::functional::{Evaluation, Objective};
use crate::mesh::ConformalFactor;
use crate::sparse::{SkylineCholesky, SparseSymMatrix};
use crate::subgradient::{
    generate_candidates, ps_condition, pseudo_norm, support_function, validate_pairing, PairingValidation,
    PseudoNormResult, SubgradientOptions, SubgradientSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo_c: f64,
    /// Stop once the pseudo-norm drops to this level.
    pub ps_eps: f64,
    pub max_steps: usize,
    pub f_floor: f64,
    pub renormalize_each_step: bool,
    /// Graph-heat smoothing time for the direction; zero disables it.
    pub smoothing: f64,
    /// Keep a factor snapshot every this many accepted steps (0: first and last only).
    pub snapshot_every: usize,
    /// Random directions for the pairing check at the start (0 skips it).
    pub pairing_checks: usize,
    pub subgradient: SubgradientOptions,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt_init: 1e-3,
            dt_min: 1e-9,
            dt_max: 1.0,
            armijo_c: 0.1,
            ps_eps: 1e-2,
            max_steps: 500,
            f_floor: 1e-6,
            renormalize_each_step: true,
            smoothing: 0.0,
            snapshot_every: 0,
            pairing_checks: 0,
            subgradient: SubgradientOptions::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
            }
        };
        pos("dt_init", self.dt_init)?;
        pos("dt_min", self.dt_min)?;
        pos("dt_max", self.dt_max)?;
        pos("f_floor", self.f_floor)?;
        if !(self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::Config(format!(
                "need dt_min ≤ dt_init ≤ dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::Config(format!("armijo_c must lie in (0, 1), got {}", self.armijo_c)));
        }
        if !(self.ps_eps >= 0.0) {
            return Err(Error::Config(format!("ps_eps must be nonnegative, got {}", self.ps_eps)));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config(format!("smoothing must be nonnegative, got {}", self.smoothing)));
        }
        if self.subgradient.max_cluster_dim == 0 {
            return Err(Error::Config("max_cluster_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Density `h = τ / w` on the support, zero elsewhere, so that `⟨w, h⟩ = 1`
/// and `max_a ⟨h, ψ_a⟩ ≤ −|∂E|`.
pub fn downhill_direction(set: &SubgradientSet, result: &PseudoNormResult) -> Result<Vec<f64>> {
    let n = set.weights.len();
    if result.tau.len() != n {
        return Err(Error::InvalidInput("τ does not match the candidate set".into()));
    }
    let mut h = vec![0.0; n];
    for &v in &set.support {
        h[v] = result.tau[v] / set.weights[v];
    }
    let sup = support_function(set, &h)?;
    let slack = 1e-8 * set.scale().max(1.0);
    if sup > -result.value + slack {
        return Err(Error::LpFailure(format!(
            "direction pairs to {sup:e}, above −|∂E| = {:e}",
            -result.value
        )));
    }
    Ok(h)
}

/// Heat-smoothed density `(D + sK)⁻¹ D h` with `D = diag(w)`; keeps `⟨w, h⟩`.
pub fn smooth_direction(obj: &Objective, set: &SubgradientSet, h: &[f64], s: f64) -> Result<Vec<f64>> {
    if s == 0.0 {
        return Ok(h.to_vec());
    }
    let mesh = obj.disc.mesh();
    let sup = &set.support;
    let mut local = vec![usize::MAX; h.len()];
    for (i, &v) in sup.iter().enumerate() {
        local[v] = i;
    }
    // cotangent stiffness on the surface, unit-weight path graph along the boundary
    let mut trip = Vec::new();
    match obj.kind() {
        ProblemKind::Laplace => {
            let k = obj.disc.stiffness();
            for (i, &v) in sup.iter().enumerate() {
                for (u, x) in k.row(v) {
                    if local[u] != usize::MAX && local[u] >= i {
                        trip.push((i, local[u], s * x));
                    }
                }
            }
        }
        ProblemKind::Steklov => {
            let scale = mesh.boundary_length() / sup.len() as f64;
            for [a, b] in mesh.boundary_edges() {
                let (i, j) = (local[a], local[b]);
                let x = s / (mesh.edge_length(mesh.edge_index(a, b).expect("edge")) / scale);
                trip.push((i, i, x));
                trip.push((j, j, x));
                trip.push((i.min(j), i.max(j), -x));
            }
        }
    }
    for (i, &v) in sup.iter().enumerate() {
        trip.push((i, i, set.weights[v]));
    }
    let a = SparseSymMatrix::from_triplets(sup.len(), &trip);
    let chol = SkylineCholesky::factor(&a)?;
    let rhs: Vec<f64> = sup.iter().map(|&v| set.weights[v] * h[v]).collect();
    let x = chol.solve(&rhs);
    let mut out = vec![0.0; h.len()];
    for (i, &v) in sup.iter().enumerate() {
        out[v] = x[i].max(0.0);
    }
    let mass: f64 = sup.iter().map(|&v| out[v] * set.weights[v]).sum();
    if !(mass > 0.0) {
        return Ok(h.to_vec());
    }
    out.iter_mut().for_each(|x| *x /= mass);
    Ok(out)
}

/// Total measure of `f` against the lumped weights of the problem kind.
fn total_measure(obj: &Objective, f: &[f64]) -> f64 {
    obj.disc.base_weights(obj.kind()).iter().zip(f).map(|(w, f)| w * f).sum()
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub f_new: ConformalFactor,
    /// Evaluation at `f_new` when the step was accepted.
    pub eval: Option<Evaluation>,
    pub accepted: bool,
    pub dt_used: f64,
    pub trials: usize,
}

/// One Armijo-controlled step from `f` (with `E(f) = e` and pseudo-norm `pn`)
/// along `h`. On rejection `dt` halves until it would drop below `dt_min`;
/// then the step is reported as not accepted and `f` is returned unchanged.
pub fn flow_step(obj: &Objective, f: &ConformalFactor, e: f64, pn: f64, h: &[f64], dt: f64, config: &FlowConfig) -> Result<StepOutcome> {
    if h.len() != f.len() {
        return Err(Error::InvalidInput("direction has the wrong length".into()));
    }
    let reference = total_measure(obj, &vec![1.0; f.len()]);
    let mut dt = dt.clamp(config.dt_min, config.dt_max);
    let mut trials = 0;
    loop {
        trials += 1;
        let mut g: Vec<f64> = f.values().iter().zip(h).map(|(f, h)| f * (1.0 + dt * h)).collect();
        if config.renormalize_each_step {
            let c = reference / total_measure(obj, &g);
            g.iter_mut().for_each(|x| *x *= c);
        }
        g.iter_mut().for_each(|x| *x = x.max(config.f_floor));
        let trial = ConformalFactor::new(g, f.support())?;
        let ev = obj.evaluate(&trial)?;
        if ev.value <= e - config.armijo_c * dt * pn.max(0.0) {
            return Ok(StepOutcome {
                f_new: trial,
                eval: Some(ev),
                accepted: true,
                dt_used: dt,
                trials,
            });
        }
        if dt / 2.0 < config.dt_min {
            return Ok(StepOutcome {
                f_new: f.clone(),
                eval: None,
                accepted: false,
                dt_used: dt,
                trials,
            });
        }
        dt /= 2.0;
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowRecord {
    pub step: usize,
    pub energy: f64,
    pub pseudo_norm: f64,
    pub dt: f64,
    pub accepted: bool,
    pub lambdas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    PalaisSmale,
    Stalled,
    MaxSteps,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowTrace {
    pub records: Vec<FlowRecord>,
    /// Record indices whose pseudo-norm is at most `ps_eps`.
    pub ps_points: Vec<usize>,
    pub termination: Termination,
    #[serde(skip)]
    pub final_factor: Option<ConformalFactor>,
    pub pairing: Option<PairingValidation>,
}

impl FlowTrace {
    pub fn last(&self) -> &FlowRecord {
        self.records.last().expect("trace has at least the initial record")
    }

    /// Largest increase of `E` between consecutive accepted records.
    pub fn max_increase(&self) -> f64 {
        let acc: Vec<f64> = self.records.iter().filter(|r| r.accepted).map(|r| r.energy).collect();
        acc.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Evaluation, candidates and pseudo-norm at one factor.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub f: ConformalFactor,
    pub eval: Evaluation,
    pub set: SubgradientSet,
    pub pn: PseudoNormResult,
}

impl FlowState {
    pub fn new(obj: &Objective, f: ConformalFactor, opts: &SubgradientOptions) -> Result<Self> {
        let eval = obj.evaluate(&f)?;
        Self::from_eval(f, eval, opts)
    }

    fn from_eval(f: ConformalFactor, eval: Evaluation, opts: &SubgradientOptions) -> Result<Self> {
        let set = generate_candidates(&eval, opts)?;
        let pn = pseudo_norm(&set)?;
        Ok(FlowState { f, eval, set, pn })
    }

    fn record(&self, step: usize, dt: f64, accepted: bool, snapshot: bool) -> FlowRecord {
        FlowRecord {
            step,
            energy: self.eval.value,
            pseudo_norm: self.pn.value,
            dt,
            accepted,
            lambdas: self.eval.lambdas.clone(),
            snapshot: snapshot.then(|| self.f.values().to_vec()),
        }
    }

    /// Direction, step and re-evaluation. Returns `None` when the step stalled.
    fn advance(&mut self, obj: &Objective, dt: f64, config: &FlowConfig) -> Result<Option<f64>> {
        let h = downhill_direction(&self.set, &self.pn)?;
        let h = smooth_direction(obj, &self.set, &h, config.smoothing)?;
        let out = flow_step(obj, &self.f, self.eval.value, self.pn.value, &h, dt, config)?;
        if !out.accepted {
            return Ok(None);
        }
        *self = FlowState::from_eval(out.f_new, out.eval.expect("accepted"), &config.subgradient)?;
        Ok(Some(out.dt_used))
    }
}

fn with_step<T>(step: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("step {step}: {m}")),
        Error::LpFailure(m) => Error::LpFailure(format!("step {step}: {m}")),
        other => other,
    })
}

pub fn run_flow(obj: &Objective, f0: &ConformalFactor, config: &FlowConfig) -> Result<FlowTrace> {
    config.validate()?;
    let mut state = FlowState::new(obj, f0.clone(), &config.subgradient)?;
    let pairing = if config.pairing_checks > 0 {
        Some(validate_pairing(obj, f0, &state.eval, config.pairing_checks, config.subgradient.seed)?)
    } else {
        None
    };
    let mut records = vec![state.record(0, 0.0, true, true)];
    let mut dt = config.dt_init;
    let mut accepted = 0;
    let termination = loop {
        if state.pn.value <= config.ps_eps {
            break Termination::PalaisSmale;
        }
        if records.len() > config.max_steps {
            break Termination::MaxSteps;
        }
        let step = records.len();
        match with_step(step, state.advance(obj, dt, config))? {
            Some(used) => {
                accepted += 1;
                let snap = config.snapshot_every > 0 && accepted % config.snapshot_every == 0;
                records.push(state.record(step, used, true, snap));
                dt = (2.0 * used).min(config.dt_max);
            }
            None => {
                let mut r = state.record(step, config.dt_min, false, false);
                r.snapshot = None;
                records.push(r);
                break Termination::Stalled;
            }
        }
    };
    if let Some(r) = records.iter_mut().rev().find(|r| r.accepted) {
        r.snapshot = Some(state.f.values().to_vec());
    }
    let ps_points = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.accepted && r.pseudo_norm <= config.ps_eps)
        .map(|(i, _)| i)
        .collect();
    Ok(FlowTrace {
        records,
        ps_points,
        termination,
        final_factor: Some(state.f),
        pairing,
    })
}

/// A path of factors, piecewise linear between nodes, with pinned endpoints.
#[derive(Debug, Clone)]
pub struct PathFamily {
    pub start: ConformalFactor,
    pub end: ConformalFactor,
    pub interior: Vec<ConformalFactor>,
}

impl PathFamily {
    /// Straight segment with `nodes` nodes in total, endpoints included.
    pub fn linear(start: ConformalFactor, end: ConformalFactor, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Config("a path needs at least two nodes".into()));
        }
        if start.len() != end.len() || start.support() != end.support() {
            return Err(Error::InvalidInput("path endpoints live on different meshes or supports".into()));
        }
        let interior = (1..nodes - 1)
            .map(|i| lerp(&start, &end, i as f64 / (nodes - 1) as f64))
            .collect::<Result<_>>()?;
        Ok(PathFamily { start, end, interior })
    }

    pub fn nodes(&self) -> Vec<&ConformalFactor> {
        std::iter::once(&self.start)
            .chain(&self.interior)
            .chain(std::iter::once(&self.end))
            .collect()
    }

    /// The factor at path parameter `t ∈ [0, nodes − 1]`.
    pub fn at(&self, t: f64) -> Result<ConformalFactor> {
        let nodes = self.nodes();
        let t = t.clamp(0.0, (nodes.len() - 1) as f64);
        let i = (t.floor() as usize).min(nodes.len() - 2);
        lerp(nodes[i], nodes[i + 1], t - i as f64)
    }

    /// The path sampled with `per_segment` points on every segment (left end included).
    pub fn densify(&self, per_segment: usize) -> Result<Vec<ConformalFactor>> {
        let nodes = self.nodes();
        let mut out = Vec::new();
        for w in nodes.windows(2) {
            for j in 0..per_segment.max(1) {
                out.push(lerp(w[0], w[1], j as f64 / per_segment.max(1) as f64)?);
            }
        }
        out.push(self.end.clone());
        Ok(out)
    }
}

pub fn lerp(a: &ConformalFactor, b: &ConformalFactor, s: f64) -> Result<ConformalFactor> {
    ConformalFactor::new(
        a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - s) * x + s * y).collect(),
        a.support(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinmaxConfig {
    pub flow: FlowConfig,
    /// Nodes of the initial straight path, endpoints included.
    pub nodes: usize,
    /// Relative width of the level band below `c` searched for Palais-Smale candidates.
    pub level_eps: f64,
    /// Samples per segment when estimating `c` on the deformed path.
    pub per_segment: usize,
    /// `δ` in the mixture condition checked at candidates.
    pub delta: f64,
    pub tol: f64,
    /// Candidates kept, smallest pseudo-norm first.
    pub max_candidates: usize,
    /// Golden-section iterations maximizing `E` around the top sample.
    pub refine_iters: usize,
}

impl Default for MinmaxConfig {
    fn default() -> Self {
        MinmaxConfig {
            flow: FlowConfig::default(),
            nodes: 17,
            level_eps: 1e-2,
            per_segment: 8,
            delta: 1e-2,
            tol: 1e-9,
            max_candidates: 8,
            refine_iters: 40,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PsCandidate {
    /// Position along the deformed path, node `i` sitting at `i`.
    pub position: f64,
    pub energy: f64,
    pub pseudo_norm: f64,
    pub condition_holds: bool,
    pub condition_margin: f64,
}

#[derive(Debug, Clone)]
pub struct MinmaxResult {
    /// Maximum of `E` over the densely sampled deformed path.
    pub c_estimate: f64,
    /// `max_nodes E` after each sweep; the last entry is the node-level estimate.
    pub c_history: Vec<f64>,
    pub traces: Vec<FlowTrace>,
    pub ps_candidates: Vec<PsCandidate>,
    pub family: PathFamily,
}

/// Deforms the interior nodes by the descent flow, endpoints fixed.
pub fn minmax_deform(obj: &Objective, family: &PathFamily, config: &MinmaxConfig) -> Result<MinmaxResult> {
    let fc = &config.flow;
    fc.validate()?;
    if !(config.level_eps >= 0.0 && config.delta >= 0.0 && config.tol >= 0.0) {
        return Err(Error::Config("level_eps, delta and tol must be nonnegative".into()));
    }
    for (which, f) in [("start", &family.start), ("end", &family.end)] {
        let s = FlowState::new(obj, f.clone(), &fc.subgradient)?;
        if s.pn.value > fc.ps_eps {
            return Err(Error::EndpointNotCritical {
                which,
                pseudo_norm: s.pn.value,
            });
        }
    }
    let e_start = obj.value(&family.start)?;
    let e_end = obj.value(&family.end)?;
    let mut states = family
        .interior
        .iter()
        .map(|f| FlowState::new(obj, f.clone(), &fc.subgradient))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<Vec<FlowRecord>> = states.iter().map(|s| vec![s.record(0, 0.0, true, false)]).collect();
    let mut dts = vec![fc.dt_init; states.len()];
    let mut done: Vec<Option<Termination>> = vec![None; states.len()];
    let level = |states: &[FlowState]| states.iter().map(|s| s.eval.value).fold(e_start.max(e_end), f64::max);
    let mut c_history = vec![level(&states)];
    for sweep in 1..=fc.max_steps {
        if done.iter().all(Option::is_some) {
            break;
        }
        for (i, s) in states.iter_mut().enumerate() {
            if done[i].is_some() {
                continue;
            }
            if s.pn.value <= fc.ps_eps {
                done[i] = Some(Termination::PalaisSmale);
                continue;
            }
            match with_step(sweep, s.advance(obj, dts[i], fc))? {
                Some(used) => {
                    records[i].push(s.record(sweep, used, true, false));
                    dts[i] = (2.0 * used).min(fc.dt_max);
                }
                None => {
                    records[i].push(s.record(sweep, fc.dt_min, false, false));
                    done[i] = Some(Termination::Stalled);
                }
            }
        }
        c_history.push(level(&states));
    }
    let deformed = PathFamily {
        start: family.start.clone(),
        end: family.end.clone(),
        interior: states.iter().map(|s| s.f.clone()).collect(),
    };
    // nodes may drift into the wells; the barrier then sits between nodes
    let dense = deformed.densify(config.per_segment)?;
    let energies = dense.iter().map(|f| obj.value(f)).collect::<Result<Vec<_>>>()?;
    let per = config.per_segment.max(1) as f64;
    let (jmax, _) = energies
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (j, &e)| if e > acc.1 { (j, e) } else { acc });
    let mut points: Vec<(f64, f64)> = energies.iter().enumerate().map(|(j, &e)| (j as f64 / per, e)).collect();
    if config.refine_iters > 0 {
        let lo = (jmax as f64 - 1.0).max(0.0) / per;
        let hi = (jmax as f64 + 1.0).min((dense.len() - 1) as f64) / per;
        points.push(golden_max(|t| obj.value(&deformed.at(t)?), lo, hi, config.refine_iters)?);
    }
    let c_estimate = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let band = config.level_eps * c_estimate.abs().max(f64::MIN_POSITIVE);
    let mut ps_candidates = Vec::new();
    for &(t, e) in &points {
        if e < c_estimate - band {
            continue;
        }
        let s = FlowState::new(obj, deformed.at(t)?, &fc.subgradient)?;
        let (holds, margin) = ps_condition(&s.set, config.delta, config.tol)?;
        ps_candidates.push(PsCandidate {
            position: t,
            energy: e,
            pseudo_norm: s.pn.value,
            condition_holds: holds,
            condition_margin: margin,
        });
    }
    ps_candidates.sort_by(|a, b| a.pseudo_norm.total_cmp(&b.pseudo_norm));
    ps_candidates.truncate(config.max_candidates.max(1));
    let traces = records
        .into_iter()
        .zip(states)
        .zip(done)
        .map(|((records, s), d)| {
            let ps_points = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.accepted && r.pseudo_norm <= fc.ps_eps)
                .map(|(i, _)| i)
                .collect();
            FlowTrace {
                records,
                ps_points,
                termination: d.unwrap_or(Termination::MaxSteps),
                final_factor: Some(s.f),
                pairing: None,
            }
        })
        .collect();
    Ok(MinmaxResult {
        c_estimate,
        c_history,
        traces,
        ps_candidates,
        family: deformed,
    })
}

/// Golden-section search for the maximum of `g` on `[lo, hi]`; returns the
/// best point seen and its value.
fn golden_max(mut g: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, iters: usize) -> Result<(f64, f64)> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut g1, mut g2) = (g(x1)?, g(x2)?);
    for _ in 0..iters {
        if g1 >= g2 {
            b = x2;
            x2 = x1;
            g2 = g1;
            x1 = b - r * (b - a);
            g1 = g(x1)?;
        } else {
            a = x1;
            x1 = x2;
            g1 = g2;
            x2 = a + r * (b - a);
            g2 = g(x2)?;
        }
    }
    Ok(if g1 >= g2 { (x1, g1) } else { (x2, g2) })
}
