//! `eigopt` command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{MeshSource, RunConfig};
use crate::diagnostics::{bad_point_scan, energy_identity_check, sphere_map_report};
use crate::eigen;
use crate::error::{Error, Result};
use crate::fem::{Discretization, ProblemKind};
use crate::flow::{minmax_deform, run_flow, FlowTrace, PathFamily};
use crate::functional::{Evaluation, Objective};
use crate::io::{self, Series};
use crate::mesh::{ConformalFactor, TriMesh};
use crate::subgradient::{generate_candidates, is_critical, validate_pairing};

#[derive(Debug, Parser)]
#[command(name = "eigopt", version, about = "Optimize Laplace and Steklov eigenvalues over conformal factors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; every other flag overrides it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// OFF mesh file.
    #[arg(long, global = true)]
    pub mesh: Option<PathBuf>,
    /// Midpoint subdivision levels applied after loading.
    #[arg(long, global = true)]
    pub refine: Option<usize>,
    /// Project refined vertices onto the unit sphere.
    #[arg(long, global = true)]
    pub sphere_project: bool,
    /// laplace or steklov.
    #[arg(long, global = true)]
    pub kind: Option<ProblemKind>,
    /// Eigenvalues computed by `spectrum`.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Relative eigen-residual tolerance.
    #[arg(long, global = true)]
    pub eig_tol: Option<f64>,
    /// Master seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Initial factor, one value per vertex.
    #[arg(long, global = true)]
    pub factor: Option<PathBuf>,
    /// Write stiffness and mass matrices in MatrixMarket format.
    #[arg(long, global = true)]
    pub dump_matrices: bool,
    /// Skip SVG plots.
    #[arg(long, global = true)]
    pub no_svg: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Log progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues and eigenvectors at the initial factor.
    Spectrum,
    /// Subgradient candidates, pseudo-norm and criticality at the initial factor.
    Subgrad,
    /// Descent flow from the initial factor.
    Flow {
        /// Stop once the pseudo-norm falls below this (`inf` stops immediately).
        #[arg(long)]
        ps_eps: Option<f64>,
        /// Step budget.
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Min-max deformation of the straight path between `path.start` and `path.end`.
    Minmax,
    /// Sphere-map and bad-point diagnostics at the initial factor.
    Diagnose,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Subgrad => "subgrad",
            Command::Flow { .. } => "flow",
            Command::Minmax => "minmax",
            Command::Diagnose => "diagnose",
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(dir) => {
            eprintln!("eigopt {}: wrote {}", cli.command.name(), dir.join("summary.json").display());
            0
        }
        Err(e) => {
            eprintln!("eigopt: {e}");
            e.exit_code()
        }
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<(RunConfig, PathBuf)> {
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    let (mut cfg, base) = match &cli.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            let base = p.parent().map(|d| cwd.join(d)).unwrap_or_else(|| cwd.clone());
            (cfg, base)
        }
        None => (RunConfig::default(), cwd.clone()),
    };
    if let Some(m) = &cli.mesh {
        cfg.mesh.source = MeshSource::File { path: cwd.join(m) };
    }
    if let Some(r) = cli.refine {
        cfg.mesh.refine = r;
    }
    if cli.sphere_project {
        cfg.mesh.sphere_project = true;
    }
    if let Some(k) = cli.kind {
        cfg.functional.kind = k;
    }
    if let Some(c) = cli.count {
        cfg.spectrum.count = c;
    }
    if let Some(t) = cli.eig_tol {
        cfg.solver.eig_tol = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = &cli.factor {
        cfg.factor = crate::config::FactorInit::File { path: cwd.join(f) };
    }
    if cli.dump_matrices {
        cfg.output.dump_matrices = true;
    }
    if cli.no_svg {
        cfg.output.svg = false;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    if let Command::Flow { ps_eps, max_steps } = &cli.command {
        if let Some(e) = ps_eps {
            cfg.flow.ps_eps = *e;
        }
        if let Some(n) = max_steps {
            cfg.flow.max_steps = *n;
        }
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok((cfg, base))
}

struct Setup {
    disc: Arc<Discretization>,
    obj: Objective,
    f0: ConformalFactor,
    out: PathBuf,
}

fn setup(cfg: &RunConfig, base: &Path) -> Result<Setup> {
    let mesh = cfg.mesh.build(base)?;
    log::info!("mesh: {} vertices, {} triangles", mesh.num_vertices(), mesh.num_triangles());
    let f0 = cfg.factor.build(&mesh, cfg.functional.kind, base)?;
    let disc = Arc::new(Discretization::new(mesh)?);
    let obj = cfg.objective(disc.clone())?;
    let out = cfg.output.dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    if cfg.output.dump_matrices {
        let problem = disc.problem(cfg.functional.kind, &f0)?;
        io::write_text(&out.join("stiffness.mtx"), &problem.stiffness.to_matrix_market())?;
        io::write_text(&out.join("mass.mtx"), &problem.mass_matrix().to_matrix_market())?;
    }
    Ok(Setup { disc, obj, f0, out })
}

fn mesh_summary(m: &TriMesh) -> Value {
    json!({
        "vertices": m.num_vertices(),
        "triangles": m.num_triangles(),
        "boundary_loops": m.boundary_loops().len(),
        "genus": m.genus(),
        "total_area": m.total_area(),
        "boundary_length": m.boundary_length(),
    })
}

fn eval_summary(e: &Evaluation) -> Value {
    json!({
        "value": e.value,
        "indices": e.indices,
        "lambdas": e.lambdas,
        "d": e.d,
        "total_measure": e.eigen.total_measure,
        "clusters": e.eigen.clusters,
        "max_residual": e.eigen.max_residual(),
    })
}

/// `Σ |∂_i F| λ̄_{k_i}`, the scale relative criticality tolerances refer to.
pub fn criticality_scale(e: &Evaluation) -> f64 {
    e.d.iter().zip(&e.lambdas).map(|(d, l)| d.abs() * l.abs()).sum::<f64>().max(f64::MIN_POSITIVE)
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::InvalidInput(format!("json: {e}")))
}

fn write_svg(cfg: &RunConfig, path: &Path, title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> Result<()> {
    if cfg.output.svg {
        io::write_text(path, &io::svg_line_plot(title, xlabel, ylabel, series, log_y))?;
    }
    Ok(())
}

fn write_trace_outputs(cfg: &RunConfig, out: &Path, stem: &str, trace: &FlowTrace) -> Result<()> {
    io::write_text(&out.join(format!("{stem}.csv")), &io::trace_csv(trace))?;
    let acc = || trace.records.iter().filter(|r| r.accepted);
    write_svg(
        cfg,
        &out.join(format!("{stem}_energy.svg")),
        "E along the flow",
        "step",
        "E",
        &[Series {
            label: "E",
            points: acc().map(|r| (r.step as f64, r.energy)).collect(),
        }],
        false,
    )?;
    write_svg(
        cfg,
        &out.join(format!("{stem}_pseudo_norm.svg")),
        "|∂E| along the flow",
        "step",
        "log10 |∂E|",
        &[Series {
            label: "|∂E|",
            points: acc().map(|r| (r.step as f64, r.pseudo_norm)).collect(),
        }],
        true,
    )?;
    for r in &trace.records {
        if let Some(s) = &r.snapshot {
            io::write_field(&out.join(format!("{stem}_step{:06}.field", r.step)), s)?;
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<PathBuf> {
    let (cfg, base) = resolve_config(cli)?;
    let s = setup(&cfg, &base)?;
    let kind = cfg.functional.kind;
    let result = match &cli.command {
        Command::Spectrum => spectrum(&cfg, &s)?,
        Command::Subgrad => subgrad(&cfg, &s)?,
        Command::Flow { .. } => flow(&cfg, &s)?,
        Command::Minmax => minmax(&cfg, &s, &base)?,
        Command::Diagnose => diagnose(&cfg, &s)?,
    };
    let summary = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "kind": kind,
        "mesh": mesh_summary(s.disc.mesh()),
        "result": result,
        "config": to_json(&cfg)?,
    });
    io::write_json(&s.out.join("summary.json"), &summary)?;
    Ok(s.out)
}

fn spectrum(cfg: &RunConfig, s: &Setup) -> Result<Value> {
    let problem = s.disc.problem(cfg.functional.kind, &s.f0)?;
    let pkg = eigen::solve(&problem, cfg.spectrum.count, &cfg.solver)?;
    for i in 0..cfg.spectrum.fields.min(pkg.count()) {
        io::write_field(&s.out.join(format!("eigvec_{i:03}.field")), &pkg.vector(i))?;
    }
    write_svg(
        cfg,
        &s.out.join("spectrum.svg"),
        "renormalized spectrum",
        "index",
        "λ̄",
        &[Series {
            label: "λ̄",
            points: pkg.renormalized.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect(),
        }],
        false,
    )?;
    Ok(json!({
        "values": pkg.values,
        "renormalized": pkg.renormalized,
        "residuals": pkg.residuals,
        "clusters": pkg.clusters,
        "total_measure": pkg.total_measure,
        "iterations": pkg.iterations,
    }))
}

fn subgrad(cfg: &RunConfig, s: &Setup) -> Result<Value> {
    let eval = s.obj.evaluate(&s.f0)?;
    let set = generate_candidates(&eval, &cfg.subgradient)?;
    let tol = cfg.criticality.rel_tol * criticality_scale(&eval);
    let report = is_critical(&set, tol)?;
    let pairing = if cfg.criticality.pairing_checks > 0 {
        Some(validate_pairing(&s.obj, &s.f0, &eval, cfg.criticality.pairing_checks, cfg.seed)?)
    } else {
        None
    };
    let pn = crate::subgradient::pseudo_norm(&set)?;
    io::write_field(&s.out.join("tau.field"), &pn.tau)?;
    io::write_field(&s.out.join("weights.field"), &set.weights)?;
    for (a, c) in set.candidates.iter().enumerate().take(16) {
        io::write_field(&s.out.join(format!("psi_{a:03}.field")), &c.psi)?;
    }
    Ok(json!({
        "evaluation": eval_summary(&eval),
        "candidates": set.len(),
        "sources": set.candidates.iter().map(|c| to_json(&c.source)).collect::<Result<Vec<_>>>()?,
        "max_mean_violation": set.max_mean_violation(),
        "pseudo_norm": pn.value,
        "duality_gap": pn.duality_gap,
        "criticality": to_json(&report)?,
        "pairing": to_json(&pairing)?,
    }))
}

fn flow(cfg: &RunConfig, s: &Setup) -> Result<Value> {
    let trace = run_flow(&s.obj, &s.f0, &cfg.flow)?;
    write_trace_outputs(cfg, &s.out, "trace", &trace)?;
    let last = trace.last();
    if let Some(f) = &trace.final_factor {
        io::write_field(&s.out.join("final_factor.field"), f.values())?;
    }
    io::write_field(&s.out.join("initial_factor.field"), s.f0.values())?;
    Ok(json!({
        "termination": trace.termination,
        "records": trace.records.len(),
        "accepted_steps": trace.records.iter().skip(1).filter(|r| r.accepted).count(),
        "initial_energy": trace.records[0].energy,
        "final_energy": last.energy,
        "final_pseudo_norm": last.pseudo_norm,
        "final_lambdas": last.lambdas,
        "max_increase": trace.max_increase(),
        "ps_points": trace.ps_points,
        "pairing": to_json(&trace.pairing)?,
    }))
}

fn minmax(cfg: &RunConfig, s: &Setup, base: &Path) -> Result<Value> {
    let mesh = s.disc.mesh();
    let kind = cfg.functional.kind;
    let start = cfg.path.start.build(mesh, kind, base)?;
    let end = cfg.path.end.build(mesh, kind, base)?;
    let family = PathFamily::linear(start, end, cfg.minmax.nodes)?;
    let res = minmax_deform(&s.obj, &family, &cfg.minmax)?;
    let mut csv = String::from("node,step,energy,pseudo_norm,dt,accepted\n");
    for (i, t) in res.traces.iter().enumerate() {
        for r in &t.records {
            csv.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{}\n",
                i + 1,
                r.step,
                r.energy,
                r.pseudo_norm,
                r.dt,
                r.accepted as u8
            ));
        }
    }
    io::write_text(&s.out.join("trace.csv"), &csv)?;
    let nodes = res.family.nodes();
    let energies: Vec<f64> = nodes.iter().map(|f| s.obj.value(f)).collect::<Result<_>>()?;
    let top = energies
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    io::write_field(&s.out.join("top_node.field"), nodes[top].values())?;
    write_svg(
        cfg,
        &s.out.join("path_energy.svg"),
        "E along the path",
        "node",
        "E",
        &[Series {
            label: "E",
            points: energies.iter().enumerate().map(|(i, &e)| (i as f64, e)).collect(),
        }],
        false,
    )?;
    write_svg(
        cfg,
        &s.out.join("c_history.svg"),
        "max E over the path",
        "sweep",
        "c",
        &[Series {
            label: "c",
            points: res.c_history.iter().enumerate().map(|(i, &e)| (i as f64, e)).collect(),
        }],
        false,
    )?;
    Ok(json!({
        "c_estimate": res.c_estimate,
        "c_history": res.c_history,
        "node_energies": energies,
        "top_node": top,
        "terminations": res.traces.iter().map(|t| t.termination).collect::<Vec<_>>(),
        "ps_candidates": to_json(&res.ps_candidates)?,
    }))
}

fn diagnose(cfg: &RunConfig, s: &Setup) -> Result<Value> {
    let eval = s.obj.evaluate(&s.f0)?;
    let identity = energy_identity_check(&eval)?;
    // a failed normalization is a finding, not a fatal error
    let sphere = match sphere_map_report(&eval, &cfg.diagnostics.sphere_map) {
        Ok(r) => {
            io::write_field(&s.out.join("omega.field"), &r.omega)?;
            to_json(&r)?
        }
        Err(e @ Error::NormalizationFailure(_)) => json!({ "error": e.to_string() }),
        Err(e) => return Err(e),
    };
    let bad = match bad_point_scan(&s.disc, &s.f0, &eval, &cfg.diagnostics.bad_points) {
        Ok(bad) => {
            let labels: Vec<String> = bad.centers.iter().map(|c| format!("vertex {c}")).collect();
            let series: Vec<Series> = bad
                .lambda_star
                .iter()
                .zip(&labels)
                .take(6)
                .map(|(row, label)| Series {
                    label,
                    points: bad.radii.iter().zip(row).filter_map(|(&r, l)| l.map(|l| (r, l))).collect(),
                })
                .collect();
            write_svg(cfg, &s.out.join("lambda_star.svg"), "ball eigenvalue against radius", "radius", "λ*", &series, true)?;
            to_json(&bad)?
        }
        // every ball under-resolved: the mesh is too coarse for the radius grid
        Err(e @ Error::BallTooSmall { .. }) => json!({ "error": e.to_string() }),
        Err(e) => return Err(e),
    };
    Ok(json!({
        "evaluation": eval_summary(&eval),
        "energy_identity": to_json(&identity)?,
        "sphere_map": sphere,
        "bad_points": bad,
    }))
}
