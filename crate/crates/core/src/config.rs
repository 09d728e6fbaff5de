//! Run configuration read from TOML, with builders for the mesh, the
//! functional and initial factors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{BadPointOptions, SphereMapOptions};
use crate::eigen::SolverOptions;
use crate::error::{Error, Result};
use crate::fem::{Discretization, ProblemKind};
use crate::flow::{FlowConfig, MinmaxConfig};
use crate::functional::{Form, FunctionalSpec, Objective, TwoWell};
use crate::mesh::{shapes, ConformalFactor, TriMesh};
use crate::subgradient::SubgradientOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSource {
    File { path: PathBuf },
    Icosphere { level: usize },
    UnitDisk { rings: usize },
    FlatTorus { n: usize },
    Octahedron,
    Icosahedron,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    #[serde(flatten)]
    pub source: MeshSource,
    #[serde(default)]
    pub refine: usize,
    #[serde(default)]
    pub sphere_project: bool,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            source: MeshSource::Icosphere { level: 3 },
            refine: 0,
            sphere_project: false,
        }
    }
}

impl MeshConfig {
    /// Relative file paths are resolved against `base`.
    pub fn build(&self, base: &Path) -> Result<TriMesh> {
        let mesh = match &self.source {
            MeshSource::File { path } => TriMesh::load_off(base.join(path))?,
            MeshSource::Icosphere { level } => shapes::icosphere(*level),
            MeshSource::UnitDisk { rings } => {
                if *rings == 0 {
                    return Err(Error::Config("unit_disk needs at least one ring".into()));
                }
                shapes::unit_disk(*rings)
            }
            MeshSource::FlatTorus { n } => {
                if *n < 3 {
                    return Err(Error::Config("flat_torus needs n ≥ 3".into()));
                }
                shapes::flat_torus(*n)
            }
            MeshSource::Octahedron => shapes::octahedron(),
            MeshSource::Icosahedron => shapes::icosahedron(),
        };
        if self.refine > 0 || self.sphere_project {
            mesh.refine(self.refine, self.sphere_project)
        } else {
            Ok(mesh)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalConfig {
    pub kind: ProblemKind,
    pub form: FormConfig,
    pub indices: Vec<usize>,
    pub coefficients: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormConfig {
    NegSum,
    InvSum,
    /// `(λ̄_{k_1} − a)²(λ̄_{k_1} − b)²`
    TwoWell { a: f64, b: f64 },
}

impl Default for FunctionalConfig {
    fn default() -> Self {
        FunctionalConfig {
            kind: ProblemKind::Laplace,
            form: FormConfig::NegSum,
            indices: vec![1],
            coefficients: None,
        }
    }
}

impl FunctionalConfig {
    pub fn build(&self) -> Result<FunctionalSpec> {
        let coefficients = self.coefficients.clone().unwrap_or_else(|| vec![1.0; self.indices.len()]);
        match &self.form {
            FormConfig::NegSum => FunctionalSpec::new(self.kind, Form::NegSum, self.indices.clone(), coefficients),
            FormConfig::InvSum => FunctionalSpec::new(self.kind, Form::InvSum, self.indices.clone(), coefficients),
            FormConfig::TwoWell { a, b } => {
                if self.coefficients.is_some() {
                    return Err(Error::Config("two_well takes no coefficients".into()));
                }
                FunctionalSpec::custom(self.kind, Arc::new(TwoWell { a: *a, b: *b }), self.indices.clone(), true)
            }
        }
    }
}

/// Initial conformal factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FactorInit {
    Uniform {
        #[serde(default = "one")]
        value: f64,
    },
    /// `1 + amplitude·exp(−|x − center|² / width)`
    Bump { amplitude: f64, center: [f64; 3], width: f64 },
    /// `1 + amplitude·q(x) / max|q|` for a random quadratic `q` of the coordinates.
    Random {
        amplitude: f64,
        #[serde(default)]
        seed: u64,
    },
    /// One value per line, vertex order.
    File { path: PathBuf },
}

fn one() -> f64 {
    1.0
}

impl Default for FactorInit {
    fn default() -> Self {
        FactorInit::Uniform { value: 1.0 }
    }
}

impl FactorInit {
    pub fn build(&self, mesh: &TriMesh, kind: ProblemKind, base: &Path) -> Result<ConformalFactor> {
        let support = kind.support();
        let p = mesh.positions();
        let values: Vec<f64> = match self {
            FactorInit::Uniform { value } => vec![*value; mesh.num_vertices()],
            FactorInit::Bump { amplitude, center, width } => {
                if !(*width > 0.0) {
                    return Err(Error::Config("bump width must be positive".into()));
                }
                p.iter()
                    .map(|x| {
                        let d2: f64 = (0..3).map(|i| (x[i] - center[i]).powi(2)).sum();
                        1.0 + amplitude * (-d2 / width).exp()
                    })
                    .collect()
            }
            FactorInit::Random { amplitude, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let c: Vec<f64> = (0..9).map(|_| StandardNormal.sample(&mut rng)).collect();
                let q: Vec<f64> = p
                    .iter()
                    .map(|x| {
                        c[0] * x[0] + c[1] * x[1] + c[2] * x[2] + c[3] * x[0] * x[1] + c[4] * x[1] * x[2]
                            + c[5] * x[0] * x[2] + c[6] * x[0] * x[0] + c[7] * x[1] * x[1] + c[8] * x[2] * x[2]
                    })
                    .collect();
                let qmax = q.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1e-300);
                q.iter().map(|x| 1.0 + amplitude * x / qmax).collect()
            }
            FactorInit::File { path } => {
                let v = crate::io::read_field(&base.join(path))?;
                if v.len() != mesh.num_vertices() {
                    return Err(Error::Config(format!(
                        "factor file {} has {} values for {} vertices",
                        path.display(),
                        v.len(),
                        mesh.num_vertices()
                    )));
                }
                v
            }
        };
        ConformalFactor::new(values, support).map_err(|e| Error::Config(format!("initial factor: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub count: usize,
    /// Eigenvectors written as fields.
    pub fields: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { count: 10, fields: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalityConfig {
    /// Tolerance on the pseudo-norm relative to `Σ |∂_i F| λ̄_{k_i}`.
    pub rel_tol: f64,
    /// Random directions for the finite-difference pairing check; 0 skips it.
    pub pairing_checks: usize,
}

impl Default for CriticalityConfig {
    fn default() -> Self {
        CriticalityConfig {
            rel_tol: 0.05,
            pairing_checks: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinmaxEnds {
    pub start: FactorInit,
    pub end: FactorInit,
}

impl Default for MinmaxEnds {
    fn default() -> Self {
        MinmaxEnds {
            start: FactorInit::default(),
            end: FactorInit::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub sphere_map: SphereMapOptions,
    pub bad_points: BadPointOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
    pub dump_matrices: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            svg: true,
            dump_matrices: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mesh: MeshConfig,
    pub functional: FunctionalConfig,
    pub factor: FactorInit,
    pub solver: SolverOptions,
    pub subgradient: SubgradientOptions,
    pub criticality: CriticalityConfig,
    pub spectrum: SpectrumConfig,
    pub flow: FlowConfig,
    pub minmax: MinmaxConfig,
    pub path: MinmaxEnds,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0x5eed,
            mesh: MeshConfig::default(),
            functional: FunctionalConfig::default(),
            factor: FactorInit::default(),
            solver: SolverOptions::default(),
            subgradient: SubgradientOptions::default(),
            criticality: CriticalityConfig::default(),
            spectrum: SpectrumConfig::default(),
            flow: FlowConfig::default(),
            minmax: MinmaxConfig::default(),
            path: MinmaxEnds::default(),
            diagnostics: DiagnosticsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Copies the run seed into every seeded component.
    pub fn propagate_seed(&mut self) {
        self.subgradient.seed = self.seed;
        self.flow.subgradient = self.subgradient.clone();
        self.minmax.flow.subgradient = self.subgradient.clone();
        self.solver.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.flow.validate()?;
        self.minmax.flow.validate()?;
        self.functional.build()?;
        if self.spectrum.count == 0 {
            return Err(Error::Config("spectrum.count must be positive".into()));
        }
        let t = self.criticality.rel_tol;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("criticality.rel_tol must be positive, got {t}")));
        }
        if self.minmax.nodes < 2 {
            return Err(Error::Config("minmax.nodes must be at least 2".into()));
        }
        Ok(())
    }

    pub fn objective(&self, disc: Arc<Discretization>) -> Result<Objective> {
        let mut obj = Objective::new(self.functional.build()?, disc, self.solver.clone())?;
        obj.max_cluster_dim = self.subgradient.max_cluster_dim;
        Ok(obj)
    }
}
