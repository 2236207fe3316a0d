//! Declarative run configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use chdbc::experiments::{PerturbationTarget, ProblemData};
use chdbc::graphs::{validate_pair, MonotoneGraph, Perturbation};
use chdbc::initdata::{generate, ProfileKind, ProfileSpec};
use chdbc::stepping::{Scheme, SolverConfig, Source, SourceTerm, TimeProfile};
use chdbc::{Error, Field, Mesh, Potential, Result};

use crate::io::read_field;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub potential: PotentialSection,
    pub solver: SolverSection,
    pub initial: InitialSection,
    pub source: SourceSection,
    pub depcheck: DepcheckSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Regular,
    Logarithmic,
    Obstacle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSection {
    pub kind: PotentialKind,
    /// Boundary potential when it differs from the bulk one.
    pub boundary: Option<PotentialKind>,
    pub c1: f64,
    pub c2: f64,
    /// Yosida parameter; defaults to 0, or 1e-3 with an obstacle graph.
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    FullyImplicit,
    ConvexSplitting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Surface diffusion for `run` and `prep-init`.
    pub delta: f64,
    /// Decreasing list for `sweep`.
    pub deltas: Vec<f64>,
    pub dt: f64,
    pub t_final: f64,
    pub scheme: SchemeName,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub reuse_jacobian: bool,
    /// Repeat a sweep with `λ/2` when `λ > 0`.
    pub lambda_refinement: bool,
    /// Number of time steps used by the dt check of a sweep; 0 disables it.
    pub dt_levels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Constant,
    TanhStripe,
    Cosine,
    RandomSmooth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub profile: ProfileName,
    pub mean: f64,
    pub amplitude: f64,
    pub width: f64,
    pub modes: usize,
    pub seed: u64,
    pub margin: f64,
    /// Field file to load instead of generating a profile.
    pub file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    Zero,
    Constant,
    Cosine,
    Bump,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeName {
    Constant,
    Linear,
    Harmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceTermSection {
    pub shape: ShapeName,
    pub amplitude: f64,
    pub modes: usize,
    /// Width of the Gaussian bump.
    pub width: f64,
    pub time: TimeName,
    pub rate: f64,
    pub omega: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub g: SourceTermSection,
    pub h: SourceTermSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetName {
    Source,
    Initial,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepcheckSection {
    pub epsilons: Vec<f64>,
    /// Surface diffusion values; 0 is allowed.
    pub deltas: Vec<f64>,
    pub target: TargetName,
    /// Perturbation direction, made mean-zero before use.
    pub bump: SourceTermSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write `u` every this many steps during `run`; 0 writes only the end state.
    pub checkpoint_every: usize,
    /// Add the uniform-in-δ bound table to a sweep.
    pub uniform_table: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mesh: MeshSection::default(),
            potential: PotentialSection::default(),
            solver: SolverSection::default(),
            initial: InitialSection::default(),
            source: SourceSection::default(),
            depcheck: DepcheckSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection {
            nx: 64,
            ny: 65,
            lx: 1.0,
            ly: 1.0,
        }
    }
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection {
            kind: PotentialKind::Regular,
            boundary: None,
            c1: 2.0,
            c2: 1.0,
            lambda: None,
        }
    }
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            delta: 0.1,
            deltas: (2..=8).map(|k| 2f64.powi(-k)).collect(),
            dt: 1e-4,
            t_final: 0.1,
            scheme: SchemeName::ConvexSplitting,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            reuse_jacobian: true,
            lambda_refinement: true,
            dt_levels: 0,
        }
    }
}

impl Default for InitialSection {
    fn default() -> Self {
        InitialSection {
            profile: ProfileName::TanhStripe,
            mean: 0.0,
            amplitude: 0.8,
            width: 0.1,
            modes: 2,
            seed: 0,
            margin: 0.05,
            file: None,
        }
    }
}

impl Default for SourceTermSection {
    fn default() -> Self {
        SourceTermSection {
            shape: ShapeName::Zero,
            amplitude: 0.0,
            modes: 1,
            width: 0.1,
            time: TimeName::Constant,
            rate: 0.0,
            omega: 0.0,
            phase: 0.0,
        }
    }
}

impl Default for SourceSection {
    fn default() -> Self {
        SourceSection {
            g: SourceTermSection::default(),
            h: SourceTermSection::default(),
        }
    }
}

impl Default for DepcheckSection {
    fn default() -> Self {
        DepcheckSection {
            epsilons: vec![1e-2, 1e-3, 1e-4],
            deltas: vec![1e-1, 1e-2, 0.0],
            target: TargetName::Source,
            bump: SourceTermSection {
                shape: ShapeName::Bump,
                amplitude: 1.0,
                ..SourceTermSection::default()
            },
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            checkpoint_every: 100,
            uniform_table: false,
        }
    }
}

impl PotentialKind {
    fn graph(self) -> MonotoneGraph<f64> {
        match self {
            PotentialKind::Regular => MonotoneGraph::Cubic,
            PotentialKind::Logarithmic => MonotoneGraph::Logarithmic,
            PotentialKind::Obstacle => MonotoneGraph::Obstacle,
        }
    }

    fn perturbation(self, c1: f64, c2: f64) -> Perturbation<f64> {
        match self {
            PotentialKind::Regular => Perturbation::linear(-1.0),
            PotentialKind::Logarithmic => Perturbation::linear(-2.0 * c1),
            PotentialKind::Obstacle => Perturbation::linear(-2.0 * c2),
        }
    }
}

impl SourceTermSection {
    fn shape_field(&self, mesh: &Mesh) -> Option<Field> {
        let (lx, ly) = (mesh.lx(), mesh.ly());
        let a = self.amplitude;
        let k = self.modes as f64;
        let tau = std::f64::consts::TAU;
        match self.shape {
            ShapeName::Zero => None,
            ShapeName::Constant => Some(Field::constant(mesh, a)),
            ShapeName::Cosine => Some(Field::from_fn(mesh, |x, _| a * (tau * k * x / lx).cos())),
            ShapeName::Bump => {
                let w2 = 2.0 * self.width * self.width;
                Some(Field::from_fn(mesh, |x, y| {
                    let (dx, dy) = (x - 0.5 * lx, y - 0.5 * ly);
                    a * (-(dx * dx + dy * dy) / w2).exp()
                }))
            }
        }
    }

    pub fn term(&self, mesh: &Mesh) -> SourceTerm<f64> {
        match self.shape_field(mesh) {
            None => SourceTerm::Zero,
            Some(field) => SourceTerm::Separable {
                field,
                profile: match self.time {
                    TimeName::Constant => TimeProfile::Constant,
                    TimeName::Linear => TimeProfile::Linear { rate: self.rate },
                    TimeName::Harmonic => TimeProfile::Harmonic {
                        omega: self.omega,
                        phase: self.phase,
                    },
                },
            },
        }
    }

    /// Spatial field of this term, zero for the zero shape.
    pub fn field(&self, mesh: &Mesh) -> Field {
        self.shape_field(mesh).unwrap_or_else(|| Field::zeros(mesh))
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the serialized configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml_string().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn mesh(&self) -> Result<Mesh> {
        let m = &self.mesh;
        Mesh::new(m.nx, m.ny, m.lx, m.ly)
    }

    pub fn pair(&self) -> Potential {
        let p = &self.potential;
        let boundary = p.boundary.unwrap_or(p.kind);
        Potential::new(
            p.kind.graph(),
            boundary.graph(),
            p.kind.perturbation(p.c1, p.c2),
            boundary.perturbation(p.c1, p.c2),
            1.0,
        )
    }

    pub fn lambda(&self) -> f64 {
        self.potential.lambda.unwrap_or_else(|| {
            if self.pair().has_multivalued_graph() {
                1e-3
            } else {
                0.0
            }
        })
    }

    pub fn source(&self, mesh: &Mesh) -> Source<f64> {
        Source {
            g: self.source.g.term(mesh),
            h: self.source.h.term(mesh),
        }
    }

    pub fn profile(&self) -> ProfileSpec<f64> {
        let i = &self.initial;
        ProfileSpec {
            kind: match i.profile {
                ProfileName::Constant => ProfileKind::Constant,
                ProfileName::TanhStripe => ProfileKind::TanhStripe,
                ProfileName::Cosine => ProfileKind::Cosine,
                ProfileName::RandomSmooth => ProfileKind::RandomSmooth,
            },
            mean: i.mean,
            amplitude: i.amplitude,
            width: i.width,
            modes: i.modes,
            seed: i.seed,
            margin: i.margin,
        }
    }

    /// Solver settings with `delta` taken from the solver section.
    pub fn solver_config(&self) -> Result<SolverConfig<f64>> {
        let mesh = self.mesh()?;
        let s = &self.solver;
        let mut c = SolverConfig::new(mesh.clone(), self.pair());
        c.delta = s.delta;
        c.lambda = self.lambda();
        c.dt = s.dt;
        c.t_final = s.t_final;
        c.scheme = match s.scheme {
            SchemeName::FullyImplicit => Scheme::FullyImplicit,
            SchemeName::ConvexSplitting => Scheme::ConvexSplitting,
        };
        c.newton_tol = s.newton_tol;
        c.newton_max_iter = s.newton_max_iter;
        c.reuse_jacobian = s.reuse_jacobian;
        c.source = self.source(&mesh);
        c.validate()?;
        Ok(c)
    }

    /// Initial field, generated or loaded, checked for mean admissibility.
    pub fn initial_field(&self, mesh: &Mesh) -> Result<Field> {
        let pair = self.pair();
        let u0 = match &self.initial.file {
            Some(path) => {
                let f = read_field(path)?;
                if f.bulk.len() != mesh.bulk_len() || f.boundary.len() != mesh.boundary_len() {
                    return Err(invalid(format!("{} does not match the configured mesh", path.display())));
                }
                if !f.is_trace_compatible(mesh) {
                    return Err(Error::InadmissibleProfile("loaded field is not trace compatible".into()));
                }
                f
            }
            None => generate(mesh, &self.profile(), &pair)?,
        };
        let m = chdbc::operators::mean(mesh, &u0)?;
        if !pair.boundary.domain().interior_contains(m) {
            return Err(Error::InadmissibleProfile(format!(
                "mean {m} is not interior to the boundary graph domain"
            )));
        }
        Ok(u0)
    }

    pub fn problem(&self, mesh: &Mesh) -> Result<ProblemData<f64>> {
        Ok(ProblemData {
            u0: self.initial_field(mesh)?,
            source: self.source(mesh),
        })
    }

    pub fn perturbation_target(&self) -> PerturbationTarget {
        match self.depcheck.target {
            TargetName::Source => PerturbationTarget::Source,
            TargetName::Initial => PerturbationTarget::Initial,
            TargetName::Both => PerturbationTarget::Both,
        }
    }

    /// Checks everything that can be checked without running a solver.
    pub fn validate(&self) -> Result<()> {
        let mesh = self.mesh()?;
        let report = validate_pair(&self.pair(), 201);
        if !report.passed() {
            return Err(invalid(
                "potential pair violates domain inclusion or domination",
            ));
        }
        if self.potential.c1 <= 1.0 && self.potential.kind == PotentialKind::Logarithmic {
            return Err(invalid("logarithmic potential needs c1 > 1"));
        }
        if self.potential.c2 <= 0.0 && self.potential.kind == PotentialKind::Obstacle {
            return Err(invalid("obstacle potential needs c2 > 0"));
        }
        self.solver_config()?;
        if self.solver.deltas.iter().any(|&d| !(d > 0.0)) {
            return Err(invalid("sweep deltas must be positive"));
        }
        if self.solver.deltas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("sweep deltas must be strictly decreasing"));
        }
        if self.depcheck.deltas.iter().any(|&d| !(d >= 0.0)) {
            return Err(invalid("dependence deltas must be nonnegative"));
        }
        if self.depcheck.epsilons.iter().any(|&e| !(e >= 0.0)) {
            return Err(invalid("dependence epsilons must be nonnegative"));
        }
        self.initial_field(&mesh)?;
        Ok(())
    }
}
