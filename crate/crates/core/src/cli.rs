//! Config-driven experiment runner.
//!
//! A run reads one TOML experiment file, builds the Lagrangian, domain,
//! field and competitors it names, executes its certifiers in order and
//! writes one JSON report per certifier. Exit codes: 0 all certificates as
//! declared, 1 mismatch, 2 invalid input, 3 runtime failure.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::certificate::{Certificate, Verdict};
use crate::field::{Field, Paraboloid};
use crate::functional::Discretization;
use crate::lagrangian::{self, make_lagrangian, Family, Kernel, LagrangianParams, LagrangianSpec, Reaction, Support};
use crate::mesh::{DiscreteFunction, Domain, Growth, QuadratureRule};
use crate::nltv;
use crate::par;
use crate::verify::{self, CompetitorSet, InitialGuess, ProbeConfig, Recipe};
use crate::Point;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "NLCAL_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "nlcal", version, about = "Nonlocal calibration certifier")]
pub struct Cli {
    /// Worker threads for the parallel backend.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run every certifier of an experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Halve the mesh width this many times.
        #[arg(long)]
        refine: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarise JSON reports as a table and a CSV file.
    Report {
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Energy of the experiment's candidate.
    Energy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        refine: Option<u32>,
    },
    /// Euler-Lagrange operator of the candidate at the nodes nearest to `--at`.
    ElApply {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        at: Vec<f64>,
        #[arg(long)]
        refine: Option<u32>,
    },
    /// Solve for a 1D layer profile by damped iteration.
    LayerSolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        refine: Option<u32>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub refine: u32,
    pub lagrangian: LagrangianConfig,
    pub domain: DomainConfig,
    pub field: Option<FieldConfig>,
    #[serde(default)]
    pub candidate: CandidateConfig,
    pub competitors: Option<CompetitorConfig>,
    #[serde(default, rename = "certifier")]
    pub certifiers: Vec<CertifierConfig>,
    pub layer: Option<LayerConfig>,
    pub output: Option<OutputConfig>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LagrangianConfig {
    /// A family id, or `nonelliptic-square` for the non-elliptic example.
    pub family: String,
    pub s: Option<f64>,
    pub p: Option<f64>,
    pub c: Option<f64>,
    pub horizon: Option<f64>,
    pub stiffness: Option<f64>,
    pub kernel: Option<KernelConfig>,
    pub reaction: Option<ReactionConfig>,
    /// `full` (default) or `omega-omega`.
    pub support: Option<String>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    Fractional { s: f64, c: Option<f64> },
    Truncated { radius: f64, height: Option<f64> },
    Gaussian { sigma: f64, height: Option<f64> },
}

impl KernelConfig {
    pub fn build(&self, dim: usize) -> Kernel {
        match *self {
            KernelConfig::Fractional { s, c } => Kernel::Fractional { s, c: c.unwrap_or_else(|| lagrangian::standard_constant(dim, s)) },
            KernelConfig::Truncated { radius, height } => Kernel::Truncated { radius, height: height.unwrap_or(1.0) },
            KernelConfig::Gaussian { sigma, height } => Kernel::Gaussian { sigma, height: height.unwrap_or(1.0) },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReactionConfig {
    None,
    Power { coef: f64, degree: i32 },
    SineLayer,
    Tilted { slope: f64, base: Box<ReactionConfig> },
}

impl ReactionConfig {
    pub fn build(&self) -> Reaction {
        match self {
            ReactionConfig::None => Reaction::None,
            ReactionConfig::Power { coef, degree } => Reaction::Power { coef: *coef, degree: *degree },
            ReactionConfig::SineLayer => Reaction::SineLayer,
            ReactionConfig::Tilted { slope, base } => Reaction::Tilted { base: Box::new(base.build()), slope: *slope },
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldConfig {
    Affine { slope: Vec<f64>, #[serde(default)] offset: f64, t_min: f64, t_max: f64, t0: f64 },
    ArctanLayer { t_min: f64, t_max: f64, t0: f64 },
}

impl FieldConfig {
    pub fn build(&self) -> (Field, f64) {
        match self {
            FieldConfig::Affine { slope, offset, t_min, t_max, t0 } => {
                let s = [slope.first().copied().unwrap_or(0.0), slope.get(1).copied().unwrap_or(0.0)];
                (Field::affine(s, *offset, *t_min, *t_max), *t0)
            }
            FieldConfig::ArctanLayer { t_min, t_max, t0 } => (Field::arctan_layer(*t_min, *t_max), *t0),
        }
    }
}

/// The function the non-field certifiers look at.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CandidateConfig {
    /// The field's anchor leaf.
    #[default]
    Leaf,
    /// `|x₁|`.
    Abs,
    /// `(2/π) atan(x₁)`.
    Arctan,
    /// Anchor leaf plus `amplitude · sin(π (x₁ - lo) / width)` on `Ω`.
    LeafPlusSine { amplitude: f64 },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CompetitorConfig {
    pub recipe: Recipe,
    pub count: usize,
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    #[default]
    Pass,
    Fail,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CertifierKind {
    #[default]
    FieldCheck,
    Ellipticity,
    Convexity,
    Calibration,
    Minimality,
    CalibrationEquivalence,
    SubSuper,
    EnergyComparison,
    ViscositySuper,
    ViscositySub,
    LayerIdentity,
    StrongComparison,
    Coarea,
    NltvForms,
}

impl CertifierKind {
    pub fn id(&self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }

    fn uses_randomness(&self) -> bool {
        matches!(
            self,
            CertifierKind::Calibration
                | CertifierKind::Minimality
                | CertifierKind::CalibrationEquivalence
                | CertifierKind::StrongComparison
        )
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    pub center: Vec<f64>,
    pub opening: f64,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub delta: f64,
    #[serde(default = "half")]
    pub fraction: f64,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CertifierConfig {
    pub kind: CertifierKind,
    #[serde(default)]
    pub expect: Expect,
    /// Use only the first `count` competitors, or this many pairs.
    pub count: Option<usize>,
    pub levels: Option<usize>,
    pub points: Option<Vec<Vec<f64>>>,
    pub radius: Option<f64>,
    pub oracle_density: Option<usize>,
    pub tolerance: Option<f64>,
    pub eps: Option<Vec<f64>>,
    /// Sliding time; omitted means fitted.
    pub t_max: Option<f64>,
    pub probe: Option<ProbeSettings>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub states: [f64; 2],
    pub initial: InitialGuess,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(invalid)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.domain;
        if !(d.lo.len() == d.hi.len() && d.lo.len() == d.cells.len() && (1..=2).contains(&d.lo.len())) {
            return Err(invalid("domain lo, hi and cells need one or two matching entries"));
        }
        self.build_domain(0)?;
        if self.lagrangian.family != "nonelliptic-square" && Family::from_id(&self.lagrangian.family).is_none() {
            return Err(invalid(format!("unknown Lagrangian family '{}'", self.lagrangian.family)));
        }
        self.build_lagrangian()?;
        let needs_field = self.certifiers.iter().any(|c| {
            matches!(
                c.kind,
                CertifierKind::FieldCheck
                    | CertifierKind::Calibration
                    | CertifierKind::Minimality
                    | CertifierKind::CalibrationEquivalence
                    | CertifierKind::SubSuper
                    | CertifierKind::NltvForms
            )
        }) || matches!(self.candidate, CandidateConfig::Leaf | CandidateConfig::LeafPlusSine { .. });
        if needs_field && self.field.is_none() {
            return Err(invalid("a [field] section is required"));
        }
        if self.certifiers.iter().any(|c| c.kind.uses_randomness() && c.kind != CertifierKind::StrongComparison)
            && self.competitors.is_none()
        {
            return Err(invalid("a [competitors] section is required"));
        }
        if self.certifiers.iter().any(|c| c.kind.uses_randomness()) && self.seed.is_none() {
            return Err(invalid("seed is mandatory when competitors are generated"));
        }
        if self.certifiers.iter().any(|c| matches!(c.kind, CertifierKind::Coarea | CertifierKind::NltvForms))
            && self.lagrangian.kernel.is_none()
        {
            return Err(invalid("total-variation certifiers need a kernel"));
        }
        Ok(())
    }

    pub fn build_domain(&self, refine: u32) -> CliResult<Domain> {
        let d = &self.domain;
        let k = 1usize << refine;
        let dom = if d.lo.len() == 1 {
            Domain::interval(d.lo[0], d.hi[0], d.cells[0] * k)
        } else {
            Domain::rect([d.lo[0], d.lo[1]], [d.hi[0], d.hi[1]], [d.cells[0] * k, d.cells[1] * k])
        };
        dom.validate().map_err(invalid)?;
        Ok(dom)
    }

    pub fn build_lagrangian(&self) -> CliResult<LagrangianSpec> {
        let l = &self.lagrangian;
        let dim = self.domain.lo.len();
        let mut spec = if l.family == "nonelliptic-square" {
            lagrangian::nonelliptic_square(dim)
        } else {
            let family = Family::from_id(&l.family).ok_or_else(|| invalid(format!("unknown family {}", l.family)))?;
            let mut params = LagrangianParams { dim, s: l.s, p: l.p, c: l.c, ..Default::default() };
            if let Some(h) = l.horizon {
                params.horizon = h;
            }
            if let Some(k) = l.stiffness {
                params.stiffness = k;
            }
            params.kernel = l.kernel.as_ref().map(|k| k.build(dim));
            params.reaction = l.reaction.as_ref().map(|r| r.build()).unwrap_or(Reaction::None);
            make_lagrangian(family, params).map_err(invalid)?
        };
        match l.support.as_deref() {
            None | Some("full") => {}
            Some("omega-omega") => spec.support = Support::OmegaOmega,
            Some(other) => return Err(invalid(format!("unknown support '{other}'"))),
        }
        Ok(spec)
    }

    pub fn build_kernel(&self) -> Option<Kernel> {
        self.lagrangian.kernel.as_ref().map(|k| k.build(self.domain.lo.len()))
    }

    pub fn build_field(&self) -> Option<(Field, f64)> {
        self.field.as_ref().map(|f| f.build())
    }

    pub fn build_candidate(&self, domain: &Domain) -> CliResult<DiscreteFunction> {
        let field = || self.build_field().ok_or_else(|| invalid("candidate needs a field"));
        Ok(match &self.candidate {
            CandidateConfig::Leaf => {
                let (f, t0) = field()?;
                f.leaf_function(domain, t0)
            }
            CandidateConfig::Abs => {
                DiscreteFunction::from_closed(domain, |p| p[0].abs(), Growth::Linear { odd: false }, vec![[0.0, 0.0]])
            }
            CandidateConfig::Arctan => {
                DiscreteFunction::from_closed(domain, |p| 2.0 / PI * p[0].atan(), Growth::Bounded(1.0), vec![])
            }
            CandidateConfig::LeafPlusSine { amplitude } => {
                let (f, t0) = field()?;
                let u = f.leaf_function(domain, t0);
                let (lo, w) = (domain.lo[0], domain.hi[0] - domain.lo[0]);
                let values = domain
                    .interior_nodes()
                    .iter()
                    .zip(&u.values)
                    .map(|(p, v)| v + amplitude * (PI * (p[0] - lo) / w).sin())
                    .collect();
                DiscreteFunction::from_values(domain, values, u.exterior.clone(), u.growth)
            }
        })
    }
}

fn point(v: &[f64]) -> Point {
    [v.first().copied().unwrap_or(0.0), v.get(1).copied().unwrap_or(0.0)]
}

/// One certifier outcome as written to disk.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub index: usize,
    pub certifier: String,
    pub expect: Expect,
    pub matched: bool,
    pub seed: Option<u64>,
    pub refine: u32,
    pub cells: Vec<usize>,
    pub lagrangian: String,
    pub certificate: Certificate,
}

/// Everything a run produced, before it is written.
pub struct RunOutput {
    pub reports: Vec<Report>,
    /// `(file name, contents)` for CSV side files.
    pub tables: Vec<(String, String)>,
}

impl RunOutput {
    pub fn all_matched(&self) -> bool {
        self.reports.iter().all(|r| r.matched)
    }
}

fn subset(set: &CompetitorSet, count: Option<usize>) -> CompetitorSet {
    let mut s = set.clone();
    if let Some(n) = count {
        s.members.truncate(n);
    }
    s
}

fn certificate_of<E: std::fmt::Display>(property: &str, r: Result<Certificate, E>) -> Certificate {
    match r {
        Ok(c) => c,
        Err(e) => {
            let mut c = Certificate::new(property, 0.0);
            c.margin = f64::NAN;
            c.notes.push(e.to_string());
            c.decide()
        }
    }
}

/// Execute every certifier of `cfg`. Setup errors abort; certifier errors
/// become inconclusive certificates.
pub fn execute(cfg: &ExperimentConfig, refine: u32, seed: Option<u64>) -> CliResult<RunOutput> {
    let seed = seed.or(cfg.seed);
    let domain = cfg.build_domain(refine)?;
    let spec = cfg.build_lagrangian()?;
    let rule = QuadratureRule::default();
    let field = cfg.build_field();
    let candidate = cfg.build_candidate(&domain)?;
    let competitors = match (&cfg.competitors, &field, seed) {
        (Some(c), Some((f, t0)), Some(seed)) => Some(CompetitorSet::generate(f, *t0, &domain, c.recipe, c.count, seed, c.amplitude)),
        _ => None,
    };
    let mut tables = vec![(format!("{}.candidate.csv", cfg.name), verify::node_csv(&candidate))];
    let mut reports = vec![];
    for (index, c) in cfg.certifiers.iter().enumerate() {
        let id = c.kind.id();
        let need_field = || field.as_ref().ok_or_else(|| invalid("certifier needs a field"));
        let need_set = || competitors.as_ref().ok_or_else(|| invalid("certifier needs competitors"));
        let cert = match c.kind {
            CertifierKind::FieldCheck => {
                let (f, _) = need_field()?;
                f.check(&domain, 9)
            }
            CertifierKind::Ellipticity => certificate_of(&id, lagrangian::check_ellipticity(&spec, 64)),
            CertifierKind::Convexity => certificate_of(&id, lagrangian::check_convexity(&spec, 64)),
            CertifierKind::Calibration => {
                let (f, t0) = need_field()?;
                verify::certify_calibration(&spec, f, *t0, &domain, &subset(need_set()?, c.count), &rule)
            }
            CertifierKind::Minimality => {
                let (f, t0) = need_field()?;
                verify::certify_minimality(&spec, f, *t0, &domain, &subset(need_set()?, c.count), &rule)
            }
            CertifierKind::CalibrationEquivalence => {
                let (f, t0) = need_field()?;
                verify::certify_calibration_equivalence(&spec, f, *t0, &domain, &subset(need_set()?, c.count), &rule)
            }
            CertifierKind::SubSuper => {
                let (f, t0) = need_field()?;
                verify::sub_super_field_check(&spec, f, *t0, &domain)
            }
            CertifierKind::EnergyComparison => {
                let p = c.probe.as_ref().ok_or_else(|| invalid("energy-comparison needs a probe"))?;
                let center = point(&p.center);
                let phi = Paraboloid {
                    center,
                    value: candidate.eval(&center),
                    slope: slope_at(&candidate, &center),
                    opening: p.opening,
                };
                let nb = (point(&p.box_lo), point(&p.box_hi));
                let eps = c.eps.clone().unwrap_or_else(|| verify::DEFAULT_EPS_SCHEDULE.to_vec());
                let wf = match c.t_max {
                    Some(t) => crate::field::sliding_weak_field(&candidate, phi, nb, p.delta, t)
                        .map_err(verify::VerifyError::from)
                        .map(|wf| (wf, 0.0)),
                    None => verify::fit_sliding_field(&spec, &candidate, phi, nb, p.delta, p.fraction),
                };
                certificate_of(&id, wf.and_then(|(wf, _)| verify::energy_comparison_check(&spec, &wf, &eps)))
            }
            CertifierKind::ViscositySuper | CertifierKind::ViscositySub => {
                let mut pc = ProbeConfig::default();
                if let Some(pts) = &c.points {
                    pc.points = pts.iter().map(|p| point(p)).collect();
                }
                if let Some(n) = c.count {
                    pc.count = n;
                }
                if let Some(r) = c.radius {
                    pc.radius = r;
                }
                if let Some(t) = c.tolerance {
                    pc.tolerance = t;
                }
                pc.oracle_density = c.oracle_density;
                let r = if c.kind == CertifierKind::ViscositySuper {
                    verify::viscosity_supersolution_test(&spec, &domain, &candidate, &pc)
                } else {
                    verify::viscosity_subsolution_test(&spec, &domain, &candidate, &pc)
                };
                certificate_of(&id, r)
            }
            CertifierKind::LayerIdentity => {
                certificate_of(&id, verify::layer_identity_check(&domain, c.tolerance.unwrap_or(1e-3)))
            }
            CertifierKind::StrongComparison => {
                let pairs = verify::ordered_touching_pairs(&candidate, c.count.unwrap_or(100), seed.unwrap_or(0), 0.5);
                let mut agg = Certificate::new(&id, 0.0);
                let mut worst = f64::INFINITY;
                for (k, (v, x0)) in pairs.iter().enumerate() {
                    match verify::strong_comparison_probe(&spec, &domain, &candidate, v, x0) {
                        Ok(r) => {
                            agg.tolerance = agg.tolerance.max(r.tolerance);
                            worst = worst.min(r.margin);
                            agg.observe(r.margin, &[("pair", k as f64), ("x0", x0[0]), ("x1", x0[1])], "comparison margin negative");
                        }
                        Err(e) => agg.notes.push(format!("pair {k}: {e}")),
                    }
                }
                agg.with_detail("pairs", pairs.len() as f64).with_detail("worst_margin", worst).decide()
            }
            CertifierKind::Coarea => {
                let k = cfg.build_kernel().ok_or_else(|| invalid("coarea needs a kernel"))?;
                certificate_of(&id, nltv::coarea_check(&k, &domain, &candidate, c.levels.unwrap_or(64)))
            }
            CertifierKind::NltvForms => {
                let k = cfg.build_kernel().ok_or_else(|| invalid("nltv-forms needs a kernel"))?;
                let (f, t0) = need_field()?;
                certificate_of(&id, nltv::nltv_calibration_crosscheck(&k, &domain, f, *t0, &candidate, c.levels.unwrap_or(64)))
            }
        };
        if let Some(csv) = cert.counterexample.as_ref().and_then(|ce| ce.csv.clone()) {
            tables.push((format!("{}-{index:02}-{id}.counterexample.csv", cfg.name), csv));
        }
        let matched = match c.expect {
            Expect::Pass => cert.verdict == Verdict::Pass,
            Expect::Fail => cert.verdict == Verdict::Fail,
        };
        reports.push(Report {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.name.clone(),
            index,
            certifier: id,
            expect: c.expect,
            matched,
            seed,
            refine,
            cells: domain.cells[..domain.dim].to_vec(),
            lagrangian: spec.id(),
            certificate: cert,
        });
    }
    Ok(RunOutput { reports, tables })
}

/// Central difference of `u` at `x` along each axis.
fn slope_at(u: &DiscreteFunction, x: &Point) -> Point {
    let eta = 1e-6 * (1.0 + x[0].abs());
    let mut g = [0.0; 2];
    for k in 0..u.domain.dim {
        let (mut a, mut b) = (*x, *x);
        a[k] += eta;
        b[k] -= eta;
        g[k] = (u.eval(&a) - u.eval(&b)) / (2.0 * eta);
    }
    g
}

/// Write `contents` next to `path` and rename it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp{}", path.file_name().and_then(|n| n.to_str()).unwrap_or("out"), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn report_json(r: &Report) -> String {
    let mut s = serde_json::to_string_pretty(r).expect("reports serialize");
    s.push('\n');
    s
}

/// Output directory: flag, then environment, then config, then `out`.
pub fn output_dir(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(OUT_DIR_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    cfg.and_then(|c| c.output.as_ref()).map(|o| o.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

/// Write reports and tables; returns the report paths.
pub fn write_run(out: &Path, run: &RunOutput) -> CliResult<Vec<PathBuf>> {
    let mut paths = vec![];
    for r in &run.reports {
        let p = out.join(format!("{}-{:02}-{}.json", r.experiment, r.index, r.certifier));
        write_atomic(&p, report_json(r).as_bytes()).map_err(runtime)?;
        paths.push(p);
    }
    for (name, body) in &run.tables {
        write_atomic(&out.join(name), body.as_bytes()).map_err(runtime)?;
    }
    Ok(paths)
}

pub fn run(config: &Path, out: Option<&Path>, refine: Option<u32>, seed: Option<u64>) -> CliResult<i32> {
    let cfg = ExperimentConfig::load(config)?;
    let refine = refine.unwrap_or(cfg.refine);
    let result = execute(&cfg, refine, seed)?;
    let dir = output_dir(out, Some(&cfg));
    write_run(&dir, &result)?;
    for r in &result.reports {
        eprintln!(
            "{:<28} {:<13} margin {:>12.4e}  expected {:?}{}",
            r.certifier,
            format!("{:?}", r.certificate.verdict).to_lowercase(),
            r.certificate.margin,
            r.expect,
            if r.matched { "" } else { "  MISMATCH" }
        );
    }
    Ok(if result.all_matched() { EXIT_OK } else { EXIT_MISMATCH })
}

/// One row of the consolidated report.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub source: String,
    pub property: String,
    pub verdict: String,
    pub margin: Option<f64>,
    pub trend: Vec<f64>,
}

fn verdict_rank(v: &str) -> u8 {
    match v {
        "fail" => 0,
        "inconclusive" => 1,
        _ => 2,
    }
}

pub fn load_rows(paths: &[PathBuf]) -> CliResult<Vec<Row>> {
    if paths.is_empty() {
        return Err(invalid("report needs at least one JSON path"));
    }
    let mut rows = vec![];
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
        let cert = v.get("certificate").unwrap_or(&v);
        let s = |k: &str| cert.get(k).and_then(|x| x.as_str()).unwrap_or("").to_string();
        rows.push(Row {
            source: p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string(),
            property: s("property"),
            verdict: s("verdict"),
            margin: cert.get("margin").and_then(|m| m.as_f64()),
            trend: cert
                .get("trend")
                .and_then(|t| t.as_array())
                .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
                .unwrap_or_default(),
        });
    }
    rows.sort_by_key(|r| verdict_rank(&r.verdict));
    Ok(rows)
}

fn fmt_margin(m: Option<f64>) -> String {
    m.map(|m| format!("{m:.4e}")).unwrap_or_else(|| "n/a".into())
}

fn fmt_trend(t: &[f64]) -> String {
    t.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(";")
}

pub fn render_table(rows: &[Row]) -> String {
    let w0 = rows.iter().map(|r| r.source.len()).max().unwrap_or(0).max(6);
    let w1 = rows.iter().map(|r| r.property.len()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    let _ = writeln!(s, "{:<w0$}  {:<w1$}  {:<12}  {:>12}  trend", "report", "property", "verdict", "margin");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<w0$}  {:<w1$}  {:<12}  {:>12}  {}",
            r.source,
            r.property,
            r.verdict,
            fmt_margin(r.margin),
            fmt_trend(&r.trend)
        );
    }
    s
}

pub fn render_csv(rows: &[Row]) -> String {
    let mut s = String::from("report,property,verdict,margin,trend\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.source, r.property, r.verdict, r.margin.map(|m| format!("{m:e}")).unwrap_or_default(), fmt_trend(&r.trend));
    }
    s
}

pub fn report(paths: &[PathBuf], out: Option<&Path>) -> CliResult<i32> {
    let rows = load_rows(paths)?;
    print!("{}", render_table(&rows));
    let dir = output_dir(out, None);
    write_atomic(&dir.join("report.csv"), render_csv(&rows).as_bytes()).map_err(runtime)?;
    Ok(EXIT_OK)
}

fn discretization(cfg: &ExperimentConfig, domain: &Domain, u: &DiscreteFunction) -> CliResult<Discretization> {
    Discretization::new(&cfg.build_lagrangian()?, domain, &QuadratureRule::default(), u.growth).map_err(runtime)
}

pub fn energy(config: &Path, refine: Option<u32>) -> CliResult<i32> {
    let cfg = ExperimentConfig::load(config)?;
    let domain = cfg.build_domain(refine.unwrap_or(cfg.refine))?;
    let u = cfg.build_candidate(&domain)?;
    let rep = discretization(&cfg, &domain, &u)?.energy(&u).map_err(runtime)?;
    println!("{}", serde_json::to_string_pretty(&rep).map_err(runtime)?);
    Ok(EXIT_OK)
}

pub fn el_apply(config: &Path, at: &[f64], refine: Option<u32>) -> CliResult<i32> {
    let cfg = ExperimentConfig::load(config)?;
    let domain = cfg.build_domain(refine.unwrap_or(cfg.refine))?;
    let u = cfg.build_candidate(&domain)?;
    let l = discretization(&cfg, &domain, &u)?.euler_lagrange_nodes(&u).map_err(runtime)?;
    let nodes = domain.interior_nodes();
    let picks: Vec<usize> = if at.is_empty() {
        (0..nodes.len()).collect()
    } else {
        at.iter()
            .map(|x| {
                (0..nodes.len())
                    .min_by(|a, b| (nodes[*a][0] - x).abs().total_cmp(&(nodes[*b][0] - x).abs()))
                    .unwrap_or(0)
            })
            .collect()
    };
    println!("node,x0,x1,value");
    for i in picks {
        println!("{i},{:.17e},{:.17e},{:.17e}", nodes[i][0], nodes[i][1], l[i]);
    }
    Ok(EXIT_OK)
}

pub fn layer_solve(config: &Path, out: Option<&Path>, refine: Option<u32>) -> CliResult<i32> {
    let cfg = ExperimentConfig::load(config)?;
    let lc = cfg.layer.as_ref().ok_or_else(|| invalid("a [layer] section is required"))?;
    let domain = cfg.build_domain(refine.unwrap_or(cfg.refine))?;
    let spec = cfg.build_lagrangian()?;
    let sol = verify::solve_layer_1d(&spec, &domain, lc.damping, lc.max_iter, (lc.states[0], lc.states[1]), lc.initial)
        .map_err(runtime)?;
    let dir = output_dir(out, Some(&cfg));
    write_atomic(&dir.join(format!("{}.layer.csv", cfg.name)), verify::node_csv(&sol.profile).as_bytes()).map_err(runtime)?;
    println!("{{\"iterations\": {}, \"residual\": {:e}}}", sol.iterations, sol.residual);
    Ok(EXIT_OK)
}

/// Parse arguments, dispatch and map outcomes to exit codes.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.threads {
        par::init_threads(n);
    }
    let result = match &cli.command {
        Command::Run { config, out, refine, seed } => run(config, out.as_deref(), *refine, *seed),
        Command::Report { paths, out } => report(paths, out.as_deref()),
        Command::Energy { config, refine } => energy(config, *refine),
        Command::ElApply { config, at, refine } => el_apply(config, at, *refine),
        Command::LayerSolve { config, out, refine } => layer_solve(config, out.as_deref(), *refine),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("nlcal: {e}");
            e.code()
        }
    }
}
