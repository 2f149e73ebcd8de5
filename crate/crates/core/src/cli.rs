//! Run configuration and the subcommand drivers behind `sgf`.
//!
//! Configs are TOML. Every run writes CSV artifacts and a `manifest.toml`
//! into the output directory.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::green::{auto_horizon, wavefront_estimate, AssemblerOptions, CutoffSpec, FieldGrid, GreenAssembler, SourceSpec};
use crate::hamiltonians::{make_builtin, BuiltinParams, Depth, HamiltonianKind, HamiltonianSpec, IndexProfile, Potential};
use crate::lagrangian::{flow_out, intersect_level, ChartDomain, FlowGrid, FlowOut, LevelIntersection, SourceLagrangian};
use crate::oscint::OscOptions;
use crate::phase::find_arrivals;
use crate::rayflow::{integrate_ray, RayOptions};
use crate::reference::RadialProfile;
use crate::validate::{run_all, transient_shrink, ValidationConfig};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "SGF_WORKERS";

/// The bundled Helmholtz scenario used when `validate` gets no config.
pub const BUNDLED_HELMHOLTZ: &str = include_str!("../configs/helmholtz.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Rays,
    Flowout,
    Arrivals,
    Field,
    Validate,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Self::Rays => "rays",
            Self::Flowout => "flowout",
            Self::Arrivals => "arrivals",
            Self::Field => "field",
            Self::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub hamiltonian: HamiltonianConfig,
    pub source: SourceConfig,
    #[serde(default)]
    pub cutoffs: CutoffConfig,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub h: Vec<f64>,
    #[serde(default)]
    pub rays: RaysConfig,
    #[serde(default)]
    pub arrivals: ArrivalsConfig,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub kind: HamiltonianKind,
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default)]
    pub index: Option<IndexConfig>,
    /// Coefficient c of V = c|x|².
    #[serde(default)]
    pub harmonic: Option<f64>,
    #[serde(default)]
    pub depth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum IndexConfig {
    Constant { value: f64 },
    FishEye { scale: f64 },
    GaussianLens { background: f64, amplitude: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub x0: [f64; 2],
    #[serde(default)]
    pub profile: Option<ProfileConfig>,
    #[serde(default = "default_n_psi")]
    pub n_psi: usize,
    /// Restricts ray directions to [lo, hi]; geometry subcommands only.
    #[serde(default)]
    pub psi_window: Option<[f64; 2]>,
}

fn default_n_psi() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Plateau { inner: f64, outer: f64 },
    PolyGaussian { power: i32 },
    Gaussian { width: f64 },
}

impl ProfileConfig {
    fn radial(&self) -> RadialProfile {
        match *self {
            Self::Plateau { inner, outer } => RadialProfile::Plateau { inner, outer },
            Self::PolyGaussian { power } => RadialProfile::PolyGaussian { power },
            Self::Gaussian { width } => RadialProfile::Gaussian { width },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Horizon {
    Fixed(f64),
    Auto(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    #[serde(default = "default_delta_tau")]
    pub delta_tau: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    /// A number or "auto" (2.5 × escape time past `escape_radius`).
    #[serde(default = "default_horizon")]
    pub horizon: Horizon,
    #[serde(default)]
    pub escape_radius: Option<f64>,
}

fn default_delta_tau() -> f64 {
    CutoffSpec::BASELINE_DELTA_TAU
}
fn default_eps0() -> f64 {
    CutoffSpec::BASELINE_EPS0
}
fn default_horizon() -> Horizon {
    Horizon::Auto("auto".into())
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self { delta_tau: default_delta_tau(), eps0: default_eps0(), horizon: default_horizon(), escape_radius: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default)]
    pub lo: Option<[f64; 2]>,
    #[serde(default)]
    pub hi: Option<[f64; 2]>,
    #[serde(default)]
    pub n: Option<[usize; 2]>,
    /// Explicit nodes; replaces the box.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaysConfig {
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub check_escape: bool,
    #[serde(default = "default_escape_radius")]
    pub escape_radius: f64,
    #[serde(default = "default_escape_search")]
    pub escape_search: f64,
}

fn default_t_max() -> f64 {
    4.0
}
fn default_tol() -> f64 {
    1e-10
}
fn default_escape_radius() -> f64 {
    3.0
}
fn default_escape_search() -> f64 {
    50.0
}

impl Default for RaysConfig {
    fn default() -> Self {
        Self {
            t_max: default_t_max(),
            tol: default_tol(),
            check_escape: false,
            escape_radius: default_escape_radius(),
            escape_search: default_escape_search(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsConfig {
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default)]
    pub binary_dump: bool,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    /// Distance below which a slow-decay node counts as explained by the geometry.
    #[serde(default = "default_wavefront_tol")]
    pub wavefront_tol: f64,
}

fn default_quad_tol() -> f64 {
    1e-9
}
fn default_wavefront_tol() -> f64 {
    0.25
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { binary_dump: false, quad_tol: default_quad_tol(), wavefront_tol: default_wavefront_tol() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    /// "transient-shrink" runs the χ0 shrinking experiment instead of the table.
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub shrink_eps: Vec<f64>,
    #[serde(default)]
    pub shrink_point: Option<[f64; 2]>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    /// Schema checks that need no geometry.
    pub fn validate(&self, sub: Subcommand) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.source.n_psi < 4 {
            return bad(format!("source.n_psi must be at least 4, got {}", self.source.n_psi));
        }
        if let Some(w) = self.source.psi_window {
            if !(w[1] > w[0]) || w[1] - w[0] > 2.0 * PI {
                return bad(format!("source.psi_window must be an increasing interval of length ≤ 2π, got {w:?}"));
            }
        }
        let c = &self.cutoffs;
        if !(c.delta_tau > 0.0) || !(c.eps0 > 0.0) {
            return bad("cutoffs.delta_tau and cutoffs.eps0 must be positive".into());
        }
        match &c.horizon {
            Horizon::Fixed(t) if !(*t >= 4.0 * c.eps0) => {
                return bad(format!("cutoffs.horizon = {t} must be at least 4·eps0 = {}", 4.0 * c.eps0))
            }
            Horizon::Auto(s) if s != "auto" => return bad(format!("cutoffs.horizon must be a number or \"auto\", got {s:?}")),
            _ => {}
        }
        if let Some(r) = c.escape_radius {
            if !(r > 0.0) {
                return bad("cutoffs.escape_radius must be positive".into());
            }
        }
        if self.h.iter().any(|h| !(*h > 0.0)) {
            return bad("every h must be positive".into());
        }
        if !(self.rays.t_max > 0.0 && self.rays.tol > 0.0 && self.rays.escape_radius > 0.0) {
            return bad("rays.t_max, rays.tol and rays.escape_radius must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        match sub {
            Subcommand::Field => {
                if self.h.is_empty() {
                    return bad("field needs a non-empty h list".into());
                }
                if self.source.profile.is_none() {
                    return bad("field needs source.profile".into());
                }
                if self.source.psi_window.is_some() {
                    return bad("field needs the full circle of directions; drop source.psi_window".into());
                }
                self.nodes()?;
            }
            Subcommand::Arrivals if self.arrivals.points.is_empty() => {
                return bad("arrivals needs arrivals.points".into());
            }
            Subcommand::Validate => {
                if let Some(e) = &self.validate.experiment {
                    if e != "transient-shrink" {
                        return bad(format!("unknown experiment {e:?}"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        let hc = &self.hamiltonian;
        let index = hc.index.as_ref().map(|i| match *i {
            IndexConfig::Constant { value } => IndexProfile::Constant(value),
            IndexConfig::FishEye { scale } => IndexProfile::MaxwellFishEye { scale },
            IndexConfig::GaussianLens { background, amplitude, width } => {
                IndexProfile::GaussianLens { background, amplitude, width }
            }
        });
        let params = BuiltinParams {
            energy: hc.energy,
            index,
            potential: hc.harmonic.map(|coefficient| Potential::Harmonic { coefficient }),
            depth: hc.depth.map(Depth::Constant),
            ..Default::default()
        };
        make_builtin(hc.kind, &params)
    }

    pub fn level(&self, h: &HamiltonianSpec) -> Result<LevelIntersection> {
        let src = SourceLagrangian::VerticalFiber { x0: self.source.x0 };
        let dom = self.source.psi_window.map(|w| ChartDomain {
            psi: (w[0], w[1]),
            periodic: false,
            ..src.default_domain()
        });
        intersect_level(&src, h, h.energy, dom, self.source.n_psi)
    }

    /// Grid nodes in row-major order (x_1 fastest) with the box shape.
    pub fn nodes(&self) -> Result<(Vec<[f64; 2]>, [usize; 2])> {
        let g = self.grid.as_ref().ok_or_else(|| Error::Config("missing [grid]".into()))?;
        if !g.points.is_empty() {
            return Ok((g.points.clone(), [g.points.len(), 1]));
        }
        let (lo, hi, n) = match (g.lo, g.hi, g.n) {
            (Some(lo), Some(hi), Some(n)) => (lo, hi, n),
            _ => return Err(Error::Config("grid needs either points or lo, hi and n".into())),
        };
        if n[0] == 0 || n[1] == 0 || !(hi[0] >= lo[0] && hi[1] >= lo[1]) {
            return Err(Error::Config(format!("grid box is empty: lo {lo:?}, hi {hi:?}, n {n:?}")));
        }
        let coord = |k: usize, i: usize| {
            if n[k] == 1 {
                lo[k]
            } else {
                lo[k] + (hi[k] - lo[k]) * i as f64 / (n[k] - 1) as f64
            }
        };
        let mut v = Vec::with_capacity(n[0] * n[1]);
        for j in 0..n[1] {
            for i in 0..n[0] {
                v.push([coord(0, i), coord(1, j)]);
            }
        }
        Ok((v, n))
    }
}

/// Shortest round-trip decimal for an f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Buffered CSV writer with a fixed header.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { text: header.join(",") + "\n", columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

fn c2(z: Complex64) -> [String; 2] {
    [fmt_f64(z.re), fmt_f64(z.im)]
}

/// Everything a run wrote plus the manifest entries.
#[derive(Debug, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
    pub manifest: Vec<(String, String)>,
    /// Nonzero when the run finished but failed a check.
    pub status: i32,
}

impl RunReport {
    fn record(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((key.to_string(), value.to_string()));
    }

    fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, bytes)?;
        self.files.push(p);
        Ok(())
    }
}

/// Worker count: `SGF_WORKERS` wins over the config.
pub fn worker_count(config: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {s:?}"))),
        },
        Err(_) => Ok(config),
    }
}

/// Runs one subcommand and writes its artifacts into `out`.
pub fn execute(sub: Subcommand, config_text: &str, out: Option<&Path>) -> Result<RunReport> {
    let cfg = RunConfig::parse(config_text)?;
    cfg.validate(sub)?;
    let dir = out.map(Path::to_path_buf).or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("sgf-out"));
    fs::create_dir_all(&dir)?;
    let mut report = RunReport::default();
    report.record("subcommand", format!("{:?}", sub.name()));
    report.record("config_sha256", format!("{:?}", hex(&Sha256::digest(config_text.as_bytes()))));
    report.record("version", format!("{:?}", env!("CARGO_PKG_VERSION")));
    match sub {
        Subcommand::Rays => rays(&cfg, &dir, &mut report)?,
        Subcommand::Flowout => flowout(&cfg, &dir, &mut report)?,
        Subcommand::Arrivals => arrivals(&cfg, &dir, &mut report)?,
        Subcommand::Field => field(&cfg, &dir, &mut report)?,
        Subcommand::Validate => validate(&cfg, &dir, &mut report)?,
    }
    let mut m = String::new();
    for (k, v) in &report.manifest {
        let _ = writeln!(m, "{k} = {v}");
    }
    m.push_str("files = [");
    let names: Vec<String> = report
        .files
        .iter()
        .map(|p| format!("{:?}", p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()))
        .collect();
    m.push_str(&names.join(", "));
    m.push_str("]\n");
    report.write(&dir, "manifest.toml", m.as_bytes())?;
    Ok(report)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn rays(cfg: &RunConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let h = cfg.hamiltonian()?;
    let level = cfg.level(&h)?;
    let rc = &cfg.rays;
    report.record("rays_t_max", fmt_f64(rc.t_max));
    report.record("rays_tol", fmt_f64(rc.tol));
    if rc.check_escape {
        report.record("escape_radius", fmt_f64(rc.escape_radius));
        report.record("escape_search", fmt_f64(rc.escape_search));
        let t = level.escape_time(rc.escape_radius, rc.escape_search, rc.tol)?;
        report.record("escape_time", fmt_f64(t));
        report.lines.push(format!("escape time past radius {}: {}", rc.escape_radius, fmt_f64(t)));
    }
    let opts = RayOptions { tol: rc.tol, ..Default::default() };
    let mut csv = Csv::new(&["ray", "psi", "t", "x1", "x2", "p1", "p2", "action", "theta", "maslov"]);
    let mut events = Csv::new(&["ray", "t", "multiplicity"]);
    for (j, lp) in level.samples.iter().enumerate() {
        let ray = integrate_ray(&h, &lp.x, &lp.p, rc.t_max, &[], &RayOptions { initial_action: lp.action, ..opts })?;
        for s in ray.nodes() {
            csv.row(&[
                j.to_string(),
                fmt_f64(lp.psi),
                fmt_f64(s.t),
                fmt_f64(s.x[0]),
                fmt_f64(s.x[1]),
                fmt_f64(s.p[0]),
                fmt_f64(s.p[1]),
                fmt_f64(s.action),
                fmt_f64(s.theta),
                s.maslov.to_string(),
            ]);
        }
    }
    let flow = flow_out(&level, rc.t_max, FlowGrid { tol: rc.tol, ..Default::default() })?;
    for j in 0..flow.n_psi() {
        for e in flow.conjugate_events(j) {
            events.row(&[j.to_string(), fmt_f64(e.t), e.multiplicity.to_string()]);
        }
    }
    report.write(dir, "rays.csv", csv.into_string().as_bytes())?;
    report.write(dir, "conjugate_events.csv", events.into_string().as_bytes())?;
    report.lines.push(format!("{} rays traced to t = {}", level.samples.len(), fmt_f64(rc.t_max)));
    Ok(())
}

fn flowout(cfg: &RunConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let h = cfg.hamiltonian()?;
    let level = cfg.level(&h)?;
    let grid = FlowGrid { tol: cfg.rays.tol, ..Default::default() };
    report.record("flow_t_max", fmt_f64(cfg.rays.t_max));
    report.record("flow_tol", fmt_f64(grid.tol));
    report.record("flow_n_t", grid.n_t);
    let flow = flow_out(&level, cfg.rays.t_max, grid)?;
    let mut csv = Csv::new(&["ray", "psi", "t", "x1", "x2", "p1", "p2", "action", "jacobian", "maslov"]);
    for j in 0..flow.n_psi() {
        for t in flow.t_nodes() {
            let q = flow.node(j, t)?;
            csv.row(&[
                j.to_string(),
                fmt_f64(q.psi),
                fmt_f64(q.t),
                fmt_f64(q.x[0]),
                fmt_f64(q.x[1]),
                fmt_f64(q.p[0]),
                fmt_f64(q.p[1]),
                fmt_f64(q.action),
                fmt_f64(q.jacobian),
                q.maslov.to_string(),
            ]);
        }
    }
    report.write(dir, "flowout.csv", csv.into_string().as_bytes())?;
    report.lines.push(format!("flow-out sampled on {} rays", flow.n_psi()));
    Ok(())
}

fn arrivals(cfg: &RunConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let h = cfg.hamiltonian()?;
    let level = cfg.level(&h)?;
    let grid = FlowGrid { tol: cfg.rays.tol, ..Default::default() };
    report.record("flow_t_max", fmt_f64(cfg.rays.t_max));
    report.record("flow_tol", fmt_f64(grid.tol));
    let flow = flow_out(&level, cfg.rays.t_max, grid)?;
    let mut csv = Csv::new(&[
        "point", "x1", "x2", "t", "psi", "action", "theta", "jacobian", "signature", "maslov", "nondegenerate",
    ]);
    let mut total = 0;
    for (i, x) in cfg.arrivals.points.iter().enumerate() {
        for a in find_arrivals(&flow, x, None)? {
            total += 1;
            csv.row(&[
                i.to_string(),
                fmt_f64(x[0]),
                fmt_f64(x[1]),
                fmt_f64(a.t),
                fmt_f64(a.psi),
                fmt_f64(a.action),
                fmt_f64(a.theta),
                fmt_f64(a.jacobian),
                a.signature.to_string(),
                a.maslov.to_string(),
                a.nondegenerate.to_string(),
            ]);
        }
    }
    report.write(dir, "arrivals.csv", csv.into_string().as_bytes())?;
    report.lines.push(format!("{total} arrivals at {} points", cfg.arrivals.points.len()));
    Ok(())
}

/// Resolves the cutoff system, computing an automatic horizon when asked.
pub fn cutoffs(cfg: &RunConfig, h: &HamiltonianSpec, nodes: &[[f64; 2]]) -> Result<CutoffSpec> {
    let c = &cfg.cutoffs;
    let horizon = match c.horizon {
        Horizon::Fixed(t) => t,
        Horizon::Auto(_) => {
            let radius = c.escape_radius.unwrap_or_else(|| {
                nodes.iter().map(|x| x[0].hypot(x[1])).fold(0.0, f64::max) + 0.5
            });
            let level = cfg.level(h)?;
            auto_horizon(&level, radius, 2.5, cfg.rays.escape_search)?.max(4.0 * c.eps0 + f64::EPSILON)
        }
    };
    CutoffSpec::new(c.delta_tau, c.eps0, horizon)
}

fn field(cfg: &RunConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let ham = cfg.hamiltonian()?;
    let (nodes, shape) = cfg.nodes()?;
    let cut = cutoffs(cfg, &ham, &nodes)?;
    let profile = cfg.source.profile.as_ref().map(ProfileConfig::radial).ok_or_else(|| Error::Config("missing source.profile".into()))?;
    profile.validate()?;
    let options = AssemblerOptions {
        n_psi: cfg.source.n_psi,
        flow: FlowGrid { tol: cfg.rays.tol, ..Default::default() },
        quad: OscOptions { tol: cfg.field.quad_tol, ..Default::default() },
    };
    report.record("delta_tau", fmt_f64(cut.delta_tau));
    report.record("eps0", fmt_f64(cut.eps0));
    report.record("horizon", fmt_f64(cut.horizon));
    report.record("quad_tol", fmt_f64(options.quad.tol));
    report.record("flow_tol", fmt_f64(options.flow.tol));
    report.record("flow_n_t", options.flow.n_t);
    report.record("n_psi", options.n_psi);
    report.record("h", format!("[{}]", cfg.h.iter().map(|h| fmt_f64(*h)).collect::<Vec<_>>().join(", ")));
    let mut grids = Vec::new();
    let mut flow: Option<FlowOut> = None;
    for (k, &h) in cfg.h.iter().enumerate() {
        let source = SourceSpec::radial(cfg.source.x0, profile.clone(), h);
        let a = GreenAssembler::new(ham.clone(), source, cut, h, options)?;
        let g = a.field(&nodes)?;
        let mut csv = Csv::new(&[
            "x1", "x2", "re_total", "im_total", "re_boundary", "im_boundary", "re_transient", "im_transient", "re_wave",
            "im_wave", "slow_path",
        ]);
        for (x, v) in g.nodes.iter().zip(&g.values) {
            let [a0, a1] = c2(v.total);
            let [b0, b1] = c2(v.boundary);
            let [t0, t1] = c2(v.transient);
            let [w0, w1] = c2(v.wave);
            csv.row(&[fmt_f64(x[0]), fmt_f64(x[1]), a0, a1, b0, b1, t0, t1, w0, w1, (v.slow_path as u8).to_string()]);
        }
        report.write(dir, &format!("field_h{k}.csv"), csv.into_string().as_bytes())?;
        if cfg.field.binary_dump {
            report.write(dir, &format!("field_h{k}.bin"), &binary_dump(&g, shape))?;
        }
        report.lines.push(format!("h = {}: {} nodes", fmt_f64(h), g.nodes.len()));
        grids.push(g);
        flow = a.flow;
    }
    if grids.len() >= 2 {
        let w = wavefront_estimate(&grids, flow.as_ref(), &[cfg.source.x0], cfg.field.wavefront_tol)?;
        let mut csv = Csv::new(&["x1", "x2", "exponent", "boundary_exponent", "slow"]);
        for (i, x) in nodes.iter().enumerate() {
            csv.row(&[
                fmt_f64(x[0]),
                fmt_f64(x[1]),
                fmt_f64(w.exponents[i]),
                fmt_f64(w.boundary_exponents[i]),
                (w.slow[i] as u8).to_string(),
            ]);
        }
        report.write(dir, "wavefront.csv", csv.into_string().as_bytes())?;
        report.record("wavefront_tol", fmt_f64(cfg.field.wavefront_tol));
        report.lines.push(format!(
            "wave-front: {} slow nodes, {} unexplained",
            w.slow.iter().filter(|s| **s).count(),
            w.unexplained.len()
        ));
        if !w.pass {
            report.status = 3;
        }
    }
    Ok(())
}

/// Little-endian layout: b"SGFGRID1", u64 n1, u64 n2, f64 h, then per node
/// x1, x2 and (re, im) of total, boundary, transient, wave as f64.
pub fn binary_dump(g: &FieldGrid, shape: [usize; 2]) -> Vec<u8> {
    let mut b = Vec::with_capacity(32 + g.nodes.len() * 80);
    b.extend_from_slice(b"SGFGRID1");
    b.extend_from_slice(&(shape[0] as u64).to_le_bytes());
    b.extend_from_slice(&(shape[1] as u64).to_le_bytes());
    b.extend_from_slice(&g.h.to_le_bytes());
    for (x, v) in g.nodes.iter().zip(&g.values) {
        for f in [x[0], x[1], v.total.re, v.total.im, v.boundary.re, v.boundary.im, v.transient.re, v.transient.im, v.wave.re, v.wave.im] {
            b.extend_from_slice(&f.to_le_bytes());
        }
    }
    b
}

fn validate(cfg: &RunConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let mut vc = ValidationConfig::default();
    if !cfg.h.is_empty() {
        vc.hs = cfg.h.clone();
    }
    if let Some(g) = &cfg.grid {
        if !g.points.is_empty() {
            vc.points = g.points.clone();
        }
    }
    report.record("h", format!("[{}]", vc.hs.iter().map(|h| fmt_f64(*h)).collect::<Vec<_>>().join(", ")));
    report.record("delta_tau", fmt_f64(CutoffSpec::BASELINE_DELTA_TAU));
    report.record("eps0", fmt_f64(CutoffSpec::BASELINE_EPS0));
    report.record("horizon", fmt_f64(4.0));
    report.record("robustness_h", fmt_f64(vc.robustness_h));
    if cfg.validate.experiment.as_deref() == Some("transient-shrink") {
        let eps = if cfg.validate.shrink_eps.is_empty() { vec![0.4, 0.2, 0.1, 0.05, 0.025] } else { cfg.validate.shrink_eps.clone() };
        let x = cfg.validate.shrink_point.unwrap_or([1.0, 0.5]);
        let h = vc.hs.first().copied().unwrap_or(0.05);
        let rows = transient_shrink(h, x, &eps)?;
        let mut csv = Csv::new(&["eps0", "re_transient", "im_transient", "re_wave", "im_wave", "re_total", "im_total"]);
        for r in &rows {
            let [a, b] = c2(r.transient);
            let [c, d] = c2(r.wave);
            let [e, f] = c2(r.total);
            csv.row(&[fmt_f64(r.eps0), a, b, c, d, e, f]);
            report.lines.push(format!(
                "eps0 {}: |transient| {:.3e}, |total| {:.6e}",
                fmt_f64(r.eps0),
                r.transient.norm(),
                r.total.norm()
            ));
        }
        report.write(dir, "transient_shrink.csv", csv.into_string().as_bytes())?;
        return Ok(());
    }
    let table = run_all(&vc);
    let mut csv = Csv::new(&["criterion", "pass", "measured", "threshold", "detail"]);
    for c in &table {
        csv.row(&[
            c.id.to_string(),
            c.pass.to_string(),
            fmt_f64(c.measured),
            fmt_f64(c.threshold),
            format!("\"{}\"", c.detail.replace('"', "'")),
        ]);
        report.lines.push(c.to_string());
    }
    report.write(dir, "validation.csv", csv.into_string().as_bytes())?;
    if table.iter().any(|c| !c.pass) {
        report.status = 3;
    }
    Ok(())
}

/// Writes a message to stderr and returns the process exit code for `e`.
pub fn report_error(e: &Error) -> i32 {
    let _ = writeln!(std::io::stderr(), "error: {e}");
    e.exit_code()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FREE: &str = r#"
h = [0.1]
[hamiltonian]
kind = "free"
energy = 1.0
[source]
x0 = [0.0, 0.0]
n_psi = 32
profile = { kind = "plateau", inner = 1.5, outer = 4.0 }
[cutoffs]
horizon = 4.0
[grid]
points = [[1.0, 0.0], [0.0, 1.5]]
"#;

    #[test]
    fn parses_and_checks_schema() {
        let c = RunConfig::parse(FREE).unwrap();
        assert_eq!(c.hamiltonian.kind, HamiltonianKind::Free);
        assert_eq!(c.cutoffs.horizon, Horizon::Fixed(4.0));
        c.validate(Subcommand::Field).unwrap();
        let empty = FREE.replace("h = [0.1]", "h = []");
        let e = RunConfig::parse(&empty).unwrap().validate(Subcommand::Field).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let short = FREE.replace("horizon = 4.0", "horizon = 0.2");
        assert!(RunConfig::parse(&short).unwrap().validate(Subcommand::Field).is_err());
        let e = RunConfig::parse(&FREE.replace("kind = \"free\"", "kind = \"nope\"")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(RunConfig::parse(&FREE.replace("n_psi", "n_spi")).is_err());
    }

    #[test]
    fn box_grid_is_row_major() {
        let c = RunConfig::parse(&FREE.replace(
            "points = [[1.0, 0.0], [0.0, 1.5]]",
            "lo = [0.0, 0.0]\nhi = [1.0, 2.0]\nn = [2, 3]",
        ))
        .unwrap();
        let (v, shape) = c.nodes().unwrap();
        assert_eq!(shape, [2, 3]);
        assert_eq!(v, vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 2.0], [1.0, 2.0]]);
    }

    #[test]
    fn shortest_round_trip() {
        assert_eq!(fmt_f64(0.1), "0.1");
        assert_eq!(fmt_f64(1.0), "1.0");
        assert_eq!(fmt_f64(f64::NAN), "nan");
        for v in [1.0 / 3.0, -2.5e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn bundled_scenario_parses() {
        RunConfig::parse(BUNDLED_HELMHOLTZ).unwrap().validate(Subcommand::Validate).unwrap();
    }
}
