//! Symbols `H = H0 + h·H1` and the built-in families.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on |p| for symbols that are conic at p = 0.
pub const DEFAULT_P_MIN: f64 = 1e-8;

/// Principal and subprincipal symbol with analytic gradients.
pub trait Symbol: Send + Sync {
    fn h0(&self, x: &[f64], p: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], p: &[f64], out: &mut [f64]);
    fn grad_p(&self, x: &[f64], p: &[f64], out: &mut [f64]);
    fn h1(&self, _x: &[f64], _p: &[f64]) -> f64 {
        0.0
    }
    /// Analytic second derivatives as row-major n×n blocks
    /// `hxx[i,j] = ∂²H0/∂x_i∂x_j`, `hxp[i,j] = ∂²H0/∂x_i∂p_j`, `hpp[i,j]`.
    /// Returns false when not provided; finite differences are used instead.
    fn hessians(&self, _x: &[f64], _p: &[f64], _hxx: &mut [f64], _hxp: &mut [f64], _hpp: &mut [f64]) -> bool {
        false
    }
    /// true when H0 depends on |p| and is singular at p = 0.
    fn conic(&self) -> bool {
        false
    }
    /// true when H0 does not depend on x.
    fn translation_invariant(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HamiltonianKind {
    Free,
    HelmholtzIndex,
    Schrodinger,
    WaterWave,
    ModelDxn,
    Custom,
}

impl FromStr for HamiltonianKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "free" => Self::Free,
            "helmholtz_index" => Self::HelmholtzIndex,
            "schrodinger" => Self::Schrodinger,
            "water_wave" => Self::WaterWave,
            "model_dxn" => Self::ModelDxn,
            "custom" => Self::Custom,
            other => return Err(Error::Config(format!("unknown hamiltonian kind `{other}`"))),
        })
    }
}

impl fmt::Display for HamiltonianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Free => "free",
            Self::HelmholtzIndex => "helmholtz_index",
            Self::Schrodinger => "schrodinger",
            Self::WaterWave => "water_wave",
            Self::ModelDxn => "model_dxn",
            Self::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// A symbol together with its energy level and bookkeeping.
#[derive(Clone)]
pub struct HamiltonianSpec {
    pub dim: usize,
    pub kind: HamiltonianKind,
    /// The level E of Σ_E = {H0 = E}.
    pub energy: f64,
    /// Degree of positive homogeneity of H0 in p, when it has one.
    pub homogeneity: Option<f64>,
    pub p_min: f64,
    symbol: Arc<dyn Symbol>,
}

impl fmt::Debug for HamiltonianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSpec")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("energy", &self.energy)
            .field("homogeneity", &self.homogeneity)
            .finish()
    }
}

impl HamiltonianSpec {
    pub fn custom(dim: usize, symbol: Arc<dyn Symbol>, energy: f64, homogeneity: Option<f64>) -> Self {
        Self { dim, kind: HamiltonianKind::Custom, energy, homogeneity, p_min: DEFAULT_P_MIN, symbol }
    }

    pub fn with_p_min(mut self, p_min: f64) -> Self {
        self.p_min = p_min;
        self
    }

    fn guard(&self, p: &[f64]) -> Result<()> {
        if self.symbol.conic() {
            let norm = norm(p);
            if norm < self.p_min {
                return Err(Error::ConicSingularity { norm, p_min: self.p_min });
            }
        }
        Ok(())
    }

    pub fn h0(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.guard(p)?;
        Ok(self.symbol.h0(x, p))
    }

    pub fn h1(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        self.guard(p)?;
        Ok(self.symbol.h1(x, p))
    }

    pub fn grad_x(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.guard(p)?;
        let mut out = vec![0.0; self.dim];
        self.symbol.grad_x(x, p, &mut out);
        Ok(out)
    }

    pub fn grad_p(&self, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.guard(p)?;
        let mut out = vec![0.0; self.dim];
        self.symbol.grad_p(x, p, &mut out);
        Ok(out)
    }

    /// Both gradients into caller buffers; used on hot paths.
    pub fn gradients_into(&self, x: &[f64], p: &[f64], gx: &mut [f64], gp: &mut [f64]) -> Result<()> {
        self.guard(p)?;
        self.symbol.grad_x(x, p, gx);
        self.symbol.grad_p(x, p, gp);
        Ok(())
    }

    pub fn is_conic(&self) -> bool {
        self.symbol.conic()
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.symbol.translation_invariant()
    }

    /// Second derivatives as row-major blocks (H_xx, H_xp, H_pp) with
    /// `H_xp[i,j] = ∂²H0/∂x_i∂p_j`. Analytic when the symbol provides them,
    /// otherwise central differences of the analytic gradients.
    pub fn hessians_into(&self, x: &[f64], p: &[f64], hxx: &mut [f64], hxp: &mut [f64], hpp: &mut [f64]) -> Result<()> {
        self.guard(p)?;
        if self.symbol.hessians(x, p, hxx, hxp, hpp) {
            return Ok(());
        }
        let n = self.dim;
        let mut xs = x.to_vec();
        let mut ps = p.to_vec();
        let (mut ga, mut gb, mut gc, mut gd) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let d = 1e-5 * x[i].abs().max(1.0);
            xs[i] = x[i] + d;
            self.gradients_into(&xs, p, &mut ga, &mut gb)?;
            xs[i] = x[i] - d;
            self.gradients_into(&xs, p, &mut gc, &mut gd)?;
            xs[i] = x[i];
            for j in 0..n {
                hxx[i * n + j] = (ga[j] - gc[j]) / (2.0 * d);
                hxp[i * n + j] = (gb[j] - gd[j]) / (2.0 * d);
            }
            let d = 1e-5 * p[i].abs().max(1.0);
            ps[i] = p[i] + d;
            self.gradients_into(x, &ps, &mut ga, &mut gb)?;
            ps[i] = p[i] - d;
            self.gradients_into(x, &ps, &mut gc, &mut gd)?;
            ps[i] = p[i];
            for j in 0..n {
                hpp[i * n + j] = (gb[j] - gd[j]) / (2.0 * d);
            }
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Refractive index n(x) with gradient.
#[derive(Clone)]
pub enum IndexProfile {
    Constant(f64),
    /// n(x) = 2/(1 + |x|²/a²).
    MaxwellFishEye { scale: f64 },
    /// n(x) = n_inf + amp·exp(−|x|²/w²).
    GaussianLens { background: f64, amplitude: f64, width: f64 },
    Custom {
        n: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
        radial: bool,
    },
}

impl fmt::Debug for IndexProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::MaxwellFishEye { scale } => write!(f, "MaxwellFishEye {{ scale: {scale} }}"),
            Self::GaussianLens { background, amplitude, width } => write!(
                f,
                "GaussianLens {{ background: {background}, amplitude: {amplitude}, width: {width} }}"
            ),
            Self::Custom { radial, .. } => write!(f, "Custom {{ radial: {radial} }}"),
        }
    }
}

impl IndexProfile {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::MaxwellFishEye { scale } => 2.0 / (1.0 + dot(x, x) / (scale * scale)),
            Self::GaussianLens { background, amplitude, width } => {
                background + amplitude * (-dot(x, x) / (width * width)).exp()
            }
            Self::Custom { n, .. } => n(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant(_) => out.iter_mut().for_each(|o| *o = 0.0),
            Self::MaxwellFishEye { scale } => {
                let a2 = scale * scale;
                let q = 1.0 + dot(x, x) / a2;
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -4.0 * xi / (a2 * q * q);
                }
            }
            Self::GaussianLens { amplitude, width, .. } => {
                let w2 = width * width;
                let e = amplitude * (-dot(x, x) / w2).exp();
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -2.0 * xi / w2 * e;
                }
            }
            Self::Custom { grad, .. } => grad(x, out),
        }
    }

    /// Row-major Hessian of n; None for custom profiles.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) -> Option<()> {
        let d = x.len();
        match self {
            Self::Constant(_) => out.iter_mut().for_each(|o| *o = 0.0),
            Self::MaxwellFishEye { scale } => {
                let a2 = scale * scale;
                let q = 1.0 + dot(x, x) / a2;
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * d + j] = -4.0 * delta / (a2 * q * q) + 16.0 * x[i] * x[j] / (a2 * a2 * q * q * q);
                    }
                }
            }
            Self::GaussianLens { amplitude, width, .. } => {
                let w2 = width * width;
                let e = amplitude * (-dot(x, x) / w2).exp();
                for i in 0..d {
                    for j in 0..d {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        out[i * d + j] = (-2.0 * delta / w2 + 4.0 * x[i] * x[j] / (w2 * w2)) * e;
                    }
                }
            }
            Self::Custom { .. } => return None,
        }
        Some(())
    }

    pub fn is_radial(&self) -> bool {
        match self {
            Self::Custom { radial, .. } => *radial,
            _ => true,
        }
    }

    /// Positive lower bound of n on the ball of radius `r`, checked on the
    /// built-ins in closed form and on custom profiles by sampling.
    pub fn min_on_ball(&self, dim: usize, r: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::MaxwellFishEye { scale } => 2.0 / (1.0 + r * r / (scale * scale)),
            Self::GaussianLens { background, amplitude, width } => {
                if *amplitude >= 0.0 {
                    background + amplitude * (-r * r / (width * width)).exp()
                } else {
                    background + amplitude
                }
            }
            Self::Custom { n, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(7);
                let mut x = vec![0.0; dim];
                (0..4096)
                    .map(|_| {
                        x.iter_mut().for_each(|v| *v = rng.gen_range(-r..r));
                        n(&x)
                    })
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

struct Free;

impl Symbol for Free {
    fn h0(&self, _x: &[f64], p: &[f64]) -> f64 {
        dot(p, p)
    }
    fn grad_x(&self, _x: &[f64], _p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn grad_p(&self, _x: &[f64], p: &[f64], out: &mut [f64]) {
        for (o, pi) in out.iter_mut().zip(p) {
            *o = 2.0 * pi;
        }
    }
    fn hessians(&self, _x: &[f64], _p: &[f64], hxx: &mut [f64], hxp: &mut [f64], hpp: &mut [f64]) -> bool {
        let n = (hpp.len() as f64).sqrt() as usize;
        hxx.iter_mut().chain(hxp.iter_mut()).chain(hpp.iter_mut()).for_each(|o| *o = 0.0);
        for i in 0..n {
            hpp[i * n + i] = 2.0;
        }
        true
    }
    fn translation_invariant(&self) -> bool {
        true
    }
}

struct Index(IndexProfile);

impl Symbol for Index {
    fn h0(&self, x: &[f64], p: &[f64]) -> f64 {
        norm(p) / self.0.value(x)
    }
    fn grad_x(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        let n = self.0.value(x);
        self.0.gradient(x, out);
        let s = -norm(p) / (n * n);
        out.iter_mut().for_each(|o| *o *= s);
    }
    fn grad_p(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        let s = 1.0 / (norm(p) * self.0.value(x));
        for (o, pi) in out.iter_mut().zip(p) {
            *o = pi * s;
        }
    }
    fn hessians(&self, x: &[f64], p: &[f64], hxx: &mut [f64], hxp: &mut [f64], hpp: &mut [f64]) -> bool {
        let d = x.len();
        if self.0.hessian(x, hxx).is_none() {
            return false;
        }
        let n = self.0.value(x);
        let mut g = vec![0.0; d];
        self.0.gradient(x, &mut g);
        let k = norm(p);
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                let nxx = hxx[i * d + j];
                hxx[i * d + j] = -k * (nxx / (n * n) - 2.0 * g[i] * g[j] / (n * n * n));
                hxp[i * d + j] = -p[j] * g[i] / (k * n * n);
                hpp[i * d + j] = (delta / k - p[i] * p[j] / (k * k * k)) / n;
            }
        }
        true
    }
    fn conic(&self) -> bool {
        true
    }
    fn translation_invariant(&self) -> bool {
        matches!(self.0, IndexProfile::Constant(_))
    }
}

/// Potential V(x) for the Schrödinger family.
#[derive(Clone)]
pub enum Potential {
    /// V(x) = c·|x|².
    Harmonic { coefficient: f64 },
    Custom {
        v: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Harmonic { coefficient } => write!(f, "Harmonic {{ coefficient: {coefficient} }}"),
            Self::Custom { .. } => f.write_str("Custom"),
        }
    }
}

impl Potential {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Harmonic { coefficient } => coefficient * dot(x, x),
            Self::Custom { v, .. } => v(x),
        }
    }
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Harmonic { coefficient } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = 2.0 * coefficient * xi;
                }
            }
            Self::Custom { grad, .. } => grad(x, out),
        }
    }
}

struct Schrodinger {
    v: Potential,
    e: f64,
}

impl Symbol for Schrodinger {
    fn h0(&self, x: &[f64], p: &[f64]) -> f64 {
        dot(p, p) + self.v.value(x) - self.e
    }
    fn grad_x(&self, x: &[f64], _p: &[f64], out: &mut [f64]) {
        self.v.gradient(x, out);
    }
    fn grad_p(&self, _x: &[f64], p: &[f64], out: &mut [f64]) {
        for (o, pi) in out.iter_mut().zip(p) {
            *o = 2.0 * pi;
        }
    }
    fn hessians(&self, x: &[f64], _p: &[f64], hxx: &mut [f64], hxp: &mut [f64], hpp: &mut [f64]) -> bool {
        let n = x.len();
        match &self.v {
            Potential::Harmonic { coefficient } => {
                hxx.iter_mut().chain(hxp.iter_mut()).chain(hpp.iter_mut()).for_each(|o| *o = 0.0);
                for i in 0..n {
                    hxx[i * n + i] = 2.0 * coefficient;
                    hpp[i * n + i] = 2.0;
                }
                true
            }
            Potential::Custom { .. } => false,
        }
    }
}

/// Depth D(x) for the water-wave dispersion relation.
#[derive(Clone)]
pub enum Depth {
    Constant(f64),
    Custom {
        d: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
        grad: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    },
}

impl fmt::Debug for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(d) => write!(f, "Constant({d})"),
            Self::Custom { .. } => f.write_str("Custom"),
        }
    }
}

impl Depth {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant(d) => *d,
            Self::Custom { d, .. } => d(x),
        }
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Constant(_) => out.iter_mut().for_each(|o| *o = 0.0),
            Self::Custom { grad, .. } => grad(x, out),
        }
    }
}

struct WaterWave {
    depth: Depth,
    e: f64,
}

impl Symbol for WaterWave {
    fn h0(&self, x: &[f64], p: &[f64]) -> f64 {
        let k = norm(p);
        k * (k * self.depth.value(x)).tanh() - self.e
    }
    fn grad_x(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        let k = norm(p);
        let th = (k * self.depth.value(x)).tanh();
        self.depth.gradient(x, out);
        let s = k * k * (1.0 - th * th);
        out.iter_mut().for_each(|o| *o *= s);
    }
    fn grad_p(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        let k = norm(p);
        let d = self.depth.value(x);
        let th = (k * d).tanh();
        let dk = th + k * d * (1.0 - th * th);
        for (o, pi) in out.iter_mut().zip(p) {
            *o = dk * pi / k;
        }
    }
    fn conic(&self) -> bool {
        true
    }
    fn translation_invariant(&self) -> bool {
        matches!(self.depth, Depth::Constant(_))
    }
}

struct ModelDxn;

impl Symbol for ModelDxn {
    fn h0(&self, _x: &[f64], p: &[f64]) -> f64 {
        p[p.len() - 1]
    }
    fn grad_x(&self, _x: &[f64], _p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
    fn grad_p(&self, _x: &[f64], _p: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let n = out.len();
        out[n - 1] = 1.0;
    }
    fn hessians(&self, _x: &[f64], _p: &[f64], hxx: &mut [f64], hxp: &mut [f64], hpp: &mut [f64]) -> bool {
        hxx.iter_mut().chain(hxp.iter_mut()).chain(hpp.iter_mut()).for_each(|o| *o = 0.0);
        true
    }
    fn translation_invariant(&self) -> bool {
        true
    }
}

/// Parameters for [`make_builtin`]; each kind reads the fields it needs.
#[derive(Debug, Clone, Default)]
pub struct BuiltinParams {
    pub dim: Option<usize>,
    pub energy: Option<f64>,
    pub index: Option<IndexProfile>,
    pub potential: Option<Potential>,
    pub depth: Option<Depth>,
    /// Radius of the domain on which positivity of n or D is certified.
    pub domain_radius: Option<f64>,
}

/// Builds one of the built-in symbols.
///
/// `free` is `|p|²` at level `energy` (k² for Helmholtz), `helmholtz_index`
/// is `|p|/n(x)` at level `energy`; `schrodinger` and `water_wave` fold the
/// energy into the symbol and use level 0; `model_dxn` is `p_n` at level 0.
pub fn make_builtin(kind: HamiltonianKind, params: &BuiltinParams) -> Result<HamiltonianSpec> {
    let dim = params.dim.unwrap_or(2);
    if dim == 0 {
        return Err(Error::InvalidParameter("dimension must be positive".into()));
    }
    let radius = params.domain_radius.unwrap_or(10.0);
    let missing = |what: &str| Error::Config(format!("{kind} requires parameter `{what}`"));
    let (symbol, energy, homogeneity): (Arc<dyn Symbol>, f64, Option<f64>) = match kind {
        HamiltonianKind::Free => (Arc::new(Free), params.energy.unwrap_or(1.0), Some(2.0)),
        HamiltonianKind::HelmholtzIndex => {
            let index = params.index.clone().ok_or_else(|| missing("index"))?;
            let nmin = index.min_on_ball(dim, radius);
            if !(nmin > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "refractive index must be positive, found minimum {nmin} on |x| ≤ {radius}"
                )));
            }
            (Arc::new(Index(index)), params.energy.unwrap_or(1.0), Some(1.0))
        }
        HamiltonianKind::Schrodinger => {
            let v = params.potential.clone().ok_or_else(|| missing("potential"))?;
            let e = params.energy.ok_or_else(|| missing("energy"))?;
            (Arc::new(Schrodinger { v, e }), 0.0, None)
        }
        HamiltonianKind::WaterWave => {
            let depth = params.depth.clone().ok_or_else(|| missing("depth"))?;
            if let Depth::Constant(d) = depth {
                if !(d > 0.0) {
                    return Err(Error::InvalidParameter(format!("depth must be positive, got {d}")));
                }
            }
            let e = params.energy.ok_or_else(|| missing("energy"))?;
            (Arc::new(WaterWave { depth, e }), 0.0, None)
        }
        HamiltonianKind::ModelDxn => (Arc::new(ModelDxn), 0.0, Some(1.0)),
        HamiltonianKind::Custom => {
            return Err(Error::Config("custom symbols are supplied programmatically".into()))
        }
    };
    Ok(HamiltonianSpec { dim, kind, energy, homogeneity, p_min: DEFAULT_P_MIN, symbol })
}

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_deviation: f64,
    pub evaluated: usize,
    pub skipped: usize,
    pub pass: bool,
}

/// Compares analytic gradients with centered differences of H0 at seeded
/// random points `x ∈ [-1,1]^n`, `p ∈ [-2,2]^n`.
///
/// The deviation is scaled by `max(‖∇_x H0‖∞, ‖∇_p H0‖∞, 1)` at each sample.
pub fn check_gradients(h: &HamiltonianSpec, samples: usize, tol: f64) -> Result<GradientReport> {
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let n = h.dim;
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        match gradient_deviation(h, &x, &p) {
            Ok(d) => worst = worst.max(d),
            Err(_) => skipped += 1,
        }
    }
    Ok(GradientReport { max_deviation: worst, evaluated: samples - skipped, skipped, pass: worst <= tol })
}

/// Scaled deviation between analytic and finite-difference gradients at one point.
pub fn gradient_deviation(h: &HamiltonianSpec, x: &[f64], p: &[f64]) -> Result<f64> {
    let gx = h.grad_x(x, p)?;
    let gp = h.grad_p(x, p)?;
    let scale = gx.iter().chain(&gp).fold(1.0f64, |a, v| a.max(v.abs()));
    let eps = f64::EPSILON.cbrt();
    let mut worst = 0.0f64;
    let mut xs = x.to_vec();
    let mut ps = p.to_vec();
    for i in 0..h.dim {
        let d = eps * x[i].abs().max(1.0);
        xs[i] = x[i] + d;
        let fp = h.h0(&xs, p)?;
        xs[i] = x[i] - d;
        let fm = h.h0(&xs, p)?;
        xs[i] = x[i];
        worst = worst.max(((fp - fm) / (2.0 * d) - gx[i]).abs() / scale);
        let d = eps * p[i].abs().max(1.0);
        ps[i] = p[i] + d;
        let fp = h.h0(x, &ps)?;
        ps[i] = p[i] - d;
        let fm = h.h0(x, &ps)?;
        ps[i] = p[i];
        worst = worst.max(((fp - fm) / (2.0 * d) - gp[i]).abs() / scale);
    }
    Ok(worst)
}

/// Largest |⟨p, ∇_p H0⟩ − m·H0| over seeded samples; None without homogeneity.
pub fn euler_defect(h: &HamiltonianSpec, samples: usize) -> Result<Option<f64>> {
    let Some(m) = h.homogeneity else { return Ok(None) };
    let mut rng = ChaCha8Rng::seed_from_u64(0xe01e);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let x: Vec<f64> = (0..h.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..h.dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if norm(&p) < 1e-3 {
            continue;
        }
        let gp = h.grad_p(&x, &p)?;
        let lhs = dot(&p, &gp);
        let rhs = m * h.h0(&x, &p)?;
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(1.0));
    }
    Ok(Some(worst))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(profile: IndexProfile) -> HamiltonianSpec {
        make_builtin(
            HamiltonianKind::HelmholtzIndex,
            &BuiltinParams { index: Some(profile), energy: Some(5.0), ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn builtin_values() {
        let h = index(IndexProfile::Constant(1.0));
        assert_eq!(h.h0(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(h.homogeneity, Some(1.0));

        let s = make_builtin(
            HamiltonianKind::Schrodinger,
            &BuiltinParams {
                potential: Some(Potential::Harmonic { coefficient: 1.0 }),
                energy: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.h0(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);

        let m = make_builtin(HamiltonianKind::ModelDxn, &BuiltinParams::default()).unwrap();
        assert_eq!(m.h0(&[3.0, -1.0], &[0.2, 0.7]).unwrap(), 0.7);

        let f = make_builtin(HamiltonianKind::Free, &BuiltinParams::default()).unwrap();
        assert_eq!(f.homogeneity, Some(2.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!("nonsense".parse::<HamiltonianKind>().is_err());
        let r = make_builtin(
            HamiltonianKind::HelmholtzIndex,
            &BuiltinParams { index: Some(IndexProfile::Constant(-1.0)), ..Default::default() },
        );
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
        let r = make_builtin(
            HamiltonianKind::WaterWave,
            &BuiltinParams { depth: Some(Depth::Constant(0.0)), energy: Some(1.0), ..Default::default() },
        );
        assert!(r.is_err());
        let r = make_builtin(HamiltonianKind::Schrodinger, &BuiltinParams::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f = make_builtin(HamiltonianKind::Free, &BuiltinParams::default()).unwrap();
        let r = check_gradients(&f, 100, 1e-8).unwrap();
        assert!(r.pass, "{r:?}");

        let fish = index(IndexProfile::MaxwellFishEye { scale: 1.0 });
        let r = check_gradients(&fish, 100, 1e-6).unwrap();
        assert!(r.pass && r.skipped == 0, "{r:?}");

        let ww = make_builtin(
            HamiltonianKind::WaterWave,
            &BuiltinParams { depth: Some(Depth::Constant(0.7)), energy: Some(1.0), ..Default::default() },
        )
        .unwrap();
        assert!(check_gradients(&ww, 100, 1e-6).unwrap().pass);

        let lens = index(IndexProfile::GaussianLens { background: 0.8, amplitude: 0.4, width: 1.0 });
        assert!(check_gradients(&lens, 100, 1e-6).unwrap().pass);
    }

    #[test]
    fn conic_point_is_skipped_not_fatal() {
        let h = index(IndexProfile::Constant(1.0));
        assert!(matches!(h.h0(&[0.0, 0.0], &[0.0, 0.0]), Err(Error::ConicSingularity { .. })));
        assert!(gradient_deviation(&h, &[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn analytic_hessians_match_differences() {
        let specs = [
            index(IndexProfile::MaxwellFishEye { scale: 1.3 }),
            index(IndexProfile::GaussianLens { background: 0.8, amplitude: 0.4, width: 0.9 }),
            make_builtin(
                HamiltonianKind::Schrodinger,
                &BuiltinParams {
                    potential: Some(Potential::Harmonic { coefficient: 1.0 }),
                    energy: Some(1.0),
                    ..Default::default()
                },
            )
            .unwrap(),
        ];
        let x = [0.3, -0.7];
        let p = [1.1, 0.4];
        for h in specs {
            let (mut a, mut b, mut c) = ([0.0; 4], [0.0; 4], [0.0; 4]);
            h.hessians_into(&x, &p, &mut a, &mut b, &mut c).unwrap();
            for i in 0..2 {
                let d = 1e-6;
                let mut xs = x;
                xs[i] += d;
                let gxp = h.grad_x(&xs, &p).unwrap();
                let gpp = h.grad_p(&xs, &p).unwrap();
                xs[i] -= 2.0 * d;
                let gxm = h.grad_x(&xs, &p).unwrap();
                let gpm = h.grad_p(&xs, &p).unwrap();
                let mut ps = p;
                ps[i] += d;
                let gpp2 = h.grad_p(&x, &ps).unwrap();
                ps[i] -= 2.0 * d;
                let gpm2 = h.grad_p(&x, &ps).unwrap();
                for j in 0..2 {
                    assert!((a[i * 2 + j] - (gxp[j] - gxm[j]) / (2.0 * d)).abs() < 1e-7);
                    assert!((b[i * 2 + j] - (gpp[j] - gpm[j]) / (2.0 * d)).abs() < 1e-7);
                    assert!((c[i * 2 + j] - (gpp2[j] - gpm2[j]) / (2.0 * d)).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn euler_identity() {
        for h in [
            index(IndexProfile::MaxwellFishEye { scale: 1.0 }),
            make_builtin(HamiltonianKind::Free, &BuiltinParams::default()).unwrap(),
            make_builtin(HamiltonianKind::ModelDxn, &BuiltinParams::default()).unwrap(),
        ] {
            assert!(euler_defect(&h, 200).unwrap().unwrap() < 1e-10);
        }
    }
}
