//! Assembly of the semiclassical Green function u = u_boundary +
//! u_transient + u_wave for a source f = ∫* e^{i(xη + S(η))/h} A(η) dη.
//!
//! u solves (H − E)u = f through u = (i/h)∫_0^∞ e^{−it(H−E)/h} f dt. The
//! t-integral is split by χ̃0 near Σ_E in momentum, by χ0 near t = 0 and cut
//! off by χ_T at the horizon.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonians::{dot, norm, HamiltonianSpec};
use crate::lagrangian::{flow_out, intersect_level, FlowGrid, FlowOut, GeneratingPhase, LevelIntersection, SourceLagrangian};
use crate::oscint::rules::gl12;
use crate::oscint::{eighth_root, osc_quad, star_prefactor, Axis, OscIntegrand, OscOptions};
use crate::phase::{find_arrivals, maslov_factor, taylor_phase, ArrivalDatum, T_TAYLOR_MAX};

/// Steepness of the erf transition in [`smooth_step`].
const STEP_STEEPNESS: f64 = 1.5;

/// C^∞ monotone step: 0 for s ≤ 0, 1 for s ≥ 1,
/// ½ erfc(−c(2s − 1)/√(s(1 − s))) in between.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        0.5 * libm::erfc(-STEP_STEEPNESS * (2.0 * s - 1.0) / (s * (1.0 - s)).sqrt())
    }
}

/// d/ds of [`smooth_step`].
pub fn smooth_step_derivative(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    let q = s * (1.0 - s);
    let u = STEP_STEEPNESS * (2.0 * s - 1.0) / q.sqrt();
    (-u * u).exp() * STEP_STEEPNESS / (2.0 * PI.sqrt() * q.powf(1.5))
}

/// 1 on [0, a], 0 on [b, ∞), smooth in between.
fn window(t: f64, a: f64, b: f64) -> f64 {
    1.0 - smooth_step((t - a) / (b - a))
}

/// The cutoff system (χ̃0, χ0, χ_T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffSpec {
    /// χ̃0 ≡ 1 for |s| ≤ δ_τ/2, ≡ 0 for |s| ≥ δ_τ, where s = |η| − τ_L(ψ).
    pub delta_tau: f64,
    /// χ0 ≡ 1 on [0, ε0/2], ≡ 0 for t ≥ ε0.
    pub eps0: f64,
    /// χ_T ≡ 1 for t ≤ T/2, ≡ 0 for t ≥ T.
    pub horizon: f64,
}

impl CutoffSpec {
    pub const BASELINE_DELTA_TAU: f64 = 4.0;
    pub const BASELINE_EPS0: f64 = 0.1;

    pub fn new(delta_tau: f64, eps0: f64, horizon: f64) -> Result<Self> {
        let c = Self { delta_tau, eps0, horizon };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_tau > 0.0) {
            return Err(Error::InvalidParameter(format!("δ_τ must be positive, got {}", self.delta_tau)));
        }
        if !(self.eps0 > 0.0 && self.eps0 < self.horizon / 4.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < ε0 < T/4, got ε0 = {}, T = {}",
                self.eps0, self.horizon
            )));
        }
        Ok(())
    }

    pub fn chi_tilde0(&self, s: f64) -> f64 {
        let d = self.delta_tau;
        1.0 - smooth_step((s.abs() - 0.5 * d) / (0.5 * d))
    }

    pub fn chi0(&self, t: f64) -> f64 {
        window(t, 0.5 * self.eps0, self.eps0)
    }

    pub fn chi_horizon(&self, t: f64) -> f64 {
        window(t, 0.5 * self.horizon, self.horizon)
    }
}

/// Source amplitude on a graph-type source Lagrangian.
#[derive(Clone)]
pub struct SourceSpec {
    pub lagrangian: SourceLagrangian,
    pub amplitude: Arc<dyn Fn(&[f64; 2]) -> Complex64 + Send + Sync>,
    /// A vanishes for |η| ≥ support.
    pub support: f64,
    /// Radii where A has kinks or transitions.
    pub breaks: Vec<f64>,
}

impl fmt::Debug for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceSpec")
            .field("lagrangian", &self.lagrangian)
            .field("support", &self.support)
            .field("breaks", &self.breaks)
            .finish()
    }
}

impl SourceSpec {
    /// Point source at `x0` with Fourier profile g(|ξ|): f = (2πh)^{-2}∫e^{i(x−x0)ξ/h}g dξ,
    /// so A(η) = e^{−iπ/2}(2πh)^{-1}g(|η|).
    pub fn radial(x0: [f64; 2], g: crate::reference::RadialProfile, h: f64) -> Self {
        let support = g.support();
        let breaks = g.breaks();
        let scale = star_prefactor(2, h).inv() / (2.0 * PI * h).powi(2);
        Self {
            lagrangian: SourceLagrangian::VerticalFiber { x0 },
            amplitude: Arc::new(move |eta: &[f64; 2]| scale * g.value(eta[0].hypot(eta[1]))),
            support,
            breaks,
        }
    }

    pub fn zero(x0: [f64; 2]) -> Self {
        Self {
            lagrangian: SourceLagrangian::VerticalFiber { x0 },
            amplitude: Arc::new(|_| Complex64::new(0.0, 0.0)),
            support: 1.0,
            breaks: Vec::new(),
        }
    }

    fn check(&self) -> Result<()> {
        match self.lagrangian {
            SourceLagrangian::VerticalFiber { .. } | SourceLagrangian::TiltedGraph { .. } => Ok(()),
            _ => Err(Error::Unsupported("Green assembly needs a source that is a graph over the momenta".into())),
        }
    }

    /// S(η) in f = ∫* e^{i(xη + S(η))/h} A dη.
    pub fn phase(&self, eta: &[f64]) -> f64 {
        match &self.lagrangian {
            SourceLagrangian::VerticalFiber { x0 } => -dot(x0, eta),
            SourceLagrangian::TiltedGraph { phase } => phase.value(eta),
            _ => 0.0,
        }
    }

    /// x_Λ(η) = −∇S(η).
    pub fn base_point(&self, eta: &[f64]) -> [f64; 2] {
        match &self.lagrangian {
            SourceLagrangian::VerticalFiber { x0 } => *x0,
            SourceLagrangian::TiltedGraph { phase } => {
                let g = phase.gradient(eta);
                [-g[0], -g[1]]
            }
            _ => [0.0, 0.0],
        }
    }

    /// f(x) by quadrature.
    pub fn value(&self, x: &[f64], h: f64, opts: &OscOptions) -> Result<Complex64> {
        let f = |q: &[f64]| {
            let eta = polar(q);
            (dot(x, &eta) + self.phase(&eta), (self.amplitude)(&eta) * q[0])
        };
        let i = OscIntegrand {
            integrand: &f,
            axes: vec![
                Axis::Interval { lo: 0.0, hi: self.support, breaks: self.breaks.clone() },
                Axis::periodic(0.0, 2.0 * PI),
            ],
            h,
        };
        Ok(star_prefactor(2, h) * osc_quad(&i, opts)?.value)
    }
}

struct SourcePhase<'a>(&'a SourceSpec);

impl GeneratingPhase for SourcePhase<'_> {
    fn value(&self, xi: &[f64]) -> f64 {
        self.0.phase(xi)
    }
    fn gradient(&self, xi: &[f64]) -> [f64; 2] {
        let b = self.0.base_point(xi);
        [-b[0], -b[1]]
    }
    fn hessian(&self, xi: &[f64]) -> [[f64; 2]; 2] {
        match &self.0.lagrangian {
            SourceLagrangian::TiltedGraph { phase } => phase.hessian(xi),
            _ => [[0.0; 2]; 2],
        }
    }
}

fn polar(q: &[f64]) -> [f64; 2] {
    let (s, c) = q[1].sin_cos();
    [q[0] * c, q[0] * s]
}

/// τ_L(ψ) as a trigonometric interpolant of the level samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TauProfile {
    mean: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl TauProfile {
    pub fn from_level(level: &LevelIntersection) -> Result<Self> {
        if !level.domain.periodic {
            return Err(Error::Unsupported("Green assembly needs L over the full circle of directions".into()));
        }
        let n = level.samples.len();
        let taus: Vec<f64> = level.samples.iter().map(|s| s.tau).collect();
        let psis: Vec<f64> = level.samples.iter().map(|s| s.psi).collect();
        let mean = taus.iter().sum::<f64>() / n as f64;
        let mut cos = Vec::new();
        let mut sin = Vec::new();
        for m in 1..n.div_ceil(2) {
            let c: f64 = taus.iter().zip(&psis).map(|(t, p)| t * (m as f64 * p).cos()).sum::<f64>() * 2.0 / n as f64;
            let s: f64 = taus.iter().zip(&psis).map(|(t, p)| t * (m as f64 * p).sin()).sum::<f64>() * 2.0 / n as f64;
            cos.push(c);
            sin.push(s);
        }
        let tiny = 1e-14 * mean.abs().max(1.0);
        let keep = (0..cos.len()).rposition(|m| cos[m].abs() > tiny || sin[m].abs() > tiny).map_or(0, |m| m + 1);
        cos.truncate(keep);
        sin.truncate(keep);
        let min = taus.iter().copied().fold(f64::INFINITY, f64::min);
        let max = taus.iter().copied().fold(0.0, f64::max);
        Ok(Self { mean, cos, sin, min, max })
    }

    pub fn eval(&self, psi: f64) -> f64 {
        let mut v = self.mean;
        for (m, (c, s)) in self.cos.iter().zip(&self.sin).enumerate() {
            let (sn, cs) = ((m + 1) as f64 * psi).sin_cos();
            v += c * cs + s * sn;
        }
        v
    }

    pub fn is_constant(&self) -> bool {
        self.cos.is_empty()
    }
}

/// F(λ) = ∫_0^∞ w(t) e^{−itλ/h} dt for a window w ≡ 1 on [0, a], ≡ 0 on [b, ∞).
///
/// F = (1 + R(ω))/(iω) with ω = λ/h and R(ω) = ∫_a^b w′ e^{−iωt} dt;
/// R e^{iωc}, c = (a + b)/2, is smooth and tabulated; small |ω| uses moments.
/// The envelope decays only like e^{−C√(ω(b−a))}, so it is never truncated.
#[derive(Debug, Clone)]
pub struct TimeKernel {
    a: f64,
    b: f64,
    h: f64,
    step: f64,
    omega_max: f64,
    envelope: Vec<Complex64>,
    moments: Vec<f64>,
}

const SERIES_TERMS: usize = 44;

impl TimeKernel {
    /// Tabulates the kernel for |λ| ≤ `lambda_max`; larger |λ| is evaluated directly.
    pub fn new(a: f64, b: f64, h: f64, lambda_max: f64) -> Self {
        let len = b - a;
        let step = 0.1 / len;
        let omega_max = lambda_max.abs() / h;
        let n = (omega_max / step).ceil() as usize + 4;
        let (gx, gw) = gl12();
        let panels = 32;
        let ph = len / panels as f64;
        let moments = (0..SERIES_TERMS)
            .map(|k| {
                let mut m = a.powi(k as i32 + 1) / (k + 1) as f64;
                for p in 0..panels {
                    let mid = a + ph * (p as f64 + 0.5);
                    for (x, w) in gx.iter().zip(gw) {
                        let t = mid + 0.5 * ph * x;
                        m += 0.5 * ph * w * t.powi(k as i32) * window(t, a, b);
                    }
                }
                m
            })
            .collect();
        let mut k = Self { a, b, h, step, omega_max, envelope: Vec::new(), moments };
        k.envelope = (0..n).into_par_iter().map(|j| k.envelope_direct(j as f64 * step)).collect();
        k
    }

    /// ∫_a^b w′(t) e^{−iω(t−c)} dt by panel Gauss–Legendre.
    fn envelope_direct(&self, omega: f64) -> Complex64 {
        let (a, len) = (self.a, self.b - self.a);
        let c = 0.5 * (self.a + self.b);
        let panels = ((omega.abs() * len / PI).ceil() as usize + 16).max(16);
        let (gx, gw) = gl12();
        let ph = len / panels as f64;
        let mut s = Complex64::new(0.0, 0.0);
        for k in 0..panels {
            let mid = a + ph * (k as f64 + 0.5);
            for (x, w) in gx.iter().zip(gw) {
                let t = mid + 0.5 * ph * x;
                let wp = -smooth_step_derivative((t - a) / len) / len;
                s += 0.5 * ph * w * wp * Complex64::from_polar(1.0, -omega * (t - c));
            }
        }
        s
    }

    fn envelope(&self, omega: f64) -> Complex64 {
        let w = omega.abs();
        if w > self.omega_max {
            return self.envelope_direct(omega);
        }
        // six-point Lagrange interpolation; E(−ω) = conj E(ω)
        let u = w / self.step;
        let i0 = (u.floor() as i64 - 2).max(0) as usize;
        let mut v = Complex64::new(0.0, 0.0);
        for j in i0..i0 + 6 {
            let mut l = 1.0;
            for m in i0..i0 + 6 {
                if m != j {
                    l *= (u - m as f64) / (j as f64 - m as f64);
                }
            }
            let e = if j < self.envelope.len() { self.envelope[j] } else { Complex64::new(0.0, 0.0) };
            v += e * l;
        }
        if omega < 0.0 { v.conj() } else { v }
    }

    /// F at ω = λ/h.
    pub fn at_omega(&self, omega: f64) -> Complex64 {
        if omega.abs() * self.b <= 2.0 {
            let z = Complex64::new(0.0, -omega);
            let mut term = Complex64::new(1.0, 0.0);
            let mut s = Complex64::new(0.0, 0.0);
            for (k, m) in self.moments.iter().enumerate() {
                if k > 0 {
                    term *= z / k as f64;
                }
                s += term * m;
            }
            return s;
        }
        let c = 0.5 * (self.a + self.b);
        let r = self.envelope(omega) * Complex64::from_polar(1.0, -omega * c);
        (1.0 + r) / Complex64::new(0.0, omega)
    }

    pub fn at(&self, lambda: f64) -> Complex64 {
        self.at_omega(lambda / self.h)
    }
}

/// Resolution and tolerances of the assembler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblerOptions {
    pub n_psi: usize,
    pub flow: FlowGrid,
    pub quad: OscOptions,
}

impl Default for AssemblerOptions {
    fn default() -> Self {
        Self { n_psi: 256, flow: FlowGrid::default(), quad: OscOptions { tol: 1e-9, ..Default::default() } }
    }
}

/// Per-node values; `total` is the exact sum of the parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub total: Complex64,
    pub boundary: Complex64,
    pub transient: Complex64,
    pub wave: Complex64,
    /// Transient and wave replaced by the direct (t, η) quadrature.
    pub slow_path: bool,
}

/// Field values on a set of nodes for one h.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub h: f64,
    pub nodes: Vec<[f64; 2]>,
    pub values: Vec<FieldValue>,
}

/// Builds the three parts of the Green function for one (H, source, cutoffs, h).
#[derive(Debug, Clone)]
pub struct GreenAssembler {
    pub hamiltonian: HamiltonianSpec,
    pub source: SourceSpec,
    pub cutoffs: CutoffSpec,
    pub h: f64,
    pub options: AssemblerOptions,
    /// None in the elliptic case Σ_E ∩ Λ = ∅.
    pub level: Option<LevelIntersection>,
    pub flow: Option<FlowOut>,
    tau: Option<TauProfile>,
    transient_kernel: TimeKernel,
    horizon_kernel: TimeKernel,
}

impl GreenAssembler {
    pub fn new(
        hamiltonian: HamiltonianSpec,
        source: SourceSpec,
        cutoffs: CutoffSpec,
        h: f64,
        options: AssemblerOptions,
    ) -> Result<Self> {
        if hamiltonian.dim != 2 {
            return Err(Error::Unsupported("Green assembly is planar".into()));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("h must be positive, got {h}")));
        }
        cutoffs.validate()?;
        source.check()?;
        let energy = hamiltonian.energy;
        let level = match intersect_level(&source.lagrangian, &hamiltonian, energy, None, options.n_psi) {
            Ok(l) => Some(l),
            Err(Error::NoRoot(_)) => None,
            Err(e) => return Err(e),
        };
        let (tau, flow) = match &level {
            Some(l) => {
                let tau = TauProfile::from_level(l)?;
                let d = cutoffs.delta_tau;
                let slack = 1e-9 * tau.max;
                if !(0.5 * d >= tau.max - slack || d <= tau.min + slack) {
                    return Err(Error::InvalidParameter(format!(
                        "δ_τ = {d} makes χ̃0 non-smooth at η = 0: need δ_τ/2 ≥ {} or δ_τ ≤ {}",
                        tau.max, tau.min
                    )));
                }
                (Some(tau), Some(flow_out(l, cutoffs.horizon, options.flow)?))
            }
            None => (None, None),
        };
        let mut a = Self {
            hamiltonian,
            source,
            cutoffs,
            h,
            options,
            level,
            flow,
            tau,
            transient_kernel: TimeKernel::new(0.5 * cutoffs.eps0, cutoffs.eps0, h, 0.0),
            horizon_kernel: TimeKernel::new(0.5 * cutoffs.horizon, cutoffs.horizon, h, 0.0),
        };
        let lambda_max = a.lambda_max();
        a.transient_kernel = TimeKernel::new(0.5 * cutoffs.eps0, cutoffs.eps0, h, lambda_max);
        a.horizon_kernel = TimeKernel::new(0.5 * cutoffs.horizon, cutoffs.horizon, h, lambda_max);
        Ok(a)
    }

    /// Bound on |H̃ − E + hH1| over the χ̃0 band, with margin.
    fn lambda_max(&self) -> f64 {
        let Some((lo, hi)) = self.tau_band() else { return 0.0 };
        let mut m: f64 = 0.0;
        for i in 0..=48 {
            let r = lo + (hi - lo) * i as f64 / 48.0;
            for j in 0..64 {
                let eta = polar(&[r, 2.0 * PI * j as f64 / 64.0]);
                let x = self.source.base_point(&eta);
                let v = self.h_tilde(&eta).unwrap_or(0.0) - self.hamiltonian.energy
                    + self.h * self.hamiltonian.h1(&x, &eta).unwrap_or(0.0);
                m = m.max(v.abs());
            }
        }
        1.25 * m
    }

    pub fn is_elliptic(&self) -> bool {
        self.level.is_none()
    }

    /// χ̃0 at momentum η (≡ 0 in the elliptic case).
    pub fn chi_tilde0(&self, eta: &[f64; 2]) -> f64 {
        match &self.tau {
            Some(tau) => {
                let r = eta[0].hypot(eta[1]);
                self.cutoffs.chi_tilde0(r - tau.eval(eta[1].atan2(eta[0])))
            }
            None => 0.0,
        }
    }

    fn radial_axis(&self, lo: f64, hi: f64) -> Axis {
        let mut breaks = self.source.breaks.clone();
        if let Some(tau) = &self.tau {
            let d = self.cutoffs.delta_tau;
            for s in [-1.0, -0.5, 0.5, 1.0] {
                breaks.push(tau.min + s * d);
                breaks.push(tau.max + s * d);
            }
            breaks.push(tau.min);
            breaks.push(tau.max);
        }
        breaks.retain(|b| *b > lo && *b < hi);
        Axis::Interval { lo, hi, breaks }
    }

    fn h_tilde(&self, eta: &[f64; 2]) -> Result<f64> {
        let x = self.source.base_point(eta);
        self.hamiltonian.h0(&x, eta)
    }

    fn polar_integral(&self, lo: f64, hi: f64, f: &(dyn Fn(&[f64; 2]) -> Complex64 + Sync), x: &[f64]) -> Result<Complex64> {
        if hi <= lo {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let integrand = |q: &[f64]| {
            let eta = polar(q);
            (dot(x, &eta) + self.source.phase(&eta), f(&eta) * q[0])
        };
        let i = OscIntegrand {
            integrand: &integrand,
            axes: vec![self.radial_axis(lo, hi), Axis::periodic(0.0, 2.0 * PI)],
            h: self.h,
        };
        Ok(star_prefactor(2, self.h) * osc_quad(&i, &self.options.quad)?.value)
    }

    /// ∫* (1 − χ̃0) A/(H̃ − E) e^{i(xη + S)/h} dη with H̃(η) = H0(x_Λ(η), η).
    pub fn boundary_part(&self, x: &[f64]) -> Result<Complex64> {
        let energy = self.hamiltonian.energy;
        let p_min = if self.hamiltonian.is_conic() { self.hamiltonian.p_min } else { 0.0 };
        let lo = match &self.tau {
            Some(tau) if 0.5 * self.cutoffs.delta_tau >= tau.max => tau.min + 0.5 * self.cutoffs.delta_tau,
            _ => p_min,
        };
        let failure = std::sync::Mutex::new(None);
        let f = |eta: &[f64; 2]| {
            let w = 1.0 - self.chi_tilde0(eta);
            if w == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let a = (self.source.amplitude)(eta);
            if a == Complex64::new(0.0, 0.0) {
                return a;
            }
            match self.h_tilde(eta) {
                Ok(hv) if (hv - energy).abs() > 1e-12 => a * w / (hv - energy),
                Ok(_) => {
                    *failure.lock().expect("lock") = Some(Error::InvalidParameter(
                        "cutoff too narrow: (1 − χ̃0)A meets Σ_E".into(),
                    ));
                    Complex64::new(0.0, 0.0)
                }
                Err(e) => {
                    *failure.lock().expect("lock") = Some(e);
                    Complex64::new(0.0, 0.0)
                }
            }
        };
        let v = self.polar_integral(lo, self.source.support, &f, x)?;
        if let Some(e) = failure.into_inner().expect("lock") {
            return Err(e);
        }
        Ok(v)
    }

    fn tau_band(&self) -> Option<(f64, f64)> {
        let tau = self.tau.as_ref()?;
        let d = self.cutoffs.delta_tau;
        let p_min = if self.hamiltonian.is_conic() { self.hamiltonian.p_min } else { 0.0 };
        Some(((tau.min - d).max(p_min), (tau.max + d).min(self.source.support)))
    }

    /// Time-integrated χ̃0-localized propagation for translation-invariant H.
    fn kernel_integral(&self, kernel: &TimeKernel, x: &[f64]) -> Result<Complex64> {
        let Some((lo, hi)) = self.tau_band() else { return Ok(Complex64::new(0.0, 0.0)) };
        let energy = self.hamiltonian.energy;
        let ih = Complex64::new(0.0, 1.0 / self.h);
        let f = |eta: &[f64; 2]| {
            let w = self.chi_tilde0(eta);
            if w == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let a = (self.source.amplitude)(eta);
            let hv = self.h_tilde(eta).unwrap_or(f64::NAN);
            let theta = self.hamiltonian.h1(&self.source.base_point(eta), eta).unwrap_or(0.0);
            // e^{−itH1/h·h} folds into λ when H1 is constant along the flow
            ih * a * w * kernel.at(hv - energy + self.h * theta)
        };
        self.polar_integral(lo, hi, &f, x)
    }

    /// (i/h)∫ χ0 χ_T dt ∫* e^{iΦ/h} e^{−iΘ} |J|^{−1/2} χ̃0 A dη.
    pub fn transient_part(&self, x: &[f64]) -> Result<Complex64> {
        if self.is_elliptic() {
            return Ok(Complex64::new(0.0, 0.0));
        }
        if self.hamiltonian.is_translation_invariant() {
            return self.kernel_integral(&self.transient_kernel, x);
        }
        self.taylor_transient(x)
    }

    /// Variable-coefficient transient: Taylor phase of order 3, Θ ≈ tH1 and
    /// |J|^{−1/2} ≈ 1 − (t/2) tr H_xp at (x, η).
    fn taylor_transient(&self, x: &[f64]) -> Result<Complex64> {
        let eps0 = self.cutoffs.eps0;
        if eps0 > T_TAYLOR_MAX * 1.5 {
            return Err(Error::InvalidParameter(format!(
                "ε0 = {eps0} is outside the Taylor window for a variable-coefficient transient"
            )));
        }
        let Some((lo, hi)) = self.tau_band() else { return Ok(Complex64::new(0.0, 0.0)) };
        let sp = SourcePhase(&self.source);
        let h = &self.hamiltonian;
        let failure = std::sync::Mutex::new(None);
        let integrand = |q: &[f64]| -> (f64, Complex64) {
            let t = q[0];
            let eta = polar(&q[1..]);
            let w = self.chi_tilde0(&eta) * self.cutoffs.chi0(t);
            if w == 0.0 {
                return (0.0, Complex64::new(0.0, 0.0));
            }
            let phase = match taylor_phase(h, Some(&sp), t, x, &eta, 3) {
                Ok(v) => v,
                Err(e) => {
                    *failure.lock().expect("lock") = Some(e);
                    return (0.0, Complex64::new(0.0, 0.0));
                }
            };
            let mut hxx = [0.0; 4];
            let mut hxp = [0.0; 4];
            let mut hpp = [0.0; 4];
            let jac = match h.hessians_into(x, &eta, &mut hxx, &mut hxp, &mut hpp) {
                Ok(()) => 1.0 + t * (hxp[0] + hxp[3]),
                Err(_) => 1.0,
            };
            if jac < 0.1 {
                *failure.lock().expect("lock") =
                    Some(Error::Unsupported(format!("Jacobian vanishes inside the transient window at t = {t}")));
            }
            let theta = t * h.h1(x, &eta).unwrap_or(0.0);
            let a = (self.source.amplitude)(&eta) * w * (1.0 - 0.5 * t * (hxp[0] + hxp[3])) * q[1];
            (phase, a * Complex64::from_polar(1.0, -theta))
        };
        let i = OscIntegrand {
            integrand: &integrand,
            axes: vec![
                Axis::Interval { lo: 0.0, hi: eps0, breaks: vec![0.5 * eps0] },
                self.radial_axis(lo, hi),
                Axis::periodic(0.0, 2.0 * PI),
            ],
            h: self.h,
        };
        let v = osc_quad(&i, &self.options.quad)?.value;
        if let Some(e) = failure.into_inner().expect("lock") {
            return Err(e);
        }
        Ok(Complex64::new(0.0, 1.0 / self.h) * star_prefactor(2, self.h) * v)
    }

    /// Arrivals at x on the flow-out.
    pub fn arrivals(&self, x: &[f64]) -> Result<Vec<ArrivalDatum>> {
        match &self.flow {
            Some(f) => find_arrivals(f, x, None),
            None => Ok(Vec::new()),
        }
    }

    /// Weight χ_T(t)(1 − χ0(t)) of an arrival.
    pub fn arrival_weight(&self, t: f64) -> f64 {
        self.cutoffs.chi_horizon(t) * (1.0 - self.cutoffs.chi0(t))
    }

    /// One WKB summand of the wave part, see [`wkb_summand`].
    pub fn wave_term(&self, a: &ArrivalDatum) -> Result<Complex64> {
        let level = self.level.as_ref().ok_or_else(|| Error::InvalidParameter("no level set".into()))?;
        let amp = (self.source.amplitude)(&a.eta);
        wkb_summand(level, a, amp, self.h, self.arrival_weight(a.t))
    }

    /// Σ over arrivals of [`Self::wave_term`].
    pub fn wave_sum(&self, arrivals: &[ArrivalDatum]) -> Result<Complex64> {
        let mut s = Complex64::new(0.0, 0.0);
        for a in arrivals {
            s += self.wave_term(a)?;
        }
        Ok(s)
    }

    pub fn wave_part(&self, x: &[f64]) -> Result<Complex64> {
        self.wave_sum(&self.arrivals(x)?)
    }

    /// (i/h)∫ χ_T dt ∫* e^{iΦ/h} χ̃0 A dη, the transient and wave parts together.
    pub fn slow_part(&self, x: &[f64]) -> Result<Complex64> {
        if self.is_elliptic() {
            return Ok(Complex64::new(0.0, 0.0));
        }
        if !self.hamiltonian.is_translation_invariant() {
            return Err(Error::Unsupported(
                "direct (t, η) quadrature at caustic points needs a translation-invariant symbol".into(),
            ));
        }
        self.kernel_integral(&self.horizon_kernel, x)
    }

    /// u(x) with its parts; caustic points take the slow path.
    pub fn assemble(&self, x: &[f64]) -> Result<FieldValue> {
        let boundary = self.boundary_part(x)?;
        if self.is_elliptic() {
            let zero = Complex64::new(0.0, 0.0);
            return Ok(FieldValue { total: boundary, boundary, transient: zero, wave: zero, slow_path: false });
        }
        match self.wave_part(x) {
            Ok(wave) => {
                let transient = self.transient_part(x)?;
                Ok(FieldValue { total: boundary + transient + wave, boundary, transient, wave, slow_path: false })
            }
            Err(Error::Caustic(_)) => {
                let slow = self.slow_part(x)?;
                Ok(FieldValue {
                    total: boundary + slow,
                    boundary,
                    transient: slow,
                    wave: Complex64::new(0.0, 0.0),
                    slow_path: true,
                })
            }
            Err(e) => Err(e),
        }
    }

    /// Parallel map of [`Self::assemble`] over nodes.
    pub fn field(&self, nodes: &[[f64; 2]]) -> Result<FieldGrid> {
        let values: Vec<Result<FieldValue>> = nodes.par_iter().map(|x| self.assemble(x)).collect();
        let values = values.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(FieldGrid { h: self.h, nodes: nodes.to_vec(), values })
    }
}

/// K A √(D/|J|) e^{iS/h − iΘ} e^{iπσ/4} w e^{−iπμ/2} with K = i e^{iπn/4} √(2π/h)
/// and D = |∂_ψη| / |∇_η H̃| on L. The Maslov factor is applied last.
pub fn wkb_summand(level: &LevelIntersection, a: &ArrivalDatum, amplitude: Complex64, h: f64, weight: f64) -> Result<Complex64> {
    if weight == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    if !a.nondegenerate {
        return Err(Error::Caustic(format!(
            "caustic point (t = {}, ψ = {}); use direct quadrature fallback",
            a.t, a.psi
        )));
    }
    let lp = level.point(a.psi)?;
    let density = norm(&lp.dp_dpsi) / lp.tau_prime;
    let k = Complex64::new(0.0, 1.0) * eighth_root(2) * (2.0 * PI / h).sqrt();
    let base = k * amplitude
        * (density / a.jacobian.abs()).sqrt()
        * Complex64::from_polar(1.0, a.action / h - a.theta)
        * eighth_root(a.signature)
        * weight;
    Ok(base * maslov_factor(a.maslov))
}

/// Horizon T = factor × escape time of L past `radius`.
pub fn auto_horizon(level: &LevelIntersection, radius: f64, factor: f64, search: f64) -> Result<f64> {
    let t = level.escape_time(radius, search, 1e-8)?;
    Ok((factor * t).max(f64::MIN_POSITIVE))
}

/// Empirical decay classification of a field computed at several h.
#[derive(Debug, Clone, PartialEq)]
pub struct WavefrontReport {
    /// Slope of log|u_total| against log h per node.
    pub exponents: Vec<f64>,
    pub boundary_exponents: Vec<f64>,
    /// Nodes whose total field does not decay at least like h³.
    pub slow: Vec<bool>,
    /// Slow nodes farther than `tolerance` from π_x(Λ) ∪ π_x(Λ+).
    pub unexplained: Vec<usize>,
    pub pass: bool,
}

/// Least-squares slope of log|v| against log h.
pub fn decay_exponent(hs: &[f64], values: &[f64]) -> f64 {
    let floor = 1e-300;
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.abs().max(floor).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Classifies nodes by decay in h and checks slow nodes lie near the projection
/// of the source Lagrangian or of its flow-out.
pub fn wavefront_estimate(grids: &[FieldGrid], flow: Option<&FlowOut>, source_points: &[[f64; 2]], tolerance: f64) -> Result<WavefrontReport> {
    if grids.len() < 2 {
        return Err(Error::InvalidParameter("wave-front estimate needs at least two values of h".into()));
    }
    let nodes = &grids[0].nodes;
    if grids.iter().any(|g| g.nodes != *nodes) {
        return Err(Error::InvalidParameter("field grids must share their nodes".into()));
    }
    let hs: Vec<f64> = grids.iter().map(|g| g.h).collect();
    let mut exponents = Vec::new();
    let mut boundary_exponents = Vec::new();
    let mut slow = Vec::new();
    let mut unexplained = Vec::new();
    let mut projected: Vec<[f64; 2]> = source_points.to_vec();
    if let Some(f) = flow {
        for ray in &f.rays {
            for s in ray.nodes() {
                projected.push([s.x[0], s.x[1]]);
            }
        }
    }
    for (i, x) in nodes.iter().enumerate() {
        let tot: Vec<f64> = grids.iter().map(|g| g.values[i].total.norm()).collect();
        let bnd: Vec<f64> = grids.iter().map(|g| g.values[i].boundary.norm()).collect();
        let e = decay_exponent(&hs, &tot);
        let all_zero = tot.iter().all(|v| *v == 0.0);
        let is_slow = !all_zero && e < 3.0;
        exponents.push(e);
        boundary_exponents.push(decay_exponent(&hs, &bnd));
        slow.push(is_slow);
        if is_slow {
            let d = projected.iter().map(|p| (p[0] - x[0]).hypot(p[1] - x[1])).fold(f64::INFINITY, f64::min);
            if d > tolerance {
                unexplained.push(i);
            }
        }
    }
    let pass = unexplained.is_empty();
    Ok(WavefrontReport { exponents, boundary_exponents, slow, unexplained, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{make_builtin, BuiltinParams, HamiltonianKind, IndexProfile};
    use crate::reference::{helmholtz_u0, resolvent_at, HelmholtzReference, RadialProfile};

    fn free(e: f64) -> HamiltonianSpec {
        make_builtin(HamiltonianKind::Free, &BuiltinParams { energy: Some(e), ..Default::default() }).unwrap()
    }

    fn plateau() -> RadialProfile {
        RadialProfile::Plateau { inner: 1.5, outer: 4.0 }
    }

    fn baseline(h: f64) -> GreenAssembler {
        GreenAssembler::new(
            free(1.0),
            SourceSpec::radial([0.0, 0.0], plateau(), h),
            CutoffSpec::new(4.0, 0.1, 4.0).unwrap(),
            h,
            AssemblerOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn step_and_cutoffs() {
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(1.2), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        for s in [0.1, 0.3, 0.77] {
            assert!((smooth_step(s) + smooth_step(1.0 - s) - 1.0).abs() < 1e-14);
            let d = (smooth_step(s + 1e-6) - smooth_step(s - 1e-6)) / 2e-6;
            assert!((d - smooth_step_derivative(s)).abs() < 1e-6);
        }
        let c = CutoffSpec::new(4.0, 0.1, 4.0).unwrap();
        assert_eq!(c.chi_tilde0(1.9), 1.0);
        assert_eq!(c.chi_tilde0(-4.1), 0.0);
        assert_eq!(c.chi0(0.05), 1.0);
        assert_eq!(c.chi0(0.1), 0.0);
        assert_eq!(c.chi_horizon(2.0), 1.0);
        assert_eq!(c.chi_horizon(4.0), 0.0);
        assert!(CutoffSpec::new(4.0, 1.5, 4.0).is_err());
    }

    #[test]
    fn time_kernel_matches_quadrature() {
        let h = 0.05;
        let k = TimeKernel::new(0.05, 0.1, h, 10.0);
        for lambda in [-3.0, -0.2, 0.0, 0.004, 0.11, 0.9, 2.5, 40.0] {
            let (gx, gw) = crate::oscint::rules::gauss_legendre(40);
            let mut s = Complex64::new(0.0, 0.0);
            let panels = 400;
            let ph = 0.1 / panels as f64;
            for p in 0..panels {
                let mid = ph * (p as f64 + 0.5);
                for (x, w) in gx.iter().zip(&gw) {
                    let t = mid + 0.5 * ph * x;
                    s += 0.5 * ph * w * window(t, 0.05, 0.1) * Complex64::from_polar(1.0, -t * lambda / h);
                }
            }
            assert!((k.at(lambda) - s).norm() < 1e-11, "λ = {lambda}: {} vs {s}", k.at(lambda));
        }
    }

    #[test]
    fn tau_profile_is_exact_for_circles() {
        let a = baseline(0.1);
        let tau = a.tau.as_ref().unwrap();
        assert!(tau.is_constant());
        assert!((tau.eval(0.3) - 1.0).abs() < 1e-12);
        let lens = make_builtin(
            HamiltonianKind::HelmholtzIndex,
            &BuiltinParams {
                index: Some(IndexProfile::GaussianLens { background: 0.8, amplitude: 0.4, width: 1.0 }),
                energy: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let src = SourceLagrangian::VerticalFiber { x0: [0.3, 0.0] };
        let l = intersect_level(&src, &lens, 1.0, None, 64).unwrap();
        let tau = TauProfile::from_level(&l).unwrap();
        let p = l.point(1.2345).unwrap();
        assert!((tau.eval(1.2345) - p.tau).abs() < 1e-12);
    }

    #[test]
    fn cutoff_must_be_smooth_at_the_origin() {
        let r = GreenAssembler::new(
            free(1.0),
            SourceSpec::radial([0.0, 0.0], plateau(), 0.1),
            CutoffSpec::new(1.5, 0.1, 4.0).unwrap(),
            0.1,
            AssemblerOptions::default(),
        );
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn elliptic_case_is_boundary_only() {
        let h = 0.1;
        let g = RadialProfile::Gaussian { width: 1.0 };
        let a = GreenAssembler::new(
            free(-1.0),
            SourceSpec::radial([0.0, 0.0], g.clone(), h),
            CutoffSpec::new(4.0, 0.1, 4.0).unwrap(),
            h,
            AssemblerOptions { quad: OscOptions { tol: 1e-11, ..Default::default() }, ..Default::default() },
        )
        .unwrap();
        assert!(a.is_elliptic());
        let x = [0.4, 0.2];
        let v = a.assemble(&x).unwrap();
        assert_eq!(v.transient, Complex64::new(0.0, 0.0));
        assert_eq!(v.total, v.boundary);
        let exact = resolvent_at(&g, -1.0, h, 0.0, &x).unwrap();
        assert!((v.total - exact).norm() < 1e-6 * exact.norm(), "{} vs {exact}", v.total);
    }

    #[test]
    fn zero_source_gives_zero() {
        let h = 0.1;
        let a = GreenAssembler::new(
            free(1.0),
            SourceSpec::zero([0.0, 0.0]),
            CutoffSpec::new(4.0, 0.1, 4.0).unwrap(),
            h,
            AssemblerOptions::default(),
        )
        .unwrap();
        let v = a.assemble(&[1.0, 0.5]).unwrap();
        assert_eq!(v.total, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn wave_part_matches_u0_asymptotics() {
        let h = 0.05;
        let a = baseline(h);
        let r = HelmholtzReference::new(1.0, h, plateau()).unwrap();
        let x = [1.0, 0.0];
        let w = a.wave_part(&x).unwrap();
        // interior stationary point of the half-circle integral in u0
        let rho = 1.0 / h;
        let outgoing = Complex64::new(0.0, PI * plateau().value(1.0)) / (2.0 * PI * h).powi(2)
            * (2.0 * PI / rho).sqrt()
            * Complex64::from_polar(1.0, rho - 0.25 * PI);
        assert!((w - outgoing).norm() < 0.01 * outgoing.norm(), "{w} vs {outgoing}");
        let u0 = helmholtz_u0(&r, &x).unwrap();
        assert!((w - u0).norm() < 0.25 * u0.norm());
        let arr = a.arrivals(&x).unwrap();
        assert_eq!(arr.len(), 1);
        let mut shifted = arr[0].clone();
        shifted.maslov = 1;
        assert_eq!(a.wave_term(&shifted).unwrap(), a.wave_term(&arr[0]).unwrap() * Complex64::new(0.0, -1.0));
    }

    #[test]
    fn slow_path_agrees_with_transient_plus_wave() {
        let h = 0.05;
        let a = baseline(h);
        for x in [[1.0, 0.0], [0.3, -1.1]] {
            let fast = a.transient_part(&x).unwrap() + a.wave_part(&x).unwrap();
            let slow = a.slow_part(&x).unwrap();
            assert!((fast - slow).norm() < 3.0 * h * slow.norm(), "{fast} vs {slow}");
        }
    }

    #[test]
    fn additivity_on_a_grid() {
        let a = baseline(0.1);
        let g = a.field(&[[1.0, 0.0], [0.0, 1.5], [-0.8, 0.6]]).unwrap();
        for v in &g.values {
            assert_eq!(v.total, v.boundary + v.transient + v.wave);
        }
    }
}
