//! Closed-form and brute-force oracles: the planar constant-coefficient
//! Helmholtz decomposition u = u0 + u1, the ε-regularized resolvent and the
//! solution of the model operator hD_{x_2}.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::green::smooth_step;
use crate::oscint::rules::{adaptive_gk, gl12};
use crate::oscint::{bessel_j0, hankel0_transform, osc_quad, star_prefactor, Axis, HankelOptions, OscIntegrand, OscOptions};

/// Radial profile g of a rotation-invariant source ĝ(|ξ|).
#[derive(Clone)]
pub enum RadialProfile {
    /// 1 on [0, inner], smooth decay to 0 at `outer`.
    Plateau { inner: f64, outer: f64 },
    /// r^power · e^{1 − r²}.
    PolyGaussian { power: i32 },
    /// e^{−r²/w²}.
    Gaussian { width: f64 },
    Custom { g: Arc<dyn Fn(f64) -> f64 + Send + Sync>, support: f64 },
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Plateau { inner, outer } => write!(f, "Plateau {{ inner: {inner}, outer: {outer} }}"),
            Self::PolyGaussian { power } => write!(f, "PolyGaussian {{ power: {power} }}"),
            Self::Gaussian { width } => write!(f, "Gaussian {{ width: {width} }}"),
            Self::Custom { support, .. } => write!(f, "Custom {{ support: {support} }}"),
        }
    }
}

impl RadialProfile {
    pub fn value(&self, r: f64) -> f64 {
        match self {
            Self::Plateau { inner, outer } => 1.0 - smooth_step((r - inner) / (outer - inner)),
            Self::PolyGaussian { power } => r.powi(*power) * (1.0 - r * r).exp(),
            Self::Gaussian { width } => (-(r * r) / (width * width)).exp(),
            Self::Custom { g, .. } => g(r),
        }
    }

    /// Radius beyond which g is negligible (exactly zero for plateaus).
    pub fn support(&self) -> f64 {
        match self {
            Self::Plateau { outer, .. } => *outer,
            Self::PolyGaussian { power } => 8.0 + 0.25 * (*power).max(0) as f64,
            Self::Gaussian { width } => 7.0 * width,
            Self::Custom { support, .. } => *support,
        }
    }

    /// Kinks of the quadrature integrand worth splitting at.
    pub fn breaks(&self) -> Vec<f64> {
        match self {
            Self::Plateau { inner, outer } => vec![*inner, *outer],
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Plateau { inner, outer } if !(*inner >= 0.0 && outer > inner) => {
                Err(Error::InvalidParameter(format!("plateau needs 0 ≤ inner < outer, got {inner}, {outer}")))
            }
            Self::Gaussian { width } if !(*width > 0.0) => {
                Err(Error::InvalidParameter(format!("Gaussian width must be positive, got {width}")))
            }
            Self::Custom { support, .. } if !(*support > 0.0) => {
                Err(Error::InvalidParameter("custom profile needs a positive support radius".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Data of the planar problem (|ξ|² − k²)u = f with ĝ = g(|ξ|).
#[derive(Debug, Clone)]
pub struct HelmholtzReference {
    pub k: f64,
    pub h: f64,
    pub g: RadialProfile,
}

impl HelmholtzReference {
    pub fn new(k: f64, h: f64, g: RadialProfile) -> Result<Self> {
        if !(k > 0.0) || !(h > 0.0) {
            return Err(Error::InvalidParameter(format!("need k > 0 and h > 0, got k = {k}, h = {h}")));
        }
        g.validate()?;
        Ok(Self { k, h, g })
    }

    pub fn energy(&self) -> f64 {
        self.k * self.k
    }

    /// The source f(x) = (2πh)^{-2} ∫ e^{ixξ/h} g(|ξ|) dξ.
    pub fn source(&self, x: &[f64]) -> Result<f64> {
        let rho = x[0].hypot(x[1]) / self.h;
        let opts = HankelOptions { r_max: self.g.support(), ..Default::default() };
        Ok(2.0 * PI / (2.0 * PI * self.h).powi(2) * hankel0_transform(|r| self.g.value(r), rho, &opts)?)
    }
}

/// ∫_{−π/2}^{π/2} e^{iρ cos θ} dθ by quadrature.
pub fn half_circle_integral(rho: f64, tol: f64) -> Result<Complex64> {
    if rho == 0.0 {
        return Ok(Complex64::new(PI, 0.0));
    }
    let f = move |th: &[f64]| (rho * th[0].cos(), Complex64::new(1.0, 0.0));
    let i = OscIntegrand { integrand: &f, axes: vec![Axis::interval(-0.5 * PI, 0.5 * PI)], h: 1.0 };
    Ok(osc_quad(&i, &OscOptions { tol, ..Default::default() })?.value)
}

/// u0(x) = iπ g(k)/(2πh)² ∫_{−π/2}^{π/2} e^{i|x|k cos θ/h} dθ.
pub fn helmholtz_u0(r: &HelmholtzReference, x: &[f64]) -> Result<Complex64> {
    let gk = r.g.value(r.k);
    if gk == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let rho = x[0].hypot(x[1]) * r.k / r.h;
    let i = half_circle_integral(rho, 1e-13)?;
    Ok(Complex64::new(0.0, PI * gk) / (2.0 * PI * r.h).powi(2) * i)
}

/// u1(x) = 2π/(2πh)² · ∫ g̃(r) J0(|x|r/h) r dr with g̃ = g/(r(r + k)).
pub fn helmholtz_u1(r: &HelmholtzReference, x: &[f64]) -> Result<Complex64> {
    let rho = x[0].hypot(x[1]) / r.h;
    let k = r.k;
    let gt = |s: f64| {
        let v = r.g.value(s) / (s * (s + k));
        if v.is_finite() { v } else { f64::NAN }
    };
    let opts = HankelOptions { r_max: r.g.support(), ..Default::default() };
    let v = hankel0_transform(gt, rho, &opts)?;
    if !v.is_finite() {
        return Err(Error::InvalidParameter("g/(r(r + k)) is not integrable".into()));
    }
    Ok(Complex64::new(2.0 * PI / (2.0 * PI * r.h).powi(2) * v, 0.0))
}

/// (2πh)^{-2} ∫ e^{ixξ/h} g(|ξ|)/(|ξ|² − E − iε) dξ, angular integral done
/// in closed form (2πJ0), radial integral adaptive.
pub fn resolvent_at(g: &RadialProfile, energy: f64, h: f64, eps: f64, x: &[f64]) -> Result<Complex64> {
    if eps < 0.0 {
        return Err(Error::InvalidParameter(format!("ε must be ≥ 0, got {eps}")));
    }
    if energy >= 0.0 && eps == 0.0 {
        return Err(Error::InvalidParameter("ε = 0 is only allowed below the spectrum (E < 0)".into()));
    }
    let rho = x[0].hypot(x[1]) / h;
    let r_max = g.support();
    let mut breaks = g.breaks();
    if energy > 0.0 {
        let k = energy.sqrt();
        breaks.push(k);
        for m in [1.0, 3.0, 10.0, 30.0, 100.0] {
            breaks.push(k - m * eps / (2.0 * k));
            breaks.push(k + m * eps / (2.0 * k));
        }
    }
    if rho > 0.0 {
        let step = PI / rho;
        let mut b = step;
        while b < r_max && breaks.len() < 40_000 {
            breaks.push(b);
            b += step;
        }
    }
    breaks.retain(|b| *b > 0.0 && *b < r_max);
    let den = move |r: f64| Complex64::new(r * r - energy, -eps);
    let res = adaptive_gk(
        |r| g.value(r) * bessel_j0(rho * r) * r / den(r),
        0.0,
        r_max,
        &breaks,
        1e-300,
        1e-12,
        20_000_000,
    )?;
    Ok(2.0 * PI / (2.0 * PI * h).powi(2) * res.value)
}

/// Scaled ε ladder for [`resolvent_direct`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsLadder {
    /// Base ε times |x|/(2kh).
    pub beta: f64,
    pub ratios: [f64; 4],
    pub min: f64,
    pub max: f64,
    /// Largest accepted spread between the two quadratic fits, relative to the value.
    pub max_rel_spread: f64,
}

impl Default for EpsLadder {
    fn default() -> Self {
        Self { beta: 0.3, ratios: [1.0, 0.3, 0.1, 0.03], min: 1e-4, max: 0.1, max_rel_spread: 1e-2 }
    }
}

/// The extrapolated resolvent with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolventValue {
    pub value: Complex64,
    pub error: f64,
    pub ladder: Vec<(f64, Complex64)>,
}

/// ε → 0 limit of [`resolvent_at`] by quadratic extrapolation over a ladder
/// scaled with the decay length 2kh/|x| of the regularized outgoing wave.
pub fn resolvent_direct(r: &HelmholtzReference, x: &[f64], ladder: &EpsLadder) -> Result<ResolventValue> {
    let a = x[0].hypot(x[1]) / (2.0 * r.k * r.h);
    let top = ladder.ratios.iter().copied().fold(0.0, f64::max);
    let bottom = ladder.ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let base = if a > 0.0 { ladder.beta / a } else { ladder.max };
    let base = base.min(ladder.max / top).max(ladder.min / bottom);
    let mut pts = Vec::new();
    for q in ladder.ratios {
        let e = base * q;
        pts.push((e, resolvent_at(&r.g, r.energy(), r.h, e, x)?));
    }
    extrapolate(pts, ladder.max_rel_spread)
}

fn quadratic_at_zero(pts: &[(f64, Complex64)]) -> Complex64 {
    let mut v = Complex64::new(0.0, 0.0);
    for (i, (ei, vi)) in pts.iter().enumerate() {
        let mut w = 1.0;
        for (j, (ej, _)) in pts.iter().enumerate() {
            if i != j {
                w *= -ej / (ei - ej);
            }
        }
        v += vi * w;
    }
    v
}

/// Quadratic extrapolation to ε = 0 through the three smallest ε. With a
/// fourth point the error is the spread to the fit through the three
/// largest; with three it is the spread to the linear fit through the two smallest.
pub fn extrapolate(mut pts: Vec<(f64, Complex64)>, max_rel_spread: f64) -> Result<ResolventValue> {
    if pts.len() < 3 {
        return Err(Error::InvalidParameter("extrapolation needs at least three ε values".into()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let value = quadratic_at_zero(&pts[..3]);
    let other = if pts.len() >= 4 {
        quadratic_at_zero(&pts[pts.len() - 3..])
    } else {
        let (e1, v1) = pts[0];
        let (e2, v2) = pts[1];
        v1 - (v2 - v1) * (e1 / (e2 - e1))
    };
    let error = (value - other).norm();
    if !(error <= max_rel_spread * value.norm()) {
        return Err(Error::Extrapolation(format!(
            "ε ladder {:?} gives {value} vs {other}",
            pts.iter().map(|p| p.0).collect::<Vec<_>>()
        )));
    }
    Ok(ResolventValue { value, error, ladder: pts })
}

/// Compactly supported momentum amplitude for the model operator.
#[derive(Clone)]
pub struct ModelAmplitude {
    pub f: Arc<dyn Fn(&[f64; 2]) -> Complex64 + Send + Sync>,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl fmt::Debug for ModelAmplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelAmplitude {{ lo: {:?}, hi: {:?} }}", self.lo, self.hi)
    }
}

/// exp(1 − 1/(1 − s²)) on |s| < 1.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 { 0.0 } else { (1.0 - 1.0 / (1.0 - s * s)).exp() }
}

impl ModelAmplitude {
    /// Product bump centred at `center` with half-widths `half`.
    pub fn bump(center: [f64; 2], half: [f64; 2]) -> Self {
        Self {
            f: Arc::new(move |xi: &[f64; 2]| {
                Complex64::new(bump((xi[0] - center[0]) / half[0]) * bump((xi[1] - center[1]) / half[1]), 0.0)
            }),
            lo: [center[0] - half[0], center[1] - half[1]],
            hi: [center[0] + half[0], center[1] + half[1]],
        }
    }

    pub fn zero() -> Self {
        Self { f: Arc::new(|_| Complex64::new(0.0, 0.0)), lo: [0.0, 0.0], hi: [1.0, 1.0] }
    }
}

fn gl_panels(lo: f64, hi: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gl12();
    let ph = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(12 * panels);
    let mut weights = Vec::with_capacity(12 * panels);
    for k in 0..panels {
        let c = lo + ph * (k as f64 + 0.5);
        for (x, w) in gx.iter().zip(gw) {
            nodes.push(c + 0.5 * ph * x);
            weights.push(0.5 * ph * w);
        }
    }
    (nodes, weights)
}

/// χ_T(t) = 1 − step((t − T/2)/(T/2)).
pub fn chi_horizon(t: f64, horizon: f64) -> f64 {
    1.0 - smooth_step((t - 0.5 * horizon) / (0.5 * horizon))
}

/// Tensor quadrature of u = (i/h) ∫_0^T χ_T(t) dt ∫* e^{i(x_1ξ_1 + (x_2 − t)ξ_2)/h} A(ξ) dξ
/// with the t integral tabulated per ξ_2 node.
pub struct ModelQuadrature {
    h: f64,
    xi1: (Vec<f64>, Vec<f64>),
    xi2: (Vec<f64>, Vec<f64>),
    amp: Vec<Complex64>,
    /// ∫_0^T χ_T(t) e^{−itξ_2/h} dt per ξ_2 node.
    time: Vec<Complex64>,
}

impl ModelQuadrature {
    /// `reach` bounds |x| over the evaluation points; `resolution` scales the node counts.
    pub fn new(a: &ModelAmplitude, horizon: f64, h: f64, reach: f64, resolution: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(h > 0.0) {
            return Err(Error::InvalidParameter("model quadrature needs T > 0 and h > 0".into()));
        }
        let osc = |width: f64, span: f64| width * span / (2.0 * PI * h);
        let p1 = ((2.0 * osc(a.hi[0] - a.lo[0], reach) + 8.0) * resolution).ceil() as usize;
        let p2 = ((2.0 * osc(a.hi[1] - a.lo[1], reach + horizon) + 8.0) * resolution).ceil() as usize;
        let xi1 = gl_panels(a.lo[0], a.hi[0], p1);
        let xi2 = gl_panels(a.lo[1], a.hi[1], p2);
        let xmax = a.lo[1].abs().max(a.hi[1].abs());
        let pt = ((2.0 * osc(xmax, 0.5 * horizon) + 8.0) * resolution).ceil() as usize;
        let (t1, w1) = gl_panels(0.0, 0.5 * horizon, pt);
        let (t2, w2) = gl_panels(0.5 * horizon, horizon, pt.max(((32.0 * resolution).ceil()) as usize));
        let time = xi2
            .0
            .iter()
            .map(|&x2| {
                let mut s = Complex64::new(0.0, 0.0);
                for (t, w) in t1.iter().zip(&w1).chain(t2.iter().zip(&w2)) {
                    s += w * chi_horizon(*t, horizon) * Complex64::from_polar(1.0, -t * x2 / h);
                }
                s
            })
            .collect();
        let mut amp = Vec::with_capacity(xi1.0.len() * xi2.0.len());
        for &a1 in &xi1.0 {
            for &a2 in &xi2.0 {
                amp.push((a.f)(&[a1, a2]));
            }
        }
        Ok(Self { h, xi1, xi2, amp, time })
    }

    fn sum(&self, x: &[f64], kernel: impl Fn(usize, f64) -> Complex64) -> Complex64 {
        let h = self.h;
        let n2 = self.xi2.0.len();
        let e2: Vec<Complex64> =
            self.xi2.0.iter().enumerate().map(|(j, &b)| self.xi2.1[j] * Complex64::from_polar(1.0, x[1] * b / h) * kernel(j, b)).collect();
        let mut total = Complex64::new(0.0, 0.0);
        for (i, (&a1, &w1)) in self.xi1.0.iter().zip(&self.xi1.1).enumerate() {
            let row = &self.amp[i * n2..(i + 1) * n2];
            let inner: Complex64 = row.iter().zip(&e2).map(|(a, e)| a * e).sum();
            total += w1 * Complex64::from_polar(1.0, x[0] * a1 / h) * inner;
        }
        star_prefactor(2, h) * total
    }

    /// u(x).
    pub fn solution(&self, x: &[f64]) -> Complex64 {
        let ih = Complex64::new(0.0, 1.0 / self.h);
        self.sum(x, |j, _| ih * self.time[j])
    }

    /// f(x) = ∫* e^{ixξ/h} A dξ.
    pub fn source(&self, x: &[f64]) -> Complex64 {
        self.sum(x, |_, _| Complex64::new(1.0, 0.0))
    }

    /// hD_{x_2}u − f, with hD_{x_2} applied under the integral as ξ_2.
    pub fn residual(&self, x: &[f64]) -> Complex64 {
        let ih = Complex64::new(0.0, 1.0 / self.h);
        self.sum(x, |j, b| ih * b * self.time[j] - 1.0)
    }
}

/// u(x) for the model operator hD_{x_2} with source ∫* e^{ixξ/h} A dξ.
pub fn model_dxn_solution(a: &ModelAmplitude, horizon: f64, x: &[f64], h: f64) -> Result<Complex64> {
    let q = ModelQuadrature::new(a, horizon, h, x[0].hypot(x[1]).max(1.0), 1.0)?;
    Ok(q.solution(x))
}

/// max |hD_{x_2}u − f| over `points`.
pub fn model_dxn_residual(a: &ModelAmplitude, horizon: f64, points: &[[f64; 2]], h: f64) -> Result<f64> {
    let reach = points.iter().map(|p| p[0].hypot(p[1])).fold(1.0, f64::max);
    let q = ModelQuadrature::new(a, horizon, h, reach, 1.0)?;
    Ok(points.iter().map(|p| q.residual(p).norm()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscint::{stationary_phase, CriticalPoint, Endpoint};
    use nalgebra::DMatrix;

    fn plateau_ref(h: f64) -> HelmholtzReference {
        HelmholtzReference::new(1.0, h, RadialProfile::Plateau { inner: 1.5, outer: 4.0 }).unwrap()
    }

    #[test]
    fn u0_at_origin_and_far_field() {
        let r = plateau_ref(0.1);
        let v = helmholtz_u0(&r, &[0.0, 0.0]).unwrap();
        let exact = Complex64::new(0.0, PI * PI) / (2.0 * PI * 0.1).powi(2);
        assert!((v - exact).norm() < 1e-12 * exact.norm());
        // |x|k/h = 1000
        let h = 1e-3;
        let r = HelmholtzReference::new(1.0, h, RadialProfile::Gaussian { width: 2.0 }).unwrap();
        let v = helmholtz_u0(&r, &[1.0, 0.0]).unwrap();
        let gk = (-0.25f64).exp();
        let one = Complex64::new(1.0, 0.0);
        let centre = CriticalPoint { value: 1.0, hessian: DMatrix::from_element(1, 1, -1.0), amplitude: one };
        let ends = [
            Endpoint { value: 0.0, slope: 1.0, amplitude: one, upper: false },
            Endpoint { value: 0.0, slope: -1.0, amplitude: one, upper: true },
        ];
        let sp = Complex64::new(0.0, PI * gk) / (2.0 * PI * h).powi(2) * stationary_phase(&[centre], &ends, h).unwrap();
        assert!(((v - sp) / sp).norm() < 1e-2);
        let z = HelmholtzReference::new(1.0, 0.1, RadialProfile::PolyGaussian { power: 6 }).unwrap();
        let zero = HelmholtzReference {
            g: RadialProfile::Custom { g: Arc::new(|r: f64| (r - 1.0) * (-r * r).exp()), support: 8.0 },
            ..z
        };
        assert_eq!(helmholtz_u0(&zero, &[1.0, 0.0]).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn half_circle_matches_bessel() {
        // Re ∫_{−π/2}^{π/2} e^{iρ cos θ} dθ = π J0(ρ)
        for rho in [1.0, 5.0, 20.0] {
            let v = half_circle_integral(rho, 1e-13).unwrap();
            assert!((v.re - PI * bessel_j0(rho)).abs() < 1e-10);
        }
    }

    #[test]
    fn u1_at_origin_and_by_double_integral() {
        let r = HelmholtzReference::new(1.0, 0.1, RadialProfile::PolyGaussian { power: 6 }).unwrap();
        let v0 = helmholtz_u1(&r, &[0.0, 0.0]).unwrap();
        let m = adaptive_gk(|s| Complex64::new(r.g.value(s) / (s + 1.0), 0.0), 0.0, 9.0, &[], 1e-300, 1e-13, 100_000)
            .unwrap()
            .value
            .re;
        assert!((v0.re - 2.0 * PI / (2.0 * PI * 0.1f64).powi(2) * m).abs() < 1e-9 * v0.norm());

        let r = HelmholtzReference::new(1.0, 0.1, RadialProfile::Plateau { inner: 1.5, outer: 4.0 }).unwrap();
        let x = [0.3, 0.4];
        let direct = {
            let f = |q: &[f64]| {
                let (rr, th) = (q[0], q[1]);
                let phase = rr * (x[0] * th.cos() + x[1] * th.sin());
                (phase, Complex64::new(r.g.value(rr) / (rr + r.k), 0.0))
            };
            let i = OscIntegrand {
                integrand: &f,
                axes: vec![Axis::Interval { lo: 0.0, hi: 4.0, breaks: vec![1.5] }, Axis::periodic(0.0, 2.0 * PI)],
                h: 0.1,
            };
            osc_quad(&i, &OscOptions { tol: 1e-10, ..Default::default() }).unwrap().value / (2.0 * PI * 0.1f64).powi(2)
        };
        let u1 = helmholtz_u1(&r, &x).unwrap();
        assert!((u1 - direct).norm() < 1e-4 * u1.norm(), "{u1} vs {direct}");
    }

    #[test]
    fn elliptic_resolvent_has_no_regularization() {
        let g = RadialProfile::Gaussian { width: 1.0 };
        let a = resolvent_at(&g, -1.0, 0.1, 0.0, &[0.5, 0.0]).unwrap();
        let b = resolvent_at(&g, -1.0, 0.1, 1e-9, &[0.5, 0.0]).unwrap();
        assert!((a - b).norm() < 1e-6 * a.norm());
        assert!(resolvent_at(&g, 1.0, 0.1, 0.0, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn ladder_is_self_consistent() {
        let r = plateau_ref(0.1);
        let x = [1.0, 0.0];
        let v = resolvent_direct(&r, &x, &EpsLadder::default()).unwrap();
        // fixed ladder {1e-1, 3e-2, 1e-2}
        let pts = [0.1, 0.03, 0.01].iter().map(|&e| (e, resolvent_at(&r.g, 1.0, 0.1, e, &x).unwrap())).collect();
        let w = extrapolate(pts, 1.0).unwrap();
        assert!((v.value - w.value).norm() < 1e-3 * v.value.norm(), "{} vs {}", v.value, w.value);
        assert!(v.error < 1e-3 * v.value.norm());
    }

    #[test]
    fn decomposition_identity() {
        let r = plateau_ref(0.1);
        for x in [[1.0, 0.0], [0.0, 1.5], [1.2, -1.2]] {
            let direct = resolvent_direct(&r, &x, &EpsLadder::default()).unwrap();
            let sum = helmholtz_u0(&r, &x).unwrap() + helmholtz_u1(&r, &x).unwrap();
            let rel = (direct.value - sum).norm() / sum.norm();
            assert!(rel < 1e-3, "x = {x:?}: {rel:e}");
        }
    }

    #[test]
    fn model_solution_source_and_zero() {
        let a = ModelAmplitude::bump([1.0, 0.0], [0.5, 0.5]);
        let q = ModelQuadrature::new(&a, 4.0, 0.1, 2.0, 1.0).unwrap();
        let fine = ModelQuadrature::new(&a, 4.0, 0.1, 2.0, 2.0).unwrap();
        for x in [[0.0, 0.0], [0.2, 0.7], [-0.3, 1.5]] {
            assert!((q.solution(&x) - fine.solution(&x)).norm() < 1e-10 * (1.0 + fine.solution(&x).norm()));
        }
        // concentrated on the half-line x_1 = 0, x_2 ≥ 0
        let on = q.solution(&[0.0, 1.0]).norm();
        assert!(q.solution(&[0.0, -1.0]).norm() < 0.05 * on);
        assert!(q.solution(&[1.0, 1.0]).norm() < 1e-3 * on);
        let z = ModelQuadrature::new(&ModelAmplitude::zero(), 4.0, 0.1, 2.0, 1.0).unwrap();
        assert_eq!(z.solution(&[0.1, 0.2]), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn model_residual_decays() {
        let a = ModelAmplitude::bump([1.0, 0.0], [0.5, 0.5]);
        let pts: Vec<[f64; 2]> =
            (0..5).flat_map(|i| (0..5).map(move |j| [-0.5 + 0.25 * i as f64, 0.25 * j as f64])).collect();
        let rs: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&h| model_dxn_residual(&a, 4.0, &pts, h).unwrap()).collect();
        eprintln!("model residuals {rs:?}");
        assert!(rs[2] < rs[0] * 0.125 * 0.125 * 0.125 || rs[2] < 1e-13, "{rs:?}");
    }
}
