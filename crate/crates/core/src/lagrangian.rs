//! Source Lagrangians Λ, the level set L = Σ_E ∩ Λ, the flow-out Λ+ and the
//! numerical checks of the geometric hypotheses.
//!
//! Charts are planar: the source parameter ψ is one-dimensional, so the
//! flow-out is parametrized by (t, ψ) in dimension 2.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonians::{dot, HamiltonianSpec};
use crate::rayflow::{integrate_ray, ConjugateEvent, Ray, RayOptions, RayState, Tangent};

/// Generating function S(ξ) of a tilted graph Λ = {(−∇S(ξ), ξ)}.
pub trait GeneratingPhase: Send + Sync {
    fn value(&self, xi: &[f64]) -> f64;
    fn gradient(&self, xi: &[f64]) -> [f64; 2];
    fn hessian(&self, xi: &[f64]) -> [[f64; 2]; 2];
}

/// S(ξ) = ½ ξ·Bξ + b·ξ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticPhase {
    pub matrix: [[f64; 2]; 2],
    pub linear: [f64; 2],
}

impl QuadraticPhase {
    pub fn zero() -> Self {
        Self { matrix: [[0.0; 2]; 2], linear: [0.0; 2] }
    }
}

impl GeneratingPhase for QuadraticPhase {
    fn value(&self, xi: &[f64]) -> f64 {
        let b = &self.matrix;
        0.5 * (xi[0] * (b[0][0] * xi[0] + b[0][1] * xi[1]) + xi[1] * (b[1][0] * xi[0] + b[1][1] * xi[1]))
            + self.linear[0] * xi[0]
            + self.linear[1] * xi[1]
    }
    fn gradient(&self, xi: &[f64]) -> [f64; 2] {
        let b = &self.matrix;
        [
            0.5 * (b[0][0] + b[0][0]) * xi[0] + 0.5 * (b[0][1] + b[1][0]) * xi[1] + self.linear[0],
            0.5 * (b[0][1] + b[1][0]) * xi[0] + 0.5 * (b[1][1] + b[1][1]) * xi[1] + self.linear[1],
        ]
    }
    fn hessian(&self, _xi: &[f64]) -> [[f64; 2]; 2] {
        let b = &self.matrix;
        let off = 0.5 * (b[0][1] + b[1][0]);
        [[b[0][0], off], [off, b[1][1]]]
    }
}

/// The source Lagrangian manifold with its (τ, ψ) chart.
#[derive(Clone)]
pub enum SourceLagrangian {
    /// T*_{x0}: x = x0, p = τ(cos ψ, sin ψ).
    VerticalFiber { x0: [f64; 2] },
    /// x = −∇S(ξ), p = ξ = τ(cos ψ, sin ψ).
    TiltedGraph { phase: Arc<dyn GeneratingPhase> },
    /// Conormal of {x_2 = 0}: x = (ψ, 0), p = (0, τ).
    ConormalHypersurface,
    /// Bessel cone: x = τω(ψ), p = ω(ψ).
    BesselCone,
}

impl fmt::Debug for SourceLagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VerticalFiber { x0 } => write!(f, "VerticalFiber {{ x0: {x0:?} }}"),
            Self::TiltedGraph { .. } => f.write_str("TiltedGraph"),
            Self::ConormalHypersurface => f.write_str("ConormalHypersurface"),
            Self::BesselCone => f.write_str("BesselCone"),
        }
    }
}

/// Phase-space point of a chart with its tangent vectors and eikonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub x: [f64; 2],
    pub p: [f64; 2],
    pub dx_dtau: [f64; 2],
    pub dp_dtau: [f64; 2],
    pub dx_dpsi: [f64; 2],
    pub dp_dpsi: [f64; 2],
    /// Eikonal S with dS = p·dx on Λ.
    pub action: f64,
}

/// Parameter box of a chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartDomain {
    pub tau: (f64, f64),
    pub psi: (f64, f64),
    pub periodic: bool,
}

impl SourceLagrangian {
    pub fn default_domain(&self) -> ChartDomain {
        match self {
            Self::VerticalFiber { .. } | Self::TiltedGraph { .. } => {
                ChartDomain { tau: (1e-6, 50.0), psi: (0.0, 2.0 * PI), periodic: true }
            }
            Self::ConormalHypersurface => ChartDomain { tau: (-50.0, 50.0), psi: (-1.0, 1.0), periodic: false },
            Self::BesselCone => ChartDomain { tau: (1e-6, 50.0), psi: (0.0, 2.0 * PI), periodic: true },
        }
    }

    pub fn point(&self, tau: f64, psi: f64) -> ChartPoint {
        let (s, c) = psi.sin_cos();
        let w = [c, s];
        let wp = [-s, c];
        match self {
            Self::VerticalFiber { x0 } => ChartPoint {
                x: *x0,
                p: [tau * c, tau * s],
                dx_dtau: [0.0; 2],
                dp_dtau: w,
                dx_dpsi: [0.0; 2],
                dp_dpsi: [tau * wp[0], tau * wp[1]],
                action: 0.0,
            },
            Self::TiltedGraph { phase } => {
                let xi = [tau * c, tau * s];
                let g = phase.gradient(&xi);
                let hs = phase.hessian(&xi);
                let mul = |v: [f64; 2]| [-(hs[0][0] * v[0] + hs[0][1] * v[1]), -(hs[1][0] * v[0] + hs[1][1] * v[1])];
                ChartPoint {
                    x: [-g[0], -g[1]],
                    p: xi,
                    dx_dtau: mul(w),
                    dp_dtau: w,
                    dx_dpsi: mul([tau * wp[0], tau * wp[1]]),
                    dp_dpsi: [tau * wp[0], tau * wp[1]],
                    action: phase.value(&xi) - dot(&xi, &g),
                }
            }
            Self::ConormalHypersurface => ChartPoint {
                x: [psi, 0.0],
                p: [0.0, tau],
                dx_dtau: [0.0; 2],
                dp_dtau: [0.0, 1.0],
                dx_dpsi: [1.0, 0.0],
                dp_dpsi: [0.0; 2],
                action: 0.0,
            },
            Self::BesselCone => ChartPoint {
                x: [tau * c, tau * s],
                p: w,
                dx_dtau: w,
                dp_dtau: [0.0; 2],
                dx_dpsi: [tau * wp[0], tau * wp[1]],
                dp_dpsi: wp,
                action: tau,
            },
        }
    }

    /// Chart coordinates (τ, ψ) of a phase-space point on Λ.
    pub fn locate(&self, x: &[f64], p: &[f64]) -> (f64, f64) {
        match self {
            Self::VerticalFiber { .. } | Self::TiltedGraph { .. } => {
                (p[0].hypot(p[1]), p[1].atan2(p[0]).rem_euclid(2.0 * PI))
            }
            Self::ConormalHypersurface => (p[1], x[0]),
            Self::BesselCone => (dot(x, p), p[1].atan2(p[0]).rem_euclid(2.0 * PI)),
        }
    }
}

/// Max |p·∂x/∂u − ∂S/∂u| over a chart grid, S differentiated numerically.
pub fn eikonal_pullback_defect(src: &SourceLagrangian, dom: &ChartDomain, n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let tau = dom.tau.0 + (dom.tau.1 - dom.tau.0).min(10.0) * (i as f64 + 0.5) / n as f64;
            let psi = dom.psi.0 + (dom.psi.1 - dom.psi.0) * (j as f64 + 0.5) / n as f64;
            let c = src.point(tau, psi);
            let d = 1e-5;
            let st = (src.point(tau + d, psi).action - src.point(tau - d, psi).action) / (2.0 * d);
            let sp = (src.point(tau, psi + d).action - src.point(tau, psi - d).action) / (2.0 * d);
            worst = worst.max((dot(&c.p, &c.dx_dtau) - st).abs());
            worst = worst.max((dot(&c.p, &c.dx_dpsi) - sp).abs());
        }
    }
    worst
}

/// One point of L with the ψ-tangent of L.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPoint {
    pub psi: f64,
    pub tau: f64,
    pub x: [f64; 2],
    pub p: [f64; 2],
    /// d/dψ of (x, p) along L, including the motion of τ(ψ).
    pub dx_dpsi: [f64; 2],
    pub dp_dpsi: [f64; 2],
    pub action: f64,
    /// dH0/dτ at the root.
    pub dh_dtau: f64,
    /// |∇_p H̃| where H̃(p) = H0(x_Λ(p), p); used for source densities.
    pub tau_prime: f64,
}

/// L = Σ_E ∩ Λ sampled on a uniform ψ grid.
#[derive(Debug, Clone)]
pub struct LevelIntersection {
    pub source: SourceLagrangian,
    pub hamiltonian: HamiltonianSpec,
    pub energy: f64,
    pub domain: ChartDomain,
    pub samples: Vec<LevelPoint>,
    /// min over samples of |dH0/dτ|.
    pub margin: f64,
}

const MIN_MARGIN: f64 = 1e-6;

fn h_minus_e(src: &SourceLagrangian, h: &HamiltonianSpec, e: f64, tau: f64, psi: f64) -> Result<(f64, f64, ChartPoint)> {
    let c = src.point(tau, psi);
    let v = h.h0(&c.x, &c.p)? - e;
    let mut gx = [0.0; 2];
    let mut gp = [0.0; 2];
    h.gradients_into(&c.x, &c.p, &mut gx, &mut gp)?;
    let dv = dot(&gx, &c.dx_dtau) + dot(&gp, &c.dp_dtau);
    Ok((v, dv, c))
}

fn solve_level(
    src: &SourceLagrangian,
    h: &HamiltonianSpec,
    e: f64,
    dom: &ChartDomain,
    psi: f64,
    tau_ref: Option<f64>,
) -> Result<LevelPoint> {
    let (lo, hi) = dom.tau;
    let scan = 96;
    let mut prev: Option<(f64, f64)> = None;
    let mut brackets = Vec::new();
    let mut smallest = f64::INFINITY;
    for j in 0..=scan {
        let tau = lo + (hi - lo) * (j as f64 / scan as f64).powi(2);
        let v = match h_minus_e(src, h, e, tau, psi) {
            Ok((v, _, _)) => v,
            Err(Error::ConicSingularity { .. }) => continue,
            Err(err) => return Err(err),
        };
        smallest = smallest.min(v.abs());
        if let Some((tp, vp)) = prev {
            if vp == 0.0 || vp.signum() != v.signum() {
                brackets.push((tp, tau));
            }
        }
        prev = Some((tau, v));
    }
    if brackets.is_empty() {
        return Err(Error::NoRoot(format!(
            "H0 − E has no sign change on τ ∈ [{lo}, {hi}] at ψ = {psi} (min |H0 − E| = {smallest:e})"
        )));
    }
    let target = tau_ref.unwrap_or(brackets[0].0);
    let &(mut a, mut b) = brackets
        .iter()
        .min_by(|x, y| (x.0 - target).abs().total_cmp(&(y.0 - target).abs()))
        .expect("nonempty");
    let mut va = h_minus_e(src, h, e, a, psi)?.0;
    let mut tau = 0.5 * (a + b);
    for _ in 0..200 {
        let (v, dv, _) = h_minus_e(src, h, e, tau, psi)?;
        if v == 0.0 {
            break;
        }
        if v.signum() == va.signum() {
            a = tau;
            va = v;
        } else {
            b = tau;
        }
        let newton = tau - v / dv;
        let next = if dv != 0.0 && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if (next - tau).abs() <= 1e-15 * tau.abs().max(1.0) {
            tau = next;
            break;
        }
        tau = next;
    }
    let edge = 1e-9 * (hi - lo);
    if tau - lo < edge || hi - tau < edge {
        return Err(Error::Compactness(format!("root τ = {tau} at the edge of the chart box at ψ = {psi}")));
    }
    let (v, dv, c) = h_minus_e(src, h, e, tau, psi)?;
    if v.abs() > 1e-10 * e.abs().max(1.0) {
        return Err(Error::Numeric(format!("level solve residual {v:e} at ψ = {psi}")));
    }
    if dv.abs() < MIN_MARGIN {
        return Err(Error::Transversality(format!("|dH0/dτ| = {:e} at ψ = {psi}", dv.abs())));
    }
    let mut gx = [0.0; 2];
    let mut gp = [0.0; 2];
    h.gradients_into(&c.x, &c.p, &mut gx, &mut gp)?;
    let dh_dpsi = dot(&gx, &c.dx_dpsi) + dot(&gp, &c.dp_dpsi);
    let tp = -dh_dpsi / dv;
    let dx = [c.dx_dtau[0] * tp + c.dx_dpsi[0], c.dx_dtau[1] * tp + c.dx_dpsi[1]];
    let dp = [c.dp_dtau[0] * tp + c.dp_dpsi[0], c.dp_dtau[1] * tp + c.dp_dpsi[1]];
    // gradient of H̃(p) = H0(x_Λ(p), p) in the momentum variables (graph charts)
    let tau_prime = match src {
        SourceLagrangian::TiltedGraph { phase } => {
            let hs = phase.hessian(&c.p);
            let g = [
                gp[0] - (hs[0][0] * gx[0] + hs[0][1] * gx[1]),
                gp[1] - (hs[1][0] * gx[0] + hs[1][1] * gx[1]),
            ];
            g[0].hypot(g[1])
        }
        _ => gp[0].hypot(gp[1]),
    };
    Ok(LevelPoint { psi, tau, x: c.x, p: c.p, dx_dpsi: dx, dp_dpsi: dp, action: c.action, dh_dtau: dv, tau_prime })
}

impl LevelIntersection {
    /// Solves for the point of L at an arbitrary ψ.
    pub fn point(&self, psi: f64) -> Result<LevelPoint> {
        let tau_ref = self.nearest_sample(psi).map(|s| s.tau);
        solve_level(&self.source, &self.hamiltonian, self.energy, &self.domain, psi, tau_ref)
    }

    fn nearest_sample(&self, psi: f64) -> Option<&LevelPoint> {
        let period = self.domain.psi.1 - self.domain.psi.0;
        self.samples.iter().min_by(|a, b| {
            let da = psi_distance(a.psi, psi, period, self.domain.periodic);
            let db = psi_distance(b.psi, psi, period, self.domain.periodic);
            da.total_cmp(&db)
        })
    }

    /// Starting points (x, p) of the rays of the flow-out.
    pub fn starts(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.samples.iter().map(|s| (s.x.to_vec(), s.p.to_vec())).collect()
    }

    /// Escape time of the rays leaving L past `radius`.
    pub fn escape_time(&self, radius: f64, horizon: f64, tol: f64) -> Result<f64> {
        crate::rayflow::escape_time(&self.hamiltonian, &self.starts(), radius, horizon, tol)
    }
}

pub(crate) fn psi_distance(a: f64, b: f64, period: f64, periodic: bool) -> f64 {
    let d = (a - b).abs();
    if periodic { d.min(period - d.rem_euclid(period)).min(d.rem_euclid(period)) } else { d }
}

/// Solves H0 = E along τ for each ψ of a uniform grid of `n_psi` nodes.
pub fn intersect_level(
    src: &SourceLagrangian,
    h: &HamiltonianSpec,
    energy: f64,
    domain: Option<ChartDomain>,
    n_psi: usize,
) -> Result<LevelIntersection> {
    if h.dim != 2 {
        return Err(Error::Unsupported(format!("source charts are planar; got dimension {}", h.dim)));
    }
    if n_psi < 2 {
        return Err(Error::InvalidParameter("need at least 2 ψ samples".into()));
    }
    let dom = domain.unwrap_or_else(|| src.default_domain());
    let psis: Vec<f64> = (0..n_psi)
        .map(|j| {
            if dom.periodic {
                dom.psi.0 + (dom.psi.1 - dom.psi.0) * j as f64 / n_psi as f64
            } else {
                dom.psi.0 + (dom.psi.1 - dom.psi.0) * j as f64 / (n_psi - 1) as f64
            }
        })
        .collect();
    let first = solve_level(src, h, energy, &dom, psis[0], None)?;
    let tau_ref = first.tau;
    let rest: Vec<Result<LevelPoint>> =
        psis[1..].par_iter().map(|&psi| solve_level(src, h, energy, &dom, psi, Some(tau_ref))).collect();
    let mut samples = vec![first];
    for r in rest {
        samples.push(r?);
    }
    let margin = samples.iter().map(|s| s.dh_dtau.abs()).fold(f64::INFINITY, f64::min);
    Ok(LevelIntersection { source: src.clone(), hamiltonian: h.clone(), energy, domain: dom, samples, margin })
}

/// Resolution and tolerance of a flow-out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowGrid {
    pub n_t: usize,
    pub tol: f64,
}

impl Default for FlowGrid {
    fn default() -> Self {
        Self { n_t: 64, tol: 1e-10 }
    }
}

/// Flow-out data at one (t, ψ).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPoint {
    pub t: f64,
    pub psi: f64,
    pub x: [f64; 2],
    pub p: [f64; 2],
    pub xdot: [f64; 2],
    pub pdot: [f64; 2],
    pub x_psi: [f64; 2],
    pub p_psi: [f64; 2],
    pub action: f64,
    pub theta: f64,
    /// det[Ẋ, ∂_ψX].
    pub jacobian: f64,
    pub maslov: u32,
}

/// Λ+ = ∪_{t ≥ 0} g^t(L), one ray per ψ sample of L.
#[derive(Debug, Clone)]
pub struct FlowOut {
    pub level: LevelIntersection,
    pub t_max: f64,
    pub grid: FlowGrid,
    pub rays: Vec<Ray>,
}

pub(crate) fn integrate_from(level: &LevelIntersection, lp: &LevelPoint, t_max: f64, tol: f64) -> Result<Ray> {
    let tangent = Tangent { dx: lp.dx_dpsi.to_vec(), dp: lp.dp_dpsi.to_vec() };
    integrate_ray(
        &level.hamiltonian,
        &lp.x,
        &lp.p,
        t_max,
        &[tangent],
        &RayOptions { tol, initial_action: lp.action, ..Default::default() },
    )
}

/// Integrates one ray per ψ sample of L up to `t_max`.
pub fn flow_out(level: &LevelIntersection, t_max: f64, grid: FlowGrid) -> Result<FlowOut> {
    if !(t_max > 0.0) {
        return Err(Error::InvalidParameter(format!("flow-out horizon must be positive, got {t_max}")));
    }
    let rays: Vec<Result<Ray>> =
        level.samples.par_iter().map(|lp| integrate_from(level, lp, t_max, grid.tol)).collect();
    let rays = rays.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(FlowOut { level: level.clone(), t_max, grid, rays })
}

impl FlowOut {
    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.level.hamiltonian
    }

    pub fn n_psi(&self) -> usize {
        self.rays.len()
    }

    pub fn psi(&self, j: usize) -> f64 {
        self.level.samples[j].psi
    }

    /// Uniform time nodes of the output grid.
    pub fn t_nodes(&self) -> Vec<f64> {
        let n = self.grid.n_t.max(2);
        (0..n).map(|i| self.t_max * i as f64 / (n - 1) as f64).collect()
    }

    pub fn conjugate_events(&self, j: usize) -> &[ConjugateEvent] {
        &self.rays[j].conjugate_events
    }

    /// Data of the stored ray `j` at time t.
    pub fn node(&self, j: usize, t: f64) -> Result<FlowPoint> {
        flow_point(&self.rays[j], self.psi(j), t)
    }

    /// Integrates a fresh ray at an arbitrary ψ in the chart box.
    pub fn ray_at(&self, psi: f64) -> Result<Ray> {
        let dom = &self.level.domain;
        let psi = if dom.periodic {
            dom.psi.0 + (psi - dom.psi.0).rem_euclid(dom.psi.1 - dom.psi.0)
        } else {
            if psi < dom.psi.0 || psi > dom.psi.1 {
                return Err(Error::InvalidParameter(format!("ψ = {psi} outside the flow-out grid")));
            }
            psi
        };
        let lp = self.level.point(psi)?;
        integrate_from(&self.level, &lp, self.t_max, self.grid.tol)
    }

    /// Flow-out data at (t, ψ).
    pub fn point(&self, t: f64, psi: f64) -> Result<FlowPoint> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(Error::InvalidParameter(format!("t = {t} outside [0, {}]", self.t_max)));
        }
        let ray = self.ray_at(psi)?;
        flow_point(&ray, psi, t)
    }
}

pub(crate) fn flow_point(ray: &Ray, psi: f64, t: f64) -> Result<FlowPoint> {
    let s: RayState = ray.state_at(t)?;
    let h = ray.hamiltonian();
    let xdot = h.grad_p(&s.x, &s.p)?;
    let gx = h.grad_x(&s.x, &s.p)?;
    let x_psi = [s.mx[(0, 0)], s.mx[(1, 0)]];
    let p_psi = [s.mp[(0, 0)], s.mp[(1, 0)]];
    Ok(FlowPoint {
        t,
        psi,
        x: [s.x[0], s.x[1]],
        p: [s.p[0], s.p[1]],
        xdot: [xdot[0], xdot[1]],
        pdot: [-gx[0], -gx[1]],
        x_psi,
        p_psi,
        action: s.action,
        theta: s.theta,
        jacobian: xdot[0] * x_psi[1] - xdot[1] * x_psi[0],
        maslov: s.maslov,
    })
}

/// Something that can report its tangent space at a phase-space point.
pub trait TangentChart {
    /// Columns span T_ρΛ in R^{2n}; rows are (x, p).
    fn tangent_space(&self, x: &[f64], p: &[f64]) -> Result<DMatrix<f64>>;
}

impl TangentChart for SourceLagrangian {
    fn tangent_space(&self, x: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        let (tau, psi) = self.locate(x, p);
        let c = self.point(tau, psi);
        let off = (c.x[0] - x[0]).hypot(c.x[1] - x[1]) + (c.p[0] - p[0]).hypot(c.p[1] - p[1]);
        if off > 1e-8 {
            return Err(Error::InvalidParameter("point is not on the source Lagrangian".into()));
        }
        let cols = [
            [c.dx_dtau[0], c.dx_dtau[1], c.dp_dtau[0], c.dp_dtau[1]],
            [c.dx_dpsi[0], c.dx_dpsi[1], c.dp_dpsi[0], c.dp_dpsi[1]],
        ];
        Ok(DMatrix::from_fn(4, 2, |r, k| cols[k][r]))
    }
}

impl TangentChart for FlowOut {
    fn tangent_space(&self, x: &[f64], p: &[f64]) -> Result<DMatrix<f64>> {
        // match against the stored rays at their node times
        let mut best: Option<(f64, usize, f64)> = None;
        for (j, ray) in self.rays.iter().enumerate() {
            for s in ray.nodes() {
                let d = (s.x[0] - x[0]).hypot(s.x[1] - x[1]) + (s.p[0] - p[0]).hypot(s.p[1] - p[1]);
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, j, s.t));
                }
            }
        }
        let (d, j, t) = best.ok_or_else(|| Error::InvalidParameter("empty flow-out".into()))?;
        if d > 1e-8 {
            return Err(Error::InvalidParameter("point is not a flow-out node".into()));
        }
        let f = self.node(j, t)?;
        let cols = [
            [f.xdot[0], f.xdot[1], f.pdot[0], f.pdot[1]],
            [f.x_psi[0], f.x_psi[1], f.p_psi[0], f.p_psi[1]],
        ];
        Ok(DMatrix::from_fn(4, 2, |r, k| cols[k][r]))
    }
}

/// Outcome of [`check_clean_intersection`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanReport {
    /// dim(T_ρΛ0 ∩ T_ρΛ1) at each sample.
    pub dims: Vec<usize>,
    /// Samples whose rank decision was ill-conditioned.
    pub flagged: Vec<usize>,
    pub pass: bool,
}

/// Checks T_ρΛ0 ∩ T_ρΛ1 = T_ρ∂Λ1 at the boundary points of the flow-out.
pub fn check_clean_intersection(lambda0: &dyn TangentChart, flow: &FlowOut, samples: usize) -> Result<CleanReport> {
    let n = flow.n_psi();
    let step = (n / samples.max(1)).max(1);
    let mut dims = Vec::new();
    let mut flagged = Vec::new();
    for (idx, j) in (0..n).step_by(step).enumerate() {
        let f = flow.node(j, 0.0)?;
        let t0 = lambda0.tangent_space(&f.x, &f.p)?;
        let t1 = flow.tangent_space(&f.x, &f.p)?;
        let joined = DMatrix::from_fn(4, 4, |r, c| if c < 2 { t0[(r, c)] } else { t1[(r, c - 2)] });
        let sv = joined.singular_values();
        let max = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-8 * max).count();
        if sv.iter().any(|&s| s > 1e-8 * max && s < 1e-5 * max) {
            flagged.push(idx);
        }
        dims.push(4 - rank);
    }
    let pass = dims.iter().all(|&d| d == 1);
    Ok(CleanReport { dims, flagged, pass })
}

/// Eikonal values on a chart grid with the residual of p·dx − dS.
#[derive(Debug, Clone, PartialEq)]
pub struct EikonalChart {
    /// (u1, u2, S) with (u1, u2) = (τ, ψ) for sources and (t, ψ) for flow-outs.
    pub nodes: Vec<(f64, f64, f64)>,
    pub residual: f64,
}

/// Eikonal chart of a source Lagrangian; rejected where dS vanishes identically.
pub fn eikonal_chart_source(src: &SourceLagrangian, dom: Option<ChartDomain>, n: usize) -> Result<EikonalChart> {
    let dom = dom.unwrap_or_else(|| src.default_domain());
    let mut nodes = Vec::new();
    let mut max_ds = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let tau = dom.tau.0 + (dom.tau.1 - dom.tau.0).min(10.0) * (i as f64 + 0.5) / n as f64;
            let psi = dom.psi.0 + (dom.psi.1 - dom.psi.0) * (j as f64 + 0.5) / n as f64;
            let c = src.point(tau, psi);
            max_ds = max_ds.max(dot(&c.p, &c.dx_dtau).abs()).max(dot(&c.p, &c.dx_dpsi).abs());
            nodes.push((tau, psi, c.action));
        }
    }
    if max_ds < 1e-12 {
        return Err(Error::ChartRejected(
            "dS vanishes on the chart (dx = 0 on Λ); use the τ coordinate instead".into(),
        ));
    }
    Ok(EikonalChart { nodes, residual: eikonal_pullback_defect(src, &dom, n) })
}

/// Eikonal chart of a flow-out on its (t, ψ) grid.
///
/// The residual combines |dS/dt − ⟨P, Ẋ⟩| (action differentiated along the
/// dense output) and |∂_ψS − ⟨P, ∂_ψX⟩| (action differentiated across fresh
/// rays at ψ ± δ) at `psi_checks` sampled ψ.
pub fn eikonal_chart_flow(flow: &FlowOut, psi_checks: usize) -> Result<EikonalChart> {
    let ts = flow.t_nodes();
    let mut nodes = Vec::new();
    let mut worst_dt = 0.0f64;
    for j in 0..flow.n_psi() {
        for &t in &ts {
            let f = flow.node(j, t)?;
            nodes.push((t, f.psi, f.action));
        }
    }
    let mut residual = 0.0f64;
    let step = (flow.n_psi() / psi_checks.max(1)).max(1);
    for j in (0..flow.n_psi()).step_by(step) {
        let psi = flow.psi(j);
        let d = 1e-5;
        let rp = flow.ray_at(psi + d)?;
        let rm = flow.ray_at(psi - d)?;
        for &t in ts.iter().skip(1) {
            let f = flow.node(j, t)?;
            if f.xdot.iter().chain(&f.pdot).any(|v| !v.is_finite()) {
                continue;
            }
            let sp = (rp.state_at(t)?.action - rm.state_at(t)?.action) / (2.0 * d);
            residual = residual.max((sp - dot(&f.p, &f.x_psi)).abs());
            let dt = 1e-4 * flow.t_max;
            if t + dt <= flow.t_max {
                let a = flow.node(j, t + dt)?.action;
                let b = flow.node(j, t - dt)?.action;
                worst_dt = worst_dt.max(((a - b) / (2.0 * dt) - dot(&f.p, &f.xdot)).abs());
            }
        }
    }
    Ok(EikonalChart { nodes, residual: residual.max(worst_dt) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{make_builtin, BuiltinParams, HamiltonianKind, IndexProfile, Potential};

    fn index(profile: IndexProfile, e: f64) -> HamiltonianSpec {
        make_builtin(
            HamiltonianKind::HelmholtzIndex,
            &BuiltinParams { index: Some(profile), energy: Some(e), ..Default::default() },
        )
        .unwrap()
    }

    #[test]
    fn unit_cosphere() {
        let h = index(IndexProfile::Constant(1.0), 1.0);
        let l = intersect_level(&SourceLagrangian::VerticalFiber { x0: [0.0, 0.0] }, &h, 1.0, None, 64).unwrap();
        assert!((l.margin - 1.0).abs() < 1e-12);
        for s in &l.samples {
            assert!((s.tau - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_level_on_graph() {
        let h = make_builtin(HamiltonianKind::Free, &BuiltinParams { energy: Some(1.0), ..Default::default() }).unwrap();
        let src = SourceLagrangian::TiltedGraph { phase: Arc::new(QuadraticPhase::zero()) };
        let l = intersect_level(&src, &h, 1.0, None, 32).unwrap();
        assert!((l.margin - 2.0).abs() < 1e-10);
        assert!(l.samples.iter().all(|s| s.x == [0.0, 0.0] && (s.tau - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bessel_cone_level_set() {
        // n(φ) = 0.8 + 0.4 e^{−φ²} equals 1 at φ² = ln 2
        let h = index(IndexProfile::GaussianLens { background: 0.8, amplitude: 0.4, width: 1.0 }, 1.0);
        let l = intersect_level(&SourceLagrangian::BesselCone, &h, 1.0, None, 16).unwrap();
        for s in &l.samples {
            assert!((s.tau - 2f64.ln().sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn level_failures() {
        let h = index(IndexProfile::Constant(1.0), 1.0);
        let dom = ChartDomain { tau: (1e-6, 0.5), psi: (0.0, 2.0 * PI), periodic: true };
        let r = intersect_level(&SourceLagrangian::VerticalFiber { x0: [0.0, 0.0] }, &h, 1.0, Some(dom), 8);
        assert!(matches!(r, Err(Error::NoRoot(_))));
        // constant index on the Bessel cone: H ≡ 1, no transversal root
        let r = intersect_level(&SourceLagrangian::BesselCone, &h, 1.0, None, 8);
        assert!(r.is_err());
    }

    #[test]
    fn eikonal_pullbacks() {
        let q = QuadraticPhase { matrix: [[0.7, 0.2], [0.2, -0.3]], linear: [0.1, 0.4] };
        for src in [
            SourceLagrangian::TiltedGraph { phase: Arc::new(q) },
            SourceLagrangian::BesselCone,
            SourceLagrangian::ConormalHypersurface,
            SourceLagrangian::VerticalFiber { x0: [0.5, 0.1] },
        ] {
            let dom = src.default_domain();
            assert!(eikonal_pullback_defect(&src, &dom, 12) < 1e-8, "{src:?}");
        }
        let c = eikonal_chart_source(&SourceLagrangian::BesselCone, None, 8).unwrap();
        assert!(c.residual < 1e-9);
        assert!(c.nodes.iter().all(|(tau, _, s)| tau == s));
        assert!(matches!(
            eikonal_chart_source(&SourceLagrangian::VerticalFiber { x0: [0.0, 0.0] }, None, 8),
            Err(Error::ChartRejected(_))
        ));
    }

    #[test]
    fn straight_flow_out() {
        let h = index(IndexProfile::Constant(1.0), 1.0);
        let l = intersect_level(&SourceLagrangian::VerticalFiber { x0: [0.0, 0.0] }, &h, 1.0, None, 32).unwrap();
        let f = flow_out(&l, 3.0, FlowGrid::default()).unwrap();
        let p = f.node(5, 2.0).unwrap();
        let psi = f.psi(5);
        assert!((p.x[0] - 2.0 * psi.cos()).abs() < 1e-10 && (p.x[1] - 2.0 * psi.sin()).abs() < 1e-10);
        assert!((p.action - 2.0).abs() < 1e-10);
        assert!((p.jacobian - 2.0).abs() < 1e-9);
        let chart = eikonal_chart_flow(&f, 4).unwrap();
        assert!(chart.residual < 1e-6, "{}", chart.residual);
        assert!(chart.nodes.iter().all(|(t, _, s)| (t - s).abs() < 1e-9));
    }

    #[test]
    fn clean_intersections() {
        let h = index(IndexProfile::Constant(1.0), 1.0);
        let src = SourceLagrangian::VerticalFiber { x0: [0.0, 0.0] };
        let l = intersect_level(&src, &h, 1.0, None, 16).unwrap();
        let f = flow_out(&l, 1.0, FlowGrid::default()).unwrap();
        let r = check_clean_intersection(&src, &f, 8).unwrap();
        assert!(r.pass, "{r:?}");
        let own = check_clean_intersection(&f, &f, 8).unwrap();
        assert!(!own.pass && own.dims.iter().all(|&d| d == 2));

        let m = make_builtin(HamiltonianKind::ModelDxn, &BuiltinParams::default()).unwrap();
        let src = SourceLagrangian::ConormalHypersurface;
        let lm = intersect_level(&src, &m, 0.0, None, 8).unwrap();
        assert!(lm.samples.iter().all(|s| s.tau.abs() < 1e-12));
        let fm = flow_out(&lm, 0.5, FlowGrid::default()).unwrap();
        assert!(check_clean_intersection(&src, &fm, 8).unwrap().pass);
    }

    #[test]
    fn oscillator_pre_caustic_flow_out() {
        let h = make_builtin(
            HamiltonianKind::Schrodinger,
            &BuiltinParams {
                potential: Some(Potential::Harmonic { coefficient: 1.0 }),
                energy: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap();
        let l = intersect_level(&SourceLagrangian::VerticalFiber { x0: [0.0, 0.0] }, &h, 0.0, None, 16).unwrap();
        let f = flow_out(&l, PI / 4.0 - 1e-3, FlowGrid::default()).unwrap();
        assert!((0..f.n_psi()).all(|j| f.conjugate_events(j).is_empty()));
    }
}
