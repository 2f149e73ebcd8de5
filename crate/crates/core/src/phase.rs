//! Phase functions: the short-time Hamilton–Jacobi Taylor phase, the
//! eikonal-coordinate generating function Φ = S + r⟨P, x − X⟩ on the
//! flow-out, arrival finding and Maslov bookkeeping.

use nalgebra::{DMatrix, Matrix2, Vector2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonians::{dot, norm, HamiltonianSpec};
use crate::lagrangian::{flow_point, integrate_from, psi_distance, FlowOut, FlowPoint, GeneratingPhase};
use crate::oscint::{eighth_root, signature_and_det};
use crate::rayflow::{integrate_ray, Ray, RayOptions, Tangent};

/// Default upper bound on t for the Taylor phase.
pub const T_TAYLOR_MAX: f64 = 0.1;

/// Truncated expansion of Φ(x, t; η) solving ∂_tΦ + H0(x, ∂_xΦ) − E = 0
/// with Φ(x, 0; η) = x·η + S(η).
pub fn taylor_phase(
    h: &HamiltonianSpec,
    phase: Option<&dyn GeneratingPhase>,
    t: f64,
    x: &[f64],
    eta: &[f64],
    order: u32,
) -> Result<f64> {
    if !(order == 2 || order == 3) {
        return Err(Error::InvalidParameter(format!("Taylor order must be 2 or 3, got {order}")));
    }
    let n = h.dim;
    let base = dot(x, eta) + phase.map_or(0.0, |s| s.value(eta));
    let hv = h.h0(x, eta)? - h.energy;
    let mut hx = vec![0.0; n];
    let mut hp = vec![0.0; n];
    h.gradients_into(x, eta, &mut hx, &mut hp)?;
    let mut phi = base - t * hv + 0.5 * t * t * dot(&hp, &hx);
    if order == 3 {
        let mut hxx = vec![0.0; n * n];
        let mut hxp = vec![0.0; n * n];
        let mut hpp = vec![0.0; n * n];
        h.hessians_into(x, eta, &mut hxx, &mut hxp, &mut hpp)?;
        let quad = |u: &[f64], m: &[f64], v: &[f64]| -> f64 {
            (0..n).map(|i| u[i] * (0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>()).sum()
        };
        phi -= t.powi(3) / 6.0 * (quad(&hp, &hxp, &hx) + quad(&hp, &hxx, &hp) + quad(&hx, &hpp, &hx));
    }
    Ok(phi)
}

/// The same phase computed along characteristics: the ray from (y, η) with
/// X(t; y, η) = x, Φ = y·η + S(η) + ∫⟨P, Ẋ⟩ − t(H0 − E).
pub fn hj_phase_exact(
    h: &HamiltonianSpec,
    phase: Option<&dyn GeneratingPhase>,
    t: f64,
    x: &[f64],
    eta: &[f64],
    tol: f64,
) -> Result<f64> {
    let n = h.dim;
    let s0 = phase.map_or(0.0, |s| s.value(eta));
    if h.is_translation_invariant() {
        return Ok(dot(x, eta) + s0 - t * (h.h0(x, eta)? - h.energy));
    }
    if t == 0.0 {
        return Ok(dot(x, eta) + s0);
    }
    let tangents: Vec<Tangent> = (0..n)
        .map(|i| {
            let mut dx = vec![0.0; n];
            dx[i] = 1.0;
            Tangent { dx, dp: vec![0.0; n] }
        })
        .collect();
    let opts = RayOptions { tol, ..Default::default() };
    let mut y = x.to_vec();
    for _ in 0..40 {
        let ray = integrate_ray(h, &y, eta, t, &tangents, &opts)?;
        let s = ray.state_at(t)?;
        let r: Vec<f64> = s.x.iter().zip(x).map(|(a, b)| a - b).collect();
        if norm(&r) < 1e-13 * (1.0 + norm(x)) {
            return Ok(dot(&y, eta) + s0 + s.action - t * (h.h0(&y, eta)? - h.energy));
        }
        let step = s
            .mx
            .clone()
            .lu()
            .solve(&nalgebra::DVector::from_vec(r))
            .ok_or_else(|| Error::Numeric("singular characteristic map".into()))?;
        for (yi, d) in y.iter_mut().zip(step.iter()) {
            *yi -= d;
        }
    }
    Err(Error::Numeric(format!("characteristic foot not found for t = {t}")))
}

/// Φ and its partials in the eikonal coordinates (t, ψ, r).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EikonalPhase {
    pub value: f64,
    pub dt: f64,
    pub dpsi: f64,
    pub dr: f64,
}

pub(crate) fn eikonal_from_point(f: &FlowPoint, r: f64, x: &[f64]) -> EikonalPhase {
    let d = [x[0] - f.x[0], x[1] - f.x[1]];
    let pxd = dot(&f.p, &f.xdot);
    let pxpsi = dot(&f.p, &f.x_psi);
    EikonalPhase {
        value: f.action + r * dot(&f.p, &d),
        dt: pxd * (1.0 - r) + r * dot(&f.pdot, &d),
        dpsi: pxpsi * (1.0 - r) + r * dot(&f.p_psi, &d),
        dr: dot(&f.p, &d),
    }
}

/// Evaluates Φ(x, (t, ψ, r)) = S(t, ψ) + r⟨P, x − X⟩ with its partials.
pub fn eikonal_phase_eval(flow: &FlowOut, t: f64, psi: f64, r: f64, x: &[f64]) -> Result<EikonalPhase> {
    if !(0.0..=flow.t_max).contains(&t) {
        return Err(Error::Extrapolation(format!("t = {t} outside the flow-out horizon [0, {}]", flow.t_max)));
    }
    let f = flow.point(t, psi)?;
    Ok(eikonal_from_point(&f, r, x))
}

/// Hessian of Φ in (t, r, ψ) at the critical point x = X, r = 1.
pub fn critical_hessian(f: &FlowPoint) -> DMatrix<f64> {
    let a = -dot(&f.pdot, &f.xdot);
    let b = -dot(&f.p, &f.xdot);
    let c = -dot(&f.pdot, &f.x_psi);
    let d = -dot(&f.p, &f.x_psi);
    let e = -dot(&f.p_psi, &f.x_psi);
    DMatrix::from_row_slice(3, 3, &[a, b, c, b, 0.0, d, c, d, e])
}

/// e^{−iπμ/2}.
pub fn maslov_factor(mu: u32) -> Complex64 {
    eighth_root(-2 * (mu % 4) as i32)
}

/// One solution of X(t, ψ) = x.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalDatum {
    pub t: f64,
    pub psi: f64,
    /// Initial momentum of the ray.
    pub eta: [f64; 2],
    /// Momentum at arrival.
    pub p: [f64; 2],
    /// Φ at the critical point.
    pub action: f64,
    pub theta: f64,
    /// det[Ẋ, ∂_ψX].
    pub jacobian: f64,
    pub signature: i32,
    pub maslov: u32,
    pub nondegenerate: bool,
    /// |X(t, ψ) − x|.
    pub residual: f64,
    /// Condition number of the (t, r, ψ) Hessian at the arrival.
    pub hessian_condition: f64,
}

/// Restricts arrivals to initial momenta in a window.
pub type MomentumWindow<'a> = dyn Fn(&[f64; 2]) -> bool + Sync + 'a;

const NEWTON_TOL: f64 = 1e-11;
const DEDUP: f64 = 1e-6;
const SIGMA_TIME: f64 = 0.1;

struct RayCache<'a> {
    flow: &'a FlowOut,
    psi: f64,
    ray: Option<Ray>,
}

impl<'a> RayCache<'a> {
    fn get(&mut self, psi: f64) -> Result<&Ray> {
        if self.ray.is_none() || self.psi != psi {
            let lp = self.flow.level.point(psi)?;
            self.ray = Some(integrate_from(&self.flow.level, &lp, self.flow.t_max, self.flow.grid.tol)?);
            self.psi = psi;
        }
        Ok(self.ray.as_ref().expect("cached"))
    }
}

fn wrap_psi(flow: &FlowOut, psi: f64) -> Option<f64> {
    let dom = &flow.level.domain;
    if dom.periodic {
        Some(dom.psi.0 + (psi - dom.psi.0).rem_euclid(dom.psi.1 - dom.psi.0))
    } else if psi >= dom.psi.0 && psi <= dom.psi.1 {
        Some(psi)
    } else {
        None
    }
}

fn newton(flow: &FlowOut, x: &[f64], t0: f64, psi0: f64) -> Result<Option<(f64, f64, FlowPoint, Ray)>> {
    let mut cache = RayCache { flow, psi: f64::NAN, ray: None };
    let (mut t, mut psi) = (t0, psi0);
    let eval = |cache: &mut RayCache, t: f64, psi: f64| -> Result<FlowPoint> {
        let ray = cache.get(psi)?;
        flow_point(ray, psi, t)
    };
    let mut f = eval(&mut cache, t, psi)?;
    let mut res = (f.x[0] - x[0]).hypot(f.x[1] - x[1]);
    let scale = 1.0 + norm(x);
    for _ in 0..60 {
        if res <= NEWTON_TOL * scale {
            let ray = cache.ray.take().expect("ray evaluated");
            return Ok(Some((t, psi, f, ray)));
        }
        let jac = Matrix2::new(f.xdot[0], f.x_psi[0], f.xdot[1], f.x_psi[1]);
        let rhs = Vector2::new(x[0] - f.x[0], x[1] - f.x[1]);
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let step = svd.solve(&rhs, 1e-12 * smax).map_err(|e| Error::Numeric(e.to_string()))?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let tn = t + lambda * step[0];
            if tn > 0.0 && tn <= flow.t_max {
                if let Some(pn) = wrap_psi(flow, psi + lambda * step[1]) {
                    let fnew = eval(&mut cache, tn, pn)?;
                    let rn = (fnew.x[0] - x[0]).hypot(fnew.x[1] - x[1]);
                    if rn < res {
                        t = tn;
                        psi = pn;
                        f = fnew;
                        res = rn;
                        accepted = true;
                        break;
                    }
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res <= 1e-9 * scale {
        let ray = cache.get(psi)?.clone();
        return Ok(Some((t, psi, f, ray)));
    }
    Ok(None)
}

fn arrival_from(t: f64, psi: f64, f: FlowPoint, ray: &Ray, x: &[f64]) -> Result<ArrivalDatum> {
    let maslov: u32 = ray.conjugate_events.iter().filter(|e| e.t < t).map(|e| e.multiplicity).sum();
    // σ is read off the short-time branch, where every source looks like the
    // constant-coefficient one; later sign changes of ⟨P_ψ, X_ψ⟩ are not caustics
    let first = ray.conjugate_events.first().map_or(f64::INFINITY, |e| e.t);
    let t_ref = t.min(0.5 * first).min(SIGMA_TIME);
    let speed = norm(&f.xdot);
    let spread = norm(&f.x_psi).max(t * norm(&f.p_psi));
    let nondegenerate = f.jacobian.abs() > 1e-8 * speed * spread.max(f64::MIN_POSITIVE);
    let hess = critical_hessian(&f);
    let eig = hess.clone().symmetric_eigen().eigenvalues;
    let emax = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let emin = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let hessian_condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };
    let signature = if nondegenerate {
        let mut tr = t_ref;
        let mut sig = None;
        for _ in 0..8 {
            let fr = if tr == t { f.clone() } else { flow_point(ray, psi, tr)? };
            if let Ok((sg, _)) = signature_and_det(&critical_hessian(&fr)) {
                sig = Some(sg);
                break;
            }
            tr *= 0.5;
        }
        sig.ok_or_else(|| Error::Caustic(format!("no nondegenerate reference Hessian on the ray at ψ = {psi}")))?
    } else {
        0
    };
    let lp = &ray.nodes()[0];
    Ok(ArrivalDatum {
        t,
        psi,
        eta: [lp.p[0], lp.p[1]],
        p: f.p,
        action: f.action,
        theta: f.theta,
        jacobian: f.jacobian,
        signature,
        maslov,
        nondegenerate,
        residual: (f.x[0] - x[0]).hypot(f.x[1] - x[1]),
        hessian_condition,
    })
}

/// Multi-start Newton on (t, ψ) ↦ X(t, ψ) − x seeded from the local minima
/// of |X − x| on the flow-out grid.
pub fn find_arrivals(flow: &FlowOut, x: &[f64], window: Option<&MomentumWindow<'_>>) -> Result<Vec<ArrivalDatum>> {
    if x.len() != 2 {
        return Err(Error::InvalidParameter("arrival search is planar".into()));
    }
    let ts = flow.t_nodes();
    let nt = ts.len();
    let np = flow.n_psi();
    let mut dist = vec![f64::INFINITY; nt * np];
    for j in 0..np {
        for (i, &t) in ts.iter().enumerate().skip(1) {
            let s = flow.rays[j].state_at(t)?;
            dist[j * nt + i] = (s.x[0] - x[0]).hypot(s.x[1] - x[1]);
        }
    }
    let periodic = flow.level.domain.periodic;
    let mut seeds = Vec::new();
    for j in 0..np {
        for i in 1..nt {
            let d = dist[j * nt + i];
            let mut is_min = true;
            'nb: for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if dj == 0 && di == 0 {
                        continue;
                    }
                    let jj = j as i64 + dj;
                    let jj = if periodic {
                        jj.rem_euclid(np as i64)
                    } else if jj < 0 || jj >= np as i64 {
                        continue;
                    } else {
                        jj
                    };
                    let ii = i as i64 + di;
                    if ii < 1 || ii >= nt as i64 {
                        continue;
                    }
                    if dist[jj as usize * nt + ii as usize] < d {
                        is_min = false;
                        break 'nb;
                    }
                }
            }
            if is_min {
                seeds.push((d, ts[i], flow.psi(j)));
            }
        }
    }
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
    seeds.truncate(16);
    let found: Vec<Result<Option<ArrivalDatum>>> = seeds
        .par_iter()
        .map(|&(_, t0, psi0)| {
            Ok(match newton(flow, x, t0, psi0)? {
                // the source point itself is reached trivially at t = 0
                Some((t, _, _, _)) if t <= 1e-6 * flow.t_max => None,
                Some((t, psi, f, ray)) => Some(arrival_from(t, psi, f, &ray, x)?),
                None => None,
            })
        })
        .collect();
    let period = flow.level.domain.psi.1 - flow.level.domain.psi.0;
    let mut out: Vec<ArrivalDatum> = Vec::new();
    for a in found {
        let Some(a) = a? else { continue };
        if let Some(w) = window {
            if !w(&a.eta) {
                continue;
            }
        }
        let dup = out.iter().any(|b| {
            if !a.nondegenerate || !b.nondegenerate {
                (a.t - b.t).abs() < DEDUP
            } else {
                (a.t - b.t).abs().hypot(psi_distance(a.psi, b.psi, period, periodic)) < DEDUP
            }
        });
        if !dup {
            out.push(a);
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.psi.total_cmp(&b.psi)));
    Ok(out)
}

/// Max over sampled flow-out nodes of the Hamilton–Jacobi defect
/// |∂_tΦ + H0(X, ∂_xΦ) − E| together with |∂_ψΦ|, both differentiated numerically.
pub fn hj_residual(flow: &FlowOut, samples: usize) -> Result<f64> {
    let h = flow.hamiltonian();
    let ts = flow.t_nodes();
    let step = (flow.n_psi() / samples.max(1)).max(1);
    let dpsi = 1e-4;
    let picks: Vec<usize> = if flow.level.domain.periodic {
        (0..flow.n_psi()).step_by(step).collect()
    } else {
        (1..flow.n_psi() - 1).step_by(step).collect()
    };
    let worst: Vec<Result<f64>> = picks
        .par_iter()
        .map(|&j| {
            let psi = flow.psi(j);
            let plus = flow.ray_at(psi + dpsi)?;
            let minus = flow.ray_at(psi - dpsi)?;
            let mut worst = 0.0f64;
            for &t in &ts[1..ts.len() - 1] {
                let f = flow.node(j, t)?;
                let dt = 1e-4 * flow.t_max;
                let phi_t = |tt: f64| -> Result<f64> {
                    Ok(eikonal_from_point(&flow.node(j, tt)?, 1.0, &f.x).value)
                };
                let dphi_dt = (phi_t(t + dt)? - phi_t(t - dt)?) / (2.0 * dt);
                let hv = h.h0(&f.x, &f.p)? - h.energy;
                let phi_psi = |ray: &Ray, ps: f64| -> Result<f64> {
                    Ok(eikonal_from_point(&flow_point(ray, ps, t)?, 1.0, &f.x).value)
                };
                let dphi_dpsi = (phi_psi(&plus, psi + dpsi)? - phi_psi(&minus, psi - dpsi)?) / (2.0 * dpsi);
                worst = worst.max((dphi_dt + hv).abs()).max(dphi_dpsi.abs());
            }
            Ok(worst)
        })
        .collect();
    let mut m = 0.0f64;
    for w in worst {
        m = m.max(w?);
    }
    Ok(m)
}

/// det(P, ∂_ψP) at the source point of ray `j`.
pub fn source_momentum_determinant(flow: &FlowOut, j: usize) -> Result<f64> {
    let f = flow.node(j, 0.0)?;
    Ok(f.p[0] * f.p_psi[1] - f.p[1] * f.p_psi[0])
}
