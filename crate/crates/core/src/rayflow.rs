//! Bicharacteristics of H0 with the variational (Jacobi) system, action,
//! subprincipal phase and conjugate-point bookkeeping.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonians::{dot, norm, HamiltonianSpec};

/// Initial tangent (δx, δp) carried by the variational system.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangent {
    pub dx: Vec<f64>,
    pub dp: Vec<f64>,
}

impl Tangent {
    pub fn momentum(dp: Vec<f64>) -> Self {
        Self { dx: vec![0.0; dp.len()], dp }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOptions {
    /// Absolute and relative local error target.
    pub tol: f64,
    pub initial_action: f64,
    pub max_steps: usize,
    /// Largest step; keeps the node sequence fine enough for event scans.
    pub max_step: f64,
}

impl Default for RayOptions {
    fn default() -> Self {
        Self { tol: 1e-10, initial_action: 0.0, max_steps: 200_000, max_step: 0.05 }
    }
}

/// A crossing of the caustic set along a ray family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateEvent {
    pub t: f64,
    pub multiplicity: u32,
}

/// Snapshot of a ray and its Jacobi fields at time t.
#[derive(Debug, Clone, PartialEq)]
pub struct RayState {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub action: f64,
    pub theta: f64,
    /// ∂x/∂(parameters), n×k.
    pub mx: DMatrix<f64>,
    /// ∂p/∂(parameters), n×k.
    pub mp: DMatrix<f64>,
    pub maslov: u32,
}

// Dormand–Prince 5(4) tableau with the DOPRI5 continuous extension.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Vector field of the extended system.
struct Field<'a> {
    h: &'a HamiltonianSpec,
    n: usize,
    k: usize,
}

impl Field<'_> {
    fn len(&self) -> usize {
        2 * self.n + 2 + 2 * self.n * self.k
    }

    fn eval(&self, y: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.n;
        let (x, p) = (&y[..n], &y[n..2 * n]);
        let (head, tail) = out.split_at_mut(2 * n);
        let (gx, gp) = head.split_at_mut(n);
        self.h.gradients_into(x, p, gx, gp)?;
        // gx holds ∂_x H0; flip to ṗ after the scalar terms
        tail[0] = dot(p, gp);
        tail[1] = self.h.h1(x, p)?;
        if self.k > 0 {
            let mut hxx = vec![0.0; n * n];
            let mut hxp = vec![0.0; n * n];
            let mut hpp = vec![0.0; n * n];
            self.h.hessians_into(x, p, &mut hxx, &mut hxp, &mut hpp)?;
            for j in 0..self.k {
                let base = 2 * n + 2 + 2 * n * j;
                let (dx, dp) = (&y[base..base + n], &y[base + n..base + 2 * n]);
                for i in 0..n {
                    let mut vx = 0.0;
                    let mut vp = 0.0;
                    for l in 0..n {
                        vx += hxp[l * n + i] * dx[l] + hpp[l * n + i] * dp[l];
                        vp -= hxx[i * n + l] * dx[l] + hxp[i * n + l] * dp[l];
                    }
                    tail[2 + 2 * n * j + i] = vx;
                    tail[2 + 2 * n * j + n + i] = vp;
                }
            }
        }
        // ẋ = ∂_p H0, ṗ = −∂_x H0
        let (gx, gp) = head.split_at_mut(n);
        let mut tmp = vec![0.0; n];
        tmp.copy_from_slice(gx);
        gx.copy_from_slice(gp);
        for (g, t) in gp.iter_mut().zip(&tmp) {
            *g = -t;
        }
        Ok(())
    }
}

/// Dense-output coefficients of one accepted step.
#[derive(Debug, Clone)]
struct Step {
    t0: f64,
    dt: f64,
    r: [Vec<f64>; 5],
}

impl Step {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.dt;
        let s1 = 1.0 - s;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.r[0][i]
                + s * (self.r[1][i] + s1 * (self.r[2][i] + s * (self.r[3][i] + s1 * self.r[4][i])));
        }
    }
}

/// A time-sampled bicharacteristic with dense output.
#[derive(Debug, Clone)]
pub struct Ray {
    h: HamiltonianSpec,
    n: usize,
    k: usize,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    steps: Vec<Step>,
    pub conjugate_events: Vec<ConjugateEvent>,
}

fn error_norm(y0: &[f64], y1: &[f64], err: &[f64], tol: f64) -> f64 {
    let s: f64 = y0
        .iter()
        .zip(y1)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = tol + tol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / y0.len() as f64).sqrt()
}

/// Integrates Hamilton's equations with the variational system for the
/// given tangents, the action `Ṡ = ⟨p, ∂_p H0⟩` and `Θ̇ = H1`.
pub fn integrate_ray(
    h: &HamiltonianSpec,
    x0: &[f64],
    p0: &[f64],
    t_max: f64,
    tangents: &[Tangent],
    opts: &RayOptions,
) -> Result<Ray> {
    let n = h.dim;
    if x0.len() != n || p0.len() != n {
        return Err(Error::InvalidParameter(format!("initial point must have dimension {n}")));
    }
    if !(opts.tol > 0.0) || !(t_max >= 0.0) {
        return Err(Error::InvalidParameter("tol must be positive and t_max ≥ 0".into()));
    }
    let k = tangents.len();
    if k > 0 {
        let m = DMatrix::from_fn(2 * n, k, |r, c| {
            if r < n { tangents[c].dx[r] } else { tangents[c].dp[r - n] }
        });
        let sv = m.singular_values();
        let max = sv.max();
        if k > 2 * n || sv.min() <= 1e-12 * max || max == 0.0 {
            return Err(Error::InvalidParameter("tangent directions are not independent".into()));
        }
    }
    if !h.h0(x0, p0)?.is_finite() {
        return Err(Error::InvalidParameter("H0 is not finite at the initial point".into()));
    }
    let field = Field { h, n, k };
    let len = field.len();
    let mut y = vec![0.0; len];
    y[..n].copy_from_slice(x0);
    y[n..2 * n].copy_from_slice(p0);
    y[2 * n] = opts.initial_action;
    for (j, tg) in tangents.iter().enumerate() {
        let base = 2 * n + 2 + 2 * n * j;
        y[base..base + n].copy_from_slice(&tg.dx);
        y[base + n..base + 2 * n].copy_from_slice(&tg.dp);
    }
    let mut ray = Ray {
        h: h.clone(),
        n,
        k,
        times: vec![0.0],
        values: vec![y.clone()],
        steps: Vec::new(),
        conjugate_events: Vec::new(),
    };
    if t_max == 0.0 {
        return Ok(ray);
    }
    let mut stages = vec![vec![0.0; len]; 7];
    field.eval(&y, &mut stages[0])?;
    let mut t = 0.0;
    let mut dt = {
        let d0 = norm(&y).max(1e-5);
        let d1 = norm(&stages[0]).max(1e-5);
        (0.01 * d0 / d1).min(opts.max_step).min(t_max)
    };
    let mut ytmp = vec![0.0; len];
    let mut y1 = vec![0.0; len];
    let mut err = vec![0.0; len];
    let mut steps = 0;
    while t < t_max {
        if steps >= opts.max_steps {
            return Err(Error::StepCollapse { t });
        }
        steps += 1;
        let last = t + dt >= t_max;
        if last {
            dt = t_max - t;
        }
        for s in 1..7 {
            for i in 0..len {
                let mut acc = y[i];
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += dt * a * stages[j][i];
                }
                ytmp[i] = acc;
            }
            let (done, rest) = stages.split_at_mut(s);
            let _ = done;
            field.eval(&ytmp, &mut rest[0])?;
        }
        // stage 7 is evaluated at the 5th-order solution (FSAL)
        y1.copy_from_slice(&ytmp);
        for i in 0..len {
            err[i] = dt * (0..7).map(|j| E[j] * stages[j][i]).sum::<f64>();
        }
        let en = error_norm(&y, &y1, &err, opts.tol);
        if !en.is_finite() {
            dt *= 0.2;
            if dt < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepCollapse { t });
            }
            continue;
        }
        if en <= 1.0 {
            let r0 = y.clone();
            let r1: Vec<f64> = y1.iter().zip(&y).map(|(a, b)| a - b).collect();
            let r2: Vec<f64> = (0..len).map(|i| dt * stages[0][i] - r1[i]).collect();
            let r3: Vec<f64> = (0..len).map(|i| r1[i] - dt * stages[6][i] - r2[i]).collect();
            let r4: Vec<f64> = (0..len).map(|i| dt * (0..7).map(|j| D[j] * stages[j][i]).sum::<f64>()).collect();
            ray.steps.push(Step { t0: t, dt, r: [r0, r1, r2, r3, r4] });
            t = if last { t_max } else { t + dt };
            y.copy_from_slice(&y1);
            ray.times.push(t);
            ray.values.push(y.clone());
            let (first, rest) = stages.split_at_mut(6);
            first[0].copy_from_slice(&rest[0]);
        }
        let fac = (0.9 * en.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
        let fac = if en > 1.0 { fac.min(1.0) } else { fac };
        dt = (dt * fac).min(opts.max_step);
        if dt < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepCollapse { t });
        }
    }
    if k + 1 == n {
        ray.conjugate_events = scan_conjugate(&ray)?;
    }
    Ok(ray)
}

impl Ray {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("ray has nodes")
    }

    pub fn node_times(&self) -> &[f64] {
        &self.times
    }

    pub fn hamiltonian(&self) -> &HamiltonianSpec {
        &self.h
    }

    fn raw_at(&self, t: f64) -> Result<Vec<f64>> {
        let tm = self.t_max();
        if !(t >= 0.0 && t <= tm * (1.0 + 1e-12) + 1e-15) {
            return Err(Error::InvalidParameter(format!("t = {t} outside [0, {tm}]")));
        }
        let t = t.min(tm);
        let idx = self.times.partition_point(|&s| s <= t);
        if idx >= self.times.len() || self.steps.is_empty() {
            return Ok(self.values.last().expect("nodes").clone());
        }
        if idx > 0 && self.times[idx - 1] == t {
            return Ok(self.values[idx - 1].clone());
        }
        let step = &self.steps[idx - 1];
        let mut out = vec![0.0; self.values[0].len()];
        step.eval(t, &mut out);
        Ok(out)
    }

    fn unpack(&self, t: f64, y: &[f64]) -> RayState {
        let n = self.n;
        let k = self.k;
        let mx = DMatrix::from_fn(n, k, |r, c| y[2 * n + 2 + 2 * n * c + r]);
        let mp = DMatrix::from_fn(n, k, |r, c| y[2 * n + 2 + 2 * n * c + n + r]);
        let maslov = self
            .conjugate_events
            .iter()
            .filter(|e| e.t < t)
            .map(|e| e.multiplicity)
            .sum();
        RayState {
            t,
            x: y[..n].to_vec(),
            p: y[n..2 * n].to_vec(),
            action: y[2 * n],
            theta: y[2 * n + 1],
            mx,
            mp,
            maslov,
        }
    }

    /// State at time t from the dense-output interpolant.
    pub fn state_at(&self, t: f64) -> Result<RayState> {
        let y = self.raw_at(t)?;
        Ok(self.unpack(t, &y))
    }

    /// States at the adaptive time nodes.
    pub fn nodes(&self) -> Vec<RayState> {
        self.times.iter().zip(&self.values).map(|(&t, y)| self.unpack(t, y)).collect()
    }

    /// Velocity Ẋ = ∂_p H0 at a state.
    pub fn velocity(&self, s: &RayState) -> Result<Vec<f64>> {
        self.h.grad_p(&s.x, &s.p)
    }

    /// `[Ẋ, ∂X/∂ψ]` for a family with n−1 transverse tangents.
    pub fn flow_jacobian(&self, s: &RayState) -> Result<DMatrix<f64>> {
        if self.k + 1 != self.n {
            return Err(Error::InvalidParameter(
                "flow Jacobian needs n−1 transverse tangents".into(),
            ));
        }
        let v = self.velocity(s)?;
        Ok(DMatrix::from_fn(self.n, self.n, |r, c| if c == 0 { v[r] } else { s.mx[(r, c - 1)] }))
    }

    fn det_at(&self, t: f64) -> Result<(f64, DMatrix<f64>)> {
        let s = self.state_at(t)?;
        let m = self.flow_jacobian(&s)?;
        Ok((m.determinant(), m))
    }

    /// Largest energy deviation over the nodes.
    pub fn energy_drift(&self) -> Result<f64> {
        let n = self.n;
        let e0 = self.h.h0(&self.values[0][..n], &self.values[0][n..2 * n])?;
        let mut worst = 0.0f64;
        for y in &self.values {
            worst = worst.max((self.h.h0(&y[..n], &y[n..2 * n])? - e0).abs());
        }
        Ok(worst)
    }
}

fn rank_drop(m: &DMatrix<f64>) -> u32 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 {
        return m.ncols() as u32;
    }
    sv.iter().filter(|&&s| s < 1e-8 * max).count() as u32
}

fn sigma_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    if max == 0.0 { 0.0 } else { sv.min() / max }
}

/// Caustic crossings of `det[Ẋ, ∂X/∂ψ]` on (0, t_max).
fn scan_conjugate(ray: &Ray) -> Result<Vec<ConjugateEvent>> {
    let tm = ray.t_max();
    let times: Vec<f64> = ray.times.iter().copied().filter(|&t| t > 0.0).collect();
    let mut dets = Vec::with_capacity(times.len());
    for &t in &times {
        dets.push(ray.det_at(t)?.0);
    }
    let mut events = Vec::new();
    for i in 0..times.len().saturating_sub(1) {
        let (ta, tb) = (times[i], times[i + 1]);
        let (da, db) = (dets[i], dets[i + 1]);
        if da == 0.0 {
            continue;
        }
        if da.signum() != db.signum() {
            let (mut lo, mut hi, mut dlo) = (ta, tb, da);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let dm = ray.det_at(mid)?.0;
                if dm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if dm.signum() == dlo.signum() {
                    lo = mid;
                    dlo = dm;
                } else {
                    hi = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            if t >= tm {
                continue;
            }
            let m = ray.det_at(t)?.1;
            events.push(ConjugateEvent { t, multiplicity: rank_drop(&m).max(1) });
        } else if i + 2 < times.len() || tb < tm {
            // a zero touching without a sign change shows up as a dip of |det|
            let dn = if i + 2 < times.len() { dets[i + 2] } else { continue };
            if db.abs() < da.abs() && db.abs() < dn.abs() && db.signum() == dn.signum() {
                let (mut a, mut b) = (ta, times[i + 2]);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                let f = |t: f64| ray.det_at(t).map(|(_, m)| sigma_ratio(&m));
                let mut c = b - g * (b - a);
                let mut d = a + g * (b - a);
                let (mut fc, mut fd) = (f(c)?, f(d)?);
                for _ in 0..120 {
                    if fc < fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - g * (b - a);
                        fc = f(c)?;
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + g * (b - a);
                        fd = f(d)?;
                    }
                    if b - a < 1e-13 * b.max(1.0) {
                        break;
                    }
                }
                let t = 0.5 * (a + b);
                let m = ray.det_at(t)?.1;
                let drop = rank_drop(&m);
                if drop > 0 && t < tm {
                    if drop % 2 == 1 {
                        return Err(Error::DegenerateCaustic { t });
                    }
                    events.push(ConjugateEvent { t, multiplicity: drop });
                }
            }
        }
    }
    events.sort_by(|a, b| a.t.total_cmp(&b.t));
    events.dedup_by(|a, b| (a.t - b.t).abs() < 1e-9);
    Ok(events)
}

/// Caustic times of a family integrated with n−1 transverse tangents.
pub fn conjugate_times(ray: &Ray) -> Result<Vec<ConjugateEvent>> {
    if ray.k + 1 != ray.n {
        return Err(Error::InvalidParameter(
            "conjugate_times needs a family with n−1 transverse tangents".into(),
        ));
    }
    Ok(ray.conjugate_events.clone())
}

/// Spatial projection of the flow from (x0, η) and `∂x/∂η`.
pub fn exp_map(h: &HamiltonianSpec, x0: &[f64], eta: &[f64], t: f64, tol: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if t < 0.0 {
        return Err(Error::InvalidParameter(format!("exp_map requires t ≥ 0, got {t}")));
    }
    let n = h.dim;
    let tangents: Vec<Tangent> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            Tangent::momentum(e)
        })
        .collect();
    let ray = integrate_ray(h, x0, eta, t, &tangents, &RayOptions { tol, ..Default::default() })?;
    let s = ray.state_at(t)?;
    Ok((s.x, s.mx))
}

/// Smallest T such that every ray started at `starts` stays outside the
/// ball of radius `radius` for t ∈ [T, horizon].
pub fn escape_time(
    h: &HamiltonianSpec,
    starts: &[(Vec<f64>, Vec<f64>)],
    radius: f64,
    horizon: f64,
    tol: f64,
) -> Result<f64> {
    if starts.is_empty() {
        return Err(Error::InvalidParameter("no starting points".into()));
    }
    let per_ray: Vec<Result<f64>> = starts
        .par_iter()
        .map(|(x0, p0)| {
            let ray = integrate_ray(h, x0, p0, horizon, &[], &RayOptions { tol, ..Default::default() })?;
            let nodes = ray.nodes();
            let r = |s: &RayState| norm(&s.x);
            if r(nodes.last().expect("nodes")) <= radius {
                return Err(Error::Trapping(format!(
                    "ray from x = {x0:?}, p = {p0:?} is inside |x| ≤ {radius} at the horizon t = {horizon}"
                )));
            }
            let last_inside = nodes.iter().rposition(|s| r(s) <= radius);
            let Some(i) = last_inside else { return Ok(0.0) };
            let (mut lo, mut hi) = (nodes[i].t, nodes[i + 1].t);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if norm(&ray.state_at(mid)?.x) <= radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(hi)
        })
        .collect();
    let mut t = 0.0f64;
    for r in per_ray {
        t = t.max(r?);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonians::{make_builtin, BuiltinParams, HamiltonianKind, IndexProfile, Potential};
    use std::f64::consts::PI;

    fn straight() -> HamiltonianSpec {
        make_builtin(
            HamiltonianKind::HelmholtzIndex,
            &BuiltinParams { index: Some(IndexProfile::Constant(1.0)), ..Default::default() },
        )
        .unwrap()
    }

    fn oscillator() -> HamiltonianSpec {
        make_builtin(
            HamiltonianKind::Schrodinger,
            &BuiltinParams {
                potential: Some(Potential::Harmonic { coefficient: 1.0 }),
                energy: Some(1.0),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn straight_ray_action() {
        let ray = integrate_ray(&straight(), &[0.0, 0.0], &[1.0, 0.0], 2.0, &[], &RayOptions::default()).unwrap();
        let s = ray.state_at(2.0).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12 && s.x[1].abs() < 1e-12);
        assert!((s.action - 2.0).abs() < 1e-12);
        assert_eq!(s.theta, 0.0);
    }

    #[test]
    fn oscillator_closed_form() {
        let h = oscillator();
        let ray = integrate_ray(&h, &[0.0, 0.0], &[1.0, 0.0], PI / 4.0, &[], &RayOptions::default()).unwrap();
        for t in [0.1, 0.4, PI / 4.0] {
            let s = ray.state_at(t).unwrap();
            assert!((s.x[0] - (2.0 * t).sin()).abs() < 1e-8, "t={t}");
        }
        assert!(ray.energy_drift().unwrap() < 1e-9);
    }

    #[test]
    fn model_flow_is_translation() {
        let h = make_builtin(HamiltonianKind::ModelDxn, &BuiltinParams::default()).unwrap();
        let ray = integrate_ray(&h, &[0.5, -1.0], &[0.3, 0.7], 3.0, &[], &RayOptions::default()).unwrap();
        let s = ray.state_at(3.0).unwrap();
        assert!((s.x[1] - 2.0).abs() < 1e-13 && (s.x[0] - 0.5).abs() < 1e-13);
        assert!((s.action - 3.0 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn oscillator_focus_and_turning_point() {
        let h = oscillator();
        let ray = integrate_ray(
            &h,
            &[0.0, 0.0],
            &[1.0, 0.0],
            3.0,
            &[Tangent::momentum(vec![0.0, 1.0])],
            &RayOptions::default(),
        )
        .unwrap();
        let ev = conjugate_times(&ray).unwrap();
        let times: Vec<f64> = ev.iter().map(|e| e.t).collect();
        assert!(ev.iter().all(|e| e.multiplicity == 1), "{ev:?}");
        assert!(times.iter().any(|t| (t - PI / 2.0).abs() < 1e-6), "{times:?}");
        assert!(times.iter().any(|t| (t - PI / 4.0).abs() < 1e-6), "{times:?}");
        let (x, d) = exp_map(&h, &[0.0, 0.0], &[0.6, 0.8], PI / 2.0, 1e-11).unwrap();
        assert!(x.iter().all(|v| v.abs() < 1e-8));
        assert!(d.determinant().abs() < 1e-8);
    }

    #[test]
    fn straight_rays_have_no_events() {
        let ray = integrate_ray(
            &straight(),
            &[0.0, 0.0],
            &[0.6, 0.8],
            5.0,
            &[Tangent::momentum(vec![-0.8, 0.6])],
            &RayOptions::default(),
        )
        .unwrap();
        assert!(conjugate_times(&ray).unwrap().is_empty());
    }

    #[test]
    fn variational_matches_differences() {
        let h = make_builtin(
            HamiltonianKind::HelmholtzIndex,
            &BuiltinParams { index: Some(IndexProfile::MaxwellFishEye { scale: 1.0 }), ..Default::default() },
        )
        .unwrap();
        let x0 = [0.3, 0.2];
        let eta = [0.9, 0.5];
        let (_, d) = exp_map(&h, &x0, &eta, 1.0, 1e-12).unwrap();
        for j in 0..2 {
            let dd = 1e-5;
            let mut ep = eta;
            ep[j] += dd;
            let (xp, _) = exp_map(&h, &x0, &ep, 1.0, 1e-12).unwrap();
            ep[j] -= 2.0 * dd;
            let (xm, _) = exp_map(&h, &x0, &ep, 1.0, 1e-12).unwrap();
            for i in 0..2 {
                assert!((d[(i, j)] - (xp[i] - xm[i]) / (2.0 * dd)).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn escape_of_straight_rays() {
        let starts: Vec<_> = (0..16)
            .map(|j| {
                let a = 2.0 * PI * j as f64 / 16.0;
                (vec![0.0, 0.0], vec![a.cos(), a.sin()])
            })
            .collect();
        let t = escape_time(&straight(), &starts, 2.0, 10.0, 1e-10).unwrap();
        assert!((t - 2.0).abs() < 1e-9);
        let osc: Vec<_> = starts.iter().map(|(x, p)| (x.clone(), p.clone())).collect();
        assert!(matches!(escape_time(&oscillator(), &osc, 2.0, 20.0, 1e-10), Err(Error::Trapping(_))));
    }
}
