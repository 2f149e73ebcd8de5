use semiclassical_green::green::{wavefront_estimate, AssemblerOptions, CutoffSpec, GreenAssembler, SourceSpec};
use semiclassical_green::hamiltonians::{make_builtin, BuiltinParams, HamiltonianKind};
use semiclassical_green::lagrangian::{flow_out, FlowGrid};
use semiclassical_green::rayflow::{integrate_ray, RayOptions, Tangent};
use semiclassical_green::reference::RadialProfile;
use semiclassical_green::validate::{baseline_cutoffs, fish_eye_level, helmholtz_assembler, helmholtz_profile};

const POINTS: [[f64; 2]; 3] = [[1.0, 0.5], [-0.6, 1.2], [0.2, -1.6]];

#[test]
fn cutoff_changes_scale_with_h() {
    let mut ratios = Vec::new();
    for h in [0.1, 0.05, 0.025] {
        let a = helmholtz_assembler(helmholtz_profile(), baseline_cutoffs(), h).unwrap();
        let b = helmholtz_assembler(helmholtz_profile(), CutoffSpec { delta_tau: 6.0, eps0: 0.15, horizon: 4.0 }, h).unwrap();
        let r = POINTS
            .iter()
            .map(|x| {
                let u = a.assemble(x).unwrap().total;
                (b.assemble(x).unwrap().total - u).norm() / (h * u.norm())
            })
            .fold(0.0, f64::max);
        ratios.push(r);
    }
    eprintln!("Δu/(h|u|) per h: {ratios:?}");
    assert!(ratios.iter().all(|r| *r < 5.0), "{ratios:?}");
}

#[test]
fn widening_eps0_keeps_transient_plus_wave() {
    let h = 0.05;
    let a = helmholtz_assembler(helmholtz_profile(), baseline_cutoffs(), h).unwrap();
    let b = helmholtz_assembler(helmholtz_profile(), CutoffSpec { eps0: 0.2, ..baseline_cutoffs() }, h).unwrap();
    for x in POINTS {
        let u = a.assemble(&x).unwrap();
        let v = b.assemble(&x).unwrap();
        assert_eq!(u.boundary, v.boundary);
        let s = u.transient + u.wave;
        assert!((v.transient + v.wave - s).norm() < 5.0 * h * s.norm());
    }
}

#[test]
fn wave_front_of_point_source() {
    let nodes: Vec<[f64; 2]> = vec![[0.0, 0.0], [1.0, 0.0], [0.0, -1.5], [1.2, 1.2]];
    let grids: Vec<_> = [0.1, 0.05]
        .iter()
        .map(|&h| helmholtz_assembler(RadialProfile::PolyGaussian { power: 6 }, baseline_cutoffs(), h).unwrap().field(&nodes).unwrap())
        .collect();
    let a = helmholtz_assembler(RadialProfile::PolyGaussian { power: 6 }, baseline_cutoffs(), 0.1).unwrap();
    let w = wavefront_estimate(&grids, a.flow.as_ref(), &[[0.0, 0.0]], 0.25).unwrap();
    assert!(w.pass);
    // the wave part does not decay anywhere on the flow-out
    assert!(w.slow.iter().all(|s| *s));
    // the boundary part is slow only at the source
    assert!(w.boundary_exponents[0] < 3.0);
    assert!(w.boundary_exponents[1..].iter().all(|e| *e >= 3.0), "{:?}", w.boundary_exponents);
    assert!(wavefront_estimate(&grids[..1], None, &[], 0.25).is_err());
}

#[test]
fn zero_source_decays_everywhere() {
    let hm = make_builtin(HamiltonianKind::Free, &BuiltinParams { energy: Some(1.0), ..Default::default() }).unwrap();
    let nodes = vec![[0.5, 0.5], [1.5, 0.0]];
    let grids: Vec<_> = [0.1, 0.05]
        .iter()
        .map(|&h| {
            GreenAssembler::new(hm.clone(), SourceSpec::zero([0.0, 0.0]), baseline_cutoffs(), h, AssemblerOptions::default())
                .unwrap()
                .field(&nodes)
                .unwrap()
        })
        .collect();
    let w = wavefront_estimate(&grids, None, &[], 0.25).unwrap();
    assert!(w.slow.iter().all(|s| !*s));
}

#[test]
fn additivity_is_exact() {
    let a = helmholtz_assembler(helmholtz_profile(), baseline_cutoffs(), 0.1).unwrap();
    let g = a.field(&POINTS).unwrap();
    for v in &g.values {
        assert_eq!(v.total, v.boundary + v.transient + v.wave);
    }
}

#[test]
fn splitting_a_ray_keeps_action_phase_and_index() {
    let level = fish_eye_level(16).unwrap();
    let flow = flow_out(&level, 5.0, FlowGrid::default()).unwrap();
    let h = flow.hamiltonian().clone();
    let lp = &level.samples[5];
    let t_end = flow.conjugate_events(5)[0].t + 0.7;
    let tangent = [Tangent { dx: lp.dx_dpsi.to_vec(), dp: lp.dp_dpsi.to_vec() }];
    let whole = integrate_ray(&h, &lp.x, &lp.p, t_end, &tangent, &RayOptions { initial_action: lp.action, ..Default::default() }).unwrap();
    let t_mid = 0.37 * t_end;
    let first = integrate_ray(&h, &lp.x, &lp.p, t_mid, &tangent, &RayOptions { initial_action: lp.action, ..Default::default() }).unwrap();
    let s = first.state_at(t_mid).unwrap();
    let carried = [Tangent { dx: s.mx.column(0).iter().copied().collect(), dp: s.mp.column(0).iter().copied().collect() }];
    let second = integrate_ray(&h, &s.x, &s.p, t_end - t_mid, &carried, &RayOptions { initial_action: s.action, ..Default::default() }).unwrap();
    let a = whole.state_at(t_end).unwrap();
    let b = second.state_at(t_end - t_mid).unwrap();
    assert!((a.action - b.action).abs() < 1e-8);
    assert!((a.theta - (s.theta + b.theta)).abs() < 1e-12);
    assert_eq!(a.maslov, s.maslov + b.maslov);
    assert_eq!(a.maslov, 1);
}
