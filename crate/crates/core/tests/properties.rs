use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use semiclassical_green::cli::fmt_f64;
use semiclassical_green::green::{smooth_step, CutoffSpec, TimeKernel};
use semiclassical_green::hamiltonians::{make_builtin, BuiltinParams, HamiltonianKind, IndexProfile, Potential};
use semiclassical_green::phase::maslov_factor;
use semiclassical_green::rayflow::{integrate_ray, RayOptions};

fn fish_eye() -> semiclassical_green::hamiltonians::HamiltonianSpec {
    make_builtin(
        HamiltonianKind::HelmholtzIndex,
        &BuiltinParams { index: Some(IndexProfile::MaxwellFishEye { scale: 1.0 }), energy: Some(1.0), ..Default::default() },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn step_is_monotone_and_symmetric(a in -0.5f64..1.5, b in -0.5f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(smooth_step(lo) <= smooth_step(hi));
        prop_assert!((smooth_step(a) + smooth_step(1.0 - a) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cutoffs_are_flat_where_stated(s in 0.0f64..2.0, t in 0.0f64..0.05) {
        let c = CutoffSpec::new(4.0, 0.1, 4.0).unwrap();
        prop_assert_eq!(c.chi_tilde0(s), 1.0);
        prop_assert_eq!(c.chi0(t), 1.0);
        prop_assert_eq!(c.chi0(t) + (1.0 - c.chi0(t)), 1.0);
        prop_assert_eq!(c.chi_horizon(4.0 + s), 0.0);
    }

    #[test]
    fn kernel_is_hermitian(lambda in -5.0f64..5.0) {
        let k = TimeKernel::new(0.05, 0.1, 0.1, 5.0);
        prop_assert!((k.at(-lambda) - k.at(lambda).conj()).norm() < 1e-13);
    }

    #[test]
    fn maslov_factor_has_period_four(mu in 0u32..100) {
        prop_assert_eq!(maslov_factor(mu + 4), maslov_factor(mu));
        prop_assert_eq!(maslov_factor(mu + 1), maslov_factor(mu) * Complex64::new(0.0, -1.0));
    }

    #[test]
    fn csv_numbers_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fish_eye_rays_conserve_energy(psi in 0.7f64..(2.0 * PI - 0.7), x in -0.5f64..0.5) {
        let h = fish_eye();
        let x0 = [x, 0.2];
        let n0 = 2.0 / (1.0 + x0[0] * x0[0] + x0[1] * x0[1]);
        let p0 = [n0 * psi.cos(), n0 * psi.sin()];
        let ray = integrate_ray(&h, &x0, &p0, 2.0, &[], &RayOptions::default()).unwrap();
        prop_assert!(ray.energy_drift().unwrap() <= 1e-9);
    }

    #[test]
    fn oscillator_rays_satisfy_maupertuis(psi in 0.0f64..(2.0 * PI)) {
        let h = make_builtin(
            HamiltonianKind::Schrodinger,
            &BuiltinParams { potential: Some(Potential::Harmonic { coefficient: 1.0 }), energy: Some(2.0), ..Default::default() },
        )
        .unwrap();
        // start on H0 = |p|² + |x|² − 2 = 0
        let r = (2.0f64 - 0.09).sqrt();
        let ray = integrate_ray(&h, &[0.3, 0.0], &[r * psi.cos(), r * psi.sin()], 3.0, &[], &RayOptions::default()).unwrap();
        for s in ray.nodes() {
            let kinetic = s.p[0] * s.p[0] + s.p[1] * s.p[1];
            let slack = 2.0 - s.x[0] * s.x[0] - s.x[1] * s.x[1];
            prop_assert!(slack > -1e-9);
            prop_assert!((slack - kinetic).abs() < 1e-8);
        }
    }
}
