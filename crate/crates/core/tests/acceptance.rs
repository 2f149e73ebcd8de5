//! Acceptance criteria A1-A8 at their stated tolerances. Each test prints one
//! PASS/FAIL line; run with `--nocapture` to see the table.

use semiclassical_green::validate::{
    a1_helmholtz, a2_decomposition, a3_wavefront, a4_model, a5_eikonal, a6_caustics, a7_stationary_phase, a8_cutoffs,
    Criterion, ValidationConfig,
};

fn check(c: Criterion) {
    println!("{c}");
    assert!(c.pass, "{c}");
}

#[test]
fn a1_helmholtz_end_to_end() {
    check(a1_helmholtz(&ValidationConfig::default()));
}

#[test]
fn a2_u0_plus_u1() {
    check(a2_decomposition());
}

#[test]
fn a3_wave_front_decay() {
    check(a3_wavefront(&ValidationConfig::default()));
}

#[test]
fn a4_model_operator() {
    check(a4_model(&ValidationConfig::default()));
}

#[test]
fn a5_eikonal_identities() {
    check(a5_eikonal());
}

#[test]
fn a6_caustics_and_maslov() {
    check(a6_caustics());
}

#[test]
fn a7_stationary_phase_engine() {
    check(a7_stationary_phase());
}

#[test]
fn a8_cutoff_robustness() {
    check(a8_cutoffs(&ValidationConfig::default()));
}
