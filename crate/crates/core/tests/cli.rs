use std::path::PathBuf;
use std::process::Command;

fn sgf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sgf"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("sgf-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn trapping_oscillator_exits_4() {
    let out = sgf().arg("rays").arg(config("oscillator.toml")).arg("--out").arg(scratch("osc")).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-trapping violated"));
}

#[test]
fn empty_h_list_exits_2() {
    let dir = scratch("empty");
    std::fs::create_dir_all(&dir).unwrap();
    let text = std::fs::read_to_string(config("helmholtz.toml")).unwrap().replace("h = [0.1, 0.05, 0.025]", "h = []");
    let cfg = dir.join("empty.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = sgf().arg("field").arg(&cfg).arg("--out").arg(dir.join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn field_is_reproducible_across_worker_counts() {
    let text = std::fs::read_to_string(config("helmholtz.toml")).unwrap().replace("h = [0.1, 0.05, 0.025]", "h = [0.1, 0.05]");
    let dir = scratch("repro");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, text).unwrap();
    for w in ["1", "3"] {
        let out = sgf().env("SGF_WORKERS", w).arg("field").arg(&cfg).arg("--out").arg(dir.join(w)).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["field_h0.csv", "field_h1.csv", "wavefront.csv", "manifest.toml"] {
        let a = std::fs::read(dir.join("1").join(f)).unwrap();
        let b = std::fs::read(dir.join("3").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let manifest = std::fs::read_to_string(dir.join("1").join("manifest.toml")).unwrap();
    for key in ["delta_tau", "eps0", "horizon", "quad_tol", "flow_tol", "config_sha256"] {
        assert!(manifest.contains(key), "{key} missing from manifest");
    }
}

#[test]
fn geometry_subcommands_write_csv() {
    let dir = scratch("geom");
    for sub in ["rays", "flowout", "arrivals"] {
        let out = sgf().arg(sub).arg(config("fish_eye.toml")).arg("--out").arg(&dir).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let arrivals = std::fs::read_to_string(dir.join("arrivals.csv")).unwrap();
    assert!(arrivals.starts_with("point,x1,x2,t,psi"));
    assert!(arrivals.lines().count() > 3);
    let events = std::fs::read_to_string(dir.join("conjugate_events.csv")).unwrap();
    assert!(events.lines().count() > 1);
}

#[test]
fn bad_worker_override_is_a_config_error() {
    let out = sgf().env("SGF_WORKERS", "zero").arg("rays").arg(config("fish_eye.toml")).arg("--out").arg(scratch("w")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
