use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moment-glioma"))
        .args(args)
        .env("MOMENT_GLIOMA_THREADS", "1")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn strand_config(dir: &Path, model: &str) -> String {
    let path = dir.join(format!("{model}.cfg"));
    let text = format!(
        "[grid]\nnx = 12\nny = 12\nxmin = 0\nxmax = 3\nymin = 0\nymax = 3\n\n\
         [physics]\npreset = fiber_strand\neps = 0.5\nt_end = 0.1\n\n\
         [model]\nmodel = {model}\n\n\
         [output]\ntimes = 0.05, 0.1\ndir = {}\n",
        dir.join(model).display()
    );
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
    assert_eq!(bin(&[]).status.code(), Some(1));
    assert_eq!(bin(&["bogus"]).status.code(), Some(1));
    assert_eq!(bin(&["validate"]).status.code(), Some(1));
}

#[test]
fn spectrum_of_the_isotropic_state() {
    let o = bin(&["spectrum", "--qhat", "0,0,0", "--dw", "1,0,0,1,0,1", "--n", "1,0,0"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("-0.57735") && s.contains("0.57735"), "{s}");
    assert!(s.contains("diagonalizable = true"));
}

#[test]
fn spectrum_rejects_bad_input() {
    let o = bin(&["spectrum", "--qhat", "2,0,0", "--dw", "1,0,0,1,0,1", "--n", "1,0,0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin(&["spectrum", "--qhat", "0,0", "--dw", "1,0,0,1,0,1", "--n", "1,0,0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_prints_the_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["validate", "--config", &strand_config(dir.path(), "K1F")]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("eps (St) = 5.000000e-1"), "{s}");
    assert!(s.contains("grid = 12x12"), "{s}");
}

#[test]
fn missing_config_is_an_input_error() {
    let o = bin(&["validate", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = |model: &str| {
        let o = bin(&["simulate", "--config", &strand_config(dir.path(), model)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o).lines().map(str::to_owned).collect::<Vec<_>>()
    };
    let k = run("K1F");
    let d = run("diffusion");
    // one snapshot per output time, plus the manifest next to them
    assert_eq!(k.len(), 2, "{k:?}");
    let manifest = dir.path().join("K1F").join("fiber_strand_K1F_manifest.json");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    assert!(json.is_object());
    let last = |v: &[String]| v.iter().filter(|p| p.ends_with(".field2d")).last().unwrap().clone();
    let o = bin(&["compare", "--a", &last(&k), "--b", &last(&d)]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 1 + 144, "{}", &csv[..csv.len().min(200)]);
    // self comparison is exactly zero
    let o = bin(&["compare", "--a", &last(&k), "--b", &last(&k)]);
    assert!(stdout(&o).lines().skip(1).all(|l| l.ends_with(",0e0")));
}
