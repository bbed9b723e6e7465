use std::path::Path;
use std::process::Command;

const HOMOGENEOUS: &str = r#"
F = [[2.0, 0.0], [0.0, 0.5]]
[spec]
model = "neo-hookean"
[spec.phase]
kind = "constant"
mu_low = 1.0
"#;

const LAMINATE: &str = r#"
F = [[1.0, 0.5], [0.0, 1.0]]
[spec]
model = "neo-hookean"
[spec.phase]
kind = "laminate"
axis = 1
theta = 0.5
mu_low = 1.0
mu_high = 10.0
"#;

fn cellhom(dir: &Path, command: &str, config: &str, extra: &[&str]) -> (i32, String, String) {
    let path = dir.join(format!("{command}.toml"));
    std::fs::write(&path, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cellhom"))
        .arg(command)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn cell_report_has_stamp_config_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{HOMOGENEOUS}\n[cell]\nm = 4\nwrite_field = true\n");
    let (code, stdout, _) = cellhom(dir.path(), "cell", &config, &[]);
    assert_eq!(code, 0, "{stdout}");
    let json = read_json(&dir.path().join("out/cell.json"));
    assert!(json["version"].as_str().unwrap().starts_with("cellhom "));
    assert_eq!(json["config"]["cell"]["m"], 4);
    assert_eq!(json["config"]["spec"]["model"], "neo-hookean");
    assert!((json["report"]["value"].as_f64().unwrap() - 1.125).abs() < 1e-12);
    let csv = std::fs::read_to_string(dir.path().join("out/cell.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n,k,m,value,grad_norm,constraint_residual,iterations,converged"
    );
    assert!(lines.next().unwrap().starts_with("64,1,4,1.125,"));
    assert!(dir.path().join("out/cell_field.csv").exists());
}

#[test]
fn configuration_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let off = HOMOGENEOUS.replace("0.5]]", "1.0]]");
    let (code, _, stderr) = cellhom(dir.path(), "cell", &off, &[]);
    assert_eq!(code, 3);
    assert!(stderr.contains("det F ≠ 1"), "{stderr}");

    let (code, _, stderr) = cellhom(dir.path(), "cell", &format!("bogus = 1\n{HOMOGENEOUS}"), &[]);
    assert_eq!(code, 3);
    assert!(stderr.contains("bogus"), "{stderr}");

    let wrong = format!("command = \"recover\"\n{HOMOGENEOUS}");
    assert_eq!(cellhom(dir.path(), "cell", &wrong, &[]).0, 3);

    let out = Command::new(env!("CARGO_BIN_EXE_cellhom")).arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn off_sigma_flag_admits_penalty_solves() {
    let dir = tempfile::tempdir().unwrap();
    let off = format!("{}\n[cell]\nm = 4\nn = 10.0\n", HOMOGENEOUS.replace("0.5]]", "1.0]]"));
    let (code, stdout, stderr) = cellhom(dir.path(), "cell", &off, &["--allow-off-sigma"]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    let json = read_json(&dir.path().join("out/cell.json"));
    // Average det is 2 for every zero-boundary field.
    assert!(json["report"]["value"].as_f64().unwrap() >= 10.0);
}

#[test]
fn strict_mode_reports_non_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("strict = true\n{LAMINATE}\n[cell]\nm = 4\n[solver]\nmax_iterations = 2\nouter_iterations = 1\n");
    assert_eq!(cellhom(dir.path(), "cell", &config, &[]).0, 2);
    let relaxed = config.replace("strict = true", "strict = false");
    assert_eq!(cellhom(dir.path(), "cell", &relaxed, &[]).0, 0);
}

#[test]
fn homogenize_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{LAMINATE}\n[schedule]\nn_values = [1.0, 8.0]\nk_values = [1, 2]\nm_values = [4]\nstarts = 2\n");
    let mut csv = Vec::new();
    for _ in 0..2 {
        let (code, stdout, stderr) = cellhom(dir.path(), "homogenize", &config, &["--threads", "1", "--seed", "5"]);
        assert_eq!(code, 0, "{stdout}{stderr}");
        csv.push(std::fs::read(dir.path().join("out/homogenize.csv")).unwrap());
    }
    assert_eq!(csv[0], csv[1]);
    let text = String::from_utf8(csv[0].clone()).unwrap();
    // Four penalty rows, two constrained rows.
    assert_eq!(text.lines().count(), 7);
    assert_eq!(text.lines().filter(|l| l.starts_with("inf,")).count(), 2);
    let json = read_json(&dir.path().join("out/homogenize.json"));
    assert_eq!(json["config"]["seed"], 5);
    assert!(json["report"]["estimate_w_hom"].as_f64().is_some());
}

#[test]
fn recover_refuses_coarse_quadrature() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{HOMOGENEOUS}\n[recovery]\neps_values = [0.25, 0.125]\npoints_per_side = 32\n");
    let (code, _, stderr) = cellhom(dir.path(), "recover", &config, &[]);
    assert_eq!(code, 3);
    assert!(stderr.contains("cannot resolve"), "{stderr}");
}

#[test]
fn recover_writes_plot_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{HOMOGENEOUS}\n[recovery]\neps_values = [0.5, 0.25]\nk_values = [1]\nm = 4\n");
    let (code, stdout, stderr) = cellhom(dir.path(), "recover", &config, &[]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    let csv = std::fs::read_to_string(dir.path().join("out/recover.csv")).unwrap();
    assert!(csv.starts_with("eps,energy,bound,det_residual,l1_distance\n"));
    assert_eq!(csv.lines().count(), 3);
    let json = read_json(&dir.path().join("out/recover.json"));
    assert_eq!(json["report"]["passed"], true);
}

#[test]
fn check_passes_on_homogeneous_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = cellhom(dir.path(), "check", HOMOGENEOUS, &[]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 7, "{stdout}");
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn failed_check_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // c = 1 is far too small for the growth bounds of this density.
    let config = LAMINATE.replace("model = \"neo-hookean\"", "model = \"neo-hookean\"\nc = 1.0");
    let config = format!("{config}\n[check]\ngrowth_samples = 2\nrank_one_samples = 1\nquasiconvexity_fields = 1\ncommutation_n = [8.0]\nm = 4\n");
    let (code, stdout, _) = cellhom(dir.path(), "check", &config, &[]);
    assert_eq!(code, 1, "{stdout}");
    assert!(stdout.contains("FAIL  1 density assumptions"), "{stdout}");
}
