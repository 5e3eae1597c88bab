use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
seed = 9
[grid]
nx = 17
ny = 17
[measure]
m_per_axis = 4
decay = 2.0
[estimator]
samples = 40
[experiment]
k_range = [1, 2, 4]
r = 2
n_init = 3
n_seq = 4
repetitions = 1
grid_res = 5
b_grid = [5, 10, 20, 40]
converge_seeds = 2
"#;

struct Run {
    _tmp: tempfile::TempDir,
    config: PathBuf,
    out: PathBuf,
}

fn setup(functional: &str) -> Run {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, format!("{BASE}[functional]\n{functional}\n")).unwrap();
    let out = tmp.path().join("out");
    Run { _tmp: tmp, config, out }
}

impl Run {
    fn asm(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_asm"))
            .args(args)
            .arg("--config")
            .arg(&self.config)
            .arg("--out")
            .arg(&self.out)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.asm(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn csv(&self, name: &str) -> (String, Vec<Vec<String>>) {
        read_csv(&self.out.join(name))
    }
}

fn read_csv(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    (
        header,
        lines.map(|l| l.split(',').map(str::to_string).collect()).collect(),
    )
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

const QUADRATIC: &str = "type = \"quadratic\"\nkl_modes = [0, 1, 2]\ncoefficients = [3.0, 2.0, 1.0]";

#[test]
fn linear_functional_spectrum_has_one_row() {
    let r = setup("type = \"linear\"\nh1 = { kl_mode = 0 }\nh2 = { kl_mode = 2, scale = 0.5 }");
    r.ok(&["estimate"]);
    let (header, rows) = r.csv("spectrum.csv");
    assert_eq!(header, "index,eigenvalue");
    assert_eq!(rows.len(), 1);
    // |φ₀ + ½φ₂|² with orthonormal modes.
    assert!((num(&rows[0][1]) - 1.25).abs() < 1e-10, "{rows:?}");
}

#[test]
fn ridge_scatter_determines_the_value() {
    let r = setup("type = \"ridge\"\nkl_modes = [1, 3]\nprofile = \"half_squares\"");
    r.ok(&["estimate"]);
    r.ok(&["project", "--dim", "2"]);
    let (header, rows) = r.csv("scatter.csv");
    assert_eq!(header, "x1,x2,f");
    assert_eq!(rows.len(), 40);
    for row in &rows {
        let (x1, x2, f) = (num(&row[0]), num(&row[1]), num(&row[2]));
        assert!(
            (f - 0.5 * (x1 * x1 + x2 * x2)).abs() < 1e-10 * (1.0 + f.abs()),
            "{row:?}"
        );
    }
    let (header, rows) = r.csv("surface.csv");
    assert_eq!(header, "x1,x2,mean");
    assert_eq!(rows.len(), 25);
}

#[test]
fn knn_rows_follow_k_range() {
    let r = setup(QUADRATIC);
    r.ok(&["estimate"]);
    r.ok(&["knn"]);
    let (header, rows) = r.csv("knn.csv");
    assert_eq!(header, "K,mse_l2,mse_as");
    let ks: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ks, ["1", "2", "4"]);
    assert!(rows.iter().all(|r| num(&r[1]) >= 0.0 && num(&r[2]) >= 0.0));
}

#[test]
fn bo_single_repetition() {
    let r = setup(QUADRATIC);
    r.ok(&["bo"]);
    let (header, traces) = r.csv("bo_traces.csv");
    assert_eq!(header, "iteration,best,method,seed");
    // Per method: the origin, n_init initial designs and n_seq steps.
    for method in ["ASM", "Rand"] {
        let rows: Vec<_> = traces.iter().filter(|t| t[2] == method).collect();
        assert_eq!(rows.len(), 1 + 3 + 4, "{method}");
        let best: Vec<f64> = rows.iter().map(|t| num(&t[1])).collect();
        assert!(
            best.windows(2).all(|w| w[1] <= w[0]),
            "{method} best is not monotone: {best:?}"
        );
    }
    let (header, summary) = r.csv("bo_summary.csv");
    assert_eq!(header, "iteration,p10,p50,p90,method");
    for row in summary {
        assert_eq!(row[1], row[2]);
        assert_eq!(row[2], row[3]);
    }
}

#[test]
fn gradcheck_and_converge_outputs() {
    let r = setup(QUADRATIC);
    r.ok(&["gradcheck"]);
    let (header, rows) = r.csv("gradcheck.csv");
    assert_eq!(header, "direction,finite_difference,directional,relative_error");
    assert_eq!(rows.len(), 10);
    r.ok(&["converge"]);
    let (header, rows) = r.csv("convergence.csv");
    assert_eq!(header, "B,mean_error,min_error,max_error");
    let bs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(bs, ["5", "10", "20", "40"]);
    assert!(r.out.join("convergence.json").exists());
}

#[test]
fn seed_override_changes_output() {
    let r = setup(QUADRATIC);
    r.ok(&["estimate"]);
    let a = std::fs::read(r.out.join("spectrum.csv")).unwrap();
    r.ok(&["estimate", "--seed", "123"]);
    let b = std::fs::read(r.out.join("spectrum.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn config_errors_exit_2() {
    let r = setup("type = \"quadratic\"\nkl_modes = [0, 99]\ncoefficients = [1.0, 1.0]");
    let o = r.asm(&["estimate"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("functional.kl_modes"), "{err}");

    let r = setup("type = \"cubic\"");
    assert_eq!(r.asm(&["estimate"]).status.code(), Some(2));

    // Unknown flag is rejected by the argument parser.
    let r = setup(QUADRATIC);
    assert_eq!(r.asm(&["estimate", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_config_exits_nonzero() {
    let r = setup(QUADRATIC);
    std::fs::remove_file(&r.config).unwrap();
    let o = r.asm(&["estimate"]);
    assert!(!o.status.success());
    assert!(!r.out.join("estimate.json").exists());
}

#[test]
fn solver_failure_exits_3() {
    let r = setup("type = \"poisson_control\"\nsolver_max_iter = 1");
    let o = r.asm(&["estimate"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!r.out.join("estimate.json").exists());
}

#[test]
fn failed_command_leaves_no_partial_files() {
    // Too few samples for the surface fit: scatter.csv is written first and
    // must be removed when the fit is rejected.
    let r = setup(QUADRATIC);
    let text = std::fs::read_to_string(&r.config)
        .unwrap()
        .replace("samples = 40", "samples = 6");
    std::fs::write(&r.config, text).unwrap();
    r.ok(&["estimate"]);
    let o = r.asm(&["project", "--dim", "2"]);
    assert!(!o.status.success());
    assert!(!r.out.join("scatter.csv").exists());
    assert!(!r.out.join("surface.csv").exists());
    assert!(r.out.join("estimate.json").exists());
}

#[test]
fn project_without_estimate_fails() {
    let r = setup(QUADRATIC);
    let o = r.asm(&["project"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            active_subspace::cli::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
