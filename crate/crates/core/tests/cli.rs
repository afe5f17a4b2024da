use std::path::Path;
use std::process::{Command, Output};

use syncot::artifact_io::{parse_config, read_density_csv, read_field, LOG_HEADER};
use syncot::problems::PresetId;

fn syncot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_syncot")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn golden(id: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{id}.txt"));
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn presets_list_and_show() {
    let o = syncot(&["presets", "list"]);
    assert_eq!(code(&o), 0);
    let ids: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(ids.len(), 7);
    assert!(ids.iter().any(|s| s == "fig4b_cos_radial"));

    for id in PresetId::ALL {
        let o = syncot(&["presets", "show", id.as_str()]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        assert_eq!(text, golden(id.as_str()), "{id} drifted from its golden expansion");
        parse_config(&text).unwrap();
    }
    assert_eq!(code(&syncot(&["presets", "show", "fig9_nonexistent"])), 1);
}

#[test]
fn validate_reports_bad_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.txt");
    std::fs::write(&good, "preset = \"fig3a_bump\"\nproblem.alpha = [0.9, 0.1]\n").unwrap();
    assert_eq!(code(&syncot(&["validate", "--config", good.to_str().unwrap()])), 0);

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "preset = \"fig3a_bump\"\n# weights\nproblem.alpha = [0.5, 0.6]\n").unwrap();
    let o = syncot(&["validate", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("simplex") && err.contains("line 3"), "{err}");

    let missing = dir.path().join("missing.txt");
    assert_eq!(code(&syncot(&["validate", "--config", missing.to_str().unwrap()])), 1);
}

#[test]
fn usage_errors() {
    assert_eq!(code(&syncot(&["solve"])), 64);
    assert_eq!(code(&syncot(&["solve", "--preset", "fig3a_bump", "--grid", "4x4"])), 64);
    assert_eq!(code(&syncot(&["solve", "--preset", "fig3a_bump", "--alpha", "0.5,0.6"])), 64);
    assert_eq!(code(&syncot(&["export", "--run", "x", "--what", "velocity", "--format", "csv"])), 64);
    let help = syncot(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(stdout(&help).contains("64 usage error"));
}

#[test]
fn capped_run_writes_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = syncot(&["solve", "--preset", "fig2_1d_quadratic", "--max-iters", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let log = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some(LOG_HEADER));
    assert!(lines.next().unwrap().starts_with("5,"));
    let rho = read_field(out.join("rho_final.sot1")).unwrap();
    assert_eq!(rho.shape(), &[64, 1, 33]);
    assert!(!out.join("n_final.sot1").exists());
}

#[test]
fn config_file_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    let out = dir.path().join("out");
    std::fs::write(
        &cfg,
        "preset = \"fig3b_sine\"\ngrid.shape = [10, 10, 5]\nsolver.max_iters = 40\noutput.snapshot_stride = 20\n",
    )
    .unwrap();
    let o = syncot(&["solve", "--config", cfg.to_str().unwrap(), "--max-iters", "60", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let dumped = parse_config(&std::fs::read_to_string(out.join("config.txt")).unwrap()).unwrap();
    assert_eq!(dumped.shape, [10, 10, 5]);
    assert_eq!(dumped.solver.max_iters, 60);
    for it in [20, 40, 60] {
        assert!(out.join(format!("snapshots/rho_iter{it:06}.sot1")).exists());
    }
    let pts = read_field(out.join("secondary_points.sot1")).unwrap();
    assert_eq!(pts.shape(), &[100, 3]);
}

#[test]
fn converged_fig3a_run_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run1");
    let o = syncot(&["solve", "--preset", "fig3a_bump", "--alpha", "0.95,0.05", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["config.txt", "convergence.csv", "rho_final.sot1", "m_final.sot1", "n_final.sot1", "secondary_points.sot1"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    let log = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    for line in log.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[4], "", "h_value must be empty in Monge mode");
        for (i, c) in cells.iter().enumerate().filter(|(i, _)| *i != 4) {
            let v: f64 = c.parse().unwrap_or_else(|_| panic!("column {i} of `{line}`"));
            assert!(v.is_finite());
        }
    }

    let exp = dir.path().join("csv");
    let o = syncot(&["export", "--run", out.to_str().unwrap(), "--what", "density", "--format", "csv", "--out", exp.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let rho = read_field(out.join("rho_final.sot1")).unwrap();
    assert_eq!(rho.shape(), &[32, 32, 17]);
    for k in [0, 8, 16] {
        let slab = read_density_csv(exp.join(format!("density_t{k:03}.csv"))).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(slab[(i, j)].to_bits(), rho[[i, j, k]].to_bits());
            }
        }
    }

    let o = syncot(&["export", "--run", out.to_str().unwrap(), "--what", "log", "--format", "sot1", "--out", exp.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let table = read_field(exp.join("convergence.sot1")).unwrap();
    assert_eq!(table.shape()[1], 6);
    assert_eq!(table.shape()[0], log.lines().count() - 1);

    let o = syncot(&["export", "--run", dir.path().join("nothing").to_str().unwrap(), "--what", "density", "--format", "csv"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn convergence_log_reads_back_with_a_csv_reader() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("k");
    let o = syncot(&[
        "solve", "--preset", "fig5b_cividis_waves", "--grid", "6x6x3", "--max-iters", "20", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let mut rdr = csv::Reader::from_path(out.join("convergence.csv")).unwrap();
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(headers.join(","), LOG_HEADER);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.iter().all(|c| c.parse::<f64>().map(f64::is_finite).unwrap_or(false)), "{r:?}");
    }
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = dir.path().join(name);
        let o = syncot(&[
            "solve", "--preset", "fig4b_cos_radial", "--grid", "8x8x4", "--max-iters", "25", "--seed", "7", "--threads",
            threads, "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 2);
        let files: Vec<Vec<u8>> = ["convergence.csv", "rho_final.sot1", "m_final.sot1", "n_final.sot1"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
