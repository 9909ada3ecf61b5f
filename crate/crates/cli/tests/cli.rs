use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

fn robimpute(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robimpute"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Rank one 6x6 matrix with two missing cells and a large spike at (2, 3).
fn planted_csv() -> String {
    let u = [1.0, -0.5, 0.8, 1.2, -1.0, 0.3];
    let v = [0.9, 1.1, -0.7, 0.4, 1.3, -0.2];
    let mut lines = Vec::new();
    for i in 0..6 {
        let row: Vec<String> = (0..6)
            .map(|j| match (i, j) {
                (0, 5) => "NA".to_string(),
                (4, 1) => String::new(),
                (2, 3) => format!("{}", u[i] * v[j] + 25.0),
                _ => format!("{}", u[i] * v[j]),
            })
            .collect();
        lines.push(row.join(","));
    }
    lines.join("\n") + "\n"
}

const FULL: &str = "1.5,2,-0.25\n0.5,3.75,1\n-2,0.125,4\n";

#[test]
fn zero_gamma_soft_on_full_data_returns_input() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "full.csv", FULL);
    let out = dir.path().join("out");
    let res = robimpute(&[
        "complete",
        s(&input),
        "--gamma",
        "0",
        "--no-robust",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let got = read_csv(&out.join("completed.csv"));
    let want: Vec<Vec<f64>> = FULL
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    for (g, w) in got.iter().flatten().zip(want.iter().flatten()) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn huge_gamma_gives_zero_matrix() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "planted.csv", &planted_csv());
    let out = dir.path().join("out");
    let res = robimpute(&[
        "complete",
        s(&input),
        "--gamma",
        "1e6",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0);
    let got = read_csv(&out.join("completed.csv"));
    assert_eq!(got.len(), 6);
    assert!(got.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn default_path_on_planted_fixture_converges_everywhere() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "planted.csv", &planted_csv());
    let out = dir.path().join("out");
    let res = robimpute(&[
        "complete",
        s(&input),
        "--method",
        "both",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("completed_robust.csv").exists());
    assert!(out.join("completed_soft.csv").exists());

    let diag = read_json(&out.join("diagnostics.json"));
    let entries = diag.as_array().unwrap();
    assert_eq!(entries.len(), 40);
    for e in entries {
        for field in [
            "method",
            "gamma",
            "c",
            "iterations",
            "svd_count",
            "final_rank",
            "objective_final",
            "converged",
        ] {
            assert!(e.get(field).is_some(), "missing {field}");
        }
        assert_eq!(e["converged"], Value::Bool(true));
    }
    let robust_c: Vec<_> = entries
        .iter()
        .filter(|e| e["method"] == "robust")
        .map(|e| &e["c"])
        .collect();
    assert!(robust_c.iter().all(|c| c.is_f64()));
    assert!(entries
        .iter()
        .filter(|e| e["method"] == "soft")
        .all(|e| e["c"].is_null()));
}

#[test]
fn generous_cutoff_flags_no_outliers() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "planted.csv", &planted_csv());
    let out = dir.path().join("out");
    let res = robimpute(&["outliers", s(&input), "--c", "1e6", "--out-dir", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(
        fs::read_to_string(out.join("outliers.csv")).unwrap(),
        "row,col,value\n"
    );
    assert!(read_csv(&out.join("sparse.csv"))
        .iter()
        .flatten()
        .all(|&v| v == 0.0));
}

#[test]
fn planted_spike_ranks_first_and_support_stays_observed() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "planted.csv", &planted_csv());
    let out = dir.path().join("out");
    let res = robimpute(&[
        "outliers",
        s(&input),
        "--gamma-path",
        "20,5,2",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));

    let text = fs::read_to_string(out.join("outliers.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("row,col,value"));
    let rows: Vec<(usize, usize, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
            )
        })
        .collect();
    assert!(!rows.is_empty());
    assert_eq!((rows[0].0, rows[0].1), (2, 3));
    assert!(rows[0].2 > 0.0);
    for &(i, j, v) in &rows {
        assert!(
            (i, j) != (0, 5) && (i, j) != (4, 1),
            "outlier at a missing cell"
        );
        assert!(v != 0.0);
    }
    for w in rows.windows(2) {
        assert!(w[0].2.abs() >= w[1].2.abs());
    }
    let sparse = read_csv(&out.join("sparse.csv"));
    assert_eq!(sparse[0][5], 0.0);
    assert_eq!(sparse[4][1], 0.0);
}

#[test]
fn simulate_smoke_is_fast_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let start = Instant::now();
        let res = robimpute(&[
            "simulate",
            "--n",
            "20",
            "-r",
            "2",
            "--replicates",
            "2",
            "--seed",
            "7",
            "--allow-nonconverged",
            "--out-dir",
            s(&out),
        ]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        assert!(start.elapsed().as_secs_f64() < 10.0);
        out
    };
    let a = run("a");
    let b = run("b");
    let csv = fs::read(a.join("results.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("results.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("summary.json")).unwrap(),
        fs::read(b.join("summary.json")).unwrap()
    );
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("setting_id,replicate,method,gamma_index,fitted_rank,training_error,test_error,svd_count")
    );
    // 2 replicates x 2 methods x 20 path points
    assert_eq!(text.lines().count(), 1 + 80);
}

#[test]
fn replay_reproduces_outputs_bit_for_bit() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "planted.csv", &planted_csv());
    let first = dir.path().join("first");
    let res = robimpute(&[
        "outliers",
        s(&input),
        "--gamma-count",
        "6",
        "--out-dir",
        s(&first),
    ]);
    assert_eq!(code(&res), 0);

    let manifest_path = first.join("manifest.json");
    let manifest = read_json(&manifest_path);
    assert_eq!(manifest["command"], "outliers");
    assert_eq!(manifest["inputs"][0]["bytes"], planted_csv().len());
    assert_eq!(manifest["config"]["path"]["gamma_count"], 6);

    let second = dir.path().join("second");
    let res = robimpute(&["replay", s(&manifest_path), "--out-dir", s(&second)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let outputs: Vec<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(
        outputs,
        [
            "sparse.csv",
            "outliers.csv",
            "completed.csv",
            "diagnostics.json"
        ]
    );
    for name in &outputs {
        assert_eq!(
            fs::read(first.join(name)).unwrap(),
            fs::read(second.join(name)).unwrap(),
            "{name}"
        );
    }

    fs::write(&input, "1,2\n3,4\n").unwrap();
    let res = robimpute(&[
        "replay",
        s(&manifest_path),
        "--out-dir",
        s(&dir.path().join("third")),
    ]);
    assert_eq!(code(&res), 2);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let good = write(dir.path(), "planted.csv", &planted_csv());
    let out = dir.path().join("out");

    assert_eq!(code(&robimpute(&["complete"])), 1);
    assert_eq!(
        code(&robimpute(&["complete", s(&good), "--method", "fancy"])),
        1
    );
    assert_eq!(
        code(&robimpute(&[
            "complete",
            s(&good),
            "--gamma",
            "-1",
            "--out-dir",
            s(&out)
        ])),
        1
    );
    assert_eq!(code(&robimpute(&["--help"])), 0);

    let ragged = write(dir.path(), "ragged.csv", "1,2,3\n4,5\n");
    assert_eq!(
        code(&robimpute(&["complete", s(&ragged), "--out-dir", s(&out)])),
        2
    );
    let text = write(dir.path(), "text.csv", "1,x\n2,3\n");
    assert_eq!(
        code(&robimpute(&["complete", s(&text), "--out-dir", s(&out)])),
        2
    );
    let missing = dir.path().join("absent.csv");
    assert_eq!(
        code(&robimpute(&["complete", s(&missing), "--out-dir", s(&out)])),
        2
    );

    let capped = dir.path().join("capped");
    let args = [
        "complete",
        s(&good),
        "--gamma",
        "0.5",
        "--max-iters",
        "1",
        "--out-dir",
        s(&capped),
    ];
    assert_eq!(code(&robimpute(&args)), 3);
    assert!(capped.join("completed.csv").exists());
    assert!(capped.join("manifest.json").exists());
    let mut allowed = args.to_vec();
    allowed.push("--allow-nonconverged");
    assert_eq!(code(&robimpute(&allowed)), 0);
}

#[test]
fn header_and_na_tokens_are_read() {
    let dir = TempDir::new().unwrap();
    let input = write(dir.path(), "h.csv", "a,b\n1,NA\n,4\n");
    let out = dir.path().join("out");
    let res = robimpute(&[
        "complete",
        s(&input),
        "--header",
        "--gamma",
        "0.1",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(read_csv(&out.join("completed.csv")).len(), 2);
    let res = robimpute(&[
        "complete",
        s(&input),
        "--gamma",
        "0.1",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 2);
}

fn gradient_pgm(n: usize) -> Vec<u8> {
    let mut bytes = format!("P5\n# test image\n{n} {n}\n255\n").into_bytes();
    for i in 0..n {
        for j in 0..n {
            let v = 40.0 + 150.0 * ((i as f64 / 5.0).sin() * (j as f64 / 7.0).cos()).abs();
            bytes.push(v as u8);
        }
    }
    bytes
}

#[test]
fn inpaint_writes_images_and_errors() {
    let dir = TempDir::new().unwrap();
    let image = dir.path().join("img.pgm");
    fs::write(&image, gradient_pgm(32)).unwrap();
    let out = dir.path().join("out");
    let res = robimpute(&[
        "inpaint",
        s(&image),
        "--ranks",
        "2,4",
        "--missing",
        "clustered",
        "--missing-frac",
        "0.2",
        "--patch-size",
        "4",
        "--seed",
        "3",
        "--allow-nonconverged",
        "--out-dir",
        s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let degraded = fs::read(out.join("degraded.pgm")).unwrap();
    assert!(degraded.starts_with(b"P5"));
    let errors = read_json(&out.join("errors.json"));
    assert_eq!(errors["results"].as_array().unwrap().len(), 2);
    assert_eq!(errors["degrade"]["missing"]["mode"], "clustered");
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 3);
    for name in manifest["outputs"].as_array().unwrap() {
        assert!(out.join(name.as_str().unwrap()).exists());
    }

    let bogus = write(dir.path(), "bogus.pgm", "P7 not an image");
    assert_eq!(
        code(&robimpute(&["inpaint", s(&bogus), "--out-dir", s(&out)])),
        1
    );
}
