use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use prunelens::tensor::{Section, TensorData, TensorFile};
use prunelens::{builtin_arch, read_tensors, write_tensors, MaskSet};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prunelens"));
    c.env_remove("PRUNELENS_THREADS");
    c
}

fn run(args: &[&str], extra: &[&Path]) -> Output {
    bin()
        .args(args)
        .args(extra)
        .output()
        .expect("spawn prunelens")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn prune_random_uniform_hits_exact_sparsity() {
    let dir = TempDir::new().unwrap();
    let mask = dir.path().join("m.plts");
    let report = dir.path().join("r.json");
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet300100",
            "--method",
            "random",
            "--lsq",
            "uniform",
            "--sparsity",
            "0.99",
            "--seed",
            "0",
            "--out",
        ],
        &[&mask, Path::new("--report"), &report],
    );
    ok(&out);
    let arch = builtin_arch("lenet300100").unwrap();
    let m = MaskSet::from_file(read_tensors(&mask).unwrap(), &arch).unwrap();
    assert_eq!(m.total_kept(), 266_200 - 263_538);
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(
        r["direct_sparsity"].as_f64().unwrap(),
        263_538.0 / 266_200.0
    );
    assert!(r["effective_sparsity"].as_f64().unwrap() > 0.99);
    assert_eq!(r["method"], "random/uniform");
}

#[test]
fn prune_synflow_effective_matches_direct() {
    let dir = TempDir::new().unwrap();
    let mask = dir.path().join("m.plts");
    let report = dir.path().join("r.csv");
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet300100",
            "--method",
            "synflow",
            "--iterations",
            "100",
            "--sparsity",
            "0.99",
            "--out",
        ],
        &[&mask, Path::new("--report"), &report],
    );
    ok(&out);
    let (h, rows) = read_csv(&report);
    assert_eq!(rows.len(), 1);
    let d: f64 = rows[0][col(&h, "direct_sparsity")].parse().unwrap();
    let e: f64 = rows[0][col(&h, "effective_sparsity")].parse().unwrap();
    assert!((e - d).abs() < 1e-3, "{e} vs {d}");
    assert_eq!(rows[0][col(&h, "method")], "synflow@100");
}

#[test]
fn prune_inactive_flag_leaves_no_inactive_weights() {
    let dir = TempDir::new().unwrap();
    let mask = dir.path().join("m.plts");
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet5",
            "--lsq",
            "uniform",
            "--sparsity",
            "0.995",
            "--prune-inactive",
            "--out",
        ],
        &[&mask],
    );
    ok(&out);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["direct_sparsity"], r["effective_sparsity"]);
}

#[test]
fn malformed_or_invalid_scores_exit_with_input_error() {
    let dir = TempDir::new().unwrap();
    let mask = dir.path().join("m.plts");
    let garbage = dir.path().join("garbage.plts");
    fs::write(&garbage, b"not a tensor file").unwrap();
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet5",
            "--method",
            "ingested",
            "--sparsity",
            "0.9",
            "--scores",
        ],
        &[&garbage, Path::new("--out"), &mask],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("format"));

    let arch = builtin_arch("lenet5").unwrap();
    let mut file = TensorFile::default();
    for l in 0..arch.num_layers() {
        let mut v = vec![1.0; arch.param_counts()[l]];
        if l == 1 {
            v[3] = -2.0;
        }
        file.sections.push(Section {
            name: arch.layer_id(l).into(),
            dims: arch.weight_dims(l),
            data: TensorData::F64(v),
        });
    }
    let negative = dir.path().join("neg.plts");
    write_tensors(&file, &negative).unwrap();
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet5",
            "--method",
            "ingested",
            "--sparsity",
            "0.9",
            "--scores",
        ],
        &[&negative, Path::new("--out"), &mask],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(arch.layer_id(1)));

    let missing = dir.path().join("absent.plts");
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet5",
            "--method",
            "ingested",
            "--sparsity",
            "0.9",
            "--scores",
        ],
        &[&missing, Path::new("--out"), &mask],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!mask.exists());
}

#[test]
fn ingested_scores_drive_pruning() {
    let dir = TempDir::new().unwrap();
    let arch = builtin_arch("lenet5").unwrap();
    let mut file = TensorFile::default();
    let mut next = 0.0;
    for l in 0..arch.num_layers() {
        let v: Vec<f64> = (0..arch.param_counts()[l])
            .map(|_| {
                next += 1.0;
                next
            })
            .collect();
        file.sections.push(Section {
            name: arch.layer_id(l).into(),
            dims: arch.weight_dims(l),
            data: TensorData::F64(v),
        });
    }
    let scores = dir.path().join("s.plts");
    write_tensors(&file, &scores).unwrap();
    let mask = dir.path().join("m.plts");
    let out = run(
        &[
            "prune",
            "--arch",
            "lenet5",
            "--method",
            "ingested",
            "--sparsity",
            "0.5",
            "--scores",
        ],
        &[&scores, Path::new("--out"), &mask],
    );
    ok(&out);
    let m = MaskSet::from_file(read_tensors(&mask).unwrap(), &arch).unwrap();
    // the lowest half of the global index order is pruned
    assert!(m.layer(0).iter().all(|&k| !k));
    assert!(m.layer(arch.num_layers() - 1).iter().all(|&k| k));
    assert_eq!(m.total_kept(), arch.total_params() - 30_885);
}

#[test]
fn analyze_toy_fixture_with_oracle() {
    let json = core_fixture("toy21.json");
    let mask = core_fixture("toy21_mask.plts");
    let out = run(
        &["analyze", "--oracle", "--arch"],
        &[&json, Path::new("--mask"), &mask],
    );
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["direct_compression"].as_f64(), Some(2.1));
    assert_eq!(v["report"]["effective_compression"].as_f64(), Some(4.2));
    assert_eq!(v["oracle_agrees"], true);
    assert_eq!(v["disconnected"], false);

    let dir = TempDir::new().unwrap();
    let csv_out = dir.path().join("a.csv");
    let layers = dir.path().join("l.csv");
    let out = run(
        &[
            "analyze", "--format", "csv", "--method", "fixture", "--arch",
        ],
        &[
            &json,
            Path::new("--mask"),
            &mask,
            Path::new("--out"),
            &csv_out,
            Path::new("--layers"),
            &layers,
        ],
    );
    ok(&out);
    let (h, rows) = read_csv(&csv_out);
    for name in [
        "arch",
        "method",
        "lsq",
        "seed",
        "direct_sparsity",
        "effective_sparsity",
        "direct_compression",
        "effective_compression",
        "disconnected",
        "runtime_ms",
    ] {
        col(&h, name);
    }
    assert_eq!(rows[0][col(&h, "effective_compression")], "4.2");
    let (lh, lrows) = read_csv(&layers);
    assert_eq!(lrows.len(), 3);
    let inactive: Vec<&str> = lrows
        .iter()
        .map(|r| r[col(&lh, "inactive_unpruned")].as_str())
        .collect();
    assert_eq!(inactive, ["1", "3", "1"]);
}

#[test]
fn analyze_dense_mask_is_fully_effective() {
    let dir = TempDir::new().unwrap();
    let arch = builtin_arch("lenet5").unwrap();
    let mask = dir.path().join("ones.plts");
    write_tensors(&MaskSet::ones(&arch).to_file(&arch), &mask).unwrap();
    let out = run(&["analyze", "--arch", "lenet5", "--mask"], &[&mask]);
    ok(&out);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["report"]["effective_sparsity"].as_f64(), Some(0.0));

    let out = run(&["analyze", "--arch", "lenet300100", "--mask"], &[&mask]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["analyze", "--arch", "no-such-net", "--mask"], &[&mask]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn quotas_report_erk_infeasibility_on_vgg16() {
    let dir = TempDir::new().unwrap();
    let csv_out = dir.path().join("q.csv");
    let svg = dir.path().join("q.svg");
    let out = run(
        &["quotas", "--arch", "vgg16", "--lsq", "erk", "--out"],
        &[&csv_out, Path::new("--svg"), &svg],
    );
    ok(&out);
    let (h, rows) = read_csv(&csv_out);
    assert_eq!(rows.len(), 101 * 16);
    let (t, st) = (col(&h, "target_sparsity"), col(&h, "status"));
    for r in &rows {
        let s: f64 = r[t].parse().unwrap();
        if s < 0.99 {
            assert!(r[st].starts_with("infeasible"), "{s}: {}", r[st]);
        }
    }
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));

    let out = run(
        &[
            "quotas",
            "--arch",
            "lenet5",
            "--lsq",
            "igq",
            "--sparsity",
            "0.5,0.9",
        ],
        &[],
    );
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 5);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",ok")));
}

#[test]
fn eff_prune_writes_mask_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let mask = dir.path().join("e.plts");
    let out = run(
        &[
            "eff-prune",
            "--arch",
            "lenet5",
            "--method",
            "magnitude",
            "--target",
            "0.98",
            "--seed",
            "3",
            "--out",
        ],
        &[&mask],
    );
    ok(&out);
    let side: Value =
        serde_json::from_slice(&fs::read(dir.path().join("e.plts.json")).unwrap()).unwrap();
    for key in [
        "arch",
        "method",
        "seed",
        "target",
        "achieved_effective",
        "achieved_direct",
        "iterations",
        "unreachable",
        "trace",
    ] {
        assert!(side.get(key).is_some(), "missing {key}");
    }
    assert_eq!(side["arch"], "lenet5");
    assert!(side["achieved_effective"].as_f64().unwrap() >= 0.98);
    assert!(side["iterations"].as_u64().unwrap() <= 17);

    let arch = builtin_arch("lenet5").unwrap();
    let m = MaskSet::from_file(read_tensors(&mask).unwrap(), &arch).unwrap();
    let r = prunelens::effective_report(&arch, &m).unwrap();
    assert_eq!(
        Some(r.effective_sparsity),
        side["achieved_effective"].as_f64()
    );

    let sidecar = dir.path().join("custom.json");
    let out = run(
        &[
            "eff-prune",
            "--arch",
            "lenet5",
            "--lsq",
            "igq",
            "--target",
            "0.9",
            "--out",
        ],
        &[&mask, Path::new("--sidecar"), &sidecar],
    );
    ok(&out);
    let side: Value = serde_json::from_slice(&fs::read(&sidecar).unwrap()).unwrap();
    assert_eq!(side["method"], "random/igq");
    assert!(side["achieved_effective"].as_f64().unwrap() < 0.9);

    let out = run(
        &["eff-prune", "--arch", "lenet5", "--target", "1.0", "--out"],
        &[&mask],
    );
    assert_eq!(out.status.code(), Some(2));
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("sweep.json");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn sweep_with_empty_grid_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"arch": "lenet5", "methods": [{"method": "random", "lsq": "uniform"}], "sparsities": [], "seeds": [0]}"#,
    );
    let out_dir = dir.path().join("out");
    ok(&run(
        &["sweep", "--config"],
        &[&cfg, Path::new("--out"), &out_dir],
    ));
    let text = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("arch,method,lsq,seed,"));
}

#[test]
fn sweep_reproduces_the_random_uniform_gap_and_records_cell_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "arch": "lenet300100",
            "methods": [
                {"method": "random", "lsq": "uniform"},
                {"method": "random", "lsq": "erk"},
                {"method": "synflow", "iterations": 100}
            ],
            "sparsities": [0.0, 0.9, 0.99],
            "seeds": [0, 1, 2, 3, 4]
        }"#,
    );
    let out_dir = dir.path().join("out");
    let out = bin()
        .env("PRUNELENS_THREADS", "2")
        .args(["sweep", "--no-timing", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    ok(&out);
    let (h, rows) = read_csv(&out_dir.join("results.csv"));
    assert_eq!(rows.len(), 3 * 3 * 5);
    let (m, t, ec, dc, err, rt) = (
        col(&h, "method"),
        col(&h, "target_sparsity"),
        col(&h, "effective_compression"),
        col(&h, "direct_compression"),
        col(&h, "errors"),
        col(&h, "runtime_ms"),
    );
    assert!(rows.iter().all(|r| r[rt] == "0"));

    let gap: Vec<f64> = rows
        .iter()
        .filter(|r| r[m] == "random/uniform" && r[t] == "0.99")
        .map(|r| r[ec].parse().unwrap())
        .collect();
    assert_eq!(gap.len(), 5);
    let mean = gap.iter().sum::<f64>() / 5.0;
    assert!((300.0..=3000.0).contains(&mean), "{mean}");

    for r in rows.iter().filter(|r| r[m] == "synflow@100") {
        let ratio = r[ec].parse::<f64>().unwrap() / r[dc].parse::<f64>().unwrap();
        assert!((1.0..=1.01).contains(&ratio), "{ratio}");
    }

    // strict ERK cannot produce a dense target; the cell records the error and the sweep goes on
    let erk_zero: Vec<&Vec<String>> = rows
        .iter()
        .filter(|r| r[m] == "random/erk" && r[t] == "0.0")
        .collect();
    assert_eq!(erk_zero.len(), 5);
    assert!(erk_zero
        .iter()
        .all(|r| !r[err].is_empty() && r[ec].is_empty()));
    assert!(rows
        .iter()
        .filter(|r| r[m] == "random/erk" && r[t] == "0.99")
        .all(|r| r[err].is_empty()));

    let svg = fs::read_to_string(out_dir.join("compression.svg")).unwrap();
    assert!(svg.contains("random/uniform") && svg.contains("synflow@100"));
    assert!(out_dir.join("layers.csv").exists());
}

#[test]
fn sweep_rejects_invalid_configs() {
    let dir = TempDir::new().unwrap();
    for body in [
        r#"{"arch": "lenet5", "methods": [], "sparsities": [1.0], "seeds": [0]}"#,
        r#"{"arch": "lenet5", "methods": [], "sparsities": [0.5], "seeds": [0, 0]}"#,
        r#"{"arch": "lenet5", "methods": [], "sparsities": [0.5], "seeds": [0], "colour": 1}"#,
        r#"{"arch": "lenet5", "methods": [{"method": "ingested", "scores": "/no/such/file"}], "sparsities": [0.5], "seeds": [0]}"#,
        r#"{"arch": "lenet5""#,
    ] {
        let cfg = write_config(dir.path(), body);
        let out = run(
            &["sweep", "--config"],
            &[&cfg, Path::new("--out"), &dir.path().join("o")],
        );
        assert_eq!(
            out.status.code(),
            Some(2),
            "{body}\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn arch_commands_and_generated_weights() {
    let out = run(&["arch", "list"], &[]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "lenet300100",
        "lenet5",
        "vgg16",
        "vgg19",
        "resnet18",
        "resnet50",
        "mobilenetv2",
    ] {
        assert!(text.contains(name), "{name}");
    }

    let dir = TempDir::new().unwrap();
    let dump = dir.path().join("lenet5.json");
    ok(&run(&["arch", "dump", "lenet5", "--out"], &[&dump]));
    assert_eq!(
        fs::read_to_string(&dump).unwrap(),
        fs::read_to_string(core_fixture("zoo/lenet5.json")).unwrap()
    );

    let weights = dir.path().join("w.plts");
    ok(&run(
        &["gen-weights", "--arch", "lenet5", "--seed", "9", "--out"],
        &[&weights],
    ));
    let a = dir.path().join("a.plts");
    let b = dir.path().join("b.plts");
    ok(&run(
        &["prune", "--arch"],
        &[
            &dump,
            Path::new("--method"),
            Path::new("magnitude"),
            Path::new("--sparsity"),
            Path::new("0.9"),
            Path::new("--weights"),
            &weights,
            Path::new("--out"),
            &a,
        ],
    ));
    ok(&run(
        &[
            "prune",
            "--arch",
            "lenet5",
            "--method",
            "magnitude",
            "--sparsity",
            "0.9",
            "--seed",
            "9",
            "--out",
        ],
        &[&b],
    ));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
