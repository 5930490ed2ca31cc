//! Black-box tests of the `moft` binary: exit codes, output formats,
//! file-writing behavior, and reproducibility of every subcommand.

use std::path::Path;
use std::process::{Command, Output};

use moft_core::matrix::DenseMatrix;
use moft_core::svd::svd_exact;
use moft_core::task::generate_task;
use moft_core::tensor_io::{read_tensor, write_tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn moft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moft"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be utf-8")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr should be utf-8")
}

fn write_gaussian(path: &Path, d: usize, n: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let w = DenseMatrix::gaussian(d, n, &mut rng);
    write_tensor(path, &w).unwrap();
    w
}

#[test]
fn bare_invocation_prints_usage_and_exits_one() {
    let out = moft(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));

    let unknown = moft(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn params_prints_documented_counts() {
    let out = moft(&["params", "--method", "moft", "--r", "72", "--modules", "160"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).trim(), "432000");

    let json = moft(&[
        "params", "--method", "moft", "--r", "72", "--modules", "160", "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(v["total"], 432000);
    assert_eq!(v["method"], "moft");

    let bad = moft(&["params", "--method", "warp", "--r", "4", "--modules", "1"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("error:"));
}

#[test]
fn mem_prints_unit_totals_and_structured_breakdowns() {
    let fft = moft(&[
        "mem", "--method", "fft", "--b", "1", "--s", "1", "--h", "1", "--a", "1",
    ]);
    assert_eq!(fft.status.code(), Some(0));
    assert_eq!(stdout(&fft).trim(), "75");

    let moft_est = moft(&[
        "mem", "--method", "moft", "--b", "1", "--s", "1", "--h", "1", "--a", "1", "--r", "1",
        "--json",
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&moft_est)).unwrap();
    assert_eq!(v["total_bytes"], 119);
    let b = &v["breakdown"];
    let sum = b["attention"].as_i64().unwrap()
        + b["softmax"].as_i64().unwrap()
        + b["dropout_masks"].as_i64().unwrap()
        + b["ffn"].as_i64().unwrap()
        + b["adapter_delta"].as_i64().unwrap();
    assert_eq!(sum, 119);

    // A rank-requiring method without --r is a usage error.
    let missing = moft(&[
        "mem", "--method", "lora", "--b", "1", "--s", "1", "--h", "1", "--a", "1",
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn decompose_writes_reconstructable_factors_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("w.mtb");
    let w = write_gaussian(&input, 12, 9, 41);
    let out_dir = dir.path().join("dec");

    let out = moft(&[
        "decompose",
        "--input",
        input.to_str().unwrap(),
        "--rank",
        "3",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let a = read_tensor(out_dir.join("a.mtb")).unwrap();
    let b = read_tensor(out_dir.join("b.mtb")).unwrap();
    let w_res = read_tensor(out_dir.join("w_res.mtb")).unwrap();
    assert_eq!(a.shape(), (12, 3));
    assert_eq!(b.shape(), (3, 9));
    assert_eq!(w_res.shape(), (12, 9));
    let rebuilt = a.matmul(&b).unwrap().add(&w_res).unwrap();
    let rel = rebuilt.sub(&w).unwrap().frobenius_norm() / w.frobenius_norm();
    assert!(rel < 1e-12, "factor reconstruction error {rel}");

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "decompose");
    assert_eq!(manifest["args"]["rank"], "3");
    let hash = manifest["input_hashes"][input.to_str().unwrap()]
        .as_str()
        .unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn decompose_reruns_reproduce_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("w.mtb");
    write_gaussian(&input, 10, 10, 42);

    for variant in ["moft", "pissa"] {
        let d1 = dir.path().join(format!("{variant}-one"));
        let d2 = dir.path().join(format!("{variant}-two"));
        for out_dir in [&d1, &d2] {
            let out = moft(&[
                "decompose",
                "--input",
                input.to_str().unwrap(),
                "--rank",
                "4",
                "--variant",
                variant,
                "--svd",
                "randomized",
                "--n-iter",
                "6",
                "--seed",
                "9",
                "--out-dir",
                out_dir.to_str().unwrap(),
            ]);
            assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
        }
        for file in ["a.mtb", "b.mtb", "w_res.mtb", "manifest.json"] {
            let one = std::fs::read(d1.join(file)).unwrap();
            let two = std::fs::read(d2.join(file)).unwrap();
            assert_eq!(one, two, "{variant}/{file} differs between reruns");
        }
    }
}

#[test]
fn train_then_merge_recovers_the_planted_weights() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("adapter.moft");
    let log = dir.path().join("history.csv");

    let out = moft(&[
        "train",
        "--task-seed",
        "7",
        "--d",
        "16",
        "--n",
        "12",
        "--rank",
        "3",
        "--epochs",
        "60",
        "--lr",
        "0.05",
        "--scaling",
        "off",
        "--out",
        ckpt.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--seed",
        "11",
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(summary["final_test_loss"].as_f64().unwrap() < 1e-10);

    let history = std::fs::read_to_string(&log).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,epoch,train_loss,test_loss,r_orth_residual"
    );
    assert!(history.lines().count() > 60);

    // The same task seed regenerates the same base weights out-of-band.
    let task = generate_task(16, 12, 3, false, 7).unwrap();
    let weights = dir.path().join("w.mtb");
    write_tensor(&weights, &task.w_pre).unwrap();

    let merged_path = dir.path().join("w_final.mtb");
    let merge = moft(&[
        "merge",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--weights",
        weights.to_str().unwrap(),
        "--out",
        merged_path.to_str().unwrap(),
    ]);
    assert_eq!(merge.status.code(), Some(0), "stderr: {}", stderr(&merge));

    let merged = read_tensor(&merged_path).unwrap();
    let rel = merged.sub(&task.w_target).unwrap().frobenius_norm()
        / task.w_target.frobenius_norm();
    assert!(rel < 1e-6, "merged weights off by {rel}");
    assert!(dir.path().join("w_final.manifest.json").exists());
}

#[test]
fn merge_rejects_weights_that_do_not_match_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("adapter.moft");
    let log = dir.path().join("history.csv");
    let out = moft(&[
        "train",
        "--task-seed",
        "3",
        "--d",
        "10",
        "--n",
        "8",
        "--rank",
        "2",
        "--epochs",
        "2",
        "--lr",
        "0.05",
        "--scaling",
        "off",
        "--out",
        ckpt.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));

    let wrong = dir.path().join("other.mtb");
    write_gaussian(&wrong, 10, 8, 999);
    let merge = moft(&[
        "merge",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--weights",
        wrong.to_str().unwrap(),
        "--out",
        dir.path().join("w_final.mtb").to_str().unwrap(),
    ]);
    assert_eq!(merge.status.code(), Some(1));
    assert!(stderr(&merge).contains("hash mismatch"));
}

#[test]
fn corrupted_tensors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("w.mtb");
    std::fs::write(&bad, b"definitely not a tensor").unwrap();
    let out = moft(&[
        "decompose",
        "--input",
        bad.to_str().unwrap(),
        "--rank",
        "2",
        "--out-dir",
        dir.path().join("dec").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error:"));
}

#[test]
fn train_requires_exactly_one_step_size_flag() {
    let dir = tempfile::tempdir().unwrap();
    let base: Vec<String> = [
        "train",
        "--task-seed",
        "1",
        "--d",
        "8",
        "--n",
        "6",
        "--rank",
        "2",
        "--epochs",
        "1",
        "--out",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([
        dir.path().join("a.moft").display().to_string(),
        "--log".to_string(),
        dir.path().join("h.csv").display().to_string(),
    ])
    .collect();

    let none = moft(&base.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(none.status.code(), Some(1));

    let mut both = base.clone();
    both.extend(["--lr", "0.1", "--pl-mu", "1.0"].iter().map(|s| s.to_string()));
    let both = moft(&both.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(both.status.code(), Some(1));

    let mut decay = base;
    decay.extend(["--pl-mu", "1.0"].iter().map(|s| s.to_string()));
    let decay = moft(&decay.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(decay.status.code(), Some(0), "stderr: {}", stderr(&decay));
}

#[test]
fn verify_passes_on_fresh_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.mtb");
    write_gaussian(&weights, 10, 8, 5);

    let out = moft(&[
        "verify",
        "--weights",
        weights.to_str().unwrap(),
        "--rank",
        "3",
        "--trials",
        "4",
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["all_passed"], true);
    let names: Vec<&str> = report["properties"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "cayley_orthogonality",
            "angle_preservation",
            "full_space_equivalence",
            "gradient_check"
        ]
    );
    for p in report["properties"].as_array().unwrap() {
        assert_eq!(p["passed"], true, "property {}", p["name"]);
        assert_eq!(p["expected_fail"], false);
    }
}

#[test]
fn verify_reports_the_weighted_variant_as_an_expected_failure() {
    // A planted geometric spectrum guarantees the distortion is visible.
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    let (d, n, r) = (14, 10, 3);
    let u = svd_exact(&DenseMatrix::gaussian(d, d, &mut rng)).unwrap().u;
    let v = svd_exact(&DenseMatrix::gaussian(n, n, &mut rng)).unwrap().u;
    let mut w = DenseMatrix::zeros(d, n);
    for t in 0..n {
        let sigma = 0.6f64.powi(t as i32);
        for i in 0..d {
            for j in 0..n {
                w.set(i, j, w.get(i, j) + sigma * u.get(i, t) * v.get(j, t));
            }
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.mtb");
    write_tensor(&weights, &w).unwrap();

    let out = moft(&[
        "verify",
        "--weights",
        weights.to_str().unwrap(),
        "--rank",
        &r.to_string(),
        "--trials",
        "4",
        "--variant",
        "pissa",
        "--seed",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["all_passed"], true);
    let angle = report["properties"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["name"] == "angle_preservation")
        .unwrap();
    assert_eq!(angle["expected_fail"], true);
    assert_eq!(angle["passed"], false);
}

#[test]
fn mem_compare_emits_csv_in_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep.json");
    std::fs::write(
        &sweep,
        serde_json::json!({
            "configs": [
                {"b": 1, "s": 1, "h": 1, "a": 1, "r": 1, "m": 1},
                {"b": 2, "s": 64, "h": 256, "a": 8, "r": 12, "m": 2}
            ],
            "methods": ["fft", "moft", "boft"]
        })
        .to_string(),
    )
    .unwrap();

    let out = moft(&["mem-compare", "--config", sweep.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(
        lines[0],
        "b,s,h,a,bytes_per_act,r,m,method,total_bytes,ratio_vs_fft"
    );
    // Rows follow input order: first config, then methods as listed; the
    // fft row anchors the ratio column at exactly 1.
    assert_eq!(lines[1], "1,1,1,1,4,1,1,fft,75,1");
    assert!(lines[2].starts_with("1,1,1,1,4,1,1,moft,119,"));

    let json = moft(&["mem-compare", "--config", sweep.to_str().unwrap(), "--json"]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 6);

    // Methods that need no rank run fine on a config that leaves it out;
    // the fft row simply ignores the empty column.
    let rankless = dir.path().join("rankless.json");
    std::fs::write(
        &rankless,
        serde_json::json!({
            "configs": [{"b": 1, "s": 1, "h": 1, "a": 1, "r": null, "m": null}],
            "methods": ["fft", "svft", "goft"]
        })
        .to_string(),
    )
    .unwrap();
    let out = moft(&["mem-compare", "--config", rankless.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().nth(1).unwrap(), "1,1,1,1,4,,,fft,75,1");

    let garbled = dir.path().join("nope.json");
    std::fs::write(&garbled, "{").unwrap();
    let out = moft(&["mem-compare", "--config", garbled.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}
