use std::process::{Command, Output};

fn matprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_matprobe"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn manifest(dir: &std::path::Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn detect_preset_is_decisive_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for p in [&a, &b] {
        let o = matprobe(&[
            "detect",
            "--backend",
            "emulator:a100",
            "--format",
            "fp16",
            "--style",
            "json",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["extra_bits"]["value"], serde_json::json!({ "exactly": 1 }));
    let evidence = &v["outcomes"][0]["evidence"][0]["observed"];
    assert!(evidence["hex"].is_string() && evidence["decimal"].is_string());
}

#[test]
fn detect_table_has_feature_columns() {
    let o = matprobe(&["detect", "--backend", "emulator:v100", "--format", "fp16"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    for col in ["Sub. in", "Extra bits", "Rounding", "FMA width", "Order ctrl."] {
        assert!(out.contains(col), "missing {col}");
    }
}

#[test]
fn detect_several_formats() {
    let o = matprobe(&[
        "detect",
        "--backend",
        "oracle",
        "--format",
        "fp16,bf16",
        "--style",
        "json",
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn detect_through_exec_matches_in_process() {
    let bin = env!("CARGO_BIN_EXE_matprobe");
    let exec = format!("exec:{bin} run --backend emulator:mi100");
    let direct = matprobe(&["detect", "--backend", "emulator:mi100", "--format", "fp16"]);
    let remote = matprobe(&["detect", "--backend", &exec, "--format", "fp16"]);
    assert_eq!(code(&remote), 0, "{}", String::from_utf8_lossy(&remote.stderr));
    let strip = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .skip(2)
            .map(str::to_string)
            .collect()
    };
    assert_eq!(strip(&direct), strip(&remote));
}

#[test]
fn operational_errors_exit_two() {
    for args in [
        vec!["detect", "--backend", "gpu0"],
        vec!["detect", "--backend", "emulator:b200"],
        vec!["detect", "--backend", "emulator:a100/bf16", "--format", "fp16"],
        vec!["detect", "--backend", "emulator:@/nonexistent.json"],
        vec!["detect", "--backend", "exec:/nonexistent/probe"],
        vec!["detect", "--backend", "oracle", "--format", "fp8"],
        vec!["fixtures", "t_nope"],
        vec!["frobnicate"],
    ] {
        let o = matprobe(&args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(!o.stderr.is_empty(), "{args:?} printed no diagnostic");
    }
}

#[test]
fn config_file_backend() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w2.json");
    let cfg = matprobe::emulator::AcceleratorConfig {
        block_width: 2,
        extra_bits: 2,
        ..matprobe::emulator::AcceleratorConfig::baseline(matprobe::softfp::FormatName::Fp16)
    };
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let spec = format!("emulator:@{}", path.display());
    let o = matprobe(&["detect", "--backend", &spec, "--style", "json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["fma_width"]["value"], serde_json::json!({ "exactly": 2 }));
}

#[test]
fn demo_reports_preset_values() {
    for (preset, want) in [
        ("v100", "0"),
        ("a100", "0"),
        ("mi250x", "0"),
        ("mi100", "255.875"),
        ("h100", "191.875"),
    ] {
        let o = matprobe(&["demo", "--backend", &format!("emulator:{preset}"), "--style", "json"]);
        assert_eq!(code(&o), 0);
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["magnitude"], want, "{preset}");
        assert_eq!(v["exact_magnitude"], "191.984375");
    }
}

#[test]
fn presets_catalog_exports() {
    let o = matprobe(&["presets", "--style", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["presets"].as_array().unwrap();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r["config"]["block_width"].is_u64()));
}

#[test]
fn fixtures_one_bit() {
    let dir = tempfile::tempdir().unwrap();
    let o = matprobe(&["fixtures", "t_1_bit", "fp16", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let m = manifest(dir.path());
    let fx = m["fixtures"].as_array().unwrap();
    assert_eq!(fx.len(), 1);
    assert_eq!(fx[0]["expectations"].as_array().unwrap().len(), 2);
    let file = dir.path().join(fx[0]["file"].as_str().unwrap());
    matprobe::backends::Fixture::load(&file).unwrap();
}

#[test]
fn fixtures_width_scan() {
    let dir = tempfile::tempdir().unwrap();
    let o = matprobe(&[
        "fixtures",
        "t_blk_fma_width",
        "fp16",
        "--kmax",
        "16",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(manifest(dir.path())["fixtures"].as_array().unwrap().len(), 15);
}

#[test]
fn fixtures_default_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_matprobe"))
        .args(["fixtures", "demo"])
        .env("MATPROBE_FIXTURE_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m = manifest(dir.path());
    assert_eq!(m["fixtures"].as_array().unwrap().len(), 1);
    assert!(dir.path().join("demo.json").exists());
}

#[test]
fn selftest_reports_grid() {
    let o = matprobe(&["selftest", "--samples", "200", "--dots", "200"]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("config recovery: 200 configs"), "{out}");
    // Exit status follows the PASS/FAIL line.
    let passed = out.trim_end().ends_with("PASS");
    assert_eq!(code(&o), if passed { 0 } else { 1 });
}
