use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lumaflux_core::io::{read_frame, read_sidecar, sha256_hex, write_frame};
use lumaflux_core::pipeline::synthetic_hdr;
use lumaflux_core::{ColorSpaceTag, PipelineConfig, TaggedImage, Transfer};
use serde_json::Value;
use tempfile::TempDir;

fn lumaflux(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumaflux"))
        .args(args)
        .current_dir(dir)
        .env_remove("LUMAFLUX_THREADS")
        .output()
        .expect("spawn lumaflux")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_hdr(dir: &Path, name: &str, side: usize) -> PathBuf {
    let path = dir.join(name);
    let img = synthetic_hdr(side, side, 1000.0, 5).unwrap();
    write_frame(&path, &img, None, None).unwrap();
    path
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path
}

fn listing(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&fs::read(&p).unwrap()))
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synthesize_writes_full_grid_deterministically() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "hdr.pfm", 24);
    let out = lumaflux(&["synthesize", "hdr.pfm", "-o", "a"], tmp.path());
    let report = stdout_json(&out);
    assert_eq!(report["frames"].as_array().unwrap().len(), 24);
    let a = listing(&tmp.path().join("a"));
    assert_eq!(a.len(), 48);

    let sidecar = read_sidecar(&tmp.path().join("a/00_reinhard_crf23.pfm")).unwrap();
    let prov = sidecar.provenance.unwrap();
    assert_eq!(prov.command, "synthesize");
    assert_eq!(prov.seed, 0);
    assert_eq!(prov.inputs.len(), 1);
    assert_eq!(sidecar.tag.transfer, Transfer::Gamma709);

    lumaflux(&["synthesize", "hdr.pfm", "-o", "a"], tmp.path());
    assert_eq!(listing(&tmp.path().join("a")), a);

    let single = Command::new(env!("CARGO_BIN_EXE_lumaflux"))
        .args(["synthesize", "hdr.pfm", "-o", "b"])
        .current_dir(tmp.path())
        .env("LUMAFLUX_THREADS", "1")
        .output()
        .unwrap();
    assert!(single.status.success());
    assert_eq!(listing(&tmp.path().join("b")), a);
}

#[test]
fn synthesize_flags_override_config() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "hdr.pfm", 16);
    let out = lumaflux(
        &["synthesize", "hdr.pfm", "-o", "o", "--tmo", "reinhard", "--tmo", "log_c", "--crf", "none", "--seed", "9"],
        tmp.path(),
    );
    let frames: Vec<String> = stdout_json(&out)["frames"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| Path::new(f.as_str().unwrap()).file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(frames, ["00_reinhard_nocodec.pfm", "01_log_c_nocodec.pfm"]);
    let prov = read_sidecar(&tmp.path().join("o/01_log_c_nocodec.pfm")).unwrap().provenance.unwrap();
    assert_eq!(prov.seed, 9 ^ 1);
}

#[test]
fn empty_tmo_list_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "hdr.pfm", 16);
    write_config(tmp.path(), &serde_json::json!({ "tmos": [] }));
    let out = lumaflux(&["--config", "config.json", "synthesize", "hdr.pfm"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tmo list is empty"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), &serde_json::json!({ "fit": { "knots": 4 } }));
    let out = lumaflux(&["--config", "config.json", "adapter-demo"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_flag_prints_usage() {
    let tmp = TempDir::new().unwrap();
    let out = lumaflux(&["synthesize", "--no-such-flag", "x.pfm"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = lumaflux(&["--crf", "30", "adapter-demo"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unreadable_input_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = lumaflux(&["synthesize", "missing.pfm"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    fs::write(tmp.path().join("junk.pfm"), b"P6\n1 1\n255\n").unwrap();
    fs::write(tmp.path().join("junk.pfm.json"), r#"{"tag":{"primaries":"bt2020","transfer":"pq","peak_nits":1000.0},"provenance":null}"#).unwrap();
    let out = lumaflux(&["metrics", "junk.pfm", "junk.pfm"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_expand_recovers_reinhard_and_records_provenance() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "ref.pfm", 32);
    let synth = lumaflux(&["synthesize", "ref.pfm", "-o", "sdr", "--tmo", "reinhard", "--crf", "none"], tmp.path());
    assert!(synth.status.success());
    let out = lumaflux(
        &["fit-expand", "sdr/00_reinhard_nocodec.pfm", "ref.pfm", "-o", "fit", "--bins", "8", "--lambda-smooth", "1e-4"],
        tmp.path(),
    );
    let report = stdout_json(&out);
    assert!(report["metrics"]["luma_l1"].as_f64().unwrap() < 5e-3);

    let (hdr, sidecar) = read_frame(&tmp.path().join("fit/expanded.pfm")).unwrap();
    assert_eq!(sidecar.tag.transfer, Transfer::Pq);
    assert_eq!(sidecar.tag.peak_nits, 1000.0);
    assert_eq!(sidecar.provenance.unwrap().inputs.len(), 2);
    assert_eq!((hdr.height(), hdr.width()), (32, 32));

    let doc: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("fit/rqs.json")).unwrap()).unwrap();
    assert_eq!(doc["bins"], 8);
    let trace = fs::read_to_string(tmp.path().join("fit/loss_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,loss\n"));
    assert!(trace.lines().count() > 2);
    assert!(tmp.path().join("fit/loss_trace.csv.json").exists());
}

#[test]
fn fit_expand_rejects_mismatched_extents() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "a.pfm", 16);
    write_hdr(tmp.path(), "b.pfm", 24);
    let out = lumaflux(&["fit-expand", "a.pfm", "b.pfm"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_divergence_exits_numerical_with_trace() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "ref.pfm", 16);
    write_config(tmp.path(), &serde_json::json!({ "fit": { "l1_delta": 1e200 }, "output_dir": "fit" }));
    let out = lumaflux(&["--config", "config.json", "fit-expand", "ref.pfm", "ref.pfm"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("loss_trace.csv"), "{err}");
    assert!(tmp.path().join("fit/loss_trace.csv").exists());
}

#[test]
fn metrics_of_identical_frames() {
    let tmp = TempDir::new().unwrap();
    write_hdr(tmp.path(), "x.pfm", 16);
    let out = lumaflux(&["metrics", "x.pfm", "x.pfm", "--out", "report.json"], tmp.path());
    let report = stdout_json(&out);
    assert_eq!(report["delta_e_itp_mean"], 0.0);
    assert_eq!(report["psnr_pu21"], report["psnr_cap_db"]);
    let saved: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(saved, report);

    let schema: Value = serde_json::from_str(lumaflux_core::metrics::METRIC_REPORT_SCHEMA).unwrap();
    let required: Vec<&str> = schema["required"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, required);
}

#[test]
fn features_of_flat_gray_frame() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("gray.pfm");
    let img = TaggedImage::from_fn(32, 32, ColorSpaceTag::pq2020(1000.0), |_, _| [0.5; 3]).unwrap();
    write_frame(&path, &img, None, None).unwrap();
    let out = lumaflux(&["features", "gray.pfm", "--dump-maps", "-o", "maps"], tmp.path());
    let dump = stdout_json(&out);
    let s_g: Vec<f64> = dump["s_g"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let v = s_g[0];
    assert!(v > 0.0);
    assert_eq!(s_g, [v, 0.0, v, v]);
    let r: Vec<f64> = dump["r_spec"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(r[0] > 0.0);
    assert!(r[1..].iter().all(|&x| x == 0.0));
    for name in ["y", "loggrad", "sat"] {
        assert!(tmp.path().join(format!("maps/{name}.pfm")).exists());
        assert!(tmp.path().join(format!("maps/{name}.pfm.json")).exists());
    }
}

#[test]
fn adapter_demo_passes_on_default_config() {
    let tmp = TempDir::new().unwrap();
    let out = lumaflux(&["adapter-demo", "--seed", "3"], tmp.path());
    let report = stdout_json(&out);
    assert_eq!(report["passed"], true);
    assert_eq!(report["seed"], 3);
    assert_eq!(report["preservation"]["max_abs_diff"], 0.0);
}

#[test]
fn full_config_round_trips_through_the_cli() {
    let tmp = TempDir::new().unwrap();
    let cfg = serde_json::to_value(PipelineConfig::default()).unwrap();
    write_config(tmp.path(), &cfg);
    write_hdr(tmp.path(), "x.pfm", 16);
    let out = lumaflux(&["--config", "config.json", "metrics", "x.pfm", "x.pfm"], tmp.path());
    assert!(out.status.success());
}
