use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flareforge::image::{ColorSpace, DepthMap, Image, RegionMask};
use flareforge::io;
use flareforge::testkit::{write_dataset, DatasetSpec};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flareforge"));
    c.env_remove("FLAREFORGE_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<_> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert!(v["message"].is_string());
    v
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn dataset(root: &Path) -> flareforge::synth::DatasetDirs {
    write_dataset(
        root,
        &DatasetSpec {
            backgrounds: 2,
            width: 64,
            height: 48,
            templates: 2,
            template_size: 48,
        },
    )
    .unwrap()
}

fn synth_args<'a>(dirs: &'a flareforge::synth::DatasetDirs, out: &'a Path, count: &'a str) -> Vec<&'a str> {
    vec![
        "synth",
        "--backgrounds",
        p(&dirs.backgrounds),
        "--depths",
        p(&dirs.depths),
        "--flares",
        p(&dirs.flares),
        "--out",
        p(out),
        "--count",
        count,
        "--quiet",
    ]
}

#[test]
fn help_documents_every_flag() {
    let expected: [(&str, &[&str]); 4] = [
        (
            "synth",
            &[
                "--config",
                "--backgrounds",
                "--depths",
                "--flares",
                "--out",
                "--count",
                "--seed",
                "--fov",
                "--fov-random",
                "--flare-min",
                "--flare-max",
                "--gamma-min",
                "--gamma-max",
                "--compose-space",
                "--gt-mode",
                "--tau-ls",
                "--depth-inverse",
                "--jobs",
                "FLAREFORGE_SEED",
            ],
        ),
        (
            "mask",
            &["--input", "--out", "--strategy", "--tau", "--w", "--b", "--p"],
        ),
        (
            "eval",
            &["--pred", "--gt", "--glare-masks", "--streak-masks", "--flare-masks"],
        ),
        (
            "inspect",
            &["--background", "--depth", "--flare", "--fov", "--seed", "--tau-ls"],
        ),
    ];
    for (cmd, flags) in expected {
        let out = run(&[cmd, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert!(run(&["--help"]).status.success());
}

#[test]
fn synth_zero_count_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let dirs = dataset(&dir.path().join("in"));
    let out0 = dir.path().join("zero");
    let o = run(&synth_args(&dirs, &out0, "0"));
    assert!(o.status.success());
    let m: Value = serde_json::from_str(&fs::read_to_string(out0.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pairs"].as_array().unwrap().len(), 0);

    let digests = |name: &str| {
        let out = dir.path().join(name);
        let mut args = synth_args(&dirs, &out, "3");
        args.extend(["--seed", "7"]);
        let o = run(&args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), p(&out.join("manifest.json")));
        let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m["pairs"].clone()
    };
    assert_eq!(digests("a"), digests("b"));
}

#[test]
fn seed_env_and_overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let dirs = dataset(&dir.path().join("in"));
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"master_seed": 1, "flare_count": {"min": 2, "max": 2}}"#).unwrap();
    let out = dir.path().join("out");
    let mut args = synth_args(&dirs, &out, "2");
    args.extend([
        "--config",
        p(&cfg),
        "--fov",
        "40",
        "--compose-space",
        "encoded",
        "--flare-max",
        "3",
    ]);
    let o = bin().args(&args).env("FLAREFORGE_SEED", "99").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["master_seed"], 99);
    assert_eq!(m["config"]["fov"]["fixed"], 40.0);
    assert_eq!(m["config"]["compose_space"], "encoded");
    assert_eq!(m["config"]["flare_count"]["min"], 2);
    assert_eq!(m["config"]["flare_count"]["max"], 3);
}

#[test]
fn synth_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let dirs = dataset(&dir.path().join("in"));
    fs::remove_file(dirs.depths.join("bg_000.pfm")).unwrap();
    let e = error_json(&run(&synth_args(&dirs, &dir.path().join("out"), "1")));
    assert_eq!(e["error_kind"], "MissingDepthError");

    let out = dir.path().join("out");
    let mut args = synth_args(&dirs, &out, "1");
    args.extend(["--flare-min", "4", "--flare-max", "2"]);
    assert_eq!(error_json(&run(&args))["error_kind"], "ConfigError");
    assert_eq!(error_json(&run(&["synth", "--bogus"]))["error_kind"], "ConfigError");
}

fn write_image(path: &Path, img: &Image) -> PathBuf {
    io::write_png(img, path).unwrap();
    path.to_path_buf()
}

#[test]
fn mask_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let bright = write_image(
        &dir.path().join("bright.png"),
        &Image::filled(8, 6, ColorSpace::Encoded, [0.9; 3]).unwrap(),
    );
    let mask = dir.path().join("mask.png");
    let v = stdout_json(&run(&[
        "mask",
        "--input",
        p(&bright),
        "--tau",
        "0.5",
        "--out",
        p(&mask),
    ]));
    assert_eq!(v["tau"], 0.5);
    assert_eq!(v["coverage"], 1.0);
    assert_eq!(io::load_mask_png(&mask).unwrap(), RegionMask::full(8, 6).unwrap());

    let ramp = Image::from_fn(8, 6, ColorSpace::Encoded, |x, y| {
        let v = if (x, y) == (2, 3) || (x, y) == (6, 1) {
            1.0
        } else {
            (x + y) as f32 / 20.0
        };
        [v; 3]
    })
    .unwrap();
    let ramp_path = write_image(&dir.path().join("ramp.png"), &ramp);
    let v = stdout_json(&run(&[
        "mask",
        "--input",
        p(&ramp_path),
        "--strategy",
        "percentile",
        "--p",
        "100",
        "--out",
        p(&mask),
    ]));
    // brute-force scan for the brightest pixels
    let y = io::load_png(&ramp_path).unwrap().to_luma_bt601();
    let max = y.data().iter().cloned().fold(f32::MIN, f32::max);
    let expected = RegionMask::new(8, 6, y.data().iter().map(|&v| v == max).collect()).unwrap();
    assert_eq!(io::load_mask_png(&mask).unwrap(), expected);
    assert_eq!(expected.count(), 2);
    assert_eq!(v["tau"], max as f64);

    let v = stdout_json(&run(&["mask", "--input", p(&ramp_path), "--w", "0", "--b", "0"]));
    assert_eq!(v["tau"], 0.5);
    assert_eq!(v["strategy"]["kind"], "affine_of_mean");

    let v = stdout_json(&run(&["mask", "--input", p(&ramp_path), "--w", "0", "--b", "-2"]));
    let expected = 1.0 / (1.0 + 2.0f64.exp());
    assert!((v["tau"].as_f64().unwrap() - expected).abs() < 1e-12);

    let e = error_json(&run(&["mask", "--input", p(&ramp_path), "--tau", "1.5"]));
    assert_eq!(e["error_kind"], "ConfigError");
    let e = error_json(&run(&[
        "mask",
        "--input",
        p(&dir.path().join("none.png")),
        "--tau",
        "0.5",
    ]));
    assert_eq!(e["error_kind"], "IOError");
}

#[test]
fn eval_reports_json_and_text() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred");
    let gt = dir.path().join("gt");
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    let a = Image::filled(16, 16, ColorSpace::Encoded, [0.0; 3]).unwrap();
    let b = Image::filled(16, 16, ColorSpace::Encoded, [0.1; 3]).unwrap();
    write_image(&pred.join("x.png"), &a);
    write_image(&gt.join("x.png"), &a);
    write_image(&pred.join("y.png"), &a);
    write_image(&gt.join("y.png"), &b);
    let v = stdout_json(&run(&["eval", "--pred", p(&pred), "--gt", p(&gt)]));
    assert!(v["per_image"][0]["psnr"].is_null());
    let psnr_y = v["per_image"][1]["psnr"].as_f64().unwrap();
    // 0.1 quantizes to 26/255, held as f32 after loading
    let diff = (26.0f32 / 255.0) as f64;
    let expected = 10.0 * (1.0 / (diff * diff)).log10();
    assert!((psnr_y - expected).abs() < 1e-9);
    assert_eq!(v["aggregate"]["psnr"]["infinite"], 1);

    let report = dir.path().join("report.txt");
    assert!(run(&[
        "eval",
        "--pred",
        p(&pred),
        "--gt",
        p(&gt),
        "--text",
        "--out",
        p(&report)
    ])
    .status
    .success());
    assert!(fs::read_to_string(&report).unwrap().contains("inf"));

    fs::remove_file(gt.join("y.png")).unwrap();
    assert_eq!(
        error_json(&run(&["eval", "--pred", p(&pred), "--gt", p(&gt)]))["error_kind"],
        "PairingError"
    );
}

/// 33x33 frame with a single saturated pixel at the exact center.
fn center_point_files(dir: &Path, depth: DepthMap) -> (PathBuf, PathBuf, PathBuf) {
    let bg = write_image(
        &dir.join("bg.png"),
        &Image::filled(33, 33, ColorSpace::Encoded, [0.05; 3]).unwrap(),
    );
    let flare = Image::from_fn(33, 33, ColorSpace::Encoded, |x, y| {
        let d = (x as f32 - 16.0).hypot(y as f32 - 16.0);
        if d == 0.0 {
            [1.0; 3]
        } else {
            [(0.5 / (1.0 + d)).min(0.9); 3]
        }
    })
    .unwrap();
    let flare = write_image(&dir.join("flare.png"), &flare);
    let depth_path = dir.join("depth.pfm");
    io::write_pfm(&depth, &depth_path).unwrap();
    (bg, depth_path, flare)
}

#[test]
fn inspect_center_light_on_constant_depth() {
    let dir = tempfile::tempdir().unwrap();
    let (bg, depth, flare) = center_point_files(dir.path(), DepthMap::constant(33, 33, 4.0).unwrap());
    let v = stdout_json(&run(&[
        "inspect",
        "--background",
        p(&bg),
        "--depth",
        p(&depth),
        "--flare",
        p(&flare),
        "--fov",
        "60",
        "--identity",
    ]));
    assert_eq!(v["theta_deg"], 0.0);
    assert_eq!(v["scale_s"], 1.0);
    assert_eq!(v["d_i"], 4.0);
    assert_eq!(v["r_i"], 0.0);
    assert_eq!(v["light_source_pixels"], 1);
    assert_eq!(v["provenance"]["light_source_origin"], "luminance_threshold");
}

#[test]
fn inspect_depth_is_region_average() {
    let dir = tempfile::tempdir().unwrap();
    let depth = DepthMap::from_fn(33, 33, |x, y| 1.0 + (x * 33 + y) as f32 / 100.0).unwrap();
    let (bg, depth_path, flare) = center_point_files(dir.path(), depth.clone());
    // light-source annotation: a 3x2 block right of center
    let ls = RegionMask::from_fn(33, 33, |x, y| (17..20).contains(&x) && (16..18).contains(&y)).unwrap();
    io::write_mask_png(&ls, dir.path().join("flare_ls.png")).unwrap();
    let v = stdout_json(&run(&[
        "inspect",
        "--background",
        p(&bg),
        "--depth",
        p(&depth_path),
        "--flare",
        p(&flare),
        "--fov",
        "60",
        "--identity",
    ]));
    let mut sum = 0.0f64;
    for x in 17..20 {
        for y in 16..18 {
            sum += depth.get(x, y) as f64;
        }
    }
    assert!((v["d_i"].as_f64().unwrap() - sum / 6.0).abs() < 1e-12);
    assert_eq!(v["light_source_pixels"], 6);
    assert_eq!(v["provenance"]["light_source_origin"], "provided_mask");
}

#[test]
fn inspect_rejects_zero_fov() {
    let dir = tempfile::tempdir().unwrap();
    let (bg, depth, flare) = center_point_files(dir.path(), DepthMap::constant(33, 33, 4.0).unwrap());
    let e = error_json(&run(&[
        "inspect",
        "--background",
        p(&bg),
        "--depth",
        p(&depth),
        "--flare",
        p(&flare),
        "--fov",
        "0",
    ]));
    assert_eq!(e["error_kind"], "ConfigError");
}
