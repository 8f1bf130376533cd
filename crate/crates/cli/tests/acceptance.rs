//! Acceptance criteria. Run with `cargo test --test acceptance`; prints one
//! PASS / FAIL line per criterion and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use flareforge::afm::{apply_mask, compute_threshold, generate_mask, ThresholdStrategy};
use flareforge::augment::AffineParams;
use flareforge::bam::brightness_scales;
use flareforge::image::{ColorSpace, DepthMap, Image, LuminanceMap, RegionMask};
use flareforge::io;
use flareforge::metrics::{masked_psnr, psnr, ssim};
use flareforge::rng::SeededRng;
use flareforge::spe::{incident_angle, FlarePlacement};
use flareforge::synth::{
    render_plan, replay_from_files, sample_plan, sha256_hex, synthesize_pair, FlareTemplate, GtMode, Manifest,
    SynthConfig, SynthRecord, TemplateLibrary,
};
use flareforge::testkit::{self, two_light_fixture, write_dataset, DatasetSpec};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn placement(depth_d: f64, theta: f64) -> FlarePlacement {
    FlarePlacement {
        affine: AffineParams::IDENTITY,
        depth_d,
        radius_r: 0.0,
        theta,
        scale_s: 1.0,
    }
}

/// Scalar evaluator of `s_i = (d_bar / d_i)^2 cos(theta_i)`.
fn reference_scale(depths: &[f64], i: usize, theta: f64) -> f64 {
    let mut d_bar = 0.0;
    for d in depths {
        d_bar += d;
    }
    d_bar /= depths.len() as f64;
    let q = d_bar / depths[i];
    q * q * theta.cos()
}

fn illumination_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::for_sample(2024, 0, 0);
    let mut worst = 0.0f64;
    let mut placements_checked = 0;
    while placements_checked < 1000 {
        let n = (rng.uniform_int(1, 8) as usize).min(1000 - placements_checked);
        let depths: Vec<f64> = (0..n).map(|_| rng.uniform(0.05, 200.0)).collect();
        let thetas: Vec<f64> = (0..n).map(|_| rng.uniform(0.0, 1.55)).collect();
        let ps: Vec<_> = depths.iter().zip(&thetas).map(|(&d, &t)| placement(d, t)).collect();
        let got = brightness_scales(&ps).map_err(|e| e.to_string())?;
        for i in 0..n {
            let want = reference_scale(&depths, i, thetas[i]);
            worst = worst.max((got[i] - want).abs() / want.abs());
        }
        placements_checked += n;
    }
    check(worst < 1e-9, || format!("max relative error {worst:e}"))?;
    for n in 1..=8 {
        for d in [0.3, 1.0, 7.0, 123.456] {
            let s = brightness_scales(&vec![placement(d, 0.0); n]).map_err(|e| e.to_string())?;
            check(s.iter().all(|&v| v == 1.0), || {
                format!("equal depth {d} x{n} gave {s:?}")
            })?;
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "{placements_checked} placements, max rel err {worst:.1e}, {:?}",
        start.elapsed()
    ))
}

fn spe_geometry() -> Outcome {
    let start = Instant::now();
    let width = 640;
    let e = |r| incident_angle(r, width, FRAC_PI_2).map_err(|e| e.to_string());
    check(e(0.0)? == 0.0, || "theta(0) != 0".into())?;
    check(e(320.0)? == FRAC_PI_4, || "theta(W/2, 90deg) != 45deg".into())?;
    let rs: Vec<f64> = (0..100).map(|i| i as f64 * width as f64 / 99.0).collect();
    let phis: Vec<f64> = (0..100).map(|j| (j as f64 + 1.0) / 101.0 * PI).collect();
    let mut grid = vec![vec![0.0; 100]; 100];
    for (i, &r) in rs.iter().enumerate() {
        for (j, &phi) in phis.iter().enumerate() {
            grid[i][j] = incident_angle(r, width, phi).map_err(|e| e.to_string())?;
        }
    }
    for i in 0..100 {
        for j in 0..100 {
            if i > 0 {
                check(grid[i][j] > grid[i - 1][j], || {
                    format!("not increasing in r at ({i}, {j})")
                })?;
            }
            if j > 0 && i > 0 {
                check(grid[i][j] > grid[i][j - 1], || {
                    format!("not increasing in fov at ({i}, {j})")
                })?;
            }
            if i == 0 {
                check(grid[i][j] == 0.0, || "theta at r = 0 must vanish".into())?;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("100x100 grid, {:?}", start.elapsed()))
}

fn depth_ordering() -> Outcome {
    let start = Instant::now();
    let f = two_light_fixture();
    let r = render_plan(&f.plan, &f.background, &f.depth, &f.template).map_err(|e| e.to_string())?;
    let energy = |d: &[f32]| d.iter().map(|&v| v as f64).sum::<f64>();
    let template = energy(f.template.image.data());
    let near = energy(r.layers[0].data()) / (template * r.flares[0].theta.cos());
    let far = energy(r.layers[1].data()) / (template * r.flares[1].theta.cos());
    let ratio = energy(r.layers[0].data()) / energy(r.layers[1].data());
    check((near / 2.25 - 1.0).abs() < 0.02, || {
        format!("near light {near}, expected 2.25")
    })?;
    check((far / 0.5625 - 1.0).abs() < 0.02, || {
        format!("far light {far}, expected 0.5625")
    })?;
    check((ratio / 4.0 - 1.0).abs() < 0.02, || {
        format!("ratio {ratio}, expected 4")
    })?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "near {near:.4} far {far:.4} ratio {ratio:.4}, {:?}",
        start.elapsed()
    ))
}

fn synth_run(dirs: &flareforge::synth::DatasetDirs, out: &Path, jobs: &str) -> Result<Duration, String> {
    let start = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_flareforge"))
        .env_remove("FLAREFORGE_SEED")
        .args(["synth", "--seed", "7", "--count", "20", "--jobs", jobs, "--quiet"])
        .arg("--backgrounds")
        .arg(&dirs.backgrounds)
        .arg("--depths")
        .arg(&dirs.depths)
        .arg("--flares")
        .arg(&dirs.flares)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    check(status.status.success(), || {
        String::from_utf8_lossy(&status.stderr).into_owned()
    })?;
    Ok(start.elapsed())
}

fn digests(out: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for sub in ["input", "gt", "mask", "records"] {
        let mut entries: Vec<_> = fs::read_dir(out.join(sub))
            .map_err(|e| e.to_string())?
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let bytes = fs::read(e.path()).map_err(|e| e.to_string())?;
            map.insert(format!("{sub}/{}", e.file_name().to_string_lossy()), sha256_hex(&bytes));
        }
    }
    Ok(map)
}

struct DeterminismRun {
    _dir: tempfile::TempDir,
    out: std::path::PathBuf,
}

fn determinism(shared: &mut Option<DeterminismRun>) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dirs = write_dataset(
        dir.path().join("in"),
        &DatasetSpec {
            backgrounds: 4,
            width: 512,
            height: 512,
            templates: 3,
            template_size: 512,
        },
    )
    .map_err(|e| e.to_string())?;
    let one = dir.path().join("jobs1");
    let eight = dir.path().join("jobs8");
    let t1 = synth_run(&dirs, &one, "1")?;
    let t8 = synth_run(&dirs, &eight, "8")?;
    let a = digests(&one)?;
    let b = digests(&eight)?;
    check(a.len() == 80, || format!("{} files, expected 80", a.len()))?;
    check(a == b, || {
        let differing: Vec<_> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, _)| k.clone())
            .collect();
        format!("digests differ: {differing:?}")
    })?;
    within(t1, Duration::from_secs(60))?;
    within(t8, Duration::from_secs(60))?;
    *shared = Some(DeterminismRun { _dir: dir, out: one });
    Ok(format!("80 files identical, jobs=1 {t1:?}, jobs=8 {t8:?}"))
}

fn library() -> TemplateLibrary {
    TemplateLibrary::from_templates(vec![
        testkit::template_with_mask("masked", 96),
        FlareTemplate::new("plain", testkit::flare_template(96, 2.0), None).expect("template"),
    ])
}

fn compositing() -> Outcome {
    let lib = library();
    let (w, h) = (96, 64);
    let depth = testkit::ramp_depth(w, h);
    let mut pairs = 0;
    for seed in 0..30u64 {
        let bg = testkit::night_background(w, h, seed);
        for (mode, space) in [
            (GtMode::BackgroundOnly, ColorSpace::Linear),
            (GtMode::BackgroundOnly, ColorSpace::Encoded),
            (GtMode::Auto, ColorSpace::Linear),
        ] {
            let cfg = SynthConfig {
                master_seed: seed,
                gt_mode: mode,
                compose_space: space,
                ..SynthConfig::default()
            };
            let pair = synthesize_pair(&cfg, &bg, &depth, &lib, seed * 3).map_err(|e| e.to_string())?;
            check(
                pair.input
                    .data()
                    .iter()
                    .chain(pair.gt.data())
                    .all(|v| (0.0..=1.0).contains(v)),
                || format!("seed {seed}: sample outside [0, 1]"),
            )?;
            if mode == GtMode::BackgroundOnly {
                check(pair.gt.data() == bg.data(), || {
                    format!("seed {seed}: gt differs from background")
                })?;
                check(
                    pair.input.data().iter().zip(pair.gt.data()).all(|(i, g)| i >= g),
                    || format!("seed {seed}: input below gt"),
                )?;
            }

            let mut plan = sample_plan(&cfg, &lib, w, h, seed).map_err(|e| e.to_string())?;
            plan.affines.clear();
            let template = lib
                .get(lib.position(&plan.template_id).expect("id"))
                .map_err(|e| e.to_string())?;
            let r = render_plan(&plan, &bg, &depth, &template).map_err(|e| e.to_string())?;
            check(r.input.data() == bg.data() && r.gt.data() == bg.data(), || {
                format!("seed {seed}: zero-flare hook not exact")
            })?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs in range, zero-flare exact, input >= gt"))
}

fn afm_suite() -> Outcome {
    let mut rng = SeededRng::for_sample(99, 0, 0);
    for k in 0..50 {
        let (w, h) = (rng.uniform_int(1, 24) as usize, rng.uniform_int(1, 24) as usize);
        let img = Image::from_fn(w, h, ColorSpace::Encoded, |_, _| {
            [rng.unit() as f32, rng.unit() as f32, rng.unit() as f32]
        })
        .map_err(|e| e.to_string())?;
        let y = img.to_luma_bt601();
        let mut taus: Vec<f64> = (0..6).map(|_| rng.uniform(-0.1, 1.1)).collect();
        taus.sort_by(f64::total_cmp);
        let masks: Vec<RegionMask> = taus
            .iter()
            .map(|&t| generate_mask(&y, t).map(|r| r.mask))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for pair in masks.windows(2) {
            check(
                pair[0].data().iter().zip(pair[1].data()).all(|(&lo, &hi)| !hi || lo),
                || format!("fixture {k}: mask grew with tau"),
            )?;
        }
        for m in &masks {
            let once = apply_mask(&img, m).map_err(|e| e.to_string())?;
            let twice = apply_mask(&once, m).map_err(|e| e.to_string())?;
            check(once == twice, || format!("fixture {k}: apply not idempotent"))?;
        }
        let tau =
            compute_threshold(&y, &ThresholdStrategy::AffineOfMean { w: 0.0, b: 0.0 }).map_err(|e| e.to_string())?;
        check(tau == 0.5, || format!("fixture {k}: affine_of_mean(0, 0) gave {tau}"))?;
        let idx = rng.uniform_int(0, (w * h - 1) as u64) as usize;
        let boundary = y.data()[idx] as f64;
        let m = generate_mask(&y, boundary).map_err(|e| e.to_string())?;
        check(m.mask.data()[idx], || format!("fixture {k}: Y' == tau not in mask"))?;
    }
    let single = LuminanceMap::new(1, 1, vec![0.25]).map_err(|e| e.to_string())?;
    check(
        generate_mask(&single, 0.25).map_err(|e| e.to_string())?.mask.get(0, 0),
        || "boundary".into(),
    )?;
    Ok("50 fixtures: monotone, idempotent, sigmoid(0) = 0.5, boundary inclusive".into())
}

const SKIMAGE_SSIM: f64 = 0.5142490616768537;

fn metrics_oracles() -> Outcome {
    let zero = Image::zeros(32, 32, ColorSpace::Encoded).map_err(|e| e.to_string())?;
    let tenth = Image::filled(32, 32, ColorSpace::Encoded, [0.1; 3]).map_err(|e| e.to_string())?;
    let p = psnr(&zero, &tenth).map_err(|e| e.to_string())?;
    check((p - 20.0).abs() < 1e-6, || format!("uniform 0.1 diff gave {p} dB"))?;

    let a = testkit::night_background(40, 30, 5);
    let b = testkit::night_background(40, 30, 6);
    let full = RegionMask::full(40, 30).map_err(|e| e.to_string())?;
    let diff =
        (masked_psnr(&a, &b, &full).map_err(|e| e.to_string())? - psnr(&a, &b).map_err(|e| e.to_string())?).abs();
    check(diff < 1e-9, || format!("full-mask masked psnr off by {diff}"))?;

    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let fa = io::load_png(fixtures.join("ssim_a.png")).map_err(|e| e.to_string())?;
    let fb = io::load_png(fixtures.join("ssim_b.png")).map_err(|e| e.to_string())?;
    let s = ssim(&fa, &fb).map_err(|e| e.to_string())?;
    check((s - SKIMAGE_SSIM).abs() < 1e-4, || {
        format!("fixture ssim {s} vs reference {SKIMAGE_SSIM}")
    })?;

    let one = Image::filled(16, 16, ColorSpace::Encoded, [1.0; 3]).map_err(|e| e.to_string())?;
    let zero16 = Image::zeros(16, 16, ColorSpace::Encoded).map_err(|e| e.to_string())?;
    let c1 = 0.01f64.powi(2);
    let cs = ssim(&zero16, &one).map_err(|e| e.to_string())?;
    check((cs - c1 / (1.0 + c1)).abs() < 1e-9, || format!("constant ssim {cs}"))?;
    Ok(format!("psnr {p:.9} dB, ssim fixture {s:.6} (ref {SKIMAGE_SSIM:.6})"))
}

fn brightness_prior() -> Outcome {
    let lib = library();
    let (w, h) = (128, 96);
    let mut ok = 0;
    for i in 0..50u64 {
        let bg = testkit::night_background(w, h, 1000 + i);
        let depth = DepthMap::from_fn(w, h, |x, y| {
            (1.0 + 3.0 * (h - y) as f64 / h as f64 + (x as f64 / w as f64)) as f32
        })
        .map_err(|e| e.to_string())?;
        let cfg = SynthConfig {
            master_seed: 31,
            ..SynthConfig::default()
        };
        let pair = synthesize_pair(&cfg, &bg, &depth, &lib, i).map_err(|e| e.to_string())?;
        let y = pair.input.to_luma_bt601();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
        for (&v, &m) in y.data().iter().zip(pair.flare_mask.data()) {
            if m {
                si += v as f64;
                ni += 1;
            } else {
                so += v as f64;
                no += 1;
            }
        }
        if ni > 0 && (no == 0 || si / ni as f64 > so / no as f64) {
            ok += 1;
        }
    }
    check(ok >= 48, || {
        format!("only {ok}/50 pairs brighter inside the flare mask")
    })?;
    Ok(format!("{ok}/50 pairs brighter inside the flare mask"))
}

fn replay(shared: &Option<DeterminismRun>) -> Outcome {
    let run = shared.as_ref().ok_or("needs the determinism run output")?;
    let manifest = Manifest::load(run.out.join("manifest.json")).map_err(|e| e.to_string())?;
    for entry in &manifest.pairs {
        let record = SynthRecord::load(run.out.join(&entry.files.record)).map_err(|e| e.to_string())?;
        let r = replay_from_files(&record).map_err(|e| e.to_string())?;
        let same = |rel: &str, bytes: Vec<u8>| fs::read(run.out.join(rel)).map(|b| b == bytes).unwrap_or(false);
        check(
            same(&entry.files.input, io::encode_png(&r.input).map_err(|e| e.to_string())?),
            || format!("{} input", entry.index),
        )?;
        check(
            same(&entry.files.gt, io::encode_png(&r.gt).map_err(|e| e.to_string())?),
            || format!("{} gt", entry.index),
        )?;
        check(
            same(
                &entry.files.mask,
                io::encode_mask_png(&r.flare_mask).map_err(|e| e.to_string())?,
            ),
            || format!("{} mask", entry.index),
        )?;
        check(r.flares == record.flares, || format!("{} flare records", entry.index))?;
    }
    Ok(format!("{} records replayed bit-exactly", manifest.pairs.len()))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    match outcome {
        Ok(detail) => {
            println!("PASS  {name:<28} {detail}");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<28} {why}");
            false
        }
    }
}

fn main() {
    let mut shared = None;
    let results = [
        run("illumination-law oracle", illumination_oracle),
        run("incident-angle geometry", spe_geometry),
        run("depth ordering", depth_ordering),
        run("determinism across jobs", || determinism(&mut shared)),
        run("compositing", compositing),
        run("luminance mask suite", afm_suite),
        run("metric oracles", metrics_oracles),
        run("flare brightness prior", brightness_prior),
        run("replay", || replay(&shared)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
