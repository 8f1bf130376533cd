//! `flareforge` command-line tool.
//!
//! Errors are reported as one JSON object `{"error_kind", "message"}` on
//! stderr with a non-zero exit status.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use flareforge::afm::{self, ThresholdStrategy};
use flareforge::augment::{AffineParams, Range};
use flareforge::image::ColorSpace;
use flareforge::io;
use flareforge::metrics::{evaluate_dirs, RegionDirs};
use flareforge::synth::{self, CountRange, DatasetDirs, FlareTemplate, FovMode, GtMode, SynthConfig, TemplateLibrary};
use flareforge::{Error, Result};

#[derive(Parser)]
#[command(
    name = "flareforge",
    version,
    about = "Nighttime lens-flare pair synthesis, masking and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of flare-corrupted / clean pairs.
    Synth(SynthArgs),
    /// Threshold an image's luminance into a binary mask.
    Mask(MaskArgs),
    /// Compute PSNR, SSIM and region PSNRs between two directories.
    Eval(EvalArgs),
    /// Print the placement diagnostics of one sampled flare without writing images.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Linear,
    Encoded,
}

impl From<SpaceArg> for ColorSpace {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Linear => ColorSpace::Linear,
            SpaceArg::Encoded => ColorSpace::Encoded,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GtArg {
    Auto,
    BackgroundOnly,
    BackgroundPlusLightSource,
}

impl From<GtArg> for GtMode {
    fn from(g: GtArg) -> Self {
        match g {
            GtArg::Auto => GtMode::Auto,
            GtArg::BackgroundOnly => GtMode::BackgroundOnly,
            GtArg::BackgroundPlusLightSource => GtMode::BackgroundPlusLightSource,
        }
    }
}

/// Settings shared by `synth` and `inspect`. Flags override the config file.
#[derive(Args)]
struct ConfigArgs {
    /// JSON synthesis config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed. Falls back to FLAREFORGE_SEED, then the config file.
    #[arg(long, env = "FLAREFORGE_SEED")]
    seed: Option<u64>,
    /// Fixed field of view in degrees.
    #[arg(long, conflicts_with = "fov_random")]
    fov: Option<f64>,
    /// Comma-separated field-of-view choices in degrees, one drawn per pair.
    #[arg(long, value_delimiter = ',')]
    fov_random: Option<Vec<f64>>,
    /// Smallest number of flares per pair.
    #[arg(long)]
    flare_min: Option<u32>,
    /// Largest number of flares per pair.
    #[arg(long)]
    flare_max: Option<u32>,
    /// Lower bound of the per-pair gamma draw.
    #[arg(long)]
    gamma_min: Option<f64>,
    /// Upper bound of the per-pair gamma draw.
    #[arg(long)]
    gamma_max: Option<f64>,
    /// Space in which flares are added to the background.
    #[arg(long, value_enum)]
    compose_space: Option<SpaceArg>,
    /// Ground-truth content.
    #[arg(long, value_enum)]
    gt_mode: Option<GtArg>,
    /// Luma threshold that marks a flare's light source.
    #[arg(long)]
    tau_ls: Option<f64>,
    /// Depth files hold inverse depth (disparity).
    #[arg(long)]
    depth_inverse: bool,
}

impl ConfigArgs {
    fn effective(&self) -> Result<SynthConfig> {
        let mut cfg = match &self.config {
            Some(p) => SynthConfig::load(p)?,
            None => SynthConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(d) = self.fov {
            cfg.fov = FovMode::Fixed(d);
        }
        if let Some(list) = &self.fov_random {
            cfg.fov = FovMode::RandomChoice(list.clone());
        }
        if let Some(n) = self.flare_min {
            cfg.flare_count.min = n;
        }
        if let Some(n) = self.flare_max {
            cfg.flare_count.max = n;
        }
        if self.gamma_min.is_some() || self.gamma_max.is_some() {
            let base = cfg.gamma.unwrap_or(Range::new(1.8, 2.2));
            cfg.gamma = Some(Range::new(
                self.gamma_min.unwrap_or(base.low),
                self.gamma_max.unwrap_or(base.high),
            ));
        }
        if let Some(s) = self.compose_space {
            cfg.compose_space = s.into();
        }
        if let Some(g) = self.gt_mode {
            cfg.gt_mode = g.into();
        }
        if let Some(t) = self.tau_ls {
            cfg.tau_ls = t;
        }
        if self.depth_inverse {
            cfg.depth_inverse = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Directory of background PNGs.
    #[arg(long)]
    backgrounds: PathBuf,
    /// Directory of `<background stem>.pfm` depth maps.
    #[arg(long)]
    depths: PathBuf,
    /// Directory of flare template PNGs, with optional `<stem>_ls.png` masks.
    #[arg(long)]
    flares: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of pairs to synthesize.
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Worker threads. Outputs do not depend on this value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Fixed,
    #[value(alias = "affine")]
    AffineOfMean,
    Percentile,
}

#[derive(Args)]
struct MaskArgs {
    /// Input PNG.
    #[arg(long)]
    input: PathBuf,
    /// Output mask PNG (0 / 255).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the masked image here.
    #[arg(long)]
    masked: Option<PathBuf>,
    /// Threshold strategy; inferred from --tau, --w/--b or --p when omitted.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Fixed threshold in (0, 1).
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Weight of the affine-of-mean strategy.
    #[arg(long, allow_negative_numbers = true)]
    w: Option<f64>,
    /// Bias of the affine-of-mean strategy.
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    /// Percentile in [0, 100].
    #[arg(long, allow_negative_numbers = true)]
    p: Option<f64>,
}

impl MaskArgs {
    fn strategy(&self) -> Result<ThresholdStrategy> {
        let kind = match self.strategy {
            Some(k) => k,
            None => match (
                self.tau.is_some(),
                self.w.is_some() || self.b.is_some(),
                self.p.is_some(),
            ) {
                (true, false, false) => StrategyArg::Fixed,
                (false, _, false) => StrategyArg::AffineOfMean,
                (false, false, true) => StrategyArg::Percentile,
                _ => return Err(Error::Config("give parameters of one strategy only".into())),
            },
        };
        let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Error::Config(format!("strategy needs {flag}")));
        let s = match kind {
            StrategyArg::Fixed => ThresholdStrategy::Fixed {
                tau: need(self.tau, "--tau")?,
            },
            StrategyArg::AffineOfMean => ThresholdStrategy::AffineOfMean {
                w: self.w.unwrap_or(0.0),
                b: self.b.unwrap_or(0.0),
            },
            StrategyArg::Percentile => ThresholdStrategy::Percentile {
                p: need(self.p, "--p")?,
            },
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of predicted PNGs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory of ground-truth PNGs with matching names.
    #[arg(long)]
    gt: PathBuf,
    /// Binary glare masks, one per image, for G-PSNR.
    #[arg(long)]
    glare_masks: Option<PathBuf>,
    /// Binary streak masks, one per image, for S-PSNR.
    #[arg(long)]
    streak_masks: Option<PathBuf>,
    /// Combined flare masks, such as the synthesizer's `mask/` directory.
    #[arg(long)]
    flare_masks: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print a text table instead of JSON.
    #[arg(long)]
    text: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Background PNG.
    #[arg(long)]
    background: PathBuf,
    /// Depth PFM matching the background.
    #[arg(long)]
    depth: PathBuf,
    /// Flare template PNG; a sibling `<stem>_ls.png` is used as its light-source mask.
    #[arg(long)]
    flare: PathBuf,
    /// Pair index whose random streams are used.
    #[arg(long, default_value_t = 0)]
    index: u64,
    /// Place the flare without a random transform.
    #[arg(long)]
    identity: bool,
}

fn write_json_line(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("JSON value serializes"));
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = a.config.effective()?;
    let dirs = DatasetDirs {
        backgrounds: a.backgrounds.clone(),
        depths: a.depths.clone(),
        flares: a.flares.clone(),
    };
    let quiet = a.quiet;
    let progress = move |done: u64, total: u64| {
        if !quiet {
            eprintln!("[{done}/{total}] pairs written");
        }
    };
    let manifest = synth::run_dataset(&cfg, &dirs, &a.out, a.count, a.jobs, Some(&progress))?;
    if !quiet {
        eprintln!("synthesized {} pairs", manifest.pairs.len());
    }
    println!("{}", a.out.join("manifest.json").display());
    Ok(())
}

fn cmd_mask(a: &MaskArgs) -> Result<()> {
    let strategy = a.strategy()?;
    let img = io::load_png(&a.input)?;
    let result = afm::mask_image(&img, &strategy)?;
    if let Some(out) = &a.out {
        io::write_mask_png(&result.mask, out)?;
    }
    if let Some(out) = &a.masked {
        io::write_png(&afm::apply_mask(&img, &result.mask)?, out)?;
    }
    write_json_line(&json!({
        "tau": result.tau,
        "coverage": result.coverage,
        "strategy": serde_json::to_value(strategy).expect("strategy serializes"),
    }));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let regions = RegionDirs {
        glare: a.glare_masks.clone(),
        streak: a.streak_masks.clone(),
        flare: a.flare_masks.clone(),
    };
    let report = evaluate_dirs(&a.pred, &a.gt, &regions)?;
    let body = if a.text { report.to_text() } else { report.to_json() };
    match &a.out {
        Some(path) => std::fs::write(path, body).map_err(|e| Error::io(path, e))?,
        None => println!("{}", body.trim_end()),
    }
    Ok(())
}

fn cmd_inspect(a: &InspectArgs) -> Result<()> {
    let mut cfg = a.config.effective()?;
    cfg.flare_count = CountRange { min: 1, max: 1 };
    let bg = io::load_png(&a.background)?;
    let depth = io::load_pfm(&a.depth, cfg.depth_inverse, cfg.depth_epsilon)?;
    let template = FlareTemplate::load(&a.flare)?;
    let library = TemplateLibrary::from_templates(vec![template.clone()]);
    let mut plan = synth::sample_plan(&cfg, &library, bg.width(), bg.height(), a.index)?;
    if a.identity {
        plan.affines = vec![AffineParams::IDENTITY];
    }
    let rendered = synth::render_plan(&plan, &bg, &depth, &template)?;
    let f = &rendered.flares[0];
    write_json_line(&json!({
        "d_i": f.depth_d,
        "r_i": f.radius_r,
        "theta_deg": f.theta_deg,
        "scale_s": f.scale_s,
        "light_source_pixels": f.light_source.pixels,
        "provenance": {
            "light_source_origin": f.light_source.origin,
            "master_seed": plan.seeds.master_seed,
            "pair_index": plan.pair_index,
            "flare_stream": plan.seeds.flare_streams[0],
            "fov_degrees": plan.fov_degrees,
            "template": template.path.as_deref().map(Path::display).map(|d| d.to_string()),
            "template_fit": plan.template_fit,
            "affine": f.affine,
            "identity": a.identity,
        },
    }));
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error_kind": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("ConfigError", e.to_string().trim_end()),
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
