// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use smallobj::anchors::dataset_statistics;
use smallobj::coco::{load_dataset, load_dataset_with_diagnostics, validate_dataset, SizeBasis};
use smallobj::config::{
    parse_blend, parse_list, parse_mode, AnchorSection, AugmentSection, ConfigFile, EffectiveConfig, ResizeSection,
    SynthSection,
};
use smallobj::augment::{OverlapGranularity, OverlapPolicy};
use smallobj::pipeline::{build_output, generate_synthetic_corpus, PipelinePlan};
use smallobj::Error;

#[derive(Parser)]
#[command(name = "smallobj", version, about = "Small-object statistics and copy-paste augmentation for COCO datasets")]
struct Cli {
    /// Global seed; a random one is picked and printed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (augment, oversample, synth) or report file (analyze, validate).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-size-class composition and anchor matching statistics.
    Analyze(AnalyzeArgs),
    /// Copy-paste augmentation of a dataset directory.
    Augment(AugmentArgs),
    /// Offline oversampling of images with small objects.
    Oversample(OversampleArgs),
    /// Generate a synthetic corpus of flat shapes.
    Synth(SynthArgs),
    /// Check a dataset for consistency.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct BasisArg {
    /// Area deciding the size class: mask or bbox.
    #[arg(long, value_parser = parse_basis)]
    size_basis: Option<SizeBasis>,
}

#[derive(Args)]
struct AnalyzeArgs {
    annotations: PathBuf,
    #[arg(long)]
    iou_threshold: Option<f64>,
    /// Comma-separated, one per pyramid level.
    #[arg(long)]
    strides: Option<String>,
    /// Comma-separated, one per pyramid level.
    #[arg(long)]
    base_sizes: Option<String>,
    /// Comma-separated height/width ratios.
    #[arg(long)]
    ratios: Option<String>,
    /// Rescale images before matching, as SHORT:MAX (e.g. 800:1333).
    #[arg(long)]
    resize: Option<String>,
    /// Do not give unmatched objects their best anchor.
    #[arg(long)]
    no_force_argmax: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    basis: BasisArg,
}

#[derive(Args)]
struct DatasetArgs {
    /// Directory holding annotations.json and images/.
    dataset: PathBuf,
    /// Annotation file, if not DATASET/annotations.json.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Image directory, if not DATASET/images.
    #[arg(long)]
    image_root: Option<PathBuf>,
}

impl DatasetArgs {
    fn annotations(&self) -> PathBuf {
        self.annotations.clone().unwrap_or_else(|| self.dataset.join("annotations.json"))
    }

    fn image_root(&self) -> PathBuf {
        self.image_root.clone().unwrap_or_else(|| self.dataset.join("images"))
    }
}

#[derive(Args)]
struct AugmentArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// replace, aug-oversample:N or original+aug.
    #[arg(long)]
    mode: Option<String>,
    /// single, multiple or all.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    copies: Option<u32>,
    /// Share of candidates pasted by the `multiple` strategy.
    #[arg(long)]
    object_fraction: Option<f64>,
    /// hard or gaussian:K.
    #[arg(long)]
    blend: Option<String>,
    #[arg(long, value_parser = parse_policy)]
    overlap: Option<OverlapPolicy>,
    #[arg(long, value_parser = parse_granularity)]
    overlap_granularity: Option<OverlapGranularity>,
    #[arg(long)]
    border_margin: Option<u32>,
    #[arg(long)]
    max_placement_attempts: Option<u32>,
    /// Oversample small-object images this many times before augmenting.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    oversample: Option<u32>,
    #[command(flatten)]
    basis: BasisArg,
}

#[derive(Args)]
struct OversampleArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    ratio: u32,
    #[command(flatten)]
    basis: BasisArg,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    images: Option<u32>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    small: Option<u32>,
    #[arg(long)]
    medium: Option<u32>,
    #[arg(long)]
    large: Option<u32>,
}

#[derive(Args)]
struct ValidateArgs {
    annotations: PathBuf,
    /// Cross-check each stored area against its rasterized mask.
    #[arg(long)]
    recompute_area: bool,
}

fn parse_basis(s: &str) -> Result<SizeBasis, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_policy(s: &str) -> Result<OverlapPolicy, String> {
    match s {
        "reject" => Ok(OverlapPolicy::Reject),
        "allow" => Ok(OverlapPolicy::Allow),
        _ => Err(format!("expected reject or allow, got `{s}`")),
    }
}

fn parse_granularity(s: &str) -> Result<OverlapGranularity, String> {
    match s {
        "mask" => Ok(OverlapGranularity::Mask),
        "bbox" => Ok(OverlapGranularity::BBox),
        _ => Err(format!("expected mask or bbox, got `{s}`")),
    }
}

/// Failure split into usage (exit 2) and data/runtime (exit 1) errors.
enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => Failure::Usage(m),
            other => Failure::Data(other),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn list(s: &Option<String>) -> CliResult<Option<Vec<f64>>> {
    s.as_deref().map(parse_list).transpose().map_err(Failure::from)
}

fn parse_resize(s: &str) -> CliResult<ResizeSection> {
    let bad = || Failure::Usage(format!("--resize expects SHORT:MAX, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok(ResizeSection {
        short_side: a.parse().map_err(|_| bad())?,
        max_side: b.parse().map_err(|_| bad())?,
    })
}

struct Context {
    config: ConfigFile,
    out: Option<PathBuf>,
}

impl Context {
    /// Seed from flags or config; otherwise a fresh one, printed so the run
    /// can be repeated.
    fn seed(&self) -> u64 {
        self.config.seed.unwrap_or_else(|| {
            let s = rand::rng().random();
            eprintln!("seed: {s}");
            s
        })
    }

    fn jobs(&self) -> Option<usize> {
        self.config.jobs
    }

    fn out_dir(&self) -> CliResult<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::Usage("--out is required for this command".into()))
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> CliResult<T> {
        match self.jobs() {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map(|pool| pool.install(f))
                .map_err(|e| Failure::Usage(format!("thread pool: {e}"))),
            None => Ok(f()),
        }
    }
}

fn write_or_print(out: Option<&Path>, json: &serde_json::Value) -> CliResult {
    let text = serde_json::to_string_pretty(json).expect("json value serializes");
    match out {
        Some(p) => fs::write(p, text + "\n").map_err(|e| Failure::Data(Error::Io { path: p.into(), source: e })),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn analyze(ctx: Context, args: AnalyzeArgs) -> CliResult {
    let flags = ConfigFile {
        size_basis: args.basis.size_basis,
        anchors: AnchorSection {
            strides: list(&args.strides)?,
            base_sizes: list(&args.base_sizes)?,
            ratios: list(&args.ratios)?,
            iou_threshold: args.iou_threshold,
            force_argmax: args.no_force_argmax.then_some(false),
            resize: args.resize.as_deref().map(parse_resize).transpose()?,
        },
        ..Default::default()
    };
    let config = flags.overlay(ctx.config.clone());
    let cfg = config.anchor_config()?;
    let basis = config.size_basis();
    let (d, diag) = load_dataset_with_diagnostics(&args.annotations)?;
    if !diag.rejected.is_empty() {
        log::warn!("{} annotations dropped while loading", diag.rejected.len());
    }
    let stats = ctx.in_pool(|| dataset_statistics(&d, &cfg, basis))??;
    let json = serde_json::to_value(&stats).expect("stats serialize");
    if let Some(out) = &ctx.out {
        write_or_print(Some(out), &json)?;
    }
    if args.json {
        write_or_print(None, &json)?;
    } else {
        print!("{}", stats.to_table());
    }
    Ok(())
}

fn remove_if_created(dir: &Path, existed: bool) {
    if !existed {
        let _ = fs::remove_dir_all(dir);
    }
}

fn augment(ctx: Context, args: AugmentArgs) -> CliResult {
    let flags = ConfigFile {
        size_basis: args.basis.size_basis,
        augment: AugmentSection {
            mode: args.mode.clone(),
            strategy: args.strategy.clone(),
            copies: args.copies,
            object_fraction: args.object_fraction,
            blend: args.blend.clone(),
            overlap: args.overlap,
            overlap_granularity: args.overlap_granularity,
            border_margin: args.border_margin,
            max_placement_attempts: args.max_placement_attempts,
            oversample_ratio: args.oversample,
            ..Default::default()
        },
        ..Default::default()
    };
    let config = flags.overlay(ctx.config.clone());
    // validate string forms before touching the filesystem
    if let Some(b) = &config.augment.blend {
        parse_blend(b)?;
    }
    if let Some(m) = &config.augment.mode {
        parse_mode(m)?;
    }
    let aug = config.augmentation_config()?;
    let mode = config.output_mode()?;
    let out = ctx.out_dir()?.to_path_buf();
    let seed = ctx.seed();
    let plan = PipelinePlan {
        oversample_ratio: config.oversample_ratio(),
        mode,
        aug: Some(aug.clone()),
        output_dir: out,
        seed,
        size_basis: config.size_basis(),
        jobs: ctx.jobs(),
    };
    let effective = EffectiveConfig {
        seed,
        jobs: plan.jobs,
        size_basis: plan.size_basis,
        anchors: None,
        augment: Some(aug),
        mode: Some(mode),
        oversample_ratio: plan.oversample_ratio,
    };
    let d = load_dataset(&args.data.annotations())?;
    let (_, report) = build_output(
        &d,
        &plan,
        &args.data.image_root(),
        Some(serde_json::to_value(&effective).expect("config serializes")),
    )?;
    println!(
        "{} images in, {} out ({} augmented); pastes: {} placed, {} failed of {} attempted",
        report.images_in,
        report.images_out,
        report.augmented_images_out,
        report.paste_successes,
        report.paste_failures,
        report.paste_attempts
    );
    Ok(())
}

fn oversample(ctx: Context, args: OversampleArgs) -> CliResult {
    let config = ConfigFile {
        size_basis: args.basis.size_basis,
        ..Default::default()
    }
    .overlay(ctx.config.clone());
    let out = ctx.out_dir()?.to_path_buf();
    let mut plan = PipelinePlan::oversample_only(out, args.ratio, config.seed.unwrap_or(0));
    plan.size_basis = config.size_basis();
    plan.jobs = ctx.jobs();
    let effective = EffectiveConfig {
        seed: plan.seed,
        jobs: plan.jobs,
        size_basis: plan.size_basis,
        anchors: None,
        augment: None,
        mode: None,
        oversample_ratio: args.ratio,
    };
    let d = load_dataset(&args.data.annotations())?;
    let (_, report) = build_output(
        &d,
        &plan,
        &args.data.image_root(),
        Some(serde_json::to_value(&effective).expect("config serializes")),
    )?;
    println!("{} images in, {} out", report.images_in, report.images_out);
    Ok(())
}

fn synth(ctx: Context, args: SynthArgs) -> CliResult {
    let config = ConfigFile {
        synth: SynthSection {
            images: args.images,
            width: args.width,
            height: args.height,
            small: args.small,
            medium: args.medium,
            large: args.large,
        },
        ..Default::default()
    }
    .overlay(ctx.config.clone());
    let spec = config.synthetic_spec();
    let out = ctx.out_dir()?.to_path_buf();
    let seed = ctx.seed();
    let existed = out.exists();
    let res = ctx.in_pool(|| generate_synthetic_corpus(&spec, seed, &out))?;
    match res {
        Ok(d) => {
            println!(
                "wrote {} images, {} annotations to {}",
                d.images().len(),
                d.annotations().len(),
                out.display()
            );
            Ok(())
        }
        Err(e) => {
            remove_if_created(&out, existed);
            Err(Failure::Data(e))
        }
    }
}

fn validate(ctx: Context, args: ValidateArgs) -> CliResult {
    let (d, diag) = load_dataset_with_diagnostics(&args.annotations)?;
    let report = validate_dataset(&d, diag, args.recompute_area);
    for id in &report.load.clamped {
        println!("clamped: annotation {id}");
    }
    for r in &report.load.rejected {
        println!("rejected: annotation {}: {}", r.id, r.reason);
    }
    for r in &report.unrasterizable {
        println!("unrasterizable: annotation {}: {}", r.id, r.reason);
    }
    for m in &report.area_mismatches {
        println!(
            "warning: annotation {} area {} vs mask area {} ({:.2}% off)",
            m.annotation_id,
            m.stored_area,
            m.mask_area,
            m.relative_error * 100.0
        );
    }
    if let Some(out) = &ctx.out {
        write_or_print(Some(out), &serde_json::to_value(&report).expect("report serializes"))?;
    }
    println!(
        "{} images, {} annotations: {}",
        report.images,
        report.annotations,
        if report.is_clean() { "clean" } else { "issues found" }
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(Failure::Data(Error::InvalidRecord {
            record: args.annotations.display().to_string(),
            reason: "validation found issues".into(),
        }))
    }
}

fn run(cli: Cli) -> CliResult {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let config = ConfigFile {
        seed: cli.seed,
        jobs: cli.jobs.map(|j| j as usize),
        ..Default::default()
    }
    .overlay(file);
    let ctx = Context { config, out: cli.out };
    match cli.command {
        Command::Analyze(a) => analyze(ctx, a),
        Command::Augment(a) => augment(ctx, a),
        Command::Oversample(a) => oversample(ctx, a),
        Command::Synth(a) => synth(ctx, a),
        Command::Validate(a) => validate(ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
