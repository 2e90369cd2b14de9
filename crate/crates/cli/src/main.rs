use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eigencrater::eigenbasis::{
    read_template_set, templates_from_patches, write_template_set, PatchLayout, TemplateParams, DEFAULT_ALBEDO_SCALE,
};
use eigencrater::geometry::DEFAULT_MOON_RADIUS_KM;
use eigencrater::matcher::Detection;
use eigencrater::patch::{build_training_set, TrainingParams, DEFAULT_PATCH_SIDE};
use eigencrater::pipeline::{
    evaluate_outputs, load_view, localize_with_pose, onboard_view, run_detection, run_scene, stage_seed, write_run,
    AdaptationMode, LocalizationResult, RunConfig, STAGE_IDENTIFY, STAGE_SYNTH, STAGE_TRAINING,
};
use eigencrater::raster_io;
use eigencrater::render::{render_template, LightingGeometry, Vec3};
use eigencrater::synth::{
    generate_scene, generate_training_field, read_bundle, read_field, write_bundle, write_field, BundleEntry,
    SceneBundle, SceneConfig,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] eigencrater::Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Crater template generation, detection and crater-based localization.
#[derive(Debug, Parser)]
#[command(name = "eigencrater", version, arg_required_else_help = true)]
struct Cli {
    /// Base seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// RunConfig JSON; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic scene bundle, or a training field with --training.
    Synth(SynthArgs),
    /// Extract training patches and build a template set.
    Templates(TemplatesArgs),
    /// Render a template set under fixed lighting.
    Render(RenderArgs),
    /// Detect craters in one view of a scene bundle.
    Detect(DetectArgs),
    /// Estimate the camera position of one view from its detections.
    Localize(LocalizeArgs),
    /// Recompute metrics from detection and estimate files.
    Eval(EvalArgs),
    /// Full pipeline over every view of a scene bundle.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    views: usize,
    #[arg(long, default_value_t = 512)]
    size: usize,
    /// Horizontal field of view, degrees.
    #[arg(long, default_value_t = 30.0)]
    hfov: f64,
    #[arg(long, default_value_t = 100.0)]
    altitude_km: f64,
    #[arg(long, default_value_t = 20.0)]
    incidence_min: f64,
    #[arg(long, default_value_t = 70.0)]
    incidence_max: f64,
    #[arg(long, default_value_t = 0.0)]
    emission_min: f64,
    #[arg(long, default_value_t = 40.0)]
    emission_max: f64,
    /// Also write each view's terrain and georeference.
    #[arg(long)]
    keep_terrain: bool,
    /// Write one square training field of this half-width (km) instead of views.
    #[arg(long)]
    training: Option<f64>,
}

#[derive(Debug, Args)]
struct TemplatesArgs {
    /// Directory with terrain.egr, georef.json and catalog.csv.
    #[arg(long)]
    field: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of clusters (templates).
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Principal components kept.
    #[arg(long, default_value_t = 25)]
    components: usize,
    /// Albedo raster aligned with the terrain; appended to each patch vector.
    #[arg(long)]
    albedo: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ALBEDO_SCALE)]
    albedo_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    min_radius_km: f64,
    #[arg(long, default_value_t = 4.5)]
    max_radius_km: f64,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIDE)]
    patch_side: usize,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    templates: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Sun angle from the local vertical, degrees.
    #[arg(long, default_value_t = 45.0)]
    incidence: f64,
    /// Sun azimuth from template +x toward +y, degrees.
    #[arg(long, default_value_t = 0.0)]
    sun_azimuth: f64,
    /// Viewing angle from the local vertical, degrees.
    #[arg(long, default_value_t = 0.0)]
    emission: f64,
    #[arg(long, default_value_t = 0.0)]
    emission_azimuth: f64,
    #[arg(long, default_value_t = 0.12)]
    albedo: f64,
}

#[derive(Debug, Args)]
struct ViewArgs {
    #[arg(long)]
    scene: PathBuf,
    /// View name inside the bundle.
    #[arg(long)]
    view: String,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long)]
    templates: Option<PathBuf>,
    /// none, no_warp, warp_template or warp_image.
    #[arg(long, default_value = "warp_image")]
    mode: AdaptationMode,
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Output detections JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LocalizeArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long)]
    detections: PathBuf,
    /// Output estimate JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory with <view>/detections.json and <view>/estimate.json.
    #[arg(long)]
    results: PathBuf,
    /// Output summary JSON; the report goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    mode: Option<AdaptationMode>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn run_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.identify.rng_seed = cli.seed;
    Ok(cfg)
}

fn find_view<'a>(bundle: &'a SceneBundle, name: &str) -> CliResult<(usize, &'a BundleEntry)> {
    bundle
        .views
        .iter()
        .enumerate()
        .find(|(_, e)| e.name == name)
        .ok_or_else(|| CliError::Usage(format!("no view named {name:?} in the scene bundle")))
}

fn synth(cli: &Cli, a: &SynthArgs) -> CliResult<()> {
    let cfg = SceneConfig {
        image_width: a.size,
        image_height: a.size,
        hfov_deg: a.hfov,
        altitude_km: a.altitude_km,
        incidence_deg: (a.incidence_min, a.incidence_max),
        emission_deg: (a.emission_min, a.emission_max),
        ..SceneConfig::default()
    };
    if let Some(half) = a.training {
        let field = generate_training_field(&cfg, half, stage_seed(cli.seed, STAGE_TRAINING, 0))?;
        write_field(&a.out, &field)?;
        log::info!("training field with {} craters", field.catalog.len());
        return Ok(());
    }
    let scenes = (0..a.views)
        .map(|i| generate_scene(&cfg, stage_seed(cli.seed, STAGE_SYNTH, i)))
        .collect::<eigencrater::Result<Vec<_>>>()?;
    write_bundle(&a.out, &scenes, DEFAULT_MOON_RADIUS_KM, a.keep_terrain)?;
    Ok(())
}

fn templates(cli: &Cli, a: &TemplatesArgs) -> CliResult<()> {
    let (dem, georef, catalog) = read_field(&a.field)?;
    let albedo = a.albedo.as_ref().map(raster_io::read_raster).transpose()?;
    let tp = TrainingParams {
        min_radius_km: a.min_radius_km,
        max_radius_km: a.max_radius_km,
        patch_side: a.patch_side,
        ..TrainingParams::default()
    };
    let (patches, report) = build_training_set(&dem, albedo.as_ref(), &georef, &catalog, &tp);
    log::info!("{report:?}");
    let layout = match albedo {
        Some(_) => PatchLayout::with_albedo(a.patch_side, a.albedo_scale),
        None => PatchLayout::elevation_only(a.patch_side),
    };
    let params = TemplateParams {
        clusters: a.k,
        components: a.components,
        seed: cli.seed,
        layout,
        ..TemplateParams::default()
    };
    let (basis, templates, _) = templates_from_patches(&patches, &params)?;
    write_template_set(&a.out, &params, &basis, &templates)?;
    Ok(())
}

fn direction(zenith_deg: f64, azimuth_deg: f64) -> Vec3 {
    let (z, az) = (zenith_deg.to_radians(), azimuth_deg.to_radians());
    Vec3::new(z.sin() * az.cos(), z.sin() * az.sin(), z.cos())
}

fn render(a: &RenderArgs) -> CliResult<()> {
    let (_, templates) = read_template_set(&a.templates)?;
    let lighting = LightingGeometry::new(
        direction(a.incidence, a.sun_azimuth),
        direction(a.emission, a.emission_azimuth),
        a.albedo,
    )?;
    std::fs::create_dir_all(&a.out).map_err(|e| eigencrater::Error::io(&a.out, e))?;
    for t in &templates {
        let r = render_template(t, &lighting, t.elevation.cell_size())?;
        raster_io::write_raster(&r.intensity, a.out.join(format!("render_{:02}.egr", t.cluster_id)))?;
    }
    Ok(())
}

fn detect(cli: &Cli, a: &DetectArgs) -> CliResult<()> {
    let mut cfg = run_config(cli)?;
    cfg.adaptation_mode = a.mode;
    if let Some(t) = &a.templates {
        cfg.template_set = t.clone();
    }
    if a.cache.is_some() {
        cfg.cache_dir = a.cache.clone();
    }
    let bundle = read_bundle(&a.view.scene)?;
    let (index, entry) = find_view(&bundle, &a.view.view)?;
    let (image, _) = load_view(&a.view.scene, entry)?;
    let (_, templates) = read_template_set(&cfg.template_set)?;
    let view = onboard_view(&entry.view, &cfg.identify, index)?;
    let dets = run_detection(&image, &view, &templates, &cfg)?;
    raster_io::write_json(&dets, &a.out)?;
    Ok(())
}

fn localize(cli: &Cli, a: &LocalizeArgs) -> CliResult<()> {
    let cfg = run_config(cli)?;
    let bundle = read_bundle(&a.view.scene)?;
    let (index, entry) = find_view(&bundle, &a.view.view)?;
    let (_, catalog) = load_view(&a.view.scene, entry)?;
    let dets: Vec<Detection> = raster_io::read_json(&a.detections)?;
    let view = onboard_view(&entry.view, &cfg.identify, index)?;
    let seed = stage_seed(cfg.identify.rng_seed, STAGE_IDENTIFY, index);
    let r: LocalizationResult =
        localize_with_pose(&dets, &catalog, &view.pose()?, &view.camera()?, &cfg.identify, cfg.moon_radius, seed)?;
    raster_io::write_json(&r, &a.out)?;
    Ok(())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CliResult<()> {
    let cfg = run_config(cli)?;
    let summary = evaluate_outputs(&a.scene, &a.results, cfg.moon_radius)?;
    if let Some(out) = &a.out {
        raster_io::write_json(&summary, out)?;
    }
    print!(
        "{}",
        eigencrater::evaluate::format_report(&summary.detection, Some(&summary.position))
    );
    Ok(())
}

fn run(cli: &Cli, a: &RunArgs) -> CliResult<()> {
    let mut cfg = run_config(cli)?;
    if let Some(m) = a.mode {
        cfg.adaptation_mode = m;
    }
    if let Some(t) = &a.templates {
        cfg.template_set = t.clone();
    }
    if a.cache.is_some() {
        cfg.cache_dir = a.cache.clone();
    }
    let out = run_scene(&a.scene, &cfg)?;
    write_run(&a.out, &out)?;
    let report = std::fs::read_to_string(a.out.join("report.txt")).map_err(|e| eigencrater::Error::io(&a.out, e))?;
    print!("{report}");
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Templates(a) => templates(cli, a),
        Command::Render(a) => render(a),
        Command::Detect(a) => detect(cli, a),
        Command::Localize(a) => localize(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Run(a) => run(cli, a),
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| dispatch(cli))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
