//! End-to-end runs: template rendering under the selected adaptation mode,
//! detection, localization and evaluation over a scene bundle.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eigenbasis::{read_template_set, CraterTemplate};
use crate::error::{Error, Result};
use crate::evaluate::{
    aggregate_detection, detection_metrics, position_metrics, AggregateDetection, DetectionMetrics, PositionMetrics,
    AUC_THRESHOLDS_KM, PIXEL_THRESHOLDS,
};
use crate::geometry::{
    apply_homography, catalog_to_3d, homography_jacobian, nadir_adaptation, project_crater, warp_image, CameraModel,
    CatalogCrater3D, Pose, ProjectedCrater, SceneView, DEFAULT_MOON_RADIUS_KM,
};
use crate::identify::{perturb_pose, ransac_localize, IdentifyConfig, PositionEstimate};
use crate::matcher::{pyramid_detect, Detection, MatchConfig, MatchTemplate};
use crate::raster_io::{self, encode_raster, CatalogRecord, RasterGrid};
use crate::render::{normalize_intensity, render_template, LightingGeometry};
use crate::synth::{read_bundle, BundleEntry};

/// Lowest sun elevation used for template rendering, degrees.
pub const MIN_TEMPLATE_SUN_ELEVATION_DEG: f64 = 1.0;
pub const RESULT_VERSION: u32 = 1;

pub const STAGE_POSE: u64 = 0x1000;
pub const STAGE_IDENTIFY: u64 = 0x2000;
pub const STAGE_SYNTH: u64 = 0x3000;
pub const STAGE_TRAINING: u64 = 0x4000;

/// Seed for one stage of one image, derived from the run seed by fixed
/// offsets.
pub fn stage_seed(base: u64, stage: u64, index: usize) -> u64 {
    base.wrapping_add(stage).wrapping_add((index as u64).wrapping_mul(0x1_0000))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    None,
    NoWarp,
    WarpTemplate,
    WarpImage,
}

impl AdaptationMode {
    pub const ALL: [AdaptationMode; 4] = [Self::None, Self::NoWarp, Self::WarpTemplate, Self::WarpImage];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::NoWarp => "no_warp",
            Self::WarpTemplate => "warp_template",
            Self::WarpImage => "warp_image",
        }
    }
}

impl fmt::Display for AdaptationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AdaptationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown adaptation mode '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub adaptation_mode: AdaptationMode,
    pub template_set: PathBuf,
    #[serde(rename = "match")]
    pub match_cfg: MatchConfig,
    pub identify: IdentifyConfig,
    pub moon_radius: f64,
    /// Albedo for templates without their own albedo grid.
    pub template_albedo: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            adaptation_mode: AdaptationMode::WarpImage,
            template_set: PathBuf::from("templates"),
            match_cfg: MatchConfig::default(),
            identify: IdentifyConfig::default(),
            moon_radius: DEFAULT_MOON_RADIUS_KM,
            template_albedo: 0.12,
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.match_cfg.validate()?;
        self.identify.validate()?;
        if !(self.moon_radius > 0.0) || !(self.template_albedo > 0.0) {
            return Err(Error::InvalidArgument("moon radius and template albedo must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = raster_io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Template-frame vector from a camera-frame vector: image x stays, image
/// down becomes template -y, boresight becomes -z.
fn camera_to_template(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, -v.y, -v.z)
}

fn clamp_sun(sun: Vector3<f64>) -> Vector3<f64> {
    let min_z = MIN_TEMPLATE_SUN_ELEVATION_DEG.to_radians().sin();
    let sun = sun.normalize();
    if sun.z >= min_z {
        return sun;
    }
    let h = Vector3::new(sun.x, sun.y, 0.0);
    let h = h.try_normalize(1e-12).unwrap_or_else(Vector3::x);
    h * (1.0 - min_z * min_z).sqrt() + Vector3::z() * min_z
}

/// Template lighting for a view under the given mode.
pub fn template_lighting(
    mode: AdaptationMode,
    view: &SceneView,
    moon_radius: f64,
    albedo: f64,
) -> Result<LightingGeometry> {
    let pose = view.pose()?;
    let sun_m = view.sun_dir()?;
    let (sun, emission) = match mode {
        AdaptationMode::None => (camera_to_template(&(pose.r_cm * sun_m)), Vector3::z()),
        _ => {
            let cam = view.camera()?;
            let ad = nadir_adaptation(&pose, &cam, &sun_m, moon_radius)?;
            (camera_to_template(&ad.sun_n), camera_to_template(&ad.emission_n).normalize())
        }
    };
    LightingGeometry::new(clamp_sun(sun), emission, albedo)
}

/// Local linear part of `H_NC` at the principal point, scaled to unit
/// determinant.
fn unit_jacobian(h_nc: &Matrix3<f64>, cam: &CameraModel) -> Result<(Matrix2<f64>, f64)> {
    let j = homography_jacobian(h_nc, cam.up, cam.vp);
    let det = j.determinant();
    if !(det.abs() > 1e-12) {
        return Err(Error::Degenerate("homography collapses the principal point".into()));
    }
    let s = 1.0 / det.abs().sqrt();
    Ok((j * s, s))
}

/// Resamples a square template through the linear map `a` about its center.
pub fn warp_template_pixels(pixels: &RasterGrid, a: &Matrix2<f64>) -> Result<RasterGrid> {
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("template warp is singular".into()))?;
    let (w, h) = (pixels.width() as f64, pixels.height() as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let mut ext = [0.0f64; 2];
    for (x, y) in [(-cx, -cy), (cx, -cy), (-cx, cy), (cx, cy)] {
        let p = a * nalgebra::Vector2::new(x, y);
        ext[0] = ext[0].max(p.x.abs());
        ext[1] = ext[1].max(p.y.abs());
    }
    let size = |e: f64| (2.0 * e - 1e-6).ceil().max(0.0) as usize + 1;
    let (ow, oh) = (size(ext[0]), size(ext[1]));
    let (ocx, ocy) = ((ow as f64 - 1.0) / 2.0, (oh as f64 - 1.0) / 2.0);
    RasterGrid::from_fn(ow, oh, pixels.cell_size(), |r, c| {
        let q = a_inv * nalgebra::Vector2::new(c as f64 - ocx, r as f64 - ocy);
        let x = (q.x + cx).clamp(0.0, w - 1.0);
        let y = (q.y + cy).clamp(0.0, h - 1.0);
        pixels.sample_bilinear(x, y).unwrap_or(0.0)
    })
}

fn cache_key(template: &CraterTemplate, lighting: &LightingGeometry, warp: Option<&Matrix2<f64>>) -> String {
    let mut h = Sha256::new();
    h.update(b"eigencrater-template-v1");
    h.update(encode_raster(&template.elevation));
    match &template.albedo {
        Some(a) => {
            h.update([1u8]);
            h.update(encode_raster(a));
        }
        None => h.update([0u8]),
    }
    h.update((template.cluster_id as u64).to_le_bytes());
    for x in lighting.sun_dir.iter().chain(&lighting.emission_dir).chain([&lighting.albedo]) {
        h.update(x.to_le_bytes());
    }
    match warp {
        Some(m) => {
            h.update([1u8]);
            for x in m.iter() {
                h.update(x.to_le_bytes());
            }
        }
        None => h.update([0u8]),
    }
    hex::encode(h.finalize())
}

/// Renders, optionally warps, and normalizes one template. With a cache
/// directory the result is stored under a content hash of its inputs.
pub fn prepare_template(
    template: &CraterTemplate,
    lighting: &LightingGeometry,
    warp: Option<&Matrix2<f64>>,
    cache_dir: Option<&Path>,
) -> Result<MatchTemplate> {
    let path = cache_dir.map(|d| d.join(format!("{}.egr", cache_key(template, lighting, warp))));
    if let Some(p) = &path {
        if p.exists() {
            return Ok(MatchTemplate {
                template_id: template.cluster_id,
                pixels: raster_io::read_raster(p)?,
            });
        }
    }
    let rendered = render_template(template, lighting, template.elevation.cell_size())?;
    let mut pixels = rendered.intensity;
    if let Some(m) = warp {
        pixels = warp_template_pixels(&pixels, m)?;
    }
    let pixels = normalize_intensity(&pixels)?;
    if let (Some(p), Some(d)) = (&path, cache_dir) {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        // write-then-rename keeps concurrent readers from seeing partial files
        let tmp = p.with_extension(format!("tmp{}", std::process::id()));
        raster_io::write_raster(&pixels, &tmp)?;
        std::fs::rename(&tmp, p).map_err(|e| Error::io(p, e))?;
    }
    Ok(MatchTemplate {
        template_id: template.cluster_id,
        pixels,
    })
}

/// Image-to-canvas homography and canvas size for the warped-image mode.
pub fn image_warp(h_nc: &Matrix3<f64>, cam: &CameraModel) -> Result<(Matrix3<f64>, usize, usize)> {
    let (_, s) = unit_jacobian(h_nc, cam)?;
    let h1 = Matrix3::from_diagonal(&Vector3::new(s, s, 1.0)) * h_nc;
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
    for (u, v) in [(0.0, 0.0), (w - 1.0, 0.0), (0.0, h - 1.0), (w - 1.0, h - 1.0)] {
        let (x, y) = apply_homography(&h1, u, v)
            .ok_or_else(|| Error::Degenerate("image corner maps to infinity".into()))?;
        lo = [lo[0].min(x), lo[1].min(y)];
        hi = [hi[0].max(x), hi[1].max(y)];
    }
    let (pu, pv) = apply_homography(&h1, cam.up, cam.vp)
        .ok_or_else(|| Error::Degenerate("principal point maps to infinity".into()))?;
    let axis = |i: usize, limit: usize, center: f64| -> (f64, usize) {
        let span = hi[i] - lo[i];
        let n = (span - 1e-6).ceil().max(0.0) as usize + 1;
        if n <= limit {
            (lo[i], n)
        } else {
            (center - (limit as f64 - 1.0) / 2.0, limit)
        }
    };
    let (ox, ow) = axis(0, 2 * cam.width, pu);
    let (oy, oh) = axis(1, 2 * cam.height, pv);
    let t = Matrix3::new(1.0, 0.0, -ox, 0.0, 1.0, -oy, 0.0, 0.0, 1.0);
    Ok((t * h1, ow, oh))
}

/// Detects craters in `image` seen from `view`, using `view`'s pose for
/// every adaptation step.
pub fn run_detection(
    image: &RasterGrid,
    view: &SceneView,
    templates: &[CraterTemplate],
    cfg: &RunConfig,
) -> Result<Vec<Detection>> {
    let cam = view.camera()?;
    if image.width() != cam.width || image.height() != cam.height {
        return Err(Error::DimensionMismatch {
            expected: cam.width * cam.height,
            got: image.values().len(),
        });
    }
    let mode = cfg.adaptation_mode;
    let lighting = template_lighting(mode, view, cfg.moon_radius, cfg.template_albedo)?;
    let h_nc = match mode {
        AdaptationMode::WarpTemplate | AdaptationMode::WarpImage => {
            let pose = view.pose()?;
            Some(nadir_adaptation(&pose, &cam, &view.sun_dir()?, cfg.moon_radius)?.h_nc)
        }
        _ => None,
    };
    let warp = match (mode, &h_nc) {
        (AdaptationMode::WarpTemplate, Some(h)) => {
            let (j, _) = unit_jacobian(h, &cam)?;
            Some(
                j.try_inverse()
                    .ok_or_else(|| Error::Degenerate("singular homography jacobian".into()))?,
            )
        }
        _ => None,
    };
    let cache = cfg.cache_dir.as_deref();
    let prepared = templates
        .iter()
        .map(|t| prepare_template(t, &lighting, warp.as_ref(), cache))
        .collect::<Result<Vec<_>>>()?;
    match (mode, h_nc) {
        (AdaptationMode::WarpImage, Some(h)) => {
            let (h_fit, w, hgt) = image_warp(&h, &cam)?;
            let warped = warp_image(image, &h_fit, w, hgt)?;
            let back = h_fit
                .try_inverse()
                .ok_or_else(|| Error::Degenerate("warp homography is singular".into()))?;
            let scale = unit_jacobian(&h, &cam)?.1;
            let dets = pyramid_detect(&warped.image, Some(&warped.valid), &prepared, &cfg.match_cfg)?;
            Ok(dets
                .into_iter()
                .filter_map(|d| {
                    let (u, v) = apply_homography(&back, d.u, d.v)?;
                    Some(Detection {
                        u,
                        v,
                        radius_px: d.radius_px / scale,
                        ..d
                    })
                })
                .collect())
        }
        _ => pyramid_detect(image, None, &prepared, &cfg.match_cfg),
    }
}

/// Catalog craters visible from `pose` after the size and bounds filters,
/// as aligned projection and 3-D lists.
pub fn visible_catalog(
    catalog: &[CatalogRecord],
    pose: &Pose,
    cam: &CameraModel,
    moon_radius: f64,
) -> Result<(Vec<ProjectedCrater>, Vec<CatalogCrater3D>)> {
    let mut projected = Vec::new();
    let mut craters = Vec::new();
    for c in catalog_to_3d(catalog, moon_radius) {
        if let Some(p) = project_crater(&c, pose, cam)? {
            if p.passes_size_filter() {
                projected.push(p);
                craters.push(c);
            }
        }
    }
    Ok((projected, craters))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub detections: usize,
    pub projected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub seed: u64,
    pub counts: StageCounts,
    pub estimate: PositionEstimate,
}

/// Projection, identification and triangulation given an already
/// perturbed pose.
pub fn localize_with_pose(
    detections: &[Detection],
    catalog: &[CatalogRecord],
    pose_noisy: &Pose,
    cam: &CameraModel,
    cfg: &IdentifyConfig,
    moon_radius: f64,
    seed: u64,
) -> Result<LocalizationResult> {
    let (projected, craters) = visible_catalog(catalog, pose_noisy, cam, moon_radius)?;
    let points: Vec<[f64; 2]> = detections.iter().map(|d| [d.u, d.v]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let estimate = ransac_localize(&points, &projected, &craters, pose_noisy, cam, cfg, &mut rng)?;
    Ok(LocalizationResult {
        seed,
        counts: StageCounts {
            detections: detections.len(),
            projected: projected.len(),
        },
        estimate,
    })
}

/// Perturbs the true pose, then localizes.
pub fn run_localization(
    detections: &[Detection],
    catalog: &[CatalogRecord],
    pose_true: &Pose,
    cam: &CameraModel,
    cfg: &IdentifyConfig,
    moon_radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<LocalizationResult> {
    use rand::Rng;
    let noisy = perturb_pose(pose_true, cfg.pose_noise_pos_sigma, cfg.pose_noise_att_sigma_deg, rng)?;
    let seed: u64 = rng.random();
    localize_with_pose(detections, catalog, &noisy, cam, cfg, moon_radius, seed)
}

pub fn position_error_km(estimate: &PositionEstimate, pose_true: &Pose) -> Option<f64> {
    if !estimate.success {
        return None;
    }
    estimate
        .r_cm_est
        .map(|r| (Vector3::from(r) - pose_true.position).norm())
}

/// Per-view output of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewResult {
    pub name: String,
    pub mode: AdaptationMode,
    pub detections: Vec<Detection>,
    pub localization: LocalizationResult,
    pub error_km: Option<f64>,
    pub metrics: DetectionMetrics,
}

/// Ground-truth crater centers in the image, projected with the true pose.
pub fn truth_centers(catalog: &[CatalogRecord], view: &SceneView, moon_radius: f64) -> Result<Vec<[f64; 2]>> {
    let (projected, _) = visible_catalog(catalog, &view.pose()?, &view.camera()?, moon_radius)?;
    Ok(projected.iter().map(|p| p.center_uv).collect())
}

/// `view` with the perturbed pose drawn for image `index`.
pub fn onboard_view(view: &SceneView, cfg: &IdentifyConfig, index: usize) -> Result<SceneView> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(cfg.rng_seed, STAGE_POSE, index));
    let noisy = perturb_pose(&view.pose()?, cfg.pose_noise_pos_sigma, cfg.pose_noise_att_sigma_deg, &mut rng)?;
    Ok(SceneView::new(&view.camera()?, &noisy, &view.sun_dir()?))
}

/// Detection and localization for one view. Detection adapts with the
/// perturbed pose, the only one available on board.
pub fn process_view(
    index: usize,
    name: &str,
    image: &RasterGrid,
    view: &SceneView,
    catalog: &[CatalogRecord],
    templates: &[CraterTemplate],
    cfg: &RunConfig,
) -> Result<ViewResult> {
    let pose_true = view.pose()?;
    let cam = view.camera()?;
    let noisy_view = onboard_view(view, &cfg.identify, index)?;
    let noisy = noisy_view.pose()?;
    let detections = run_detection(image, &noisy_view, templates, cfg)?;
    let seed = stage_seed(cfg.identify.rng_seed, STAGE_IDENTIFY, index);
    let localization = localize_with_pose(&detections, catalog, &noisy, &cam, &cfg.identify, cfg.moon_radius, seed)?;
    let error_km = position_error_km(&localization.estimate, &pose_true);
    let truth = truth_centers(catalog, view, cfg.moon_radius)?;
    let points: Vec<[f64; 2]> = detections.iter().map(|d| [d.u, d.v]).collect();
    Ok(ViewResult {
        name: name.to_string(),
        mode: cfg.adaptation_mode,
        metrics: detection_metrics(&points, &truth, &PIXEL_THRESHOLDS),
        detections,
        localization,
        error_km,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: u32,
    pub mode: AdaptationMode,
    pub n_views: usize,
    pub detection: AggregateDetection,
    pub position: PositionMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub views: Vec<ViewResult>,
    pub summary: RunSummary,
}

pub fn summarize(views: &[ViewResult], mode: AdaptationMode) -> Result<RunSummary> {
    let per_image: Vec<DetectionMetrics> = views.iter().map(|v| v.metrics.clone()).collect();
    let errors: Vec<Option<f64>> = views.iter().map(|v| v.error_km).collect();
    Ok(RunSummary {
        version: RESULT_VERSION,
        mode,
        n_views: views.len(),
        detection: aggregate_detection(&per_image)?,
        position: position_metrics(&errors, &AUC_THRESHOLDS_KM)?,
    })
}

pub fn load_view(scene_dir: &Path, entry: &BundleEntry) -> Result<(RasterGrid, Vec<CatalogRecord>)> {
    Ok((
        raster_io::read_raster(scene_dir.join(&entry.image))?,
        raster_io::read_catalog(scene_dir.join(&entry.catalog))?,
    ))
}

/// Runs every view of a scene bundle; views are processed in parallel and
/// reported in bundle order.
pub fn run_scene(scene_dir: impl AsRef<Path>, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let dir = scene_dir.as_ref();
    let bundle = read_bundle(dir)?;
    let (_, templates) = read_template_set(&cfg.template_set)?;
    if templates.is_empty() {
        return Err(Error::InvalidArgument("template set is empty".into()));
    }
    let indexed: Vec<(usize, &BundleEntry)> = bundle.views.iter().enumerate().collect();
    let views = crate::par::map_slice(&indexed, |&(i, entry)| -> Result<ViewResult> {
        let (image, catalog) = load_view(dir, entry)?;
        process_view(i, &entry.name, &image, &entry.view, &catalog, &templates, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&views, cfg.adaptation_mode)?;
    Ok(RunOutput { views, summary })
}

/// `<out>/<view>/detections.json`, `<out>/<view>/estimate.json`,
/// `<out>/summary.json` and a text report.
pub fn write_run(out_dir: impl AsRef<Path>, output: &RunOutput) -> Result<()> {
    let out = out_dir.as_ref();
    for v in &output.views {
        let d = out.join(&v.name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        raster_io::write_json(&v.detections, d.join("detections.json"))?;
        raster_io::write_json(&v.localization, d.join("estimate.json"))?;
        raster_io::write_json(&v.metrics, d.join("metrics.json"))?;
    }
    raster_io::write_json(&output.summary, out.join("summary.json"))?;
    let report = crate::evaluate::format_report(&output.summary.detection, Some(&output.summary.position));
    std::fs::write(out.join("report.txt"), report).map_err(|e| Error::io(out.join("report.txt"), e))
}

/// Recomputes metrics from detection and estimate files written by
/// [`write_run`].
pub fn evaluate_outputs(scene_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>, moon_radius: f64) -> Result<RunSummary> {
    let dir = scene_dir.as_ref();
    let out = out_dir.as_ref();
    let bundle = read_bundle(dir)?;
    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    let mut mode = None;
    for entry in &bundle.views {
        let catalog = raster_io::read_catalog(dir.join(&entry.catalog))?;
        let dets: Vec<Detection> = raster_io::read_json(out.join(&entry.name).join("detections.json"))?;
        let loc: LocalizationResult = raster_io::read_json(out.join(&entry.name).join("estimate.json"))?;
        let truth = truth_centers(&catalog, &entry.view, moon_radius)?;
        let points: Vec<[f64; 2]> = dets.iter().map(|d| [d.u, d.v]).collect();
        per_image.push(detection_metrics(&points, &truth, &PIXEL_THRESHOLDS));
        errors.push(position_error_km(&loc.estimate, &entry.view.pose()?));
        if mode.is_none() {
            if let Ok(s) = raster_io::read_json::<RunSummary>(out.join("summary.json")) {
                mode = Some(s.mode);
            }
        }
    }
    Ok(RunSummary {
        version: RESULT_VERSION,
        mode: mode.unwrap_or(AdaptationMode::WarpImage),
        n_views: bundle.views.len(),
        detection: aggregate_detection(&per_image)?,
        position: position_metrics(&errors, &AUC_THRESHOLDS_KM)?,
    })
}
