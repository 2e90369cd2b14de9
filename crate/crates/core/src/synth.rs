//! Synthetic crater fields on a local tangent plane, their exact catalogs and
//! ray-cast renderings from arbitrary camera poses.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    pixel_ray, CameraModel, GridGeoref, Pose, SceneView, TangentFrame, DEFAULT_MOON_RADIUS_KM,
};
use crate::raster_io::{self, CatalogRecord, RasterGrid};
use crate::render::{limb_darkening_weight, lunar_lambert_cos, mesh_from_dem, FaceGrid, SurfaceMesh, SHADOW_EPSILON};

pub const DEFAULT_RIM_WIDTH: f64 = 0.3;

/// Elevation (same unit as `depth`) of a bowl with a raised rim at
/// normalized radius `r_norm`.
pub fn crater_profile_with_width(r_norm: f64, depth: f64, rim_height: f64, rim_width: f64) -> f64 {
    if r_norm <= 1.0 {
        rim_height - (depth + rim_height) * (1.0 - r_norm * r_norm)
    } else {
        rim_height * (-(r_norm - 1.0).powi(2) / (rim_width * rim_width)).exp()
    }
}

/// `-depth` at the center, `rim_height` on the rim, Gaussian rim decay
/// outside.
pub fn crater_profile(r_norm: f64, depth: f64, rim_height: f64) -> f64 {
    crater_profile_with_width(r_norm, depth, rim_height, DEFAULT_RIM_WIDTH)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCrater {
    pub id: String,
    pub center_lat: f64,
    pub center_lon: f64,
    /// Tangent-plane position, km.
    pub east_km: f64,
    pub north_km: f64,
    pub radius_km: f64,
    /// Bowl floor below the surrounding plane, km.
    pub depth_km: f64,
    pub rim_height_km: f64,
    pub rim_width: f64,
}

impl SyntheticCrater {
    /// Elevation contribution in meters at plane coordinates (km).
    pub fn elevation_m(&self, east_km: f64, north_km: f64) -> f64 {
        let r = ((east_km - self.east_km).powi(2) + (north_km - self.north_km).powi(2)).sqrt() / self.radius_km;
        1000.0 * crater_profile_with_width(r, self.depth_km, self.rim_height_km, self.rim_width)
    }

    /// Radius beyond which the rim contribution is negligible, km.
    pub fn influence_km(&self) -> f64 {
        self.radius_km * (1.0 + 4.0 * self.rim_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldBounds {
    pub east_min_km: f64,
    pub east_max_km: f64,
    pub north_min_km: f64,
    pub north_max_km: f64,
}

impl FieldBounds {
    pub fn centered(half_width_km: f64) -> Self {
        Self {
            east_min_km: -half_width_km,
            east_max_km: half_width_km,
            north_min_km: -half_width_km,
            north_max_km: half_width_km,
        }
    }

    pub fn area_km2(&self) -> f64 {
        (self.east_max_km - self.east_min_km) * (self.north_max_km - self.north_min_km)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub ref_lat_deg: f64,
    pub ref_lon_deg: f64,
    pub moon_radius_km: f64,
    pub cell_m: f64,
    /// Log-uniform radius range, km.
    pub radius_range_km: (f64, f64),
    /// Center-to-rim depth over diameter.
    pub depth_ratio_range: (f64, f64),
    /// Rim height as a fraction of center-to-rim depth.
    pub rim_fraction: f64,
    pub rim_width: f64,
    /// Minimum center distance in units of the radius sum.
    pub min_separation: f64,
    /// Amplitude of the smooth base terrain, meters.
    pub base_amplitude_m: f64,
    pub base_wavelength_km: (f64, f64),
    pub base_terms: usize,
    pub max_attempts: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            ref_lat_deg: 0.0,
            ref_lon_deg: 0.0,
            moon_radius_km: DEFAULT_MOON_RADIUS_KM,
            cell_m: 100.0,
            radius_range_km: (1.0, 4.5),
            depth_ratio_range: (0.14, 0.2),
            rim_fraction: 0.2,
            rim_width: DEFAULT_RIM_WIDTH,
            min_separation: 1.4,
            base_amplitude_m: 15.0,
            base_wavelength_km: (6.0, 25.0),
            base_terms: 8,
            max_attempts: 20_000,
        }
    }
}

impl FieldConfig {
    pub fn frame(&self) -> TangentFrame {
        TangentFrame {
            ref_lat_deg: self.ref_lat_deg,
            ref_lon_deg: self.ref_lon_deg,
            moon_radius_km: self.moon_radius_km,
        }
    }
}

/// Terrain raster (meters) with its georeference and exact catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticField {
    pub terrain: RasterGrid,
    pub georef: GridGeoref,
    pub craters: Vec<SyntheticCrater>,
    pub catalog: Vec<CatalogRecord>,
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

/// Places `n_craters` non-overlapping craters with log-uniform radii on a
/// smooth base terrain covering `bounds`.
pub fn generate_field(n_craters: usize, bounds: FieldBounds, cfg: &FieldConfig, seed: u64) -> Result<SyntheticField> {
    if n_craters == 0 {
        return Err(Error::InvalidArgument("need at least one crater".into()));
    }
    let (rmin, rmax) = cfg.radius_range_km;
    if !(rmin > 0.0 && rmax >= rmin) {
        return Err(Error::InvalidArgument("invalid radius range".into()));
    }
    if !(bounds.east_max_km > bounds.east_min_km && bounds.north_max_km > bounds.north_min_km) {
        return Err(Error::InvalidArgument("empty field bounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = cfg.frame();
    let mut craters: Vec<SyntheticCrater> = Vec::with_capacity(n_craters);
    let mut attempts = 0;
    while craters.len() < n_craters {
        attempts += 1;
        if attempts > cfg.max_attempts {
            return Err(Error::InvalidArgument(format!(
                "placed only {} of {n_craters} craters after {} attempts",
                craters.len(),
                cfg.max_attempts
            )));
        }
        let radius = (rng.random_range(rmin.ln()..=rmax.ln())).exp();
        let reach = radius * (1.0 + 4.0 * cfg.rim_width);
        let (e0, e1) = (bounds.east_min_km + reach, bounds.east_max_km - reach);
        let (n0, n1) = (bounds.north_min_km + reach, bounds.north_max_km - reach);
        if e0 >= e1 || n0 >= n1 {
            continue;
        }
        let east = rng.random_range(e0..e1);
        let north = rng.random_range(n0..n1);
        let ratio = rng.random_range(cfg.depth_ratio_range.0..=cfg.depth_ratio_range.1);
        let clear = craters.iter().all(|c| {
            let d = ((c.east_km - east).powi(2) + (c.north_km - north).powi(2)).sqrt();
            d >= cfg.min_separation * (c.radius_km + radius)
        });
        if !clear {
            continue;
        }
        let total = ratio * 2.0 * radius;
        let rim = cfg.rim_fraction * total;
        let id = format!("SYN-{:05}", craters.len());
        let p = frame.to_mcmf(east, north, 0.0);
        let (lat, lon, _) = TangentFrame::lat_lon_elevation(&p, cfg.moon_radius_km);
        craters.push(SyntheticCrater {
            id,
            center_lat: lat,
            center_lon: lon,
            east_km: east,
            north_km: north,
            radius_km: radius,
            depth_km: total - rim,
            rim_height_km: rim,
            rim_width: cfg.rim_width,
        });
    }
    let waves: Vec<Wave> = (0..cfg.base_terms)
        .map(|_| {
            let lambda = rng.random_range(cfg.base_wavelength_km.0..=cfg.base_wavelength_km.1);
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let k = std::f64::consts::TAU / lambda;
            Wave {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: cfg.base_amplitude_m / (cfg.base_terms as f64).sqrt(),
            }
        })
        .collect();
    let cell_km = cfg.cell_m / 1000.0;
    let width = ((bounds.east_max_km - bounds.east_min_km) / cell_km).floor() as usize + 1;
    let height = ((bounds.north_max_km - bounds.north_min_km) / cell_km).floor() as usize + 1;
    let georef = GridGeoref {
        frame,
        origin_east_m: bounds.east_min_km * 1000.0,
        origin_north_m: bounds.north_max_km * 1000.0,
    };
    let rows = crate::par::map_range(height, |r| {
        (0..width)
            .map(|c| {
                let (e, n) = georef.pixel_to_plane(c as f64, r as f64, cfg.cell_m);
                let (e, n) = (e / 1000.0, n / 1000.0);
                waves.iter().map(|w| w.amp * (w.kx * e + w.ky * n + w.phase).sin()).sum::<f64>()
            })
            .collect::<Vec<f64>>()
    });
    let mut values = rows.concat();
    for c in &craters {
        let reach = c.influence_km();
        let (c0, r0) = georef.plane_to_pixel((c.east_km - reach) * 1000.0, (c.north_km + reach) * 1000.0, cfg.cell_m);
        let (c1, r1) = georef.plane_to_pixel((c.east_km + reach) * 1000.0, (c.north_km - reach) * 1000.0, cfg.cell_m);
        let clamp = |x: f64, hi: usize| (x.max(0.0) as usize).min(hi - 1);
        for r in clamp(r0.floor(), height)..=clamp(r1.ceil(), height) {
            for col in clamp(c0.floor(), width)..=clamp(c1.ceil(), width) {
                let (e, n) = georef.pixel_to_plane(col as f64, r as f64, cfg.cell_m);
                values[r * width + col] += c.elevation_m(e / 1000.0, n / 1000.0);
            }
        }
    }
    let terrain = RasterGrid::new(width, height, cfg.cell_m, values)?;
    let catalog = craters
        .iter()
        .map(|c| {
            let p = frame.to_mcmf(c.east_km, c.north_km, 0.0);
            let (lat, lon, elevation) = TangentFrame::lat_lon_elevation(&p, cfg.moon_radius_km);
            CatalogRecord {
                id: c.id.clone(),
                lat,
                lon,
                radius: c.radius_km,
                eccentricity: 0.0,
                elevation,
            }
        })
        .collect();
    Ok(SyntheticField {
        terrain,
        georef,
        craters,
        catalog,
    })
}

/// Viewing and illumination geometry at the tangent point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewGeometry {
    pub altitude_km: f64,
    pub incidence_deg: f64,
    pub sun_azimuth_deg: f64,
    pub emission_deg: f64,
    pub camera_azimuth_deg: f64,
}

fn local_dir(frame: &TangentFrame, zenith_deg: f64, azimuth_deg: f64) -> Vector3<f64> {
    let (z, a) = (zenith_deg.to_radians(), azimuth_deg.to_radians());
    frame.east() * (z.sin() * a.cos()) + frame.north() * (z.sin() * a.sin()) + frame.up() * z.cos()
}

/// Camera at `altitude_km` above the sphere, looking at the tangent point
/// with the given emission angle, image up toward north where possible.
pub fn make_view(frame: &TangentFrame, cam: &CameraModel, geom: &ViewGeometry) -> Result<SceneView> {
    let target = frame.origin();
    let dir = local_dir(frame, geom.emission_deg, geom.camera_azimuth_deg);
    let radius = frame.moon_radius_km + geom.altitude_km;
    // |target + s dir| = radius
    let b = target.dot(&dir);
    let c = target.norm_squared() - radius * radius;
    let s = -b + (b * b - c).sqrt();
    let position = target + dir * s;
    let down = -frame.north();
    let hint = if down.cross(&(target - position)).norm() > 1e-6 * s {
        down
    } else {
        frame.east()
    };
    let pose = Pose::look_at(position, target, hint)?;
    let sun = local_dir(frame, geom.incidence_deg, geom.sun_azimuth_deg);
    Ok(SceneView::new(cam, &pose, &sun))
}

/// Plane-coordinate bounds (km) of the camera footprint on the tangent
/// plane, grown by `margin_km`.
pub fn footprint_bounds(frame: &TangentFrame, view: &SceneView, margin_km: f64) -> Result<FieldBounds> {
    let pose = view.pose()?;
    let cam = view.camera()?;
    let up = frame.up();
    let o = frame.origin();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut b = FieldBounds {
        east_min_km: f64::MAX,
        east_max_km: f64::MIN,
        north_min_km: f64::MAX,
        north_max_km: f64::MIN,
    };
    let steps = 8;
    for i in 0..=steps {
        for (u, v) in [
            (-0.5 + w * i as f64 / steps as f64, -0.5),
            (-0.5 + w * i as f64 / steps as f64, h - 0.5),
            (-0.5, -0.5 + h * i as f64 / steps as f64),
            (w - 0.5, -0.5 + h * i as f64 / steps as f64),
        ] {
            let ray = pixel_ray(&pose, &cam, u, v);
            let denom = ray.dot(&up);
            if denom >= -1e-9 {
                return Err(Error::Degenerate("image corner ray misses the tangent plane".into()));
            }
            let t = (o - pose.position).dot(&up) / denom;
            let (e, n, _) = frame.to_plane(&(pose.position + ray * t));
            b.east_min_km = b.east_min_km.min(e);
            b.east_max_km = b.east_max_km.max(e);
            b.north_min_km = b.north_min_km.min(n);
            b.north_max_km = b.north_max_km.max(n);
        }
    }
    b.east_min_km -= margin_km;
    b.north_min_km -= margin_km;
    b.east_max_km += margin_km;
    b.north_max_km += margin_km;
    Ok(b)
}

/// Heightfield mesh and spatial index ready for repeated renders.
pub struct SceneRenderer {
    mesh: SurfaceMesh,
    index: FaceGrid,
    georef: GridGeoref,
    cell_m: f64,
    pub albedo: f64,
}

impl SceneRenderer {
    pub fn new(field: &SyntheticField, albedo: f64) -> Result<Self> {
        let cell_m = field.terrain.cell_size();
        let mesh = mesh_from_dem(&field.terrain, cell_m)?;
        let index = FaceGrid::for_mesh(&mesh);
        Ok(Self {
            mesh,
            index,
            georef: field.georef,
            cell_m,
            albedo,
        })
    }

    /// MCMF (km) to mesh coordinates (m).
    fn to_mesh(&self, p_m: &Vector3<f64>) -> Vector3<f64> {
        let (e, n, u) = self.georef.frame.to_plane(p_m);
        Vector3::new(e * 1000.0 - self.georef.origin_east_m, n * 1000.0 - self.georef.origin_north_m, u * 1000.0)
    }

    fn rotation(&self) -> Matrix3<f64> {
        let f = &self.georef.frame;
        Matrix3::from_rows(&[f.east().transpose(), f.north().transpose(), f.up().transpose()])
    }

    /// Ray-cast rendering: each pixel shades the first terrain hit with the
    /// interpolated normal, one collimated sun and a single emission
    /// direction (the reversed boresight).
    pub fn render(&self, view: &SceneView) -> Result<RasterGrid> {
        let pose = view.pose()?;
        let cam = view.camera()?;
        let q = self.rotation();
        let sun = q * view.sun_dir()?;
        if sun.z <= 0.0 {
            return Err(Error::InvalidArgument("sun below the local horizon".into()));
        }
        let emission = q * (-pose.boresight());
        let g = limb_darkening_weight(sun.dot(&emission).clamp(-1.0, 1.0).acos());
        let origin = self.to_mesh(&pose.position);
        let lift = SHADOW_EPSILON * self.cell_m;
        let rows = crate::par::map_range(cam.height, |v| -> Result<Vec<f64>> {
            (0..cam.width)
                .map(|u| {
                    let dir = q * pixel_ray(&pose, &cam, u as f64, v as f64);
                    let hit = self
                        .index
                        .first_hit(&self.mesh, &origin, &dir)
                        .ok_or_else(|| Error::OutOfBounds(format!("pixel ({u}, {v}) misses the terrain")))?;
                    let [a, b, c] = self.mesh.faces[hit.face];
                    let n = (self.mesh.vertex_normals[a] * (1.0 - hit.u - hit.v)
                        + self.mesh.vertex_normals[b] * hit.u
                        + self.mesh.vertex_normals[c] * hit.v)
                        .normalize();
                    let p = origin + dir * hit.t;
                    if self.index.occluded(&self.mesh, &(p + sun * lift), &sun) {
                        return Ok(0.0);
                    }
                    Ok(lunar_lambert_cos(self.albedo, n.dot(&sun), n.dot(&emission), g))
                })
                .collect()
        });
        let values = rows.into_iter().collect::<Result<Vec<_>>>()?.concat();
        RasterGrid::new(cam.width, cam.height, 1.0, values)
    }
}

pub fn render_scene(field: &SyntheticField, view: &SceneView, albedo: f64) -> Result<RasterGrid> {
    SceneRenderer::new(field, albedo)?.render(view)
}

/// Ranges sampled per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub field: FieldConfig,
    pub image_width: usize,
    pub image_height: usize,
    pub hfov_deg: f64,
    pub altitude_km: f64,
    pub incidence_deg: (f64, f64),
    pub emission_deg: (f64, f64),
    /// Craters per 1000 km^2 of terrain.
    pub crater_density: f64,
    pub margin_km: f64,
    pub albedo: f64,
    pub lat_range_deg: (f64, f64),
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            field: FieldConfig::default(),
            image_width: 512,
            image_height: 512,
            hfov_deg: 30.0,
            altitude_km: 100.0,
            incidence_deg: (20.0, 70.0),
            emission_deg: (0.0, 40.0),
            crater_density: 9.0,
            margin_km: 8.0,
            albedo: 0.12,
            lat_range_deg: (-60.0, 60.0),
        }
    }
}

/// One rendered view of its own crater field.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub field: SyntheticField,
    pub view: SceneView,
    pub geometry: ViewGeometry,
    pub image: RasterGrid,
}

pub fn sample_geometry(cfg: &SceneConfig, rng: &mut impl Rng) -> ViewGeometry {
    let pick = |rng: &mut dyn rand::RngCore, r: (f64, f64)| if r.1 > r.0 { rng.random_range(r.0..=r.1) } else { r.0 };
    ViewGeometry {
        altitude_km: cfg.altitude_km,
        incidence_deg: pick(rng, cfg.incidence_deg),
        sun_azimuth_deg: rng.random_range(0.0..360.0),
        emission_deg: pick(rng, cfg.emission_deg),
        camera_azimuth_deg: rng.random_range(0.0..360.0),
    }
}

/// Samples lighting, viewing and terrain, then renders the view.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field_cfg = cfg.field.clone();
    field_cfg.ref_lat_deg = rng.random_range(cfg.lat_range_deg.0..=cfg.lat_range_deg.1);
    field_cfg.ref_lon_deg = rng.random_range(-180.0..180.0);
    let geometry = sample_geometry(cfg, &mut rng);
    let cam = CameraModel::from_fov(cfg.image_width, cfg.image_height, cfg.hfov_deg)?;
    let frame = field_cfg.frame();
    let view = make_view(&frame, &cam, &geometry)?;
    let bounds = footprint_bounds(&frame, &view, cfg.margin_km)?;
    let n = ((bounds.area_km2() / 1000.0) * cfg.crater_density).round().max(1.0) as usize;
    let field = generate_field(n, bounds, &field_cfg, rng.random())?;
    let image = render_scene(&field, &view, cfg.albedo)?;
    Ok(SyntheticScene {
        field,
        view,
        geometry,
        image,
    })
}

/// Training terrain drawn from the same crater population as the scenes.
pub fn generate_training_field(cfg: &SceneConfig, half_width_km: f64, seed: u64) -> Result<SyntheticField> {
    let bounds = FieldBounds::centered(half_width_km);
    let n = ((bounds.area_km2() / 1000.0) * cfg.crater_density).round().max(1.0) as usize;
    generate_field(n, bounds, &cfg.field, seed)
}

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleEntry {
    pub name: String,
    pub image: String,
    pub catalog: String,
    pub view: SceneView,
    pub geometry: ViewGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneBundle {
    pub version: u32,
    pub moon_radius_km: f64,
    pub views: Vec<BundleEntry>,
}

/// Writes `scene.json` plus one subdirectory per scene holding the image,
/// catalog and, when `keep_terrain`, the terrain raster and georeference.
pub fn write_bundle(dir: impl AsRef<Path>, scenes: &[SyntheticScene], moon_radius_km: f64, keep_terrain: bool) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("view_{i:03}");
        let sub = dir.join(&name);
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        raster_io::write_raster(&s.image, sub.join("image.egr"))?;
        raster_io::write_catalog(&s.field.catalog, sub.join("catalog.csv"))?;
        if keep_terrain {
            write_field(&sub, &s.field)?;
        }
        views.push(BundleEntry {
            image: format!("{name}/image.egr"),
            catalog: format!("{name}/catalog.csv"),
            name,
            view: s.view.clone(),
            geometry: s.geometry,
        });
    }
    raster_io::write_json(
        &SceneBundle {
            version: BUNDLE_VERSION,
            moon_radius_km,
            views,
        },
        dir.join("scene.json"),
    )
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let b: SceneBundle = raster_io::read_json(dir.as_ref().join("scene.json"))?;
    if b.version != BUNDLE_VERSION {
        return Err(Error::InvalidArgument(format!("unsupported bundle version {}", b.version)));
    }
    Ok(b)
}

/// Terrain raster, georeference and catalog of a field.
pub fn write_field(dir: impl AsRef<Path>, field: &SyntheticField) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    raster_io::write_raster(&field.terrain, dir.join("terrain.egr"))?;
    raster_io::write_json(&field.georef, dir.join("georef.json"))?;
    raster_io::write_catalog(&field.catalog, dir.join("catalog.csv"))
}

pub fn read_field(dir: impl AsRef<Path>) -> Result<(RasterGrid, GridGeoref, Vec<CatalogRecord>)> {
    let dir = dir.as_ref();
    Ok((
        raster_io::read_raster(dir.join("terrain.egr"))?,
        raster_io::read_json(dir.join("georef.json"))?,
        raster_io::read_catalog(dir.join("catalog.csv"))?,
    ))
}
