//! Crater-centered elevation patches, morphological filters and the
//! rotation-augmented training set.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridGeoref;
use crate::raster_io::{self, CatalogRecord, RasterGrid};

pub const DEFAULT_PATCH_SIDE: usize = 25;
pub const DEFAULT_WINDOW_SCALE: f64 = 1.2;
/// Half-width of the rim annulus as a fraction of the rim radius in pixels.
const RIM_BAND: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rotation {
    #[serde(rename = "0")]
    R0,
    #[serde(rename = "90")]
    R90,
    #[serde(rename = "180")]
    R180,
    #[serde(rename = "270")]
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn quarter_turns(self) -> usize {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 1,
            Rotation::R180 => 2,
            Rotation::R270 => 3,
        }
    }
}

/// Square, zero-mean elevation patch (meters) around one catalog crater. The
/// elevation grid's `cell_size` is the physical sample spacing in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ElevationPatch {
    pub elevation: RasterGrid,
    pub albedo: Option<RasterGrid>,
    pub source_id: String,
    pub rotation: Rotation,
    /// Window half-width over crater radius used at extraction.
    pub window_scale: f64,
}

impl ElevationPatch {
    pub fn new(
        elevation: RasterGrid,
        albedo: Option<RasterGrid>,
        source_id: impl Into<String>,
        window_scale: f64,
    ) -> Result<Self> {
        if elevation.width() != elevation.height() {
            return Err(Error::InvalidArgument("elevation patch must be square".into()));
        }
        if let Some(a) = &albedo {
            if a.width() != elevation.width() || a.height() != elevation.height() {
                return Err(Error::DimensionMismatch {
                    expected: elevation.width(),
                    got: a.width(),
                });
            }
        }
        Ok(Self {
            elevation,
            albedo,
            source_id: source_id.into(),
            rotation: Rotation::R0,
            window_scale,
        })
    }

    pub fn side(&self) -> usize {
        self.elevation.width()
    }

    /// Rotated copy; elevation and albedo turn together.
    pub fn rotated(&self, rotation: Rotation) -> ElevationPatch {
        let turn = |g: &RasterGrid| {
            (0..rotation.quarter_turns()).fold(g.clone(), |acc, _| acc.rotate90())
        };
        ElevationPatch {
            elevation: turn(&self.elevation),
            albedo: self.albedo.as_ref().map(turn),
            source_id: self.source_id.clone(),
            rotation,
            window_scale: self.window_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchFilterReport {
    pub candidate_count: usize,
    pub rejected_symmetry: usize,
    pub rejected_depth_ratio: usize,
    pub rejected_bounds: usize,
    pub accepted: usize,
}

/// Resamples the square window of half-width `scale * radius` around the
/// crater onto a `patch_side` grid (bilinear, at patch pixel centers).
fn resample_window(
    raster: &RasterGrid,
    georef: &GridGeoref,
    record: &CatalogRecord,
    scale: f64,
    patch_side: usize,
) -> Result<RasterGrid> {
    if patch_side < 3 {
        return Err(Error::InvalidArgument(format!(
            "patch side must be at least 3, got {patch_side}"
        )));
    }
    if !(record.radius > 0.0 && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate crater radius {} km",
            record.radius
        )));
    }
    let cell = raster.cell_size();
    let (col0, row0) = georef.locate(record, cell).ok_or_else(|| {
        Error::OutOfBounds(format!("crater {} is not on the raster plane", record.id))
    })?;
    let half_px = scale * record.radius * 1000.0 / cell;
    let (max_c, max_r) = ((raster.width() - 1) as f64, (raster.height() - 1) as f64);
    if col0 - half_px < 0.0 || row0 - half_px < 0.0 || col0 + half_px > max_c || row0 + half_px > max_r
    {
        return Err(Error::OutOfBounds(format!(
            "footprint of crater {} exceeds the raster",
            record.id
        )));
    }
    let p = patch_side as f64;
    let physical_cell = 2.0 * scale * record.radius * 1000.0 / p;
    RasterGrid::from_fn(patch_side, patch_side, physical_cell, |a, b| {
        let fx = ((b as f64 + 0.5) / p) * 2.0 - 1.0;
        let fy = ((a as f64 + 0.5) / p) * 2.0 - 1.0;
        raster
            .sample_bilinear(col0 + fx * half_px, row0 + fy * half_px)
            .expect("window checked against raster bounds")
    })
}

/// Zero-mean elevation patch for one crater.
pub fn extract_patch(
    dem: &RasterGrid,
    georef: &GridGeoref,
    record: &CatalogRecord,
    scale: f64,
    patch_side: usize,
) -> Result<ElevationPatch> {
    let grid = resample_window(dem, georef, record, scale, patch_side)?;
    let mean = grid.mean();
    let centered = RasterGrid::new(
        patch_side,
        patch_side,
        grid.cell_size(),
        grid.values().iter().map(|v| v - mean).collect(),
    )?;
    ElevationPatch::new(centered, None, record.id.clone(), scale)
}

/// Albedo window over the same footprint, without mean removal.
pub fn extract_albedo(
    albedo: &RasterGrid,
    georef: &GridGeoref,
    record: &CatalogRecord,
    scale: f64,
    patch_side: usize,
) -> Result<RasterGrid> {
    resample_window(albedo, georef, record, scale, patch_side)
}

/// Keeps records with `min_radius <= radius <= max_radius` and
/// `eccentricity <= max_eccentricity`, in input order.
pub fn filter_catalog(
    records: &[CatalogRecord],
    min_radius: f64,
    max_radius: f64,
    max_eccentricity: f64,
) -> Vec<CatalogRecord> {
    records
        .iter()
        .filter(|r| {
            r.radius >= min_radius && r.radius <= max_radius && r.eccentricity <= max_eccentricity
        })
        .cloned()
        .collect()
}

/// Center-to-highest-rim depth in meters. The center is the middle pixel and
/// the rim is the band of pixels within 15% of the crater radius in pixels.
pub fn patch_depth(patch: &ElevationPatch) -> f64 {
    let e = &patch.elevation;
    let side = e.width();
    let center = e.get(side / 2, side / 2);
    let c = (side as f64 - 1.0) / 2.0;
    let rim_radius = (side as f64 / 2.0) / patch.window_scale;
    let mut rim = f64::NEG_INFINITY;
    for r in 0..side {
        for col in 0..side {
            let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
            if (d - rim_radius).abs() <= RIM_BAND * rim_radius {
                rim = rim.max(e.get(r, col));
            }
        }
    }
    rim - center
}

/// True iff every 90° rotation differs from the original by less than
/// `max_frac * depth` at every pixel. Zero or negative depth fails.
pub fn symmetry_check(patch: &ElevationPatch, max_frac: f64) -> bool {
    let depth = patch_depth(patch);
    if !(depth > 0.0) {
        return false;
    }
    let limit = max_frac * depth;
    let mut turned = patch.elevation.clone();
    for _ in 0..3 {
        turned = turned.rotate90();
        let worst = turned
            .values()
            .iter()
            .zip(patch.elevation.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if worst >= limit {
            return false;
        }
    }
    true
}

/// `depth / physical_diameter >= min_ratio`; the boundary passes.
pub fn depth_ratio_check(patch: &ElevationPatch, physical_diameter: f64, min_ratio: f64) -> bool {
    patch_depth(patch) / physical_diameter >= min_ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub min_radius_km: f64,
    pub max_radius_km: f64,
    pub max_eccentricity: f64,
    pub window_scale: f64,
    pub patch_side: usize,
    pub max_symmetry_frac: f64,
    pub min_depth_ratio: f64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            min_radius_km: 2.0,
            max_radius_km: 16.0,
            max_eccentricity: 0.3,
            window_scale: DEFAULT_WINDOW_SCALE,
            patch_side: DEFAULT_PATCH_SIDE,
            max_symmetry_frac: 0.4,
            min_depth_ratio: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchVerdict {
    Accepted,
    RejectedBounds,
    RejectedSymmetry,
    RejectedDepthRatio,
}

/// Extracts and judges one crater. Returns the unrotated patch when accepted.
pub fn judge_crater(
    dem: &RasterGrid,
    albedo: Option<&RasterGrid>,
    georef: &GridGeoref,
    record: &CatalogRecord,
    params: &TrainingParams,
) -> (PatchVerdict, Option<ElevationPatch>) {
    let mut patch = match extract_patch(dem, georef, record, params.window_scale, params.patch_side)
    {
        Ok(p) => p,
        Err(_) => return (PatchVerdict::RejectedBounds, None),
    };
    if let Some(a) = albedo {
        match extract_albedo(a, georef, record, params.window_scale, params.patch_side) {
            Ok(g) => patch.albedo = Some(g),
            Err(_) => return (PatchVerdict::RejectedBounds, None),
        }
    }
    if !symmetry_check(&patch, params.max_symmetry_frac) {
        return (PatchVerdict::RejectedSymmetry, None);
    }
    if !depth_ratio_check(&patch, 2.0 * record.radius * 1000.0, params.min_depth_ratio) {
        return (PatchVerdict::RejectedDepthRatio, None);
    }
    (PatchVerdict::Accepted, Some(patch))
}

/// Filters the catalog, extracts every surviving crater and emits four
/// rotations per accepted crater. Extraction failures count as bounds
/// rejections.
pub fn build_training_set(
    dem: &RasterGrid,
    albedo: Option<&RasterGrid>,
    georef: &GridGeoref,
    records: &[CatalogRecord],
    params: &TrainingParams,
) -> (Vec<ElevationPatch>, PatchFilterReport) {
    let candidates = filter_catalog(
        records,
        params.min_radius_km,
        params.max_radius_km,
        params.max_eccentricity,
    );
    let judged = crate::par::map_slice(&candidates, |r| judge_crater(dem, albedo, georef, r, params));
    let mut report = PatchFilterReport {
        candidate_count: candidates.len(),
        ..Default::default()
    };
    let mut patches = Vec::new();
    for (verdict, patch) in judged {
        match verdict {
            PatchVerdict::Accepted => {
                report.accepted += 1;
                let p = patch.expect("accepted crater carries a patch");
                patches.extend(Rotation::ALL.iter().map(|&rot| p.rotated(rot)));
            }
            PatchVerdict::RejectedBounds => report.rejected_bounds += 1,
            PatchVerdict::RejectedSymmetry => report.rejected_symmetry += 1,
            PatchVerdict::RejectedDepthRatio => report.rejected_depth_ratio += 1,
        }
    }
    (patches, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainingEntry {
    source_id: String,
    rotation: Rotation,
    window_scale: f64,
    elevation_file: String,
    albedo_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainingManifest {
    version: u32,
    report: PatchFilterReport,
    patches: Vec<TrainingEntry>,
}

pub fn write_training_set(
    dir: impl AsRef<Path>,
    patches: &[ElevationPatch],
    report: &PatchFilterReport,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        let elevation_file = format!("patch_{i:05}_elev.egr");
        raster_io::write_raster(&p.elevation, dir.join(&elevation_file))?;
        let albedo_file = match &p.albedo {
            Some(a) => {
                let f = format!("patch_{i:05}_albedo.egr");
                raster_io::write_raster(a, dir.join(&f))?;
                Some(f)
            }
            None => None,
        };
        entries.push(TrainingEntry {
            source_id: p.source_id.clone(),
            rotation: p.rotation,
            window_scale: p.window_scale,
            elevation_file,
            albedo_file,
        });
    }
    raster_io::write_json(
        &TrainingManifest {
            version: 1,
            report: *report,
            patches: entries,
        },
        dir.join("manifest.json"),
    )
}

pub fn read_training_set(dir: impl AsRef<Path>) -> Result<(Vec<ElevationPatch>, PatchFilterReport)> {
    let dir = dir.as_ref();
    let manifest: TrainingManifest = raster_io::read_json(dir.join("manifest.json"))?;
    let mut patches = Vec::with_capacity(manifest.patches.len());
    for e in manifest.patches {
        let elevation = raster_io::read_raster(dir.join(&e.elevation_file))?;
        let albedo = match &e.albedo_file {
            Some(f) => Some(raster_io::read_raster(dir.join(f))?),
            None => None,
        };
        let mut p = ElevationPatch::new(elevation, albedo, e.source_id, e.window_scale)?;
        p.rotation = e.rotation;
        patches.push(p);
    }
    Ok((patches, manifest.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TangentFrame;

    fn record(id: &str, radius: f64, ecc: f64) -> CatalogRecord {
        CatalogRecord {
            id: id.into(),
            lat: 0.0,
            lon: 0.0,
            radius,
            eccentricity: ecc,
            elevation: 0.0,
        }
    }

    /// Georef placing the catalog point (0, 0) at the raster center.
    fn centered_georef(dem: &RasterGrid) -> GridGeoref {
        let cell = dem.cell_size();
        GridGeoref {
            frame: TangentFrame {
                ref_lat_deg: 0.0,
                ref_lon_deg: 0.0,
                moon_radius_km: 1737.4,
            },
            origin_east_m: -((dem.width() - 1) as f64) / 2.0 * cell,
            origin_north_m: ((dem.height() - 1) as f64) / 2.0 * cell,
        }
    }

    fn patch_from_fn(side: usize, f: impl Fn(f64) -> f64) -> ElevationPatch {
        let c = (side as f64 - 1.0) / 2.0;
        let g = RasterGrid::from_fn(side, side, 1.0, |r, col| {
            f(((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt())
        })
        .unwrap();
        ElevationPatch::new(g, None, "t", DEFAULT_WINDOW_SCALE).unwrap()
    }

    #[test]
    fn flat_raster_gives_zero_patch() {
        let dem = RasterGrid::filled(101, 101, 100.0, 100.0).unwrap();
        let p = extract_patch(&dem, &centered_georef(&dem), &record("a", 2.0, 0.0), 1.2, 25).unwrap();
        assert!(p.elevation.values().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(p.side(), 25);
    }

    #[test]
    fn window_is_scale_times_radius() {
        // 2 km crater, 100 m cells: half-width 24 cells, full window 48 cells
        let dem = RasterGrid::from_fn(101, 101, 100.0, |_, c| c as f64).unwrap();
        let p = extract_patch(&dem, &centered_georef(&dem), &record("a", 2.0, 0.0), 1.2, 25).unwrap();
        assert!((p.elevation.cell_size() - 4800.0 / 25.0).abs() < 1e-9);
        // a unit ramp in cells spans the sampled window: (24.5/25*2-1)*24*2 cells
        let span = p.elevation.get(0, 24) - p.elevation.get(0, 0);
        assert!((span - 48.0 * 24.0 / 25.0).abs() < 1e-9);
        // just fits with 26 cells of margin at 3 km? 36 > 50 would not fit
        let too_big = extract_patch(&dem, &centered_georef(&dem), &record("b", 4.2, 0.0), 1.2, 25);
        assert!(matches!(too_big, Err(Error::OutOfBounds(_))));
        assert!(extract_patch(&dem, &centered_georef(&dem), &record("c", 0.0, 0.0), 1.2, 25).is_err());
        assert!(extract_patch(&dem, &centered_georef(&dem), &record("d", 1.0, 0.0), 1.2, 2).is_err());
    }

    #[test]
    fn bowl_minimum_at_center_and_zero_mean() {
        let cell = 100.0;
        let dem = RasterGrid::from_fn(121, 121, cell, |r, c| {
            let d = (((r as f64 - 60.0).powi(2) + (c as f64 - 60.0).powi(2)).sqrt()) * cell;
            let rn = d / 2500.0;
            if rn < 1.0 { -500.0 * (1.0 - rn * rn) } else { 0.0 }
        })
        .unwrap();
        let p = extract_patch(&dem, &centered_georef(&dem), &record("a", 2.5, 0.0), 1.2, 25).unwrap();
        let (lo, hi) = p.elevation.min_max();
        assert_eq!(p.elevation.get(12, 12), lo);
        assert!(p.elevation.mean().abs() <= 1e-9 * (hi - lo));
    }

    #[test]
    fn catalog_filter_bounds_inclusive() {
        let recs = vec![
            record("a", 2.0, 0.0),
            record("b", 16.0, 0.0),
            record("c", 1.9, 0.0),
            record("d", 16.1, 0.0),
            record("e", 5.0, 0.3),
            record("f", 5.0, 0.31),
        ];
        let kept: Vec<_> = filter_catalog(&recs, 2.0, 16.0, 0.3)
            .into_iter()
            .map(|r| r.id)
            .collect();
        assert_eq!(kept, ["a", "b", "e"]);
        assert!(filter_catalog(&[], 2.0, 16.0, 0.3).is_empty());
        let once = filter_catalog(&recs, 2.0, 16.0, 0.3);
        assert_eq!(filter_catalog(&once, 2.0, 16.0, 0.3), once);
    }

    #[test]
    fn symmetric_bowl_passes_and_spike_fails() {
        let bowl = patch_from_fn(25, |d| (d / 10.0).powi(2) * 100.0);
        assert!(symmetry_check(&bowl, 0.4));
        assert!(symmetry_check(&bowl, 1e-6));
        let depth = patch_depth(&bowl);

        let mut spiked = bowl.clone();
        let mut v = spiked.elevation.clone().into_values();
        v[0] += 0.5 * depth;
        spiked.elevation = RasterGrid::new(25, 25, 1.0, v).unwrap();
        // corner is outside the rim band so depth is unchanged
        assert_eq!(patch_depth(&spiked), depth);
        assert!(!symmetry_check(&spiked, 0.4));
        assert!(symmetry_check(&spiked, 0.6));

        let flat = patch_from_fn(25, |_| 0.0);
        assert!(!symmetry_check(&flat, 0.4));
    }

    #[test]
    fn depth_ratio_boundary() {
        // depth exactly 400 m: paraboloid clamped at the rim radius
        let r0 = 12.5 / 1.2;
        let p = patch_from_fn(25, |d| 400.0 * (d / r0).min(1.0).powi(2));
        assert!((patch_depth(&p) - 400.0).abs() < 1e-9);
        assert!(depth_ratio_check(&p, 4000.0, 0.1));
        let shallow = patch_from_fn(25, |d| 100.0 * (d / r0).min(1.0).powi(2));
        assert!(!depth_ratio_check(&shallow, 4000.0, 0.1));
        let analytic = 237.5;
        let q = patch_from_fn(25, |d| analytic * (d / r0).min(1.0).powi(2));
        assert!((patch_depth(&q) / 3000.0 - analytic / 3000.0).abs() < 1e-9);
    }

    #[test]
    fn four_rotations_restore_patch() {
        let p = patch_from_fn(5, |d| d * d + d.sin());
        let mut q = p.clone();
        for _ in 0..4 {
            q = ElevationPatch {
                elevation: q.elevation.rotate90(),
                ..q
            };
        }
        assert_eq!(q.elevation, p.elevation);
    }
}
