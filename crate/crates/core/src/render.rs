//! Heightfield meshing, Lunar-Lambert shading and ray-traced shadows.
//!
//! Grid convention: column index maps to +x (east), row index to -y (row 0 is
//! north), elevation to +z. Each grid cell is split along its
//! `(i, j) - (i+1, j+1)` diagonal.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::eigenbasis::CraterTemplate;
use crate::error::{Error, Result};
use crate::raster_io::RasterGrid;

pub type Vec3 = Vector3<f64>;

/// Relative lift of shadow-ray origins, in units of the mesh spacing.
pub const SHADOW_EPSILON: f64 = 1e-4;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise seen from +z.
    pub faces: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vec3>,
    /// Typical edge length; scales the shadow-ray lift.
    pub spacing: f64,
}

impl SurfaceMesh {
    /// Builds a mesh and computes its vertex normals.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, spacing: f64) -> Result<Self> {
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::OutOfBounds(format!("face {f:?} references a missing vertex")));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidArgument(format!("mesh spacing {spacing} must be positive")));
        }
        let mut mesh = SurfaceMesh {
            vertices,
            faces,
            vertex_normals: Vec::new(),
            spacing,
        };
        compute_normals(&mut mesh)?;
        Ok(mesh)
    }

    pub fn facet_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face];
        let (v0, v1, v2) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (v1 - v0).cross(&(v2 - v0))
    }
}

/// Triangulates a `P x P` elevation grid whose pixel centers become vertices.
pub fn mesh_from_dem(elevation: &RasterGrid, cell_size: f64) -> Result<SurfaceMesh> {
    let (w, h) = (elevation.width(), elevation.height());
    if w < 2 || h < 2 {
        return Err(Error::InvalidArgument(format!(
            "mesh needs at least 2x2 samples, got {w}x{h}"
        )));
    }
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::InvalidArgument(format!("cell size {cell_size} must be positive")));
    }
    let mut vertices = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            vertices.push(Vec3::new(j as f64 * cell_size, -(i as f64) * cell_size, elevation.get(i, j)));
        }
    }
    let mut faces = Vec::with_capacity(2 * (w - 1) * (h - 1));
    for i in 0..h - 1 {
        for j in 0..w - 1 {
            let a = i * w + j;
            let b = a + 1;
            let c = a + w;
            let d = c + 1;
            // a=(i,j) b=(i,j+1) c=(i+1,j) d=(i+1,j+1); ccw from +z
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    SurfaceMesh::new(vertices, faces, cell_size)
}

fn corner_angle(at: Vec3, p: Vec3, q: Vec3) -> f64 {
    let u = p - at;
    let v = q - at;
    u.cross(&v).norm().atan2(u.dot(&v))
}

/// Angle-weighted vertex normals from the facet normals `(v1-v0) x (v2-v0)`.
pub fn compute_normals(mesh: &mut SurfaceMesh) -> Result<()> {
    let mut acc = vec![Vec3::zeros(); mesh.vertices.len()];
    for (fi, face) in mesh.faces.iter().enumerate() {
        let n = mesh.facet_normal(fi);
        let len = n.norm();
        if !(len > 0.0) {
            return Err(Error::Degenerate(format!("face {fi} has zero area")));
        }
        let n = n / len;
        for k in 0..3 {
            let at = mesh.vertices[face[k]];
            let p = mesh.vertices[face[(k + 1) % 3]];
            let q = mesh.vertices[face[(k + 2) % 3]];
            acc[face[k]] += corner_angle(at, p, q) * n;
        }
    }
    mesh.vertex_normals = acc
        .into_iter()
        .map(|n| n.try_normalize(0.0).unwrap_or_else(Vec3::z))
        .collect();
    Ok(())
}

/// Lunar-Lambert weighting `g(phase) = exp(-phase_deg / 60)`.
pub fn limb_darkening_weight(phase: f64) -> f64 {
    (-phase.to_degrees() / 60.0).exp()
}

/// Radiance factor from cosines of incidence and emission.
pub fn lunar_lambert_cos(albedo: f64, cos_i: f64, cos_e: f64, g: f64) -> f64 {
    let denom = cos_i + cos_e;
    if cos_i <= 0.0 || denom <= 0.0 {
        return 0.0;
    }
    albedo * ((1.0 - g) * cos_i + g * 2.0 * cos_i / denom)
}

/// `a [ (1 - g) cos i + g 2 cos i / (cos i + cos e) ]`, zero at or past
/// grazing incidence. Angles in radians.
pub fn lunar_lambert(albedo: f64, incidence: f64, emission: f64, phase: f64) -> f64 {
    if incidence >= std::f64::consts::FRAC_PI_2 {
        return 0.0;
    }
    lunar_lambert_cos(albedo, incidence.cos(), emission.cos(), limb_darkening_weight(phase))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingGeometry {
    /// Toward the Sun.
    pub sun_dir: [f64; 3],
    /// Toward the camera.
    pub emission_dir: [f64; 3],
    /// Used when the template carries no albedo grid.
    pub albedo: f64,
}

impl LightingGeometry {
    pub fn new(sun_dir: Vec3, emission_dir: Vec3, albedo: f64) -> Result<Self> {
        let l = LightingGeometry {
            sun_dir: [sun_dir.x, sun_dir.y, sun_dir.z],
            emission_dir: [emission_dir.x, emission_dir.y, emission_dir.z],
            albedo,
        };
        l.validate()?;
        Ok(l)
    }

    /// Sun at `elevation_deg` above the horizon, `azimuth_deg` measured from
    /// +x toward +y; camera along `emission`.
    pub fn from_angles(elevation_deg: f64, azimuth_deg: f64, emission: Vec3, albedo: f64) -> Result<Self> {
        let (el, az) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        Self::new(
            Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()),
            emission,
            albedo,
        )
    }

    pub fn sun(&self) -> Vec3 {
        Vec3::from(self.sun_dir)
    }

    pub fn emission(&self) -> Vec3 {
        Vec3::from(self.emission_dir)
    }

    pub fn phase(&self) -> f64 {
        self.sun().dot(&self.emission()).clamp(-1.0, 1.0).acos()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sun", self.sun()), ("emission", self.emission())] {
            if (v.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidArgument(format!(
                    "{name} direction must be unit length, got norm {}",
                    v.norm()
                )));
            }
        }
        if !(self.albedo > 0.0) || !self.albedo.is_finite() {
            return Err(Error::InvalidArgument(format!("albedo {} must be positive", self.albedo)));
        }
        Ok(())
    }
}

/// Ray hit: distance along the ray and barycentric coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
    pub u: f64,
    pub v: f64,
}

/// Barycentric slack so rays along a shared edge hit at least one face.
const EDGE_EPS: f64 = 1e-9;

/// Moller-Trumbore ray/triangle test; edges are inclusive.
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - v0;
    let u = s.dot(&p) * inv;
    if !(-EDGE_EPS..=1.0 + EDGE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -EDGE_EPS || u + v > 1.0 + EDGE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t > 0.0 {
        Some((t, u, v))
    } else {
        None
    }
}

/// Uniform 2D grid over the faces' xy footprint with per-cell z extent.
#[derive(Debug, Clone)]
pub struct FaceGrid {
    x0: f64,
    y0: f64,
    cell: f64,
    nx: usize,
    ny: usize,
    z_min: f64,
    z_max: f64,
    offsets: Vec<usize>,
    items: Vec<usize>,
    cell_z: Vec<(f64, f64)>,
}

impl FaceGrid {
    pub fn build(mesh: &SurfaceMesh, cell: f64) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        let (mut z_min, mut z_max) = (f64::MAX, f64::MIN);
        for v in &mesh.vertices {
            x0 = x0.min(v.x);
            y0 = y0.min(v.y);
            x1 = x1.max(v.x);
            y1 = y1.max(v.y);
            z_min = z_min.min(v.z);
            z_max = z_max.max(v.z);
        }
        let nx = (((x1 - x0) / cell).floor() as usize + 1).max(1);
        let ny = (((y1 - y0) / cell).floor() as usize + 1).max(1);
        let pad = 1e-9 * cell;
        let footprint = |f: &[usize; 3]| {
            let vs = f.map(|i| mesh.vertices[i]);
            let lo_x = vs.iter().map(|v| v.x).fold(f64::MAX, f64::min) - pad;
            let hi_x = vs.iter().map(|v| v.x).fold(f64::MIN, f64::max) + pad;
            let lo_y = vs.iter().map(|v| v.y).fold(f64::MAX, f64::min) - pad;
            let hi_y = vs.iter().map(|v| v.y).fold(f64::MIN, f64::max) + pad;
            let cx = |x: f64| (((x - x0) / cell).floor().max(0.0) as usize).min(nx - 1);
            let cy = |y: f64| (((y - y0) / cell).floor().max(0.0) as usize).min(ny - 1);
            (cx(lo_x), cx(hi_x), cy(lo_y), cy(hi_y))
        };
        let mut counts = vec![0usize; nx * ny];
        for f in &mesh.faces {
            let (a, b, c, d) = footprint(f);
            for iy in c..=d {
                for ix in a..=b {
                    counts[iy * nx + ix] += 1;
                }
            }
        }
        let mut offsets = vec![0usize; nx * ny + 1];
        for k in 0..nx * ny {
            offsets[k + 1] = offsets[k] + counts[k];
        }
        let mut fill = offsets.clone();
        let mut items = vec![0usize; offsets[nx * ny]];
        let mut cell_z = vec![(f64::MAX, f64::MIN); nx * ny];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let (a, b, c, d) = footprint(f);
            let fz0 = f.iter().map(|&i| mesh.vertices[i].z).fold(f64::MAX, f64::min);
            let fz1 = f.iter().map(|&i| mesh.vertices[i].z).fold(f64::MIN, f64::max);
            for iy in c..=d {
                for ix in a..=b {
                    let k = iy * nx + ix;
                    items[fill[k]] = fi;
                    fill[k] += 1;
                    cell_z[k].0 = cell_z[k].0.min(fz0);
                    cell_z[k].1 = cell_z[k].1.max(fz1);
                }
            }
        }
        FaceGrid {
            x0,
            y0,
            cell,
            nx,
            ny,
            z_min,
            z_max,
            offsets,
            items,
            cell_z,
        }
    }

    pub fn for_mesh(mesh: &SurfaceMesh) -> Self {
        Self::build(mesh, mesh.spacing)
    }

    /// Parametric interval where the ray overlaps the padded bounding box.
    fn clip(&self, o: &Vec3, d: &Vec3) -> Option<(f64, f64)> {
        let pad = 1e-6 * self.cell;
        let lo = [self.x0 - pad, self.y0 - pad, self.z_min - pad];
        let hi = [
            self.x0 + self.nx as f64 * self.cell + pad,
            self.y0 + self.ny as f64 * self.cell + pad,
            self.z_max + pad,
        ];
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for k in 0..3 {
            if d[k] == 0.0 {
                if o[k] < lo[k] || o[k] > hi[k] {
                    return None;
                }
            } else {
                let a = (lo[k] - o[k]) / d[k];
                let b = (hi[k] - o[k]) / d[k];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }

    /// Visits cells along the ray in order of increasing `t`; `visit`
    /// returns `true` to stop.
    fn walk(&self, o: &Vec3, d: &Vec3, mut visit: impl FnMut(&[usize], f64, f64) -> bool) {
        let Some((t_in, t_out)) = self.clip(o, d) else {
            return;
        };
        let p = o + d * t_in;
        let fx = (p.x - self.x0) / self.cell;
        let fy = (p.y - self.y0) / self.cell;
        let mut ix = (fx.floor().max(0.0) as usize).min(self.nx - 1) as isize;
        let mut iy = (fy.floor().max(0.0) as usize).min(self.ny - 1) as isize;
        let axis = |f: f64, i: isize, dir: f64| -> (isize, f64, f64) {
            if dir > 0.0 {
                (1, t_in + ((i + 1) as f64 - f) * self.cell / dir, self.cell / dir)
            } else if dir < 0.0 {
                (-1, t_in + (i as f64 - f) * self.cell / dir, -self.cell / dir)
            } else {
                (0, f64::INFINITY, f64::INFINITY)
            }
        };
        let (sx, mut tx, dtx) = axis(fx, ix, d.x);
        let (sy, mut ty, dty) = axis(fy, iy, d.y);
        let mut t_cur = t_in;
        loop {
            let t_next = tx.min(ty).min(t_out);
            let k = iy as usize * self.nx + ix as usize;
            let (cz0, cz1) = self.cell_z[k];
            let za = o.z + d.z * t_cur;
            let zb = o.z + d.z * t_next;
            let pad = 1e-9 * self.cell;
            let slab_hit = za.min(zb) <= cz1 + pad && za.max(zb) >= cz0 - pad;
            if slab_hit && visit(&self.items[self.offsets[k]..self.offsets[k + 1]], t_cur, t_next) {
                return;
            }
            if t_next >= t_out {
                return;
            }
            if tx <= ty {
                ix += sx;
                t_cur = tx;
                tx += dtx;
            } else {
                iy += sy;
                t_cur = ty;
                ty += dty;
            }
            if ix < 0 || iy < 0 || ix >= self.nx as isize || iy >= self.ny as isize {
                return;
            }
        }
    }

    /// True when the ray hits any face.
    pub fn occluded(&self, mesh: &SurfaceMesh, origin: &Vec3, dir: &Vec3) -> bool {
        let mut hit = false;
        self.walk(origin, dir, |faces, _, _| {
            hit = faces.iter().any(|&f| {
                let [a, b, c] = mesh.faces[f];
                intersect_triangle(origin, dir, &mesh.vertices[a], &mesh.vertices[b], &mesh.vertices[c]).is_some()
            });
            hit
        });
        hit
    }

    /// Closest hit along the ray; ties go to the lowest face index.
    pub fn first_hit(&self, mesh: &SurfaceMesh, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        self.walk(origin, dir, |faces, _, t_exit| {
            for &f in faces {
                let [a, b, c] = mesh.faces[f];
                if let Some((t, u, v)) =
                    intersect_triangle(origin, dir, &mesh.vertices[a], &mesh.vertices[b], &mesh.vertices[c])
                {
                    let better = match best {
                        None => true,
                        Some(h) => t < h.t || (t == h.t && f < h.face),
                    };
                    if better {
                        best = Some(Hit { t, face: f, u, v });
                    }
                }
            }
            best.is_some_and(|h| h.t <= t_exit)
        });
        best
    }
}

fn validate_sun(sun_dir: &Vec3) -> Result<()> {
    if (sun_dir.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidArgument("sun direction must be unit length".into()));
    }
    if sun_dir.z <= 0.0 {
        return Err(Error::InvalidArgument("sun must be above the horizon".into()));
    }
    Ok(())
}

/// Per-vertex shadow flags using a prebuilt index.
pub fn shadow_mask_indexed(mesh: &SurfaceMesh, grid: &FaceGrid, sun_dir: &Vec3) -> Vec<bool> {
    let lift = SHADOW_EPSILON * mesh.spacing;
    crate::par::map_slice(&mesh.vertices, |v| grid.occluded(mesh, &(v + sun_dir * lift), sun_dir))
}

/// A vertex is shadowed when a ray from just above it toward the Sun hits
/// any face.
pub fn shadow_mask(mesh: &SurfaceMesh, sun_dir: &Vec3) -> Result<Vec<bool>> {
    validate_sun(sun_dir)?;
    Ok(shadow_mask_indexed(mesh, &FaceGrid::for_mesh(mesh), sun_dir))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTemplate {
    /// Raw radiance factor, nonnegative.
    pub intensity: RasterGrid,
    pub shadow_mask: Vec<bool>,
    pub template_id: usize,
}

impl RenderedTemplate {
    pub fn side(&self) -> usize {
        self.intensity.width()
    }

    pub fn shadow_raster(&self) -> RasterGrid {
        let w = self.intensity.width();
        RasterGrid::from_fn(w, self.intensity.height(), 1.0, |r, c| {
            if self.shadow_mask[r * w + c] {
                1.0
            } else {
                0.0
            }
        })
        .expect("same shape as intensity")
    }

    /// Zero-mean, unit-variance copy of the intensity.
    pub fn normalized(&self) -> Result<RasterGrid> {
        normalize_intensity(&self.intensity)
    }
}

pub fn normalize_intensity(grid: &RasterGrid) -> Result<RasterGrid> {
    let n = grid.values().len() as f64;
    let mean = grid.mean();
    let var = grid.values().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Degenerate("constant intensity cannot be normalized".into()));
    }
    let sd = var.sqrt();
    RasterGrid::new(
        grid.width(),
        grid.height(),
        grid.cell_size(),
        grid.values().iter().map(|x| (x - mean) / sd).collect(),
    )
}

/// Shades every vertex of `elevation` (meters, sampled every `cell_size`
/// meters) under collimated sunlight.
pub fn render_elevation(
    elevation: &RasterGrid,
    albedo: Option<&RasterGrid>,
    lighting: &LightingGeometry,
    cell_size: f64,
) -> Result<(RasterGrid, Vec<bool>)> {
    lighting.validate()?;
    let sun = lighting.sun();
    validate_sun(&sun)?;
    if let Some(a) = albedo {
        if a.width() != elevation.width() || a.height() != elevation.height() {
            return Err(Error::DimensionMismatch {
                expected: elevation.values().len(),
                got: a.values().len(),
            });
        }
    }
    let mesh = mesh_from_dem(elevation, cell_size)?;
    let shadows = shadow_mask(&mesh, &sun)?;
    let emission = lighting.emission();
    let g = limb_darkening_weight(lighting.phase());
    let values: Vec<f64> = (0..mesh.vertices.len())
        .map(|k| {
            if shadows[k] {
                return 0.0;
            }
            let n = mesh.vertex_normals[k];
            let a = albedo.map_or(lighting.albedo, |grid| grid.values()[k].max(0.0));
            lunar_lambert_cos(a, n.dot(&sun), n.dot(&emission), g)
        })
        .collect();
    let grid = RasterGrid::new(elevation.width(), elevation.height(), cell_size, values)?;
    Ok((grid, shadows))
}

pub fn render_template(
    template: &CraterTemplate,
    lighting: &LightingGeometry,
    cell_size: f64,
) -> Result<RenderedTemplate> {
    let (intensity, shadow_mask) =
        render_elevation(&template.elevation, template.albedo.as_ref(), lighting, cell_size)?;
    Ok(RenderedTemplate {
        intensity,
        shadow_mask,
        template_id: template.cluster_id,
    })
}
