//! Camera model, poses and the off-nadir homographic adaptation.
//!
//! Frames: `M` is Moon-centered Moon-fixed (km). The camera frame `C` has +x
//! along image columns, +y along image rows (down) and +z along the boresight.
//! Rows of `R_CM` are the camera axes expressed in `M`. The nadir frame `N` is a
//! camera-like frame at the same altitude looking straight down at the point
//! where the boresight meets the reference sphere.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::{CatalogRecord, RasterGrid};

pub const DEFAULT_MOON_RADIUS_KM: f64 = 1737.4;

/// Projected size limits for catalog craters kept for identification.
pub const MIN_SEMI_MINOR_PX: f64 = 5.0;
pub const MAX_SEMI_MAJOR_PX: f64 = 105.0;

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub dx: f64,
    pub dy: f64,
    pub up: f64,
    pub vp: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraModel {
    pub fn new(dx: f64, dy: f64, up: f64, vp: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            dx,
            dy,
            up,
            vp,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at the image center and the
    /// given horizontal field of view.
    pub fn from_fov(width: usize, height: usize, hfov_deg: f64) -> Result<Self> {
        let half = hfov_deg.to_radians() / 2.0;
        let f = (width as f64 / 2.0) / half.tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if !(self.width > 0 && self.height > 0) {
            return Err(Error::InvalidArgument("image size must be positive".into()));
        }
        if !(self.in_bounds(self.up, self.vp)) {
            return Err(Error::InvalidArgument(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.dx, 0.0, self.up, 0.0, self.dy, self.vp, 0.0, 0.0, 1.0)
    }

    pub fn k_inv(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.dx,
            0.0,
            -self.up / self.dx,
            0.0,
            1.0 / self.dy,
            -self.vp / self.dy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Pixel-center convention: pixel (row, col) sits at (u = col, v = row).
    pub fn in_bounds(&self, u: f64, v: f64) -> bool {
        u >= -0.5 && v >= -0.5 && u <= self.width as f64 - 0.5 && v <= self.height as f64 - 0.5
    }
}

/// Camera extrinsics in the MCMF frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Rotation taking MCMF vectors into the camera frame.
    pub r_cm: Matrix3<f64>,
    /// Camera position in MCMF, km.
    pub position: Vector3<f64>,
}

impl Pose {
    pub fn new(r_cm: Matrix3<f64>, position: Vector3<f64>) -> Result<Self> {
        let ortho = (r_cm.transpose() * r_cm - Matrix3::identity()).amax();
        if ortho > 1e-9 || (r_cm.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "R_CM is not a proper rotation (orthonormality error {ortho:e})"
            )));
        }
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite camera position".into()));
        }
        Ok(Self { r_cm, position })
    }

    /// Camera axis `i` (0-based) expressed in MCMF.
    pub fn axis(&self, i: usize) -> Vector3<f64> {
        self.r_cm.row(i).transpose()
    }

    pub fn boresight(&self) -> Vector3<f64> {
        self.axis(2)
    }

    /// Camera looking from `position` toward `target`, with image +y (down)
    /// as close as possible to `down_hint`.
    pub fn look_at(
        position: Vector3<f64>,
        target: Vector3<f64>,
        down_hint: Vector3<f64>,
    ) -> Result<Self> {
        let c3 = (target - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Degenerate("camera coincides with target".into()))?;
        let c1 = down_hint
            .cross(&c3)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Degenerate("down hint parallel to boresight".into()))?;
        let c2 = c3.cross(&c1);
        let r = Matrix3::from_rows(&[c1.transpose(), c2.transpose(), c3.transpose()]);
        Self::new(r, position)
    }

    pub fn to_camera(&self, p_m: &Vector3<f64>) -> Vector3<f64> {
        self.r_cm * (p_m - self.position)
    }
}

/// Per-view scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub dx: f64,
    pub dy: f64,
    pub up: f64,
    pub vp: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major.
    #[serde(rename = "R_CM")]
    pub r_cm: [f64; 9],
    #[serde(rename = "r_CM")]
    pub r_cm_pos: [f64; 3],
    #[serde(rename = "sun_dir_M")]
    pub sun_dir_m: [f64; 3],
}

impl SceneView {
    pub fn new(cam: &CameraModel, pose: &Pose, sun_dir_m: &Vector3<f64>) -> Self {
        let mut r = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = pose.r_cm[(i, j)];
            }
        }
        Self {
            dx: cam.dx,
            dy: cam.dy,
            up: cam.up,
            vp: cam.vp,
            width: cam.width,
            height: cam.height,
            r_cm: r,
            r_cm_pos: [pose.position.x, pose.position.y, pose.position.z],
            sun_dir_m: [sun_dir_m.x, sun_dir_m.y, sun_dir_m.z],
        }
    }

    pub fn camera(&self) -> Result<CameraModel> {
        CameraModel::new(self.dx, self.dy, self.up, self.vp, self.width, self.height)
    }

    pub fn pose(&self) -> Result<Pose> {
        Pose::new(
            Matrix3::from_row_slice(&self.r_cm),
            Vector3::from_column_slice(&self.r_cm_pos),
        )
    }

    pub fn sun_dir(&self) -> Result<Vector3<f64>> {
        Vector3::from_column_slice(&self.sun_dir_m)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidArgument("zero sun vector".into()))
    }
}

/// Distance along the boresight to the reference sphere (nearer root).
pub fn surface_distance(pose: &Pose, moon_radius: f64) -> Result<f64> {
    let r = pose.position;
    let c3 = pose.boresight();
    let b = r.dot(&c3);
    let c = r.norm_squared() - moon_radius * moon_radius;
    if c < 0.0 {
        return Err(Error::Degenerate("camera inside the reference sphere".into()));
    }
    let mut disc = b * b - c;
    // grazing rays may round to a slightly negative discriminant
    if disc < 0.0 && disc > -1e-12 * r.norm_squared() {
        disc = 0.0;
    }
    if disc < 0.0 {
        return Err(Error::Degenerate("boresight misses the Moon".into()));
    }
    let d = -b - disc.sqrt();
    if d < 0.0 {
        return Err(Error::Degenerate("boresight points away from the Moon".into()));
    }
    Ok(d)
}

/// Orientation and placement of the nadir frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadirFrame {
    pub r_nm: Matrix3<f64>,
    /// Nadir frame origin in MCMF, km.
    pub origin: Vector3<f64>,
    /// Boresight/sphere intersection in MCMF, km.
    pub surface_point: Vector3<f64>,
    pub d_surface: f64,
}

pub fn nadir_frame(pose: &Pose, moon_radius: f64) -> Result<NadirFrame> {
    let d = surface_distance(pose, moon_radius)?;
    let surface_point = pose.boresight() * d + pose.position;
    let origin = surface_point * (pose.position.norm() / moon_radius);
    let n3 = -origin / origin.norm();
    // The cross product alone is not unit length off-nadir.
    let n1 = pose
        .axis(1)
        .cross(&n3)
        .try_normalize(1e-12)
        .ok_or_else(|| Error::Degenerate("camera y axis parallel to local vertical".into()))?;
    let n2 = n3.cross(&n1);
    Ok(NadirFrame {
        r_nm: Matrix3::from_rows(&[n1.transpose(), n2.transpose(), n3.transpose()]),
        origin,
        surface_point,
        d_surface: d,
    })
}

/// Camera-to-nadir homography `H_NC = H_NS H_CS^-1`, scaled so `H[(2,2)] = 1`.
pub fn homography_chain(
    pose: &Pose,
    cam: &CameraModel,
    frame: &NadirFrame,
    moon_radius: f64,
) -> Result<Matrix3<f64>> {
    let k = cam.k();
    let r_cs = pose.r_cm * frame.r_nm.transpose();
    let r_sc = Vector3::new(0.0, 0.0, frame.d_surface);
    let h_cs = k * Matrix3::from_columns(&[r_cs.column(0).into(), r_cs.column(1).into(), r_sc]);
    let altitude = frame.origin.norm() - moon_radius;
    let h_ns = k * Matrix3::from_columns(&[
        Vector3::x(),
        Vector3::y(),
        Vector3::new(0.0, 0.0, altitude),
    ]);
    let h_cs_inv = h_cs
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("H_CS is singular".into()))?;
    normalize_homography(h_ns * h_cs_inv)
}

pub fn normalize_homography(h: Matrix3<f64>) -> Result<Matrix3<f64>> {
    let s = h[(2, 2)];
    if s.abs() < 1e-300 || !s.is_finite() {
        return Err(Error::Degenerate("homography has zero (3,3) entry".into()));
    }
    Ok(h / s)
}

/// Everything the matcher needs to compensate an off-nadir view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NadirAdaptation {
    pub r_nm: Matrix3<f64>,
    pub h_nc: Matrix3<f64>,
    /// Sun direction in the nadir frame.
    pub sun_n: Vector3<f64>,
    /// Direction toward the camera in the nadir frame.
    pub emission_n: Vector3<f64>,
    pub d_surface: f64,
}

pub fn nadir_adaptation(
    pose: &Pose,
    cam: &CameraModel,
    sun_dir_m: &Vector3<f64>,
    moon_radius: f64,
) -> Result<NadirAdaptation> {
    let frame = nadir_frame(pose, moon_radius)?;
    let h_nc = homography_chain(pose, cam, &frame, moon_radius)?;
    let r_nc = frame.r_nm * pose.r_cm.transpose();
    let sun_c = pose.r_cm * sun_dir_m;
    Ok(NadirAdaptation {
        r_nm: frame.r_nm,
        h_nc,
        sun_n: (r_nc * sun_c).normalize(),
        emission_n: r_nc * Vector3::new(0.0, 0.0, -1.0),
        d_surface: frame.d_surface,
    })
}

pub fn apply_homography(h: &Matrix3<f64>, u: f64, v: f64) -> Option<(f64, f64)> {
    let p = h * Vector3::new(u, v, 1.0);
    if p.z.abs() < 1e-300 {
        return None;
    }
    Some((p.x / p.z, p.y / p.z))
}

/// Jacobian of the homography map at (u, v).
pub fn homography_jacobian(h: &Matrix3<f64>, u: f64, v: f64) -> Matrix2<f64> {
    let p = h * Vector3::new(u, v, 1.0);
    let w = p.z;
    let (x, y) = (p.x / w, p.y / w);
    Matrix2::new(
        (h[(0, 0)] - x * h[(2, 0)]) / w,
        (h[(0, 1)] - x * h[(2, 1)]) / w,
        (h[(1, 0)] - y * h[(2, 0)]) / w,
        (h[(1, 1)] - y * h[(2, 1)]) / w,
    )
}

/// Warped raster plus the per-pixel validity mask (false where the source
/// location fell outside the input).
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedImage {
    pub image: RasterGrid,
    pub valid: Vec<bool>,
}

/// Inverse-mapping warp: output pixel p samples the input at `H^-1 p`.
pub fn warp_image(
    image: &RasterGrid,
    h: &Matrix3<f64>,
    out_width: usize,
    out_height: usize,
) -> Result<WarpedImage> {
    let h_inv = h
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("warp homography is singular".into()))?;
    let rows = crate::par::map_range(out_height, |r| {
        let mut vals = Vec::with_capacity(out_width);
        let mut ok = Vec::with_capacity(out_width);
        for c in 0..out_width {
            let s = apply_homography(&h_inv, c as f64, r as f64)
                .and_then(|(x, y)| image.sample_bilinear(x, y));
            vals.push(s.unwrap_or(0.0));
            ok.push(s.is_some());
        }
        (vals, ok)
    });
    let mut values = Vec::with_capacity(out_width * out_height);
    let mut valid = Vec::with_capacity(out_width * out_height);
    for (v, m) in rows {
        values.extend(v);
        valid.extend(m);
    }
    Ok(WarpedImage {
        image: RasterGrid::new(out_width, out_height, image.cell_size(), values)?,
        valid,
    })
}

/// Catalog crater rim circle in MCMF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogCrater3D {
    pub id: String,
    pub center: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub radius: f64,
}

pub fn radial_unit(lat_deg: f64, lon_deg: f64) -> Vector3<f64> {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    Vector3::new(lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin())
}

pub fn catalog_to_3d(records: &[CatalogRecord], moon_radius: f64) -> Vec<CatalogCrater3D> {
    records
        .iter()
        .map(|r| {
            let up = radial_unit(r.lat, r.lon);
            CatalogCrater3D {
                id: r.id.clone(),
                center: up * (moon_radius + r.elevation / 1000.0),
                normal: up,
                radius: r.radius,
            }
        })
        .collect()
}

/// Image ellipse of a projected rim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCrater {
    pub id: String,
    pub center_uv: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis from +u, radians in [-pi/2, pi/2).
    pub orientation: f64,
}

impl ProjectedCrater {
    pub fn passes_size_filter(&self) -> bool {
        self.semi_minor > MIN_SEMI_MINOR_PX && self.semi_major < MAX_SEMI_MAJOR_PX
    }
}

/// Ellipse parameters from a symmetric 3x3 conic matrix.
pub fn ellipse_from_conic(conic: &Matrix3<f64>) -> Result<([f64; 2], f64, f64, f64)> {
    let a = Matrix2::new(conic[(0, 0)], conic[(0, 1)], conic[(1, 0)], conic[(1, 1)]);
    let b = Vector2::new(conic[(0, 2)], conic[(1, 2)]);
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("conic has singular quadratic part".into()))?;
    let center = -(a_inv * b);
    let k = conic[(2, 2)] + b.dot(&center);
    // (x - x0)^T A (x - x0) = -k, normalized so the interior is negative.
    let (a, k) = if a.trace() < 0.0 { (-a, -k) } else { (a, k) };
    let eig = nalgebra::SymmetricEigen::new(a);
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    if l0 <= 0.0 || l1 <= 0.0 || k >= 0.0 {
        return Err(Error::Degenerate("projected conic is not an ellipse".into()));
    }
    let (minor_i, major_i) = if l0 >= l1 { (0, 1) } else { (1, 0) };
    let semi_major = (-k / eig.eigenvalues[major_i]).sqrt();
    let semi_minor = (-k / eig.eigenvalues[minor_i]).sqrt();
    let dir = eig.eigenvectors.column(major_i);
    let mut theta = dir[1].atan2(dir[0]);
    if theta >= std::f64::consts::FRAC_PI_2 {
        theta -= std::f64::consts::PI;
    } else if theta < -std::f64::consts::FRAC_PI_2 {
        theta += std::f64::consts::PI;
    }
    Ok(([center.x, center.y], semi_major, semi_minor, theta))
}

/// Orthonormal pair spanning the plane perpendicular to `n`.
pub fn plane_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let hint = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = n.cross(&hint).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Projects the rim circle through the pinhole camera. `Ok(None)` when the
/// crater center is behind the camera or the ellipse center is off-image.
pub fn project_crater(
    crater: &CatalogCrater3D,
    pose: &Pose,
    cam: &CameraModel,
) -> Result<Option<ProjectedCrater>> {
    if pose.to_camera(&crater.center).z <= 0.0 {
        return Ok(None);
    }
    let (e1, e2) = plane_basis(&crater.normal);
    let h_p = cam.k()
        * pose.r_cm
        * Matrix3::from_columns(&[e1, e2, crater.center - pose.position]);
    let h_inv = h_p
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("camera lies in the crater plane".into()))?;
    let r2 = crater.radius * crater.radius;
    let circle = Matrix3::from_diagonal(&Vector3::new(1.0 / r2, 1.0 / r2, -1.0));
    let conic = h_inv.transpose() * circle * h_inv;
    let conic = (conic + conic.transpose()) * 0.5;
    let (center, semi_major, semi_minor, orientation) = ellipse_from_conic(&conic)?;
    if !cam.in_bounds(center[0], center[1]) {
        return Ok(None);
    }
    Ok(Some(ProjectedCrater {
        id: crater.id.clone(),
        center_uv: center,
        semi_major,
        semi_minor,
        orientation,
    }))
}

/// Pixel coordinates of an MCMF point, `None` behind the camera.
pub fn project_point(pose: &Pose, cam: &CameraModel, p_m: &Vector3<f64>) -> Option<[f64; 2]> {
    let pc = pose.to_camera(p_m);
    if pc.z <= 0.0 {
        return None;
    }
    Some([
        cam.dx * pc.x / pc.z + cam.up,
        cam.dy * pc.y / pc.z + cam.vp,
    ])
}

/// Unit line of sight through pixel (u, v), expressed in MCMF.
pub fn pixel_ray(pose: &Pose, cam: &CameraModel, u: f64, v: f64) -> Vector3<f64> {
    (pose.r_cm.transpose() * cam.k_inv() * Vector3::new(u, v, 1.0)).normalize()
}

/// Local tangent plane at a reference point on the sphere. Plane coordinates
/// are (east, north) in km; points map to directions by central projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentFrame {
    pub ref_lat_deg: f64,
    pub ref_lon_deg: f64,
    pub moon_radius_km: f64,
}

impl TangentFrame {
    pub fn up(&self) -> Vector3<f64> {
        radial_unit(self.ref_lat_deg, self.ref_lon_deg)
    }

    pub fn east(&self) -> Vector3<f64> {
        let lon = self.ref_lon_deg.to_radians();
        Vector3::new(-lon.sin(), lon.cos(), 0.0)
    }

    pub fn north(&self) -> Vector3<f64> {
        self.up().cross(&self.east())
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.up() * self.moon_radius_km
    }

    /// MCMF point at plane coordinates (km) and height above the plane (km).
    pub fn to_mcmf(&self, east_km: f64, north_km: f64, height_km: f64) -> Vector3<f64> {
        self.origin() + self.east() * east_km + self.north() * north_km + self.up() * height_km
    }

    pub fn to_plane(&self, p_m: &Vector3<f64>) -> (f64, f64, f64) {
        let d = p_m - self.origin();
        (d.dot(&self.east()), d.dot(&self.north()), d.dot(&self.up()))
    }

    /// Plane coordinates (km) of the point where the direction (lat, lon)
    /// pierces the tangent plane.
    pub fn project_lat_lon(&self, lat_deg: f64, lon_deg: f64) -> Option<(f64, f64)> {
        let dir = radial_unit(lat_deg, lon_deg);
        let cos = dir.dot(&self.up());
        if cos <= 1e-9 {
            return None;
        }
        let p = dir * (self.moon_radius_km / cos);
        let (e, n, _) = self.to_plane(&p);
        Some((e, n))
    }

    /// (lat_deg, lon_deg, elevation_m above the sphere) of an MCMF point.
    pub fn lat_lon_elevation(p_m: &Vector3<f64>, moon_radius: f64) -> (f64, f64, f64) {
        let r = p_m.norm();
        let lat = (p_m.z / r).asin().to_degrees();
        let mut lon = p_m.y.atan2(p_m.x).to_degrees();
        if lon < -180.0 {
            lon += 360.0;
        }
        (lat, lon, (r - moon_radius) * 1000.0)
    }
}

/// Georeference of a raster laid on a tangent plane. Pixel (row, col) centers
/// sit at east = origin_east_m + col * cell, north = origin_north_m - row * cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeoref {
    pub frame: TangentFrame,
    pub origin_east_m: f64,
    pub origin_north_m: f64,
}

impl GridGeoref {
    /// Continuous (col, row) of plane coordinates in meters.
    pub fn plane_to_pixel(&self, east_m: f64, north_m: f64, cell: f64) -> (f64, f64) {
        (
            (east_m - self.origin_east_m) / cell,
            (self.origin_north_m - north_m) / cell,
        )
    }

    pub fn pixel_to_plane(&self, col: f64, row: f64, cell: f64) -> (f64, f64) {
        (
            self.origin_east_m + col * cell,
            self.origin_north_m - row * cell,
        )
    }

    /// Continuous (col, row) of a catalog record's center.
    pub fn locate(&self, record: &CatalogRecord, cell: f64) -> Option<(f64, f64)> {
        let (e, n) = self.frame.project_lat_lon(record.lat, record.lon)?;
        Some(self.plane_to_pixel(e * 1000.0, n * 1000.0, cell))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const R: f64 = DEFAULT_MOON_RADIUS_KM;

    fn nadir_pose(alt: f64) -> Pose {
        let pos = Vector3::new(R + alt, 0.0, 0.0);
        Pose::look_at(pos, Vector3::zeros(), Vector3::z()).unwrap()
    }

    fn camera() -> CameraModel {
        CameraModel::from_fov(512, 512, 30.0).unwrap()
    }

    #[test]
    fn straight_down_distance_is_altitude() {
        let d = surface_distance(&nadir_pose(100.0), R).unwrap();
        assert_relative_eq!(d, 100.0, epsilon = 1e-9);
    }

    #[test]
    fn tangent_boresight_double_root() {
        let pos = Vector3::new(R + 100.0, 0.0, 0.0);
        let t = ((R + 100.0).powi(2) - R * R).sqrt();
        // tangent point direction
        let touch = Vector3::new(R * R / (R + 100.0), R * t / (R + 100.0), 0.0);
        let pose = Pose::look_at(pos, touch, Vector3::z()).unwrap();
        let d = surface_distance(&pose, R).unwrap();
        assert_relative_eq!(d, -pos.dot(&pose.boresight()), epsilon = 1e-6);
        assert_relative_eq!(d, t, epsilon = 1e-6);
    }

    #[test]
    fn surface_distance_errors() {
        let pos = Vector3::new(R + 100.0, 0.0, 0.0);
        let away = Pose::look_at(pos, pos * 2.0, Vector3::z()).unwrap();
        assert!(surface_distance(&away, R).is_err());
        let sideways = Pose::look_at(pos, pos + Vector3::y(), Vector3::z()).unwrap();
        assert!(surface_distance(&sideways, R).is_err());
        let inside = Pose::look_at(Vector3::new(10.0, 0.0, 0.0), Vector3::zeros(), Vector3::z())
            .unwrap();
        assert!(surface_distance(&inside, R).is_err());
    }

    #[test]
    fn off_nadir_matches_bisection() {
        let pos = Vector3::new(R + 100.0, 0.0, 0.0);
        let tilt = 30f64.to_radians();
        let dir = Vector3::new(-tilt.cos(), tilt.sin(), 0.0);
        let pose = Pose::look_at(pos, pos + dir, Vector3::z()).unwrap();
        let d = surface_distance(&pose, R).unwrap();
        let f = |t: f64| (pos + dir * t).norm() - R;
        let (mut lo, mut hi) = (0.0, 200.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((d - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn nadir_frame_of_nadir_pose() {
        let pose = nadir_pose(100.0);
        let f = nadir_frame(&pose, R).unwrap();
        assert!((f.r_nm - pose.r_cm).amax() < 1e-12);
        let n3 = f.r_nm.row(2).transpose();
        assert_relative_eq!(n3.dot(&f.origin), -f.origin.norm(), epsilon = 1e-9);
        let h = homography_chain(&pose, &camera(), &f, R).unwrap();
        assert!((h - Matrix3::identity()).amax() < 1e-9);
    }

    #[test]
    fn corners_round_trip_through_h_nc() {
        let pos = Vector3::new(R + 100.0, 0.0, 0.0);
        let target = TangentFrame {
            ref_lat_deg: 0.0,
            ref_lon_deg: 2.0,
            moon_radius_km: R,
        }
        .origin();
        let pose = Pose::look_at(pos, target, Vector3::z()).unwrap();
        let cam = camera();
        let f = nadir_frame(&pose, R).unwrap();
        let h = homography_chain(&pose, &cam, &f, R).unwrap();
        let h_inv = h.try_inverse().unwrap();
        for (u, v) in [(0.0, 0.0), (511.0, 0.0), (0.0, 511.0), (511.0, 511.0)] {
            let (x, y) = apply_homography(&h, u, v).unwrap();
            let (u2, v2) = apply_homography(&h_inv, x, y).unwrap();
            assert!((u - u2).abs() < 1e-9 && (v - v2).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_warp_is_bit_exact() {
        let img = RasterGrid::from_fn(7, 5, 1.0, |r, c| ((r * 31 + c * 17) % 13) as f64 * 0.1)
            .unwrap();
        let w = warp_image(&img, &Matrix3::identity(), 7, 5).unwrap();
        assert_eq!(w.image, img);
        assert!(w.valid.iter().all(|&v| v));
    }

    #[test]
    fn translation_warp_shifts_with_zero_border() {
        let img = RasterGrid::from_fn(6, 4, 1.0, |r, c| 1.0 + (r * 6 + c) as f64).unwrap();
        let mut h = Matrix3::identity();
        h[(0, 2)] = 2.0;
        let w = warp_image(&img, &h, 6, 4).unwrap();
        for r in 0..4 {
            for c in 0..6 {
                if c < 2 {
                    assert_eq!(w.image.get(r, c), 0.0);
                    assert!(!w.valid[r * 6 + c]);
                } else {
                    assert_eq!(w.image.get(r, c), img.get(r, c - 2));
                }
            }
        }
        let mut singular = Matrix3::zeros();
        singular[(2, 2)] = 1.0;
        assert!(warp_image(&img, &singular, 6, 4).is_err());
    }

    #[test]
    fn catalog_points() {
        let rec = |lat, lon, elev| CatalogRecord {
            id: "x".into(),
            lat,
            lon,
            radius: 1.0,
            eccentricity: 0.0,
            elevation: elev,
        };
        let c = catalog_to_3d(&[rec(0.0, 0.0, 0.0), rec(90.0, 10.0, 0.0), rec(12.3, -45.6, -2500.0)], R);
        assert!((c[0].center - Vector3::new(R, 0.0, 0.0)).norm() < 1e-9);
        assert!((c[1].center - Vector3::new(0.0, 0.0, R)).norm() < 1e-9);
        assert_relative_eq!(c[2].center.norm(), R - 2.5, epsilon = 1e-12);
    }

    #[test]
    fn nadir_crater_projects_to_circle() {
        let pose = nadir_pose(100.0);
        let cam = camera();
        let crater = CatalogCrater3D {
            id: "c".into(),
            center: Vector3::new(R, 0.0, 0.0),
            normal: Vector3::x(),
            radius: 3.0,
        };
        let p = project_crater(&crater, &pose, &cam).unwrap().unwrap();
        assert_relative_eq!(p.center_uv[0], cam.up, epsilon = 1e-9);
        assert_relative_eq!(p.center_uv[1], cam.vp, epsilon = 1e-9);
        assert_relative_eq!(p.semi_major, 3.0 * cam.dx / 100.0, epsilon = 1e-9);
        assert_relative_eq!(p.semi_minor, 3.0 * cam.dx / 100.0, epsilon = 1e-9);
    }

    #[test]
    fn size_filter_thresholds() {
        let mk = |a, b| ProjectedCrater {
            id: "c".into(),
            center_uv: [0.0, 0.0],
            semi_major: a,
            semi_minor: b,
            orientation: 0.0,
        };
        assert!(mk(10.0, 5.1).passes_size_filter());
        assert!(!mk(10.0, 5.0).passes_size_filter());
        assert!(!mk(105.0, 50.0).passes_size_filter());
        assert!(mk(104.9, 50.0).passes_size_filter());
    }

    #[test]
    fn tangent_frame_round_trip() {
        let f = TangentFrame {
            ref_lat_deg: 10.0,
            ref_lon_deg: 30.0,
            moon_radius_km: R,
        };
        let p = f.to_mcmf(12.0, -7.0, 0.0);
        let (lat, lon, elev) = TangentFrame::lat_lon_elevation(&p, R);
        let (e, n) = f.project_lat_lon(lat, lon).unwrap();
        assert_relative_eq!(e, 12.0, epsilon = 1e-9);
        assert_relative_eq!(n, -7.0, epsilon = 1e-9);
        let back = radial_unit(lat, lon) * (R + elev / 1000.0);
        assert!((back - p).norm() < 1e-9);
    }
}
