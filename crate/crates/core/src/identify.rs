//! Crater identification by triad angle descriptors and position estimation
//! by verified line-of-sight triangulation.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pixel_ray, project_point, CameraModel, CatalogCrater3D, Pose, ProjectedCrater};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifyConfig {
    pub pose_noise_pos_sigma: f64,
    pub pose_noise_att_sigma_deg: f64,
    pub proximity_px: f64,
    pub max_catalog_triads: usize,
    pub knn_ratio: f64,
    pub reproj_inlier_px: f64,
    pub ransac_iters: usize,
    /// Inliers required beyond the three triad members.
    pub min_inliers: usize,
    pub rng_seed: u64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        Self {
            pose_noise_pos_sigma: 1.0,
            pose_noise_att_sigma_deg: 0.01,
            proximity_px: 60.0,
            max_catalog_triads: 8000,
            knn_ratio: 0.4,
            reproj_inlier_px: 3.0,
            ransac_iters: 1000,
            min_inliers: 4,
            rng_seed: 0,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("proximity_px", self.proximity_px),
            ("knn_ratio", self.knn_ratio),
            ("reproj_inlier_px", self.reproj_inlier_px),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.pose_noise_pos_sigma < 0.0 || self.pose_noise_att_sigma_deg < 0.0 {
            return Err(Error::InvalidArgument("noise sigmas must be nonnegative".into()));
        }
        if self.max_catalog_triads == 0 || self.ransac_iters == 0 {
            return Err(Error::InvalidArgument("triad and iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian position noise per axis and a rotation about a uniformly random
/// axis by a Gaussian angle.
pub fn perturb_pose(pose: &Pose, pos_sigma: f64, att_sigma_deg: f64, rng: &mut impl Rng) -> Result<Pose> {
    let pos_noise = Normal::new(0.0, pos_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let att_noise = Normal::new(0.0, att_sigma_deg.to_radians()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let position = pose.position + Vector3::from_fn(|_, _| pos_noise.sample(rng));
    let axis = loop {
        let v = Vector3::<f64>::from_fn(|_, _| StandardNormal.sample(rng));
        if let Some(u) = Unit::try_new(v, 1e-12) {
            break u;
        }
    };
    let angle = att_noise.sample(rng);
    let r_cm = Rotation3::from_axis_angle(&axis, angle).into_inner() * pose.r_cm;
    Pose::new(r_cm, position)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriadDescriptor {
    /// Interior angles in degrees, largest first, counter-clockwise on screen.
    pub angles: [f64; 3],
    /// Caller-supplied indices in the same order as `angles`.
    pub members: [usize; 3],
}

impl TriadDescriptor {
    pub fn distance(&self, other: &TriadDescriptor) -> f64 {
        self.angles
            .iter()
            .zip(&other.angles)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

const ANGLE_TIE_DEG: f64 = 1e-9;

/// Triangle angle descriptor of three image points (y down).
pub fn triad_descriptor(points: [[f64; 2]; 3], ids: [usize; 3]) -> Result<TriadDescriptor> {
    let p = points.map(|q| nalgebra::Vector2::new(q[0], q[1]));
    let cross = (p[1] - p[0]).perp(&(p[2] - p[0]));
    let scale = (p[1] - p[0]).norm_squared().max((p[2] - p[0]).norm_squared());
    if !(cross.abs() > 1e-9 * scale) {
        return Err(Error::Degenerate("collinear triad".into()));
    }
    // negative cross product is counter-clockwise when y points down
    let order = if cross < 0.0 { [0, 1, 2] } else { [0, 2, 1] };
    let angle = |i: usize| {
        let a = p[(i + 1) % 3] - p[i];
        let b = p[(i + 2) % 3] - p[i];
        a.perp(&b).abs().atan2(a.dot(&b)).to_degrees()
    };
    let raw = [angle(order[0]), angle(order[1]), angle(order[2])];
    let seq = |s: usize| [raw[s], raw[(s + 1) % 3], raw[(s + 2) % 3]];
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    let mut start = None::<usize>;
    for s in 0..3 {
        if raw[s] < max - ANGLE_TIE_DEG {
            continue;
        }
        start = match start {
            Some(b) if seq(b) >= seq(s) => Some(b),
            _ => Some(s),
        };
    }
    let s = start.expect("some angle is maximal");
    Ok(TriadDescriptor {
        angles: seq(s),
        members: [ids[order[s]], ids[order[(s + 1) % 3]], ids[order[(s + 2) % 3]]],
    })
}

fn choose3(n: usize) -> usize {
    if n < 3 {
        0
    } else {
        n * (n - 1) * (n - 2) / 6
    }
}

/// Lexicographic combination with the given rank.
fn unrank_triple(mut rank: usize, n: usize) -> [usize; 3] {
    let mut out = [0; 3];
    let mut start = 0;
    for (slot, remaining) in [(0, 2usize), (1, 1), (2, 0)] {
        let mut i = start;
        loop {
            let count = binom(n - i - 1, remaining);
            if rank < count {
                break;
            }
            rank -= count;
            i += 1;
        }
        out[slot] = i;
        start = i + 1;
    }
    out
}

fn binom(n: usize, k: usize) -> usize {
    match k {
        0 => 1,
        1 => n,
        2 => n * n.saturating_sub(1) / 2,
        _ => unreachable!("only small k used"),
    }
}

/// Descriptors of every non-collinear triple of `points`, `members` indexing
/// into `points`.
pub fn all_triads(points: &[[f64; 2]]) -> Vec<TriadDescriptor> {
    let n = points.len();
    let mut out = Vec::with_capacity(choose3(n));
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if let Ok(d) = triad_descriptor([points[i], points[j], points[k]], [i, j, k]) {
                    out.push(d);
                }
            }
        }
    }
    out
}

/// Indices of catalog craters within `proximity_px` of any detection.
pub fn proximity_filter(projected: &[ProjectedCrater], detections: &[[f64; 2]], proximity_px: f64) -> Vec<usize> {
    let r2 = proximity_px * proximity_px;
    (0..projected.len())
        .filter(|&i| {
            let c = projected[i].center_uv;
            detections
                .iter()
                .any(|d| (d[0] - c[0]).powi(2) + (d[1] - c[1]).powi(2) <= r2)
        })
        .collect()
}

/// Triads over proximity-filtered catalog craters, uniformly subsampled to at
/// most `max_catalog_triads`. Members index into `projected`.
pub fn build_catalog_triads(
    projected: &[ProjectedCrater],
    detections: &[[f64; 2]],
    cfg: &IdentifyConfig,
    rng: &mut impl Rng,
) -> Vec<TriadDescriptor> {
    let keep = proximity_filter(projected, detections, cfg.proximity_px);
    let n = keep.len();
    let total = choose3(n);
    let ranks: Vec<usize> = if total > cfg.max_catalog_triads {
        let mut r = rand::seq::index::sample(rng, total, cfg.max_catalog_triads).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..total).collect()
    };
    ranks
        .into_iter()
        .filter_map(|rank| {
            let [a, b, c] = unrank_triple(rank, n).map(|i| keep[i]);
            triad_descriptor(
                [projected[a].center_uv, projected[b].center_uv, projected[c].center_uv],
                [a, b, c],
            )
            .ok()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorMatch {
    pub query: usize,
    pub reference: usize,
    pub distance: f64,
}

/// Two nearest references per query with the ratio test `d1 / d2 < ratio`,
/// sorted by ascending `d1` (then query index).
pub fn match_descriptors(
    query: &[TriadDescriptor],
    reference: &[TriadDescriptor],
    ratio: f64,
) -> Vec<DescriptorMatch> {
    if reference.len() < 2 {
        return Vec::new();
    }
    let found = crate::par::map_range(query.len(), |qi| {
        let q = &query[qi];
        let (mut b1, mut b2) = ((usize::MAX, f64::INFINITY), f64::INFINITY);
        for (ri, r) in reference.iter().enumerate() {
            let d = q.distance(r);
            if d < b1.1 {
                b2 = b1.1;
                b1 = (ri, d);
            } else if d < b2 {
                b2 = d;
            }
        }
        (b2 > 0.0 && b1.1 / b2 < ratio).then_some(DescriptorMatch {
            query: qi,
            reference: b1.0,
            distance: b1.1,
        })
    });
    let mut out: Vec<DescriptorMatch> = found.into_iter().flatten().collect();
    out.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.query.cmp(&b.query))
    });
    out
}

fn solve_weighted(rays: &[Vector3<f64>], points: &[Vector3<f64>], weights: &[f64], origin: &Vector3<f64>) -> Result<Vector3<f64>> {
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for ((u, p), w) in rays.iter().zip(points).zip(weights) {
        let proj = Matrix3::identity() - u * u.transpose();
        a += *w * proj;
        b += *w * (proj * (p - origin));
    }
    let eig = nalgebra::SymmetricEigen::new(a);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-14 * max) {
        return Err(Error::Degenerate("lines of sight are parallel".into()));
    }
    let x = a
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal matrix not positive definite".into()))?
        .solve(&b);
    Ok(origin + x)
}

/// Camera position from pixel/landmark correspondences with known attitude:
/// an unweighted least-squares pass followed by inverse-range-squared
/// weights.
pub fn triangulate_lost(
    correspondences: &[([f64; 2], Vector3<f64>)],
    r_cm: &Matrix3<f64>,
    cam: &CameraModel,
) -> Result<Vector3<f64>> {
    if correspondences.len() < 2 {
        return Err(Error::InvalidArgument("triangulation needs at least 2 correspondences".into()));
    }
    let pose = Pose {
        r_cm: *r_cm,
        position: Vector3::zeros(),
    };
    let rays: Vec<Vector3<f64>> = correspondences
        .iter()
        .map(|(uv, _)| pixel_ray(&pose, cam, uv[0], uv[1]))
        .collect();
    let points: Vec<Vector3<f64>> = correspondences.iter().map(|c| c.1).collect();
    let origin = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let first = solve_weighted(&rays, &points, &vec![1.0; points.len()], &origin)?;
    let mut weights = Vec::with_capacity(points.len());
    for (u, p) in rays.iter().zip(&points) {
        let along = (p - first).dot(u);
        if along <= 0.0 {
            return Err(Error::Degenerate("landmark behind the camera".into()));
        }
        weights.push(1.0 / (p - first).norm_squared());
    }
    solve_weighted(&rays, &points, &weights, &origin)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub detection: usize,
    pub catalog_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub r_cm_est: Option<[f64; 3]>,
    /// Triad members followed by external inliers.
    pub inliers: Vec<Correspondence>,
    pub external_inliers: usize,
    pub iterations_used: usize,
    pub success: bool,
}

impl PositionEstimate {
    fn failure(iterations_used: usize) -> Self {
        Self {
            r_cm_est: None,
            inliers: Vec::new(),
            external_inliers: 0,
            iterations_used,
            success: false,
        }
    }
}

/// Greedy one-to-one pairs `(a, b, distance)` with distance `<= max_dist`,
/// visited in ascending distance (ties by indices).
pub fn greedy_pairs(a: &[[f64; 2]], b: &[[f64; 2]], max_dist: f64) -> Vec<(usize, usize, f64)> {
    let mut all = Vec::new();
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d <= max_dist {
                all.push((i, j, d));
            }
        }
    }
    all.sort_by(|x, y| {
        x.2.partial_cmp(&y.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.0.cmp(&y.0))
            .then(x.1.cmp(&y.1))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (i, j, d) in all {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j, d));
        }
    }
    out
}

struct Hypothesis {
    pairs: Vec<(usize, usize)>,
    external: usize,
}

fn evaluate_hypothesis(
    det_triad: &TriadDescriptor,
    cat_triad: &TriadDescriptor,
    detections: &[[f64; 2]],
    craters: &[CatalogCrater3D],
    nearby: &[usize],
    pose_noisy: &Pose,
    cam: &CameraModel,
    inlier_px: f64,
) -> Option<Hypothesis> {
    let corr: Vec<([f64; 2], Vector3<f64>)> = (0..3)
        .map(|k| (detections[det_triad.members[k]], craters[cat_triad.members[k]].center))
        .collect();
    let position = triangulate_lost(&corr, &pose_noisy.r_cm, cam).ok()?;
    let pose = Pose {
        r_cm: pose_noisy.r_cm,
        position,
    };
    let free_dets: Vec<usize> = (0..detections.len())
        .filter(|i| !det_triad.members.contains(i))
        .collect();
    let mut free_cats = Vec::new();
    let mut reproj = Vec::new();
    for &c in nearby {
        if cat_triad.members.contains(&c) {
            continue;
        }
        if let Some(uv) = project_point(&pose, cam, &craters[c].center) {
            free_cats.push(c);
            reproj.push(uv);
        }
    }
    let det_pts: Vec<[f64; 2]> = free_dets.iter().map(|&i| detections[i]).collect();
    let mut pairs: Vec<(usize, usize)> = (0..3).map(|k| (det_triad.members[k], cat_triad.members[k])).collect();
    let external = greedy_pairs(&det_pts, &reproj, inlier_px);
    pairs.extend(external.iter().map(|&(i, j, _)| (free_dets[i], free_cats[j])));
    Some(Hypothesis {
        pairs,
        external: external.len(),
    })
}

/// Best-first verification of putative triad matches.
///
/// `projected[i]` and `craters[i]` describe the same catalog crater;
/// projections come from `pose_noisy`.
pub fn ransac_localize(
    detections: &[[f64; 2]],
    projected: &[ProjectedCrater],
    craters: &[CatalogCrater3D],
    pose_noisy: &Pose,
    cam: &CameraModel,
    cfg: &IdentifyConfig,
    rng: &mut impl Rng,
) -> Result<PositionEstimate> {
    cfg.validate()?;
    if projected.len() != craters.len() {
        return Err(Error::DimensionMismatch {
            expected: projected.len(),
            got: craters.len(),
        });
    }
    if detections.len() < 3 || projected.len() < 3 {
        return Ok(PositionEstimate::failure(0));
    }
    let det_triads = all_triads(detections);
    let cat_triads = build_catalog_triads(projected, detections, cfg, rng);
    let matches = match_descriptors(&det_triads, &cat_triads, cfg.knn_ratio);
    if matches.is_empty() {
        return Ok(PositionEstimate::failure(0));
    }
    let nearby = proximity_filter(projected, detections, cfg.proximity_px);
    let tried = &matches[..matches.len().min(cfg.ransac_iters)];
    let hypotheses = crate::par::map_slice(tried, |m| {
        evaluate_hypothesis(
            &det_triads[m.query],
            &cat_triads[m.reference],
            detections,
            craters,
            &nearby,
            pose_noisy,
            cam,
            cfg.reproj_inlier_px,
        )
    });
    let mut best: Option<&Hypothesis> = None;
    for h in hypotheses.iter().flatten() {
        if best.is_none_or(|b| h.external > b.external) {
            best = Some(h);
        }
    }
    let Some(best) = best else {
        return Ok(PositionEstimate::failure(tried.len()));
    };
    let corr: Vec<([f64; 2], Vector3<f64>)> = best
        .pairs
        .iter()
        .map(|&(d, c)| (detections[d], craters[c].center))
        .collect();
    let position = triangulate_lost(&corr, &pose_noisy.r_cm, cam)?;
    Ok(PositionEstimate {
        r_cm_est: Some([position.x, position.y, position.z]),
        inliers: best
            .pairs
            .iter()
            .map(|&(d, c)| Correspondence {
                detection: d,
                catalog_id: craters[c].id.clone(),
            })
            .collect(),
        external_inliers: best.external,
        iterations_used: tried.len(),
        success: best.external >= cfg.min_inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const R: f64 = 1737.4;

    fn desc(p: [[f64; 2]; 3]) -> TriadDescriptor {
        triad_descriptor(p, [0, 1, 2]).unwrap()
    }

    #[test]
    fn canonical_triangles() {
        let h = 3f64.sqrt() / 2.0;
        let eq = desc([[0.0, 0.0], [1.0, 0.0], [0.5, h]]);
        for a in eq.angles {
            assert!((a - 60.0).abs() < 1e-9);
        }
        let ri = desc([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]);
        assert!((ri.angles[0] - 90.0).abs() < 1e-12);
        assert!((ri.angles[1] - 45.0).abs() < 1e-12 && (ri.angles[2] - 45.0).abs() < 1e-12);
        assert_eq!(ri.members[0], 0);
        assert!(triad_descriptor([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]], [0, 1, 2]).is_err());
    }

    #[test]
    fn members_run_counter_clockwise_on_screen() {
        let p = [[0.0, 0.0], [4.0, 0.0], [1.0, 3.0]];
        let d = desc(p);
        let q = d.members.map(|i| nalgebra::Vector2::new(p[i][0], p[i][1]));
        // y down: screen-ccw has negative standard cross product
        assert!((q[1] - q[0]).perp(&(q[2] - q[0])) < 0.0);
        let sum: f64 = d.angles.iter().sum();
        assert!((sum - 180.0).abs() < 1e-9);
        assert!(d.angles[0] >= d.angles[1] && d.angles[0] >= d.angles[2]);
    }

    #[test]
    fn descriptor_similarity_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.random_range(0.0..500.0), rng.random_range(0.0..500.0)]);
            let Ok(d) = triad_descriptor(p, [0, 1, 2]) else { continue };
            let th: f64 = rng.random_range(0.0..6.28);
            let s: f64 = rng.random_range(0.2..5.0);
            let t = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
            let q = p.map(|x| {
                [
                    s * (th.cos() * x[0] - th.sin() * x[1]) + t[0],
                    s * (th.sin() * x[0] + th.cos() * x[1]) + t[1],
                ]
            });
            let d2 = triad_descriptor(q, [0, 1, 2]).unwrap();
            let d3 = triad_descriptor([p[2], p[0], p[1]], [2, 0, 1]).unwrap();
            let d4 = triad_descriptor([p[1], p[0], p[2]], [1, 0, 2]).unwrap();
            for k in 0..3 {
                assert!((d.angles[k] - d2.angles[k]).abs() < 1e-9);
                assert_eq!(d.angles[k], d3.angles[k]);
            }
            assert_eq!(d.members, d2.members);
            assert_eq!(d.members, d3.members);
            assert_eq!(d.members, d4.members);
        }
    }

    #[test]
    fn unranking_matches_enumeration() {
        let n = 9;
        let mut rank = 0;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    assert_eq!(unrank_triple(rank, n), [i, j, k]);
                    rank += 1;
                }
            }
        }
        assert_eq!(rank, choose3(n));
    }

    fn crater_at(u: f64, v: f64) -> ProjectedCrater {
        ProjectedCrater {
            id: format!("{u}-{v}"),
            center_uv: [u, v],
            semi_major: 10.0,
            semi_minor: 10.0,
            orientation: 0.0,
        }
    }

    #[test]
    fn catalog_triad_counts_and_proximity() {
        let cfg = IdentifyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let three = [crater_at(0.0, 0.0), crater_at(30.0, 0.0), crater_at(0.0, 40.0)];
        assert_eq!(build_catalog_triads(&three, &[[0.0, 0.0]], &cfg, &mut rng).len(), 1);
        let far = [crater_at(0.0, 0.0), crater_at(30.0, 0.0), crater_at(61.0, 200.0), crater_at(0.0, 40.0)];
        let dets = [[0.0, 0.0], [61.0, 261.0], [122.0, 200.0], [61.0, 139.0]];
        let t = build_catalog_triads(&far, &dets, &cfg, &mut rng);
        assert_eq!(t.len(), 1);
        assert!(!t[0].members.contains(&2));
        let many: Vec<ProjectedCrater> = (0..50)
            .map(|i| crater_at(rng.random_range(0.0..100.0) + i as f64 * 0.01, rng.random_range(0.0..100.0)))
            .collect();
        let t = build_catalog_triads(&many, &[[50.0, 50.0]], &cfg, &mut rng);
        assert_eq!(t.len(), 8000);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            build_catalog_triads(&many, &[[50.0, 50.0]], &cfg, &mut a),
            build_catalog_triads(&many, &[[50.0, 50.0]], &cfg, &mut b)
        );
        assert!(build_catalog_triads(&many[..2], &[[50.0, 50.0]], &cfg, &mut a).is_empty());
    }

    fn tri(a: f64, b: f64) -> TriadDescriptor {
        TriadDescriptor {
            angles: [a, b, 180.0 - a - b],
            members: [0, 1, 2],
        }
    }

    #[test]
    fn ratio_test_cases() {
        let q = [tri(80.0, 60.0)];
        let m = match_descriptors(&q, &[tri(100.0, 50.0), tri(80.0, 60.0)], 0.4);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].reference, m[0].distance), (1, 0.0));
        let m = match_descriptors(&q, &[tri(81.0, 60.0), tri(79.0, 60.0)], 0.4);
        assert!(m.is_empty());
        assert!(match_descriptors(&q, &[tri(80.0, 60.0)], 0.4).is_empty());
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gen = |n: usize| -> Vec<TriadDescriptor> {
            (0..n)
                .map(|_| {
                    let a = rng.random_range(60.0..170.0);
                    let b = rng.random_range(0.5..(180.0 - a) - 0.5);
                    tri(a, b)
                })
                .collect()
        };
        let q = gen(500);
        let r = gen(500);
        let got = match_descriptors(&q, &r, 0.4);
        let mut oracle = Vec::new();
        for (qi, d) in q.iter().enumerate() {
            let mut dists: Vec<(f64, usize)> = r.iter().enumerate().map(|(ri, x)| (d.distance(x), ri)).collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if dists[1].0 > 0.0 && dists[0].0 / dists[1].0 < 0.4 {
                oracle.push(DescriptorMatch {
                    query: qi,
                    reference: dists[0].1,
                    distance: dists[0].0,
                });
            }
        }
        oracle.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap().then(a.query.cmp(&b.query)));
        assert_eq!(got, oracle);
    }

    fn scene(seed: u64, n: usize) -> (Pose, CameraModel, Vec<([f64; 2], Vector3<f64>)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = CameraModel::from_fov(512, 512, 30.0).unwrap();
        let dir = crate::geometry::radial_unit(rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0));
        let pos = dir * (R + 100.0);
        let target = dir * R + Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let pose = Pose::look_at(pos, target, Vector3::z()).unwrap();
        let mut corr = Vec::new();
        while corr.len() < n {
            let u = rng.random_range(20.0..492.0);
            let v = rng.random_range(20.0..492.0);
            let ray = pixel_ray(&pose, &cam, u, v);
            let range = rng.random_range(95.0..110.0);
            let p = pos + ray * range;
            corr.push(([u, v], p));
        }
        (pose, cam, corr)
    }

    #[test]
    fn noiseless_triangulation_is_exact() {
        for seed in 0..50 {
            let (pose, cam, corr) = scene(seed, 3 + (seed as usize % 8));
            let est = triangulate_lost(&corr, &pose.r_cm, &cam).unwrap();
            assert!((est - pose.position).norm() <= 1e-9, "seed {seed}: {}", (est - pose.position).norm());
        }
    }

    #[test]
    fn two_orthogonal_rays() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 50.0, 101, 101).unwrap();
        let pose = Pose::new(Matrix3::identity(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        // pixel (150, 50) looks along (1,0,1)/sqrt2; pixel (50, 150) along (0,1,1)/sqrt2
        let corr = [
            ([150.0, 50.0], Vector3::new(1.0 + 7.0, 2.0, 3.0 + 7.0)),
            ([50.0, 150.0], Vector3::new(1.0, 2.0 + 4.0, 3.0 + 4.0)),
        ];
        let est = triangulate_lost(&corr, &pose.r_cm, &cam).unwrap();
        assert!((est - pose.position).norm() < 1e-12);
        let behind = [
            ([150.0, 50.0], Vector3::new(1.0 - 7.0, 2.0, 3.0 - 7.0)),
            ([50.0, 150.0], Vector3::new(1.0, 2.0 - 4.0, 3.0 - 4.0)),
        ];
        assert!(triangulate_lost(&behind, &pose.r_cm, &cam).is_err());
        let parallel = [([50.0, 50.0], Vector3::new(1.0, 2.0, 10.0)), ([50.0, 50.0], Vector3::new(1.0, 2.0, 20.0))];
        assert!(triangulate_lost(&parallel, &pose.r_cm, &cam).is_err());
        assert!(triangulate_lost(&corr[..1], &pose.r_cm, &cam).is_err());
    }

    #[test]
    fn perturbation_statistics() {
        let pose = Pose::look_at(Vector3::new(R + 100.0, 0.0, 0.0), Vector3::zeros(), Vector3::z()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(perturb_pose(&pose, 0.0, 0.0, &mut rng).unwrap(), pose);
        let n = 10_000;
        let mut sums = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let p = perturb_pose(&pose, 1.0, 0.01, &mut rng).unwrap();
            let d = p.position - pose.position;
            for k in 0..3 {
                sums[k] += d[k];
                sq[k] += d[k] * d[k];
            }
            assert!((p.r_cm.transpose() * p.r_cm - Matrix3::identity()).amax() < 1e-9);
        }
        for k in 0..3 {
            let mean = sums[k] / n as f64;
            let sd = (sq[k] / n as f64 - mean * mean).sqrt();
            assert!((0.97..=1.03).contains(&sd), "axis {k}: {sd}");
        }
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(perturb_pose(&pose, 1.0, 0.01, &mut a).unwrap(), perturb_pose(&pose, 1.0, 0.01, &mut b).unwrap());
    }

    #[test]
    fn greedy_pairs_are_one_to_one() {
        let a = [[0.0, 0.0], [1.0, 0.0]];
        let b = [[0.5, 0.0], [10.0, 0.0]];
        let p = greedy_pairs(&a, &b, 3.0);
        assert_eq!(p.len(), 1);
        assert_eq!((p[0].0, p[0].1), (0, 0));
    }

    fn landmark_scene(seed: u64) -> (Pose, CameraModel, Vec<ProjectedCrater>, Vec<CatalogCrater3D>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = CameraModel::from_fov(512, 512, 30.0).unwrap();
        let dir = crate::geometry::radial_unit(10.0, 20.0);
        let pose = Pose::look_at(dir * (R + 100.0), dir * R, Vector3::z()).unwrap();
        let mut projected = Vec::new();
        let mut craters = Vec::new();
        while projected.len() < 15 {
            let u = rng.random_range(10.0..502.0);
            let v = rng.random_range(10.0..502.0);
            let ray = pixel_ray(&pose, &cam, u, v);
            let b = pose.position.dot(&ray);
            let c = pose.position.norm_squared() - R * R;
            let t = -b - (b * b - c).sqrt();
            let p = pose.position + ray * t;
            let id = format!("c{}", projected.len());
            projected.push(ProjectedCrater {
                id: id.clone(),
                center_uv: [u, v],
                semi_major: 10.0,
                semi_minor: 10.0,
                orientation: 0.0,
            });
            craters.push(CatalogCrater3D {
                id,
                center: p,
                normal: p.normalize(),
                radius: 2.0,
            });
        }
        (pose, cam, projected, craters)
    }

    #[test]
    fn ransac_recovers_exact_scene() {
        let (pose, cam, projected, craters) = landmark_scene(6);
        let dets: Vec<[f64; 2]> = projected.iter().map(|p| p.center_uv).collect();
        let cfg = IdentifyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = ransac_localize(&dets, &projected, &craters, &pose, &cam, &cfg, &mut rng).unwrap();
        assert!(est.success);
        let r = Vector3::from(est.r_cm_est.unwrap());
        assert!((r - pose.position).norm() <= 1e-6);
        assert_eq!(est.external_inliers, 12);
    }

    #[test]
    fn ransac_fails_on_spurious_detections() {
        let (pose, cam, projected, craters) = landmark_scene(7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dets: Vec<[f64; 2]> = (0..15)
            .map(|_| [rng.random_range(0.0..512.0), rng.random_range(0.0..512.0)])
            .collect();
        let est = ransac_localize(&dets, &projected, &craters, &pose, &cam, &IdentifyConfig::default(), &mut rng).unwrap();
        assert!(!est.success);
    }
}
