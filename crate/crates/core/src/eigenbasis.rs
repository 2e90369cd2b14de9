//! Principal component analysis of vectorized patches, k-means in the reduced
//! space and back-projection of cluster centroids into crater templates.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::ElevationPatch;
use crate::raster_io::{self, RasterGrid};

pub const DEFAULT_COMPONENTS: usize = 25;
pub const DEFAULT_ALBEDO_SCALE: f64 = 20.0;

/// How a patch maps to a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub patch_side: usize,
    /// `Some(scale)` when albedo is appended, multiplied by `scale`.
    pub albedo_scale: Option<f64>,
}

impl PatchLayout {
    pub fn elevation_only(patch_side: usize) -> Self {
        Self {
            patch_side,
            albedo_scale: None,
        }
    }

    pub fn with_albedo(patch_side: usize, albedo_scale: f64) -> Self {
        Self {
            patch_side,
            albedo_scale: Some(albedo_scale),
        }
    }

    pub fn dim(&self) -> usize {
        let n = self.patch_side * self.patch_side;
        if self.albedo_scale.is_some() {
            2 * n
        } else {
            n
        }
    }
}

/// Row-major elevation, followed by `albedo_scale *` row-major albedo when
/// requested.
pub fn vectorize(patch: &ElevationPatch, albedo_scale: Option<f64>) -> Result<Vec<f64>> {
    let mut v = patch.elevation.values().to_vec();
    if let Some(scale) = albedo_scale {
        let albedo = patch.albedo.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("patch {} has no albedo grid", patch.source_id))
        })?;
        v.extend(albedo.values().iter().map(|a| a * scale));
    }
    Ok(v)
}

/// PCA model: mean, orthonormal components (columns) and their variances.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub mean: DVector<f64>,
    /// D x K, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub layout: PatchLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub coords: Vec<f64>,
    pub source_id: String,
}

impl EigenBasis {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.ncols()
    }

    pub fn patch_side(&self) -> usize {
        self.layout.patch_side
    }

    pub fn has_albedo(&self) -> bool {
        self.layout.albedo_scale.is_some()
    }

    pub fn project(&self, vector: &[f64], source_id: &str) -> Result<Embedding> {
        if vector.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: vector.len(),
            });
        }
        let centered = DVector::from_column_slice(vector) - &self.mean;
        let z = self.components.tr_mul(&centered);
        Ok(Embedding {
            coords: z.iter().copied().collect(),
            source_id: source_id.to_string(),
        })
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        if coords.len() != self.k() {
            return Err(Error::DimensionMismatch {
                expected: self.k(),
                got: coords.len(),
            });
        }
        let z = DVector::from_column_slice(coords);
        Ok((&self.mean + &self.components * z).iter().copied().collect())
    }
}

/// Fits the top-`k` principal components from the SVD of the centered data
/// matrix; eigenvalues are `sigma^2 / (N - 1)`.
pub fn fit_pca(vectors: &[Vec<f64>], k: usize, layout: PatchLayout) -> Result<EigenBasis> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 samples, got {n}"
        )));
    }
    let d = layout.dim();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} outside [1, {}]",
            (n - 1).min(d)
        )));
    }
    let mut mean = DVector::zeros(d);
    for v in vectors {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut components = DMatrix::zeros(d, k);
    let mut eigenvalues = Vec::with_capacity(k);
    for (col, &idx) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = v_t.row(idx).transpose();
        // Largest-magnitude entry positive; first index wins ties.
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1.abs() {
                    (i, x)
                } else {
                    best
                }
            })
            .1;
        if pivot < 0.0 {
            v = -v;
        }
        components.set_column(col, &v);
        let s = svd.singular_values[idx];
        eigenvalues.push(s * s / (n - 1) as f64);
    }
    Ok(EigenBasis {
        mean,
        components,
        eigenvalues,
        layout,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after seeding and after every Lloyd iteration.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp_seed(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                if target < w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can exhaust the scan; fall back to the last weighted point
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("total > 0"))
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centroids.push(points[pick].to_vec());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[pick]));
        }
    }
    centroids
}

/// k-means++ seeded from `seed`, then Lloyd iterations until the assignment
/// is stable or `max_iter` is reached. Empty clusters are re-seeded from the
/// point farthest from its centroid.
pub fn kmeans(embeddings: &[Embedding], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult> {
    let n = embeddings.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in [1, {n}]"
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }
    let dim = embeddings[0].coords.len();
    if let Some(bad) = embeddings.iter().find(|e| e.coords.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.coords.len(),
        });
    }
    let points: Vec<&[f64]> = embeddings.iter().map(|e| e.coords.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_seed(&points, k, &mut rng);

    let assign = |centroids: &[Vec<f64>]| crate::par::map_slice(&points, |p| nearest(p, centroids));
    let mut nearest_now = assign(&centroids);
    let mut assignments: Vec<usize> = nearest_now.iter().map(|a| a.0).collect();
    let mut inertia_history = vec![nearest_now.iter().map(|a| a.1).sum::<f64>()];
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        // update step
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        // re-seed empty clusters from the worst-fit points
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let worst = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .map(|i| (i, sq_dist(points[i], &centroids[assignments[i]])))
                .fold(None::<(usize, f64)>, |best, cur| match best {
                    Some(b) if b.1 >= cur.1 => Some(b),
                    _ => Some(cur),
                });
            if let Some((i, d)) = worst {
                if d > 0.0 {
                    let old = assignments[i];
                    counts[old] -= 1;
                    counts[j] = 1;
                    assignments[i] = j;
                    centroids[j] = points[i].to_vec();
                    let members: Vec<usize> = (0..n).filter(|&m| assignments[m] == old).collect();
                    centroids[old] = (0..dim)
                        .map(|c| members.iter().map(|&m| points[m][c]).sum::<f64>() / members.len() as f64)
                        .collect();
                }
            }
        }
        // assignment step
        nearest_now = assign(&centroids);
        let next: Vec<usize> = nearest_now.iter().map(|a| a.0).collect();
        inertia_history.push(nearest_now.iter().map(|a| a.1).sum());
        let stable = next == assignments;
        assignments = next;
        if stable {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        inertia_history,
        iterations,
    })
}

/// Representative crater shape for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct CraterTemplate {
    /// Relative elevation in meters; `cell_size` is the mean physical sample
    /// spacing of the cluster members.
    pub elevation: RasterGrid,
    pub albedo: Option<RasterGrid>,
    pub cluster_id: usize,
    pub member_count: usize,
}

/// One template per non-empty cluster: the reconstructed centroid, split back
/// into elevation and (unscaled) albedo grids.
pub fn make_templates(
    basis: &EigenBasis,
    assignments: &[usize],
    centroids: &[Vec<f64>],
    member_cell_sizes: &[f64],
) -> Result<Vec<CraterTemplate>> {
    if member_cell_sizes.len() != assignments.len() {
        return Err(Error::DimensionMismatch {
            expected: assignments.len(),
            got: member_cell_sizes.len(),
        });
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= centroids.len()) {
        return Err(Error::InvalidArgument(format!(
            "assignment {bad} has no centroid"
        )));
    }
    let side = basis.patch_side();
    let np = side * side;
    let mut out = Vec::new();
    for (cluster_id, centroid) in centroids.iter().enumerate() {
        let members: Vec<usize> = (0..assignments.len())
            .filter(|&i| assignments[i] == cluster_id)
            .collect();
        if members.is_empty() {
            continue;
        }
        let cell = members.iter().map(|&i| member_cell_sizes[i]).sum::<f64>() / members.len() as f64;
        let x = basis.reconstruct(centroid)?;
        let elevation = RasterGrid::new(side, side, cell, x[..np].to_vec())?;
        let albedo = match basis.layout.albedo_scale {
            Some(scale) => Some(RasterGrid::new(
                side,
                side,
                cell,
                x[np..].iter().map(|a| a / scale).collect(),
            )?),
            None => None,
        };
        out.push(CraterTemplate {
            elevation,
            albedo,
            cluster_id,
            member_count: members.len(),
        });
    }
    Ok(out)
}

/// Everything needed to rebuild templates from a training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateParams {
    pub clusters: usize,
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub layout: PatchLayout,
}

impl Default for TemplateParams {
    fn default() -> Self {
        Self {
            clusters: 4,
            components: DEFAULT_COMPONENTS,
            seed: 0,
            max_iter: 300,
            layout: PatchLayout::elevation_only(crate::patch::DEFAULT_PATCH_SIDE),
        }
    }
}

/// Vectorize, fit, project, cluster and back-project.
pub fn templates_from_patches(
    patches: &[ElevationPatch],
    params: &TemplateParams,
) -> Result<(EigenBasis, Vec<CraterTemplate>, KMeansResult)> {
    let vectors = patches
        .iter()
        .map(|p| vectorize(p, params.layout.albedo_scale))
        .collect::<Result<Vec<_>>>()?;
    let k = params.components.min(vectors.len().saturating_sub(1)).min(params.layout.dim());
    let basis = fit_pca(&vectors, k, params.layout)?;
    let embeddings = patches
        .iter()
        .zip(&vectors)
        .map(|(p, v)| basis.project(v, &p.source_id))
        .collect::<Result<Vec<_>>>()?;
    let km = kmeans(&embeddings, params.clusters, params.seed, params.max_iter)?;
    let cells: Vec<f64> = patches.iter().map(|p| p.elevation.cell_size()).collect();
    let templates = make_templates(&basis, &km.assignments, &km.centroids, &cells)?;
    Ok((basis, templates, km))
}

pub const TEMPLATE_SET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub cluster_id: usize,
    pub member_count: usize,
    pub cell_size_m: f64,
    pub elevation_file: String,
    pub albedo_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSetManifest {
    pub version: u32,
    pub params: TemplateParams,
    pub eigenvalues: Vec<f64>,
    pub mean_file: String,
    pub components_file: String,
    pub templates: Vec<TemplateEntry>,
}

/// Writes `manifest.json`, the basis payloads and one raster per template.
pub fn write_template_set(
    dir: impl AsRef<Path>,
    params: &TemplateParams,
    basis: &EigenBasis,
    templates: &[CraterTemplate],
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = basis.dim();
    raster_io::write_raster(
        &RasterGrid::new(d, 1, 1.0, basis.mean.iter().copied().collect())?,
        dir.join("basis_mean.egr"),
    )?;
    let k = basis.k();
    raster_io::write_raster(
        &RasterGrid::from_fn(k, d, 1.0, |r, c| basis.components[(r, c)])?,
        dir.join("basis_components.egr"),
    )?;
    let mut entries = Vec::new();
    for t in templates {
        let elevation_file = format!("template_{:02}_elev.egr", t.cluster_id);
        raster_io::write_raster(&t.elevation, dir.join(&elevation_file))?;
        let albedo_file = match &t.albedo {
            Some(a) => {
                let f = format!("template_{:02}_albedo.egr", t.cluster_id);
                raster_io::write_raster(a, dir.join(&f))?;
                Some(f)
            }
            None => None,
        };
        entries.push(TemplateEntry {
            cluster_id: t.cluster_id,
            member_count: t.member_count,
            cell_size_m: t.elevation.cell_size(),
            elevation_file,
            albedo_file,
        });
    }
    raster_io::write_json(
        &TemplateSetManifest {
            version: TEMPLATE_SET_VERSION,
            params: *params,
            eigenvalues: basis.eigenvalues.clone(),
            mean_file: "basis_mean.egr".into(),
            components_file: "basis_components.egr".into(),
            templates: entries,
        },
        dir.join("manifest.json"),
    )
}

pub fn read_template_set(dir: impl AsRef<Path>) -> Result<(TemplateSetManifest, Vec<CraterTemplate>)> {
    let dir = dir.as_ref();
    let manifest: TemplateSetManifest = raster_io::read_json(dir.join("manifest.json"))?;
    if manifest.version != TEMPLATE_SET_VERSION {
        return Err(Error::InvalidArgument(format!(
            "unsupported template set version {}",
            manifest.version
        )));
    }
    let mut templates = Vec::new();
    for e in &manifest.templates {
        let elevation = raster_io::read_raster(dir.join(&e.elevation_file))?;
        let albedo = match &e.albedo_file {
            Some(f) => Some(raster_io::read_raster(dir.join(f))?),
            None => None,
        };
        if e.member_count == 0 {
            return Err(Error::InvalidArgument("template with no members".into()));
        }
        templates.push(CraterTemplate {
            elevation,
            albedo,
            cluster_id: e.cluster_id,
            member_count: e.member_count,
        });
    }
    Ok((manifest, templates))
}

pub fn read_basis(dir: impl AsRef<Path>, manifest: &TemplateSetManifest) -> Result<EigenBasis> {
    let dir = dir.as_ref();
    let mean = raster_io::read_raster(dir.join(&manifest.mean_file))?;
    let comps = raster_io::read_raster(dir.join(&manifest.components_file))?;
    Ok(EigenBasis {
        mean: DVector::from_column_slice(mean.values()),
        components: DMatrix::from_row_slice(comps.height(), comps.width(), comps.values()),
        eigenvalues: manifest.eigenvalues.clone(),
        layout: manifest.params.layout,
    })
}
