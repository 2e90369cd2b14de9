//! Normalized cross-correlation over an image pyramid with peak picking,
//! circular non-maximum suppression and quadratic subpixel refinement.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io::RasterGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub ncc_threshold: f64,
    pub nms_overlap: f64,
    pub top_k: usize,
    /// Octaves below full resolution; level `l` has scale `2^-l`.
    pub pyramid_levels: Vec<u32>,
    pub subpixel_window: usize,
    /// Windows with more invalid pixels than this fraction score 0.
    pub max_invalid_fraction: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            ncc_threshold: 0.7,
            nms_overlap: 0.4,
            top_k: 30,
            pyramid_levels: vec![0, 1, 2],
            subpixel_window: 5,
            max_invalid_fraction: 0.25,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.ncc_threshold) {
            return Err(Error::InvalidArgument(format!("ncc threshold {} outside [-1, 1]", self.ncc_threshold)));
        }
        if !(0.0..=1.0).contains(&self.nms_overlap) {
            return Err(Error::InvalidArgument(format!("nms overlap {} outside [0, 1]", self.nms_overlap)));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        if self.subpixel_window < 3 || self.subpixel_window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "subpixel window {} must be odd and at least 3",
                self.subpixel_window
            )));
        }
        if self.pyramid_levels.is_empty() || self.pyramid_levels.iter().any(|&l| l > 16) {
            return Err(Error::InvalidArgument("pyramid levels must be in 0..=16".into()));
        }
        if !(0.0..1.0).contains(&self.max_invalid_fraction) {
            return Err(Error::InvalidArgument("max invalid fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Column, full-resolution pixels.
    pub u: f64,
    /// Row, full-resolution pixels.
    pub v: f64,
    pub score: f64,
    pub scale: f64,
    pub template_id: usize,
    pub radius_px: f64,
}

/// Template ready for matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTemplate {
    pub template_id: usize,
    pub pixels: RasterGrid,
}

struct CenteredTemplate {
    w: usize,
    h: usize,
    values: Vec<f64>,
    norm: f64,
}

fn center_template(template: &RasterGrid) -> Result<CenteredTemplate> {
    let mean = template.mean();
    let values: Vec<f64> = template.values().iter().map(|t| t - mean).collect();
    let norm = values.iter().map(|t| t * t).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Degenerate("template has zero variance".into()));
    }
    Ok(CenteredTemplate {
        w: template.width(),
        h: template.height(),
        values,
        norm,
    })
}

fn check_fits(image: &RasterGrid, tw: usize, th: usize) -> Result<()> {
    if tw > image.width() || th > image.height() {
        return Err(Error::InvalidArgument(format!(
            "template {tw}x{th} larger than image {}x{}",
            image.width(),
            image.height()
        )));
    }
    Ok(())
}

fn ncc_at(image: &RasterGrid, t: &CenteredTemplate, row: usize, col: usize) -> f64 {
    let n = (t.w * t.h) as f64;
    // shifting by the first window pixel keeps constant windows exactly zero
    let shift = image.get(row, col);
    let (mut s, mut s2, mut st) = (0.0, 0.0, 0.0);
    for r in 0..t.h {
        let img = &image.row(row + r)[col..col + t.w];
        let tr = &t.values[r * t.w..(r + 1) * t.w];
        for (x, y) in img.iter().zip(tr) {
            let x = x - shift;
            s += x;
            s2 += x * x;
            st += x * y;
        }
    }
    let var = s2 - s * s / n;
    if var <= 1e-24 * s2.max(f64::MIN_POSITIVE) || var <= 0.0 {
        return 0.0;
    }
    (st / (var.sqrt() * t.norm)).clamp(-1.0, 1.0)
}

/// Valid-mode NCC; output is `(H - h + 1) x (W - w + 1)` and constant windows
/// score 0.
pub fn ncc_map(image: &RasterGrid, template: &RasterGrid) -> Result<RasterGrid> {
    let t = center_template(template)?;
    check_fits(image, t.w, t.h)?;
    let ow = image.width() - t.w + 1;
    let oh = image.height() - t.h + 1;
    let rows = crate::par::map_range(oh, |r| (0..ow).map(|c| ncc_at(image, &t, r, c)).collect::<Vec<_>>());
    RasterGrid::new(ow, oh, 1.0, rows.concat())
}

fn masked_ncc_at(
    image: &RasterGrid,
    valid: &[bool],
    template: &RasterGrid,
    row: usize,
    col: usize,
    max_invalid: usize,
) -> f64 {
    let (tw, th) = (template.width(), template.height());
    let iw = image.width();
    let mut invalid = 0;
    for r in 0..th {
        invalid += valid[(row + r) * iw + col..(row + r) * iw + col + tw].iter().filter(|v| !**v).count();
    }
    if invalid > max_invalid {
        return 0.0;
    }
    let n = (tw * th - invalid) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let (mut sx, mut sx2, mut sy, mut sy2, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut shift = None;
    for r in 0..th {
        for c in 0..tw {
            if !valid[(row + r) * iw + col + c] {
                continue;
            }
            let raw = image.get(row + r, col + c);
            let x = raw - *shift.get_or_insert(raw);
            let y = template.get(r, c);
            sx += x;
            sx2 += x * x;
            sy += y;
            sy2 += y * y;
            sxy += x * y;
        }
    }
    let vx = sx2 - sx * sx / n;
    let vy = sy2 - sy * sy / n;
    if vx <= 1e-24 * sx2.max(f64::MIN_POSITIVE) || vx <= 0.0 || vy <= 1e-24 * sy2 || vy <= 0.0 {
        return 0.0;
    }
    ((sxy - sx * sy / n) / (vx * vy).sqrt()).clamp(-1.0, 1.0)
}

/// NCC restricted to valid pixels of each window; windows with more than
/// `max_invalid_fraction` invalid pixels score 0.
pub fn ncc_map_masked(
    image: &RasterGrid,
    valid: &[bool],
    template: &RasterGrid,
    max_invalid_fraction: f64,
) -> Result<RasterGrid> {
    if valid.len() != image.values().len() {
        return Err(Error::DimensionMismatch {
            expected: image.values().len(),
            got: valid.len(),
        });
    }
    center_template(template)?;
    check_fits(image, template.width(), template.height())?;
    let ow = image.width() - template.width() + 1;
    let oh = image.height() - template.height() + 1;
    let max_invalid = (max_invalid_fraction * (template.width() * template.height()) as f64).floor() as usize;
    let rows = crate::par::map_range(oh, |r| {
        (0..ow)
            .map(|c| masked_ncc_at(image, valid, template, r, c, max_invalid))
            .collect::<Vec<_>>()
    });
    RasterGrid::new(ow, oh, 1.0, rows.concat())
}

/// 2x2 box-filter reduction; odd trailing rows/columns are dropped.
pub fn downsample(image: &RasterGrid) -> Result<RasterGrid> {
    let (w, h) = (image.width() / 2, image.height() / 2);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("image too small to downsample".into()));
    }
    RasterGrid::from_fn(w, h, image.cell_size() * 2.0, |r, c| {
        0.25 * (image.get(2 * r, 2 * c)
            + image.get(2 * r, 2 * c + 1)
            + image.get(2 * r + 1, 2 * c)
            + image.get(2 * r + 1, 2 * c + 1))
    })
}

/// A reduced pixel is valid only when all four parents are.
pub fn downsample_mask(valid: &[bool], width: usize, height: usize) -> Vec<bool> {
    let (w, h) = (width / 2, height / 2);
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            out.push(
                valid[2 * r * width + 2 * c]
                    && valid[2 * r * width + 2 * c + 1]
                    && valid[(2 * r + 1) * width + 2 * c]
                    && valid[(2 * r + 1) * width + 2 * c + 1],
            );
        }
    }
    out
}

/// Maps a pixel coordinate at pyramid level `level` to full resolution.
pub fn to_full_resolution(x: f64, level: u32) -> f64 {
    (x + 0.5) * f64::from(1u32 << level) - 0.5
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubpixelPeak {
    pub dr: f64,
    pub dc: f64,
    pub score: f64,
    /// False when the fitted quadratic is not strictly concave or the window
    /// was clipped; the offset is then zero.
    pub concave: bool,
}

/// Least-squares quadratic fit over a `window x window` neighborhood and its
/// stationary point, clamped to one pixel per axis.
pub fn subpixel_peak(corr: &RasterGrid, row: usize, col: usize, window: usize) -> SubpixelPeak {
    let raw = corr.get(row, col);
    let flat = SubpixelPeak {
        dr: 0.0,
        dc: 0.0,
        score: raw,
        concave: false,
    };
    let h = window / 2;
    if window < 3 || window % 2 == 0 || row < h || col < h || row + h >= corr.height() || col + h >= corr.width() {
        return flat;
    }
    let mut ata = Matrix6::<f64>::zeros();
    let mut atb = Vector6::<f64>::zeros();
    for i in 0..window {
        for j in 0..window {
            let r = i as f64 - h as f64;
            let c = j as f64 - h as f64;
            let phi = Vector6::new(1.0, r, c, r * r, r * c, c * c);
            ata += phi * phi.transpose();
            atb += phi * corr.get(row + i - h, col + j - h);
        }
    }
    let Some(p) = ata.cholesky().map(|ch| ch.solve(&atb)) else {
        return flat;
    };
    let (b, c, d, e, f) = (p[1], p[2], p[3], p[4], p[5]);
    let det = 4.0 * d * f - e * e;
    if !(d < 0.0 && det > 0.0) {
        return flat;
    }
    let dr = ((-2.0 * f * b + e * c) / det).clamp(-1.0, 1.0);
    let dc = ((-2.0 * d * c + e * b) / det).clamp(-1.0, 1.0);
    let score = p[0] + b * dr + c * dc + d * dr * dr + e * dr * dc + f * dc * dc;
    SubpixelPeak {
        dr,
        dc,
        score,
        concave: true,
    }
}

/// Intersection over union of two discs.
pub fn circle_iou(x1: f64, y1: f64, r1: f64, x2: f64, y2: f64, r2: f64) -> f64 {
    let d = ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
    let a1 = std::f64::consts::PI * r1 * r1;
    let a2 = std::f64::consts::PI * r2 * r2;
    let inter = if d >= r1 + r2 {
        0.0
    } else if d <= (r1 - r2).abs() {
        a1.min(a2)
    } else {
        let alpha = ((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)).clamp(-1.0, 1.0).acos();
        let beta = ((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)).clamp(-1.0, 1.0).acos();
        r1 * r1 * (alpha - alpha.sin() * alpha.cos()) + r2 * r2 * (beta - beta.sin() * beta.cos())
    };
    let union = a1 + a2 - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Strict 8-neighborhood maxima at or above `threshold`, as (row, col).
pub fn local_maxima(corr: &RasterGrid, threshold: f64) -> Vec<(usize, usize)> {
    let (w, h) = (corr.width(), corr.height());
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = corr.get(r, c);
            if v < threshold {
                continue;
            }
            let mut is_max = true;
            'n: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    if corr.get(rr as usize, cc as usize) >= v {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if is_max {
                out.push((r, c));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    level: u32,
    row: usize,
    col: usize,
    template_idx: usize,
    det: Detection,
}

/// Matches every template at every pyramid level, keeps thresholded local
/// maxima, suppresses overlaps and returns the best `top_k` by score.
///
/// `valid` marks usable image pixels (for warped inputs); `None` means all.
pub fn pyramid_detect(
    image: &RasterGrid,
    valid: Option<&[bool]>,
    templates: &[MatchTemplate],
    cfg: &MatchConfig,
) -> Result<Vec<Detection>> {
    cfg.validate()?;
    if let Some(v) = valid {
        if v.len() != image.values().len() {
            return Err(Error::DimensionMismatch {
                expected: image.values().len(),
                got: v.len(),
            });
        }
    }
    let max_level = *cfg.pyramid_levels.iter().max().expect("validated non-empty");
    let mut levels: Vec<(RasterGrid, Option<Vec<bool>>)> = vec![(image.clone(), valid.map(<[bool]>::to_vec))];
    for _ in 0..max_level {
        let (prev, mask) = levels.last().expect("non-empty");
        if prev.width() < 2 || prev.height() < 2 {
            break;
        }
        let next = downsample(prev)?;
        let next_mask = mask.as_ref().map(|m| downsample_mask(m, prev.width(), prev.height()));
        levels.push((next, next_mask));
    }
    let jobs: Vec<(u32, usize)> = cfg
        .pyramid_levels
        .iter()
        .filter(|&&l| (l as usize) < levels.len())
        .flat_map(|&l| (0..templates.len()).map(move |t| (l, t)))
        .collect();
    let per_job = crate::par::map_slice(&jobs, |&(level, ti)| -> Vec<Candidate> {
        let (img, mask) = &levels[level as usize];
        let tpl = &templates[ti].pixels;
        if tpl.width() > img.width() || tpl.height() > img.height() {
            return Vec::new();
        }
        let corr = match mask {
            Some(m) => ncc_map_masked(img, m, tpl, cfg.max_invalid_fraction),
            None => ncc_map(img, tpl),
        };
        let Ok(corr) = corr else {
            log::warn!("template {} skipped: zero variance", templates[ti].template_id);
            return Vec::new();
        };
        let factor = f64::from(1u32 << level);
        let half_w = (tpl.width() as f64 - 1.0) / 2.0;
        let half_h = (tpl.height() as f64 - 1.0) / 2.0;
        let radius_px = (tpl.width() + tpl.height()) as f64 / 4.0 * factor;
        local_maxima(&corr, cfg.ncc_threshold)
            .into_iter()
            .map(|(row, col)| {
                let peak = subpixel_peak(&corr, row, col, cfg.subpixel_window);
                let score = corr.get(row, col);
                Candidate {
                    score,
                    level,
                    row,
                    col,
                    template_idx: ti,
                    det: Detection {
                        u: to_full_resolution(col as f64 + half_w + peak.dc, level),
                        v: to_full_resolution(row as f64 + half_h + peak.dr, level),
                        score,
                        scale: 1.0 / factor,
                        template_id: templates[ti].template_id,
                        radius_px,
                    },
                }
            })
            .collect()
    });
    let mut candidates: Vec<Candidate> = per_job.into_iter().flatten().collect();
    candidates.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.level.cmp(&b.level))
            .then(a.row.cmp(&b.row))
            .then(a.col.cmp(&b.col))
            .then(a.template_idx.cmp(&b.template_idx))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for cand in &candidates {
        if kept.len() >= cfg.top_k {
            break;
        }
        let d = cand.det;
        let overlaps = kept
            .iter()
            .any(|k| circle_iou(k.u, k.v, k.radius_px, d.u, d.v, d.radius_px) > cfg.nms_overlap);
        if !overlaps {
            kept.push(d);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RasterGrid {
        RasterGrid::from_fn(w, h, 1.0, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn oracle(image: &RasterGrid, t: &RasterGrid) -> Vec<f64> {
        let (tw, th) = (t.width(), t.height());
        let n = (tw * th) as f64;
        let tm = t.mean();
        let mut out = Vec::new();
        for r in 0..=image.height() - th {
            for c in 0..=image.width() - tw {
                let mut wm = 0.0;
                for i in 0..th {
                    for j in 0..tw {
                        wm += image.get(r + i, c + j);
                    }
                }
                wm /= n;
                let (mut num, mut a, mut b) = (0.0, 0.0, 0.0);
                for i in 0..th {
                    for j in 0..tw {
                        let x = image.get(r + i, c + j) - wm;
                        let y = t.get(i, j) - tm;
                        num += x * y;
                        a += x * x;
                        b += y * y;
                    }
                }
                out.push(if a == 0.0 { 0.0 } else { num / (a * b).sqrt() });
            }
        }
        out
    }

    #[test]
    fn ncc_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let image = random_grid(8, 8, &mut rng);
        let t = random_grid(3, 3, &mut rng);
        let m = ncc_map(&image, &t).unwrap();
        assert_eq!((m.width(), m.height()), (6, 6));
        for (a, b) in m.values().iter().zip(oracle(&image, &t)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn self_and_anti_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let image = random_grid(20, 15, &mut rng);
        let t = RasterGrid::from_fn(5, 4, 1.0, |r, c| image.get(r + 7, c + 3)).unwrap();
        let neg = RasterGrid::from_fn(5, 4, 1.0, |r, c| -image.get(r + 7, c + 3)).unwrap();
        assert!((ncc_map(&image, &t).unwrap().get(7, 3) - 1.0).abs() < 1e-12);
        assert!((ncc_map(&image, &neg).unwrap().get(7, 3) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_errors_and_constant_windows() {
        let image = RasterGrid::filled(10, 10, 1.0, 0.3).unwrap();
        let t = RasterGrid::from_fn(3, 3, 1.0, |r, c| (r + c) as f64).unwrap();
        assert!(ncc_map(&image, &t).unwrap().values().iter().all(|&v| v == 0.0));
        assert!(ncc_map(&image, &RasterGrid::filled(3, 3, 1.0, 1.0).unwrap()).is_err());
        assert!(ncc_map(&t, &image).is_err());
    }

    #[test]
    fn masked_ncc_equals_plain_when_all_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let image = random_grid(16, 12, &mut rng);
        let t = random_grid(5, 5, &mut rng);
        let a = ncc_map(&image, &t).unwrap();
        let b = ncc_map_masked(&image, &vec![true; 16 * 12], &t, 0.25).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-10);
        }
        let mut valid = vec![true; 16 * 12];
        for v in valid.iter_mut().take(16 * 3) {
            *v = false;
        }
        let c = ncc_map_masked(&image, &valid, &t, 0.25).unwrap();
        // first row of windows sees 3 of 5 rows invalid
        assert_eq!(c.get(0, 0), 0.0);
        assert!((c.get(5, 2) - a.get(5, 2)).abs() < 1e-10);
    }

    #[test]
    fn subpixel_recovers_quadratic() {
        let corr = RasterGrid::from_fn(9, 9, 1.0, |r, c| {
            let (r, c) = (r as f64 - 4.0, c as f64 - 4.0);
            1.0 - (r - 0.3).powi(2) - (c + 0.2).powi(2)
        })
        .unwrap();
        let p = subpixel_peak(&corr, 4, 4, 5);
        assert!(p.concave);
        assert!((p.dr - 0.3).abs() < 1e-9 && (p.dc + 0.2).abs() < 1e-9);
        assert!((p.score - 1.0).abs() < 1e-9);
        let sym = RasterGrid::from_fn(5, 5, 1.0, |r, c| -((r as f64 - 2.0).powi(2) + (c as f64 - 2.0).powi(2))).unwrap();
        let p = subpixel_peak(&sym, 2, 2, 5);
        assert!(p.dr.abs() < 1e-12 && p.dc.abs() < 1e-12);
    }

    #[test]
    fn subpixel_rejects_saddle_and_border() {
        let saddle = RasterGrid::from_fn(5, 5, 1.0, |r, c| (r as f64 - 2.0).powi(2) - (c as f64 - 2.0).powi(2)).unwrap();
        let p = subpixel_peak(&saddle, 2, 2, 5);
        assert!(!p.concave);
        assert_eq!((p.dr, p.dc), (0.0, 0.0));
        let p = subpixel_peak(&saddle, 1, 2, 5);
        assert_eq!((p.dr, p.dc, p.score), (0.0, 0.0, saddle.get(1, 2)));
    }

    #[test]
    fn subpixel_offsets_are_clamped() {
        let corr = RasterGrid::from_fn(7, 7, 1.0, |r, c| -((r as f64 - 6.5).powi(2)) - (c as f64 - 3.0).powi(2)).unwrap();
        let p = subpixel_peak(&corr, 3, 3, 5);
        assert_eq!(p.dr, 1.0);
    }

    #[test]
    fn iou_cases() {
        assert_eq!(circle_iou(0.0, 0.0, 1.0, 5.0, 0.0, 1.0), 0.0);
        assert!((circle_iou(0.0, 0.0, 2.0, 0.0, 0.0, 2.0) - 1.0).abs() < 1e-15);
        assert!((circle_iou(0.0, 0.0, 1.0, 0.0, 0.0, 2.0) - 0.25).abs() < 1e-15);
        // unit circles one radius apart: lens = 2 acos(1/2) - sqrt(3)/2
        let lens = 2.0 * (0.5f64).acos() - 3f64.sqrt() / 2.0;
        let expect = lens / (2.0 * std::f64::consts::PI - lens);
        assert!((circle_iou(0.0, 0.0, 1.0, 1.0, 0.0, 1.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn pyramid_coordinates() {
        assert_eq!(to_full_resolution(3.0, 0), 3.0);
        assert_eq!(to_full_resolution(0.0, 1), 0.5);
        assert_eq!(to_full_resolution(0.0, 2), 1.5);
        let g = RasterGrid::from_fn(4, 4, 1.0, |r, c| (r * 4 + c) as f64).unwrap();
        let d = downsample(&g).unwrap();
        assert_eq!(d.values(), &[2.5, 4.5, 10.5, 12.5]);
    }

    fn blob_template(side: usize) -> RasterGrid {
        let c = (side as f64 - 1.0) / 2.0;
        RasterGrid::from_fn(side, side, 1.0, |r, col| {
            let dx = col as f64 - c;
            let dy = r as f64 - c;
            (-(dx * dx + dy * dy) / 20.0).exp() * (1.0 + 0.3 * dx / c) - 0.2 * (dy / c)
        })
        .unwrap()
    }

    fn paste(image: &mut Vec<f64>, width: usize, t: &RasterGrid, u: usize, v: usize) {
        let h = t.width() / 2;
        for r in 0..t.height() {
            for c in 0..t.width() {
                image[(v - h + r) * width + u - h + c] = t.get(r, c);
            }
        }
    }

    #[test]
    fn planted_template_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (160, 120);
        let mut img: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.01..0.01)).collect();
        let t = blob_template(25);
        paste(&mut img, w, &t, 100, 60);
        let image = RasterGrid::new(w, h, 1.0, img).unwrap();
        let tpl = [MatchTemplate {
            template_id: 7,
            pixels: t,
        }];
        let dets = pyramid_detect(&image, None, &tpl, &MatchConfig::default()).unwrap();
        let top = dets[0];
        assert!((top.u - 100.0).abs() <= 0.5 && (top.v - 60.0).abs() <= 0.5, "{top:?}");
        assert!(top.score >= 0.99);
        assert_eq!(top.template_id, 7);
        assert_eq!(top.radius_px, 12.5);
    }

    #[test]
    fn nms_keeps_distant_and_merges_duplicates() {
        let (w, h) = (300, 80);
        let t = blob_template(21);
        let mut img = vec![0.0; w * h];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in img.iter_mut() {
            *x = rng.random_range(-0.01..0.01);
        }
        paste(&mut img, w, &t, 50, 40);
        paste(&mut img, w, &t, 250, 40);
        let image = RasterGrid::new(w, h, 1.0, img).unwrap();
        let cfg = MatchConfig {
            pyramid_levels: vec![0],
            ..MatchConfig::default()
        };
        let one = [MatchTemplate {
            template_id: 0,
            pixels: t.clone(),
        }];
        let dets = pyramid_detect(&image, None, &one, &cfg).unwrap();
        assert_eq!(dets.len(), 2);
        let two = [
            one[0].clone(),
            MatchTemplate {
                template_id: 1,
                pixels: t,
            },
        ];
        let dets = pyramid_detect(&image, None, &two, &cfg).unwrap();
        assert_eq!(dets.len(), 2);
        assert!(dets.iter().all(|d| d.template_id == 0));
        for (i, a) in dets.iter().enumerate() {
            assert!(a.score >= cfg.ncc_threshold);
            for b in &dets[i + 1..] {
                assert!(circle_iou(a.u, a.v, a.radius_px, b.u, b.v, b.radius_px) <= cfg.nms_overlap);
                assert!(a.score >= b.score);
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = MatchConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.top_k = 0;
        assert!(cfg.validate().is_err());
        cfg = MatchConfig {
            subpixel_window: 4,
            ..MatchConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
