//! Rasters, crater catalogs and JSON artifacts on disk.
//!
//! The raster format is an ASCII header line `EGR1 <width> <height> <cell_size_m>\n`
//! followed by `width * height` little-endian `f64` values, row-major, north row
//! first. Writing then reading any valid grid is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &str = "EGR1";

/// Row-major grid of finite `f64` values with a physical cell size in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    values: Vec<f64>,
}

impl RasterGrid {
    pub fn new(width: usize, height: usize, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cell size must be positive, got {cell_size}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            cell_size,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, cell_size: f64, value: f64) -> Result<Self> {
        Self::new(width, height, cell_size, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        cell_size: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(width, height, cell_size, values)
    }

    /// 8-bit grayscale import; intensities are divided by 255.
    pub fn from_gray8(width: usize, height: usize, pixels: &[u8]) -> Result<Self> {
        let values = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
        Self::new(width, height, 1.0, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    /// Bilinear sample at continuous pixel coordinates (`x` = column, `y` = row,
    /// integer values at pixel centers). `None` outside the grid.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        let c0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let r0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - c0 as f64;
        let fy = y - r0 as f64;
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let top = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
        let bottom = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Rotates the grid 90° counter-clockwise as displayed (north row first).
    pub fn rotate90(&self) -> RasterGrid {
        let (w, h) = (self.width, self.height);
        let mut values = Vec::with_capacity(w * h);
        for r in 0..w {
            for c in 0..h {
                values.push(self.get(c, w - 1 - r));
            }
        }
        RasterGrid {
            width: h,
            height: w,
            cell_size: self.cell_size,
            values,
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn encode_raster(grid: &RasterGrid) -> Vec<u8> {
    let header = format!(
        "{MAGIC} {} {} {}\n",
        grid.width, grid.height, grid.cell_size
    );
    let mut buf = Vec::with_capacity(header.len() + grid.values.len() * 8);
    buf.extend_from_slice(header.as_bytes());
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterGrid> {
    let newline = bytes
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::RasterHeader {
            offset: 0,
            reason: "missing header line terminator".into(),
        })?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|e| Error::RasterHeader {
        offset: e.valid_up_to(),
        reason: "header is not ASCII".into(),
    })?;
    let mut fields = header.split(' ');
    let mut offset = 0usize;
    let mut next = |name: &str| -> Result<(usize, &str)> {
        let at = offset;
        let f = fields.next().ok_or_else(|| Error::RasterHeader {
            offset: at,
            reason: format!("missing {name}"),
        })?;
        offset += f.len() + 1;
        Ok((at, f))
    };
    let (at, magic) = next("magic")?;
    if magic != MAGIC {
        return Err(Error::RasterHeader {
            offset: at,
            reason: format!("bad magic {magic:?}"),
        });
    }
    let (at, w) = next("width")?;
    let width: usize = w.parse().map_err(|_| Error::RasterHeader {
        offset: at,
        reason: format!("bad width {w:?}"),
    })?;
    let (at, h) = next("height")?;
    let height: usize = h.parse().map_err(|_| Error::RasterHeader {
        offset: at,
        reason: format!("bad height {h:?}"),
    })?;
    let (at, c) = next("cell size")?;
    let cell_size: f64 = c.parse().map_err(|_| Error::RasterHeader {
        offset: at,
        reason: format!("bad cell size {c:?}"),
    })?;
    if fields.next().is_some() {
        return Err(Error::RasterHeader {
            offset: newline,
            reason: "trailing header fields".into(),
        });
    }
    let payload = &bytes[newline + 1..];
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::RasterHeader {
            offset: 0,
            reason: "dimensions overflow".into(),
        })?;
    if payload.len() != expected {
        return Err(Error::RasterPayload {
            offset: newline + 1,
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    RasterGrid::new(width, height, cell_size, values).map_err(|e| match e {
        Error::NonFinite { index } => Error::RasterPayload {
            offset: newline + 1 + index * 8,
            expected,
            found: payload.len(),
        },
        other => other,
    })
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raster(&bytes)
}

pub fn write_raster(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(index) = grid.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_raster(grid))
        .map_err(|e| Error::io(path, e))
}

/// One row of the crater catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub id: String,
    #[serde(rename = "lat_deg")]
    pub lat: f64,
    #[serde(rename = "lon_deg")]
    pub lon: f64,
    /// Kilometers.
    #[serde(rename = "radius_km")]
    pub radius: f64,
    pub eccentricity: f64,
    /// Meters above the reference sphere.
    #[serde(rename = "elevation_m", default)]
    pub elevation: f64,
}

impl CatalogRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(format!("lat_deg {} outside [-90, 90]", self.lat));
        }
        if !(self.lon.is_finite() && (-180.0..360.0).contains(&self.lon)) {
            return Err(format!("lon_deg {} outside [-180, 360)", self.lon));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(format!("radius_km {} must be positive", self.radius));
        }
        if !(self.eccentricity.is_finite() && (0.0..1.0).contains(&self.eccentricity)) {
            return Err(format!("eccentricity {} outside [0, 1)", self.eccentricity));
        }
        if !self.elevation.is_finite() {
            return Err("elevation_m is not finite".into());
        }
        Ok(())
    }
}

pub const CATALOG_HEADER: [&str; 6] = [
    "id",
    "lat_deg",
    "lon_deg",
    "radius_km",
    "eccentricity",
    "elevation_m",
];

/// Parses catalog CSV text. Row numbers in errors are 1-based data rows.
pub fn parse_catalog(text: &str) -> Result<Vec<CatalogRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::CatalogRow {
        row: 0,
        reason: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().collect();
    if got != CATALOG_HEADER[..got.len().min(6)] || got.len() < 5 {
        return Err(Error::CatalogRow {
            row: 0,
            reason: format!("unexpected header {got:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let rec = row.map_err(|e| Error::CatalogRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        if rec.len() < 5 || rec.len() > 6 {
            return Err(Error::CatalogRow {
                row: row_no,
                reason: format!("expected 5 or 6 fields, found {}", rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|_| Error::CatalogRow {
                row: row_no,
                reason: format!("field {} is not a number: {:?}", CATALOG_HEADER[k], &rec[k]),
            })
        };
        let record = CatalogRecord {
            id: rec[0].to_string(),
            lat: num(1)?,
            lon: num(2)?,
            radius: num(3)?,
            eccentricity: num(4)?,
            elevation: if rec.len() == 6 && !rec[5].is_empty() {
                num(5)?
            } else {
                0.0
            },
        };
        record
            .validate()
            .map_err(|reason| Error::CatalogRow { row: row_no, reason })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<Vec<CatalogRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_catalog(&text)
}

pub fn format_catalog(records: &[CatalogRecord]) -> String {
    let mut s = CATALOG_HEADER.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.id, r.lat, r.lon, r.radius, r.eccentricity, r.elevation
        ));
    }
    s
}

pub fn write_catalog(records: &[CatalogRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|reason| Error::CatalogRow { row: i + 1, reason })?;
    }
    fs::write(path, format_catalog(records)).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline; output is a pure function of `value`.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_grid_round_trip() {
        let g = RasterGrid::new(2, 2, 100.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.egr");
        write_raster(&g, &p).unwrap();
        assert_eq!(read_raster(&p).unwrap(), g);

        let one = RasterGrid::new(1, 1, 1.0, vec![0.5]).unwrap();
        write_raster(&one, &p).unwrap();
        assert_eq!(read_raster(&p).unwrap().values(), &[0.5]);
    }

    #[test]
    fn header_payload_mismatch() {
        let mut bytes = b"EGR1 3 3 1\n".to_vec();
        for i in 0..8 {
            bytes.extend_from_slice(&(i as f64).to_le_bytes());
        }
        match decode_raster(&bytes) {
            Err(Error::RasterPayload {
                offset,
                expected,
                found,
            }) => {
                assert_eq!(offset, 11);
                assert_eq!(expected, 72);
                assert_eq!(found, 64);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            decode_raster(b"EGR2 1 1 1\n\0\0\0\0\0\0\0\0"),
            Err(Error::RasterHeader { offset: 0, .. })
        ));
        assert!(matches!(
            decode_raster(b"EGR1 x 1 1\n"),
            Err(Error::RasterHeader { offset: 5, .. })
        ));
        assert!(matches!(
            decode_raster(b"no newline"),
            Err(Error::RasterHeader { .. })
        ));
    }

    #[test]
    fn nan_rejected() {
        assert!(matches!(
            RasterGrid::new(1, 2, 1.0, vec![0.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
        let mut bytes = b"EGR1 1 1 1\n".to_vec();
        bytes.extend_from_slice(&f64::INFINITY.to_le_bytes());
        assert!(decode_raster(&bytes).is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            read_raster("/nonexistent/x.egr"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn catalog_rows() {
        let text = "id,lat_deg,lon_deg,radius_km,eccentricity,elevation_m\nc1,1.4,25.0,2.3,0.1,0\n";
        let recs = parse_catalog(text).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].radius, 2.3);
        assert_eq!(recs[0].id, "c1");

        let bad = "id,lat_deg,lon_deg,radius_km,eccentricity,elevation_m\nc1,1,2,3,0.1,0\nc2,1.4,25.0,2.3,1.2,0\n";
        match parse_catalog(bad) {
            Err(Error::CatalogRow { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("eccentricity"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let malformed = "id,lat_deg,lon_deg,radius_km,eccentricity,elevation_m\nc1,abc,2,3,0.1,0\n";
        assert!(matches!(
            parse_catalog(malformed),
            Err(Error::CatalogRow { row: 1, .. })
        ));
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let g = RasterGrid::from_fn(3, 5, 1.0, |r, c| (r * 7 + c) as f64).unwrap();
        let r1 = g.rotate90();
        assert_eq!((r1.width(), r1.height()), (5, 3));
        // top-left after a CCW turn is the old top-right
        assert_eq!(r1.get(0, 0), g.get(0, 2));
        assert_eq!(r1.rotate90().rotate90().rotate90(), g);
    }

    proptest! {
        #[test]
        fn raster_round_trip_is_bit_exact(
            w in 1usize..12, h in 1usize..12, cell in 0.001f64..1e4, seed in any::<u64>()
        ) {
            let mut s = seed;
            let g = RasterGrid::from_fn(w, h, cell, |_, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits((s >> 12) | 0x3ff0_0000_0000_0000) * if s & 1 == 0 { -1e3 } else { 1e-3 }
            }).unwrap();
            let back = decode_raster(&encode_raster(&g)).unwrap();
            prop_assert_eq!(back.cell_size().to_bits(), g.cell_size().to_bits());
            let same = back.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn catalog_preserves_order(n in 0usize..20, seed in any::<u32>()) {
            let recs: Vec<_> = (0..n).map(|i| CatalogRecord {
                id: format!("c{i}"),
                lat: ((seed as f64 + i as f64 * 13.7) % 180.0) - 90.0,
                lon: (seed as f64 * 0.37 + i as f64 * 31.1) % 360.0,
                radius: 0.5 + i as f64,
                eccentricity: (i as f64 * 0.047) % 0.99,
                elevation: -1200.5 + i as f64,
            }).collect();
            let back = parse_catalog(&format_catalog(&recs)).unwrap();
            prop_assert_eq!(back, recs);
        }
    }
}
