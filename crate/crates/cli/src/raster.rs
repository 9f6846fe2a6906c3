//! Band-sequential raster file format.
//!
//! A text header (one `key value` line each, closed by `end_header`) is
//! followed by the raw little-endian payload, band after band in row-major
//! order. The format deliberately avoids geospatial metadata; a converter
//! from GeoTIFF-like sources can sit on top without touching this module.
//!
//! ```text
//! FLOODSEG-RASTER 1
//! width 64
//! height 64
//! dtype f64
//! nodata none
//! bands 5
//! band R
//! ...
//! end_header
//! <width*height*bands little-endian samples>
//! ```

use std::fs;
use std::path::Path;

use crate::io_util::write_atomic;

pub const RASTER_MAGIC: &str = "FLOODSEG-RASTER";
pub const RASTER_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error("bad magic: expected '{RASTER_MAGIC} {RASTER_VERSION}', found '{found}'")]
    BadMagic { found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("header parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("truncated payload: expected {expected} bytes after the header (offset {header_len}), found {actual}")]
    Truncated {
        expected: usize,
        actual: usize,
        header_len: usize,
    },

    #[error("band {band} has {got} samples, expected {expected}")]
    BandSize {
        band: String,
        got: usize,
        expected: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sample encoding of the payload. Values are held as f64 in memory either
/// way; an f32 file simply stores (and round-trips) f32 precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn name(&self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    fn sample_bytes(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Raster with free-form band names (scene bands use the spectral names,
/// masks and debug planes use names like TRUTH or PROB).
#[derive(Debug, Clone, PartialEq)]
pub struct RasterData {
    pub width: usize,
    pub height: usize,
    pub dtype: Dtype,
    pub nodata: Option<f64>,
    pub bands: Vec<(String, Vec<f64>)>,
}

impl RasterData {
    pub fn new(width: usize, height: usize, bands: Vec<(String, Vec<f64>)>) -> Result<Self, RasterError> {
        for (name, plane) in &bands {
            if plane.len() != width * height {
                return Err(RasterError::BandSize {
                    band: name.clone(),
                    got: plane.len(),
                    expected: width * height,
                });
            }
        }
        Ok(RasterData {
            width,
            height,
            dtype: Dtype::F64,
            nodata: None,
            bands,
        })
    }

    pub fn band(&self, name: &str) -> Option<&[f64]> {
        self.bands
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(&format!("{RASTER_MAGIC} {RASTER_VERSION}\n"));
        header.push_str(&format!("width {}\n", self.width));
        header.push_str(&format!("height {}\n", self.height));
        header.push_str(&format!("dtype {}\n", self.dtype.name()));
        match self.nodata {
            Some(v) => header.push_str(&format!("nodata {v}\n")),
            None => header.push_str("nodata none\n"),
        }
        header.push_str(&format!("bands {}\n", self.bands.len()));
        for (name, _) in &self.bands {
            header.push_str(&format!("band {name}\n"));
        }
        header.push_str("end_header\n");

        let mut bytes = header.into_bytes();
        for (_, plane) in &self.bands {
            match self.dtype {
                Dtype::F32 => {
                    for v in plane {
                        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
                Dtype::F64 => {
                    for v in plane {
                        bytes.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        // header is ASCII lines up to and including "end_header\n"
        let mut line_start = 0usize;
        let mut line_no = 0usize;
        let mut width = None;
        let mut height = None;
        let mut dtype = None;
        let mut nodata = None;
        let mut declared_bands: Option<usize> = None;
        let mut band_names = Vec::new();
        let mut payload_start = None;

        while line_start < bytes.len() {
            let rest = &bytes[line_start..];
            let Some(nl) = rest.iter().position(|b| *b == b'\n') else {
                break;
            };
            let line = &rest[..nl];
            line_no += 1;
            let text = std::str::from_utf8(line).map_err(|_| RasterError::Parse {
                line: line_no,
                detail: "header line is not UTF-8".into(),
            })?;
            if line_no == 1 {
                let mut it = text.split_whitespace();
                let magic = it.next().unwrap_or("");
                let version = it.next().unwrap_or("");
                if magic != RASTER_MAGIC {
                    return Err(RasterError::BadMagic { found: text.to_string() });
                }
                let version: u32 = version.parse().map_err(|_| RasterError::BadMagic {
                    found: text.to_string(),
                })?;
                if version != RASTER_VERSION {
                    return Err(RasterError::UnsupportedVersion(version));
                }
            } else if text == "end_header" {
                payload_start = Some(line_start + nl + 1);
                break;
            } else {
                let (key, value) = text.split_once(' ').ok_or_else(|| RasterError::Parse {
                    line: line_no,
                    detail: format!("expected 'key value', got '{text}'"),
                })?;
                let parse_usize = |v: &str| {
                    v.parse::<usize>().map_err(|_| RasterError::Parse {
                        line: line_no,
                        detail: format!("invalid integer '{v}' for {key}"),
                    })
                };
                match key {
                    "width" => width = Some(parse_usize(value)?),
                    "height" => height = Some(parse_usize(value)?),
                    "dtype" => {
                        dtype = Some(match value {
                            "f32" => Dtype::F32,
                            "f64" => Dtype::F64,
                            other => {
                                return Err(RasterError::Parse {
                                    line: line_no,
                                    detail: format!("unknown dtype '{other}'"),
                                })
                            }
                        })
                    }
                    "nodata" => {
                        nodata = if value == "none" {
                            None
                        } else {
                            Some(value.parse::<f64>().map_err(|_| RasterError::Parse {
                                line: line_no,
                                detail: format!("invalid nodata value '{value}'"),
                            })?)
                        }
                    }
                    "bands" => declared_bands = Some(parse_usize(value)?),
                    "band" => band_names.push(value.to_string()),
                    other => {
                        return Err(RasterError::Parse {
                            line: line_no,
                            detail: format!("unknown header key '{other}'"),
                        })
                    }
                }
            }
            line_start += nl + 1;
        }

        let payload_start = payload_start.ok_or(RasterError::Parse {
            line: line_no,
            detail: "missing end_header".into(),
        })?;
        let width = width.ok_or(RasterError::Parse { line: line_no, detail: "missing width".into() })?;
        let height =
            height.ok_or(RasterError::Parse { line: line_no, detail: "missing height".into() })?;
        let dtype = dtype.ok_or(RasterError::Parse { line: line_no, detail: "missing dtype".into() })?;
        let declared =
            declared_bands.ok_or(RasterError::Parse { line: line_no, detail: "missing bands".into() })?;
        if declared != band_names.len() {
            return Err(RasterError::Parse {
                line: line_no,
                detail: format!("declared {declared} bands but listed {}", band_names.len()),
            });
        }

        let plane = width * height;
        let expected = plane * band_names.len() * dtype.sample_bytes();
        let payload = &bytes[payload_start.min(bytes.len())..];
        if payload.len() != expected {
            return Err(RasterError::Truncated {
                expected,
                actual: payload.len(),
                header_len: payload_start,
            });
        }

        let mut bands = Vec::with_capacity(band_names.len());
        for (bi, name) in band_names.into_iter().enumerate() {
            let mut values = Vec::with_capacity(plane);
            match dtype {
                Dtype::F32 => {
                    let base = bi * plane * 4;
                    for i in 0..plane {
                        let o = base + i * 4;
                        values.push(f32::from_le_bytes(payload[o..o + 4].try_into().unwrap()) as f64);
                    }
                }
                Dtype::F64 => {
                    let base = bi * plane * 8;
                    for i in 0..plane {
                        let o = base + i * 8;
                        values.push(f64::from_le_bytes(payload[o..o + 8].try_into().unwrap()));
                    }
                }
            }
            bands.push((name, values));
        }
        Ok(RasterData { width, height, dtype, nodata, bands })
    }

    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Convert a file raster into the strict spectral raster used by the index
/// and training code. Unknown band names are rejected.
pub fn to_scene_raster(data: &RasterData) -> anyhow::Result<floodseg_core::indices::Raster> {
    let mut bands = Vec::new();
    for (name, plane) in &data.bands {
        let band = floodseg_core::indices::Band::from_name(name)
            .ok_or_else(|| anyhow::anyhow!("unknown spectral band '{name}'"))?;
        bands.push((band, plane.clone()));
    }
    Ok(floodseg_core::indices::Raster::new(
        data.width,
        data.height,
        bands,
        data.nodata,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dtype: Dtype) -> RasterData {
        let mut r = RasterData::new(
            3,
            2,
            vec![
                ("R".into(), vec![0.125, 0.25, 0.5, 1.0, 2.0, 4.0]),
                ("MASK".into(), vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]),
            ],
        )
        .unwrap();
        r.dtype = dtype;
        r.nodata = Some(-999.0);
        r
    }

    #[test]
    fn round_trips_bit_exactly() {
        for dtype in [Dtype::F32, Dtype::F64] {
            let r = sample(dtype);
            let bytes = r.to_bytes();
            let back = RasterData::from_bytes(&bytes).unwrap();
            assert_eq!(back, r);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn bad_magic_is_reported() {
        let err = RasterData::from_bytes(b"NOT-A-RASTER 1\nend_header\n").unwrap_err();
        assert!(matches!(err, RasterError::BadMagic { .. }));
    }

    #[test]
    fn wrong_version_is_reported() {
        let err = RasterData::from_bytes(b"FLOODSEG-RASTER 9\nend_header\n").unwrap_err();
        assert!(matches!(err, RasterError::UnsupportedVersion(9)));
    }

    #[test]
    fn truncation_reports_expected_and_actual_bytes() {
        let r = sample(Dtype::F64);
        let mut bytes = r.to_bytes();
        bytes.truncate(bytes.len() - 5);
        match RasterData::from_bytes(&bytes).unwrap_err() {
            RasterError::Truncated { expected, actual, .. } => {
                assert_eq!(expected, 2 * 6 * 8);
                assert_eq!(actual, 2 * 6 * 8 - 5);
            }
            other => panic!("expected truncation error, got {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_parse_errors() {
        let err = RasterData::from_bytes(
            b"FLOODSEG-RASTER 1\nwidth 1\nheight 1\ncolor blue\nend_header\n",
        )
        .unwrap_err();
        assert!(matches!(err, RasterError::Parse { line: 4, .. }));
    }
}
