//! Flat ENVI-style rasters (band-sequential little-endian `f32`), endmember
//! CSV files and content hashes.
//!
//! A raster `scene.img` carries its header in `scene.hdr`:
//!
//! ```text
//! ENVI
//! description = {config_hash=…}
//! samples = 64
//! lines = 64
//! bands = 30
//! header offset = 0
//! file type = ENVI Standard
//! data type = 4
//! interleave = bsq
//! byte order = 0
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{EndmemberMatrix, Grid, MultibandImage};

/// Header path paired with a payload path (`x.img` → `x.hdr`).
pub fn header_path(payload: &Path) -> PathBuf {
    payload.with_extension("hdr")
}

/// Writes `image` as a BSQ `f32` payload at `path` plus its header.
pub fn write_raster(image: &MultibandImage, path: &Path) -> Result<()> {
    write_raster_with(image, path, None)
}

/// Like [`write_raster`], recording `description` in the header.
pub fn write_raster_with(image: &MultibandImage, path: &Path, description: Option<&str>) -> Result<()> {
    let mut hdr = String::from("ENVI\n");
    if let Some(d) = description {
        hdr.push_str(&format!("description = {{{}}}\n", d.replace(['{', '}'], "")));
    }
    hdr.push_str(&format!(
        "samples = {}\nlines = {}\nbands = {}\nheader offset = 0\nfile type = ENVI Standard\n\
         data type = 4\ninterleave = bsq\nbyte order = 0\n",
        image.width(),
        image.height(),
        image.bands()
    ));
    if let Some(labels) = image.band_labels() {
        let clean: Vec<String> = labels.iter().map(|l| l.replace([',', '{', '}'], " ")).collect();
        hdr.push_str(&format!("band names = {{{}}}\n", clean.join(", ")));
    }
    let mut payload = Vec::with_capacity(image.data().len() * 4);
    // row-major bands × pixels is already band-sequential
    for v in image.data().iter() {
        payload.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let hpath = header_path(path);
    fs::write(&hpath, hdr).map_err(|e| Error::io(&hpath, e))?;
    fs::write(path, payload).map_err(|e| Error::io(path, e))
}

fn parse_header(path: &Path, text: &str) -> Result<HashMap<String, String>> {
    let bad = |message: String| Error::Header {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == "ENVI" => {}
        _ => return Err(bad("first line must be ENVI".into())),
    }
    let mut fields = HashMap::new();
    let mut pending: Option<(String, String)> = None;
    for line in lines {
        if let Some((key, mut value)) = pending.take() {
            value.push(' ');
            value.push_str(line.trim());
            if value.contains('}') {
                fields.insert(key, value);
            } else {
                pending = Some((key, value));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got `{}`", line.trim())))?;
        let key = k.trim().to_ascii_lowercase().replace('_', " ");
        let value = v.trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            pending = Some((key, value));
        } else {
            fields.insert(key, value);
        }
    }
    if let Some((key, _)) = pending {
        return Err(bad(format!("unterminated `{{` in field `{key}`")));
    }
    Ok(fields)
}

fn field_usize(path: &Path, fields: &HashMap<String, String>, key: &str) -> Result<usize> {
    let v = fields.get(key).ok_or_else(|| Error::Header {
        path: path.to_path_buf(),
        message: format!("missing field `{key}`"),
    })?;
    v.parse().map_err(|_| Error::Header {
        path: path.to_path_buf(),
        message: format!("field `{key}` is not a count: `{v}`"),
    })
}

fn expect_field(path: &Path, fields: &HashMap<String, String>, key: &str, want: &str) -> Result<()> {
    match fields.get(key) {
        Some(v) if v.eq_ignore_ascii_case(want) => Ok(()),
        Some(v) => Err(Error::Header {
            path: path.to_path_buf(),
            message: format!("unsupported {key} `{v}`, expected `{want}`"),
        }),
        None => Err(Error::Header {
            path: path.to_path_buf(),
            message: format!("missing field `{key}`"),
        }),
    }
}

/// Raster dimensions and the optional description from a header file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub description: Option<String>,
    pub band_names: Option<Vec<String>>,
}

pub fn read_header(payload: &Path) -> Result<RasterHeader> {
    let hpath = header_path(payload);
    let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let fields = parse_header(&hpath, &text)?;
    expect_field(&hpath, &fields, "data type", "4")?;
    expect_field(&hpath, &fields, "interleave", "bsq")?;
    expect_field(&hpath, &fields, "byte order", "0")?;
    if let Some(off) = fields.get("header offset") {
        if off != "0" {
            return Err(Error::Header {
                path: hpath,
                message: format!("unsupported header offset `{off}`"),
            });
        }
    }
    let unbrace = |s: &String| s.trim_start_matches('{').trim_end_matches('}').trim().to_string();
    Ok(RasterHeader {
        samples: field_usize(&hpath, &fields, "samples")?,
        lines: field_usize(&hpath, &fields, "lines")?,
        bands: field_usize(&hpath, &fields, "bands")?,
        description: fields.get("description").map(unbrace),
        band_names: fields
            .get("band names")
            .map(|s| unbrace(s).split(',').map(|x| x.trim().to_string()).collect()),
    })
}

pub fn read_raster(path: &Path) -> Result<MultibandImage> {
    let h = read_header(path)?;
    let hpath = header_path(path);
    let overflow = || Error::Header {
        path: hpath.clone(),
        message: format!("dimensions {}×{}×{} overflow", h.samples, h.lines, h.bands),
    };
    if h.samples == 0 || h.lines == 0 || h.bands == 0 {
        return Err(Error::Header {
            path: hpath.clone(),
            message: "samples, lines and bands must be positive".into(),
        });
    }
    let pixels = h.samples.checked_mul(h.lines).ok_or_else(overflow)?;
    let count = pixels.checked_mul(h.bands).ok_or_else(overflow)?;
    let expected = (count as u64).checked_mul(4).ok_or_else(overflow)?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let actual = bytes.len() as u64;
    if actual < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            actual,
        });
    }
    if actual > expected {
        return Err(Error::Header {
            path: hpath,
            message: format!("payload has {actual} bytes, header implies {expected}"),
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let data = Array2::from_shape_vec((h.bands, pixels), values).expect("length checked");
    let img = MultibandImage::new(Grid::new(h.lines, h.samples), data)?;
    match h.band_names {
        Some(names) if names.len() == h.bands => img.with_band_labels(names),
        _ => Ok(img),
    }
}

/// Reads an `L × M` endmember matrix from CSV (one row per band, `#` lines
/// and blank lines ignored).
pub fn read_endmembers(path: &Path) -> Result<EndmemberMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })?;
        rows.push(row);
    }
    let data = crate::image::rows_to_array(&rows).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    EndmemberMatrix::new(data)
}

pub fn endmembers_csv(e: &EndmemberMatrix, comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = comment {
        s.push_str(&format!("# {c}\n"));
    }
    for row in e.matrix().rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
