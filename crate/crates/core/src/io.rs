//! File formats: observation CSV, binary rasters with JSON sidecars, CSV
//! rasters, run manifests and flat key-value configuration files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridField, RegularGrid};
use crate::kriging::ObservationSet;

/// Reads observations from CSV with header `x,y,value[,sd]`. Without an `sd`
/// column every observation gets `default_sd`.
pub fn parse_observations(path: &Path, default_sd: f64) -> Result<ObservationSet> {
    let f = fs::File::open(path)?;
    read_observations(f, default_sd)
}

pub fn read_observations<R: Read>(input: R, default_sd: f64) -> Result<ObservationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let has_sd = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["x", "y", "value"] => false,
        ["x", "y", "value", "sd"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header x,y,value[,sd], found {}", header.join(",")),
            })
        }
    };
    if !has_sd && !(default_sd >= 0.0 && default_sd.is_finite()) {
        return Err(invalid("no sd column and no valid default noise sd"));
    }
    let width = if has_sd { 4 } else { 3 };
    let (mut locs, mut vals, mut sds) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let mut nums = [0.0; 4];
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("'{field}' in column {} is not a number", header[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value in column {}", header[k]),
                });
            }
            nums[k] = v;
        }
        if has_sd && nums[3] < 0.0 {
            return Err(Error::Parse {
                line,
                message: "negative sd".into(),
            });
        }
        locs.push([nums[0], nums[1]]);
        vals.push(nums[2]);
        sds.push(if has_sd { nums[3] } else { default_sd });
    }
    ObservationSet::new(locs, vals, sds)
}

/// Writes observations as CSV with an `sd` column.
pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "value", "sd"])?;
    for k in 0..obs.len() {
        w.write_record(&[
            obs.locations[k][0].to_string(),
            obs.locations[k][1].to_string(),
            obs.values[k].to_string(),
            obs.noise_sd[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar describing a binary raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterMeta {
    pub grid: RegularGrid,
    /// Always `"f32le"`.
    pub dtype: String,
    /// Always `"row_major_x_fastest"`: value `(i, j)` at offset `j * nx + i`.
    pub layout: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub draw: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub description: Option<String>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<path>` (little-endian f32) and its sidecar `<path>.json` (extension replaced).
pub fn write_raster(path: &Path, field: &GridField, description: Option<&str>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in &field.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    let meta = RasterMeta {
        grid: field.grid,
        dtype: "f32le".into(),
        layout: "row_major_x_fastest".into(),
        seed: field.seed,
        draw: field.draw,
        description: description.map(str::to_owned),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// Reads a raster written by `write_raster`.
pub fn read_raster(path: &Path) -> Result<(GridField, RasterMeta)> {
    let meta: RasterMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if meta.dtype != "f32le" {
        return Err(invalid(format!("unsupported raster dtype '{}'", meta.dtype)));
    }
    meta.grid.validate()?;
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * meta.grid.len() {
        return Err(invalid(format!(
            "raster holds {} bytes, sidecar expects {}",
            bytes.len(),
            4 * meta.grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut field = GridField::new(meta.grid, values)?;
    field.seed = meta.seed;
    field.draw = meta.draw;
    Ok((field, meta))
}

/// CSV raster with header `x,y,value`, one row per node in grid order.
pub fn write_raster_csv<W: Write>(field: &GridField, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "value"])?;
    for (k, v) in field.values.iter().enumerate() {
        let p = field.grid.location(k);
        w.write_record(&[p[0].to_string(), p[1].to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the values of a CSV raster written for `grid`.
pub fn read_raster_csv<R: Read>(grid: &RegularGrid, input: R) -> Result<GridField> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut values = Vec::with_capacity(grid.len());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let v = rec
            .get(2)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                message: "missing or malformed value".into(),
            })?;
        values.push(v);
    }
    GridField::new(*grid, values)
}

/// Record of a run: what was asked for, with which seeds, and how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Every setting needed to rerun.
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timings: Option<serde_json::Value>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: "cesim".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed: None,
            timings: None,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("expected key = value, found '{line}'"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line: k + 1,
                message: "empty key".into(),
            });
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("duplicate key '{key}'"),
            });
        }
    }
    Ok(out)
}

pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config(&fs::read_to_string(path)?)
}
