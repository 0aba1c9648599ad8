//! Atomic file output, CSV rows, the raw density format and stderr events.
//!
//! Density files are a 32-byte header followed by little-endian `f64`
//! values in row-major multi-index order:
//!
//! | bytes | field |
//! |-------|-------|
//! | 0..4 | magic `MLFE` |
//! | 4..8 | format version, `u32` LE |
//! | 8..12 | `κ`, `u32` LE (0 for a one-dimensional density) |
//! | 12..16 | points per axis, `u32` LE |
//! | 16..24 | lower bound, `f64` LE |
//! | 24..32 | upper bound, `f64` LE |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mlfe_core::{Axis, JointDensity};
use serde_json::Value;

use crate::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"MLFE";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 32;

/// Writes `bytes` to `path` through a sibling temp file and a rename, so a
/// reader never sees a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::validation(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(format!("writing {}", path.display()), e)
    })
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

/// 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Accumulates a CSV document with a fixed header.
#[derive(Debug, Clone)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { columns: header.len(), text }
    }

    /// Appends pre-formatted cells.
    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width must match the header");
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn floats(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.row(&cells);
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

/// Parses a CSV written by [`Csv`] back into its header and numeric rows.
pub fn read_csv(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().split(',').map(str::to_owned).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>()).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok((header, rows))
}

pub fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialise");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn encode(kappa: u32, axis: &Axis, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&kappa.to_le_bytes());
    out.extend_from_slice(&(axis.points() as u32).to_le_bytes());
    out.extend_from_slice(&axis.lower().to_le_bytes());
    out.extend_from_slice(&axis.upper().to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_joint(density: &JointDensity) -> Vec<u8> {
    encode(density.kappa() as u32, density.axis(), density.values())
}

pub fn write_joint(path: &Path, density: &JointDensity) -> CliResult<()> {
    write_atomic(path, &encode_joint(density))
}

pub fn decode_joint(bytes: &[u8]) -> CliResult<JointDensity> {
    let bad = |msg: &str| CliError::validation(format!("density file: {msg}"));
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
        return Err(bad("missing MLFE header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    if u32_at(4) != FORMAT_VERSION {
        return Err(bad("unsupported version"));
    }
    let kappa = u32_at(8) as usize;
    let points = u32_at(12) as usize;
    let axis = Axis::new(f64_at(16), f64_at(24), points).map_err(|e| bad(&e.to_string()))?;
    let expected = points.checked_pow(kappa as u32 + 1).ok_or_else(|| bad("size overflow"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * expected {
        return Err(bad("body length does not match the header"));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    JointDensity::new(axis, kappa, values).map_err(|e| bad(&e.to_string()))
}

pub fn read_joint(path: &Path) -> CliResult<JointDensity> {
    let bytes = fs::read(path).map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    decode_joint(&bytes)
}

/// Emits one JSON object per line on stderr.
pub fn event(kind: &str, fields: Value) {
    let mut obj = serde_json::Map::new();
    obj.insert("event".into(), Value::from(kind));
    if let Value::Object(extra) = fields {
        obj.extend(extra);
    }
    eprintln!("{}", Value::Object(obj));
}

/// Resolves the output directory: flag, then config, then the working directory.
pub fn out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.or(config).map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
}
