//! Field and path serialisation.
//!
//! Binary field record: 16-byte header (`b"TF2D"`, `u32` N, two reserved
//! `u32` zeros), then `N²` little-endian `f64` pairs `(re, im)` in
//! row-major `k` order with `k₁, k₂` running over `-N/2+1 ..= N/2`.
//! A path is a sequence of such records next to a JSON manifest.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{TimePath, TorusField};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TF2D";
pub const HEADER_LEN: usize = 16;

fn k_range(n: usize) -> impl Iterator<Item = i64> {
    let h = (n / 2) as i64;
    (-h + 1)..=h
}

pub fn write_field<W: Write>(w: &mut W, f: &TorusField) -> Result<()> {
    let n = f.n();
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * n * n);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&[0u8; 8]);
    for k1 in k_range(n) {
        for k2 in k_range(n) {
            let c = f.coeff((k1, k2));
            buf.extend_from_slice(&c.re.to_le_bytes());
            buf.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn field_to_bytes(f: &TorusField) -> Vec<u8> {
    let mut out = Vec::new();
    write_field(&mut out, f).expect("writing to a Vec cannot fail");
    out
}

pub fn read_field<R: Read>(r: &mut R) -> Result<TorusField> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("missing TF2D magic".into()));
    }
    let n = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
    let grid = super::SpectralGrid::get(n)?;
    let mut payload = vec![0u8; 16 * n * n];
    r.read_exact(&mut payload)?;
    let mut modes = vec![Complex64::new(0.0, 0.0); n * n];
    let mut chunks = payload.chunks_exact(8);
    let mut next = || f64::from_le_bytes(chunks.next().expect("sized payload").try_into().expect("8 bytes"));
    for k1 in k_range(n) {
        for k2 in k_range(n) {
            let c = Complex64::new(next(), next());
            if let Some(idx) = grid.index_of((k1, k2)) {
                modes[idx] = c;
            }
        }
    }
    TorusField::from_modes(n, modes)
}

/// Debug dump: `{"n": N, "modes": {"k1,k2": [re, im], ...}}` over the
/// nonzero coefficients.
pub fn field_to_json(f: &TorusField) -> serde_json::Value {
    let mut modes = serde_json::Map::new();
    for k1 in k_range(f.n()) {
        for k2 in k_range(f.n()) {
            let c = f.coeff((k1, k2));
            if c.re != 0.0 || c.im != 0.0 {
                modes.insert(format!("{k1},{k2}"), serde_json::json!([c.re, c.im]));
            }
        }
    }
    serde_json::json!({ "n": f.n(), "modes": modes })
}

pub fn field_from_json(v: &serde_json::Value) -> Result<TorusField> {
    let n = v["n"]
        .as_u64()
        .ok_or_else(|| Error::Format("field JSON needs integer `n`".into()))? as usize;
    let grid = super::SpectralGrid::get(n)?;
    let mut modes = vec![Complex64::new(0.0, 0.0); n * n];
    let entries = v["modes"]
        .as_object()
        .ok_or_else(|| Error::Format("field JSON needs object `modes`".into()))?;
    for (key, val) in entries {
        let (a, b) = key
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("bad mode key {key:?}")))?;
        let k = (
            a.trim().parse::<i64>().map_err(|e| Error::Format(e.to_string()))?,
            b.trim().parse::<i64>().map_err(|e| Error::Format(e.to_string()))?,
        );
        let pair = val
            .as_array()
            .filter(|p| p.len() == 2)
            .ok_or_else(|| Error::Format(format!("mode {key} needs [re, im]")))?;
        let re = pair[0].as_f64().unwrap_or(f64::NAN);
        let im = pair[1].as_f64().unwrap_or(f64::NAN);
        if let Some(idx) = grid.index_of(k) {
            modes[idx] = Complex64::new(re, im);
        }
    }
    TorusField::from_modes(n, modes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathManifest {
    pub horizon: f64,
    pub steps: usize,
    pub grid_size: usize,
    pub dt: f64,
    pub config_hash: String,
    pub data_file: String,
}

/// Write `<stem>.path` (concatenated field records) and `<stem>.json`.
pub fn write_path(dir: &Path, stem: &str, path: &TimePath, config_hash: &str) -> Result<PathManifest> {
    let data_file = format!("{stem}.path");
    let mut bytes = Vec::new();
    for f in path.steps() {
        write_field(&mut bytes, f)?;
    }
    std::fs::write(dir.join(&data_file), bytes)?;
    let manifest = PathManifest {
        horizon: path.horizon(),
        steps: path.len() - 1,
        grid_size: path.n(),
        dt: path.dt(),
        config_hash: config_hash.to_string(),
        data_file,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.json")), json)?;
    Ok(manifest)
}

pub fn read_path(dir: &Path, stem: &str) -> Result<(PathManifest, TimePath)> {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let manifest: PathManifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let bytes = std::fs::read(dir.join(&manifest.data_file))?;
    let mut cursor = std::io::Cursor::new(bytes);
    let steps = (0..=manifest.steps)
        .map(|_| read_field(&mut cursor))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest.clone(), TimePath::new(steps, manifest.dt)?))
}
