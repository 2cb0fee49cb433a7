//! SQGF fields and CSV tables.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use sqg_core::spectral::{GridSpec, PhysicalField};

const MAGIC: &[u8; 4] = b"SQGF";
const VERSION: u32 = 1;

/// `SQGF`, u32 version, u32 n, then n² little-endian f64 with x₁ fastest.
pub fn encode_sqgf(field: &PhysicalField) -> Vec<u8> {
    let n = field.grid().n() as u32;
    let mut out = Vec::with_capacity(12 + 8 * field.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sqgf(bytes: &[u8]) -> Result<PhysicalField> {
    ensure!(bytes.len() >= 12 && &bytes[..4] == MAGIC, "not an SQGF file");
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4-byte slice"));
    let version = word(4);
    ensure!(version == VERSION, "unsupported SQGF version {version}");
    let n = word(8) as usize;
    let expected = 12 + 8 * n * n;
    ensure!(
        bytes.len() == expected,
        "SQGF payload for n = {n} needs {expected} bytes, found {}",
        bytes.len()
    );
    let values = bytes[12..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(PhysicalField::new(GridSpec::new(n)?, values)?)
}

pub fn write_sqgf(path: &Path, field: &PhysicalField) -> Result<()> {
    fs::write(path, encode_sqgf(field)).with_context(|| format!("writing {}", path.display()))
}

pub fn read_sqgf(path: &Path) -> Result<PhysicalField> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_sqgf(&bytes).with_context(|| format!("decoding {}", path.display()))
}

/// 17 significant digits, so every value round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header plus one row per record, LF line endings.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let cells: Vec<String> = row.iter().map(|x| fmt_f64(*x)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

/// Inverse of [`write_csv`]: the header and the numeric rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let Some(head) = lines.next() else {
        bail!("{} is empty", path.display());
    };
    let header: Vec<String> = head.split(',').map(str::to_string).collect();
    let rows = lines
        .enumerate()
        .map(|(i, line)| {
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .with_context(|| format!("{} row {}", path.display(), i + 1))?;
            ensure!(row.len() == header.len(), "{} row {} has {} cells", path.display(), i + 1, row.len());
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}
