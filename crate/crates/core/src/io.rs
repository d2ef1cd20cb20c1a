//! Binary field files.
//!
//! UGF1 layout: the 4-byte magic `UGF1`, the side `n` as a little-endian
//! `u32`, then `n * n` little-endian `f64` values in row-major order.
//!
//! Masks are stored either as UGF1 (values 0/1) or as 8-bit binary PGM
//! (`P5`), where any nonzero pixel is an interior point.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{check_side, GridField, InteriorMask};
use crate::stencil::{Coefficients, PdeProblem};

pub const UGF1_MAGIC: &[u8; 4] = b"UGF1";

pub fn encode_field(field: &GridField) -> Vec<u8> {
    let n = field.n();
    let mut out = Vec::with_capacity(8 + 8 * n * n);
    out.extend_from_slice(UGF1_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for v in field.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8], path: &Path) -> Result<GridField> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "truncated header"));
    }
    if &bytes[..4] != UGF1_MAGIC {
        return Err(Error::format(path, "bad magic, expected UGF1"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    check_side(n)?;
    let payload = &bytes[8..];
    if payload.len() != 8 * n * n {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, expected {} for n = {n}",
                payload.len(),
                8 * n * n
            ),
        ));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GridField::from_vec(n, data)
}

pub fn write_field(path: impl AsRef<Path>, field: &GridField) -> Result<()> {
    let mut file = fs::File::create(path.as_ref())?;
    file.write_all(&encode_field(field))?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<GridField> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_field(&bytes, path)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &InteriorMask) -> Result<()> {
    write_field(path, &mask.to_field())
}

/// Reads a mask stored as UGF1 or binary PGM, chosen by magic bytes.
pub fn read_mask(path: impl AsRef<Path>) -> Result<InteriorMask> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P5") {
        return decode_pgm_mask(&bytes, path);
    }
    let field = decode_field(&bytes, path)?;
    InteriorMask::from_vec(field.n(), field.into_vec())
}

/// Writes the mask as an 8-bit PGM, interior = 255.
pub fn write_mask_pgm(path: impl AsRef<Path>, mask: &InteriorMask) -> Result<()> {
    let n = mask.n();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(mask.as_slice().iter().map(|&m| if m != 0.0 { 255u8 } else { 0 }));
    fs::write(path, out)?;
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CdrScalars {
    alpha: f64,
    beta: f64,
}

/// Writes a problem as a directory: `mask.ugf`, `b.ugf`, `f.ugf`, plus
/// `k2.ugf` (Helmholtz) or `vx.ugf`, `vy.ugf` and `cdr.json` (convection).
pub fn write_problem_dir(dir: impl AsRef<Path>, problem: &PdeProblem) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_mask(dir.join("mask.ugf"), problem.mask())?;
    write_field(dir.join("b.ugf"), problem.b())?;
    write_field(dir.join("f.ugf"), problem.f())?;
    match problem.coefficients() {
        Coefficients::Poisson => {}
        Coefficients::Helmholtz { k2 } => write_field(dir.join("k2.ugf"), k2)?,
        Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
            write_field(dir.join("vx.ugf"), vx)?;
            write_field(dir.join("vy.ugf"), vy)?;
            let json = serde_json::to_vec(&CdrScalars {
                alpha: *alpha,
                beta: *beta,
            })?;
            fs::write(dir.join("cdr.json"), json)?;
        }
    }
    Ok(())
}

/// Reads a problem directory. The mask may be `mask.ugf` or `mask.pgm`;
/// a missing `f.ugf` means zero forcing.
pub fn read_problem_dir(dir: impl AsRef<Path>) -> Result<PdeProblem> {
    let dir = dir.as_ref();
    let mask = if dir.join("mask.ugf").exists() {
        read_mask(dir.join("mask.ugf"))?
    } else {
        read_mask(dir.join("mask.pgm"))?
    };
    let n = mask.n();
    let b = read_field(dir.join("b.ugf"))?;
    let f = if dir.join("f.ugf").exists() {
        read_field(dir.join("f.ugf"))?
    } else {
        GridField::zeros(n)?
    };
    let coeffs = if dir.join("k2.ugf").exists() {
        Coefficients::Helmholtz {
            k2: read_field(dir.join("k2.ugf"))?,
        }
    } else if dir.join("cdr.json").exists() {
        let path = dir.join("cdr.json");
        let s: CdrScalars = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        Coefficients::ConvDiffReact {
            vx: read_field(dir.join("vx.ugf"))?,
            vy: read_field(dir.join("vy.ugf"))?,
            alpha: s.alpha,
            beta: s.beta,
        }
    } else {
        Coefficients::Poisson
    };
    PdeProblem::new(f, b, mask, coeffs)
}

fn decode_pgm_mask(bytes: &[u8], path: &Path) -> Result<InteriorMask> {
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(path, "truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|c| c.is_ascii_digit()) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, "malformed PGM header"))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(path, "only 8-bit PGM masks are supported"));
    }
    if width != height {
        return Err(Error::format(path, format!("mask must be square, got {width}x{height}")));
    }
    check_side(width)?;
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes
        .get(pos..pos + width * height)
        .ok_or_else(|| Error::format(path, "truncated PGM raster"))?;
    let n = width;
    InteriorMask::from_fn_clipped(n, |i, j| raster[i * n + j] != 0)
}
