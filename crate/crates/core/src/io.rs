//! Bit-exact readers and writers for the supported interchange formats:
//! ESRI-style ASCII grids, PGM images (P2/P5), and 6-line world files.
//!
//! ASCII grids carry corner-based georeferencing (`xllcorner`/`yllcorner`);
//! internally `(c, f)` is always the CENTER of the top-left pixel, so the
//! reader and writer convert by half a cell. Values are written with
//! round-trip decimal precision: saving and re-loading reproduces every
//! value, the nodata mask, and the derived transform exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, RasterGrid};

const ASCII_KEYS: [&str; 5] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize"];

/// Reads an ESRI-style ASCII grid.
///
/// Header keys are case-insensitive: `ncols`, `nrows`, `xllcorner`,
/// `yllcorner`, `cellsize`, and optional `NODATA_value`. The body holds
/// `nrows*ncols` whitespace-separated numbers, top row first. Non-finite
/// cells are rejected as non-numeric.
pub fn load_ascii_grid(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let text = fs::read_to_string(path)?;
    parse_ascii_grid(&text)
}

fn parse_ascii_grid(text: &str) -> Result<RasterGrid> {
    let lines: Vec<&str> = text.lines().collect();

    // Header: leading lines of the form `key value`.
    let mut header: Vec<(String, String, usize)> = Vec::new();
    let mut body_start = lines.len();
    for (i, line) in lines.iter().enumerate() {
        let mut it = line.split_whitespace();
        match (it.next(), it.next()) {
            (Some(key), Some(value))
                if key.starts_with(|c: char| c.is_ascii_alphabetic()) && it.next().is_none() =>
            {
                header.push((key.to_ascii_lowercase(), value.to_string(), i + 1));
            }
            _ => {
                body_start = i;
                break;
            }
        }
    }

    let first_body_line = body_start + 1;
    let lookup = |key: &'static str| -> Result<(String, usize)> {
        header
            .iter()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, line)| (v.clone(), *line))
            .ok_or(Error::MissingHeaderKey {
                key,
                line: first_body_line,
            })
    };

    let parse_count = |key: &'static str| -> Result<usize> {
        let (token, line) = lookup(key)?;
        match token.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(Error::InvalidHeaderValue { key, token, line }),
        }
    };
    let parse_real = |key: &'static str| -> Result<f64> {
        let (token, line) = lookup(key)?;
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::InvalidHeaderValue { key, token, line }),
        }
    };

    for key in ASCII_KEYS {
        lookup(key)?;
    }
    let cols = parse_count("ncols")?;
    let rows = parse_count("nrows")?;
    let xll = parse_real("xllcorner")?;
    let yll = parse_real("yllcorner")?;
    let cell = {
        let (token, line) = lookup("cellsize")?;
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => v,
            _ => Err(Error::InvalidHeaderValue {
                key: "cellsize",
                token,
                line,
            })?,
        }
    };
    let nodata = match header.iter().find(|(k, _, _)| k == "nodata_value") {
        Some((_, token, line)) => match token.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                return Err(Error::InvalidHeaderValue {
                    key: "nodata_value",
                    token: token.clone(),
                    line: *line,
                })
            }
        },
        None => None,
    };

    let expected = rows * cols;
    let mut values = Vec::with_capacity(expected);
    let mut last_line = first_body_line;
    for (i, line) in lines.iter().enumerate().skip(body_start) {
        for token in line.split_whitespace() {
            if values.len() == expected {
                return Err(Error::CellCountMismatch {
                    expected,
                    found: expected + 1,
                    line: i + 1,
                });
            }
            match token.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::NonNumericCell {
                        token: token.to_string(),
                        line: i + 1,
                    })
                }
            }
            last_line = i + 1;
        }
    }
    if values.len() != expected {
        return Err(Error::CellCountMismatch {
            expected,
            found: values.len(),
            line: last_line,
        });
    }

    let geo = GeoTransform::north_up(
        cell,
        xll + cell / 2.0,
        yll + (rows as f64 - 0.5) * cell,
    );
    Ok(RasterGrid::new(rows, cols, values, nodata).with_geo(geo))
}

/// Writes a grid as an ASCII grid readable by [`load_ascii_grid`].
///
/// The transform must be axis-aligned with square cells (`b == d == 0`,
/// `a == -e`, `a > 0`); ASCII grids cannot express anything else. A grid
/// with no transform is written at origin (0,0) with unit cells.
pub fn save_ascii_grid(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_ascii_grid(grid)?)?;
    Ok(())
}

/// The exact file content [`save_ascii_grid`] writes.
pub fn render_ascii_grid(grid: &RasterGrid) -> Result<String> {
    let geo = grid
        .geo()
        .unwrap_or_else(|| GeoTransform::north_up(1.0, 0.5, grid.rows() as f64 - 0.5));
    if !geo.is_axis_aligned() || geo.a != -geo.e || geo.a <= 0.0 {
        return Err(Error::RotatedGridUnsupported);
    }
    let cell = geo.a;
    let xll = geo.c - cell / 2.0;
    let yll = geo.f - (grid.rows() as f64 - 0.5) * cell;

    let mut out = String::new();
    out.push_str(&format!("ncols {}\n", grid.cols()));
    out.push_str(&format!("nrows {}\n", grid.rows()));
    out.push_str(&format!("xllcorner {}\n", xll));
    out.push_str(&format!("yllcorner {}\n", yll));
    out.push_str(&format!("cellsize {}\n", cell));
    if let Some(nd) = grid.nodata() {
        out.push_str(&format!("NODATA_value {}\n", nd));
    }
    for row in 0..grid.rows() {
        let mut line = String::new();
        for col in 0..grid.cols() {
            if col > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{}", grid.get(row, col)));
        }
        line.push('\n');
        out.push_str(&line);
    }
    Ok(out)
}

/// Reads a PGM image (P2 ASCII or P5 binary, maxval up to 65535).
///
/// P5 samples wider than one byte are big-endian. The result carries no
/// georeferencing; attach one from [`read_world_file`].
pub fn load_pgm(path: impl AsRef<Path>) -> Result<RasterGrid> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

fn parse_pgm(bytes: &[u8]) -> Result<RasterGrid> {
    let mut pos = 0usize;

    // PGM headers allow `#` comments between tokens.
    let mut next_token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        if pos >= bytes.len() {
            return None;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Some(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(bytes).unwrap_or_default();
    if magic != "P2" && magic != "P5" {
        return Err(Error::UnsupportedMagic { magic });
    }

    let mut dim = |name: &str| -> Result<usize> {
        let token = next_token(bytes).ok_or(Error::TruncatedPayload {
            expected: 1,
            found: 0,
        })?;
        match token.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(Error::NonNumericCell {
                token: format!("{name} {token}"),
                line: 1,
            }),
        }
    };
    let cols = dim("width")?;
    let rows = dim("height")?;
    let maxval_token = next_token(bytes).ok_or(Error::TruncatedPayload {
        expected: 1,
        found: 0,
    })?;
    let maxval: u64 = maxval_token.parse().map_err(|_| Error::NonNumericCell {
        token: maxval_token.clone(),
        line: 1,
    })?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedMaxval { maxval });
    }

    let count = rows * cols;
    let mut values = Vec::with_capacity(count);
    if magic == "P2" {
        while values.len() < count {
            let token = next_token(bytes).ok_or(Error::TruncatedPayload {
                expected: count,
                found: values.len(),
            })?;
            let v: u64 = token.parse().map_err(|_| Error::NonNumericCell {
                token: token.clone(),
                line: 1,
            })?;
            values.push(v as f64);
        }
    } else {
        // Exactly one whitespace byte separates the header from raw samples.
        pos += 1;
        let width = if maxval > 255 { 2 } else { 1 };
        let need = count * width;
        let avail = bytes.len().saturating_sub(pos);
        if avail < need {
            return Err(Error::TruncatedPayload {
                expected: count,
                found: avail / width,
            });
        }
        for i in 0..count {
            let at = pos + i * width;
            let v = if width == 2 {
                u16::from_be_bytes([bytes[at], bytes[at + 1]]) as f64
            } else {
                bytes[at] as f64
            };
            values.push(v);
        }
    }

    Ok(RasterGrid::new(rows, cols, values, None))
}

/// Reads a 6-line world file: `a d b e c f`, one number per line, where
/// `(c, f)` is the center of the top-left pixel.
pub fn read_world_file(path: impl AsRef<Path>) -> Result<GeoTransform> {
    let text = fs::read_to_string(path)?;
    parse_world_file(&text)
}

fn parse_world_file(text: &str) -> Result<GeoTransform> {
    let mut nums = [0.0f64; 6];
    let mut found = 0usize;
    for (i, line) in text.lines().enumerate() {
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        if found == 6 {
            found += 1;
            break;
        }
        match token.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                nums[found] = v;
                found += 1;
            }
            _ => {
                return Err(Error::NonNumericLine {
                    token: token.to_string(),
                    line: i + 1,
                })
            }
        }
    }
    if found != 6 {
        return Err(Error::WrongLineCount { found });
    }
    let [a, d, b, e, c, f] = nums;
    Ok(GeoTransform::new(a, b, c, d, e, f))
}
