//! Binary P5 PGM images mapped linearly to `[0, 1]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use subgrad_langevin::Image;

use crate::error::{CliError, CliResult};

/// Default max value for written images (16-bit big-endian samples).
pub const DEFAULT_MAXVAL: u16 = 65535;

pub fn read_image_pgm(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_pgm(&bytes)
}

/// Parses a P5 image; sample values are divided by the header max value.
pub fn decode_pgm(bytes: &[u8]) -> CliResult<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(CliError::Pgm(format!("expected magic P5, found {:?}", String::from_utf8_lossy(magic))));
    }
    let width = parse_header_number(bytes, &mut pos, "width")?;
    let height = parse_header_number(bytes, &mut pos, "height")?;
    let maxval = parse_header_number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(CliError::Pgm(format!("unsupported max value {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(CliError::Pgm(format!("empty image {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(CliError::Pgm("missing whitespace after header".into())),
    }
    let wide = maxval > 255;
    let sample_bytes = if wide { 2 } else { 1 };
    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n * sample_bytes {
        return Err(CliError::Pgm(format!("raster has {} bytes, expected {}", raster.len(), n * sample_bytes)));
    }
    let scale = 1.0 / maxval as f64;
    let data = (0..n)
        .map(|i| {
            let v = if wide {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
            } else {
                raster[i] as f64
            };
            v * scale
        })
        .collect();
    Ok(Image::new(height, width, data)?)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> CliResult<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(CliError::Pgm("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> CliResult<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Pgm(format!("malformed {what} {:?}", String::from_utf8_lossy(tok))))
}

/// Clamps to `[0, 1]` and quantizes to `maxval` levels.
pub fn encode_pgm(image: &Image, maxval: u16) -> CliResult<Vec<u8>> {
    if maxval == 0 {
        return Err(CliError::Pgm("max value must be positive".into()));
    }
    let mut out = format!("P5\n{} {}\n{}\n", image.cols(), image.rows(), maxval).into_bytes();
    let m = maxval as f64;
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * m).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&q.to_be_bytes());
        } else {
            out.push(q as u8);
        }
    }
    Ok(out)
}

pub fn write_image_pgm(path: &Path, image: &Image) -> CliResult<()> {
    write_image_pgm_with_maxval(path, image, DEFAULT_MAXVAL)
}

pub fn write_image_pgm_with_maxval(path: &Path, image: &Image, maxval: u16) -> CliResult<()> {
    let bytes = encode_pgm(image, maxval)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Full-precision sidecar: one CSV row per image row.
pub fn write_image_csv(path: &Path, image: &Image) -> CliResult<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    for r in 0..image.rows() {
        let row: Vec<String> = (0..image.cols()).map(|c| image.get(r, c).to_string()).collect();
        writeln!(f, "{}", row.join(",")).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
