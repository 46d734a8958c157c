//! Grayscale PFM ("Pf") depth maps: little-endian floats (negative scale
//! field) stored bottom-up per the format convention.

use super::write_atomic;
use crate::image::DepthImage;
use crate::{Error, Result};
use std::path::Path;

pub fn write_pfm(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(32 + depth.depths.len() * 4);
    bytes.extend_from_slice(format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).as_bytes());
    // Rows bottom-up.
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            bytes.extend_from_slice(&(depth.get(x, y) as f32).to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_pfm(path: &Path) -> Result<DepthImage> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut cursor = 0usize;
    let header = read_line(&bytes, &mut cursor);
    if header.trim() != "Pf" {
        return Err(Error::Data(format!(
            "{}: not a grayscale PFM (header {:?})",
            path.display(),
            header.trim()
        )));
    }
    let dims = read_line(&bytes, &mut cursor);
    let mut it = dims.split_whitespace();
    let (w, h) = match (it.next(), it.next()) {
        (Some(w), Some(h)) => (
            w.parse::<usize>()
                .map_err(|_| Error::Data(format!("{}: bad width", path.display())))?,
            h.parse::<usize>()
                .map_err(|_| Error::Data(format!("{}: bad height", path.display())))?,
        ),
        _ => return Err(Error::Data(format!("{}: malformed dimensions", path.display()))),
    };
    let scale: f64 = read_line(&bytes, &mut cursor)
        .trim()
        .parse()
        .map_err(|_| Error::Data(format!("{}: malformed scale", path.display())))?;
    let little_endian = scale < 0.0;

    let need = w * h * 4;
    if bytes.len() < cursor + need {
        return Err(Error::Data(format!(
            "{}: truncated float data ({} bytes, need {need})",
            path.display(),
            bytes.len() - cursor
        )));
    }
    let mut depth = DepthImage::new(w, h);
    for row in 0..h {
        let y = h - 1 - row; // stored bottom-up
        for x in 0..w {
            let off = cursor + 4 * (row * w + x);
            let raw: [u8; 4] = bytes[off..off + 4].try_into().unwrap();
            let v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
            depth.set(x, y, v as f64);
        }
    }
    Ok(depth)
}

fn read_line(bytes: &[u8], cursor: &mut usize) -> String {
    let start = *cursor;
    while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
        *cursor += 1;
    }
    let line = String::from_utf8_lossy(&bytes[start..*cursor]).into_owned();
    if *cursor < bytes.len() {
        *cursor += 1; // consume the newline
    }
    line
}
