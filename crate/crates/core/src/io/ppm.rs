//! Binary PPM (P6, maxval 255) reader and writer.

use super::write_atomic;
use crate::image::RgbImage;
use crate::{Error, Result};
use std::path::Path;

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(32 + image.pixels.len() * 3);
    bytes.extend_from_slice(format!("P6\n{} {}\n255\n", image.width, image.height).as_bytes());
    for p in &image.pixels {
        for k in 0..3 {
            bytes.push((p[k].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_atomic(path, &bytes)
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())));
    let bytes = bytes?;
    let mut cursor = 0usize;

    let magic = next_token(&bytes, &mut cursor)
        .ok_or_else(|| Error::Data(format!("{}: missing PPM magic", path.display())))?;
    if magic != b"P6" {
        return Err(Error::Data(format!(
            "{}: not a binary PPM (magic {:?})",
            path.display(),
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_usize(&bytes, &mut cursor, path, "width")?;
    let height = parse_usize(&bytes, &mut cursor, path, "height")?;
    let maxval = parse_usize(&bytes, &mut cursor, path, "maxval")?;
    if maxval != 255 {
        return Err(Error::Data(format!(
            "{}: unsupported maxval {maxval} (expected 255)",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    cursor += 1;
    let need = width * height * 3;
    if bytes.len() < cursor + need {
        return Err(Error::Data(format!(
            "{}: truncated pixel data ({} bytes, need {})",
            path.display(),
            bytes.len().saturating_sub(cursor),
            need
        )));
    }
    let mut image = RgbImage::new(width, height);
    for (i, px) in image.pixels.iter_mut().enumerate() {
        for k in 0..3 {
            *px[k..].first_mut().unwrap() = bytes[cursor + 3 * i + k] as f64 / 255.0;
        }
    }
    Ok(image)
}

/// Returns the next whitespace-delimited token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], cursor: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
            *cursor += 1;
        }
        if *cursor < bytes.len() && bytes[*cursor] == b'#' {
            while *cursor < bytes.len() && bytes[*cursor] != b'\n' {
                *cursor += 1;
            }
            continue;
        }
        break;
    }
    let start = *cursor;
    while *cursor < bytes.len() && !bytes[*cursor].is_ascii_whitespace() {
        *cursor += 1;
    }
    (*cursor > start).then(|| &bytes[start..*cursor])
}

fn parse_usize(bytes: &[u8], cursor: &mut usize, path: &Path, what: &str) -> Result<usize> {
    let tok = next_token(bytes, cursor)
        .ok_or_else(|| Error::Data(format!("{}: missing {what}", path.display())))?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Data(format!("{}: malformed {what}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_quantized_values() {
        let mut img = RgbImage::new(3, 2);
        for (i, p) in img.pixels.iter_mut().enumerate() {
            // Values already on the 8-bit grid round-trip exactly.
            *p = [
                (i as f64 * 40.0).round() / 255.0,
                ((i * 13) as f64).round() / 255.0,
                1.0,
            ];
        }
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 2\n255\n....").unwrap();
        assert!(read_ppm(&path).is_err());
        std::fs::write(&path, b"P6\n4 4\n255\nxx").unwrap();
        assert!(read_ppm(&path).is_err());
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut data = b"P6\n# a comment\n1 1\n255\n".to_vec();
        data.extend_from_slice(&[255, 0, 128]);
        std::fs::write(&path, data).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.get(0, 0)[0], 1.0);
        assert_eq!(img.get(0, 0)[1], 0.0);
    }
}
