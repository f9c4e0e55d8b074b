//! Binary PGM (P5) grayscale images.

use std::path::Path;

use crate::error::{Error, Result};

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::dim(
            "pgm",
            format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                pixels.len()
            ),
        ));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(width, height, pixels)?).map_err(|e| Error::io(path, e))
}

/// Parses a P5 file with maxval 255; returns `(width, height, pixels)`.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .unwrap_or("")
                .to_string(),
        );
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::Format(format!(
            "PGM magic `{}`, expected P5",
            fields[0]
        )));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field `{s}`")))
    };
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(Error::Format(format!("PGM maxval {max}, expected 255")));
    }
    let raster = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    Ok((w, h, raster.to_vec()))
}

pub fn read(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_round_trip() {
        let px: Vec<u8> = (0..64 * 64).map(|i| (i % 251) as u8).collect();
        let bytes = encode(64, 64, &px).unwrap();
        assert!(bytes.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(decode(&bytes).unwrap(), (64, 64, px));
        assert!(encode(2, 2, &[0; 3]).is_err());
        assert!(decode(&bytes[..20]).is_err());
    }
}
