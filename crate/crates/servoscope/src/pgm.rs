//! Binary PGM (P5, maxval 255).

use std::fs;
use std::path::Path;

use servoscope_core::vision::ImageState;

use crate::error::{HarnessError, Result};

pub fn encode(img: &ImageState) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Parses a P5 image. Comments (`#` to end of line) are allowed in the
/// header; the single whitespace byte after maxval starts the raster.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<ImageState> {
    let bad = |msg: &str| HarnessError::format(origin, msg);
    if bytes.get(..2) != Some(b"P5".as_slice()) {
        return Err(bad("not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after header"));
    }
    let raster = &bytes[pos + 1..];
    if raster.len() != width * height {
        return Err(bad(&format!("raster has {} bytes, expected {}", raster.len(), width * height)));
    }
    ImageState::new(width, height, raster.to_vec()).map_err(|e| bad(&e.to_string()))
}

pub fn write(img: &ImageState, path: &Path) -> Result<()> {
    fs::write(path, encode(img)).map_err(|e| HarnessError::io(path, e))
}

pub fn read(path: &Path) -> Result<ImageState> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode(&bytes, path)
}
