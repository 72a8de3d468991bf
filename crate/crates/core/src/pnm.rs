//! Binary portable anymap I/O (P5 graymap, P6 pixmap), 8 bits per sample.
//!
//! Class masks are stored as P5 with one byte per pixel holding the class
//! index and `maxval` 255. Images are P5 (one channel) or P6 (three
//! channels); intensities are quantized to `round(v * 255)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{ClassMask, Image};

fn header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_mask(mask: &ClassMask) -> Vec<u8> {
    let mut out = header("P5", mask.width(), mask.height());
    out.extend_from_slice(mask.labels());
    out
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => panic!("cannot encode a {c}-channel image"),
    };
    let mut out = header(magic, image.width(), image.height());
    out.extend(image.data().iter().map(|&v| quantize(v)));
    out
}

struct Raw<'a> {
    channels: usize,
    width: usize,
    height: usize,
    pixels: &'a [u8],
}

fn parse(bytes: &[u8]) -> std::result::Result<Raw<'_>, String> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match tokens[0] {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format!("unsupported magic `{m}`")),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("bad number `{s}`: {e}"));
    let width = num(tokens[1])?;
    let height = num(tokens[2])?;
    if num(tokens[3])? != 255 {
        return Err("only maxval 255 is supported".into());
    }
    let expected = width * height * channels;
    let pixels = bytes.get(pos..).unwrap_or(&[]);
    if pixels.len() != expected {
        return Err(format!(
            "raster holds {} bytes, expected {expected}",
            pixels.len()
        ));
    }
    Ok(Raw {
        channels,
        width,
        height,
        pixels,
    })
}

fn format_err(what: &'static str, path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes a P5 class mask. `classes = None` infers `max(label) + 1`, at
/// least 2.
pub fn decode_mask(bytes: &[u8], classes: Option<usize>, path: &Path) -> Result<ClassMask> {
    let raw = parse(bytes).map_err(|r| format_err("mask", path, r))?;
    if raw.channels != 1 {
        return Err(format_err("mask", path, "masks must be P5"));
    }
    let classes = classes.unwrap_or_else(|| {
        (raw.pixels.iter().copied().max().unwrap_or(0) as usize + 1).max(2)
    });
    ClassMask::new(raw.height, raw.width, classes, raw.pixels.to_vec())
        .map_err(|e| format_err("mask", path, e.to_string()))
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    let raw = parse(bytes).map_err(|r| format_err("image", path, r))?;
    let data = raw.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Image::new(raw.height, raw.width, raw.channels, data)
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path, classes: Option<usize>) -> Result<ClassMask> {
    decode_mask(&read_bytes(path)?, classes, path)
}

pub fn write_mask(path: &Path, mask: &ClassMask) -> Result<()> {
    write_bytes(path, &encode_mask(mask))
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode_image(&read_bytes(path)?, path)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_bytes(path, &encode_image(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = ClassMask::new(2, 3, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let bytes = encode_mask(&m);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 1, 2, 2, 1, 0]);
    }

    #[test]
    fn comments_are_skipped() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\x01";
        let m = decode_mask(bytes, None, Path::new("x")).unwrap();
        assert_eq!(m.labels(), &[0, 1]);
        assert_eq!(m.classes(), 2);
    }

    #[test]
    fn truncated_raster_is_rejected() {
        let bytes = b"P5\n2 2\n255\n\x00";
        assert!(decode_mask(bytes, None, Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn image_round_trip_is_byte_exact(h in 1usize..6, w in 1usize..6, rgb in any::<bool>(), seed in any::<u64>()) {
            let c = if rgb { 3 } else { 1 };
            let data: Vec<f32> = (0..h * w * c)
                .map(|i| ((seed.wrapping_mul(i as u64 + 7) >> 13) % 256) as f32 / 255.0)
                .collect();
            let img = Image::new(h, w, c, data).unwrap();
            let bytes = encode_image(&img);
            let back = decode_image(&bytes, Path::new("x")).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_image(&back), bytes);
        }
    }
}
