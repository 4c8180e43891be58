//! Lossless image files: 8/16-bit PNG and binary PGM/PPM.
//!
//! Depths other than 8 and 16 are stored left-shifted into a 16-bit file with
//! a sidecar `<file>.bits.json` holding `{"container_bits": N, "shift": 16 - N}`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitcore::{ImageTensor, Shape};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub container_bits: u32,
    pub shift: u32,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bits.json");
    PathBuf::from(s)
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

/// Interleaved samples to planar codes.
fn deinterleave(samples: &[u16], h: usize, w: usize, c: usize) -> Vec<u16> {
    let mut codes = vec![0u16; samples.len()];
    for (i, &s) in samples.iter().enumerate() {
        let (pixel, ch) = (i / c, i % c);
        codes[ch * h * w + pixel] = s;
    }
    codes
}

fn interleave(img: &ImageTensor) -> Vec<u16> {
    let (hw, c) = (img.height() * img.width(), img.channels());
    let mut out = vec![0u16; img.codes().len()];
    for ch in 0..c {
        for (p, &v) in img.channel(ch).iter().enumerate() {
            out[p * c + ch] = v;
        }
    }
    debug_assert_eq!(out.len(), hw * c);
    out
}

fn bytes_to_samples(raw: &[u8], sixteen: bool) -> Vec<u16> {
    if sixteen {
        raw.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        raw.iter().map(|&b| u16::from(b)).collect()
    }
}

fn samples_to_bytes(samples: &[u16], sixteen: bool) -> Vec<u8> {
    if sixteen {
        samples.iter().flat_map(|s| s.to_be_bytes()).collect()
    } else {
        samples.iter().map(|&s| s as u8).collect()
    }
}

/// Decodes a PNG or PNM byte stream into a full-depth 8- or 16-bit image.
pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(Error::UnsupportedImage(format!(
            "PNM variant P{} (only binary P5/P6 are supported)",
            bytes[1] as char
        )))
    } else {
        Err(format_err(0, "unrecognized image signature (expected PNG or P5/P6 PNM)"))
    }
}

fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| format_err(0, format!("PNG: {e}")))?;
    let (color, depth) = reader.output_color_type();
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::UnsupportedImage(format!("PNG color type {other:?} (need grayscale or RGB)"))),
    };
    let sixteen = match depth {
        png::BitDepth::Eight => false,
        png::BitDepth::Sixteen => true,
        other => return Err(Error::UnsupportedImage(format!("PNG bit depth {other:?} (need 8 or 16)"))),
    };
    let size = reader.output_buffer_size().ok_or_else(|| format_err(0, "PNG image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(0, format!("PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let row = w * channels * if sixteen { 2 } else { 1 };
    let mut raw = Vec::with_capacity(row * h);
    for y in 0..h {
        raw.extend_from_slice(&buf[y * info.line_size..y * info.line_size + row]);
    }
    let codes = deinterleave(&bytes_to_samples(&raw, sixteen), h, w, channels);
    ImageTensor::new(Shape::new(h, w, channels), codes, if sixteen { 16 } else { 8 })
}

/// Header tokens of a binary PNM, honoring `#` comments.
fn pnm_header(bytes: &[u8]) -> Result<([usize; 3], usize)> {
    let mut pos = 2;
    let mut values = [0usize; 3];
    for (i, what) in ["width", "height", "maxval"].iter().enumerate() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(start, format!("expected PNM {what}")));
        }
        values[i] = std::str::from_utf8(&bytes[start..pos])
            .expect("ASCII digits")
            .parse()
            .map_err(|_| format_err(start, format!("PNM {what} out of range")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((values, pos + 1)),
        _ => Err(format_err(pos, "expected a single whitespace byte before the PNM raster")),
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<ImageTensor> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let ([w, h, maxval], start) = pnm_header(bytes)?;
    let sixteen = match maxval {
        255 => false,
        65535 => true,
        other => return Err(Error::UnsupportedImage(format!("PNM maxval {other} (need 255 or 65535)"))),
    };
    if w == 0 || h == 0 {
        return Err(format_err(2, "PNM image has zero size"));
    }
    let need = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(channels * if sixteen { 2 } else { 1 }))
        .ok_or_else(|| format_err(2, "PNM dimensions overflow"))?;
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(format_err(bytes.len(), format!("PNM raster truncated: {} of {need} bytes", raster.len())));
    }
    let codes = deinterleave(&bytes_to_samples(&raster[..need], sixteen), h, w, channels);
    ImageTensor::new(Shape::new(h, w, channels), codes, if sixteen { 16 } else { 8 })
}

fn is_png(path: &Path) -> Result<bool> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(true),
        Some("pgm" | "ppm" | "pnm") => Ok(false),
        _ => Err(invalid(format!("{}: unknown image extension (use .png, .pgm, .ppm or .pnm)", path.display()))),
    }
}

/// Encodes an 8- or 16-bit image in the format chosen by `png`.
pub fn encode_image(img: &ImageTensor, png: bool) -> Result<Vec<u8>> {
    let sixteen = match img.container_bits() {
        8 => false,
        16 => true,
        n => return Err(invalid(format!("{n}-bit images need a sidecar; use save_image"))),
    };
    let data = samples_to_bytes(&interleave(img), sixteen);
    let (h, w, c) = (img.height(), img.width(), img.channels());
    if png {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(if sixteen { png::BitDepth::Sixteen } else { png::BitDepth::Eight });
        let png_err = |e: png::EncodingError| Error::Io(std::io::Error::other(e));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
        Ok(out)
    } else {
        let magic = if c == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{w} {h}\n{}\n", if sixteen { 65535 } else { 255 }).into_bytes();
        out.extend_from_slice(&data);
        Ok(out)
    }
}

/// Reads an image, applying a sidecar when one sits next to the file.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = decode_image(&fs::read(path)?)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(img);
    }
    let meta: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)
        .map_err(|e| format_err(0, format!("{}: {e}", side.display())))?;
    if img.container_bits() != 16 || meta.container_bits + meta.shift != 16 || !(2..16).contains(&meta.container_bits) {
        return Err(format_err(0, format!("{}: inconsistent with a {}-bit file", side.display(), img.container_bits())));
    }
    let mask = (1u16 << meta.shift) - 1;
    if img.codes().iter().any(|&c| c & mask != 0) {
        return Err(format_err(0, format!("{}: samples are not shifted by {}", path.display(), meta.shift)));
    }
    let codes = img.codes().iter().map(|&c| c >> meta.shift).collect();
    ImageTensor::new(img.shape(), codes, meta.container_bits)
}

/// Writes an image losslessly. The format follows the extension.
pub fn save_image(img: &ImageTensor, path: &Path) -> Result<()> {
    let png = is_png(path)?;
    let side = sidecar_path(path);
    let n = img.container_bits();
    if n == 8 || n == 16 {
        fs::write(path, encode_image(img, png)?)?;
        if side.exists() {
            fs::remove_file(&side)?;
        }
        return Ok(());
    }
    let shift = 16 - n;
    let codes = img.codes().iter().map(|&c| c << shift).collect();
    let wide = ImageTensor::new(img.shape(), codes, 16)?;
    fs::write(path, encode_image(&wide, png)?)?;
    let json = serde_json::to_string(&Sidecar { container_bits: n, shift }).expect("sidecar serializes");
    fs::write(side, json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(bits: u32, channels: usize) -> ImageTensor {
        ImageTensor::from_fn(Shape::new(5, 7, channels), bits, |c, y, x| {
            (((c * 977 + y * 131 + x * 71) * 2654435761usize) % (1usize << bits)) as u16
        })
        .unwrap()
    }

    #[test]
    fn sixteen_bit_ppm_is_big_endian() {
        let mut bytes = b"P6\n# comment\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0x12, 0x34, 0x00, 0x01, 0xff, 0xff]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.container_bits(), 16);
        assert_eq!(img.codes(), &[4660, 1, 65535]);
    }

    #[test]
    fn round_trips_all_formats_and_depths() {
        let dir = tempfile::tempdir().unwrap();
        for bits in [2, 5, 8, 10, 12, 16] {
            for channels in [1, 3] {
                for ext in ["png", "pnm"] {
                    let img = sample(bits, channels);
                    let path = dir.path().join(format!("img_{bits}_{channels}.{ext}"));
                    save_image(&img, &path).unwrap();
                    assert_eq!(load_image(&path).unwrap(), img, "{bits} bits {channels} ch {ext}");
                    assert_eq!(sidecar_path(&path).exists(), bits != 8 && bits != 16);
                }
            }
        }
    }

    #[test]
    fn saving_standard_depth_removes_stale_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        save_image(&sample(10, 1), &path).unwrap();
        assert!(sidecar_path(&path).exists());
        save_image(&sample(8, 1), &path).unwrap();
        assert!(!sidecar_path(&path).exists());
        assert_eq!(load_image(&path).unwrap(), sample(8, 1));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_image(b"P3\n1 1\n255\n0 0 0"), Err(Error::UnsupportedImage(_))));
        assert!(matches!(decode_image(b"P5\n2 2\n1023\n\0\0\0\0\0\0\0\0"), Err(Error::UnsupportedImage(_))));
        assert!(matches!(decode_image(b"P5\n2 2\n255\n\0\0"), Err(Error::Format { .. })));
        assert!(matches!(decode_image(b"P5\n2 x\n255\n"), Err(Error::Format { offset: 5, .. })));
        let png = encode_image(&sample(8, 3), true).unwrap();
        assert!(matches!(decode_image(&png[..png.len() / 2]), Err(Error::Format { .. })));
        assert!(save_image(&sample(8, 1), Path::new("x.bmp")).is_err());
    }
}
