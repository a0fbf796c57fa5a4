//! Image decoding into `(1, 3, H, W)` tensors with values in `[0, 1]`.
//! Binary PPM (P6) is decoded here; PNG goes through the `png` crate.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

const PNG_SIGNATURE: &[u8] = &[0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads one ASCII header integer, skipping whitespace and `#` comments.
fn header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(&b) if is_ws(b) => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Image(format!("PPM: expected a header number at byte {start}")))
}

fn planar(width: usize, height: usize, channels: usize, max: f64, sample: impl Fn(usize) -> f64) -> Result<Tensor4> {
    let plane = width * height;
    let mut data = vec![0.0; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            // Grayscale sources replicate their single channel.
            let src = if channels >= 3 { c } else { 0 };
            data[c * plane + p] = sample(p * channels + src) / max;
        }
    }
    Tensor4::from_vec((1, 3, height, width), data)
}

/// Decodes a binary `P6` PPM with maxval up to 65535.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Image("PPM: missing P6 magic".into()));
    }
    let mut pos = 2;
    let width = header_int(bytes, &mut pos)?;
    let height = header_int(bytes, &mut pos)?;
    let maxval = header_int(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("PPM: empty image {width}x{height}")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(Error::Image(format!("PPM: maxval {maxval} out of range")));
    }
    if !bytes.get(pos).copied().is_some_and(is_ws) {
        return Err(Error::Image("PPM: missing whitespace after header".into()));
    }
    pos += 1;
    let depth = if maxval < 256 { 1 } else { 2 };
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3 * depth))
        .ok_or_else(|| Error::Image("PPM: dimensions overflow".into()))?;
    let raster = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| Error::Image(format!("PPM: raster truncated ({} of {needed} bytes)", bytes.len() - pos)))?;
    let max = maxval as f64;
    if depth == 1 {
        planar(width, height, 3, max, |i| raster[i] as f64)
    } else {
        planar(width, height, 3, max, |i| u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64)
    }
}

/// Encodes an image tensor as 8-bit P6, clamping values to `[0, 1]`.
pub fn encode_ppm(image: &Tensor4) -> Result<Vec<u8>> {
    let d = image.dims();
    if d.n != 1 || d.c != 3 {
        return Err(Error::InvalidShape(format!("PPM needs a (1,3,H,W) image, got {d}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", d.w, d.h).into_bytes();
    let plane = d.h * d.w;
    for p in 0..plane {
        for c in 0..3 {
            out.push((image.data()[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Decodes any PNG colour type; palettes are expanded, alpha is dropped,
/// and 16-bit samples are reduced to 8 bits.
pub fn decode_png(bytes: &[u8]) -> Result<Tensor4> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| Error::Image(format!("PNG: {e}")))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Image("PNG: image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(format!("PNG: {e}")))?;
    let channels = info.color_type.samples();
    let (w, h) = (info.width as usize, info.height as usize);
    let row = info.line_size;
    planar(w, h, channels, 255.0, |i| {
        let (p, k) = (i / channels, i % channels);
        buf[(p / w) * row + (p % w) * channels + k] as f64
    })
}

/// Decodes PPM or PNG, chosen by the file signature.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else {
        Err(Error::Image("unrecognized image format (expected binary PPM or PNG)".into()))
    }
}

pub fn load_image(path: &Path) -> Result<Tensor4> {
    let bytes = std::fs::read(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Image(m) => Error::Image(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn png_bytes(color: png::ColorType, depth: png::BitDepth, w: u32, h: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            enc.write_header().unwrap().write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn ppm_roundtrip_and_layout() {
        let bytes = b"P6\n# comment\n2 1\n255\n\xff\x00\x00\x00\x80\xff".to_vec();
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.dims().as_array(), [1, 3, 1, 2]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 128.0 / 255.0, 0.0, 1.0]);
        assert_eq!(encode_ppm(&img).unwrap(), b"P6\n2 1\n255\n\xff\x00\x00\x00\x80\xff");
    }

    #[test]
    fn ppm_sixteen_bit() {
        let bytes = b"P6 1 1 65535\n\xff\xff\x00\x00\x80\x00".to_vec();
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert_eq!(img.data()[2], 32768.0 / 65535.0);
    }

    #[test]
    fn ppm_errors() {
        assert!(matches!(decode_ppm(b"P3 1 1 255\n1 2 3"), Err(Error::Image(_))));
        assert!(matches!(decode_ppm(b"P6 2 2 255\n\x00\x00"), Err(Error::Image(_))));
        assert!(matches!(decode_ppm(b"P6 0 2 255\n"), Err(Error::Image(_))));
        assert!(matches!(decode_ppm(b"P6 1 1 70000\n\x00\x00\x00"), Err(Error::Image(_))));
        assert!(matches!(decode_ppm(b"P6 x 1 255\n"), Err(Error::Image(_))));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::Image(_))));
    }

    #[test]
    fn png_rgb_rgba_gray() {
        let rgb = png_bytes(png::ColorType::Rgb, png::BitDepth::Eight, 2, 1, &[255, 0, 0, 0, 255, 51]);
        let img = decode_image(&rgb).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.2]);

        let rgba = png_bytes(png::ColorType::Rgba, png::BitDepth::Eight, 1, 2, &[255, 0, 0, 7, 0, 0, 255, 9]);
        let img = decode_image(&rgba).unwrap();
        assert_eq!(img.dims().as_array(), [1, 3, 2, 1]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);

        let gray = png_bytes(png::ColorType::Grayscale, png::BitDepth::Eight, 2, 2, &[0, 51, 102, 255]);
        let img = decode_image(&gray).unwrap();
        let plane = [0.0, 0.2, 0.4, 1.0];
        assert_eq!(img.data(), [plane, plane, plane].concat().as_slice());

        let g16 = png_bytes(png::ColorType::Grayscale, png::BitDepth::Sixteen, 1, 1, &[255, 255]);
        assert_eq!(decode_image(&g16).unwrap().data(), &[1.0; 3]);
    }

    #[test]
    fn png_corrupt() {
        let mut rgb = png_bytes(png::ColorType::Rgb, png::BitDepth::Eight, 2, 1, &[1, 2, 3, 4, 5, 6]);
        rgb.truncate(rgb.len() - 20);
        assert!(matches!(decode_image(&rgb), Err(Error::Image(_))));
    }
}
