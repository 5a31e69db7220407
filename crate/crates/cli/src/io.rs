//! Image files: 8/16-bit grayscale PNG and PGM, plus a raw float format.
//!
//! The float format is one text line `PFOE-F32 <width> <height>` followed by
//! `width * height` little-endian `f32` values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use poisson_foe::Image;

use crate::error::{CliError, CliResult};

const FLOAT_MAGIC: &str = "PFOE-F32";

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

pub fn read_image(path: &Path) -> CliResult<Image> {
    if extension(path) == "f32" {
        return read_float(path);
    }
    let img = image::open(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        other => other.to_luma8().into_raw().into_iter().map(f64::from).collect(),
    };
    Ok(Image::new(w, h, data)?)
}

/// Writes by extension. PNG/PGM values are rounded to integers and stored
/// with 8 bits when they fit, 16 bits otherwise.
pub fn write_image(path: &Path, img: &Image) -> CliResult<()> {
    let ext = extension(path);
    let format = match ext.as_str() {
        "f32" => return write_float(path, img),
        "png" => ImageFormat::Png,
        "pgm" | "pnm" => ImageFormat::Pnm,
        other => return Err(CliError::usage(format!("unsupported output extension '{other}'"))),
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let rounded: Vec<f64> = img.data().iter().map(|v| v.round().max(0.0)).collect();
    let max = rounded.iter().copied().fold(0.0, f64::max);
    let dynamic = if max <= 255.0 {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(w, h, rounded.iter().map(|&v| v as u8).collect()).expect("buffer size");
        DynamicImage::ImageLuma8(buf)
    } else if max <= 65535.0 {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(w, h, rounded.iter().map(|&v| v as u16).collect()).expect("buffer size");
        DynamicImage::ImageLuma16(buf)
    } else {
        return Err(CliError::data(format!("value {max} does not fit in 16 bits; use a .f32 output")));
    };
    dynamic
        .save_with_format(path, format)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn read_float(path: &Path) -> CliResult<Image> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CliError::data(format!("{}: missing header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| CliError::data("float header is not text"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let bad = || CliError::data(format!("{}: bad float header '{header}'", path.display()));
    if fields.len() != 3 || fields[0] != FLOAT_MAGIC {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let body = &bytes[nl + 1..];
    if body.len() != 4 * w * h {
        return Err(CliError::data(format!(
            "{}: expected {} bytes of pixel data, found {}",
            path.display(),
            4 * w * h,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Ok(Image::new(w, h, data)?)
}

fn write_float(path: &Path, img: &Image) -> CliResult<()> {
    let mut out = Vec::with_capacity(32 + 4 * img.len());
    writeln!(out, "{FLOAT_MAGIC} {} {}", img.width(), img.height())?;
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f32");
        let img = Image::from_fn(5, 3, |x, y| x as f64 * 0.25 - y as f64);
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn png_round_trip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        for (name, scale) in [("a.png", 10.0), ("b.png", 1000.0), ("c.pgm", 3.0), ("d.pgm", 900.0)] {
            let p = dir.path().join(name);
            let img = Image::from_fn(7, 4, |x, y| ((x + 2 * y) as f64 * scale).min(65535.0));
            write_image(&p, &img).unwrap();
            assert_eq!(read_image(&p).unwrap(), img, "{name}");
        }
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.f32");
        fs::write(&p, b"PFOE-F32 2 2\nabc").unwrap();
        assert!(read_image(&p).is_err());
        assert!(read_image(&dir.path().join("missing.png")).is_err());
        let img = Image::filled(2, 2, 1.0);
        assert!(write_image(&dir.path().join("x.bmp"), &img).is_err());
        assert!(write_image(&dir.path().join("x.png"), &Image::filled(2, 2, 1e6)).is_err());
    }
}
