//! Image and map file formats.
//!
//! * Float maps are PFM: `Pf` (one channel) or `PF` (three channels), a
//!   negative scale marking little-endian data, rows stored bottom-up.
//! * Masks are 8-bit grayscale PNG, 255 = foreground; on read any value
//!   ≥ 128 counts as foreground.
//! * Color images are 8-bit RGB PNG.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{ColorImage, Grid, Mask};

fn write_pfm_raw(path: &Path, width: usize, height: usize, channels: usize, rows: impl Fn(usize) -> Vec<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(32 + width * height * channels * 4);
    let tag = if channels == 1 { "Pf" } else { "PF" };
    write!(buf, "{tag}\n{width} {height}\n-1.0\n").expect("write to Vec");
    for y in (0..height).rev() {
        for v in rows(y) {
            buf.write_f32::<LittleEndian>(v).expect("write to Vec");
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_pfm_gray(path: &Path, g: &Grid<f64>) -> Result<()> {
    let w = g.width();
    write_pfm_raw(path, w, g.height(), 1, |y| (0..w).map(|x| *g.get(x, y) as f32).collect())
}

pub fn write_pfm_rgb(path: &Path, g: &Grid<[f64; 3]>) -> Result<()> {
    let w = g.width();
    write_pfm_raw(path, w, g.height(), 3, |y| {
        (0..w).flat_map(|x| g.get(x, y).map(|c| c as f32)).collect()
    })
}

fn read_pfm_raw(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::format("PFM", path, m.to_string());
    let mut line = String::new();
    let mut next_token_line = |r: &mut BufReader<fs::File>| -> Result<String> {
        line.clear();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        Ok(line.trim().to_string())
    };
    let tag = next_token_line(&mut r)?;
    let channels = match tag.as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad("missing Pf/PF tag")),
    };
    let dims = next_token_line(&mut r)?;
    let mut it = dims.split_whitespace().map(|t| t.parse::<usize>());
    let (w, h) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(bad("bad dimensions")),
    };
    let scale: f64 = next_token_line(&mut r)?.parse().map_err(|_| bad("bad scale"))?;
    let n = w * h * channels;
    let mut raw = vec![0f32; n];
    if scale < 0.0 {
        r.read_f32_into::<LittleEndian>(&mut raw).map_err(|e| Error::io(path, e))?;
    } else {
        r.read_f32_into::<byteorder::BigEndian>(&mut raw).map_err(|e| Error::io(path, e))?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(bad("trailing data"));
    }
    // flip to top-down
    let row = w * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..h).rev() {
        data.extend_from_slice(&raw[y * row..(y + 1) * row]);
    }
    Ok((w, h, channels, data))
}

pub fn read_pfm_gray(path: &Path) -> Result<Grid<f64>> {
    let (w, h, c, data) = read_pfm_raw(path)?;
    if c != 1 {
        return Err(Error::format("PFM", path, "expected one channel"));
    }
    Grid::from_vec(w, h, data.into_iter().map(f64::from).collect())
}

pub fn read_pfm_rgb(path: &Path) -> Result<Grid<[f64; 3]>> {
    let (w, h, c, data) = read_pfm_raw(path)?;
    if c != 3 {
        return Err(Error::format("PFM", path, "expected three channels"));
    }
    Grid::from_vec(
        w,
        h,
        data.chunks(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect(),
    )
}

pub fn write_mask_png(path: &Path, m: &Mask) -> Result<()> {
    let img = image::GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        image::Luma([if *m.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    img.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_fn(w as usize, h as usize, |x, y| img.get_pixel(x as u32, y as u32)[0] >= 128))
}

/// Quantizes `[0, 1]` to 8 bits with rounding.
#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_color_png(path: &Path, img: &ColorImage) -> Result<()> {
    let out = image::RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        image::Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])])
    });
    out.save(path)?;
    Ok(())
}

pub fn read_color_png(path: &Path) -> Result<ColorImage> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32);
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }))
}

/// Rounds every channel to the nearest 8-bit level, as a PNG round trip would.
pub fn quantize_color(img: &ColorImage) -> ColorImage {
    img.map(|c| c.map(|v| to_u8(v) as f64 / 255.0))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, kind: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(kind, path, e.to_string()))
}
