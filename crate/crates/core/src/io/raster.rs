//! PFM float rasters and 8-bit PNG display images and masks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::{Image, Mask, ScalarMap};

/// Contents of a PFM file, top row first.
#[derive(Clone, Debug, PartialEq)]
pub enum PfmData {
    Scalar(ScalarMap),
    Color(Image),
}

fn write_pfm_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    value: impl Fn(usize, usize, usize) -> f64,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
    for y in (0..height).rev() {
        for x in 0..width {
            for c in 0..channels {
                w.write_f32::<LittleEndian>(value(x, y, c) as f32)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Three-channel PFM (normals, XYZ maps). Values are stored as `f32`.
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    write_pfm_raw(path, img.width(), img.height(), 3, |x, y, c| img.get(x, y)[c])
}

/// Single-channel PFM (depth). Values are stored as `f32`.
pub fn write_scalar_pfm(path: &Path, map: &ScalarMap) -> Result<()> {
    write_pfm_raw(path, map.width(), map.height(), 1, |x, y, _| *map.get(x, y))
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        if byte[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(byte[0]);
    }
    String::from_utf8(tok).map_err(|_| Error::Format("PFM header is not text".into()))
}

/// Reads either PFM flavor; the sign of the scale selects the byte order.
pub fn read_pfm(path: &Path) -> Result<PfmData> {
    let mut r = BufReader::new(File::open(path)?);
    let tag = header_token(&mut r)?;
    let channels = match tag.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(Error::Format(format!("not a PFM file: tag '{tag}'"))),
    };
    let bad = |w: &str| Error::Format(format!("malformed PFM {w}"));
    let width: usize = header_token(&mut r)?.parse().map_err(|_| bad("width"))?;
    let height: usize = header_token(&mut r)?.parse().map_err(|_| bad("height"))?;
    let scale: f64 = header_token(&mut r)?.parse().map_err(|_| bad("scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale"));
    }
    let mut vals = vec![0.0f64; width * height * channels];
    for y in (0..height).rev() {
        for i in 0..width * channels {
            let v = if scale < 0.0 {
                r.read_f32::<LittleEndian>()
            } else {
                r.read_f32::<BigEndian>()
            }
            .map_err(|_| Error::Format("PFM data truncated".into()))?;
            vals[y * width * channels + i] = v as f64;
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing data after PFM raster".into()));
    }
    Ok(if channels == 1 {
        PfmData::Scalar(ScalarMap::from_vec(width, height, vals)?)
    } else {
        PfmData::Color(Image::from_vec(
            width,
            height,
            vals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        )?)
    })
}

pub fn read_scalar_pfm(path: &Path) -> Result<ScalarMap> {
    match read_pfm(path)? {
        PfmData::Scalar(m) => Ok(m),
        PfmData::Color(_) => Err(Error::Format("expected a single-channel PFM".into())),
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit sRGB-agnostic PNG; values are clamped to [0, 1].
pub fn write_color_png(path: &Path, img: &Image) -> Result<()> {
    let buf: RgbImage = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.get(x as usize, y as usize);
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    });
    buf.save(path)?;
    Ok(())
}

/// Mask as 0 / 255 grayscale.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let buf: GrayImage = ImageBuffer::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if *mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    buf.save(path)?;
    Ok(())
}

pub fn read_color_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Image::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0]
    }))
}

/// Pixels at 128 or above are inside the mask.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Mask::from_fn(w, h, |x, y| {
        img.get_pixel(x as u32, y as u32).0[0] >= 128
    }))
}
