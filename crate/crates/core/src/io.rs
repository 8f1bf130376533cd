//! PNG and PFM file IO.
//!
//! Images load as encoded RGB in `[0, 1]` and save as 8-bit RGB with
//! round-half-up quantization. Masks are 8-bit grayscale, `0 <-> 0` and
//! `1 <-> 255`. Depth maps are single-channel PFM (`Pf`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, DepthMap, Image, RegionMask};

/// Default floor applied to loaded depth values.
pub const DEFAULT_DEPTH_EPSILON: f32 = 1e-6;

fn decode_png(path: &Path) -> Result<DynamicImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads an 8- or 16-bit RGB/RGBA PNG; alpha is dropped.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let img = decode_png(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        DynamicImage::ImageRgb8(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .into_raw()
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|v| v as f32 / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        DynamicImage::ImageRgba16(buf) => buf
            .into_raw()
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .map(|v| v as f32 / 65535.0)
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported PNG color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Image::new(w, h, ColorSpace::Encoded, data)
}

pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes an image as 8-bit RGB PNG bytes.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    encode_raw(img.width(), img.height(), raw, image::ExtendedColorType::Rgb8)
}

fn encode_raw(w: usize, h: usize, raw: Vec<u8>, color: image::ExtendedColorType) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&raw, w as u32, h as u32, color)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn encode_mask_png(mask: &RegionMask) -> Result<Vec<u8>> {
    let raw = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_raw(mask.width(), mask.height(), raw, image::ExtendedColorType::L8)
}

pub fn write_mask_png(mask: &RegionMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask_png(mask)?).map_err(|e| Error::io(path, e))
}

/// Loads a mask PNG. Any color type is accepted; a pixel is set when its
/// luma is at least half of full scale.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<RegionMask> {
    let path = path.as_ref();
    let img = decode_png(path)?.into_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v >= 32768).collect();
    RegionMask::new(w, h, data)
}

/// Loads a grayscale PFM depth map.
///
/// With `invert`, each value `v` becomes `1 / (v + epsilon)` so disparity
/// style maps turn into depth. Results are floored at `epsilon`.
pub fn load_pfm(path: impl AsRef<Path>, invert: bool, epsilon: f32) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, raw) = parse_pfm(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))?;
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Value(format!("{}: non-finite depth {bad}", path.display())));
    }
    let data = raw
        .into_iter()
        .map(|v| {
            let d = if invert { 1.0 / (v + epsilon) } else { v };
            d.max(epsilon)
        })
        .collect::<Vec<_>>();
    DepthMap::new(w, h, data).map_err(|e| match e {
        Error::Value(msg) => Error::Value(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses a `Pf` file into top-to-bottom rows.
fn parse_pfm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f32>), String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        let tok = String::from_utf8_lossy(&bytes[start..pos]).into_owned();
        Ok(tok)
    };
    let magic = token()?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err("color PFM (PF) is not a depth map; expected Pf".into()),
        other => return Err(format!("bad magic {other:?}")),
    }
    let w: usize = token()?.parse().map_err(|_| "bad width")?;
    let h: usize = token()?.parse().map_err(|_| "bad height")?;
    let scale: f32 = token()?.parse().map_err(|_| "bad scale")?;
    if w == 0 || h == 0 {
        return Err("zero dimension".into());
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err("scale must be non-zero".into());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let need = w * h * 4;
    let body = bytes.get(pos..pos + need).ok_or("truncated raster")?;
    let little = scale < 0.0;
    let mut out = vec![0.0f32; w * h];
    for (row_from_bottom, chunk) in body.chunks_exact(w * 4).enumerate() {
        let y = h - 1 - row_from_bottom;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            out[y * w + x] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok((w, h, out))
}

/// Writes a little-endian `Pf` file.
pub fn write_pfm(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let (w, h) = depth.dims();
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        write!(out, "Pf\n{w} {h}\n-1.0\n")?;
        for y in (0..h).rev() {
            for x in 0..w {
                out.write_all(&depth.get(x, y).to_le_bytes())?;
            }
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}
