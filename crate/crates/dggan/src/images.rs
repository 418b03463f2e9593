//! Binary PGM (P5) and PPM (P6) images.

use std::fs;
use std::path::{Path, PathBuf};

use dggan_core::synth::Image;
use dggan_core::Tensor;

use crate::error::{Error, IoContext, Result};

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn header_tokens(bytes: &[u8]) -> Option<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    (i < bytes.len()).then_some((tokens, i + 1))
}

pub fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let (t, start) = header_tokens(bytes).ok_or("truncated PNM header")?;
    let channels = match t[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported magic {other:?}, expected P5 or P6")),
    };
    let num = |s: &str, what: &str| s.parse::<u32>().map_err(|_| format!("bad {what} {s:?}"));
    let (width, height, maxval) = (num(&t[1], "width")?, num(&t[2], "height")?, num(&t[3], "maxval")?);
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    let n = width as usize * height as usize * channels as usize;
    let raster = &bytes[start..];
    if raster.len() != n {
        return Err(format!("raster has {} bytes, expected {n}", raster.len()));
    }
    Ok(Image { width, height, channels, pixels: raster.to_vec() })
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).at(path)?;
    decode_pnm(&bytes).map_err(|detail| Error::Image { path: path.into(), detail })
}

pub fn file_name(index: usize, channels: u8) -> String {
    format!("{index:05}.{}", if channels == 1 { "pgm" } else { "ppm" })
}

pub fn write_images(dir: &Path, images: &[Image]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).at(dir)?;
    let mut paths = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let p = dir.join(file_name(i, img.channels));
        fs::write(&p, encode_pnm(img)).at(&p)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Every `.pgm`/`.ppm` file in `dir`, in file name order.
pub fn load_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .at(dir)?
        .map(|e| e.map(|e| e.path()).at(dir))
        .collect::<Result<_>>()?;
    paths.retain(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "ppm")));
    paths.sort();
    paths.iter().map(|p| read_pnm(p)).collect()
}

/// `tanh` outputs in `[-1, 1]` to bytes; NaN maps to 0.
pub fn to_byte(v: f32) -> u8 {
    let b = ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round();
    if b.is_nan() {
        0
    } else {
        b as u8
    }
}

/// Splits a `[N, 3, R, R]` batch into RGB images.
pub fn from_tensor(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4("from_tensor")?;
    if c != 3 {
        return Err(dggan_core::Error::Shape { op: "from_tensor", detail: format!("{c} channels") }.into());
    }
    let plane = h * w;
    Ok((0..n)
        .map(|i| {
            let base = &t.data()[i * 3 * plane..(i + 1) * 3 * plane];
            let pixels = (0..plane).flat_map(|p| (0..3).map(move |ch| to_byte(base[ch * plane + p]))).collect();
            Image { width: w as u32, height: h as u32, channels: 3, pixels }
        })
        .collect())
}
