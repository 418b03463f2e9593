//! Procedural toy image datasets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// One Gaussian blob per image, center uniform in `[R/4, 3R/4]^2`,
    /// sigma uniform in `[R/10, R/6]`.
    GaussianBlobs,
    /// One filled axis-aligned rectangle.
    Rects,
    /// One ring of radius in `[R/6, R/3]`.
    Rings,
}

impl core::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-blobs" => Ok(Family::GaussianBlobs),
            "rects" => Ok(Family::Rects),
            "rings" => Ok(Family::Rings),
            _ => Err(Error::contract(format!("unknown dataset family {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub family: Family,
    pub count: usize,
    pub resolution: u32,
    pub seed: u64,
    /// 1 (grayscale) or 3 (RGB).
    #[serde(default = "three")]
    pub channels: u8,
}

fn three() -> u8 {
    3
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 {
            return Err(Error::contract(format!("resolution {} below 4", self.resolution)));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(Error::contract(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }
}

/// 8-bit image, channels interleaved per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl Image {
    /// `[3, H, W]` values in `[-1, 1]`; grayscale is replicated.
    pub fn to_chw(&self) -> Vec<f32> {
        let (w, h, c) = (self.width as usize, self.height as usize, self.channels as usize);
        let mut out = vec![0.0; 3 * h * w];
        for ch in 0..3 {
            let src = if c == 1 { 0 } else { ch };
            for p in 0..h * w {
                out[ch * h * w + p] = self.pixels[p * c + src] as f32 / 127.5 - 1.0;
            }
        }
        out
    }
}

/// Parameters of one blob.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub sigma: f64,
    pub color: [f64; 3],
}

pub fn sample_blob(rng: &mut impl Rng, resolution: u32) -> Blob {
    let r = resolution as f64;
    Blob {
        cx: rng.random_range(r / 4.0..=3.0 * r / 4.0),
        cy: rng.random_range(r / 4.0..=3.0 * r / 4.0),
        sigma: rng.random_range(r / 10.0..=r / 6.0),
        color: [rng.random_range(0.5..=1.0), rng.random_range(0.5..=1.0), rng.random_range(0.5..=1.0)],
    }
}

fn to_byte(v: f64) -> u8 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) as u8
}

/// Pixel `(i, j)` covers `[j, j+1) x [i, i+1)` and is sampled at its center.
fn render(resolution: u32, channels: u8, color: [f64; 3], f: impl Fn(f64, f64) -> f64) -> Image {
    let r = resolution as usize;
    let c = channels as usize;
    let mut pixels = Vec::with_capacity(r * r * c);
    for i in 0..r {
        for j in 0..r {
            let v = f(j as f64 + 0.5, i as f64 + 0.5);
            if c == 1 {
                pixels.push(to_byte(v));
            } else {
                pixels.extend(color.iter().map(|k| to_byte(v * k)));
            }
        }
    }
    Image { width: resolution, height: resolution, channels, pixels }
}

pub fn render_blob(b: &Blob, resolution: u32, channels: u8) -> Image {
    let s2 = 2.0 * b.sigma * b.sigma;
    render(resolution, channels, b.color, |x, y| {
        let d2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy);
        libm::exp(-d2 / s2)
    })
}

/// Image `index` of the dataset described by `spec`.
pub fn synth_image(spec: &SynthSpec, index: usize) -> Image {
    let mut rng = rng_for(spec.seed, &format!("synth/{index}"));
    let r = spec.resolution as f64;
    match spec.family {
        Family::GaussianBlobs => render_blob(&sample_blob(&mut rng, spec.resolution), spec.resolution, spec.channels),
        Family::Rects => {
            let w = rng.random_range(r / 6.0..=r / 2.0);
            let h = rng.random_range(r / 6.0..=r / 2.0);
            let x0 = rng.random_range(0.0..=r - w);
            let y0 = rng.random_range(0.0..=r - h);
            let color = [rng.random_range(0.5..=1.0), rng.random_range(0.5..=1.0), rng.random_range(0.5..=1.0)];
            render(spec.resolution, spec.channels, color, |x, y| {
                if x >= x0 && x < x0 + w && y >= y0 && y < y0 + h {
                    1.0
                } else {
                    0.0
                }
            })
        }
        Family::Rings => {
            let rad = rng.random_range(r / 6.0..=r / 3.0);
            let cx = rng.random_range(rad..=r - rad);
            let cy = rng.random_range(rad..=r - rad);
            let half = (r / 32.0).max(0.75);
            let color = [rng.random_range(0.5..=1.0), rng.random_range(0.5..=1.0), rng.random_range(0.5..=1.0)];
            render(spec.resolution, spec.channels, color, |x, y| {
                let d = libm::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy));
                if (d - rad).abs() <= half {
                    1.0
                } else {
                    0.0
                }
            })
        }
    }
}

pub fn synth_images(spec: &SynthSpec) -> Result<Vec<Image>> {
    spec.validate()?;
    Ok((0..spec.count).map(|i| synth_image(spec, i)).collect())
}

/// Stacks images of one size into `[N, 3, R, R]` in `[-1, 1]`.
pub fn to_tensor(images: &[Image]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::contract("empty image set"))?;
    let (w, h) = (first.width, first.height);
    if w != h {
        return Err(Error::shape("dataset", format!("non-square {w}x{h} images")));
    }
    let mut data = Vec::with_capacity(images.len() * 3 * (w * h) as usize);
    for (i, im) in images.iter().enumerate() {
        if im.width != w || im.height != h {
            return Err(Error::shape("dataset", format!("image {i} is {}x{}, expected {w}x{h}", im.width, im.height)));
        }
        data.extend(im.to_chw());
    }
    Tensor::new(&[images.len(), 3, h as usize, w as usize], data)
}

/// Box-downsamples `[N, 3, R, R]` by powers of two to `resolution`.
pub fn downsample_to(data: &Tensor, resolution: u32) -> Result<Tensor> {
    let (_, _, h, _) = data.dims4("downsample_to")?;
    let target = resolution as usize;
    if target == 0 || target > h || h % target != 0 || !(h / target).is_power_of_two() {
        return Err(Error::contract(format!("cannot resample {h}px data to {target}px")));
    }
    let mut x = data.clone();
    let mut r = h;
    while r > target {
        x = crate::tensor::kernels::avgpool2x(&x)?;
        r /= 2;
    }
    Ok(x)
}
