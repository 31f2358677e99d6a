//! PSNR/SSIM under the usual SR protocol, and whole-directory evaluation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::imaging::{self, FloatImage, Ratio};
use crate::model::Model;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const PEAK: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Y,
    Rgb,
}

impl FromStr for ColorSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "y" | "ycbcr" => Ok(ColorSpace::Y),
            "rgb" => Ok(ColorSpace::Rgb),
            _ => Err(Error::Config(format!("unknown color space `{s}` (y or rgb)"))),
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorSpace::Y => "y",
            ColorSpace::Rgb => "rgb",
        })
    }
}

/// Which channel(s) are compared and how many border pixels are ignored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalProtocol {
    pub color: ColorSpace,
    pub crop: usize,
}

impl EvalProtocol {
    /// Luma with the border crop equal to the scale.
    pub fn for_scale(scale: usize) -> Self {
        EvalProtocol {
            color: ColorSpace::Y,
            crop: scale,
        }
    }

    /// Channel(s) and crop applied, ready for comparison.
    pub fn prepare(&self, img: &FloatImage) -> Result<FloatImage> {
        let img = match (self.color, img.channels()) {
            (ColorSpace::Y, 3) => imaging::rgb_to_y(img)?,
            _ => img.clone(),
        };
        if self.crop == 0 {
            Ok(img)
        } else {
            img.shave(self.crop)
        }
    }

    fn prepare_pair(&self, a: &FloatImage, b: &FloatImage) -> Result<(FloatImage, FloatImage)> {
        if !a.same_dims(b) {
            return Err(Error::InvalidArgument(format!(
                "cannot compare {a:?} with {b:?}"
            )));
        }
        Ok((self.prepare(a)?, self.prepare(b)?))
    }
}

/// Peak signal-to-noise ratio in dB; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &FloatImage, b: &FloatImage, protocol: &EvalProtocol) -> Result<f64> {
    let (a, b) = protocol.prepare_pair(a, b)?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Mean SSIM over all valid 11×11 Gaussian windows, averaged over channels.
pub fn ssim(a: &FloatImage, b: &FloatImage, protocol: &EvalProtocol) -> Result<f64> {
    let (a, b) = protocol.prepare_pair(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.width(),
            a.height()
        )));
    }
    let k = imaging::gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let x = a.channel(ch);
        let y = b.channel(ch);
        let mu_x = filter_valid(&x, &k);
        let mu_y = filter_valid(&y, &k);
        let xx = filter_valid(&x.map(|v| v * v), &k);
        let yy = filter_valid(&y.map(|v| v * v), &k);
        let xy_img = FloatImage::from_fn(x.width(), x.height(), 1, |i, j, _| x.get(i, j, 0) * y.get(i, j, 0));
        let xy = filter_valid(&xy_img, &k);
        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / a.channels() as f64)
}

/// Separable correlation with `k ⊗ k` over windows fully inside the image.
fn filter_valid(img: &FloatImage, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img.get(x + i, y, 0)).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Anything that maps an LR image to an HR estimate on the `[0, 255]` scale.
pub trait Upscaler {
    fn scale(&self) -> usize;
    fn upscale(&self, lr: &FloatImage) -> Result<FloatImage>;
}

impl Upscaler for Model<f32> {
    fn scale(&self) -> usize {
        self.config().scale
    }

    fn upscale(&self, lr: &FloatImage) -> Result<FloatImage> {
        let rgb = imaging::gray_to_rgb(lr);
        let x = imaging::images_to_tensor::<f32>(&[&rgb])?;
        let y = self.infer(&x)?;
        let out = imaging::tensor_to_image(&y, 0)?;
        Ok(if lr.channels() == 1 {
            imaging::to_grayscale(&out)
        } else {
            out
        })
    }
}

/// Plain bicubic interpolation, the reference every model is compared with.
#[derive(Clone, Copy, Debug)]
pub struct BicubicUpscaler {
    pub scale: usize,
}

impl Upscaler for BicubicUpscaler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn upscale(&self, lr: &FloatImage) -> Result<FloatImage> {
        imaging::bicubic_resize(lr, Ratio::up(self.scale), true)
    }
}

/// Scale-1 passthrough.
#[derive(Clone, Copy, Debug)]
pub struct Identity;

impl Upscaler for Identity {
    fn scale(&self) -> usize {
        1
    }

    fn upscale(&self, lr: &FloatImage) -> Result<FloatImage> {
        Ok(lr.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub scale: usize,
    pub protocol: EvalProtocol,
    pub rows: Vec<ImageScore>,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.ssim))
    }

    /// One `id\tpsnr\tssim` record per image.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!("{}\t{:.6}\t{:.6}\n", r.id, r.psnr, r.ssim));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.id.len()).max().unwrap_or(5).max(5);
        writeln!(
            f,
            "x{} ({}, crop {})",
            self.scale, self.protocol.color, self.protocol.crop
        )?;
        writeln!(f, "{:<width$}  {:>9}  {:>7}", "image", "PSNR", "SSIM")?;
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:>9.4}  {:>7.4}", r.id, r.psnr, r.ssim)?;
        }
        write!(
            f,
            "{:<width$}  {:>9.4}  {:>7.4}",
            "mean",
            self.mean_psnr(),
            self.mean_ssim()
        )
    }
}

/// Score one HR image: crop to a multiple of the scale, degrade, quantize the LR
/// to 8 bits, upscale, quantize the output, compare.
pub fn score_image(
    upscaler: &dyn Upscaler,
    id: &str,
    hr: &FloatImage,
    protocol: &EvalProtocol,
) -> Result<ImageScore> {
    let r = upscaler.scale();
    let hr = hr.center_crop_to_multiple(r)?;
    let lr = imaging::degrade(&hr, r)?.quantized();
    let sr = upscaler.upscale(&lr)?.quantized();
    Ok(ImageScore {
        id: id.to_string(),
        psnr: psnr(&sr, &hr, protocol)?,
        ssim: ssim(&sr, &hr, protocol)?,
    })
}

pub fn evaluate_images(
    upscaler: &dyn Upscaler,
    images: &[(String, FloatImage)],
    protocol: &EvalProtocol,
) -> Result<MetricReport> {
    let rows = images
        .iter()
        .map(|(id, hr)| score_image(upscaler, id, hr, protocol))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        scale: upscaler.scale(),
        protocol: *protocol,
        rows,
    })
}

/// PNG files in `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Evaluate every PNG under `hr_dir`.
pub fn evaluate_model(
    upscaler: &dyn Upscaler,
    hr_dir: &Path,
    protocol: &EvalProtocol,
) -> Result<MetricReport> {
    let paths = list_pngs(hr_dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no PNG images in {}",
            hr_dir.display()
        )));
    }
    let images = paths
        .iter()
        .map(|p| Ok((image_id(p), imaging::load_png(p)?.to_float())))
        .collect::<Result<Vec<_>>>()?;
    evaluate_images(upscaler, &images, protocol)
}
