//! Images, PNG I/O and the classical operators: bicubic resampling, Gaussian
//! blur, Sobel edges and luma conversion.

use std::fmt;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageReader};
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Default standard deviation of the 7×7 blur.
pub const GAUSSIAN_SIGMA: f64 = 1.4;
pub const GAUSSIAN_SIZE: usize = 7;

/// 8-bit image, row-major with interleaved channels (1 or 3).
#[derive(Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        check_layout(width, height, channels, data.len())?;
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn to_float(&self) -> FloatImage {
        FloatImage {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }
}

impl fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageBuffer({}x{}x{})", self.width, self.height, self.channels)
    }
}

/// Floating-point image on the `[0, 255]` scale, same layout as [`ImageBuffer`].
#[derive(Clone, PartialEq)]
pub struct FloatImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl fmt::Debug for FloatImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FloatImage({}x{}x{})", self.width, self.height, self.channels)
    }
}

fn check_layout(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::Image(format!("{channels} channels (expected 1 or 3)")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("empty image {width}x{height}")));
    }
    if len != width * height * channels {
        return Err(Error::Image(format!(
            "{len} samples for a {width}x{height}x{channels} image"
        )));
    }
    Ok(())
}

impl FloatImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_layout(width, height, channels, data.len())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Image(format!("non-finite sample {v}")));
        }
        Ok(FloatImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        FloatImage {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        FloatImage {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FloatImage {
        FloatImage {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Clip to `[0, 255]` and round to 8 bits.
    pub fn to_u8(&self) -> ImageBuffer {
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| quantize(v)).collect(),
        }
    }

    /// Round-trip through 8 bits, staying in floating point.
    pub fn quantized(&self) -> FloatImage {
        self.map(|v| quantize(v) as f64)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<FloatImage> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::Image(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + width * c]);
        }
        Ok(FloatImage {
            width,
            height,
            channels: c,
            data,
        })
    }

    /// Largest centered crop whose sides are multiples of `r`.
    pub fn center_crop_to_multiple(&self, r: usize) -> Result<FloatImage> {
        let w = self.width - self.width % r;
        let h = self.height - self.height % r;
        if w == 0 || h == 0 {
            return Err(Error::Image(format!(
                "{}x{} image is smaller than the scale {r}",
                self.width, self.height
            )));
        }
        if w == self.width && h == self.height {
            return Ok(self.clone());
        }
        self.crop((self.width - w) / 2, (self.height - h) / 2, w, h)
    }

    /// Drop `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<FloatImage> {
        if 2 * border >= self.width || 2 * border >= self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {border} is not smaller than half of {}x{}",
                self.width, self.height
            )));
        }
        self.crop(border, border, self.width - 2 * border, self.height - 2 * border)
    }

    /// One channel as a single-channel image.
    pub fn channel(&self, c: usize) -> FloatImage {
        FloatImage::from_fn(self.width, self.height, 1, |x, y, _| self.get(x, y, c))
    }

    pub fn same_dims(&self, other: &FloatImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

pub fn load_png(path: &Path) -> Result<ImageBuffer> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let img = reader
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    from_dynamic(img).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

fn from_dynamic(img: DynamicImage) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color() {
        ColorType::L8 => ImageBuffer::new(w, h, 1, img.into_luma8().into_raw()),
        ColorType::La8 => ImageBuffer::new(w, h, 1, img.to_luma8().into_raw()),
        // Palette images arrive already expanded to RGB(A) by the decoder.
        ColorType::Rgb8 => ImageBuffer::new(w, h, 3, img.into_rgb8().into_raw()),
        ColorType::Rgba8 => ImageBuffer::new(w, h, 3, img.to_rgb8().into_raw()),
        other => Err(Error::Image(format!(
            "unsupported pixel format {other:?}; only 8-bit gray or RGB is accepted"
        ))),
    }
}

pub fn save_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &img.data,
        img.width as u32,
        img.height as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Positive rational resize factor `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidArgument(format!("scale {num}/{den} must be positive")));
        }
        Ok(Ratio { num, den })
    }

    pub fn up(r: usize) -> Self {
        Ratio { num: r, den: 1 }
    }

    pub fn down(r: usize) -> Self {
        Ratio { num: 1, den: r }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `ceil(len · num / den)`.
    pub fn apply(self, len: usize) -> usize {
        (len * self.num).div_ceil(self.den)
    }
}

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Resampling taps for one output coordinate: clamped source indices and
/// normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Per-output taps along one axis, following the imresize construction:
/// output pixel `i` (1-based) maps to `u = i/s + (1 - 1/s)/2`; when shrinking
/// with antialiasing the kernel is stretched by `1/s`.
pub fn resize_taps(in_len: usize, out_len: usize, scale: f64, antialias: bool) -> Vec<Taps> {
    let shrink = antialias && scale < 1.0;
    let width = if shrink { 4.0 / scale } else { 4.0 };
    let taps = width.ceil() as isize + 2;
    (1..=out_len)
        .map(|i| {
            let u = i as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - width / 2.0).floor() as isize;
            let mut indices = Vec::with_capacity(taps as usize);
            let mut weights = Vec::with_capacity(taps as usize);
            for j in 0..taps {
                let idx = left + j;
                let d = u - idx as f64;
                let w = if shrink { scale * cubic(scale * d) } else { cubic(d) };
                indices.push((idx - 1).clamp(0, in_len as isize - 1) as usize);
                weights.push(w);
            }
            let total: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= total;
            }
            Taps { indices, weights }
        })
        .collect()
}

/// Bicubic resize by a rational factor.
pub fn bicubic_resize(img: &FloatImage, scale: Ratio, antialias: bool) -> Result<FloatImage> {
    let out_w = scale.apply(img.width);
    let out_h = scale.apply(img.height);
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument("resize to an empty image".into()));
    }
    if scale.num == scale.den {
        return Ok(img.clone());
    }
    let s = scale.value();
    let rows = resize_taps(img.height, out_h, s, antialias);
    let cols = resize_taps(img.width, out_w, s, antialias);
    Ok(resample(img, &rows, &cols))
}

/// Heights first, then widths.
fn resample(img: &FloatImage, rows: &[Taps], cols: &[Taps]) -> FloatImage {
    let c = img.channels;
    let out_h = rows.len();
    let out_w = cols.len();
    let mut tmp = vec![0.0; img.width * out_h * c];
    for (oy, t) in rows.iter().enumerate() {
        let dst = &mut tmp[oy * img.width * c..(oy + 1) * img.width * c];
        for (&iy, &w) in t.indices.iter().zip(&t.weights) {
            let src = &img.data[iy * img.width * c..(iy + 1) * img.width * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    let mut out = vec![0.0; out_w * out_h * c];
    for oy in 0..out_h {
        let src = &tmp[oy * img.width * c..(oy + 1) * img.width * c];
        for (ox, t) in cols.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&ix, &w) in t.indices.iter().zip(&t.weights) {
                    acc += w * src[ix * c + ch];
                }
                out[(oy * out_w + ox) * c + ch] = acc;
            }
        }
    }
    FloatImage {
        width: out_w,
        height: out_h,
        channels: c,
        data: out,
    }
}

/// Bicubic degradation by `1/r` after center-cropping to a multiple of `r`.
pub fn degrade(hr: &FloatImage, r: usize) -> Result<FloatImage> {
    let hr = hr.center_crop_to_multiple(r)?;
    bicubic_resize(&hr, Ratio::down(r), true)
}

/// Sampled, normalized 1-D Gaussian of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Separable 7×7 Gaussian blur with clamp-to-edge borders, per channel.
pub fn gaussian_blur_7x7(img: &FloatImage, sigma: f64) -> Result<FloatImage> {
    if sigma.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let k = gaussian_kernel(GAUSSIAN_SIZE, sigma);
    let half = (GAUSSIAN_SIZE / 2) as isize;
    let (w, h, c) = (img.width, img.height, img.channels);
    let horizontal = FloatImage::from_fn(w, h, c, |x, y, ch| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * img.get_clamped(x as isize + i as isize - half, y as isize, ch))
            .sum()
    });
    Ok(FloatImage::from_fn(w, h, c, |x, y, ch| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| {
                kv * horizontal.get_clamped(x as isize, y as isize + i as isize - half, ch)
            })
            .sum()
    }))
}

/// Sobel gradient magnitude `min(sqrt(gx² + gy²), 255)` of a single-channel image.
pub fn sobel_magnitude(img: &FloatImage) -> Result<FloatImage> {
    if img.channels != 1 {
        return Err(Error::Image(format!(
            "Sobel needs a single-channel image, got {} channels",
            img.channels
        )));
    }
    Ok(FloatImage::from_fn(img.width, img.height, 1, |x, y, _| {
        let p = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy, 0);
        let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        (gx * gx + gy * gy).sqrt().min(255.0)
    }))
}

/// Studio-swing luma: `16 + (65.481 R + 128.553 G + 24.966 B) / 255`.
pub fn rgb_to_y(img: &FloatImage) -> Result<FloatImage> {
    if img.channels != 3 {
        return Err(Error::Image(format!(
            "luma needs an RGB image, got {} channels",
            img.channels
        )));
    }
    Ok(FloatImage::from_fn(img.width, img.height, 1, |x, y, _| {
        16.0 + (65.481 * img.get(x, y, 0) + 128.553 * img.get(x, y, 1) + 24.966 * img.get(x, y, 2))
            / 255.0
    }))
}

/// Full-range grayscale (`0.299 R + 0.587 G + 0.114 B`); gray input passes through.
pub fn to_grayscale(img: &FloatImage) -> FloatImage {
    if img.channels == 1 {
        return img.clone();
    }
    FloatImage::from_fn(img.width, img.height, 1, |x, y, _| {
        0.299 * img.get(x, y, 0) + 0.587 * img.get(x, y, 1) + 0.114 * img.get(x, y, 2)
    })
}

pub fn gray_to_rgb(img: &FloatImage) -> FloatImage {
    if img.channels == 3 {
        return img.clone();
    }
    FloatImage::from_fn(img.width, img.height, 3, |x, y, _| img.get(x, y, 0))
}

/// Stack same-sized RGB images into an `[N, 3, H, W]` tensor scaled to `[0, 1]`.
pub fn images_to_tensor<T: Scalar>(images: &[&FloatImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (w, h) = (first.width, first.height);
    for img in images {
        if img.channels != 3 || img.width != w || img.height != h {
            return Err(Error::Image(format!(
                "cannot batch {img:?} with {w}x{h}x3 images"
            )));
        }
    }
    Ok(Tensor::from_fn(Shape::new(images.len(), 3, h, w), |n, c, y, x| {
        T::from_f64(images[n].get(x, y, c) / 255.0)
    }))
}

/// Batch element `n` of an `[N, 3, H, W]` tensor back on the `[0, 255]` scale.
pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<FloatImage> {
    let s = t.shape();
    if n >= s.n || (s.c != 3 && s.c != 1) {
        return Err(Error::shape(
            "tensor_to_image",
            format!("cannot take image {n} from {s}"),
        ));
    }
    Ok(FloatImage::from_fn(s.w, s.h, s.c, |x, y, c| {
        t.at(n, c, y, x).to_f64() * 255.0
    }))
}

/// Black/white checkerboard with squares of side `period / 2`.
pub fn checkerboard(width: usize, height: usize, period: usize, channels: usize) -> FloatImage {
    let half = (period / 2).max(1);
    FloatImage::from_fn(width, height, channels, |x, y, _| {
        if (x / half + y / half).is_multiple_of(2) {
            0.0
        } else {
            255.0
        }
    })
}

enum Primitive {
    Disc { cx: f64, cy: f64, r: f64 },
    Rect { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64 },
    Stripes { nx: f64, ny: f64, period: f64, duty: f64 },
    Line { px: f64, py: f64, nx: f64, ny: f64, half_width: f64 },
}

impl Primitive {
    fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            Primitive::Disc { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Primitive::Rect {
                cx,
                cy,
                hw,
                hh,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * cos + dy * sin;
                let v = -dx * sin + dy * cos;
                u.abs() <= hw && v.abs() <= hh
            }
            Primitive::Stripes {
                nx,
                ny,
                period,
                duty,
            } => (x * nx + y * ny).rem_euclid(period) < duty * period,
            Primitive::Line {
                px,
                py,
                nx,
                ny,
                half_width,
            } => ((x - px) * nx + (y - py) * ny).abs() <= half_width,
        }
    }
}

/// Random anti-aliased RGB scene of geometric shapes, stripes and lines over a
/// smooth gradient. Rendered with 4×4 supersampling.
pub fn synthetic_scene<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> FloatImage {
    let color = |rng: &mut R| -> [f64; 3] {
        [rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)]
    };
    let base = color(rng);
    let tint = color(rng);
    let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let (fw, fh) = (width as f64, height as f64);
    let extent = fw.max(fh);

    let count = rng.gen_range(6..12);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let cx = rng.gen_range(0.0..fw);
        let cy = rng.gen_range(0.0..fh);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let prim = match rng.gen_range(0..4) {
            0 => Primitive::Disc {
                cx,
                cy,
                r: rng.gen_range(0.05..0.3) * extent,
            },
            1 => Primitive::Rect {
                cx,
                cy,
                hw: rng.gen_range(0.05..0.3) * extent,
                hh: rng.gen_range(0.05..0.3) * extent,
                cos: angle.cos(),
                sin: angle.sin(),
            },
            2 => Primitive::Stripes {
                nx: angle.cos(),
                ny: angle.sin(),
                period: rng.gen_range(4.0..16.0),
                duty: rng.gen_range(0.3..0.7),
            },
            _ => Primitive::Line {
                px: cx,
                py: cy,
                nx: angle.cos(),
                ny: angle.sin(),
                half_width: rng.gen_range(0.5..3.0),
            },
        };
        // Stripes cover the whole frame, so confine them to a disc.
        let mask = match prim {
            Primitive::Stripes { .. } => Some(Primitive::Disc {
                cx,
                cy,
                r: rng.gen_range(0.1..0.3) * extent,
            }),
            _ => None,
        };
        shapes.push((prim, mask, color(rng)));
    }

    const SS: usize = 4;
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let mut acc = [0.0f64; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f64 + (sx as f64 + 0.5) / SS as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / SS as f64;
                    let t = ((gx * px + gy * py) / extent).clamp(-1.0, 1.0) * 0.5 + 0.5;
                    let mut c = [0.0; 3];
                    for k in 0..3 {
                        c[k] = base[k] * (1.0 - t) + tint[k] * t;
                    }
                    for (prim, mask, col) in &shapes {
                        let inside = prim.covers(px, py)
                            && mask.as_ref().is_none_or(|m| m.covers(px, py));
                        if inside {
                            c = *col;
                        }
                    }
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for v in acc {
                data.push(v / (SS * SS) as f64);
            }
        }
    }
    FloatImage {
        width,
        height,
        channels: 3,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-12);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn ratio_sizes() {
        assert_eq!(Ratio::down(3).apply(48), 16);
        assert_eq!(Ratio::down(3).apply(49), 17);
        assert_eq!(Ratio::up(4).apply(25), 100);
    }

    #[test]
    fn upscale_taps_are_interpolating_at_integer_ratio() {
        // x2 upscaling: output 2 maps to u = 1.25, never exactly onto a source pixel.
        let taps = resize_taps(8, 16, 2.0, true);
        for t in &taps {
            let s: f64 = t.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sobel_step_saturates() {
        let img = FloatImage::from_fn(6, 4, 1, |x, _, _| if x < 3 { 0.0 } else { 255.0 });
        let s = sobel_magnitude(&img).unwrap();
        assert_eq!(s.get(2, 1, 0), 255.0);
        assert_eq!(s.get(0, 1, 0), 0.0);
    }

    #[test]
    fn luma_endpoints() {
        let black = FloatImage::filled(2, 2, 3, 0.0);
        let white = FloatImage::filled(2, 2, 3, 255.0);
        assert!((rgb_to_y(&black).unwrap().get(0, 0, 0) - 16.0).abs() < 1e-12);
        assert!((rgb_to_y(&white).unwrap().get(1, 1, 0) - 235.0).abs() < 1e-3);
    }

    #[test]
    fn center_crop() {
        let img = FloatImage::from_fn(10, 7, 1, |x, y, _| (x + 10 * y) as f64);
        let c = img.center_crop_to_multiple(4).unwrap();
        assert_eq!((c.width(), c.height()), (8, 4));
        assert_eq!(c.get(0, 0, 0), 11.0);
    }

    #[test]
    fn scene_is_in_range() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let img = synthetic_scene(32, 24, &mut rng);
        assert!(img.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }
}
