use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::{self, FloatImage};
use crate::metrics::{image_id, list_pngs};
use crate::tensor::{Scalar, Tensor};

/// One of the eight symmetries of the square: optional horizontal flip, then
/// `quarter_turns` counter-clockwise rotations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Augment {
    pub const IDENTITY: Augment = Augment {
        flip: false,
        quarter_turns: 0,
    };

    pub fn from_index(i: usize) -> Self {
        Augment {
            flip: i >= 4,
            quarter_turns: (i % 4) as u8,
        }
    }

    pub fn all() -> impl Iterator<Item = Augment> {
        (0..8).map(Augment::from_index)
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Augment::from_index(rng.gen_range(0..8))
    }

    pub fn apply(self, img: &FloatImage) -> FloatImage {
        let mut out = if self.flip {
            let w = img.width();
            FloatImage::from_fn(w, img.height(), img.channels(), |x, y, c| img.get(w - 1 - x, y, c))
        } else {
            img.clone()
        };
        for _ in 0..self.quarter_turns {
            out = rotate_ccw(&out);
        }
        out
    }
}

fn rotate_ccw(img: &FloatImage) -> FloatImage {
    let (w, h) = (img.width(), img.height());
    // Output is h wide and w tall; output (x, y) takes input (w - 1 - y, x).
    FloatImage::from_fn(h, w, img.channels(), |x, y, c| img.get(w - 1 - y, x, c))
}

/// An HR image and its bicubic-degraded, 8-bit-quantized LR counterpart.
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub id: String,
    pub hr: FloatImage,
    pub lr: FloatImage,
}

impl TrainPair {
    pub fn new(id: impl Into<String>, hr: &FloatImage, scale: usize) -> Result<Self> {
        let hr = imaging::gray_to_rgb(&hr.center_crop_to_multiple(scale)?);
        let lr = imaging::degrade(&hr, scale)?.quantized();
        Ok(TrainPair {
            id: id.into(),
            hr,
            lr,
        })
    }
}

/// Aligned LR/HR crops of side `patch` and `patch · scale`, with a shared
/// random symmetry.
pub fn sample_patch<R: Rng + ?Sized>(
    pair: &TrainPair,
    scale: usize,
    patch: usize,
    rng: &mut R,
) -> Result<(FloatImage, FloatImage)> {
    let (lw, lh) = (pair.lr.width(), pair.lr.height());
    if lw < patch || lh < patch {
        return Err(Error::Image(format!(
            "`{}` is too small: LR {lw}x{lh} cannot hold a {patch}x{patch} patch",
            pair.id
        )));
    }
    let x = rng.gen_range(0..=lw - patch);
    let y = rng.gen_range(0..=lh - patch);
    let lr = pair.lr.crop(x, y, patch, patch)?;
    let hr = pair
        .hr
        .crop(x * scale, y * scale, patch * scale, patch * scale)?;
    let aug = Augment::sample(rng);
    Ok((aug.apply(&lr), aug.apply(&hr)))
}

/// Pre-degraded training corpus.
#[derive(Clone, Debug)]
pub struct Dataset {
    scale: usize,
    pairs: Vec<TrainPair>,
}

impl Dataset {
    pub fn from_images(images: &[(String, FloatImage)], scale: usize, patch: usize) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidArgument("training corpus is empty".into()));
        }
        let pairs = images
            .iter()
            .map(|(id, img)| {
                let side = patch * scale;
                if img.width() < side || img.height() < side {
                    return Err(Error::Image(format!(
                        "`{id}` ({}x{}) is smaller than the {side}x{side} HR patch",
                        img.width(),
                        img.height()
                    )));
                }
                TrainPair::new(id.clone(), img, scale)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { scale, pairs })
    }

    pub fn load_dir(dir: &Path, scale: usize, patch: usize) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
            ));
        }
        let images = list_pngs(dir)?
            .iter()
            .map(|p| Ok((image_id(p), imaging::load_png(p)?.to_float())))
            .collect::<Result<Vec<_>>>()?;
        if images.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no PNG images in {}",
                dir.display()
            )));
        }
        Dataset::from_images(&images, scale, patch)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[TrainPair] {
        &self.pairs
    }

    /// `batch` random patch pairs as `[B, 3, p, p]` and `[B, 3, rp, rp]` in `[0, 1]`.
    pub fn batch<T: Scalar, R: Rng + ?Sized>(
        &self,
        batch: usize,
        patch: usize,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut lrs = Vec::with_capacity(batch);
        let mut hrs = Vec::with_capacity(batch);
        for _ in 0..batch {
            let pair = &self.pairs[rng.gen_range(0..self.pairs.len())];
            let (lr, hr) = sample_patch(pair, self.scale, patch, rng)?;
            lrs.push(lr);
            hrs.push(hr);
        }
        let lr_refs: Vec<_> = lrs.iter().collect();
        let hr_refs: Vec<_> = hrs.iter().collect();
        Ok((
            imaging::images_to_tensor(&lr_refs)?,
            imaging::images_to_tensor(&hr_refs)?,
        ))
    }
}
