//! Edge-rich benchmark selection: blur, Sobel, threshold, mean response.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{self, FloatImage, GAUSSIAN_SIGMA};
use crate::metrics::{image_id, list_pngs};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectorConfig {
    /// Edge responses below this are zeroed.
    pub edge_threshold: f64,
    /// An image is kept when its mean response exceeds this.
    pub response_threshold: f64,
    pub sigma: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            edge_threshold: 128.0,
            response_threshold: 12.0,
            sigma: GAUSSIAN_SIGMA,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=255.0).contains(&self.edge_threshold) {
            return Err(Error::Config(format!(
                "edge threshold {} outside [0, 255]",
                self.edge_threshold
            )));
        }
        if self.response_threshold.is_nan() || self.response_threshold < 0.0 {
            return Err(Error::Config(format!(
                "response threshold {} must be non-negative",
                self.response_threshold
            )));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::Config(format!("sigma {} must be positive", self.sigma)));
        }
        Ok(())
    }
}

/// Mean thresholded Sobel response over all pixels.
pub fn edge_response(img: &FloatImage, cfg: &SelectorConfig) -> Result<f64> {
    let gray = imaging::to_grayscale(img);
    let blurred = imaging::gaussian_blur_7x7(&gray, cfg.sigma)?;
    let edges = imaging::sobel_magnitude(&blurred)?;
    let kept: f64 = edges
        .data()
        .iter()
        .map(|&v| if v < cfg.edge_threshold { 0.0 } else { v })
        .sum();
    Ok(kept / edges.data().len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub id: String,
    /// Name of the directory the image came from.
    pub source: String,
    pub response: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub config: SelectorConfig,
    /// Every readable image, sorted by id.
    pub scored: Vec<Scored>,
    /// Unreadable files and the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl SelectionReport {
    pub fn selected(&self) -> impl Iterator<Item = &Scored> {
        self.scored.iter().filter(|s| s.selected)
    }

    pub fn count(&self) -> usize {
        self.selected().count()
    }

    /// Selected count per source, in source order of first appearance.
    pub fn per_source(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for s in &self.scored {
            let pos = match out.iter().position(|(name, _)| *name == s.source) {
                Some(p) => p,
                None => {
                    out.push((s.source.clone(), 0));
                    out.len() - 1
                }
            };
            if s.selected {
                out[pos].1 += 1;
            }
        }
        out
    }

    /// Counts of responses in `bins` equal-width buckets over `[0, max]`.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let bins = bins.max(1);
        let max = self
            .scored
            .iter()
            .map(|s| s.response)
            .fold(0.0f64, f64::max)
            .max(self.config.response_threshold * 2.0)
            .max(1.0);
        let step = max / bins as f64;
        let mut counts = vec![0usize; bins];
        for s in &self.scored {
            let b = ((s.response / step) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, n)| (i as f64 * step, (i + 1) as f64 * step, n))
            .collect()
    }

    /// Selected ids, one per line.
    pub fn to_list(&self) -> String {
        self.selected().map(|s| format!("{}\n", s.id)).collect()
    }
}

impl fmt::Display for SelectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "selected {} of {} images (t_e = {}, t_r = {}, sigma = {})",
            self.count(),
            self.scored.len(),
            self.config.edge_threshold,
            self.config.response_threshold,
            self.config.sigma
        )?;
        for (source, n) in self.per_source() {
            writeln!(f, "  {source}: {n}")?;
        }
        writeln!(f, "response histogram:")?;
        for (lo, hi, n) in self.histogram(12) {
            let mark = if lo < self.config.response_threshold && self.config.response_threshold <= hi {
                " <- t_r"
            } else {
                ""
            };
            writeln!(f, "  [{lo:7.2}, {hi:7.2})  {n:4}{mark}")?;
        }
        for (path, why) in &self.skipped {
            writeln!(f, "skipped {}: {why}", path.display())?;
        }
        Ok(())
    }
}

/// Score in-memory images; `(id, source, image)` triples.
pub fn select_images(
    images: &[(String, String, FloatImage)],
    cfg: &SelectorConfig,
) -> Result<SelectionReport> {
    cfg.validate()?;
    let mut scored = images
        .iter()
        .map(|(id, source, img)| {
            let response = edge_response(img, cfg)?;
            Ok(Scored {
                id: id.clone(),
                source: source.clone(),
                response,
                selected: response > cfg.response_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| (&a.source, &a.id).cmp(&(&b.source, &b.id)));
    Ok(SelectionReport {
        config: *cfg,
        scored,
        skipped: Vec::new(),
    })
}

/// Score every PNG in each directory. Unreadable files are skipped and listed.
pub fn select_benchmark(dirs: &[&Path], cfg: &SelectorConfig) -> Result<SelectionReport> {
    cfg.validate()?;
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    let mut any = false;
    for dir in dirs {
        let source = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        for path in list_pngs(dir)? {
            any = true;
            match imaging::load_png(&path) {
                Ok(img) => images.push((image_id(&path), source.clone(), img.to_float())),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push((path, e.to_string()));
                }
            }
        }
    }
    if !any {
        return Err(Error::InvalidArgument("no PNG images to select from".into()));
    }
    let mut report = select_images(&images, cfg)?;
    report.skipped = skipped;
    Ok(report)
}
