//! A training-free image embedder used in place of a learned backbone.
//!
//! The image is split into a G×G grid. Each cell contributes its centered mean
//! luminance (the layout channel) followed by a B-bin histogram of gradient
//! orientations weighted by gradient magnitude. The concatenation is
//! L2-normalized.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anonymize::{RasterError, RasterImage};
use crate::par;
use crate::store::{DatasetManifest, EmbeddingError, EmbeddingMatrix};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("image {width}x{height} is smaller than the {grid}x{grid} grid")]
    ImageTooSmall { width: u32, height: u32, grid: u32 },
    #[error("invalid embedder config: {0}")]
    Config(String),
    #[error("image has an all-zero feature vector and cannot be normalized")]
    Degenerate,
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("record {id:?}: {source}")]
    Image {
        id: String,
        #[source]
        source: RasterError,
    },
    #[error("record {id:?}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<EmbedError>,
    },
    #[error(transparent)]
    Matrix(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub grid: u32,
    pub bins: u32,
    pub include_layout_channel: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            bins: 8,
            include_layout_channel: true,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.grid < 1 {
            return Err(EmbedError::Config("grid must be at least 1".into()));
        }
        if self.bins < 2 {
            return Err(EmbedError::Config("bins must be at least 2".into()));
        }
        Ok(())
    }

    fn per_cell(&self) -> usize {
        self.bins as usize + usize::from(self.include_layout_channel)
    }

    pub fn dim(&self) -> usize {
        (self.grid * self.grid) as usize * self.per_cell()
    }
}

/// `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn luminance(rgb: [u8; 3]) -> u8 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64).round() as u8
}

pub fn embed_image(img: &RasterImage, cfg: &EmbedderConfig) -> Result<Vec<f32>, EmbedError> {
    cfg.validate()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let g = cfg.grid as usize;
    if w < g || h < g {
        return Err(EmbedError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            grid: cfg.grid,
        });
    }

    let lum: Vec<f64> = img
        .pixels()
        .chunks_exact(3)
        .map(|p| luminance([p[0], p[1], p[2]]) as f64)
        .collect();
    let at = |x: usize, y: usize| lum[y * w + x];

    let bins = cfg.bins as usize;
    let per_cell = cfg.per_cell();
    let mut features = vec![0f64; cfg.dim()];
    for cy in 0..g {
        let (y0, y1) = (cy * h / g, (cy + 1) * h / g);
        for cx in 0..g {
            let (x0, x1) = (cx * w / g, (cx + 1) * w / g);
            let cell = &mut features[(cy * g + cx) * per_cell..(cy * g + cx + 1) * per_cell];
            let (layout, hist) = cell.split_at_mut(usize::from(cfg.include_layout_channel));
            let mut lum_sum = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    lum_sum += at(x, y);
                    let gx = at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y);
                    let gy = at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1));
                    let mag = (gx * gx + gy * gy).sqrt();
                    if mag > 0.0 {
                        let angle = gy.atan2(gx).rem_euclid(TAU);
                        let bin = ((angle / TAU * bins as f64) as usize).min(bins - 1);
                        hist[bin] += mag;
                    }
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            for v in hist.iter_mut() {
                *v /= n * 255.0;
            }
            if let Some(l) = layout.first_mut() {
                *l = (lum_sum / n - 127.5) / 127.5;
            }
        }
    }

    let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(EmbedError::Degenerate);
    }
    Ok(features.into_iter().map(|v| (v / norm) as f32).collect())
}

/// Embeds in-memory images; row order follows `items`.
pub fn embed_images<S: AsRef<str> + Sync>(
    items: &[(S, RasterImage)],
    cfg: &EmbedderConfig,
) -> Result<EmbeddingMatrix, EmbedError> {
    cfg.validate()?;
    let rows = par::map(items, |(id, img)| {
        embed_image(img, cfg).map_err(|e| EmbedError::Record {
            id: id.as_ref().to_owned(),
            source: Box::new(e),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingMatrix::from_rows(
        cfg.dim(),
        items.iter().map(|(id, _)| id.as_ref().to_owned()).zip(rows),
    )?)
}

/// Loads and embeds every record of `manifest`, in manifest order.
pub fn embed_manifest(
    manifest: &DatasetManifest,
    cfg: &EmbedderConfig,
) -> Result<EmbeddingMatrix, EmbedError> {
    if manifest.records.is_empty() {
        return Err(EmbedError::EmptyManifest);
    }
    cfg.validate()?;
    let rows = par::map(&manifest.records, |rec| {
        let img = RasterImage::load_png(&rec.path).map_err(|source| EmbedError::Image {
            id: rec.id.clone(),
            source,
        })?;
        embed_image(&img, cfg).map_err(|e| EmbedError::Record {
            id: rec.id.clone(),
            source: Box::new(e),
        })
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingMatrix::from_rows(
        cfg.dim(),
        manifest.records.iter().map(|r| r.id.clone()).zip(rows),
    )?)
}
