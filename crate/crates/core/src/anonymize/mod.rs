//! Pixelation, Gaussian blur and masking of sensitive regions.
//!
//! Every operation touches only pixels inside the (clipped) target box. The
//! degree of anonymization selects a seeded prefix of a random permutation of
//! the boxes, so for a fixed seed the regions anonymized at a lower degree are
//! always a subset of those anonymized at a higher degree.

mod raster;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use raster::{RasterError, RasterImage};

use crate::store::BoundingBox;

#[derive(Debug, Error, PartialEq)]
pub enum AnonymizeError {
    #[error("degree {0} outside [0, 1]")]
    Degree(f64),
    #[error("pixel block must be at least 1")]
    PixelBlock,
    #[error("blur sigma factor must be positive, got {0}")]
    SigmaFactor(f64),
    #[error("unknown anonymization method {0:?} (expected pixel, blur or mask)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pixel,
    Blur,
    Mask,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pixel, Method::Blur, Method::Mask];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Pixel => "pixel",
            Method::Blur => "blur",
            Method::Mask => "mask",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = AnonymizeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" | "pixelate" | "pixelation" => Ok(Method::Pixel),
            "blur" => Ok(Method::Blur),
            "mask" => Ok(Method::Mask),
            _ => Err(AnonymizeError::UnknownMethod(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationSpec {
    pub method: Method,
    pub degree: f64,
    pub seed: u64,
    pub pixel_block: u32,
    pub blur_sigma_factor: f64,
    pub mask_fill: [u8; 3],
}

impl AnonymizationSpec {
    pub fn new(method: Method, degree: f64, seed: u64) -> Self {
        Self {
            method,
            degree,
            seed,
            pixel_block: 8,
            blur_sigma_factor: 0.25,
            mask_fill: [0, 0, 0],
        }
    }

    pub fn validate(&self) -> Result<(), AnonymizeError> {
        if !(0.0..=1.0).contains(&self.degree) {
            return Err(AnonymizeError::Degree(self.degree));
        }
        if self.pixel_block < 1 {
            return Err(AnonymizeError::PixelBlock);
        }
        if !(self.blur_sigma_factor > 0.0 && self.blur_sigma_factor.is_finite()) {
            return Err(AnonymizeError::SigmaFactor(self.blur_sigma_factor));
        }
        Ok(())
    }
}

/// Number of boxes anonymized at `degree`: `degree·n` rounded half up.
pub fn selected_count(n: usize, degree: f64) -> usize {
    if degree.is_nan() || degree <= 0.0 {
        return 0;
    }
    let degree = degree.min(1.0);
    // the epsilon absorbs products such as 0.35·10 = 3.4999999999999996
    ((degree * n as f64 + 0.5 + 1e-9).floor() as usize).min(n)
}

/// Indices of the boxes chosen at `degree`, in ascending order.
pub fn select_indices(n: usize, degree: f64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..selected_count(n, degree)].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Uniform sample without replacement of `round_half_up(degree·|boxes|)` boxes,
/// returned in input order.
pub fn select_boxes(boxes: &[BoundingBox], degree: f64, seed: u64) -> Vec<BoundingBox> {
    select_indices(boxes.len(), degree, seed)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

pub fn pixelate_region(img: &RasterImage, bbox: &BoundingBox, block: u32) -> RasterImage {
    let mut out = img.clone();
    pixelate_in_place(&mut out, bbox, block);
    out
}

pub fn blur_region(img: &RasterImage, bbox: &BoundingBox, sigma_factor: f64) -> RasterImage {
    let mut out = img.clone();
    blur_in_place(&mut out, bbox, sigma_factor);
    out
}

pub fn mask_region(img: &RasterImage, bbox: &BoundingBox, fill: [u8; 3]) -> RasterImage {
    let mut out = img.clone();
    mask_in_place(&mut out, bbox, fill);
    out
}

/// Replaces each `block`×`block` tile (anchored at the box origin, edge tiles
/// truncated) by its per-channel mean, rounded half away from zero.
pub fn pixelate_in_place(img: &mut RasterImage, bbox: &BoundingBox, block: u32) {
    let Some(b) = bbox.clip(img.width(), img.height()) else {
        return;
    };
    let block = block.max(1);
    for ty in (b.y..b.y + b.h).step_by(block as usize) {
        let th = block.min(b.y + b.h - ty);
        for tx in (b.x..b.x + b.w).step_by(block as usize) {
            let tw = block.min(b.x + b.w - tx);
            let mut sum = [0u64; 3];
            for y in ty..ty + th {
                for x in tx..tx + tw {
                    let p = img.get(x, y);
                    for c in 0..3 {
                        sum[c] += p[c] as u64;
                    }
                }
            }
            let n = tw as u64 * th as u64;
            let mean = sum.map(|s| ((s + n / 2) / n) as u8);
            img.fill_rect(tx, ty, tw, th, mean);
        }
    }
}

/// Gaussian blur of the box crop with σ = `sigma_factor`·min(w, h), kernel
/// radius ⌈2σ⌉ and edge-replicate padding at the crop border.
///
/// Returns `false` (image untouched) when σ < 0.5.
pub fn blur_in_place(img: &mut RasterImage, bbox: &BoundingBox, sigma_factor: f64) -> bool {
    let Some(b) = bbox.clip(img.width(), img.height()) else {
        return false;
    };
    let sigma = sigma_factor * b.w.min(b.h) as f64;
    if sigma.is_nan() || sigma < 0.5 {
        log::warn!(
            "box {}x{} at ({}, {}) too small to blur (sigma {sigma:.3} < 0.5), left unchanged",
            b.w,
            b.h,
            b.x,
            b.y
        );
        return false;
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (b.w as usize, b.h as usize);

    let mut crop = vec![0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let p = img.get(b.x + x as u32, b.y + y as u32);
            for c in 0..3 {
                crop[(y * w + x) * 3 + c] = p[c] as f64;
            }
        }
    }

    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut horiz = vec![0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (k, weight) in kernel.iter().enumerate() {
                let sx = clamp(x as i64 + k as i64 - radius, w);
                for c in 0..3 {
                    acc[c] += weight * crop[(y * w + sx) * 3 + c];
                }
            }
            horiz[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (k, weight) in kernel.iter().enumerate() {
                let sy = clamp(y as i64 + k as i64 - radius, h);
                for c in 0..3 {
                    acc[c] += weight * horiz[(sy * w + x) * 3 + c];
                }
            }
            img.set(b.x + x as u32, b.y + y as u32, acc.map(quantize));
        }
    }
    true
}

pub fn mask_in_place(img: &mut RasterImage, bbox: &BoundingBox, fill: [u8; 3]) {
    if let Some(b) = bbox.clip(img.width(), img.height()) {
        img.fill_rect(b.x, b.y, b.w, b.h, fill);
    }
}

/// Normalized 1-D Gaussian weights over `-⌈2σ⌉..=⌈2σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (2.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Applies `spec.method` to the boxes chosen by [`select_boxes`], in input order.
pub fn anonymize_image(
    img: &RasterImage,
    boxes: &[BoundingBox],
    spec: &AnonymizationSpec,
) -> Result<RasterImage, AnonymizeError> {
    spec.validate()?;
    let mut out = img.clone();
    for b in select_boxes(boxes, spec.degree, spec.seed) {
        match spec.method {
            Method::Pixel => pixelate_in_place(&mut out, &b, spec.pixel_block),
            Method::Blur => {
                blur_in_place(&mut out, &b, spec.blur_sigma_factor);
            }
            Method::Mask => mask_in_place(&mut out, &b, spec.mask_fill),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::BoxKind;
    use proptest::prelude::*;

    fn bx(x: u32, y: u32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(x, y, w, h, BoxKind::Text)
    }

    fn noise(w: u32, h: u32, seed: u64) -> RasterImage {
        let mut s = seed | 1;
        let px = (0..w * h * 3)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 24) as u8
            })
            .collect();
        RasterImage::new(w, h, px).unwrap()
    }

    #[test]
    fn selection_counts() {
        let boxes: Vec<_> = (0..8).map(|i| bx(i, 0, 1, 1)).collect();
        assert_eq!(select_boxes(&boxes, 0.25, 1).len(), 2);
        assert_eq!(select_boxes(&boxes[..4], 1.0, 9), boxes[..4].to_vec());
        assert!(select_boxes(&[], 0.5, 3).is_empty());
        // 25% of two boxes rounds half up to one
        assert_eq!(selected_count(2, 0.25), 1);
        assert_eq!(selected_count(10, 0.35), 4);
        assert_eq!(selected_count(3, 0.0), 0);
    }

    #[test]
    fn selection_preserves_input_order() {
        let boxes: Vec<_> = (0..20).map(|i| bx(i, 0, 1, 1)).collect();
        let chosen = select_boxes(&boxes, 0.5, 42);
        assert!(chosen.windows(2).all(|p| p[0].x < p[1].x));
    }

    #[test]
    fn pixelate_rounds_half_away_from_zero() {
        let mut img = RasterImage::filled(2, 2, [0, 0, 0]).unwrap();
        img.set(1, 0, [255, 255, 255]);
        img.set(1, 1, [255, 255, 255]);
        let out = pixelate_region(&img, &bx(0, 0, 2, 2), 2);
        assert_eq!(out, RasterImage::filled(2, 2, [128, 128, 128]).unwrap());
    }

    #[test]
    fn pixelate_constant_region_unchanged_and_idempotent() {
        let img = RasterImage::filled(10, 10, [7, 99, 200]).unwrap();
        assert_eq!(pixelate_region(&img, &bx(1, 2, 7, 5), 3), img);
        let img = noise(17, 13, 5);
        let once = pixelate_region(&img, &bx(2, 1, 11, 9), 4);
        assert_eq!(pixelate_region(&once, &bx(2, 1, 11, 9), 4), once);
    }

    #[test]
    fn pixelate_edge_tiles_are_truncated() {
        let img = noise(5, 1, 3);
        let out = pixelate_region(&img, &bx(0, 0, 5, 1), 4);
        // last tile is a single pixel and keeps its value
        assert_eq!(out.get(4, 0), img.get(4, 0));
        assert_eq!(out.get(0, 0), out.get(3, 0));
    }

    #[test]
    fn mask_fills_and_is_idempotent() {
        let img = noise(12, 9, 11);
        let b = bx(3, 2, 5, 4);
        let once = mask_region(&img, &b, [0, 0, 0]);
        for y in 0..9 {
            for x in 0..12 {
                let expect = if b.contains(x, y) {
                    [0, 0, 0]
                } else {
                    img.get(x, y)
                };
                assert_eq!(once.get(x, y), expect);
            }
        }
        assert_eq!(mask_region(&once, &b, [0, 0, 0]), once);
        let whole = mask_region(&img, &bx(0, 0, 12, 9), [1, 2, 3]);
        assert_eq!(whole, RasterImage::filled(12, 9, [1, 2, 3]).unwrap());
    }

    #[test]
    fn blur_of_constant_box_is_identity() {
        let img = RasterImage::filled(30, 30, [13, 128, 251]).unwrap();
        assert_eq!(blur_region(&img, &bx(4, 5, 20, 16), 0.25), img);
    }

    #[test]
    fn blur_too_small_box_left_unchanged() {
        let img = noise(10, 10, 1);
        // sigma = 0.25·1 < 0.5
        assert_eq!(blur_region(&img, &bx(2, 2, 1, 8), 0.25), img);
    }

    /// Direct 2-D convolution with the outer-product kernel and clamped indices.
    fn blur_oracle(img: &RasterImage, b: &BoundingBox, factor: f64) -> RasterImage {
        let sigma = factor * b.w.min(b.h) as f64;
        let r = (2.0 * sigma).ceil() as i64;
        let mut weights = Vec::new();
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                weights.push((dx, dy, wgt));
                total += wgt;
            }
        }
        let mut out = img.clone();
        for y in 0..b.h as i64 {
            for x in 0..b.w as i64 {
                let mut acc = [0.0f64; 3];
                for &(dx, dy, wgt) in &weights {
                    let sx = (x + dx).clamp(0, b.w as i64 - 1) as u32 + b.x;
                    let sy = (y + dy).clamp(0, b.h as i64 - 1) as u32 + b.y;
                    let p = img.get(sx, sy);
                    for c in 0..3 {
                        acc[c] += wgt / total * p[c] as f64;
                    }
                }
                out.set(b.x + x as u32, b.y + y as u32, acc.map(|v| v.round() as u8));
            }
        }
        out
    }

    #[test]
    fn blur_spreads_a_bright_center_pixel() {
        let mut img = RasterImage::filled(15, 15, [0, 0, 0]).unwrap();
        img.set(7, 7, [255, 255, 255]);
        let b = bx(3, 3, 9, 9);
        let out = blur_region(&img, &b, 0.25);
        let oracle = blur_oracle(&img, &b, 0.25);
        assert_eq!(out, oracle);
        assert!(out.get(7, 7)[0] < 255);
        for (x, y) in [(6, 7), (8, 7), (7, 6), (7, 8)] {
            assert!(out.get(x, y)[0] > 0, "neighbor ({x},{y}) not brightened");
        }
    }

    #[test]
    fn blur_matches_direct_convolution_on_noise() {
        let img = noise(20, 18, 77);
        for (b, f) in [
            (bx(1, 2, 12, 9), 0.25),
            (bx(0, 0, 20, 18), 0.1),
            (bx(5, 5, 4, 10), 0.4),
        ] {
            let out = blur_region(&img, &b, f);
            let oracle = blur_oracle(&img, &b, f);
            // separable and direct sums differ in rounding order; allow one level
            for (a, o) in out.pixels().iter().zip(oracle.pixels()) {
                assert!((*a as i32 - *o as i32).abs() <= 1);
            }
        }
    }

    #[test]
    fn degree_zero_is_identity_and_full_mask_matches_region_op() {
        let img = noise(16, 16, 2);
        let b = bx(2, 3, 6, 5);
        let spec = AnonymizationSpec::new(Method::Blur, 0.0, 7);
        assert_eq!(anonymize_image(&img, &[b], &spec).unwrap(), img);
        let spec = AnonymizationSpec::new(Method::Mask, 1.0, 7);
        assert_eq!(
            anonymize_image(&img, &[b], &spec).unwrap(),
            mask_region(&img, &b, [0, 0, 0])
        );
    }

    #[test]
    fn invalid_spec_rejected() {
        let img = noise(4, 4, 2);
        let mut spec = AnonymizationSpec::new(Method::Pixel, 1.5, 0);
        assert_eq!(
            anonymize_image(&img, &[], &spec),
            Err(AnonymizeError::Degree(1.5))
        );
        spec.degree = 0.5;
        spec.pixel_block = 0;
        assert_eq!(spec.validate(), Err(AnonymizeError::PixelBlock));
        spec.pixel_block = 2;
        spec.blur_sigma_factor = 0.0;
        assert!(matches!(
            spec.validate(),
            Err(AnonymizeError::SigmaFactor(_))
        ));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("Mask".parse::<Method>(), Ok(Method::Mask));
        assert!("smudge".parse::<Method>().is_err());
    }

    proptest! {
        #[test]
        fn disjoint_boxes_commute(seed in any::<u64>(), split in 4u32..20, method in 0usize..3) {
            let img = noise(24, 20, seed);
            let left = bx(0, 1, split, 15);
            let right = bx(split, 3, 24 - split, 12);
            let apply = |img: &RasterImage, b: &BoundingBox| match Method::ALL[method] {
                Method::Pixel => pixelate_region(img, b, 3),
                Method::Blur => blur_region(img, b, 0.25),
                Method::Mask => mask_region(img, b, [9, 9, 9]),
            };
            let ab = apply(&apply(&img, &left), &right);
            let ba = apply(&apply(&img, &right), &left);
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn selection_is_monotone_in_degree(n in 0usize..40, seed in any::<u64>(), p in 0.0f64..=1.0, q in 0.0f64..=1.0) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            let small = select_indices(n, lo, seed);
            let large = select_indices(n, hi, seed);
            prop_assert!(small.iter().all(|i| large.contains(i)));
        }
    }
}
