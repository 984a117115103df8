//! Seeded synthetic document images with text-like strokes and their boxes.
//!
//! Four layout classes (letter, form, table, invoice) give a labeled corpus
//! for desk-scale experiments and the browser demo.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anonymize::{RasterError, RasterImage};
use crate::seed::derive_seed;
use crate::store::{BoundingBox, BoxKind, DatasetManifest, ImageRecord, ManifestError, Split};

pub const N_CLASSES: usize = 4;
pub const CLASS_NAMES: [&str; N_CLASSES] = ["letter", "form", "table", "invoice"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("cannot create {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("document size {0}x{1} below the 64x64 minimum")]
    TooSmall(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DocumentSpec {
    pub width: u32,
    pub height: u32,
}

impl Default for DocumentSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 160,
        }
    }
}

/// One generated document.
#[derive(Debug, Clone)]
pub struct SynthDocument {
    pub id: String,
    pub label: usize,
    pub image: RasterImage,
    pub boxes: Vec<BoundingBox>,
}

/// Per-document handwriting-like parameters. They carry most of what tells
/// two documents of the same class apart, and they live inside the text boxes.
struct Style {
    ink: [u8; 3],
    /// Horizontal shift per pixel of stroke height.
    slant: f64,
    glyph_w: (u32, u32),
    gap: u32,
    ascender_rate: f64,
    bold: bool,
}

impl Style {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let ink = rng.gen_range(10..90u8);
        Self {
            ink: [ink, ink, ink.saturating_add(rng.gen_range(0..60))],
            slant: rng.gen_range(-0.9..0.9),
            glyph_w: if rng.gen_bool(0.5) { (2, 4) } else { (3, 6) },
            gap: rng.gen_range(1..3),
            ascender_rate: rng.gen_range(0.1..0.6),
            bold: rng.gen_bool(0.3),
        }
    }
}

struct Canvas<'a> {
    img: RasterImage,
    rng: &'a mut ChaCha8Rng,
    boxes: Vec<BoundingBox>,
    style: Style,
}

impl Canvas<'_> {
    fn w(&self) -> u32 {
        self.img.width()
    }

    fn h(&self) -> u32 {
        self.img.height()
    }

    fn dot(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as u32) < self.w() && (y as u32) < self.h() {
            self.img.set(x as u32, y as u32, self.style.ink);
            if self.style.bold && ((x + 1) as u32) < self.w() {
                self.img.set(x as u32 + 1, y as u32, self.style.ink);
            }
        }
    }

    /// Slanted stroke from the baseline at `x` up to `top`.
    fn upstroke(&mut self, x: u32, top: u32, base: u32) {
        for y in top..base {
            let dx = (self.style.slant * (base - 1 - y) as f64).round() as i64;
            self.dot(x as i64 + dx, y as i64);
        }
    }

    fn flat(&mut self, x: u32, y: u32, w: u32, base: u32) {
        let dx = (self.style.slant * (base - 1 - y) as f64).round() as i64;
        for i in 0..w {
            self.dot(x as i64 + i as i64 + dx, y as i64);
        }
    }

    /// Writes a line of pseudo-glyphs starting at (x, y), at most `max_w` wide,
    /// and records its text box.
    fn text_line(&mut self, x: u32, y: u32, max_w: u32, glyph_h: u32) {
        if glyph_h < 3 || y + glyph_h > self.h() || x >= self.w() {
            return;
        }
        let limit = (x + max_w).min(self.w() - 1);
        let base = y + glyph_h;
        let reach = (self.style.slant.abs() * glyph_h as f64).ceil() as u32 + 2;
        let mut cx = x + reach;
        let mut right = cx;
        while cx + reach + 3 < limit {
            let word_len = self.rng.gen_range(2..7);
            for _ in 0..word_len {
                let gw = self
                    .rng
                    .gen_range(self.style.glyph_w.0..self.style.glyph_w.1);
                if cx + gw + reach >= limit {
                    break;
                }
                let tall = self.rng.gen_bool(self.style.ascender_rate);
                let top = if tall { y } else { y + glyph_h / 3 };
                self.upstroke(cx, top, base);
                match self.rng.gen_range(0..3) {
                    0 => self.flat(cx, base - 1, gw, base),
                    1 => self.flat(cx, top, gw, base),
                    _ => self.upstroke(cx + gw - 1, y + glyph_h / 3, base),
                }
                right = cx + gw;
                cx += gw + self.style.gap;
            }
            cx += self.rng.gen_range(2..5);
        }
        if right > x + reach {
            let x0 = x;
            let x1 = (right + reach).min(self.w());
            self.boxes
                .push(BoundingBox::new(x0, y, x1 - x0, glyph_h, BoxKind::Text));
        }
    }

    fn hline(&mut self, x: u32, y: u32, w: u32, shade: u8) {
        if y < self.h() {
            let w = w.min(self.w().saturating_sub(x));
            self.img.fill_rect(x, y, w, 1, [shade; 3]);
        }
    }

    fn vline(&mut self, x: u32, y: u32, h: u32, shade: u8) {
        if x < self.w() {
            let h = h.min(self.h().saturating_sub(y));
            self.img.fill_rect(x, y, 1, h, [shade; 3]);
        }
    }
}

fn letter(c: &mut Canvas) {
    let (w, h) = (c.w(), c.h());
    let margin = c.rng.gen_range(8..11);
    c.text_line(margin, margin, w / 3, 7);
    c.text_line(w - w / 3 - 4, margin, w / 3, 6);
    let mut y = margin + 22;
    for i in 0..11 {
        if y + 7 > h - 24 {
            break;
        }
        let ragged = if i % 4 == 3 {
            w / 2
        } else {
            c.rng.gen_range(0..8)
        };
        c.text_line(margin, y, w - 2 * margin - ragged, 6);
        y += if i % 4 == 3 { 13 } else { 9 };
    }
    c.text_line(margin, h - 18, w / 3, 7);
}

fn form(c: &mut Canvas) {
    let (w, h) = (c.w(), c.h());
    let margin = c.rng.gen_range(6..8);
    c.text_line(w / 4, margin, w / 2, 7);
    let mut y = margin + 18;
    let col_w = (w - 3 * margin) / 2;
    while y + 16 < h - margin {
        for col in 0..2 {
            let x = margin + col * (col_w + margin);
            c.text_line(x, y, col_w / 3, 5);
            c.hline(x, y + 13, col_w, 120);
            c.vline(x, y + 8, 6, 120);
            c.vline(x + col_w - 1, y + 8, 6, 120);
            if c.rng.gen_bool(0.8) {
                c.text_line(x + 3, y + 7, col_w - 6, 5);
            }
        }
        y += 20;
    }
}

fn table(c: &mut Canvas) {
    let (w, h) = (c.w(), c.h());
    let margin = c.rng.gen_range(6..9);
    c.text_line(margin, margin, w / 2, 7);
    let top = margin + 16;
    let cols = 3;
    let rows = 8;
    let cell_w = (w - 2 * margin) / cols;
    let cell_h = (h - top - margin) / rows;
    for r in 0..=rows {
        c.hline(margin, top + r * cell_h, cols * cell_w, 90);
    }
    for k in 0..=cols {
        c.vline(margin + k * cell_w, top, rows * cell_h, 90);
    }
    for r in 0..rows {
        for k in 0..cols {
            if c.rng.gen_bool(0.85) {
                let x = margin + k * cell_w + 2;
                c.text_line(x, top + r * cell_h + 3, cell_w - 4, (cell_h - 6).min(7));
            }
        }
    }
}

fn invoice(c: &mut Canvas) {
    let (w, h) = (c.w(), c.h());
    let margin = c.rng.gen_range(6..9);
    let logo = c.rng.gen_range(16..20);
    let shade = c.rng.gen_range(40..110);
    c.img
        .fill_rect(margin, margin, logo, logo, [shade, shade / 2, 160]);
    c.boxes
        .push(BoundingBox::new(margin, margin, logo, logo, BoxKind::Other));
    for i in 0..3 {
        c.text_line(w / 2, margin + i * 9, w / 2 - margin, 6);
    }
    let mut y = margin + logo + 14;
    for _ in 0..6 {
        if y + 7 > h - 40 {
            break;
        }
        c.text_line(margin, y, w / 2, 6);
        c.text_line(w - margin - 28, y, 28, 6);
        y += 10;
    }
    c.hline(margin, y + 2, w - 2 * margin, 60);
    c.text_line(w - margin - 44, y + 6, 44, 7);
    // barcode
    let by = h - margin - 16;
    let bx = margin;
    let mut x = bx;
    let end = bx + w / 2;
    while x < end {
        let bar = c.rng.gen_range(1..3);
        c.img.fill_rect(x, by, bar, 14, [0; 3]);
        x += bar + c.rng.gen_range(1..3);
    }
    c.boxes.push(BoundingBox::new(
        bx,
        by,
        end.min(w) - bx,
        14,
        BoxKind::Barcode,
    ));
}

/// Renders one document of class `label`; fully determined by `seed`.
pub fn render_document(
    label: usize,
    seed: u64,
    spec: DocumentSpec,
) -> Result<(RasterImage, Vec<BoundingBox>), SynthError> {
    if spec.width < 64 || spec.height < 64 {
        return Err(SynthError::TooSmall(spec.width, spec.height));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paper = [
        rng.gen_range(238..=255u8),
        rng.gen_range(238..=255u8),
        rng.gen_range(230..=250u8),
    ];
    let img = RasterImage::filled(spec.width, spec.height, paper)?;
    let style = Style::sample(&mut rng);
    let mut canvas = Canvas {
        img,
        rng: &mut rng,
        boxes: Vec::new(),
        style,
    };
    match label % N_CLASSES {
        0 => letter(&mut canvas),
        1 => form(&mut canvas),
        2 => table(&mut canvas),
        _ => invoice(&mut canvas),
    }
    Ok((canvas.img, canvas.boxes))
}

/// `n` documents with balanced, interleaved labels.
pub fn document_corpus(
    n: usize,
    seed: u64,
    spec: DocumentSpec,
) -> Result<Vec<SynthDocument>, SynthError> {
    (0..n)
        .map(|i| {
            let id = format!("doc{i:05}");
            let label = i % N_CLASSES;
            let (image, boxes) = render_document(label, derive_seed(seed, &id), spec)?;
            Ok(SynthDocument {
                id,
                label,
                image,
                boxes,
            })
        })
        .collect()
}

/// Writes `docs` as PNGs plus `manifest.json` into `dir`; returns the manifest path.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    name: &str,
    split: Split,
    docs: &[SynthDocument],
) -> Result<PathBuf, SynthError> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|source| SynthError::Io {
        path: images.display().to_string(),
        source,
    })?;
    let mut records = Vec::with_capacity(docs.len());
    for doc in docs {
        let file = format!("{}.png", doc.id);
        doc.image.save_png(images.join(&file))?;
        records.push(ImageRecord {
            id: doc.id.clone(),
            path: PathBuf::from("images").join(file),
            label: Some(doc.label as u32),
            boxes: doc.boxes.clone(),
        });
    }
    let manifest = DatasetManifest {
        name: name.to_owned(),
        split,
        records,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_boxed() {
        let a = document_corpus(8, 5, DocumentSpec::default()).unwrap();
        let b = document_corpus(8, 5, DocumentSpec::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.boxes, y.boxes);
            assert!(!x.boxes.is_empty());
            for bx in &x.boxes {
                assert!(bx.x + bx.w <= 128 && bx.y + bx.h <= 160);
            }
        }
        let labels: Vec<_> = a.iter().map(|d| d.label).collect();
        assert_eq!(labels, [0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn written_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let docs = document_corpus(3, 1, DocumentSpec::default()).unwrap();
        let path = write_corpus(dir.path(), "toy", Split::Validation, &docs).unwrap();
        let loaded = crate::store::load_manifest(&path, Default::default()).unwrap();
        assert_eq!(loaded.manifest.records.len(), 3);
        assert_eq!(loaded.manifest.records[1].boxes, docs[1].boxes);
        let img = RasterImage::load_png(&loaded.manifest.records[2].path).unwrap();
        assert_eq!(img, docs[2].image);
    }
}
