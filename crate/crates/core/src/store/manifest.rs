//! Dataset manifests: images, their sensitive-region boxes and optional labels.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?}: malformed box #{index}: {reason}")]
    MalformedBox {
        id: String,
        index: usize,
        reason: String,
    },
    #[error("record {id:?}: box #{index} lies entirely outside the {width}x{height} image")]
    BoxOutsideImage {
        id: String,
        index: usize,
        width: u32,
        height: u32,
    },
    #[error("record {id:?}: image {path} is missing or unreadable")]
    DanglingPath { id: String, path: String },
    #[error("manifest has no records")]
    EmptyManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxKind {
    Face,
    Text,
    Barcode,
    Mrz,
    Other,
}

/// A sensitive region in pixel coordinates, already clipped to its image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub kind: BoxKind,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32, kind: BoxKind) -> Self {
        Self { x, y, w, h, kind }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Intersection with a `width`×`height` image, `None` when nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Option<BoundingBox> {
        clip_signed(
            self.x as i64,
            self.y as i64,
            self.w as i64,
            self.h as i64,
            width,
            height,
        )
        .map(|(x, y, w, h)| BoundingBox {
            x,
            y,
            w,
            h,
            kind: self.kind,
        })
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x
            && py >= self.y
            && (px as u64) < self.x as u64 + self.w as u64
            && (py as u64) < self.y as u64 + self.h as u64
    }
}

fn clip_signed(
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    width: u32,
    height: u32,
) -> Option<(u32, u32, u32, u32)> {
    let x0 = x.max(0);
    let y0 = y.max(0);
    let x1 = (x + w).min(width as i64);
    let y1 = (y + h).min(height as i64);
    (x1 > x0 && y1 > y0).then(|| (x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<u32>,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub records: Vec<ImageRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop records that carry no boxes.
    pub drop_empty: bool,
}

#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    /// Records without any box, counted before dropping.
    pub empty_count: usize,
    /// Records removed because of `drop_empty`.
    pub dropped_count: usize,
}

#[derive(Deserialize)]
struct RawManifest {
    name: String,
    split: Split,
    records: Vec<RawRecord>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    path: PathBuf,
    #[serde(default)]
    label: Option<u32>,
    #[serde(default)]
    boxes: Vec<RawBox>,
}

#[derive(Deserialize)]
struct RawBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    kind: BoxKind,
}

/// Reads a manifest, resolving image paths relative to the manifest's directory.
///
/// Image headers are read to clip boxes to the image bounds.
pub fn load_manifest(
    path: impl AsRef<Path>,
    opts: LoadOptions,
) -> Result<LoadedManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, base, opts, |p| image::image_dimensions(p).ok())
}

/// Parses manifest JSON with a caller-supplied image-size probe.
///
/// `probe` returns `None` for a missing or unreadable image.
pub fn parse_manifest<F>(
    text: &str,
    base: &Path,
    opts: LoadOptions,
    probe: F,
) -> Result<LoadedManifest, ManifestError>
where
    F: Fn(&Path) -> Option<(u32, u32)>,
{
    let raw: RawManifest = serde_json::from_str(text)?;
    if raw.records.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.records.len());
    let mut empty_count = 0;
    let mut dropped_count = 0;
    for rec in raw.records {
        if !seen.insert(rec.id.clone()) {
            return Err(ManifestError::DuplicateId(rec.id));
        }
        let resolved = if rec.path.is_absolute() {
            rec.path.clone()
        } else {
            base.join(&rec.path)
        };
        let (width, height) = probe(&resolved).ok_or_else(|| ManifestError::DanglingPath {
            id: rec.id.clone(),
            path: resolved.display().to_string(),
        })?;

        let mut boxes = Vec::with_capacity(rec.boxes.len());
        for (index, b) in rec.boxes.iter().enumerate() {
            if b.w < 1 || b.h < 1 {
                return Err(ManifestError::MalformedBox {
                    id: rec.id.clone(),
                    index,
                    reason: format!("non-positive size {}x{}", b.w, b.h),
                });
            }
            let (x, y, w, h) = clip_signed(b.x, b.y, b.w, b.h, width, height).ok_or_else(|| {
                ManifestError::BoxOutsideImage {
                    id: rec.id.clone(),
                    index,
                    width,
                    height,
                }
            })?;
            boxes.push(BoundingBox {
                x,
                y,
                w,
                h,
                kind: b.kind,
            });
        }

        if boxes.is_empty() {
            empty_count += 1;
            if opts.drop_empty {
                dropped_count += 1;
                continue;
            }
        }
        records.push(ImageRecord {
            id: rec.id,
            path: resolved,
            label: rec.label,
            boxes,
        });
    }
    if empty_count > 0 {
        log::info!(
            "manifest {:?}: {empty_count} record(s) without boxes, {dropped_count} dropped",
            raw.name
        );
    }
    if records.is_empty() {
        return Err(ManifestError::EmptyManifest);
    }

    Ok(LoadedManifest {
        manifest: DatasetManifest {
            name: raw.name,
            split: raw.split,
            records,
        },
        empty_count,
        dropped_count,
    })
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serialization cannot fail")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_all(_: &Path) -> Option<(u32, u32)> {
        Some((100, 80))
    }

    fn parse(text: &str, drop_empty: bool) -> Result<LoadedManifest, ManifestError> {
        parse_manifest(
            text,
            Path::new("/data"),
            LoadOptions { drop_empty },
            probe_all,
        )
    }

    const THREE: &str = r#"{"name":"toy","split":"validation","records":[
        {"id":"a","path":"a.png","label":1,"boxes":[{"x":1,"y":2,"w":3,"h":4,"kind":"face"}]},
        {"id":"b","path":"b.png","boxes":[]},
        {"id":"c","path":"c.png","label":0,"boxes":[{"x":90,"y":70,"w":20,"h":20,"kind":"text"}]}
    ]}"#;

    #[test]
    fn drops_empty_records_when_asked() {
        let loaded = parse(THREE, true).unwrap();
        assert_eq!(loaded.dropped_count, 1);
        assert_eq!(loaded.empty_count, 1);
        let ids: Vec<_> = loaded.manifest.ids().collect();
        assert_eq!(ids, ["a", "c"]);
    }

    #[test]
    fn keeps_empty_records_by_default_in_file_order() {
        let loaded = parse(THREE, false).unwrap();
        assert_eq!(loaded.dropped_count, 0);
        assert_eq!(loaded.empty_count, 1);
        let ids: Vec<_> = loaded.manifest.ids().collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(loaded.manifest.records[0].path, Path::new("/data/a.png"));
        assert_eq!(loaded.manifest.records[1].label, None);
    }

    #[test]
    fn partially_outside_box_is_clipped() {
        let loaded = parse(THREE, false).unwrap();
        let b = loaded.manifest.records[2].boxes[0];
        assert_eq!((b.x, b.y, b.w, b.h), (90, 70, 10, 10));
        assert_eq!(b.kind, BoxKind::Text);
    }

    #[test]
    fn negative_origin_is_clipped() {
        let text = r#"{"name":"t","split":"train","records":[
            {"id":"a","path":"a.png","boxes":[{"x":-5,"y":-1,"w":10,"h":3,"kind":"mrz"}]}]}"#;
        let b = parse(text, false).unwrap().manifest.records[0].boxes[0];
        assert_eq!((b.x, b.y, b.w, b.h), (0, 0, 5, 2));
    }

    #[test]
    fn box_fully_outside_is_rejected() {
        let text = r#"{"name":"t","split":"train","records":[
            {"id":"a","path":"a.png","boxes":[{"x":100,"y":0,"w":10,"h":3,"kind":"text"}]}]}"#;
        assert!(matches!(
            parse(text, false),
            Err(ManifestError::BoxOutsideImage { index: 0, .. })
        ));
    }

    #[test]
    fn duplicate_id() {
        let text = r#"{"name":"t","split":"train","records":[
            {"id":"img7","path":"a.png","boxes":[]},{"id":"img7","path":"b.png","boxes":[]}]}"#;
        assert!(matches!(parse(text, false), Err(ManifestError::DuplicateId(id)) if id == "img7"));
    }

    #[test]
    fn empty_record_list() {
        let text = r#"{"name":"t","split":"train","records":[]}"#;
        assert!(matches!(
            parse(text, false),
            Err(ManifestError::EmptyManifest)
        ));
    }

    #[test]
    fn empty_after_drop() {
        let text =
            r#"{"name":"t","split":"train","records":[{"id":"a","path":"a.png","boxes":[]}]}"#;
        assert!(matches!(
            parse(text, true),
            Err(ManifestError::EmptyManifest)
        ));
    }

    #[test]
    fn malformed_box() {
        let text = r#"{"name":"t","split":"train","records":[
            {"id":"a","path":"a.png","boxes":[{"x":0,"y":0,"w":0,"h":3,"kind":"face"}]}]}"#;
        assert!(matches!(
            parse(text, false),
            Err(ManifestError::MalformedBox { .. })
        ));
        let text = r#"{"name":"t","split":"train","records":[
            {"id":"a","path":"a.png","boxes":[{"x":0,"y":0,"w":1,"h":3,"kind":"hat"}]}]}"#;
        assert!(matches!(parse(text, false), Err(ManifestError::Json(_))));
    }

    #[test]
    fn dangling_path() {
        let err = parse_manifest(THREE, Path::new("."), LoadOptions::default(), |_| None);
        assert!(matches!(err, Err(ManifestError::DanglingPath { id, .. }) if id == "a"));
    }

    #[test]
    fn missing_file() {
        let err = load_manifest("/nonexistent/manifest.json", LoadOptions::default());
        assert!(matches!(err, Err(ManifestError::Io { .. })));
    }
}
