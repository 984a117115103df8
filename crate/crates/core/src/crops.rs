//! Global/local crop sampling for the crop-pairing training adaptions.
//!
//! A batch for one image holds global crops (224×224 output, more than half the
//! image area) and local crops (96×96 output, less than half). Each crop is
//! tagged with the image version it must be cut from:
//!
//! | adaption | global crops | local crops |
//! | -------- | ------------ | ----------- |
//! | A | original | anonymized |
//! | B | anonymized | original |
//! | C | anonymized | anonymized |
//! | unadapted | original | original |
//!
//! Only geometry and source tags are produced; resampling and training are
//! someone else's job.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::derive_seed;

pub const GLOBAL_SIZE: u32 = 224;
pub const LOCAL_SIZE: u32 = 96;
pub const MIN_IMAGE_SIDE: u32 = 96;
pub const LOCAL_MIN_FRACTION: f64 = 0.05;
pub const ASPECT_RANGE: (f64, f64) = (3.0 / 4.0, 4.0 / 3.0);
const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CropError {
    #[error("image {0}x{1} is smaller than the 96x96 minimum")]
    ImageTooSmall(u32, u32),
    #[error("unknown adaption {0:?} (expected A, B, C or none)")]
    UnknownAdaption(String),
    #[error("at least two global crops are required, got {0}")]
    TooFewGlobals(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropKind {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Original,
    Anonymized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Adaption {
    A,
    B,
    C,
    #[serde(rename = "none")]
    Unadapted,
}

impl Adaption {
    pub const ALL: [Adaption; 4] = [Adaption::Unadapted, Adaption::A, Adaption::B, Adaption::C];

    /// Source of (global, local) crops.
    pub fn sources(self) -> (Source, Source) {
        match self {
            Adaption::A => (Source::Original, Source::Anonymized),
            Adaption::B => (Source::Anonymized, Source::Original),
            Adaption::C => (Source::Anonymized, Source::Anonymized),
            Adaption::Unadapted => (Source::Original, Source::Original),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Adaption::A => "A",
            Adaption::B => "B",
            Adaption::C => "C",
            Adaption::Unadapted => "none",
        }
    }
}

impl fmt::Display for Adaption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Adaption {
    type Err = CropError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Adaption::A),
            "B" | "b" => Ok(Adaption::B),
            "C" | "c" => Ok(Adaption::C),
            "none" | "unadapted" => Ok(Adaption::Unadapted),
            other => Err(CropError::UnknownAdaption(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRegion {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub kind: CropKind,
    pub region: CropRegion,
    pub output_size: u32,
    pub source: Source,
    /// Realized region area over image area.
    pub area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptionBatch {
    pub image_id: String,
    pub adaption: Adaption,
    pub image_width: u32,
    pub image_height: u32,
    pub globals: Vec<CropSpec>,
    pub locals: Vec<CropSpec>,
}

fn fraction_ok(kind: CropKind, f: f64) -> bool {
    match kind {
        CropKind::Global => f > 0.5 && f <= 1.0,
        CropKind::Local => (LOCAL_MIN_FRACTION..0.5).contains(&f),
    }
}

/// Samples one crop region. Global crops cover (0.5, 1] of the image area,
/// local crops [0.05, 0.5), with aspect ratio in [3/4, 4/3].
///
/// The source tag is left as [`Source::Original`]; batches assign it.
pub fn sample_crop<R: Rng>(
    width: u32,
    height: u32,
    kind: CropKind,
    rng: &mut R,
) -> Result<CropSpec, CropError> {
    if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
        return Err(CropError::ImageTooSmall(width, height));
    }
    let area = width as f64 * height as f64;
    let output_size = match kind {
        CropKind::Global => GLOBAL_SIZE,
        CropKind::Local => LOCAL_SIZE,
    };
    let build = |x, y, w, h| CropSpec {
        kind,
        region: CropRegion { x, y, w, h },
        output_size,
        source: Source::Original,
        area_fraction: (w as f64 * h as f64) / area,
    };

    for _ in 0..MAX_ATTEMPTS {
        let target = match kind {
            CropKind::Global => 1.0 - 0.5 * rng.gen::<f64>(),
            CropKind::Local => LOCAL_MIN_FRACTION + (0.5 - LOCAL_MIN_FRACTION) * rng.gen::<f64>(),
        };
        let aspect = rng.gen_range(ASPECT_RANGE.0..=ASPECT_RANGE.1);
        let w = (target * area * aspect).sqrt().round() as u32;
        let h = (target * area / aspect).sqrt().round() as u32;
        if w < 1 || h < 1 || w > width || h > height {
            continue;
        }
        if !fraction_ok(kind, (w as f64 * h as f64) / area) {
            continue;
        }
        let x = rng.gen_range(0..=width - w);
        let y = rng.gen_range(0..=height - h);
        return Ok(build(x, y, w, h));
    }

    // extreme aspect ratios: fall back to a full image or a quarter strip
    Ok(match kind {
        CropKind::Global => build(0, 0, width, height),
        CropKind::Local if width >= height => {
            let w = (width / 4).max(1);
            build((width - w) / 2, 0, w, height)
        }
        CropKind::Local => {
            let h = (height / 4).max(1);
            build(0, (height - h) / 2, width, h)
        }
    })
}

/// Samples the crops of one image for `adaption`, deterministically from
/// `seed` and `image_id`.
pub fn make_adaption_batch(
    image_id: &str,
    width: u32,
    height: u32,
    adaption: Adaption,
    n_global: usize,
    n_local: usize,
    seed: u64,
) -> Result<AdaptionBatch, CropError> {
    if n_global < 2 {
        return Err(CropError::TooFewGlobals(n_global));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, image_id));
    let (global_src, local_src) = adaption.sources();
    let mut draw = |kind, source, n| {
        (0..n)
            .map(|_| sample_crop(width, height, kind, &mut rng).map(|c| CropSpec { source, ..c }))
            .collect::<Result<Vec<_>, _>>()
    };
    let globals = draw(CropKind::Global, global_src, n_global)?;
    let locals = draw(CropKind::Local, local_src, n_local)?;
    Ok(AdaptionBatch {
        image_id: image_id.to_owned(),
        adaption,
        image_width: width,
        image_height: height,
        globals,
        locals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn count(crops: &[CropSpec], source: Source) -> usize {
        crops.iter().filter(|c| c.source == source).count()
    }

    #[test]
    fn global_crop_on_224_covers_more_than_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let c = sample_crop(224, 224, CropKind::Global, &mut rng).unwrap();
            assert!(c.region.w as u64 * c.region.h as u64 > 25088);
            assert_eq!(c.output_size, 224);
        }
    }

    #[test]
    fn local_crop_on_96_stays_below_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let c = sample_crop(96, 96, CropKind::Local, &mut rng).unwrap();
            assert!(c.area_fraction < 0.5 && c.area_fraction >= 0.05);
            assert_eq!(c.output_size, 96);
        }
    }

    #[test]
    fn tiny_image_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_crop(64, 64, CropKind::Global, &mut rng),
            Err(CropError::ImageTooSmall(64, 64))
        );
    }

    #[test]
    fn adaption_a_sources() {
        let b = make_adaption_batch("x", 300, 200, Adaption::A, 2, 8, 1).unwrap();
        assert_eq!(count(&b.globals, Source::Original), 2);
        assert_eq!(count(&b.locals, Source::Anonymized), 8);
    }

    #[test]
    fn adaption_c_and_unadapted() {
        let c = make_adaption_batch("x", 300, 200, Adaption::C, 3, 5, 1).unwrap();
        assert!(c
            .globals
            .iter()
            .chain(&c.locals)
            .all(|s| s.source == Source::Anonymized));
        let u = make_adaption_batch("x", 300, 200, Adaption::Unadapted, 3, 5, 1).unwrap();
        assert!(u
            .globals
            .iter()
            .chain(&u.locals)
            .all(|s| s.source == Source::Original));
    }

    #[test]
    fn needs_two_globals_and_known_tag() {
        assert_eq!(
            make_adaption_batch("x", 300, 200, Adaption::B, 1, 5, 1),
            Err(CropError::TooFewGlobals(1))
        );
        assert_eq!(
            "D".parse::<Adaption>(),
            Err(CropError::UnknownAdaption("D".into()))
        );
        assert_eq!("none".parse::<Adaption>(), Ok(Adaption::Unadapted));
    }

    #[test]
    fn elongated_images_still_satisfy_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (w, h) in [(96, 5000), (5000, 96)] {
            for kind in [CropKind::Global, CropKind::Local] {
                let c = sample_crop(w, h, kind, &mut rng).unwrap();
                assert!(fraction_ok(kind, c.area_fraction), "{w}x{h} {kind:?} {c:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn regions_inside_and_fractions_hold(w in 96u32..600, h in 96u32..600, seed in any::<u64>(), n_local in 0usize..10) {
            let batch = make_adaption_batch("img", w, h, Adaption::B, 2, n_local, seed).unwrap();
            for c in batch.globals.iter().chain(&batch.locals) {
                prop_assert!(c.region.x + c.region.w <= w && c.region.y + c.region.h <= h);
                prop_assert!(fraction_ok(c.kind, c.area_fraction));
            }
            let again = make_adaption_batch("img", w, h, Adaption::B, 2, n_local, seed).unwrap();
            prop_assert_eq!(batch, again);
        }
    }
}
