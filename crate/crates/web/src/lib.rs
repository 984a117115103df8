//! Browser bindings for three small demos: anonymizing one synthetic document,
//! sampling a crop batch for an adaption, and sweeping the anonymization degree
//! over a small in-memory corpus.
//!
//! The `*_json` and `render` functions are plain Rust so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers only convert errors and take
//! 32-bit seeds so JavaScript can pass plain numbers.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use anonbench_core::anonymize::{
    anonymize_image, select_boxes, AnonymizationSpec, Method, RasterImage,
};
use anonbench_core::crops::{make_adaption_batch, Adaption};
use anonbench_core::embedder::{embed_images, EmbedderConfig};
use anonbench_core::experiment::anonymization_seed;
use anonbench_core::metrics::{evaluate, MetricOptions};
use anonbench_core::retrieval::{
    build_pseudo_ground_truth, rank_all, CutoffRule, ScenarioSpec, ValSource,
};
use anonbench_core::seed::derive_seed;
use anonbench_core::store::BoundingBox;
use anonbench_core::synth::{document_corpus, render_document, DocumentSpec, CLASS_NAMES};

pub const MAX_SWEEP_DOCS: usize = 400;

/// One document before and after anonymization, as RGBA buffers for a canvas.
#[wasm_bindgen]
pub struct Rendered {
    width: u32,
    height: u32,
    original: Vec<u8>,
    anonymized: Vec<u8>,
    boxes: String,
}

#[wasm_bindgen]
impl Rendered {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn original_rgba(&self) -> Vec<u8> {
        self.original.clone()
    }

    pub fn anonymized_rgba(&self) -> Vec<u8> {
        self.anonymized.clone()
    }

    /// JSON array of `{x, y, w, h, kind, selected}`.
    pub fn boxes_json(&self) -> String {
        self.boxes.clone()
    }
}

#[derive(Serialize)]
struct BoxView {
    #[serde(flatten)]
    bbox: BoundingBox,
    selected: bool,
}

fn parse_method(method: &str) -> Result<Method, String> {
    method.parse().map_err(|e| format!("{e}"))
}

pub fn render(label: usize, seed: u64, method: &str, degree: f64) -> Result<Rendered, String> {
    let method = parse_method(method)?;
    let spec = DocumentSpec::default();
    let (img, boxes) =
        render_document(label, derive_seed(seed, "document"), spec).map_err(|e| e.to_string())?;
    let anon_spec = AnonymizationSpec::new(method, degree, derive_seed(seed, "anonymize"));
    let anonymized = anonymize_image(&img, &boxes, &anon_spec).map_err(|e| e.to_string())?;
    let selected = select_boxes(&boxes, degree, anon_spec.seed);
    let views: Vec<BoxView> = boxes
        .iter()
        .map(|b| BoxView {
            bbox: *b,
            selected: selected.contains(b),
        })
        .collect();
    Ok(Rendered {
        width: img.width(),
        height: img.height(),
        original: img.to_rgba(),
        anonymized: anonymized.to_rgba(),
        boxes: serde_json::to_string(&views).map_err(|e| e.to_string())?,
    })
}

pub fn crops_json(
    adaption: &str,
    globals: usize,
    locals: usize,
    seed: u64,
    width: u32,
    height: u32,
) -> Result<String, String> {
    let adaption: Adaption = adaption.parse().map_err(|e| format!("{e}"))?;
    let batch = make_adaption_batch("demo", width, height, adaption, globals, locals, seed)
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&batch).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub degree: f64,
    pub map_original_queries: f64,
    pub mndcg_original_queries: f64,
    pub map_anonymized_queries: f64,
    pub mndcg_anonymized_queries: f64,
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub method: String,
    pub documents: usize,
    pub cutoff_p: usize,
    pub points: Vec<SweepPoint>,
}

/// mAP and mnDCG of the toy embedder at degrees 0, 0.25, ..., 1 for `n_docs`
/// synthetic documents.
pub fn sweep(n_docs: usize, method: &str, seed: u64) -> Result<Sweep, String> {
    let method = parse_method(method)?;
    if !(21..=MAX_SWEEP_DOCS).contains(&n_docs) {
        return Err(format!("document count must be in 21..={MAX_SWEEP_DOCS}"));
    }
    let docs = document_corpus(n_docs, seed, DocumentSpec::default()).map_err(|e| e.to_string())?;
    let cfg = EmbedderConfig::default();
    let originals: Vec<(String, RasterImage)> = docs
        .iter()
        .map(|d| (d.id.clone(), d.image.clone()))
        .collect();
    let base = embed_images(&originals, &cfg).map_err(|e| e.to_string())?;
    let truth = build_pseudo_ground_truth(
        &rank_all(&base, &base).map_err(|e| e.to_string())?,
        CutoffRule::default(),
    )
    .map_err(|e| e.to_string())?;

    let opts = MetricOptions::default();
    let mut points = Vec::new();
    for degree in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let anonymized = docs
            .iter()
            .map(|d| {
                let spec = AnonymizationSpec::new(method, degree, anonymization_seed(seed, &d.id));
                anonymize_image(&d.image, &d.boxes, &spec).map(|img| (d.id.clone(), img))
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let anon = embed_images(&anonymized, &cfg).map_err(|e| e.to_string())?;
        let score = |queries, query_source| {
            let spec = ScenarioSpec {
                model_tag: "unadapted".into(),
                query_source,
                db_source: ValSource::AnonymizedVal,
                anon_tag: format!("{method}_{}", (degree * 100.0) as u32),
            };
            let rankings = rank_all(queries, &anon).map_err(|e| e.to_string())?;
            evaluate(&spec, &rankings, &truth, &opts).map_err(|e| e.to_string())
        };
        let orig = score(&base, ValSource::OriginalVal)?;
        let anon_q = score(&anon, ValSource::AnonymizedVal)?;
        points.push(SweepPoint {
            degree,
            map_original_queries: orig.map,
            mndcg_original_queries: orig.mndcg,
            map_anonymized_queries: anon_q.map,
            mndcg_anonymized_queries: anon_q.mndcg,
        });
    }
    Ok(Sweep {
        method: method.to_string(),
        documents: n_docs,
        cutoff_p: truth.cutoff_p().unwrap_or(0),
        points,
    })
}

#[wasm_bindgen]
pub fn class_names() -> String {
    CLASS_NAMES.join(",")
}

#[wasm_bindgen]
pub fn anonymize_document(
    label: usize,
    seed: u32,
    method: &str,
    degree: f64,
) -> Result<Rendered, JsError> {
    render(label, seed.into(), method, degree).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn crop_batch(
    adaption: &str,
    globals: usize,
    locals: usize,
    seed: u32,
    width: u32,
    height: u32,
) -> Result<String, JsError> {
    crops_json(adaption, globals, locals, seed.into(), width, height).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn degree_sweep(n_docs: usize, method: &str, seed: u32) -> Result<String, JsError> {
    sweep(n_docs, method, seed.into())
        .and_then(|s| serde_json::to_string(&s).map_err(|e| e.to_string()))
        .map_err(|e| JsError::new(&e))
}
