//! End-to-end experiments: anonymize, embed, rank, score, classify, correlate.

mod config;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub use config::{DownstreamSource, ExperimentConfig};
pub use run::{run_experiment, RunSummary, INCOMPLETE_MARKER};

use crate::anonymize::{anonymize_image, AnonymizationSpec, Method, RasterImage};
use crate::crops::Adaption;
use crate::metrics::MetricReport;
use crate::retrieval::{ScenarioSpec, ValSource};
use crate::seed::derive_seed;
use crate::store::{DatasetManifest, ImageRecord};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("anonymization grid is empty")]
    EmptyGrid,
    #[error("reports come from different datasets (cutoffs {0} and {1})")]
    MixedDatasets(usize, usize),
    #[error("bad anonymization tag {0:?}")]
    BadAnonTag(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl ExperimentError {
    pub fn stage<E>(stage: &'static str) -> impl FnOnce(E) -> Self
    where
        E: std::error::Error + Send + Sync + 'static,
    {
        move |e| ExperimentError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}

/// Per-record anonymization seed derived from the global seed.
pub fn anonymization_seed(global: u64, record_id: &str) -> u64 {
    derive_seed(derive_seed(global, "anonymize"), record_id)
}

/// Anonymizes every record of `manifest` and writes the PNGs plus a
/// `manifest.json` pointing at them into `out_dir`. Box selection per record
/// uses [`anonymization_seed`], so the images match those of a full run.
pub fn write_anonymized_dataset(
    manifest: &DatasetManifest,
    template: &AnonymizationSpec,
    global_seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, ExperimentError> {
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(ExperimentError::stage("anonymize"))?;
    let results = crate::par::map(
        &manifest.records,
        |rec| -> Result<ImageRecord, ExperimentError> {
            let img = RasterImage::load_png(&rec.path).map_err(ExperimentError::stage("load"))?;
            let spec = AnonymizationSpec {
                seed: anonymization_seed(global_seed, &rec.id),
                ..*template
            };
            let out = anonymize_image(&img, &rec.boxes, &spec)
                .map_err(ExperimentError::stage("anonymize"))?;
            let rel = PathBuf::from("images").join(format!("{}.png", rec.id));
            out.save_png(out_dir.join(&rel))
                .map_err(ExperimentError::stage("write"))?;
            Ok(ImageRecord {
                path: rel,
                ..rec.clone()
            })
        },
    );
    let anonymized = DatasetManifest {
        name: manifest.name.clone(),
        split: manifest.split,
        records: results.into_iter().collect::<Result<_, _>>()?,
    };
    anonymized
        .save(out_dir.join("manifest.json"))
        .map_err(ExperimentError::stage("write"))?;
    Ok(anonymized)
}

pub fn degree_percent(degree: f64) -> u32 {
    (degree * 100.0).round() as u32
}

/// Anonymization method and degree, written `method_percent`, e.g. `mask_25`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AnonTag {
    pub method: Method,
    pub percent: u32,
}

impl AnonTag {
    pub fn new(method: Method, degree: f64) -> Self {
        Self {
            method,
            percent: degree_percent(degree),
        }
    }

    pub fn degree(&self) -> f64 {
        self.percent as f64 / 100.0
    }
}

impl fmt::Display for AnonTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.method, self.percent)
    }
}

impl FromStr for AnonTag {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::BadAnonTag(s.to_owned());
        let (method, pct) = s.rsplit_once('_').ok_or_else(bad)?;
        Ok(Self {
            method: method.parse().map_err(|_| bad())?,
            percent: pct.parse().map_err(|_| bad())?,
        })
    }
}

pub fn model_tag(model: Adaption) -> &'static str {
    match model {
        Adaption::Unadapted => "unadapted",
        Adaption::A => "A",
        Adaption::B => "B",
        Adaption::C => "C",
    }
}

/// Anonymization tags of the grid in method-major order.
pub fn anon_tags(cfg: &ExperimentConfig) -> Vec<AnonTag> {
    cfg.methods
        .iter()
        .flat_map(|m| cfg.degrees.iter().map(move |d| AnonTag::new(*m, *d)))
        .collect()
}

/// Two scenarios per (model, anonymization): original queries against the
/// anonymized database, then anonymized queries against it. The original-query
/// block comes first, each block ordered by model, method, degree.
pub fn enumerate_scenarios(cfg: &ExperimentConfig) -> Result<Vec<ScenarioSpec>, ExperimentError> {
    if cfg.methods.is_empty() || cfg.degrees.is_empty() || cfg.models.is_empty() {
        return Err(ExperimentError::EmptyGrid);
    }
    let tags = anon_tags(cfg);
    let mut out = Vec::with_capacity(2 * cfg.models.len() * tags.len());
    for query_source in [ValSource::OriginalVal, ValSource::AnonymizedVal] {
        for model in &cfg.models {
            for tag in &tags {
                out.push(ScenarioSpec {
                    model_tag: model_tag(*model).to_owned(),
                    query_source,
                    db_source: ValSource::AnonymizedVal,
                    anon_tag: tag.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Percentage with one decimal, rounded half away from zero.
pub fn format_percent(v: f64) -> String {
    format!("{:.1}", (v * 10.0).round() / 10.0)
}

/// A summary CSV for one query block.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub query_source: ValSource,
    pub header: Vec<String>,
    /// Label columns (model, degree) followed by the metric columns.
    pub rows: Vec<Vec<String>>,
}

impl SummaryTable {
    pub fn file_name(&self) -> String {
        format!("summary_{}_queries.csv", self.query_source)
    }

    pub fn metric_columns(&self) -> usize {
        self.header.len() - 2
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// One table per query block: rows are (model, degree), columns are mAP per
/// method followed by mnDCG per method.
pub fn emit_summary_tables(reports: &[MetricReport]) -> Result<Vec<SummaryTable>, ExperimentError> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    if let Some(other) = reports.iter().find(|r| r.cutoff_p != first.cutoff_p) {
        return Err(ExperimentError::MixedDatasets(
            first.cutoff_p,
            other.cutoff_p,
        ));
    }

    let mut models: Vec<&str> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    let mut blocks: Vec<ValSource> = Vec::new();
    // (block, model, percent, method) -> report
    let mut cells: BTreeMap<(ValSource, usize, u32, Method), &MetricReport> = BTreeMap::new();
    for r in reports {
        let tag: AnonTag = r.scenario.anon_tag.parse()?;
        let model = match models.iter().position(|m| *m == r.scenario.model_tag) {
            Some(i) => i,
            None => {
                models.push(&r.scenario.model_tag);
                models.len() - 1
            }
        };
        if !methods.contains(&tag.method) {
            methods.push(tag.method);
        }
        if !blocks.contains(&r.scenario.query_source) {
            blocks.push(r.scenario.query_source);
        }
        cells.insert((r.scenario.query_source, model, tag.percent, tag.method), r);
    }
    methods.sort();

    let p = first.cutoff_p;
    let mut header = vec!["model".to_string(), "degree".to_string()];
    header.extend(methods.iter().map(|m| format!("mAP_{m}")));
    header.extend(methods.iter().map(|m| format!("mnDCG{p}_{m}")));

    let mut tables = Vec::new();
    for block in blocks {
        let mut row_keys: Vec<(usize, u32)> = cells
            .keys()
            .filter(|k| k.0 == block)
            .map(|k| (k.1, k.2))
            .collect();
        row_keys.dedup();
        let rows = row_keys
            .into_iter()
            .map(|(model, pct)| {
                let cell = |m: &Method, f: fn(&MetricReport) -> f64| {
                    cells
                        .get(&(block, model, pct, *m))
                        .map(|r| format_percent(f(r)))
                        .unwrap_or_default()
                };
                let mut row = vec![models[model].to_string(), pct.to_string()];
                row.extend(methods.iter().map(|m| cell(m, |r| r.map)));
                row.extend(methods.iter().map(|m| cell(m, |r| r.mndcg)));
                row
            })
            .collect();
        tables.push(SummaryTable {
            query_source: block,
            header: header.clone(),
            rows,
        });
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(methods: Vec<Method>, degrees: Vec<f64>, models: Vec<Adaption>) -> ExperimentConfig {
        ExperimentConfig {
            validation_manifest: "v.json".into(),
            methods,
            degrees,
            models,
            ..Default::default()
        }
    }

    #[test]
    fn scenario_counts() {
        let s = enumerate_scenarios(&cfg(
            Method::ALL.to_vec(),
            vec![1.0],
            Adaption::ALL.to_vec(),
        ))
        .unwrap();
        assert_eq!(s.len(), 24);
        let original = s
            .iter()
            .filter(|x| x.query_source == ValSource::OriginalVal)
            .count();
        assert_eq!(original, 12);
        assert!(s.iter().all(|x| x.db_source == ValSource::AnonymizedVal));

        let s = enumerate_scenarios(&cfg(
            Method::ALL.to_vec(),
            vec![0.25, 0.5, 0.75, 1.0],
            Adaption::ALL.to_vec(),
        ))
        .unwrap();
        assert_eq!(s.len(), 96);

        assert!(matches!(
            enumerate_scenarios(&cfg(vec![], vec![1.0], Adaption::ALL.to_vec())),
            Err(ExperimentError::EmptyGrid)
        ));
    }

    #[test]
    fn scenario_order_is_block_model_method_degree() {
        let s = enumerate_scenarios(&cfg(
            vec![Method::Pixel, Method::Mask],
            vec![0.25, 1.0],
            vec![Adaption::Unadapted, Adaption::C],
        ))
        .unwrap();
        let names: Vec<String> = s
            .iter()
            .take(5)
            .map(|x| format!("{}/{}", x.model_tag, x.anon_tag))
            .collect();
        assert_eq!(
            names,
            [
                "unadapted/pixel_25",
                "unadapted/pixel_100",
                "unadapted/mask_25",
                "unadapted/mask_100",
                "C/pixel_25"
            ]
        );
    }

    #[test]
    fn percent_formatting() {
        assert_eq!(format_percent(83.333), "83.3");
        assert_eq!(format_percent(0.05), "0.1");
        assert_eq!(format_percent(100.0), "100.0");
        assert_eq!(format_percent(12.25), "12.3");
    }

    #[test]
    fn anon_tag_round_trip() {
        let t: AnonTag = "blur_75".parse().unwrap();
        assert_eq!(t, AnonTag::new(Method::Blur, 0.75));
        assert_eq!(t.to_string(), "blur_75");
        assert!("blur".parse::<AnonTag>().is_err());
    }

    fn report(model: &str, q: ValSource, tag: &str, map: f64, p: usize) -> MetricReport {
        MetricReport {
            scenario: ScenarioSpec {
                model_tag: model.into(),
                query_source: q,
                db_source: ValSource::AnonymizedVal,
                anon_tag: tag.into(),
            },
            cutoff_p: p,
            map,
            mndcg: map / 2.0,
            per_query: vec![],
        }
    }

    #[test]
    fn table_layout_models_by_methods() {
        let mut reports = Vec::new();
        for model in ["unadapted", "A", "B", "C"] {
            for m in ["pixel", "blur", "mask"] {
                reports.push(report(
                    model,
                    ValSource::OriginalVal,
                    &format!("{m}_100"),
                    83.333,
                    989,
                ));
            }
        }
        let tables = emit_summary_tables(&reports).unwrap();
        assert_eq!(tables.len(), 1);
        let t = &tables[0];
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.metric_columns(), 6);
        assert_eq!(
            t.header,
            [
                "model",
                "degree",
                "mAP_pixel",
                "mAP_blur",
                "mAP_mask",
                "mnDCG989_pixel",
                "mnDCG989_blur",
                "mnDCG989_mask"
            ]
        );
        assert_eq!(t.rows[1][..3], ["A", "100", "83.3"]);
        assert_eq!(t.file_name(), "summary_original_queries.csv");
    }

    #[test]
    fn single_scenario_table_and_mixed_datasets() {
        let one = [report("A", ValSource::AnonymizedVal, "mask_25", 50.0, 5)];
        let t = &emit_summary_tables(&one).unwrap()[0];
        assert_eq!((t.rows.len(), t.metric_columns()), (1, 2));
        assert_eq!(
            t.to_csv(),
            "model,degree,mAP_mask,mnDCG5_mask\nA,25,50.0,25.0\n"
        );

        let mixed = [
            report("A", ValSource::OriginalVal, "mask_25", 1.0, 5),
            report("A", ValSource::OriginalVal, "mask_50", 1.0, 6),
        ];
        assert!(matches!(
            emit_summary_tables(&mixed),
            Err(ExperimentError::MixedDatasets(5, 6))
        ));
    }

    #[test]
    fn degree_sweep_gives_one_row_per_degree() {
        let reports = [
            report("unadapted", ValSource::OriginalVal, "mask_25", 90.0, 5),
            report("unadapted", ValSource::OriginalVal, "mask_100", 40.0, 5),
        ];
        let t = &emit_summary_tables(&reports).unwrap()[0];
        let degrees: Vec<&str> = t.rows.iter().map(|r| r[1].as_str()).collect();
        assert_eq!(degrees, ["25", "100"]);
    }
}
