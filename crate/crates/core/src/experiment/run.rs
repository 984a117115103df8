use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    anon_tags, anonymization_seed, emit_summary_tables, enumerate_scenarios, model_tag, AnonTag,
    DownstreamSource, ExperimentConfig, ExperimentError,
};
use crate::anonymize::{anonymize_image, AnonymizationSpec, RasterImage};
use crate::crops::Adaption;
use crate::downstream::{evaluate_accuracy, train_linear_probe, KnnClassifier, LabeledEmbeddings};
use crate::embedder::{embed_image, EmbedError};
use crate::metrics::{correlation_matrix, evaluate, MetricReport};
use crate::par;
use crate::retrieval::{
    build_pseudo_ground_truth, rank_all, write_rankings, ScenarioSpec, ValSource,
};
use crate::seed::derive_seed;
use crate::store::{load_manifest, read_embeddings, DatasetManifest, EmbeddingMatrix, LoadOptions};

/// Present in the output directory while a run is in progress or after it failed.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DownstreamScores {
    pub knn: f64,
    pub linear: f64,
}

#[derive(Serialize)]
struct ScenarioReport<'a> {
    #[serde(flatten)]
    metrics: &'a MetricReport,
    downstream: Option<DownstreamScores>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    status: &'static str,
    config: &'a ExperimentConfig,
    seeds: Seeds,
    validation_images: usize,
    dropped_without_boxes: usize,
    scenarios: Vec<String>,
    notes: &'a [String],
}

#[derive(Serialize)]
struct Seeds {
    global: u64,
    anonymize: u64,
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub reports: Vec<MetricReport>,
    pub downstream: HashMap<(String, AnonTag), DownstreamScores>,
    pub notes: Vec<String>,
}

fn io<'p>(
    stage: &'static str,
    path: &'p Path,
) -> impl FnOnce(std::io::Error) -> ExperimentError + 'p {
    move |e| ExperimentError::Stage {
        stage,
        source: format!("{}: {e}", path.display()).into(),
    }
}

fn write(stage: &'static str, path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, bytes).map_err(io(stage, path))
}

fn mkdir(stage: &'static str, path: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(path).map_err(io(stage, path))
}

/// Toy embeddings of every record, optionally anonymized first.
fn embed_records(
    manifest: &DatasetManifest,
    cfg: &ExperimentConfig,
    anon: Option<AnonTag>,
) -> Result<EmbeddingMatrix, ExperimentError> {
    let emb = cfg.embedder();
    let rows = par::map(
        &manifest.records,
        |rec| -> Result<Vec<f32>, ExperimentError> {
            let img = RasterImage::load_png(&rec.path).map_err(|source| {
                ExperimentError::stage("embed")(EmbedError::Image {
                    id: rec.id.clone(),
                    source,
                })
            })?;
            let img = match anon {
                Some(tag) => {
                    let spec = AnonymizationSpec {
                        pixel_block: cfg.pixel_block,
                        blur_sigma_factor: cfg.blur_sigma_factor,
                        mask_fill: cfg.mask_fill,
                        ..AnonymizationSpec::new(
                            tag.method,
                            tag.degree(),
                            anonymization_seed(cfg.seed, &rec.id),
                        )
                    };
                    anonymize_image(&img, &rec.boxes, &spec)
                        .map_err(ExperimentError::stage("anonymize"))?
                }
                None => img,
            };
            embed_image(&img, &emb).map_err(|e| {
                ExperimentError::stage("embed")(EmbedError::Record {
                    id: rec.id.clone(),
                    source: Box::new(e),
                })
            })
        },
    );
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    EmbeddingMatrix::from_rows(
        emb.dim(),
        manifest.records.iter().map(|r| r.id.clone()).zip(rows),
    )
    .map_err(ExperimentError::stage("embed"))
}

fn import(path: &Path, ids: &DatasetManifest) -> Result<EmbeddingMatrix, ExperimentError> {
    let m = read_embeddings(path).map_err(ExperimentError::stage("import"))?;
    let mut want: Vec<&str> = ids.ids().collect();
    let mut have: Vec<&str> = m.ids().iter().map(String::as_str).collect();
    want.sort_unstable();
    have.sort_unstable();
    if want != have {
        return Err(ExperimentError::Stage {
            stage: "import",
            source: format!("{}: ids differ from the manifest", path.display()).into(),
        });
    }
    Ok(m)
}

fn labels_of(manifest: &DatasetManifest) -> Result<Vec<usize>, ExperimentError> {
    manifest
        .records
        .iter()
        .map(|r| {
            r.label
                .map(|l| l as usize)
                .ok_or_else(|| ExperimentError::Stage {
                    stage: "downstream",
                    source: format!("record {:?} has no label", r.id).into(),
                })
        })
        .collect()
}

/// Per-model embedding providers with caches for the toy embedder, which
/// ignores the model tag.
struct Provider<'a> {
    cfg: &'a ExperimentConfig,
    val: &'a DatasetManifest,
    train: Option<&'a DatasetManifest>,
    toy_val_original: Option<EmbeddingMatrix>,
    toy_train_original: Option<EmbeddingMatrix>,
    toy_val_anon: Option<(AnonTag, EmbeddingMatrix)>,
    toy_train_anon: Option<(AnonTag, EmbeddingMatrix)>,
}

impl Provider<'_> {
    fn val(
        &mut self,
        model: Adaption,
        anon: Option<AnonTag>,
    ) -> Result<EmbeddingMatrix, ExperimentError> {
        let (cfg, val) = (self.cfg, self.val);
        if cfg.is_imported(model) {
            let (anon_s, source) = match anon {
                Some(t) => (t.to_string(), "anonymized"),
                None => ("original".to_string(), "original"),
            };
            return import(
                &cfg.import_path(model_tag(model), &anon_s, "validation", source),
                val,
            );
        }
        cached(
            anon,
            &mut self.toy_val_original,
            &mut self.toy_val_anon,
            |a| embed_records(val, cfg, a),
        )
    }

    fn train(
        &mut self,
        model: Adaption,
        anon: Option<AnonTag>,
    ) -> Result<EmbeddingMatrix, ExperimentError> {
        let cfg = self.cfg;
        let train = self
            .train
            .expect("train manifest checked before downstream");
        if cfg.is_imported(model) {
            let (anon_s, source) = match anon {
                Some(t) => (t.to_string(), "anonymized"),
                None => ("original".to_string(), "original"),
            };
            return import(
                &cfg.import_path(model_tag(model), &anon_s, "train", source),
                train,
            );
        }
        cached(
            anon,
            &mut self.toy_train_original,
            &mut self.toy_train_anon,
            |a| embed_records(train, cfg, a),
        )
    }
}

fn cached(
    anon: Option<AnonTag>,
    original: &mut Option<EmbeddingMatrix>,
    anonymized: &mut Option<(AnonTag, EmbeddingMatrix)>,
    compute: impl FnOnce(Option<AnonTag>) -> Result<EmbeddingMatrix, ExperimentError>,
) -> Result<EmbeddingMatrix, ExperimentError> {
    match anon {
        None => {
            if original.is_none() {
                *original = Some(compute(None)?);
            }
            Ok(original.clone().unwrap())
        }
        Some(tag) => {
            if anonymized.as_ref().map(|(t, _)| *t) != Some(tag) {
                *anonymized = Some((tag, compute(Some(tag))?));
            }
            Ok(anonymized.as_ref().unwrap().1.clone())
        }
    }
}

fn downstream_scores(
    cfg: &ExperimentConfig,
    train: EmbeddingMatrix,
    train_labels: &[usize],
    eval: EmbeddingMatrix,
    eval_labels: &[usize],
) -> Result<DownstreamScores, ExperimentError> {
    let stage = ExperimentError::stage;
    let n_classes = train_labels
        .iter()
        .chain(eval_labels)
        .max()
        .map_or(0, |m| m + 1);
    let train = LabeledEmbeddings::new(train, train_labels.to_vec(), n_classes)
        .map_err(stage("downstream"))?;
    let eval = LabeledEmbeddings::new(eval, eval_labels.to_vec(), n_classes)
        .map_err(stage("downstream"))?;
    let knn =
        KnnClassifier::new(&train, cfg.knn_k.min(train.len())).map_err(stage("downstream"))?;
    let probe = train_linear_probe(&train, &cfg.probe()).map_err(stage("downstream"))?;
    Ok(DownstreamScores {
        knn: evaluate_accuracy(&knn, &eval).map_err(stage("downstream"))?,
        linear: evaluate_accuracy(&probe, &eval).map_err(stage("downstream"))?,
    })
}

/// Runs the whole grid and writes the report bundle to `cfg.output_dir`.
///
/// Bundle layout:
/// `run.json`, `baseline/rankings.jsonl`, `scenarios/<slug>/{report.json,rankings.jsonl}`,
/// `summary_{original,anonymized}_queries.csv`, `downstream.csv` and
/// `correlation_{original,anonymized}_queries.csv`. An `INCOMPLETE` file stays
/// behind if any stage fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    let scenarios = enumerate_scenarios(cfg)?;
    let out = cfg.output_dir.clone();
    mkdir("output", &out)?;
    let marker = out.join(INCOMPLETE_MARKER);
    write("output", &marker, "run started\n")?;
    for stale in ["scenarios", "baseline"] {
        let p = out.join(stale);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(io("output", &p))?;
        }
    }
    for stale in [
        "downstream.csv",
        "correlation_original_queries.csv",
        "correlation_anonymized_queries.csv",
    ] {
        let _ = fs::remove_file(out.join(stale));
    }

    let mut notes = Vec::new();
    let opts = LoadOptions {
        drop_empty: cfg.drop_empty,
    };
    let val =
        load_manifest(&cfg.validation_manifest, opts).map_err(ExperimentError::stage("load"))?;
    if val.dropped_count > 0 {
        notes.push(format!(
            "dropped {} validation images without boxes",
            val.dropped_count
        ));
    }
    let train = if cfg.downstream {
        match &cfg.train_manifest {
            Some(p) => Some(
                load_manifest(p, opts)
                    .map_err(ExperimentError::stage("load"))?
                    .manifest,
            ),
            None => {
                notes.push("downstream skipped: no train_manifest".into());
                None
            }
        }
    } else {
        None
    };
    let downstream_labels = match &train {
        Some(t) => Some((labels_of(t)?, labels_of(&val.manifest)?)),
        None => None,
    };
    if cfg.models.iter().any(|m| !cfg.is_imported(*m)) && cfg.models.len() > 1 {
        notes.push(
            "toy embedder ignores the model tag; non-imported models share embeddings".into(),
        );
    }

    let mut provider = Provider {
        cfg,
        val: &val.manifest,
        train: train.as_ref(),
        toy_val_original: None,
        toy_train_original: None,
        toy_val_anon: None,
        toy_train_anon: None,
    };

    // Pseudo ground truth from the unadapted model on original images.
    let baseline = provider.val(Adaption::Unadapted, None)?;
    let baseline_rankings =
        rank_all(&baseline, &baseline).map_err(ExperimentError::stage("baseline"))?;
    let truth = build_pseudo_ground_truth(&baseline_rankings, cfg.cutoff_rule())
        .map_err(ExperimentError::stage("baseline"))?;
    mkdir("baseline", &out.join("baseline"))?;
    if cfg.write_rankings {
        write_rankings(out.join("baseline/rankings.jsonl"), &baseline_rankings)
            .map_err(ExperimentError::stage("baseline"))?;
    }
    drop(baseline_rankings);

    let metric_opts = cfg.metric_options();
    let mut by_key: HashMap<(ValSource, String, AnonTag), MetricReport> = HashMap::new();
    let mut downstream: HashMap<(String, AnonTag), DownstreamScores> = HashMap::new();
    for tag in anon_tags(cfg) {
        for &model in &cfg.models {
            let mtag = model_tag(model).to_string();
            let mut sources = HashMap::new();
            sources.insert(ValSource::OriginalVal, provider.val(model, None)?);
            sources.insert(ValSource::AnonymizedVal, provider.val(model, Some(tag))?);

            for query_source in [ValSource::OriginalVal, ValSource::AnonymizedVal] {
                let spec = ScenarioSpec {
                    model_tag: mtag.clone(),
                    query_source,
                    db_source: ValSource::AnonymizedVal,
                    anon_tag: tag.to_string(),
                };
                let rankings = crate::retrieval::run_scenario(&spec, &sources)
                    .map_err(ExperimentError::stage("retrieve"))?;
                let report = evaluate(&spec, &rankings, &truth, &metric_opts)
                    .map_err(ExperimentError::stage("score"))?;
                let dir = out.join("scenarios").join(spec.slug());
                mkdir("write", &dir)?;
                if cfg.write_rankings {
                    write_rankings(dir.join("rankings.jsonl"), &rankings)
                        .map_err(ExperimentError::stage("write"))?;
                }
                by_key.insert((query_source, mtag.clone(), tag), report);
            }

            if let Some((train_labels, val_labels)) = &downstream_labels {
                let train_anon = match cfg.downstream_train_source {
                    DownstreamSource::Original => None,
                    DownstreamSource::Anonymized => Some(tag),
                };
                let train_emb = provider.train(model, train_anon)?;
                let eval_emb = sources
                    .remove(&ValSource::AnonymizedVal)
                    .expect("inserted above");
                let scores = downstream_scores(cfg, train_emb, train_labels, eval_emb, val_labels)?;
                downstream.insert((mtag, tag), scores);
            }
        }
    }

    let reports: Vec<MetricReport> = scenarios
        .iter()
        .map(|s| {
            let tag: AnonTag = s.anon_tag.parse().expect("tags come from the grid");
            by_key
                .remove(&(s.query_source, s.model_tag.clone(), tag))
                .expect("every scenario was run")
        })
        .collect();

    for report in &reports {
        let tag: AnonTag = report.scenario.anon_tag.parse()?;
        let body = ScenarioReport {
            metrics: report,
            downstream: downstream
                .get(&(report.scenario.model_tag.clone(), tag))
                .copied(),
        };
        let json = serde_json::to_string_pretty(&body).map_err(ExperimentError::stage("write"))?;
        write(
            "write",
            &out.join("scenarios")
                .join(report.scenario.slug())
                .join("report.json"),
            json + "\n",
        )?;
    }

    for table in emit_summary_tables(&reports)? {
        write("summary", &out.join(table.file_name()), table.to_csv())?;
    }

    if !downstream.is_empty() {
        let mut csv = String::from("model,anonymization,knn,linear\n");
        for model in &cfg.models {
            for tag in anon_tags(cfg) {
                let s = downstream[&(model_tag(*model).to_string(), tag)];
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    model_tag(*model),
                    tag,
                    super::format_percent(s.knn),
                    super::format_percent(s.linear)
                ));
            }
        }
        write("downstream", &out.join("downstream.csv"), csv)?;
    }

    for block in [ValSource::OriginalVal, ValSource::AnonymizedVal] {
        let in_block: Vec<&MetricReport> = reports
            .iter()
            .filter(|r| r.scenario.query_source == block)
            .collect();
        let p = truth.cutoff_p().unwrap_or(0);
        let mut series = vec![
            (
                "mAP".to_string(),
                in_block.iter().map(|r| r.map).collect::<Vec<_>>(),
            ),
            (
                format!("mnDCG{p}"),
                in_block.iter().map(|r| r.mndcg).collect(),
            ),
        ];
        if !downstream.is_empty() {
            let ds = |r: &MetricReport| {
                downstream[&(
                    r.scenario.model_tag.clone(),
                    r.scenario.anon_tag.parse::<AnonTag>().unwrap(),
                )]
            };
            series.push(("kNN".into(), in_block.iter().map(|r| ds(r).knn).collect()));
            series.push((
                "linear".into(),
                in_block.iter().map(|r| ds(r).linear).collect(),
            ));
        }
        match correlation_matrix(&series) {
            Ok(m) => write(
                "correlate",
                &out.join(format!("correlation_{block}_queries.csv")),
                m.to_csv(),
            )?,
            Err(e) => notes.push(format!("correlation for {block} queries skipped: {e}")),
        }
    }

    let run = RunManifest {
        status: "complete",
        config: cfg,
        seeds: Seeds {
            global: cfg.seed,
            anonymize: derive_seed(cfg.seed, "anonymize"),
        },
        validation_images: val.manifest.records.len(),
        dropped_without_boxes: val.dropped_count,
        scenarios: scenarios.iter().map(ScenarioSpec::slug).collect(),
        notes: &notes,
    };
    let json = serde_json::to_string_pretty(&run).map_err(ExperimentError::stage("write"))?;
    write("write", &out.join("run.json"), json + "\n")?;
    fs::remove_file(&marker).map_err(io("output", &marker))?;

    Ok(RunSummary {
        output_dir: out,
        reports,
        downstream,
        notes,
    })
}
