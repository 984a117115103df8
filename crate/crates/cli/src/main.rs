use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use anonbench_core::anonymize::{AnonymizationSpec, Method};
use anonbench_core::crops::{make_adaption_batch, Adaption};
use anonbench_core::downstream::{
    evaluate_accuracy, read_labels_csv, train_linear_probe, KnnClassifier, LabeledEmbeddings,
    ProbeConfig,
};
use anonbench_core::embedder::{embed_manifest, EmbedderConfig};
use anonbench_core::experiment::{run_experiment, write_anonymized_dataset, ExperimentConfig};
use anonbench_core::metrics::{correlation_matrix, evaluate, GainMode, MetricOptions};
use anonbench_core::retrieval::{
    build_pseudo_ground_truth, rank_all, read_rankings, write_rankings, CutoffRule, ScenarioSpec,
    ValSource, DEFAULT_TOP_FRACTION,
};
use anonbench_core::store::{load_manifest, read_embeddings, write_embeddings, LoadOptions, Split};
use anonbench_core::synth::{document_corpus, write_corpus, DocumentSpec};

#[derive(Parser)]
#[command(
    name = "anonbench",
    version,
    about = "Retrieval quality under image anonymization"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anonymize the boxes of every image in a manifest.
    Anonymize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        degree: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        pixel_block: u32,
        #[arg(long, default_value_t = 0.25)]
        blur_sigma_factor: f64,
        /// Skip images that carry no boxes.
        #[arg(long)]
        drop_empty: bool,
    },
    /// Print one sampled crop batch as JSON.
    Crops {
        #[arg(long)]
        adaption: Adaption,
        #[arg(long, default_value_t = 2)]
        globals: usize,
        #[arg(long, default_value_t = 8)]
        locals: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 512)]
        width: u32,
        #[arg(long, default_value_t = 512)]
        height: u32,
        #[arg(long, default_value = "image")]
        id: String,
    },
    /// Embed the images of a manifest with the toy embedder into an EMB1 file.
    Embed {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        grid: u32,
        #[arg(long, default_value_t = 8)]
        bins: u32,
        /// Leave out the per-cell mean luminance feature.
        #[arg(long)]
        no_layout: bool,
    },
    /// Rank a database for every query, excluding each query's own id.
    Retrieve {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
        top_frac: f64,
        #[arg(long)]
        top_k: Option<usize>,
        /// Keep only the cutoff depth instead of the full ranking.
        #[arg(long)]
        truncate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score rankings against pseudo ground truth from baseline rankings.
    Score {
        #[arg(long)]
        rankings: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_FRACTION)]
        top_frac: f64,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long, value_enum, default_value_t = Gain::Linear)]
        gain: Gain,
        #[arg(long)]
        ap_depth: Option<usize>,
        #[arg(long, default_value = "unadapted")]
        model: String,
        #[arg(long, value_enum, default_value_t = Source::Original)]
        query_source: Source,
        #[arg(long, value_enum, default_value_t = Source::Anonymized)]
        db_source: Source,
        #[arg(long, default_value = "none")]
        anon: String,
    },
    /// Pearson correlation matrix of the numeric columns of a CSV file.
    Correlate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-NN or linear-probe accuracy of embeddings with id,label CSVs.
    Classify {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        #[arg(long)]
        eval_labels: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
    },
    /// Run a whole experiment from a TOML config and write the report bundle.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a labeled synthetic document corpus.
    Synth {
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Validation)]
        split: SplitArg,
        #[arg(long, default_value_t = 128)]
        width: u32,
        #[arg(long, default_value_t = 160)]
        height: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Gain {
    Linear,
    Exponential,
    Mixed,
}

impl From<Gain> for GainMode {
    fn from(g: Gain) -> Self {
        match g {
            Gain::Linear => GainMode::Linear,
            Gain::Exponential => GainMode::Exponential,
            Gain::Mixed => GainMode::Mixed,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Original,
    Anonymized,
}

impl From<Source> for ValSource {
    fn from(s: Source) -> Self {
        match s {
            Source::Original => ValSource::OriginalVal,
            Source::Anonymized => ValSource::AnonymizedVal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Knn,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
}

fn cutoff_rule(top_frac: f64, top_k: Option<usize>) -> CutoffRule {
    top_k.map_or(CutoffRule::Fraction(top_frac), CutoffRule::TopK)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn labeled(emb: &Path, labels: &Path, n_classes: Option<usize>) -> Result<LabeledEmbeddings> {
    let m = read_embeddings(emb).with_context(|| format!("reading {}", emb.display()))?;
    let map = read_labels_csv(labels)?;
    let l = LabeledEmbeddings::from_label_map(m, &map)?;
    Ok(match n_classes {
        Some(n) if n > l.n_classes => LabeledEmbeddings::new(l.embeddings, l.labels, n)?,
        _ => l,
    })
}

fn correlate(input: &Path) -> Result<String> {
    let mut reader =
        csv::Reader::from_path(input).with_context(|| format!("reading {}", input.display()))?;
    let names: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut numeric = vec![true; names.len()];
    for row in reader.records() {
        let row = row?;
        for (i, field) in row.iter().enumerate().take(names.len()) {
            match field.trim().parse::<f64>() {
                Ok(v) => columns[i].push(v),
                Err(_) => numeric[i] = false,
            }
        }
    }
    let series: Vec<(String, Vec<f64>)> = names
        .into_iter()
        .zip(columns)
        .zip(numeric)
        .filter_map(|(s, ok)| ok.then_some(s))
        .collect();
    if series.len() < 2 {
        bail!("need at least two numeric columns");
    }
    Ok(correlation_matrix(&series)?.to_csv())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Anonymize {
            manifest,
            method,
            degree,
            seed,
            out,
            pixel_block,
            blur_sigma_factor,
            drop_empty,
        } => {
            let loaded = load_manifest(&manifest, LoadOptions { drop_empty })?;
            let spec = AnonymizationSpec {
                pixel_block,
                blur_sigma_factor,
                ..AnonymizationSpec::new(method, degree, seed)
            };
            spec.validate()?;
            let written = write_anonymized_dataset(&loaded.manifest, &spec, seed, &out)?;
            log::info!(
                "anonymized {} images into {}",
                written.records.len(),
                out.display()
            );
        }
        Command::Crops {
            adaption,
            globals,
            locals,
            seed,
            width,
            height,
            id,
        } => {
            let batch = make_adaption_batch(&id, width, height, adaption, globals, locals, seed)?;
            println!("{}", serde_json::to_string_pretty(&batch)?);
        }
        Command::Embed {
            manifest,
            out,
            grid,
            bins,
            no_layout,
        } => {
            let loaded = load_manifest(&manifest, LoadOptions::default())?;
            let cfg = EmbedderConfig {
                grid,
                bins,
                include_layout_channel: !no_layout,
            };
            let m = embed_manifest(&loaded.manifest, &cfg)?;
            write_embeddings(&m, &out)?;
            log::info!(
                "wrote {} x {} embeddings to {}",
                m.len(),
                m.dim(),
                out.display()
            );
        }
        Command::Retrieve {
            query,
            db,
            top_frac,
            top_k,
            truncate,
            out,
        } => {
            let q =
                read_embeddings(&query).with_context(|| format!("reading {}", query.display()))?;
            let d = read_embeddings(&db).with_context(|| format!("reading {}", db.display()))?;
            let mut lists = rank_all(&q, &d)?;
            if truncate {
                let rule = cutoff_rule(top_frac, top_k);
                for list in &mut lists {
                    let depth = rule.apply(list.len())?;
                    list.truncate(depth);
                }
            }
            write_rankings(&out, &lists)?;
        }
        Command::Score {
            rankings,
            baseline,
            out,
            top_frac,
            top_k,
            gain,
            ap_depth,
            model,
            query_source,
            db_source,
            anon,
        } => {
            let base = read_rankings(&baseline)?;
            let truth = build_pseudo_ground_truth(&base, cutoff_rule(top_frac, top_k))?;
            let lists = read_rankings(&rankings)?;
            let scenario = ScenarioSpec {
                model_tag: model,
                query_source: query_source.into(),
                db_source: db_source.into(),
                anon_tag: anon,
            };
            let opts = MetricOptions {
                gain: gain.into(),
                ap_depth,
            };
            let report = evaluate(&scenario, &lists, &truth, &opts)?;
            write_text(&out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
            println!(
                "mAP {:.1}  mnDCG{} {:.1}",
                report.map, report.cutoff_p, report.mndcg
            );
        }
        Command::Correlate { input, out } => {
            let csv = correlate(&input)?;
            match out {
                Some(path) => write_text(&path, &csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Classify {
            train,
            train_labels,
            eval,
            eval_labels,
            mode,
            k,
            learning_rate,
            epochs,
            l2,
        } => {
            let train = labeled(&train, &train_labels, None)?;
            let eval = labeled(&eval, &eval_labels, Some(train.n_classes))?;
            let train = if eval.n_classes > train.n_classes {
                LabeledEmbeddings::new(train.embeddings, train.labels, eval.n_classes)?
            } else {
                train
            };
            let acc = match mode {
                Mode::Knn => evaluate_accuracy(&KnnClassifier::new(&train, k)?, &eval)?,
                Mode::Linear => {
                    let cfg = ProbeConfig {
                        k,
                        learning_rate,
                        epochs,
                        l2_penalty: l2,
                    };
                    evaluate_accuracy(&train_linear_probe(&train, &cfg)?, &eval)?
                }
            };
            println!("{acc:.1}");
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&cfg)?;
            for note in &summary.notes {
                log::warn!("{note}");
            }
            println!(
                "{} scenarios written to {}",
                summary.reports.len(),
                summary.output_dir.display()
            );
        }
        Command::Synth {
            n,
            seed,
            out,
            split,
            width,
            height,
        } => {
            let docs = document_corpus(n, seed, DocumentSpec { width, height })?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Validation => Split::Validation,
            };
            let path = write_corpus(&out, "synthetic-documents", split, &docs)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
        {
            eprintln!("error: cannot set up {jobs} worker threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
