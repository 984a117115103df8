use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::anonymize::Method;
use crate::crops::Adaption;
use crate::downstream::ProbeConfig;
use crate::embedder::EmbedderConfig;
use crate::metrics::{GainMode, MetricOptions};
use crate::retrieval::{CutoffRule, DEFAULT_TOP_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DownstreamSource {
    Original,
    Anonymized,
}

/// Flat experiment configuration, read from TOML.
///
/// Relative paths are resolved against the config file's directory. Every
/// field except `validation_manifest` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub validation_manifest: PathBuf,
    /// Needed only for downstream classification.
    pub train_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub drop_empty: bool,

    pub methods: Vec<Method>,
    pub degrees: Vec<f64>,
    /// Model tags, one per training adaption; `none` is the unadapted baseline.
    pub models: Vec<Adaption>,

    pub pixel_block: u32,
    pub blur_sigma_factor: f64,
    pub mask_fill: [u8; 3],

    pub grid: u32,
    pub bins: u32,
    pub include_layout_channel: bool,
    /// Models whose embeddings are read from EMB1 files instead of the toy embedder.
    pub imported_models: Vec<Adaption>,
    /// Path template with `{model}`, `{anon}`, `{split}` and `{source}` placeholders.
    pub import_pattern: String,

    pub top_fraction: f64,
    /// Absolute cutoff; overrides `top_fraction` when set.
    pub top_k: Option<usize>,
    pub gain: GainMode,
    pub ap_depth: Option<usize>,

    pub downstream: bool,
    pub downstream_train_source: DownstreamSource,
    pub knn_k: usize,
    pub probe_learning_rate: f64,
    pub probe_epochs: usize,
    pub probe_l2: f64,

    pub write_rankings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let probe = ProbeConfig::default();
        let emb = EmbedderConfig::default();
        Self {
            name: "experiment".into(),
            validation_manifest: PathBuf::new(),
            train_manifest: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            drop_empty: true,
            methods: Method::ALL.to_vec(),
            degrees: vec![1.0],
            models: Adaption::ALL.to_vec(),
            pixel_block: 8,
            blur_sigma_factor: 0.25,
            mask_fill: [0, 0, 0],
            grid: emb.grid,
            bins: emb.bins,
            include_layout_channel: emb.include_layout_channel,
            imported_models: Vec::new(),
            import_pattern: "embeddings/{model}/{anon}/{split}_{source}.emb1".into(),
            top_fraction: DEFAULT_TOP_FRACTION,
            top_k: None,
            gain: GainMode::Linear,
            ap_depth: None,
            downstream: true,
            downstream_train_source: DownstreamSource::Anonymized,
            knn_k: probe.k,
            probe_learning_rate: probe.learning_rate,
            probe_epochs: probe.epochs,
            probe_l2: probe.l2_penalty,
            write_rankings: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or_else(|| Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        self.validation_manifest = join(&self.validation_manifest);
        self.train_manifest = self.train_manifest.as_deref().map(join);
        self.output_dir = join(&self.output_dir);
        if !Path::new(&self.import_pattern).is_absolute() {
            self.import_pattern = base
                .join(&self.import_pattern)
                .to_string_lossy()
                .into_owned();
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.validation_manifest.as_os_str().is_empty() {
            return bad("validation_manifest is required".into());
        }
        if self.methods.is_empty() || self.degrees.is_empty() || self.models.is_empty() {
            return Err(ExperimentError::EmptyGrid);
        }
        if let Some(d) = self.degrees.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return bad(format!("degree {d} outside [0, 1]"));
        }
        let mut pcts: Vec<u32> = self
            .degrees
            .iter()
            .map(|d| super::degree_percent(*d))
            .collect();
        pcts.sort_unstable();
        if pcts.windows(2).any(|w| w[0] == w[1]) {
            return bad("degrees must differ in whole percent".into());
        }
        if self
            .imported_models
            .iter()
            .any(|m| *m != Adaption::Unadapted && !self.models.contains(m))
        {
            return bad("imported_models lists a model that is not in models".into());
        }
        self.embedder()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.cutoff_rule()
            .apply(usize::MAX / 2)
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1".into());
        }
        Ok(())
    }

    pub fn embedder(&self) -> EmbedderConfig {
        EmbedderConfig {
            grid: self.grid,
            bins: self.bins,
            include_layout_channel: self.include_layout_channel,
        }
    }

    pub fn cutoff_rule(&self) -> CutoffRule {
        match self.top_k {
            Some(k) => CutoffRule::TopK(k),
            None => CutoffRule::Fraction(self.top_fraction),
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            gain: self.gain,
            ap_depth: self.ap_depth,
        }
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig {
            k: self.knn_k,
            learning_rate: self.probe_learning_rate,
            epochs: self.probe_epochs,
            l2_penalty: self.probe_l2,
        }
    }

    pub fn is_imported(&self, model: Adaption) -> bool {
        self.imported_models.contains(&model)
    }

    /// Fills the import template.
    pub fn import_path(&self, model: &str, anon: &str, split: &str, source: &str) -> PathBuf {
        PathBuf::from(
            self.import_pattern
                .replace("{model}", model)
                .replace("{anon}", anon)
                .replace("{split}", split)
                .replace("{source}", source),
        )
    }
}
