//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use gcndance::audio::ClassifierConfig;
use gcndance::dataset::{AugmentConfig, SyntheticConfig};
use gcndance::eval::ClassifierConfig as MotionClassifierConfig;
use gcndance::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Corpus manifest written by `synth-corpus` or by hand.
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Audio classifier checkpoint; defaults to `<out_dir>/classifier.ckpt`.
    pub classifier: Option<PathBuf>,
    /// Trainer checkpoint; defaults to `<out_dir>/gan.ckpt`.
    pub generator: Option<PathBuf>,
    /// Motions to evaluate: a directory of motion JSON files or a manifest.
    /// When unset, `evaluate` samples the generator.
    pub generated: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { manifest: None, out_dir: PathBuf::from("runs"), classifier: None, generator: None, generated: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub repeats: usize,
    pub generated_per_style: usize,
    pub classifier: MotionClassifierConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { repeats: 5, generated_per_style: 30, classifier: MotionClassifierConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    /// Side of the square pixel canvas generated poses are placed on.
    pub canvas: f64,
    /// Fraction of the canvas side spanned by the unit pose diagonal.
    pub fill: f64,
    pub knot_stride: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings { canvas: 512.0, fill: 0.8, knot_stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides `train.seed`.
    pub seed: u64,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub augment: AugmentConfig,
    pub classifier: ClassifierConfig,
    pub train: TrainConfig,
    pub evaluation: EvalSettings,
    pub render: RenderSettings,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("config field `{path}`: {}", e.inner()))
        })?;
        Ok(cfg)
    }

    /// Applies command-line overrides and checks every section.
    pub fn finish(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig, CliError> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.paths.out_dir = o;
        }
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |name: &str, msg: String| CliError::Config(format!("config field `{name}`: {msg}"));
        self.train.validate().map_err(|e| field("train", e.to_string()))?;
        self.augment.validate().map_err(|e| field("augment", e.to_string()))?;
        self.classifier.validate().map_err(|e| field("classifier", e))?;
        if self.train.frames != self.augment.window {
            return Err(field(
                "train.frames",
                format!("{} differs from augment.window {}", self.train.frames, self.augment.window),
            ));
        }
        let e = &self.evaluation;
        if e.repeats == 0 || e.generated_per_style == 0 {
            return Err(field("evaluation", "repeats and generated_per_style must be positive".into()));
        }
        let c = &e.classifier;
        if c.channels.contains(&0) || c.feature_dim == 0 || c.epochs == 0 || c.batch == 0 || !(c.lr > 0.0) {
            return Err(field("evaluation.classifier", "sizes and lr must be positive".into()));
        }
        let r = &self.render;
        if !(r.canvas > 0.0 && r.fill > 0.0 && r.fill <= 1.0) || r.knot_stride == 0 {
            return Err(field("render", "canvas > 0, fill in (0, 1] and knot_stride >= 1 required".into()));
        }
        let s = &self.synthetic;
        if s.min_frames > s.max_frames {
            return Err(field("synthetic", "min_frames exceeds max_frames".into()));
        }
        Ok(())
    }

    pub fn manifest(&self) -> Result<&Path, CliError> {
        self.paths
            .manifest
            .as_deref()
            .ok_or_else(|| CliError::Config("config field `paths.manifest` is required".into()))
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.paths.classifier.clone().unwrap_or_else(|| self.paths.out_dir.join("classifier.ckpt"))
    }

    pub fn generator_path(&self) -> PathBuf {
        self.paths.generator.clone().unwrap_or_else(|| self.paths.out_dir.join("gan.ckpt"))
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.manifest, &mut self.classifier, &mut self.generator, &mut self.generated].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.out_dir);
    }
}
