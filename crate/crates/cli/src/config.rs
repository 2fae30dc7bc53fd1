//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use adjscc::codec::{channels_for_ratio, parse_ratio};
use adjscc::data::{cifar10_files, CIFAR_SIDE};
use adjscc::training::{CheckpointCadence, SnrDraw};
use adjscc::{ArchSpec, BandwidthRatio, SnrDistribution};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub data: DataSection,
    pub out: OutSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_preset")]
    pub arch_preset: String,
    #[serde(default = "yes")]
    pub use_attention: bool,
    /// `"k/n"`, e.g. `"1/6"`.
    pub bandwidth_ratio: String,
    pub af_hidden_width: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub snr_dist: String,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_images: Option<usize>,
    /// `"epoch"`, `"never"` or `"<n> steps"`.
    pub checkpoint: String,
    /// `"example"` or `"batch"`.
    pub snr_draw: String,
    pub noiseless: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            snr_dist: "uniform(0,20)".into(),
            lr: 1e-4,
            batch: 128,
            epochs: 1280,
            seed: 0,
            max_images: None,
            checkpoint: "epoch".into(),
            snr_draw: "example".into(),
            noiseless: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub snr_list: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub mismatch_grid: Option<MismatchGrid>,
    pub max_images: Option<usize>,
    pub max_pixel: f64,
    /// `"encoder"` or `"decoder"`.
    pub attention_side: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            snr_list: (0..=20).map(f64::from).collect(),
            repeats: 10,
            seed: 0,
            mismatch_grid: None,
            max_images: None,
            max_pixel: 1.0,
            attention_side: "encoder".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MismatchGrid {
    pub snr_fb: Vec<f64>,
    pub snr_true: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Cifar10,
    ImageDir,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub paths: Vec<PathBuf>,
    pub test_paths: Option<Vec<PathBuf>>,
    pub crop: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutSection {
    pub dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default)]
    pub group: Vec<EnsembleGroup>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleGroup {
    pub name: String,
    pub checkpoints: Vec<PathBuf>,
}

fn default_preset() -> String {
    "tiny".into()
}

fn yes() -> bool {
    true
}

/// A configuration problem, optionally pinned to a line of the file.
#[derive(Debug)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.file.display(), self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

/// Line (1-based) where `key` is set inside `[section]`, or the section header.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section && header.is_none() {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

/// Everything the commands need, resolved and checked.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub arch: ArchSpec,
    pub ratio: BandwidthRatio,
    pub image_side: usize,
    pub snr_dist: SnrDistribution,
    pub cadence: CheckpointCadence,
    pub snr_draw: SnrDraw,
    pub out_dir: PathBuf,
    base: PathBuf,
    file: PathBuf,
    text: String,
}

/// What a command is about to read; only those paths are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    TrainData,
    TestData,
    Nothing,
}

impl Experiment {
    pub fn load(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<Self, ConfigError> {
        let bare = |message: String| ConfigError {
            file: path.to_path_buf(),
            line: None,
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| bare(format!("cannot read: {e}")))?;
        let mut config: ExperimentConfig = toml::from_str(&text).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1),
            message: e.message().trim().to_string(),
        })?;
        if let Some(s) = seed {
            config.train.seed = s;
            config.eval.seed = s;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let at = |section: &str, key: &str, message: String| ConfigError {
            file: path.to_path_buf(),
            line: locate(&text, section, key),
            message: format!("[{section}] {key}: {message}"),
        };

        let image_side = match (config.data.kind, config.data.crop) {
            (_, Some(0)) => return Err(at("data", "crop", "must be positive".into())),
            (_, Some(c)) => c,
            (DataKind::Cifar10, None) => CIFAR_SIDE,
            (DataKind::ImageDir, None) => {
                return Err(at("data", "crop", "required for image_dir data".into()))
            }
        };
        if config.data.kind == DataKind::Cifar10 && image_side > CIFAR_SIDE {
            return Err(at("data", "crop", format!("exceeds the {CIFAR_SIDE}x{CIFAR_SIDE} images")));
        }

        let ratio = parse_ratio(&config.model.bandwidth_ratio)
            .map_err(|e| at("model", "bandwidth_ratio", e.to_string()))?;
        let probe = ArchSpec::preset(&config.model.arch_preset, 2, config.model.use_attention)
            .map_err(|e| at("model", "arch_preset", e.to_string()))?;
        let channels = channels_for_ratio(
            ratio,
            image_side,
            image_side,
            probe.input_channels,
            probe.total_stride(),
        )
        .map_err(|e| at("model", "bandwidth_ratio", e.to_string()))?;
        let mut arch = ArchSpec::preset(&config.model.arch_preset, channels, config.model.use_attention)
            .map_err(|e| at("model", "arch_preset", e.to_string()))?;
        if let Some(m) = config.model.af_hidden_width {
            if m == 0 {
                return Err(at("model", "af_hidden_width", "must be positive".into()));
            }
            arch = arch.with_af_hidden_width(m);
        }
        arch.validate().map_err(|e| at("model", "arch_preset", e.to_string()))?;

        let t = &config.train;
        let snr_dist: SnrDistribution = t
            .snr_dist
            .parse()
            .and_then(|d: SnrDistribution| d.validate().map(|_| d))
            .map_err(|e| at("train", "snr_dist", e.to_string()))?;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(at("train", "lr", format!("must be positive, got {}", t.lr)));
        }
        if t.batch == 0 {
            return Err(at("train", "batch", "must be at least 1".into()));
        }
        if t.epochs == 0 {
            return Err(at("train", "epochs", "must be at least 1".into()));
        }
        if t.max_images == Some(0) {
            return Err(at("train", "max_images", "must be at least 1".into()));
        }
        let cadence = parse_cadence(&t.checkpoint).map_err(|m| at("train", "checkpoint", m))?;
        let snr_draw = match t.snr_draw.as_str() {
            "example" => SnrDraw::PerExample,
            "batch" => SnrDraw::PerBatch,
            other => {
                return Err(at("train", "snr_draw", format!("expected \"example\" or \"batch\", got \"{other}\"")))
            }
        };

        let e = &config.eval;
        if e.snr_list.is_empty() {
            return Err(at("eval", "snr_list", "must not be empty".into()));
        }
        if let Some(bad) = e.snr_list.iter().find(|s| !s.is_finite()) {
            return Err(at("eval", "snr_list", format!("non-finite SNR {bad}")));
        }
        if e.repeats == 0 {
            return Err(at("eval", "repeats", "must be at least 1".into()));
        }
        if e.max_images == Some(0) {
            return Err(at("eval", "max_images", "must be at least 1".into()));
        }
        if !(e.max_pixel > 0.0 && e.max_pixel.is_finite()) {
            return Err(at("eval", "max_pixel", format!("must be positive, got {}", e.max_pixel)));
        }
        if !matches!(e.attention_side.as_str(), "encoder" | "decoder") {
            return Err(at("eval", "attention_side", "expected \"encoder\" or \"decoder\"".into()));
        }
        if let Some(g) = &e.mismatch_grid {
            if g.snr_fb.is_empty() || g.snr_true.is_empty() {
                return Err(at("eval.mismatch_grid", "snr_fb", "both SNR lists must be non-empty".into()));
            }
        }
        if config.data.paths.is_empty() {
            return Err(at("data", "paths", "must not be empty".into()));
        }
        for g in &config.report.group {
            if g.checkpoints.is_empty() {
                return Err(at("report.group", "checkpoints", format!("group '{}' is empty", g.name)));
            }
        }

        let out_dir = match out {
            Some(o) => o.to_path_buf(),
            None => base.join(&config.out.dir),
        };
        Ok(Self {
            config,
            arch,
            ratio,
            image_side,
            snr_dist,
            cadence,
            snr_draw,
            out_dir,
            base,
            file: path.to_path_buf(),
            text,
        })
    }

    /// Config-relative paths are resolved against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }

    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line: locate(&self.text, section, key),
            message: format!("[{section}] {key}: {}", message.into()),
        }
    }

    pub fn bare_error(&self, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.file.clone(),
            line: None,
            message: message.into(),
        }
    }

    /// Files (CIFAR-10) or directories (image_dir) holding training images.
    pub fn train_sources(&self) -> Result<Vec<PathBuf>, ConfigError> {
        let paths: Vec<PathBuf> = self.config.data.paths.iter().map(|p| self.resolve(p)).collect();
        self.expand(paths, "paths", true)
    }

    /// Sources for evaluation: `test_paths` when given, otherwise the CIFAR-10
    /// test batch next to each training directory, or the training images.
    pub fn test_sources(&self) -> Result<Vec<PathBuf>, ConfigError> {
        let d = &self.config.data;
        match &d.test_paths {
            Some(list) if list.is_empty() => Err(self.error("data", "test_paths", "must not be empty")),
            Some(list) => self.expand(list.iter().map(|p| self.resolve(p)).collect(), "test_paths", false),
            None => {
                let paths: Vec<PathBuf> = d.paths.iter().map(|p| self.resolve(p)).collect();
                if d.kind == DataKind::Cifar10 && paths.iter().any(|p| !p.is_dir()) {
                    return Err(self.error(
                        "data",
                        "paths",
                        "test_paths is required when paths lists CIFAR-10 files rather than directories",
                    ));
                }
                self.expand(paths, "paths", false)
            }
        }
    }

    fn expand(&self, paths: Vec<PathBuf>, key: &str, train: bool) -> Result<Vec<PathBuf>, ConfigError> {
        let mut out = Vec::new();
        for p in paths {
            match self.config.data.kind {
                DataKind::ImageDir => {
                    if !p.is_dir() {
                        return Err(self.error("data", key, format!("{} is not a directory", p.display())));
                    }
                    out.push(p);
                }
                DataKind::Cifar10 if p.is_dir() => {
                    let (train_files, test_file) = cifar10_files(&p);
                    let files = if train { train_files } else { vec![test_file] };
                    for f in files {
                        if !f.is_file() {
                            return Err(self.error("data", key, format!("missing {}", f.display())));
                        }
                        out.push(f);
                    }
                }
                DataKind::Cifar10 => {
                    if !p.is_file() {
                        return Err(self.error("data", key, format!("{} does not exist", p.display())));
                    }
                    out.push(p);
                }
            }
        }
        Ok(out)
    }

    /// Checks every path the command will read before any work starts.
    pub fn check_paths(&self, needs: Needs, checkpoints: &[PathBuf]) -> Result<(), ConfigError> {
        match needs {
            Needs::TrainData => {
                self.train_sources()?;
            }
            Needs::TestData => {
                self.test_sources()?;
            }
            Needs::Nothing => {}
        }
        for c in checkpoints {
            if !c.is_file() {
                return Err(self.bare_error(format!("checkpoint {} does not exist", c.display())));
            }
        }
        Ok(())
    }
}

fn parse_cadence(s: &str) -> Result<CheckpointCadence, String> {
    match s.trim() {
        "epoch" => Ok(CheckpointCadence::EveryEpoch),
        "never" => Ok(CheckpointCadence::Never),
        other => other
            .strip_suffix("steps")
            .and_then(|n| n.trim().parse::<u64>().ok())
            .filter(|&n| n > 0)
            .map(CheckpointCadence::EveryBatches)
            .ok_or_else(|| format!("expected \"epoch\", \"never\" or \"<n> steps\", got \"{other}\"")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locate_finds_keys_in_sections() {
        let text = "[model]\nseed = 1\n\n[train]\nepochs = 0\nseed = 2\n";
        assert_eq!(locate(text, "train", "seed"), Some(6));
        assert_eq!(locate(text, "model", "seed"), Some(2));
        assert_eq!(locate(text, "train", "lr"), Some(4));
        assert_eq!(locate(text, "eval", "lr"), None);
    }

    #[test]
    fn cadence_forms() {
        assert_eq!(parse_cadence("epoch"), Ok(CheckpointCadence::EveryEpoch));
        assert_eq!(parse_cadence("25 steps"), Ok(CheckpointCadence::EveryBatches(25)));
        assert!(parse_cadence("0 steps").is_err());
        assert!(parse_cadence("daily").is_err());
    }
}
