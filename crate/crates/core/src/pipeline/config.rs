//! TOML pipeline configuration. Precedence: `key=value` overrides, then
//! the config file, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffusion::{build_schedule, DdpmTrainConfig, NoiseSchedule, SamplingVariant, UnetConfig};
use crate::error::{bail, Error, Result};
use crate::eval::{LogRegConfig, NetTrainConfig};
use crate::gan::GanConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Eegb,
    Csv,
}

/// Raw input. Relative paths are taken against `paths.data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub recording: PathBuf,
    pub format: InputFormat,
    /// Only used for csv input.
    pub sampling_rate_hz: f64,
    pub markers: PathBuf,
    pub n_classes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            recording: "recording.eegb".into(),
            format: InputFormat::Eegb,
            sampling_rate_hz: 512.0,
            markers: "markers.csv".into(),
            n_classes: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub n_channels: usize,
    pub class_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            n_classes: 4,
            n_channels: 32,
            class_amplitude: crate::data::SynthParams::default().class_amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    /// Muscle-artifact z threshold; epochs touching a flagged span are dropped.
    pub muscle_z: f64,
    pub drop_artifacts: bool,
    pub train_frac: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            low_hz: 8.0,
            high_hz: 30.0,
            order: 4,
            muscle_z: crate::dsp::DEFAULT_MUSCLE_Z,
            drop_artifacts: true,
            train_frac: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpmConfig {
    #[serde(rename = "T")]
    pub t: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub unet_widths: [usize; 3],
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub halve_every: usize,
    pub variant: SamplingVariant,
}

impl Default for DdpmConfig {
    /// Full scale: the 1000-step schedule and the published training
    /// settings.
    fn default() -> Self {
        Self {
            t: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            unet_widths: UnetConfig::default().widths,
            time_embed_dim: 64,
            epochs: 200,
            batch_size: 32,
            lr: 1e-4,
            halve_every: 20,
            variant: SamplingVariant::Stochastic,
        }
    }
}

impl DdpmConfig {
    /// Single-core scale: 50 steps with the 1000-step betas scaled by 20, a
    /// narrow U-Net, a higher learning rate and mean-only sampling.
    pub fn desk() -> Self {
        let s = NoiseSchedule::compressed(50).expect("valid constants");
        Self {
            t: 50,
            beta_start: s.beta()[0],
            beta_end: s.beta()[49],
            unet_widths: UnetConfig::desk().widths,
            time_embed_dim: 64,
            epochs: 60,
            batch_size: 16,
            lr: 1e-3,
            halve_every: 20,
            variant: SamplingVariant::PaperDeterministic,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.t, self.beta_start, self.beta_end)
    }

    pub fn unet(&self) -> UnetConfig {
        UnetConfig {
            in_channels: 3,
            widths: self.unet_widths,
            time_embed_dim: self.time_embed_dim,
        }
    }

    pub fn train(&self, seed: u64) -> DdpmTrainConfig {
        DdpmTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            halve_every: self.halve_every,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Ddpm,
    Wgan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub model: GeneratorKind,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { model: GeneratorKind::Ddpm }
    }
}

/// How the synthetic (hybrid) dataset enters classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticProtocol {
    /// Train and test on real channels plus reconstructed targets.
    Hybrid,
    /// Train on the hybrid set, test on real data.
    TrainSyntheticTestReal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub n_folds: usize,
    pub knn_k: usize,
    pub classifiers: Vec<String>,
    pub protocol: SyntheticProtocol,
    pub net: NetTrainConfig,
    pub logreg: LogRegConfig,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            n_folds: 5,
            knn_k: 5,
            classifiers: ["knn", "logreg", "cnn", "unet"].map(String::from).to_vec(),
            protocol: SyntheticProtocol::Hybrid,
            net: NetTrainConfig::default(),
            logreg: LogRegConfig::default(),
        }
    }
}

pub const CLASSIFIERS: [&str; 4] = ["knn", "logreg", "cnn", "unet"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    /// Empty means every reconstructed target.
    pub channels: Vec<String>,
    pub window_s: (f64, f64),
    pub smoothing_s: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            channels: Vec::new(),
            window_s: (6.0, 12.0),
            smoothing_s: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub ddpm: DdpmConfig,
    pub wgan: GanConfig,
    pub generate: GenerateConfig,
    pub classify: ClassifyConfig,
    pub export: ExportConfig,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string().trim().replace('\n', " "))
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// if it does not parse as one.
fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let Some((key, raw)) = item.split_once('=') else {
        bail!(Config, "override `{item}` is not key=value");
    };
    let key = key.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!(Config, "bad override key `{key}`");
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(t) = entry.as_table_mut() else {
            bail!(Config, "override `{key}`: `{p}` is not a section");
        };
        cur = t;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Recursively copies `top` over `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl PipelineConfig {
    /// Desk-scale preset: the default paths and data, with the diffusion
    /// and GAN settings sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            ddpm: DdpmConfig::desk(),
            wgan: GanConfig::desk(),
            ..Self::default()
        }
    }

    /// Parses TOML text over the full-scale defaults and applies overrides.
    /// Unknown keys are rejected.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        Self::layered(&Self::default(), text, overrides)
    }

    /// `overrides` over `text` over `base`.
    pub fn layered(base: &PipelineConfig, text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::try_from(base).map_err(config_err)?;
        merge(&mut table, toml::from_str(text).map_err(config_err)?);
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (if given) over `base`, applies overrides and the
    /// `EEGDIFF_REPORT_DIR` environment variable.
    pub fn load(base: &PipelineConfig, path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg = Self::layered(base, &text, overrides)?;
        if let Some(dir) = std::env::var_os("EEGDIFF_REPORT_DIR") {
            cfg.paths.report_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ddpm.schedule().map_err(config_err)?;
        if self.ddpm.time_embed_dim % 2 != 0 || self.ddpm.unet_widths.contains(&0) {
            bail!(Config, "ddpm: time_embed_dim must be even and widths positive");
        }
        for c in &self.classify.classifiers {
            if !CLASSIFIERS.contains(&c.as_str()) {
                bail!(Config, "classify.classifiers: unknown classifier `{c}` (known: {CLASSIFIERS:?})");
            }
        }
        let (a, b) = self.export.window_s;
        if !(a >= 0.0 && b > a) {
            bail!(Config, "export.window_s must satisfy 0 <= start < end, got ({a}, {b})");
        }
        if !(self.preprocess.train_frac > 0.0 && self.preprocess.train_frac < 1.0) {
            bail!(Config, "preprocess.train_frac must be in (0, 1)");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(config_err)
    }

    pub fn data_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.paths.data_dir.join(p)
        }
    }
}
