//! Run configurations. Every key can come from a TOML/JSON file
//! (`--config`) and be overridden by the flag of the same name; the resolved
//! configuration is echoed as `config.toml` in the output directory.

use std::path::{Path, PathBuf};

use sasvr::acquisition::ParamRanges;
use sasvr::dataio::SplitRatios;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("reading {}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn echo<T: Serialize>(dir: &Path, config: &T) -> Result<(), CliError> {
    let text = toml::to_string(config).map_err(|e| CliError::usage(format!("serializing config: {e}")))?;
    crate::write_text(&dir.join("config.toml"), &text)
}

/// Output root: `$RUNS_DIR`, else `runs`.
pub fn runs_dir() -> PathBuf {
    std::env::var_os("RUNS_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub preset: String,
    pub seed: u64,
    /// Pairs per split (train, val, test); preset value when absent.
    pub counts: Option<[usize; 3]>,
    /// Phantom subjects; preset value when absent. Ignored with `references`.
    pub subjects: Option<usize>,
    /// Directory of reference volumes (`.nii`, `.nii.gz`, `.svr`) to use
    /// instead of phantoms.
    pub references: Option<PathBuf>,
    /// Voxel size forced onto references with anisotropic headers.
    pub spacing_override: Option<f64>,
    /// Subject split ratios (train, val, test).
    pub ratios: [f64; 3],
    /// Half-widths of the uniform motion ranges (deg, deg, deg, mm, mm, mm).
    pub ranges: [f64; 6],
    pub out: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        Self {
            preset: "desk".into(),
            seed: 0,
            counts: None,
            subjects: None,
            references: None,
            spacing_override: None,
            ratios: [r.train, r.val, r.test],
            ranges: ParamRanges::default().to_array(),
            out: None,
        }
    }
}

impl GenerateConfig {
    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios { train: self.ratios[0], val: self.ratios[1], test: self.ratios[2] }
    }

    pub fn param_ranges(&self) -> ParamRanges {
        let r = self.ranges;
        ParamRanges { alpha_x: r[0], alpha_y: r[1], alpha_z: r[2], t_x: r[3], t_y: r[4], t_z: r[5] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRunConfig {
    pub dataset: PathBuf,
    /// Architecture preset (desk | paper); stack and volume shapes come
    /// from the dataset.
    pub preset: String,
    pub attention: bool,
    /// Seeds weight init and batch order.
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub val_every: usize,
    pub out: Option<PathBuf>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let t = sasvr::training::TrainConfig::default();
        Self {
            dataset: PathBuf::new(),
            preset: "desk".into(),
            attention: true,
            seed: 0,
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            val_every: t.val_every,
            out: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Model,
    Oracle,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRunConfig {
    pub checkpoint: Option<PathBuf>,
    pub dataset: PathBuf,
    pub split: String,
    pub predictor: PredictorKind,
    pub batch_size: usize,
    pub out: Option<PathBuf>,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self { checkpoint: None, dataset: PathBuf::new(), split: "test".into(), predictor: PredictorKind::Model, batch_size: 8, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Trained model to time; an untrained `preset` model otherwise.
    pub checkpoint: Option<PathBuf>,
    pub preset: String,
    pub repetitions: usize,
    pub pairs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { checkpoint: None, preset: "desk".into(), repetitions: 20, pairs: 4, seed: 0, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub checkpoint: Option<PathBuf>,
    pub predictor: PredictorKind,
    pub preset: String,
    /// Frames kept for the study (closest to identity among the candidates).
    pub frames: usize,
    pub candidates: usize,
    pub subject_seed: u64,
    pub seed: u64,
    pub natural_motion: f64,
    pub drift_amplitude: f64,
    pub drift_period: f64,
    /// Neighbourhood radius (voxels) for interior ROI voxels.
    pub margin: usize,
    pub plots_per_roi: usize,
    pub batch_size: usize,
    pub out: Option<PathBuf>,
}

impl Default for MotionConfig {
    fn default() -> Self {
        let s = sasvr::evaluation::SeriesConfig::default();
        Self {
            checkpoint: None,
            predictor: PredictorKind::Model,
            preset: "desk".into(),
            frames: 20,
            candidates: s.candidates,
            subject_seed: 1000,
            seed: 0,
            natural_motion: s.natural_motion,
            drift_amplitude: s.drift_amplitude,
            drift_period: s.drift_period,
            margin: 2,
            plots_per_roi: 3,
            batch_size: 8,
            out: None,
        }
    }
}
