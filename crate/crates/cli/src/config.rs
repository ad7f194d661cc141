//! TOML run configuration. Every section is optional; unknown keys are
//! rejected. Paths in `[inputs]` are relative to the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use octsynth::data::PhantomConfig;
use octsynth::diffusion::{DdpmTrainConfig, NoiseSchedule, COSINE_OFFSET, DEFAULT_STEPS, DEFAULT_T_START};
use octsynth::distill::{ExperimentConfig, LabelSource, SynthConfig};
use octsynth::segmentation::{Preset, SegTrainConfig};
use octsynth::sketch::{SketchConfig, DEFAULT_BLUR_SIGMA, DEFAULT_CTRL};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub inputs: Inputs,
    pub phantom: PhantomSection,
    pub stats: StatsSection,
    pub sketch: SketchSection,
    pub schedule: ScheduleSection,
    pub ddpm: DdpmSection,
    pub synth: SynthSection,
    pub hist: HistSection,
    pub seg: SegSection,
    pub distill: DistillSection,
    pub experiment: ExperimentSection,
    pub strip: StripSection,
    pub prepare: PrepareSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Subcommand that produced the run directory (recorded, for `rerun`).
    pub command: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub manifest: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub ddpm: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    pub pool: Option<PathBuf>,
}

impl Inputs {
    fn fields_mut(&mut self) -> [&mut Option<PathBuf>; 9] {
        [
            &mut self.manifest,
            &mut self.test,
            &mut self.stats,
            &mut self.ddpm,
            &mut self.teacher,
            &mut self.model,
            &mut self.pred,
            &mut self.synth,
            &mut self.pool,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for PhantomSection {
    fn default() -> Self {
        Self {
            height: 32,
            width: 120,
            n_train: 200,
            n_test: 50,
        }
    }
}

impl PhantomSection {
    pub fn config(&self) -> PhantomConfig {
        PhantomConfig::new(self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    /// Leading train entries whose labels are used.
    pub n_labeled: usize,
    pub n_ctrl: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            n_labeled: 50,
            n_ctrl: DEFAULT_CTRL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchSection {
    pub n: usize,
    pub blur: bool,
    pub blur_sigma: f64,
    pub perturb: bool,
}

impl Default for SketchSection {
    fn default() -> Self {
        Self {
            n: 16,
            blur: true,
            blur_sigma: DEFAULT_BLUR_SIGMA,
            perturb: true,
        }
    }
}

impl SketchSection {
    pub fn config(&self) -> SketchConfig {
        SketchConfig {
            blur: self.blur,
            blur_sigma: self.blur_sigma,
            perturb: self.perturb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub offset: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            offset: COSINE_OFFSET,
        }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::cosine(self.steps, self.offset)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpmSection {
    pub width: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    /// Zero disables clipping.
    pub grad_clip: f64,
    pub checkpoint_every: usize,
}

impl Default for DdpmSection {
    fn default() -> Self {
        let d = DdpmTrainConfig::default();
        Self {
            width: octsynth::diffusion::DenoiserModel::DEFAULT_WIDTH,
            steps: d.steps,
            lr: d.lr,
            batch: d.batch,
            grad_clip: d.grad_clip.unwrap_or(0.0),
            checkpoint_every: d.checkpoint_every,
        }
    }
}

impl DdpmSection {
    pub fn config(&self, seed: u64) -> DdpmTrainConfig {
        DdpmTrainConfig {
            steps: self.steps,
            lr: self.lr,
            batch: self.batch,
            seed,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n: usize,
    pub t_start: usize,
    pub batch: usize,
    /// Index of the first sample.
    pub first: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            n: 200,
            t_start: DEFAULT_T_START,
            batch: 8,
            first: 0,
        }
    }
}

impl SynthSection {
    pub fn config(&self, sketch: &SketchSection) -> SynthConfig {
        SynthConfig {
            t_start: self.t_start,
            sketch: sketch.config(),
            batch: self.batch,
            first: self.first,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistSection {
    pub bins: usize,
    pub t: Vec<usize>,
    pub trials: usize,
    /// Upper bound on images per population.
    pub n: usize,
}

impl Default for HistSection {
    fn default() -> Self {
        Self {
            bins: 64,
            t: (0..=8).map(|i| i * 50).collect(),
            trials: 5,
            n: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegSection {
    pub preset: String,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub hflip: bool,
    /// Zero disables clipping.
    pub grad_clip: f64,
    pub decay: bool,
    /// Train on the first `limit` training entries only; zero uses all.
    pub limit: usize,
}

impl Default for SegSection {
    fn default() -> Self {
        let d = SegTrainConfig::default();
        Self {
            preset: Preset::Student.to_string(),
            epochs: d.epochs,
            lr: d.lr,
            batch: d.batch,
            hflip: d.hflip,
            grad_clip: d.grad_clip.unwrap_or(0.0),
            decay: d.decay,
            limit: 0,
        }
    }
}

impl SegSection {
    pub fn preset(&self) -> Result<Preset> {
        Ok(self.preset.parse()?)
    }

    pub fn config(&self, seed: u64) -> Result<SegTrainConfig> {
        Ok(SegTrainConfig {
            width: self.preset()?.width(),
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            seed,
            hflip: self.hflip,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            decay: self.decay,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    /// Size of the assembled training set; both zero skips assembly.
    pub n_real: usize,
    pub n_synth: usize,
}

impl Default for DistillSection {
    fn default() -> Self {
        Self {
            n_real: 50,
            n_synth: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// `ratio`, `ablation`, `tstart` or `labels`.
    pub kind: String,
    pub ratios: Vec<[usize; 2]>,
    pub seeds: Vec<u64>,
    pub labels: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let d = ExperimentConfig::default();
        Self {
            kind: "ratio".into(),
            ratios: d.ratios.iter().map(|&(a, b)| [a, b]).collect(),
            seeds: d.seeds,
            labels: d.labels.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StripSection {
    pub n: usize,
}

impl Default for StripSection {
    fn default() -> Self {
        Self { n: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    /// Rows kept around the layers before downsampling.
    pub rows: usize,
    /// Box-downsampling factors (rows, columns).
    pub factor: [usize; 2],
}

impl Default for PrepareSection {
    fn default() -> Self {
        Self {
            rows: 128,
            factor: [4, 4],
        }
    }
}

impl RunConfig {
    /// Reads a config file, resolving its input paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.inputs.fields_mut().into_iter().flatten() {
            *p = absolute(&base.join(&*p))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            bail!(ConfigError("experiment.seeds must not be empty".into()));
        }
        Ok(ExperimentConfig {
            ratios: e.ratios.iter().map(|&[a, b]| (a, b)).collect(),
            t_start: self.synth.t_start,
            blur: self.sketch.blur,
            perturb: self.sketch.perturb,
            blur_sigma: self.sketch.blur_sigma,
            seeds: e.seeds.clone(),
            preset: self.seg.preset()?,
            train: self.seg.config(0)?,
            labels: e.labels.parse::<LabelSource>()?,
            synth_seed: octsynth::seed::derive_named(self.run.seed, "synth"),
            synth_batch: self.synth.batch,
        })
    }
}

/// Makes `p` absolute against the working directory (no symlink resolution).
pub fn absolute(p: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))?)
}

/// A malformed or inconsistent configuration; reported as a usage error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[ddpm]\nstep = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[nope]\n").is_err());
        let cfg: RunConfig = toml::from_str("[ddpm]\nsteps = 3\n").unwrap();
        assert_eq!(cfg.ddpm.steps, 3);
        assert_eq!(cfg.seg, SegSection::default());
    }

    #[test]
    fn paths_relative_to_config_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[inputs]\nmanifest = \"data/manifest.tsv\"\n[run]\nseed = 4\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.inputs.manifest.as_deref(), Some(dir.path().join("data/manifest.tsv").as_path()));
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn experiment_translation() {
        let mut cfg = RunConfig::default();
        cfg.experiment.ratios = vec![[50, 0], [0, 500]];
        let e = cfg.experiment().unwrap();
        assert_eq!(e.ratios, [(50, 0), (0, 500)]);
        assert_eq!(e.t_start, 300);
        cfg.experiment.labels = "teacher".into();
        assert!(cfg.experiment().is_err());
    }
}
