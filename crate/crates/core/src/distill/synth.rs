//! Synthetic image pools: sketches pushed through the shortcut sampler.

use std::path::Path;

use rayon::prelude::*;

use crate::data::pgm::{save_image, save_mask, write_atomic};
use crate::data::{DatasetManifest, ManifestEntry, Provenance, Split};
use crate::diffusion::{sample_batch, DenoiserModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::seed::{derive_named, derive_seed};
use crate::sketch::{generate_sketch_at, BoundaryStats, SketchConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub t_start: usize,
    pub sketch: SketchConfig,
    /// Samples denoised together in one reverse chain.
    pub batch: usize,
    /// Index of the first sample; a pool can be grown in parts.
    pub first: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            t_start: crate::diffusion::DEFAULT_T_START,
            sketch: SketchConfig::default(),
            batch: 8,
            first: 0,
        }
    }
}

/// Seeds of sample `index`: `(sketch seed, sampler seed)`. Both streams
/// ignore `t_start` and the sketch switches, so variants of a pool share
/// their boundary draws.
pub fn sample_seeds(seed: u64, index: usize) -> (u64, u64) {
    (
        derive_seed(derive_named(seed, "sketch"), index as u64),
        derive_seed(derive_named(seed, "sample"), index as u64),
    )
}

/// Writes `n` synthetic images into `dir`, numbered from `cfg.first`:
/// `{prefix}{i:05}.pgm` (sample),
/// `_mask.pgm` (sketch labels), `_sketch.pgm` (conditioning sketch) and a
/// `.txt` sidecar with its seeds. Returns their manifest (train split).
pub fn synthesize_dataset(
    dir: &Path,
    stats: &BoundaryStats,
    model: &DenoiserModel,
    sched: &NoiseSchedule,
    cfg: &SynthConfig,
    n: usize,
    seed: u64,
    prefix: &str,
) -> Result<DatasetManifest> {
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("synthesis batch must be >= 1".into()));
    }
    model.config.check_extents(stats.height, stats.width)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let indices: Vec<usize> = (cfg.first..cfg.first + n).collect();
    let entries = indices
        .par_chunks(cfg.batch)
        .map(|chunk| {
            let sketches = chunk
                .iter()
                .map(|&i| generate_sketch_at(stats, &cfg.sketch, stats.width, derive_named(seed, "sketch"), i))
                .collect::<Result<Vec<_>>>()?;
            let stems: Vec<String> = chunk.iter().map(|i| format!("{prefix}{i:05}")).collect();
            let items: Vec<_> = chunk
                .iter()
                .zip(&sketches)
                .zip(&stems)
                .map(|((&i, sk), stem)| (&sk.image, stem.as_str(), sample_seeds(seed, i).1))
                .collect();
            let samples = sample_batch(&items, cfg.t_start, model, sched)?;
            let mut out = Vec::with_capacity(chunk.len());
            for (((&i, sk), stem), sample) in chunk.iter().zip(&sketches).zip(&stems).zip(samples) {
                let (sketch_seed, sample_seed) = sample_seeds(seed, i);
                let image = dir.join(format!("{stem}.pgm"));
                let mask = dir.join(format!("{stem}_mask.pgm"));
                save_image(&sample.image, &image)?;
                save_mask(&sk.mask, &mask)?;
                save_image(&sk.image, &dir.join(format!("{stem}_sketch.pgm")))?;
                let sigma = if cfg.sketch.blur { cfg.sketch.blur_sigma } else { 0.0 };
                let side = format!(
                    "sketch_seed={sketch_seed}\nsample_seed={sample_seed}\nt_start={}\nsigma={sigma}\nperturb={}\nsource={}\n",
                    cfg.t_start, cfg.sketch.perturb, stats.sources[sk.source]
                );
                write_atomic(&dir.join(format!("{stem}.txt")), side.as_bytes())?;
                out.push(ManifestEntry {
                    image,
                    mask,
                    provenance: Provenance::Synthetic,
                    seed: sample_seed,
                    split: Split::Train,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(entries.into_iter().flatten().collect())
}
