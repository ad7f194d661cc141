//! Denoising diffusion: schedule, forward/reverse process, ε-prediction
//! training, shortcut sampling from sketches, and the histogram diagnostic.

mod gaussian;
mod histogram;
mod model;
mod process;
mod sample;
mod schedule;
mod train;

pub use gaussian::{AnalyticEps, GaussianData};
pub use histogram::{histogram, histogram_divergence, HIST_RANGE};
pub use model::{DenoiserModel, EpsilonModel, PixelDenoiser};
pub use process::{forward_marginal, forward_step, reverse_mean, reverse_step, standard_normal};
pub use sample::{reverse_chain, sample_batch, sample_from_sketch, DiffusionSample, SampleProvenance};
pub use schedule::{cosine_level, NoiseSchedule, COSINE_OFFSET, MAX_BETA};
pub use train::{clip_grads, ddpm_loss, ddpm_loss_at, signed_batch, train_ddpm, train_eps, DdpmTrainConfig, LossLog};

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 400;

/// Default shortcut start.
pub const DEFAULT_T_START: usize = 300;

/// Candidate shortcut starts for the sweep.
pub const T_START_GRID: [usize; 7] = [100, 150, 200, 250, 300, 350, 400];
