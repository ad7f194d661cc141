//! The ε-prediction objective and the training loop.

use rand::Rng as _;

use super::model::EpsilonModel;
use super::process::standard_normal;
use super::NoiseSchedule;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::seed::{derive_named, rng, Rng};
use crate::tensor::{ops, AdamConfig, Grads, Scalar, Tape, Tensor};

/// Loss and parameter gradients for fixed timesteps and noise.
pub fn ddpm_loss_at<T: Scalar, M: EpsilonModel<T> + ?Sized>(
    model: &M,
    x0: &Tensor<T>,
    sched: &NoiseSchedule,
    t: &[usize],
    eps: &Tensor<T>,
) -> Result<(f64, Grads<T>)> {
    let n = x0.shape().first().copied().unwrap_or(0);
    if t.len() != n || n == 0 {
        return Err(Error::shape("ddpm_loss", x0.shape(), &[t.len()]));
    }
    if eps.shape() != x0.shape() {
        return Err(Error::shape("ddpm_loss", x0.shape(), eps.shape()));
    }
    let per_item = x0.len() / n;
    let mut xt = Vec::with_capacity(x0.len());
    for (i, &ti) in t.iter().enumerate() {
        sched.check_step(ti, false)?;
        let ab = sched.alpha_bar(ti);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let range = i * per_item..(i + 1) * per_item;
        xt.extend(
            x0.data()[range.clone()]
                .iter()
                .zip(&eps.data()[range])
                .map(|(&x, &e)| T::from_f64_lossy(a * x.as_f64() + b * e.as_f64())),
        );
    }
    let mut tape = Tape::new();
    let xv = tape.input(Tensor::new(x0.shape(), xt)?);
    let pred = model.forward(&mut tape, xv, t)?;
    let (loss, grad) = ops::mse_loss(tape.value(pred), eps)?;
    let back = tape.backward(pred, grad)?;
    Ok((loss, back.params))
}

/// Draws `t ~ U{1..T}` per item and `eps ~ N(0, I)`, then evaluates
/// [`ddpm_loss_at`].
pub fn ddpm_loss<T: Scalar, M: EpsilonModel<T> + ?Sized>(
    model: &M,
    x0: &Tensor<T>,
    sched: &NoiseSchedule,
    rng: &mut impl rand::Rng,
) -> Result<(f64, Grads<T>)> {
    let n = x0.shape().first().copied().unwrap_or(0);
    let t: Vec<usize> = (0..n).map(|_| rng.random_range(1..=sched.steps())).collect();
    let eps = standard_normal(x0.shape(), rng);
    ddpm_loss_at(model, x0, sched, &t, &eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpmTrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Rescale gradients whose global L2 norm exceeds this.
    pub grad_clip: Option<f64>,
    /// Call the checkpoint hook every this many steps (and after the last).
    pub checkpoint_every: usize,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            batch: 8,
            seed: 0,
            grad_clip: Some(1.0),
            checkpoint_every: 500,
        }
    }
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub losses: Vec<f64>,
}

impl LossLog {
    /// Tab-separated `(step, loss)` lines with a header; steps count from 1.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tloss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{}\t{l:.6e}\n", i + 1));
        }
        s
    }

    /// Mean loss over `range` of steps (0-based).
    pub fn mean(&self, range: std::ops::Range<usize>) -> f64 {
        let xs = &self.losses[range];
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn clip_grads<T: Scalar>(grads: &mut Grads<T>, max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.data().iter().map(|v| v.as_f64().powi(2)))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(T::from_f64_lossy(max_norm / norm));
    }
}

/// Batch tensor `[n, 1, H, W]` of diffusion-domain images.
pub fn signed_batch<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let (h, w) = images[0].extents();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.extents() != (h, w) {
            return Err(Error::shape("image batch", &[h, w], &[img.height(), img.width()]));
        }
        data.extend(img.to_signed().into_iter().map(T::from_f64_lossy));
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

/// Adam on the ε-prediction loss. Batches are drawn with replacement.
/// `checkpoint(step, model)` runs every `checkpoint_every` steps and after
/// the final step.
pub fn train_ddpm<M: EpsilonModel<f32>>(
    model: &mut M,
    images: &[Image],
    sched: &NoiseSchedule,
    cfg: &DdpmTrainConfig,
    checkpoint: impl FnMut(usize, &M) -> Result<()>,
) -> Result<LossLog> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no training images".into()));
    }
    let batch = cfg.batch;
    train_eps(
        model,
        sched,
        cfg,
        |pick| {
            let picked: Vec<&Image> = (0..batch).map(|_| &images[pick.random_range(0..images.len())]).collect();
            signed_batch(&picked)
        },
        checkpoint,
    )
}

/// The training loop behind [`train_ddpm`], with clean batches supplied by
/// `draw` from its own stream.
pub fn train_eps<T: Scalar, M: EpsilonModel<T>>(
    model: &mut M,
    sched: &NoiseSchedule,
    cfg: &DdpmTrainConfig,
    mut draw: impl FnMut(&mut Rng) -> Result<Tensor<T>>,
    mut checkpoint: impl FnMut(usize, &M) -> Result<()>,
) -> Result<LossLog> {
    if cfg.batch == 0 || cfg.steps == 0 {
        return Err(Error::InvalidArgument("batch and steps must be positive".into()));
    }
    let mut pick = rng(derive_named(cfg.seed, "batches"));
    let mut noise = rng(derive_named(cfg.seed, "noise"));
    let adam = AdamConfig::default();
    let mut log = LossLog::default();
    for step in 1..=cfg.steps {
        let x0 = draw(&mut pick)?;
        let (loss, mut grads) = ddpm_loss(&*model, &x0, sched, &mut noise)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if let Some(c) = cfg.grad_clip {
            clip_grads(&mut grads, c);
        }
        model.params_mut().adam_step(&grads, cfg.lr, &adam)?;
        log.losses.push(loss);
        if step % cfg.checkpoint_every.max(1) == 0 || step == cfg.steps {
            checkpoint(step, model)?;
        }
    }
    Ok(log)
}
