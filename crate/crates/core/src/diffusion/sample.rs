//! Shortcut sampling from a noised sketch.

use super::model::EpsilonModel;
use super::process::{forward_marginal, reverse_step, standard_normal};
use super::NoiseSchedule;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::seed::rng;
use crate::tensor::{Scalar, Tensor};

/// Everything needed to regenerate a sample, given the model checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleProvenance {
    pub seed: u64,
    pub t_start: usize,
    pub sketch: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    /// Diffusion-domain values in `[-1, 1]`, row-major.
    pub signed: Vec<f64>,
    /// The same sample in the storage domain.
    pub image: Image,
    pub provenance: SampleProvenance,
}

/// Runs the reverse chain from `x` at timestep `t_start` down to `t = 0`,
/// asking `eps` for the noise prediction at every step.
pub fn reverse_chain<T: Scalar>(
    mut x: Tensor<T>,
    t_start: usize,
    sched: &NoiseSchedule,
    rng: &mut impl rand::Rng,
    mut eps: impl FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
) -> Result<Tensor<T>> {
    sched.check_step(t_start, true)?;
    for t in (1..=t_start).rev() {
        let e = eps(&x, t)?;
        x = reverse_step(&x, t, &e, sched, rng)?;
    }
    Ok(x)
}

/// Noises the sketch to `t_start` and denoises it back with `model`.
/// `t_start = 0` returns the sketch itself.
pub fn sample_from_sketch<M: EpsilonModel<f32> + ?Sized>(
    sketch: &Image,
    sketch_ref: &str,
    t_start: usize,
    model: &M,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<DiffusionSample> {
    let mut out = sample_batch(&[(sketch, sketch_ref, seed)], t_start, model, sched)?;
    Ok(out.pop().expect("one sample per sketch"))
}

/// [`sample_from_sketch`] for several equally sized sketches at once, each
/// `(sketch, reference, seed)` drawing its noise from its own stream, so a
/// sample does not depend on its batch neighbours' seeds.
pub fn sample_batch<M: EpsilonModel<f32> + ?Sized>(
    items: &[(&Image, &str, u64)],
    t_start: usize,
    model: &M,
    sched: &NoiseSchedule,
) -> Result<Vec<DiffusionSample>> {
    sched.check_step(t_start, true)?;
    let Some(&(first, _, _)) = items.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = first.extents();
    if t_start == 0 {
        return Ok(items
            .iter()
            .map(|&(sketch, sketch_ref, seed)| DiffusionSample {
                signed: sketch.to_signed(),
                image: sketch.clone(),
                provenance: SampleProvenance {
                    seed,
                    t_start,
                    sketch: sketch_ref.to_string(),
                },
            })
            .collect());
    }
    let plane = h * w;
    let one = [1, 1, h, w];
    let mut rngs = Vec::with_capacity(items.len());
    let mut xt = Vec::with_capacity(items.len() * plane);
    for &(sketch, _, seed) in items {
        if sketch.extents() != (h, w) {
            return Err(Error::shape("sample_batch", &[h, w], &[sketch.height(), sketch.width()]));
        }
        let mut r = rng(seed);
        let x0 = Tensor::<f32>::new(&one, sketch.to_signed().into_iter().map(|v| v as f32).collect())?;
        let eps = standard_normal(&one, &mut r);
        xt.extend_from_slice(forward_marginal(&x0, t_start, &eps, sched)?.data());
        rngs.push(r);
    }
    let n = items.len();
    let mut x = Tensor::new(&[n, 1, h, w], xt)?;
    for t in (1..=t_start).rev() {
        let e = model.predict(&x, &vec![t; n])?;
        let mut next = Vec::with_capacity(n * plane);
        for (i, r) in rngs.iter_mut().enumerate() {
            let xi = Tensor::new(&one, x.data()[i * plane..(i + 1) * plane].to_vec())?;
            let ei = Tensor::new(&one, e.data()[i * plane..(i + 1) * plane].to_vec())?;
            next.extend_from_slice(reverse_step(&xi, t, &ei, sched, r)?.data());
        }
        x = Tensor::new(&[n, 1, h, w], next)?;
    }
    if !x.all_finite() {
        return Err(Error::Diverged { step: 0, loss: f64::NAN });
    }
    items
        .iter()
        .enumerate()
        .map(|(i, &(_, sketch_ref, seed))| {
            let signed: Vec<f64> = x.data()[i * plane..(i + 1) * plane]
                .iter()
                .map(|&v| (v as f64).clamp(-1.0, 1.0))
                .collect();
            Ok(DiffusionSample {
                image: Image::from_signed(h, w, &signed)?,
                signed,
                provenance: SampleProvenance {
                    seed,
                    t_start,
                    sketch: sketch_ref.to_string(),
                },
            })
        })
        .collect()
}
