//! Noise predictors ε_θ(x_t, t).

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed::rng;
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore, Scalar, Tape, Tensor, Var};
use crate::unet::{self, timestep_embedding, UNetConfig};

/// A trainable noise predictor over `[N, C, H, W]` batches.
pub trait EpsilonModel<T: Scalar> {
    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    /// Records ε̂ for the batch `x` at per-item timesteps `t`.
    fn forward(&self, tape: &mut Tape<T>, x: Var, t: &[usize]) -> Result<Var>;

    fn predict(&self, x: &Tensor<T>, t: &[usize]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = self.forward(&mut tape, xv, t)?;
        Ok(tape.value(y).clone())
    }
}

/// The time-conditioned U-Net noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub config: UNetConfig,
    pub params: ParamStore<f32>,
}

/// Checkpoint metadata key naming the model kind.
const KIND: &str = "model.kind";

impl DenoiserModel {
    /// Default desk-scale width.
    pub const DEFAULT_WIDTH: usize = 16;

    pub fn config(width: usize) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            out_channels: 1,
            base_width: width,
            time_embedding: true,
            zero_output: true,
        }
    }

    pub fn new(width: usize, seed: u64) -> Result<Self> {
        let config = Self::config(width);
        let params = unet::init_params(&config, &mut rng(seed))?;
        Ok(Self { config, params })
    }

    pub fn meta(&self) -> BTreeMap<String, String> {
        let mut meta = self.config.to_meta();
        meta.insert(KIND.into(), "denoiser".into());
        meta
    }

    pub fn save(&self, path: &Path, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = self.meta();
        meta.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        if meta.get(KIND).map(String::as_str) != Some("denoiser") {
            return Err(Error::Data(format!("{} is not a denoiser checkpoint", path.display())));
        }
        Ok(Self {
            config: UNetConfig::from_meta(&meta)?,
            params,
        })
    }
}

impl EpsilonModel<f32> for DenoiserModel {
    fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape<f32>, x: Var, t: &[usize]) -> Result<Var> {
        unet::forward(&self.config, &self.params, tape, x, Some(t))
    }
}

/// Per-pixel MLP on `[x_t, embedding(t)]`: 1x1 convolutions only, so every
/// pixel is denoised independently. Used on pixel-i.i.d. data, where the
/// optimal predictor is a per-timestep affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelDenoiser<T> {
    pub embed_dim: usize,
    pub hidden: usize,
    pub params: ParamStore<T>,
}

impl<T: Scalar> PixelDenoiser<T> {
    pub fn new(embed_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng(seed);
        let mut params = ParamStore::new();
        let mut layer = |name: &str, cin: usize, cout: usize, zero: bool| {
            let dist = Normal::new(0.0, (2.0 / cin as f64).sqrt()).unwrap();
            let w = Tensor::from_fn(&[cout, cin, 1, 1], |_| {
                if zero { T::zero() } else { T::from_f64_lossy(dist.sample(&mut rng)) }
            });
            params.insert(format!("{name}.w"), w);
            params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
        };
        layer("l0", 1 + embed_dim, hidden, false);
        layer("l1", hidden, hidden, false);
        layer("l2", hidden, 1, true);
        Self {
            embed_dim,
            hidden,
            params,
        }
    }
}

impl<T: Scalar> EpsilonModel<T> for PixelDenoiser<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, t: &[usize]) -> Result<Var> {
        let (n, c, h, w) = tape.value(x).dims4("pixel denoiser")?;
        if c != 1 || t.len() != n {
            return Err(Error::shape("pixel denoiser", tape.value(x).shape(), &[t.len(), 1, h, w]));
        }
        let emb = timestep_embedding::<T>(t, self.embed_dim);
        let d = self.embed_dim;
        let plane = h * w;
        let field = Tensor::from_fn(&[n, d, h, w], |i| emb.data()[(i / (d * plane)) * d + (i / plane) % d]);
        let e = tape.input(field);
        let mut hcur = tape.concat(x, e)?;
        for (i, name) in ["l0", "l1", "l2"].iter().enumerate() {
            let wv = tape.param(&self.params, &format!("{name}.w"))?;
            let bv = tape.param(&self.params, &format!("{name}.b"))?;
            hcur = tape.conv2d(hcur, wv, bv, 1, 0)?;
            if i < 2 {
                hcur = tape.silu(hcur);
            }
        }
        Ok(hcur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn denoiser_starts_at_zero_and_round_trips() {
        let m = DenoiserModel::new(8, 1).unwrap();
        let x = Tensor::<f32>::full(&[2, 1, 8, 12], 0.3);
        let y = m.predict(&x, &[5, 300]).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|&v| v == 0.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        m.save(&path, &BTreeMap::new()).unwrap();
        assert_eq!(DenoiserModel::load(&path).unwrap(), m);
    }

    #[test]
    fn pixel_denoiser_shape() {
        let m = PixelDenoiser::<f64>::new(8, 16, 2);
        let x = Tensor::full(&[3, 1, 2, 2], 0.1);
        assert_eq!(m.predict(&x, &[1, 2, 3]).unwrap().shape(), &[3, 1, 2, 2]);
        assert!(m.predict(&x, &[1, 2]).is_err());
    }
}
