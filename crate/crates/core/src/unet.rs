//! The small U-Net shared by the noise predictor and the segmenter.
//!
//! Three resolution levels with channel multipliers (1, 2, 4), two
//! conv-GroupNorm-SiLU blocks per level on both paths, 2x2 mean pooling
//! down, nearest-neighbour upsampling up, and channel-concatenated skips.
//! When the time embedding is enabled, a sinusoidal embedding of the
//! timestep goes through a two-layer MLP and each block adds its own
//! linear projection of it before the activation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Scalar, Tape, Tensor, Var};

pub const GROUPS: usize = 4;
const MULTIPLIERS: [usize; 3] = [1, 2, 4];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub time_embedding: bool,
    /// Zero-initialise the output projection (the noise predictor starts at 0).
    pub zero_output: bool,
}

impl UNetConfig {
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("unet.in_channels".into(), self.in_channels.to_string()),
            ("unet.out_channels".into(), self.out_channels.to_string()),
            ("unet.base_width".into(), self.base_width.to_string()),
            ("unet.time_embedding".into(), self.time_embedding.to_string()),
            ("unet.zero_output".into(), self.zero_output.to_string()),
        ])
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<V> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("checkpoint metadata lacks a valid `{key}`")))
        }
        Ok(Self {
            in_channels: get(meta, "unet.in_channels")?,
            out_channels: get(meta, "unet.out_channels")?,
            base_width: get(meta, "unet.base_width")?,
            time_embedding: get(meta, "unet.time_embedding")?,
            zero_output: get(meta, "unet.zero_output")?,
        })
    }

    fn temb_dim(&self) -> usize {
        4 * self.base_width
    }

    /// Spatial extents must survive two rounds of 2x2 pooling.
    pub fn check_extents(&self, height: usize, width: usize) -> Result<()> {
        if height % 4 != 0 || width % 4 != 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents {height}x{width} must be positive multiples of 4"
            )));
        }
        Ok(())
    }
}

/// `(name, in, out)` for every conv block, in forward order.
fn blocks(cfg: &UNetConfig) -> Vec<(String, usize, usize)> {
    let w = cfg.base_width;
    let ch = MULTIPLIERS.map(|m| m * w);
    let mut out = Vec::new();
    let mut cin = cfg.in_channels;
    for (lvl, &c) in ch.iter().enumerate() {
        out.push((format!("down{lvl}.0"), cin, c));
        out.push((format!("down{lvl}.1"), c, c));
        cin = c;
    }
    for lvl in (0..2).rev() {
        out.push((format!("up{lvl}.0"), cin + ch[lvl], ch[lvl]));
        out.push((format!("up{lvl}.1"), ch[lvl], ch[lvl]));
        cin = ch[lvl];
    }
    out
}

pub fn init_params<T: Scalar>(cfg: &UNetConfig, rng: &mut impl Rng) -> Result<ParamStore<T>> {
    if cfg.base_width % GROUPS != 0 || cfg.base_width == 0 {
        return Err(Error::InvalidArgument(format!(
            "base width {} must be a positive multiple of {GROUPS}",
            cfg.base_width
        )));
    }
    let mut store = ParamStore::new();
    let normal = |shape: &[usize], std: f64, rng: &mut dyn rand::RngCore| {
        let dist = Normal::new(0.0, std).expect("positive std");
        Tensor::from_fn(shape, |_| T::from_f64_lossy(dist.sample(rng)))
    };
    let temb = cfg.temb_dim();
    if cfg.time_embedding {
        let d = cfg.base_width;
        store.insert("temb.0.w", normal(&[d, temb], (1.0 / d as f64).sqrt(), rng));
        store.insert("temb.0.b", Tensor::zeros(&[temb]));
        store.insert("temb.1.w", normal(&[temb, temb], (1.0 / temb as f64).sqrt(), rng));
        store.insert("temb.1.b", Tensor::zeros(&[temb]));
    }
    for (name, cin, cout) in blocks(cfg) {
        let fan_in = (cin * 9) as f64;
        store.insert(format!("{name}.conv.w"), normal(&[cout, cin, 3, 3], (2.0 / fan_in).sqrt(), rng));
        store.insert(format!("{name}.conv.b"), Tensor::zeros(&[cout]));
        store.insert(format!("{name}.gn.g"), Tensor::full(&[cout], T::one()));
        store.insert(format!("{name}.gn.b"), Tensor::zeros(&[cout]));
        if cfg.time_embedding {
            store.insert(format!("{name}.temb.w"), normal(&[temb, cout], (1.0 / temb as f64).sqrt(), rng));
            store.insert(format!("{name}.temb.b"), Tensor::zeros(&[cout]));
        }
    }
    let w = cfg.base_width;
    let out_w = if cfg.zero_output {
        Tensor::zeros(&[cfg.out_channels, w, 1, 1])
    } else {
        normal(&[cfg.out_channels, w, 1, 1], (1.0 / w as f64).sqrt(), rng)
    };
    store.insert("out.w", out_w);
    store.insert("out.b", Tensor::zeros(&[cfg.out_channels]));
    Ok(store)
}

/// Sinusoidal embedding `[N, dim]` of integer timesteps.
pub fn timestep_embedding<T: Scalar>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let s = step as f64;
        for j in 0..half {
            let freq = (-(10000f64).ln() * j as f64 / half as f64).exp();
            data.push(T::from_f64_lossy((s * freq).sin()));
        }
        for j in 0..half {
            let freq = (-(10000f64).ln() * j as f64 / half as f64).exp();
            data.push(T::from_f64_lossy((s * freq).cos()));
        }
        for _ in 2 * half..dim {
            data.push(T::zero());
        }
    }
    Tensor::new(&[t.len(), dim], data).expect("embedding shape")
}

struct Ctx<'a, T: Scalar> {
    params: &'a ParamStore<T>,
    temb: Option<Var>,
}

impl<T: Scalar> Ctx<'_, T> {
    fn p(&self, tape: &mut Tape<T>, name: &str) -> Result<Var> {
        tape.param(self.params, name)
    }

    fn block(&self, tape: &mut Tape<T>, name: &str, x: Var) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.conv.w"))?;
        let b = self.p(tape, &format!("{name}.conv.b"))?;
        let h = tape.conv2d(x, w, b, 1, 1)?;
        let g = self.p(tape, &format!("{name}.gn.g"))?;
        let be = self.p(tape, &format!("{name}.gn.b"))?;
        let mut h = tape.group_norm(h, g, be, GROUPS)?;
        if let Some(temb) = self.temb {
            let w = self.p(tape, &format!("{name}.temb.w"))?;
            let b = self.p(tape, &format!("{name}.temb.b"))?;
            let proj = tape.linear(temb, w, b)?;
            h = tape.add_channel_bias(h, proj)?;
        }
        Ok(tape.silu(h))
    }
}

/// Records a forward pass on `tape` and returns the output variable.
///
/// `timesteps` must be given (one per batch item) exactly when the config
/// enables the time embedding.
pub fn forward<T: Scalar>(
    cfg: &UNetConfig,
    params: &ParamStore<T>,
    tape: &mut Tape<T>,
    x: Var,
    timesteps: Option<&[usize]>,
) -> Result<Var> {
    let (n, c, h, w) = tape.value(x).dims4("unet")?;
    if c != cfg.in_channels {
        return Err(Error::shape("unet input", tape.value(x).shape(), &[n, cfg.in_channels, h, w]));
    }
    cfg.check_extents(h, w)?;
    let temb = match (cfg.time_embedding, timesteps) {
        (true, Some(t)) if t.len() == n => {
            let emb = tape.input(timestep_embedding(t, cfg.base_width));
            let ctx = Ctx { params, temb: None };
            let (w0, b0) = (ctx.p(tape, "temb.0.w")?, ctx.p(tape, "temb.0.b")?);
            let e = tape.linear(emb, w0, b0)?;
            let e = tape.silu(e);
            let (w1, b1) = (ctx.p(tape, "temb.1.w")?, ctx.p(tape, "temb.1.b")?);
            let e = tape.linear(e, w1, b1)?;
            Some(tape.silu(e))
        }
        (false, None) => None,
        _ => {
            return Err(Error::InvalidArgument(
                "timesteps must be supplied (one per item) exactly when the time embedding is enabled".into(),
            ))
        }
    };
    let ctx = Ctx { params, temb };
    let mut skips = Vec::new();
    let mut hcur = x;
    for lvl in 0..3 {
        if lvl > 0 {
            hcur = tape.avgpool2(hcur)?;
        }
        hcur = ctx.block(tape, &format!("down{lvl}.0"), hcur)?;
        hcur = ctx.block(tape, &format!("down{lvl}.1"), hcur)?;
        skips.push(hcur);
    }
    skips.pop();
    for lvl in (0..2).rev() {
        let up = tape.upsample2(hcur)?;
        let skip = skips.pop().expect("one skip per level");
        hcur = tape.concat(up, skip)?;
        hcur = ctx.block(tape, &format!("up{lvl}.0"), hcur)?;
        hcur = ctx.block(tape, &format!("up{lvl}.1"), hcur)?;
    }
    let (ow, ob) = (ctx.p(tape, "out.w")?, ctx.p(tape, "out.b")?);
    tape.conv2d(hcur, ow, ob, 1, 0)
}

/// Forward pass without keeping a tape around.
pub fn infer<T: Scalar>(
    cfg: &UNetConfig,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    timesteps: Option<&[usize]>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = forward(cfg, params, &mut tape, xv, timesteps)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(time: bool) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            out_channels: 4,
            base_width: 4,
            time_embedding: time,
            zero_output: false,
        }
    }

    #[test]
    fn output_extents_match_input() {
        let c = cfg(true);
        let p = init_params::<f32>(&c, &mut crate::seed::rng(0)).unwrap();
        let x = Tensor::full(&[2, 1, 8, 12], 0.1f32);
        let y = infer(&c, &p, &x, Some(&[3, 250])).unwrap();
        assert_eq!(y.shape(), &[2, 4, 8, 12]);
        assert!(y.all_finite());
        assert!(infer(&c, &p, &x, None).is_err());
        assert!(infer(&c, &p, &Tensor::full(&[1, 1, 6, 12], 0.0), Some(&[1])).is_err());
    }

    #[test]
    fn meta_round_trip() {
        let c = cfg(false);
        assert_eq!(UNetConfig::from_meta(&c.to_meta()).unwrap(), c);
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let e = timestep_embedding::<f64>(&[0, 1, 399], 16);
        assert!(e.data().iter().all(|v| v.abs() <= 1.0));
        assert_ne!(e.data()[..16], e.data()[16..32]);
        assert_eq!(e.data()[8], 1.0); // cos(0)
    }
}
