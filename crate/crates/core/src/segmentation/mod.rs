//! Layer segmentation: a U-Net with four logit channels, cross-entropy
//! training, argmax prediction and Dice evaluation.

mod dice;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{DatasetManifest, Image, LabelMask, Split, NUM_CLASSES};
use crate::diffusion::{clip_grads, LossLog};
use crate::error::{Error, Result};
use crate::seed::{derive_named, derive_seed, rng};
use crate::tensor::{load_checkpoint, ops, save_checkpoint, AdamConfig, ParamStore, Tape, Tensor};
use crate::unet::{self, UNetConfig};

pub use dice::{dice, total_dice, DiceReport, EvalReport, DICE_WEIGHTS};

/// Anything that scores every pixel for each class.
pub trait Segmenter: Sync {
    /// Logits of shape `[NUM_CLASSES, H, W]`.
    fn logits(&self, image: &Image) -> Result<Tensor<f32>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Student,
    Teacher,
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Student => "student",
            Preset::Teacher => "teacher",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "student" => Ok(Preset::Student),
            "teacher" => Ok(Preset::Teacher),
            _ => Err(Error::Data(format!("unknown model preset `{s}`"))),
        }
    }
}

impl Preset {
    pub fn width(self) -> usize {
        match self {
            Preset::Student => 16,
            Preset::Teacher => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub config: UNetConfig,
    pub params: ParamStore<f32>,
}

const KIND: &str = "model.kind";

impl SegModel {
    pub fn config(width: usize) -> UNetConfig {
        UNetConfig {
            in_channels: 1,
            out_channels: NUM_CLASSES,
            base_width: width,
            time_embedding: false,
            zero_output: false,
        }
    }

    pub fn new(width: usize, seed: u64) -> Result<Self> {
        let config = Self::config(width);
        Ok(Self {
            params: unet::init_params(&config, &mut rng(seed))?,
            config,
        })
    }

    pub fn meta(&self) -> BTreeMap<String, String> {
        let mut meta = self.config.to_meta();
        meta.insert(KIND.into(), "segmenter".into());
        meta
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.params, &self.meta())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = load_checkpoint(path)?;
        if meta.get(KIND).map(String::as_str) != Some("segmenter") {
            return Err(Error::Data(format!("{} is not a segmenter checkpoint", path.display())));
        }
        Ok(Self {
            config: UNetConfig::from_meta(&meta)?,
            params,
        })
    }
}

fn input_batch(images: &[&Image]) -> Result<Tensor<f32>> {
    let (h, w) = images[0].extents();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.extents() != (h, w) {
            return Err(Error::shape("segmentation batch", &[h, w], &[img.height(), img.width()]));
        }
        data.extend(img.pixels().iter().map(|&p| p as f32));
    }
    Tensor::new(&[images.len(), 1, h, w], data)
}

impl Segmenter for SegModel {
    fn logits(&self, image: &Image) -> Result<Tensor<f32>> {
        self.config.check_extents(image.height(), image.width())?;
        let out = unet::infer(&self.config, &self.params, &input_batch(&[image])?, None)?;
        out.reshape(&[NUM_CLASSES, image.height(), image.width()])
    }
}

/// Per-pixel argmax; ties go to the smallest class index.
pub fn predict_mask(model: &(impl Segmenter + ?Sized), image: &Image) -> Result<LabelMask> {
    let (h, w) = image.extents();
    let logits = model.logits(image)?;
    if logits.shape() != [NUM_CLASSES, h, w] {
        return Err(Error::shape("predict_mask", logits.shape(), &[NUM_CLASSES, h, w]));
    }
    let plane = h * w;
    let l = logits.data();
    let classes = (0..plane)
        .map(|i| {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if l[c * plane + i] > l[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(h, w, classes)
}

/// Mean cross-entropy of `model` over `pairs`.
pub fn mean_loss(model: &SegModel, pairs: &[(Image, LabelMask)]) -> Result<f64> {
    let losses = pairs
        .par_iter()
        .map(|(img, mask)| {
            let logits = model.logits(img)?;
            let (loss, _) = ops::softmax_cross_entropy(&logits.reshape(&[1, NUM_CLASSES, img.height(), img.width()])?, mask.classes())?;
            Ok(loss)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Reports for each pair, in order, plus their mean.
pub fn evaluate(model: &(impl Segmenter + ?Sized), pairs: &[(Image, LabelMask)], names: &[String]) -> Result<EvalReport> {
    if names.len() != pairs.len() {
        return Err(Error::InvalidArgument("one name per evaluated pair required".into()));
    }
    let rows = pairs
        .par_iter()
        .zip(names)
        .map(|((img, gt), name)| Ok((name.clone(), total_dice(&predict_mask(model, img)?, gt)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegTrainConfig {
    pub width: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Random horizontal flips.
    pub hflip: bool,
    pub grad_clip: Option<f64>,
    /// Cosine-decay the learning rate to 10% over the run.
    pub decay: bool,
}

impl Default for SegTrainConfig {
    fn default() -> Self {
        Self {
            width: Preset::Student.width(),
            epochs: 10,
            lr: 3e-3,
            batch: 8,
            seed: 0,
            hflip: false,
            grad_clip: Some(1.0),
            decay: true,
        }
    }
}

impl SegTrainConfig {
    /// The untrained model [`train_seg`] starts from.
    pub fn init_model(&self) -> Result<SegModel> {
        SegModel::new(self.width, derive_named(self.seed, "init"))
    }
}

/// Trains a fresh model with Adam on pixel-wise cross-entropy. Each epoch
/// visits every pair once in a seed-determined order. `checkpoint(epoch,
/// model)` runs after every epoch.
pub fn train_seg(
    pairs: &[(Image, LabelMask)],
    cfg: &SegTrainConfig,
    mut checkpoint: impl FnMut(usize, &SegModel) -> Result<()>,
) -> Result<(SegModel, LossLog)> {
    if pairs.is_empty() || cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument(
            "segmentation training needs pairs and positive batch/epochs".into(),
        ));
    }
    let mut model = cfg.init_model()?;
    let (h, w) = pairs[0].0.extents();
    model.config.check_extents(h, w)?;
    let adam = AdamConfig::default();
    let mut log = LossLog::default();
    let steps_per_epoch = pairs.len().div_ceil(cfg.batch);
    let total = (steps_per_epoch * cfg.epochs) as f64;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut rng = rng(derive_seed(derive_named(cfg.seed, "epochs"), epoch as u64));
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            step += 1;
            let mut images = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len() * h * w);
            for &i in chunk {
                let (img, mask) = &pairs[i];
                if img.extents() != (h, w) || mask.extents() != (h, w) {
                    return Err(Error::shape("segmentation batch", &[h, w], &[img.height(), img.width()]));
                }
                if cfg.hflip && rng.random_bool(0.5) {
                    images.push(img.flip_horizontal());
                    targets.extend_from_slice(mask.flip_horizontal().classes());
                } else {
                    images.push(img.clone());
                    targets.extend_from_slice(mask.classes());
                }
            }
            let refs: Vec<&Image> = images.iter().collect();
            let mut tape = Tape::new();
            let x = tape.input(input_batch(&refs)?);
            let out = unet::forward(&model.config, &model.params, &mut tape, x, None)?;
            let (loss, grad) = ops::softmax_cross_entropy(tape.value(out), &targets)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            let mut grads = tape.backward(out, grad)?.params;
            if let Some(c) = cfg.grad_clip {
                clip_grads(&mut grads, c);
            }
            let lr = if cfg.decay {
                let progress = (step - 1) as f64 / total;
                cfg.lr * (0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos()))
            } else {
                cfg.lr
            };
            model.params.adam_step(&grads, lr, &adam)?;
            log.losses.push(loss);
        }
        checkpoint(epoch, &model)?;
    }
    Ok((model, log))
}

/// [`train_seg`] on the train split of a manifest.
pub fn train_seg_manifest(
    manifest: &DatasetManifest,
    cfg: &SegTrainConfig,
    checkpoint: impl FnMut(usize, &SegModel) -> Result<()>,
) -> Result<(SegModel, LossLog)> {
    let pairs = manifest.split(Split::Train).load_pairs()?;
    if pairs.is_empty() {
        return Err(Error::Data("manifest has no train-split entries".into()));
    }
    train_seg(&pairs, cfg, checkpoint)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant([f32; NUM_CLASSES]);

    impl Segmenter for Constant {
        fn logits(&self, image: &Image) -> Result<Tensor<f32>> {
            let plane = image.height() * image.width();
            Ok(Tensor::from_fn(&[NUM_CLASSES, image.height(), image.width()], |i| self.0[i / plane]))
        }
    }

    #[test]
    fn argmax_tie_break_and_winner() {
        let img = Image::filled(4, 8, 0.5).unwrap();
        let m = predict_mask(&Constant([0.0; 4]), &img).unwrap();
        assert!(m.classes().iter().all(|&c| c == 0));
        let m = predict_mask(&Constant([0.0, 0.0, 1e30, 0.0]), &img).unwrap();
        assert!(m.classes().iter().all(|&c| c == 2));
        assert_eq!(m.extents(), (4, 8));
    }

    #[test]
    fn extents_checked() {
        let model = SegModel::new(4, 1).unwrap();
        assert!(predict_mask(&model, &Image::filled(6, 8, 0.1).unwrap()).is_err());
        assert_eq!(predict_mask(&model, &Image::filled(8, 12, 0.1).unwrap()).unwrap().extents(), (8, 12));
    }
}
