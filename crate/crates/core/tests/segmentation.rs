//! Segmenter training, prediction and Dice scoring.

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

use octsynth::data::{gen_phantom_at, Image, LabelMask, PhantomConfig};
use octsynth::segmentation::*;
use octsynth::seed;
use proptest::prelude::*;
use rand::Rng;

fn phantoms(n: usize, seed: u64) -> Vec<(Image, LabelMask)> {
    let cfg = PhantomConfig::default();
    (0..n)
        .map(|i| {
            let p = gen_phantom_at(&cfg, seed, i).unwrap();
            (p.image, p.mask)
        })
        .collect()
}

fn serial<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

#[test]
fn training_reduces_loss() {
    let pairs = phantoms(32, 11);
    let cfg = SegTrainConfig {
        epochs: 5,
        seed: 3,
        ..Default::default()
    };
    let before = mean_loss(&cfg.init_model().unwrap(), &pairs).unwrap();
    let (model, log) = train_seg(&pairs, &cfg, |_, _| Ok(())).unwrap();
    let after = mean_loss(&model, &pairs).unwrap();
    assert_eq!(log.losses.len(), 5 * 4);
    assert!(after < before, "loss {before} -> {after}");
}

#[test]
fn serial_training_is_deterministic() {
    let pairs = phantoms(6, 12);
    let cfg = SegTrainConfig {
        epochs: 2,
        batch: 3,
        width: 8,
        hflip: true,
        seed: 9,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let mut epochs = Vec::new();
        serial(|| {
            train_seg(&pairs, &cfg, |epoch, m| {
                epochs.push(epoch);
                m.save(&path)
            })
        })
        .unwrap();
        assert_eq!(epochs, [1, 2]);
        std::fs::read(&path).unwrap()
    };
    assert_eq!(run("a.ck"), run("b.ck"));
}

#[test]
fn memorizes_a_single_image() {
    let pairs = phantoms(1, 13);
    let cfg = SegTrainConfig {
        epochs: 150,
        batch: 1,
        seed: 1,
        ..Default::default()
    };
    let (model, _) = train_seg(&pairs, &cfg, |_, _| Ok(())).unwrap();
    let pred = predict_mask(&model, &pairs[0].0).unwrap();
    let gt = pairs[0].1.classes();
    let hits = pred.classes().iter().zip(gt).filter(|(a, b)| a == b).count();
    let acc = hits as f64 / gt.len() as f64;
    assert!(acc > 0.95, "pixel accuracy {acc}");
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let model = SegModel::new(Preset::Student.width(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.ck");
    model.save(&path).unwrap();
    let back = SegModel::load(&path).unwrap();
    assert_eq!(back, model);
    let img = &phantoms(1, 14)[0].0;
    assert_eq!(predict_mask(&back, img).unwrap(), predict_mask(&model, img).unwrap());
    let teacher = SegModel::new(Preset::Teacher.width(), 4).unwrap();
    assert_eq!(teacher.config.base_width, 32);
    let logits = teacher.logits(img).unwrap();
    assert_eq!(logits.shape(), &[4, img.height(), img.width()]);
}

#[test]
fn evaluation_preserves_order_and_aggregates() {
    let pairs = phantoms(3, 15);
    let names: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
    let model = SegModel::new(8, 0).unwrap();
    let report = evaluate(&model, &pairs, &names).unwrap();
    let got: Vec<&str> = report.rows.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(got, ["x", "y", "z"]);
    for ((_, r), (img, gt)) in report.rows.iter().zip(&pairs) {
        assert_eq!(*r, total_dice(&predict_mask(&model, img).unwrap(), gt).unwrap());
    }
    let mean_total = report.rows.iter().map(|(_, r)| r.total).sum::<f64>() / 3.0;
    assert!((report.mean.total - mean_total).abs() < 1e-12);
    assert_eq!(report.to_tsv().lines().count(), 5);
}

/// Independent oracle: confusion-matrix counts over all pixel pairs.
fn oracle_dice(pred: &[u8], gt: &[u8], cls: u8) -> f64 {
    let mut confusion = [[0u64; 4]; 4];
    for i in 0..pred.len() {
        confusion[pred[i] as usize][gt[i] as usize] += 1;
    }
    let c = cls as usize;
    let tp = confusion[c][c];
    let pred_total: u64 = confusion[c].iter().sum();
    let gt_total: u64 = (0..4).map(|r| confusion[r][c]).sum();
    if pred_total + gt_total == 0 {
        1.0
    } else {
        (2 * tp) as f64 / (pred_total + gt_total) as f64
    }
}

#[test]
fn dice_matches_counting_oracle() {
    let mut rng = seed::rng(77);
    for _ in 0..100 {
        let mut gen = || -> Vec<u8> {
            // Skewed class frequencies so some pairs lack a class entirely.
            let max = rng.random_range(1..=4u8);
            (0..64).map(|_| rng.random_range(0..max)).collect()
        };
        let (p, g) = (gen(), gen());
        let pm = LabelMask::new(8, 8, p.clone()).unwrap();
        let gm = LabelMask::new(8, 8, g.clone()).unwrap();
        let report = total_dice(&pm, &gm).unwrap();
        let expect = [1, 2, 3].map(|c| oracle_dice(&p, &g, c));
        assert_eq!([report.rnfl, report.gcipl, report.cl], expect);
        assert_eq!(report.total, 0.4 * expect[0] + 0.3 * expect[1] + 0.3 * expect[2]);
    }
}

fn mask_pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>, Vec<usize>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(0u8..4, n),
            proptest::collection::vec(0u8..4, n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #[test]
    fn dice_properties((p, g, perm) in mask_pair()) {
        let n = p.len();
        let pm = LabelMask::new(1, n, p.clone()).unwrap();
        let gm = LabelMask::new(1, n, g.clone()).unwrap();
        let pp = LabelMask::new(1, n, perm.iter().map(|&i| p[i]).collect()).unwrap();
        let gp = LabelMask::new(1, n, perm.iter().map(|&i| g[i]).collect()).unwrap();
        for cls in 0..4 {
            let d = dice(&pm, &gm, cls).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, dice(&gm, &pm, cls).unwrap());
            prop_assert_eq!(d, dice(&pp, &gp, cls).unwrap());
        }
        let r = total_dice(&pm, &gm).unwrap();
        prop_assert!((r.total - (0.4 * r.rnfl + 0.3 * r.gcipl + 0.3 * r.cl)).abs() < 1e-15);
        prop_assert_eq!(total_dice(&pm, &pm).unwrap().total, 1.0);
    }
}
