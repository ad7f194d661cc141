//! One function per subcommand; each reads its parameters from the resolved
//! config and writes into the run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use octsynth::data::{
    crop_roi, downsample, downsample_mask, gen_phantom_dataset, load_image, load_mask, save_image, save_mask,
    DatasetManifest, Image, ManifestEntry, Provenance, Split,
};
use octsynth::diffusion::{histogram_divergence, train_ddpm, DenoiserModel};
use octsynth::distill::{
    assemble_dataset, pseudo_label, run_bp_ablation, run_label_comparison, run_ratio_experiment, run_tstart_sweep,
    synthesize_dataset, ExperimentInputs,
};
use octsynth::seed::{derive_named, derive_seed};
use octsynth::segmentation::{evaluate, total_dice, train_seg, EvalReport, SegModel};
use octsynth::sketch::{generate_sketch_at, save_sketch, BoundaryStats, SketchFiles};

use crate::config::{ConfigError, RunConfig};
use crate::run::{write, RunDir};

pub struct Ctx {
    pub cfg: RunConfig,
    pub run: RunDir,
}

fn need<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!(ConfigError(format!("missing required input --{name} (or `{name}` under [inputs])"))),
    }
}

/// Train-split entries, or every entry when the manifest has no train split.
fn train_part(m: &DatasetManifest) -> DatasetManifest {
    let t = m.split(Split::Train);
    if t.is_empty() { m.clone() } else { t }
}

fn test_part(m: &DatasetManifest) -> DatasetManifest {
    let t = m.split(Split::Test);
    if t.is_empty() { m.clone() } else { t }
}

fn prefix(m: &DatasetManifest, n: usize, what: &str) -> Result<DatasetManifest> {
    if m.len() < n {
        bail!(octsynth::Error::Data(format!("{what}: need {n} entries, manifest has {}", m.len())));
    }
    Ok(DatasetManifest::new(m.entries()[..n].to_vec())?)
}

fn save_manifest(ctx: &Ctx, m: &DatasetManifest, name: &str) -> Result<()> {
    m.save(&ctx.run.file(name))?;
    Ok(())
}

pub fn phantom(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.cfg.phantom.clone();
    let pc = p.config();
    let seed = ctx.cfg.run.seed;
    let train_seed = ctx.run.seed("train", derive_named(seed, "train"));
    let mut m = gen_phantom_dataset(&ctx.run.file("train"), &pc, p.n_train, train_seed, Split::Train, "train")?;
    if p.n_test > 0 {
        let test_seed = ctx.run.seed("test", derive_named(seed, "test"));
        let test = gen_phantom_dataset(&ctx.run.file("test"), &pc, p.n_test, test_seed, Split::Test, "test")?;
        m = m.concat(&test)?;
    }
    save_manifest(ctx, &m, "manifest.tsv")
}

pub fn fit_stats(ctx: &mut Ctx) -> Result<()> {
    let manifest = DatasetManifest::load(need(&ctx.cfg.inputs.manifest, "manifest")?)?;
    let labeled = prefix(&train_part(&manifest), ctx.cfg.stats.n_labeled, "labeled images")?;
    let stats = BoundaryStats::fit_manifest(&labeled, ctx.cfg.stats.n_ctrl)?;
    stats.save(&ctx.run.file("stats.tsv"))?;
    Ok(())
}

pub fn sketch(ctx: &mut Ctx) -> Result<()> {
    let stats = BoundaryStats::load(need(&ctx.cfg.inputs.stats, "stats")?)?;
    let sc = ctx.cfg.sketch.config();
    let base = ctx.run.seed("sketch", derive_named(ctx.cfg.run.seed, "sketch"));
    let dir = ctx.run.file("sketches");
    std::fs::create_dir_all(&dir)?;
    let mut entries = Vec::new();
    for i in 0..ctx.cfg.sketch.n {
        let s = generate_sketch_at(&stats, &sc, stats.width, base, i)?;
        let files = SketchFiles::new(&dir, &format!("sketch{i:05}"));
        let seed = derive_seed(base, i as u64);
        save_sketch(&s, &stats, &sc, seed, &files)?;
        entries.push(ManifestEntry {
            image: files.image,
            mask: files.mask,
            provenance: Provenance::Synthetic,
            seed,
            split: Split::Train,
        });
    }
    save_manifest(ctx, &DatasetManifest::new(entries)?, "manifest.tsv")
}

pub fn train_ddpm_cmd(ctx: &mut Ctx) -> Result<()> {
    let manifest = DatasetManifest::load(need(&ctx.cfg.inputs.manifest, "manifest")?)?;
    let images = train_part(&manifest).load_images()?;
    let sched = ctx.cfg.schedule.build()?;
    let init = ctx.run.seed("init", derive_named(ctx.cfg.run.seed, "init"));
    let train = ctx.run.seed("train", derive_named(ctx.cfg.run.seed, "train"));
    let mut model = DenoiserModel::new(ctx.cfg.ddpm.width, init)?;
    let tc = ctx.cfg.ddpm.config(train);
    let path = ctx.run.file("ddpm.ck");
    let log = train_ddpm(&mut model, &images, &sched, &tc, |step, m| {
        log::info!("ddpm step {step}: checkpoint");
        m.save(&path, &BTreeMap::from([("train.step".to_string(), step.to_string())]))
    })?;
    write(&ctx.run.file("loss.tsv"), log.to_tsv().as_bytes())
}

pub fn synth(ctx: &mut Ctx) -> Result<()> {
    let stats = BoundaryStats::load(need(&ctx.cfg.inputs.stats, "stats")?)?;
    let model = DenoiserModel::load(need(&ctx.cfg.inputs.ddpm, "ddpm")?)?;
    let sched = ctx.cfg.schedule.build()?;
    let seed = ctx.run.seed("synth", derive_named(ctx.cfg.run.seed, "synth"));
    let sc = ctx.cfg.synth.config(&ctx.cfg.sketch);
    let m = synthesize_dataset(&ctx.run.file("images"), &stats, &model, &sched, &sc, ctx.cfg.synth.n, seed, "synth")?;
    save_manifest(ctx, &m, "manifest.tsv")
}

pub fn hist(ctx: &mut Ctx) -> Result<()> {
    let manifest = DatasetManifest::load(need(&ctx.cfg.inputs.manifest, "manifest")?)?;
    let stats = BoundaryStats::load(need(&ctx.cfg.inputs.stats, "stats")?)?;
    let h = ctx.cfg.hist.clone();
    let real_m = train_part(&manifest);
    let n = h.n.min(real_m.len());
    let real = prefix(&real_m, n, "real images")?.load_images()?;
    let base = ctx.run.seed("sketch", derive_named(ctx.cfg.run.seed, "sketch"));
    let sketches = (0..n)
        .map(|i| Ok(generate_sketch_at(&stats, &ctx.cfg.sketch.config(), stats.width, base, i)?.image))
        .collect::<Result<Vec<Image>>>()?;
    let sched = ctx.cfg.schedule.build()?;
    let noise = ctx.run.seed("noise", derive_named(ctx.cfg.run.seed, "noise"));
    let mut out = String::from("t\tmean_l1\tmin_l1\tmax_l1\n");
    for &t in &h.t {
        let vals = (0..h.trials.max(1))
            .map(|k| Ok(histogram_divergence(&real, &sketches, t, &sched, h.bins, derive_seed(noise, k as u64))?))
            .collect::<Result<Vec<f64>>>()?;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        writeln!(out, "{t}\t{mean:.6}\t{min:.6}\t{max:.6}")?;
    }
    write(&ctx.run.file("hist.tsv"), out.as_bytes())
}

pub fn train_seg_cmd(ctx: &mut Ctx) -> Result<()> {
    let manifest = DatasetManifest::load(need(&ctx.cfg.inputs.manifest, "manifest")?)?;
    let mut train = train_part(&manifest);
    if ctx.cfg.seg.limit > 0 {
        train = prefix(&train, ctx.cfg.seg.limit, "segmenter training set")?;
    }
    let pairs = train.load_pairs()?;
    let seed = ctx.run.seed("seg", derive_named(ctx.cfg.run.seed, "seg"));
    let tc = ctx.cfg.seg.config(seed)?;
    let path = ctx.run.file("seg.ck");
    let (_, log) = train_seg(&pairs, &tc, |epoch, m| {
        log::info!("segmenter epoch {epoch}: checkpoint");
        m.save(&path)
    })?;
    write(&ctx.run.file("loss.tsv"), log.to_tsv().as_bytes())
}

fn names(m: &DatasetManifest, base: Option<&Path>) -> Vec<String> {
    m.entries()
        .iter()
        .map(|e| match base {
            Some(b) => e.image.strip_prefix(b).unwrap_or(&e.image).display().to_string(),
            None => e.image.display().to_string(),
        })
        .collect()
}

pub fn eval(ctx: &mut Ctx) -> Result<()> {
    let gt_path = need(&ctx.cfg.inputs.manifest, "manifest")?;
    let gt = test_part(&DatasetManifest::load(gt_path)?);
    let labels = names(&gt, gt_path.parent());
    let report = match (&ctx.cfg.inputs.model, &ctx.cfg.inputs.pred) {
        (Some(model), None) => evaluate(&SegModel::load(model)?, &gt.load_pairs()?, &labels)?,
        (None, Some(pred)) => {
            let pred = test_part(&DatasetManifest::load(pred)?);
            if pred.len() != gt.len() {
                bail!(octsynth::Error::Data(format!(
                    "{} predicted masks for {} ground-truth entries",
                    pred.len(),
                    gt.len()
                )));
            }
            let rows = pred
                .entries()
                .iter()
                .zip(gt.entries())
                .zip(labels)
                .map(|((p, g), name)| Ok((name, total_dice(&load_mask(&p.mask)?, &load_mask(&g.mask)?)?)))
                .collect::<Result<Vec<_>>>()?;
            EvalReport::new(rows)
        }
        _ => bail!(ConfigError("eval needs exactly one of --model and --pred".into())),
    };
    write(&ctx.run.file("dice.tsv"), report.to_tsv().as_bytes())?;
    println!("mean total dice\t{:.6}", report.mean.total);
    Ok(())
}

pub fn distill(ctx: &mut Ctx) -> Result<()> {
    let teacher = SegModel::load(need(&ctx.cfg.inputs.teacher, "teacher")?)?;
    let synth = DatasetManifest::load(need(&ctx.cfg.inputs.synth, "synth")?)?;
    let out = pseudo_label(&teacher, &synth, &ctx.run.file("pseudo"))?;
    save_manifest(ctx, &out.manifest, "manifest.tsv")?;
    let rel = |p: &Path| p.strip_prefix(ctx.run.file("")).unwrap_or(p).display().to_string();
    let mut table = String::from("image\tpseudo_mask\tsketch_mask\n");
    for (e, sketch) in out.manifest.entries().iter().zip(&out.sketch_masks) {
        writeln!(table, "{}\t{}\t{}", rel(&e.image), rel(&e.mask), rel(sketch))?;
    }
    write(&ctx.run.file("labels.tsv"), table.as_bytes())?;
    let d = ctx.cfg.distill.clone();
    if d.n_real + d.n_synth > 0 {
        let real = match (&ctx.cfg.inputs.manifest, d.n_real) {
            (_, 0) => DatasetManifest::default(),
            (Some(p), _) => train_part(&DatasetManifest::load(p)?),
            (None, _) => bail!(ConfigError("distill.n_real > 0 needs --manifest with real images".into())),
        };
        let seed = ctx.run.seed("assemble", derive_named(ctx.cfg.run.seed, "assemble"));
        let train = assemble_dataset(&real, &out.manifest, d.n_real, d.n_synth, seed)?;
        save_manifest(ctx, &train, "train.tsv")?;
    }
    Ok(())
}

pub fn experiment(ctx: &mut Ctx) -> Result<()> {
    let manifest_path = need(&ctx.cfg.inputs.manifest, "manifest")?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let test = match &ctx.cfg.inputs.test {
        Some(p) => test_part(&DatasetManifest::load(p)?),
        None => manifest.split(Split::Test),
    };
    if test.is_empty() {
        bail!(octsynth::Error::Data("no test-split entries to evaluate on".into()));
    }
    let real = manifest.split(Split::Train);
    let stats = BoundaryStats::load(need(&ctx.cfg.inputs.stats, "stats")?)?;
    let denoiser = DenoiserModel::load(need(&ctx.cfg.inputs.ddpm, "ddpm")?)?;
    let teacher = ctx.cfg.inputs.teacher.as_deref().map(SegModel::load).transpose()?;
    let pool = ctx.cfg.inputs.pool.as_deref().map(DatasetManifest::load).transpose()?;
    let sched = ctx.cfg.schedule.build()?;
    let ecfg = ctx.cfg.experiment()?;
    ctx.run.seed("synth", ecfg.synth_seed);
    for &s in &ecfg.seeds {
        ctx.run.seed("cell", s);
    }
    let inputs = ExperimentInputs {
        real: &real,
        test: &test,
        stats: &stats,
        denoiser: &denoiser,
        schedule: &sched,
        teacher: teacher.as_ref(),
        pool: pool.as_ref(),
    };
    let work = ctx.run.file("work");
    let table = match ctx.cfg.experiment.kind.as_str() {
        "ratio" => run_ratio_experiment(&inputs, &ecfg, &work)?,
        "ablation" => run_bp_ablation(&inputs, &ecfg, &work)?,
        "tstart" => run_tstart_sweep(&inputs, &ecfg, &work)?,
        "labels" => run_label_comparison(&inputs, &ecfg, &work)?,
        other => bail!(ConfigError(format!(
            "unknown experiment kind `{other}` (expected ratio, ablation, tstart or labels)"
        ))),
    };
    write(&ctx.run.file("results.tsv"), table.to_tsv().as_bytes())?;
    if ctx.cfg.experiment.kind == "tstart" {
        let mut s = String::from("t_start\tmedian_dice_total\n");
        for (t, d) in table.t_start_series() {
            writeln!(s, "{t}\t{d:.6}")?;
        }
        write(&ctx.run.file("series.tsv"), s.as_bytes())?;
    }
    print!("{}", table.to_tsv());
    Ok(())
}

/// Stacks the first images of a manifest into one strip with dark gaps.
pub fn strip(ctx: &mut Ctx) -> Result<()> {
    let manifest = DatasetManifest::load(need(&ctx.cfg.inputs.manifest, "manifest")?)?;
    let n = ctx.cfg.strip.n.min(manifest.len());
    let images = prefix(&manifest, n, "strip")?.load_images()?;
    let Some(first) = images.first() else {
        bail!(octsynth::Error::Data("nothing to render".into()));
    };
    let (h, w) = first.extents();
    const GAP: usize = 2;
    let mut pixels = Vec::new();
    for (i, img) in images.iter().enumerate() {
        if img.extents() != (h, w) {
            bail!(octsynth::Error::Data("strip images differ in size".into()));
        }
        if i > 0 {
            pixels.extend(std::iter::repeat_n(0.0, GAP * w));
        }
        pixels.extend_from_slice(img.pixels());
    }
    let rows = pixels.len() / w;
    save_image(&Image::new(rows, w, pixels)?, &ctx.run.file("strip.pgm"))?;
    Ok(())
}

/// Crops each labeled image to a window around its layers and
/// box-downsamples it.
pub fn prepare(ctx: &mut Ctx) -> Result<()> {
    let manifest = DatasetManifest::load(need(&ctx.cfg.inputs.manifest, "manifest")?)?;
    let p = ctx.cfg.prepare.clone();
    let dir = ctx.run.file("images");
    std::fs::create_dir_all(&dir)?;
    let mut entries = Vec::new();
    for (i, e) in manifest.entries().iter().enumerate() {
        let image = load_image(&e.image)?;
        let mask = load_mask(&e.mask)?;
        let (ci, cm) = crop_roi(&image, &mask, p.rows).with_context(|| format!("cropping {}", e.image.display()))?;
        let (di, dm) = (downsample(&ci, p.factor[0], p.factor[1])?, downsample_mask(&cm, p.factor[0], p.factor[1])?);
        let stem = e.image.file_stem().unwrap_or_default().to_string_lossy();
        let img_path = dir.join(format!("{i:05}_{stem}.pgm"));
        let mask_path = dir.join(format!("{i:05}_{stem}_mask.pgm"));
        save_image(&di, &img_path)?;
        save_mask(&dm, &mask_path)?;
        entries.push(ManifestEntry {
            image: img_path,
            mask: mask_path,
            ..e.clone()
        });
    }
    save_manifest(ctx, &DatasetManifest::new(entries)?, "manifest.tsv")
}
