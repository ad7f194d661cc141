//! Ratio, blur/perturb and `t_start` experiments over a resumable ledger.
//!
//! A cell (training-set recipe + seed) trains one student and scores it on
//! the test split. Each finished cell is stored as one file under
//! `work/ledger/`, named by a hash of everything the result depends on, so
//! re-running skips finished cells and a deleted file recomputes only that
//! cell. Synthetic pools are cached under `work/pools/` the same way.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::assemble::assemble_dataset;
use super::pseudo::pseudo_label;
use super::synth::{synthesize_dataset, SynthConfig};
use crate::data::pgm::write_atomic;
use crate::data::{DatasetManifest, Provenance};
use crate::diffusion::{DenoiserModel, NoiseSchedule, T_START_GRID};
use crate::error::{Error, Result};
use crate::seed::derive_named;
use crate::segmentation::{evaluate, train_seg, DiceReport, Preset, SegModel, SegTrainConfig};
use crate::sketch::{BoundaryStats, SketchConfig};
use crate::tensor::write_checkpoint;

/// Where the masks of synthetic training entries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabelSource {
    /// The sketch the image was generated from.
    Sketch,
    /// Teacher predictions on the synthetic image.
    Pseudo,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Sketch => "sketch",
            LabelSource::Pseudo => "pseudo",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sketch" => Ok(LabelSource::Sketch),
            "pseudo" => Ok(LabelSource::Pseudo),
            _ => Err(Error::Data(format!("unknown label source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// `(n_real, n_synth)` training-set recipes.
    pub ratios: Vec<(usize, usize)>,
    pub t_start: usize,
    pub blur: bool,
    pub perturb: bool,
    pub blur_sigma: f64,
    pub seeds: Vec<u64>,
    pub preset: Preset,
    /// Student training; `width` and `seed` are set per cell.
    pub train: SegTrainConfig,
    pub labels: LabelSource,
    /// Root of the sketch and sampler streams of every synthetic pool.
    pub synth_seed: u64,
    pub synth_batch: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ratios: vec![(50, 0), (50, 50), (50, 100), (50, 200), (50, 500), (50, 1000)],
            t_start: crate::diffusion::DEFAULT_T_START,
            blur: true,
            perturb: true,
            blur_sigma: crate::sketch::DEFAULT_BLUR_SIGMA,
            seeds: vec![0, 1, 2],
            preset: Preset::Student,
            train: SegTrainConfig::default(),
            labels: LabelSource::Pseudo,
            synth_seed: 0,
            synth_batch: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("experiment needs at least one seed".into()));
        }
        if self.ratios.is_empty() || self.ratios.iter().any(|&(r, s)| r + s == 0) {
            return Err(Error::InvalidArgument(
                "every ratio needs n_real + n_synth >= 1".into(),
            ));
        }
        Ok(())
    }

    fn cell(&self, (n_real, n_synth): (usize, usize), seed: u64) -> Cell {
        Cell {
            n_real,
            n_synth,
            t_start: self.t_start,
            blur: self.blur,
            perturb: self.perturb,
            labels: self.labels,
            seed,
            preset: self.preset,
        }
    }
}

/// One training-set recipe with one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub n_real: usize,
    pub n_synth: usize,
    pub t_start: usize,
    pub blur: bool,
    pub perturb: bool,
    pub labels: LabelSource,
    pub seed: u64,
    pub preset: Preset,
}

impl Cell {
    /// The cell with its seed erased: the unit medians are taken over.
    fn group(&self) -> Cell {
        Cell { seed: 0, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub cell: Cell,
    pub dice: DiceReport,
}

pub const RESULTS_HEADER: &str =
    "n_real\tn_synth\tt_start\tblur\tperturb\tlabels\tseed\tpreset\tdice_rnfl\tdice_gcipl\tdice_cl\tdice_total";

fn fmt_row(c: &Cell, seed: &str, d: &DiceReport) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{seed}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
        c.n_real,
        c.n_synth,
        c.t_start,
        c.blur,
        c.perturb,
        c.labels,
        c.preset,
        d.rnfl,
        d.gcipl,
        d.cl,
        d.total
    )
}

impl ResultRow {
    pub fn to_tsv_line(&self) -> String {
        fmt_row(&self.cell, &self.cell.seed.to_string(), &self.dice)
    }

    /// Parses a line written by [`ResultRow::to_tsv_line`]. Scores keep the
    /// six printed decimals.
    pub fn parse(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::Data(format!("result row `{line}`: {why}"));
        let f: Vec<&str> = line.trim_end().split('\t').collect();
        if f.len() != 12 {
            return Err(bad("expected 12 fields"));
        }
        fn num<T: FromStr>(s: &str, what: &str, line: &str) -> Result<T> {
            s.parse().map_err(|_| Error::Data(format!("result row `{line}`: bad {what}")))
        }
        let dice: Vec<f64> = f[8..12].iter().map(|s| num(s, "score", line)).collect::<Result<_>>()?;
        Ok(Self {
            cell: Cell {
                n_real: num(f[0], "n_real", line)?,
                n_synth: num(f[1], "n_synth", line)?,
                t_start: num(f[2], "t_start", line)?,
                blur: num(f[3], "blur", line)?,
                perturb: num(f[4], "perturb", line)?,
                labels: f[5].parse().map_err(|_| bad("bad label source"))?,
                seed: num(f[6], "seed", line)?,
                preset: f[7].parse()?,
            },
            dice: DiceReport {
                rnfl: dice[0],
                gcipl: dice[1],
                cl: dice[2],
                total: dice[3],
            },
        })
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Per seedless cell (the `seed` field zeroed): component-wise medians
    /// over seeds, in first-appearance order.
    pub fn medians(&self) -> Vec<(Cell, DiceReport)> {
        let mut groups: Vec<(Cell, Vec<DiceReport>)> = Vec::new();
        for r in &self.rows {
            let g = r.cell.group();
            match groups.iter_mut().find(|(c, _)| *c == g) {
                Some((_, v)) => v.push(r.dice),
                None => groups.push((g, vec![r.dice])),
            }
        }
        groups
            .into_iter()
            .map(|(c, v)| {
                let m = |f: fn(&DiceReport) -> f64| median(&v.iter().map(f).collect::<Vec<_>>());
                (
                    c,
                    DiceReport {
                        rnfl: m(|d| d.rnfl),
                        gcipl: m(|d| d.gcipl),
                        cl: m(|d| d.cl),
                        total: m(|d| d.total),
                    },
                )
            })
            .collect()
    }

    /// Median total Dice over the rows matching `filter`.
    pub fn median_total(&self, filter: impl Fn(&Cell) -> bool) -> f64 {
        let totals: Vec<f64> = self.rows.iter().filter(|r| filter(&r.cell)).map(|r| r.dice.total).collect();
        median(&totals)
    }

    /// `(t_start, median total Dice)` pairs in ascending `t_start`.
    pub fn t_start_series(&self) -> Vec<(usize, f64)> {
        let mut ts: Vec<usize> = self.rows.iter().map(|r| r.cell.t_start).collect();
        ts.sort_unstable();
        ts.dedup();
        ts.into_iter().map(|t| (t, self.median_total(|c| c.t_start == t))).collect()
    }

    /// Header, one line per row, then one `median` line per seedless cell.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{RESULTS_HEADER}\n");
        for r in &self.rows {
            writeln!(s, "{}", r.to_tsv_line()).unwrap();
        }
        for (c, d) in self.medians() {
            writeln!(s, "{}", fmt_row(&c, "median", &d)).unwrap();
        }
        s
    }
}

/// Trained artifacts and data an experiment draws on.
pub struct ExperimentInputs<'a> {
    /// Real training entries; cells take a prefix of them.
    pub real: &'a DatasetManifest,
    pub test: &'a DatasetManifest,
    pub stats: &'a BoundaryStats,
    pub denoiser: &'a DenoiserModel,
    pub schedule: &'a NoiseSchedule,
    /// Required as soon as any cell uses pseudo labels.
    pub teacher: Option<&'a SegModel>,
    /// Pre-synthesized images (with sketch masks) for the configured
    /// `(t_start, blur, perturb)` variant; other variants are synthesized.
    pub pool: Option<&'a DatasetManifest>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(h: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(&bytes);
    Ok(())
}

fn manifest_digest(h: &mut Sha256, m: &DatasetManifest) -> Result<()> {
    h.update((m.len() as u64).to_le_bytes());
    for e in m.entries() {
        file_digest(h, &e.image)?;
        file_digest(h, &e.mask)?;
        h.update(format!("{}\t{}\t{}\n", e.provenance, e.seed, e.split));
    }
    Ok(())
}

fn checkpoint_digest(h: &mut Sha256, params: &crate::tensor::ParamStore<f32>, meta: &BTreeMap<String, String>) {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, params, meta).expect("writing to memory");
    h.update((buf.len() as u64).to_le_bytes());
    h.update(&buf);
}

struct Fingerprints {
    /// Everything synthetic pools depend on.
    synth: String,
    /// Contents of the provided pool, if any.
    pool: Option<String>,
    teacher: String,
    /// Everything a cell depends on besides its own parameters.
    data: String,
}

fn fingerprints(inputs: &ExperimentInputs<'_>) -> Result<Fingerprints> {
    let mut synth = Sha256::new();
    synth.update(inputs.stats.to_text());
    checkpoint_digest(&mut synth, &inputs.denoiser.params, &inputs.denoiser.meta());
    for t in 1..=inputs.schedule.steps() {
        synth.update(inputs.schedule.beta(t).to_le_bytes());
    }
    let mut teacher = Sha256::new();
    match inputs.teacher {
        Some(m) => checkpoint_digest(&mut teacher, &m.params, &m.meta()),
        None => teacher.update(b"none"),
    }
    let mut data = Sha256::new();
    manifest_digest(&mut data, inputs.real)?;
    manifest_digest(&mut data, inputs.test)?;
    let pool = match inputs.pool {
        Some(m) => {
            let mut h = Sha256::new();
            manifest_digest(&mut h, m)?;
            Some(hex(&h.finalize()))
        }
        None => None,
    };
    Ok(Fingerprints {
        synth: hex(&synth.finalize()),
        pool,
        teacher: hex(&teacher.finalize()),
        data: hex(&data.finalize()),
    })
}

fn key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex(&h.finalize())[..20].to_string()
}

const POOL_MANIFEST: &str = "manifest.tsv";

/// Loads the pool manifest at `path` if it was completed before, otherwise
/// builds it with `make` and records it (the manifest is written last).
fn cached_manifest(path: &Path, make: impl FnOnce() -> Result<DatasetManifest>) -> Result<DatasetManifest> {
    if path.exists() {
        return DatasetManifest::load(path);
    }
    let m = make()?;
    m.save(path)?;
    Ok(m)
}

/// The `(t_start, blur, perturb)` variant of a synthetic pool.
type Variant = (usize, bool, bool);

fn pool_dir(work: &Path, fp: &Fingerprints, cfg: &ExperimentConfig, v: Variant, size: usize) -> PathBuf {
    let k = key(&[
        &fp.synth,
        &format!("t={} blur={} sigma={} perturb={} seed={} batch={} n={size}", v.0, v.1, cfg.blur_sigma, v.2, cfg.synth_seed, cfg.synth_batch),
    ]);
    work.join("pools").join(k)
}

fn build_pools(
    inputs: &ExperimentInputs<'_>,
    cfg: &ExperimentConfig,
    cells: &[Cell],
    fp: &Fingerprints,
    work: &Path,
) -> Result<BTreeMap<(Variant, LabelSource), DatasetManifest>> {
    let mut sizes: BTreeMap<Variant, (usize, bool)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.n_synth > 0) {
        let e = sizes.entry((c.t_start, c.blur, c.perturb)).or_default();
        e.0 = e.0.max(c.n_synth);
        e.1 |= c.labels == LabelSource::Pseudo;
    }
    let mut pools = BTreeMap::new();
    for (v, (size, pseudo)) in sizes {
        let provided = provided_pool(inputs, cfg, fp, v);
        let dir = match provided {
            Some((_, digest)) => work.join("pools").join(format!("provided-{}", &digest[..20])),
            None => pool_dir(work, fp, cfg, v, size),
        };
        let synth_cfg = SynthConfig {
            t_start: v.0,
            sketch: SketchConfig {
                blur: v.1,
                blur_sigma: cfg.blur_sigma,
                perturb: v.2,
            },
            batch: cfg.synth_batch,
            first: 0,
        };
        let raw = match provided {
            Some((m, _)) => {
                if m.len() < size {
                    return Err(Error::Data(format!(
                        "the provided synthetic pool has {} entries, cells need {size}",
                        m.len()
                    )));
                }
                m.clone()
            }
            None => {
                log::info!("synthetic pool t_start={} blur={} perturb={}: {size} images in {}", v.0, v.1, v.2, dir.display());
                cached_manifest(&dir.join(POOL_MANIFEST), || {
                    synthesize_dataset(&dir, inputs.stats, inputs.denoiser, inputs.schedule, &synth_cfg, size, cfg.synth_seed, "synth")
                })?
            }
        };
        if pseudo {
            let teacher = inputs.teacher.ok_or_else(|| Error::MissingArtifact(PathBuf::from("teacher checkpoint")))?;
            let pdir = dir.join(format!("pseudo-{}", &fp.teacher[..20]));
            let labeled = cached_manifest(&pdir.join(POOL_MANIFEST), || {
                let out = pseudo_label(teacher, &raw, &pdir)?;
                if !out.skipped.is_empty() {
                    return Err(Error::Data(format!(
                        "{} synthetic images could not be read; see {}",
                        out.skipped.len(),
                        pdir.join(super::pseudo::SKIP_LOG).display()
                    )));
                }
                Ok(out.manifest)
            })?;
            pools.insert((v, LabelSource::Pseudo), labeled);
        }
        pools.insert((v, LabelSource::Sketch), raw);
    }
    Ok(pools)
}

/// The caller's pool with its digest, when it serves variant `v`.
fn provided_pool<'a>(
    inputs: &ExperimentInputs<'a>,
    cfg: &ExperimentConfig,
    fp: &'a Fingerprints,
    v: Variant,
) -> Option<(&'a DatasetManifest, &'a str)> {
    match (inputs.pool, &fp.pool) {
        (Some(m), Some(d)) if v == (cfg.t_start, cfg.blur, cfg.perturb) => Some((m, d.as_str())),
        _ => None,
    }
}

fn cell_path(inputs: &ExperimentInputs<'_>, work: &Path, fp: &Fingerprints, cfg: &ExperimentConfig, c: &Cell) -> PathBuf {
    let synth_part = if c.n_synth == 0 {
        String::new()
    } else {
        let teacher = if c.labels == LabelSource::Pseudo { fp.teacher.as_str() } else { "" };
        match provided_pool(inputs, cfg, fp, (c.t_start, c.blur, c.perturb)) {
            Some((_, digest)) => format!("provided {digest} {teacher}"),
            None => format!("{} {teacher} sigma={} seed={} batch={}", fp.synth, cfg.blur_sigma, cfg.synth_seed, cfg.synth_batch),
        }
    };
    let k = key(&[&fp.data, &synth_part, &format!("{:?}", cfg.train), &fmt_row(c, &c.seed.to_string(), &DiceReport::from_classes(0.0, 0.0, 0.0))]);
    work.join("ledger").join(format!("{k}.tsv"))
}

/// Trains and scores one cell without touching the ledger.
pub fn compute_cell(
    inputs: &ExperimentInputs<'_>,
    cfg: &ExperimentConfig,
    cell: &Cell,
    pool: Option<&DatasetManifest>,
) -> Result<ResultRow> {
    let empty = DatasetManifest::default();
    let synth = pool.unwrap_or(&empty);
    let train_set = assemble_dataset(inputs.real, synth, cell.n_real, cell.n_synth, cell.seed)?;
    let pairs = train_set.load_pairs()?;
    let train_cfg = SegTrainConfig {
        width: cell.preset.width(),
        seed: derive_named(cell.seed, "student"),
        ..cfg.train.clone()
    };
    let (student, _) = train_seg(&pairs, &train_cfg, |_, _| Ok(()))?;
    let test = inputs.test.load_pairs()?;
    let names: Vec<String> = inputs.test.entries().iter().map(|e| e.image.display().to_string()).collect();
    let report = evaluate(&student, &test, &names)?;
    Ok(ResultRow {
        cell: *cell,
        dice: report.mean,
    })
}

/// Runs every cell not yet in the ledger under `work` (cells in parallel on
/// the current rayon pool) and returns all rows in `cells` order.
pub fn run_cells(inputs: &ExperimentInputs<'_>, cfg: &ExperimentConfig, cells: &[Cell], work: &Path) -> Result<ResultsTable> {
    cfg.validate()?;
    if inputs.real.entries().iter().any(|e| e.provenance != Provenance::Real) {
        return Err(Error::Data("the real manifest holds non-real entries".into()));
    }
    let fp = fingerprints(inputs)?;
    let pools = build_pools(inputs, cfg, cells, &fp, work)?;
    let ledger = work.join("ledger");
    std::fs::create_dir_all(&ledger).map_err(|e| Error::io(&ledger, e))?;
    let rows = cells
        .par_iter()
        .map(|c| {
            let path = cell_path(inputs, work, &fp, cfg, c);
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let row = ResultRow::parse(text.lines().next().unwrap_or_default())?;
                if row.cell == *c {
                    return Ok(row);
                }
            }
            let pool = pools.get(&((c.t_start, c.blur, c.perturb), c.labels));
            let row = compute_cell(inputs, cfg, c, pool)?;
            log::info!("cell done: {}", row.to_tsv_line());
            write_atomic(&path, format!("{}\n", row.to_tsv_line()).as_bytes())?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultsTable { rows })
}

/// Every configured ratio with every seed.
pub fn ratio_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    cfg.ratios
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| cfg.cell(r, s)))
        .collect()
}

/// The 2x2 blur x perturb grid for every ratio and seed.
pub fn ablation_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for (blur, perturb) in [(false, false), (true, false), (false, true), (true, true)] {
        for c in ratio_cells(cfg) {
            out.push(Cell { blur, perturb, ..c });
        }
    }
    out
}

/// Every `t_start` of the sweep grid for every ratio and seed.
pub fn tstart_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    T_START_GRID
        .iter()
        .flat_map(|&t_start| ratio_cells(cfg).into_iter().map(move |c| Cell { t_start, ..c }))
        .collect()
}

/// Both label sources for every ratio and seed.
pub fn label_cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    [LabelSource::Sketch, LabelSource::Pseudo]
        .into_iter()
        .flat_map(|labels| ratio_cells(cfg).into_iter().map(move |c| Cell { labels, ..c }))
        .collect()
}

pub fn run_ratio_experiment(inputs: &ExperimentInputs<'_>, cfg: &ExperimentConfig, work: &Path) -> Result<ResultsTable> {
    run_cells(inputs, cfg, &ratio_cells(cfg), work)
}

pub fn run_bp_ablation(inputs: &ExperimentInputs<'_>, cfg: &ExperimentConfig, work: &Path) -> Result<ResultsTable> {
    run_cells(inputs, cfg, &ablation_cells(cfg), work)
}

pub fn run_tstart_sweep(inputs: &ExperimentInputs<'_>, cfg: &ExperimentConfig, work: &Path) -> Result<ResultsTable> {
    run_cells(inputs, cfg, &tstart_cells(cfg), work)
}

/// Students on sketch labels vs pseudo labels of the same synthetic images.
pub fn run_label_comparison(inputs: &ExperimentInputs<'_>, cfg: &ExperimentConfig, work: &Path) -> Result<ResultsTable> {
    run_cells(inputs, cfg, &label_cells(cfg), work)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(n_synth: usize, seed: u64, total: f64) -> ResultRow {
        let cfg = ExperimentConfig::default();
        ResultRow {
            cell: cfg.cell((50, n_synth), seed),
            dice: DiceReport::from_classes(total, total, total),
        }
    }

    #[test]
    fn medians_and_format() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let t = ResultsTable {
            rows: vec![row(0, 0, 0.5), row(0, 1, 0.9), row(0, 2, 0.7), row(200, 0, 0.8)],
        };
        let m = t.medians();
        assert_eq!(m.len(), 2);
        assert!((m[0].1.total - 0.7).abs() < 1e-12);
        assert_eq!(t.median_total(|c| c.n_synth == 200), 0.8);
        let tsv = t.to_tsv();
        assert!(tsv.starts_with(RESULTS_HEADER));
        assert_eq!(tsv.lines().count(), 1 + 4 + 2);
        assert!(tsv.lines().nth(5).unwrap().contains("\tmedian\t"));
    }

    #[test]
    fn row_round_trip() {
        let r = row(200, 7, 0.8125);
        let back = ResultRow::parse(&r.to_tsv_line()).unwrap();
        assert_eq!(back.cell, r.cell);
        assert!((back.dice.total - r.dice.total).abs() < 1e-6);
        assert!(ResultRow::parse("1\t2").is_err());
    }

    #[test]
    fn grids() {
        let cfg = ExperimentConfig {
            ratios: vec![(50, 200)],
            seeds: vec![1, 2, 3],
            ..Default::default()
        };
        assert_eq!(ratio_cells(&cfg).len(), 3);
        let ab = ablation_cells(&cfg);
        assert_eq!(ab.len(), 12);
        for s in [1, 2, 3] {
            assert_eq!(ab.iter().filter(|c| c.seed == s).count(), 4);
        }
        let sweep = tstart_cells(&cfg);
        assert_eq!(sweep.len(), 21);
        assert_eq!(sweep.iter().filter(|c| c.seed == 1).count(), 7);
        assert_eq!(label_cells(&cfg).len(), 6);
        let bad = ExperimentConfig { seeds: vec![], ..cfg.clone() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { ratios: vec![(0, 0)], ..cfg };
        assert!(bad.validate().is_err());
    }
}
