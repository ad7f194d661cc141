mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use mimalloc::MiMalloc;

use commands::Ctx;
use config::{absolute, ConfigError, RunConfig};
use run::{Locked, RunDir};

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

/// Synthetic retinal OCT pipeline: phantoms, sketches, diffusion sampling,
/// segmentation and distillation experiments.
#[derive(Debug, Parser)]
#[command(name = "octsynth", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Run directory receiving every output.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives the serial, bit-reproducible mode.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Continue a non-empty run directory, reusing finished work.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labelled phantom scans (train and test splits).
    Phantom {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Fit boundary and intensity statistics on the first labelled images.
    FitStats {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        n_labeled: Option<usize>,
    },
    /// Draw sketches from fitted statistics.
    Sketch {
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the diffusion denoiser on unlabelled images.
    TrainDdpm {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Synthesize images by partially noising sketches and denoising them.
    Synth {
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        ddpm: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        t_start: Option<usize>,
        /// Index of the first sample, to grow a pool in parts.
        #[arg(long)]
        first: Option<usize>,
    },
    /// Histogram divergence between noised real images and noised sketches.
    Hist {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Train a segmenter on the train split of a manifest.
    TrainSeg {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// student or teacher.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Use only the first N training entries.
        #[arg(long, value_name = "N")]
        limit: Option<usize>,
    },
    /// Per-image and mean Dice against the test split of a manifest.
    Eval {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Segmenter checkpoint to run.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Manifest of predicted masks, aligned with the ground truth.
        #[arg(long)]
        pred: Option<PathBuf>,
    },
    /// Pseudo-label synthesized images with a teacher and assemble a training set.
    Distill {
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        synth: Option<PathBuf>,
        /// Real images mixed into the assembled training set.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        n_real: Option<usize>,
        #[arg(long)]
        n_synth: Option<usize>,
    },
    /// Run a grid of training cells and write a results table.
    Experiment {
        /// ratio, ablation, tstart or labels.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long)]
        ddpm: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Pre-synthesized pool to draw synthetic images from.
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Render the first images of a manifest into one PGM strip.
    Strip {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Crop labelled scans around their layers and downsample them.
    Prepare {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        rows: Option<usize>,
    },
    /// Regenerate a run directory from its recorded config into --out.
    Rerun { run_dir: PathBuf },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: Option<PathBuf>) -> Result<()> {
    if let Some(p) = v {
        *slot = Some(absolute(&p)?);
    }
    Ok(())
}

/// Applies subcommand flags to the config and returns the command name.
fn apply(cfg: &mut RunConfig, cmd: Command) -> Result<&'static str> {
    let i = &mut cfg.inputs;
    Ok(match cmd {
        Command::Phantom { n_train, n_test, height, width } => {
            set(&mut cfg.phantom.n_train, n_train);
            set(&mut cfg.phantom.n_test, n_test);
            set(&mut cfg.phantom.height, height);
            set(&mut cfg.phantom.width, width);
            "phantom"
        }
        Command::FitStats { manifest, n_labeled } => {
            set_path(&mut i.manifest, manifest)?;
            set(&mut cfg.stats.n_labeled, n_labeled);
            "fit-stats"
        }
        Command::Sketch { stats, n } => {
            set_path(&mut i.stats, stats)?;
            set(&mut cfg.sketch.n, n);
            "sketch"
        }
        Command::TrainDdpm { manifest, steps } => {
            set_path(&mut i.manifest, manifest)?;
            set(&mut cfg.ddpm.steps, steps);
            "train-ddpm"
        }
        Command::Synth { stats, ddpm, n, t_start, first } => {
            set_path(&mut i.stats, stats)?;
            set_path(&mut i.ddpm, ddpm)?;
            set(&mut cfg.synth.n, n);
            set(&mut cfg.synth.t_start, t_start);
            set(&mut cfg.synth.first, first);
            "synth"
        }
        Command::Hist { manifest, stats } => {
            set_path(&mut i.manifest, manifest)?;
            set_path(&mut i.stats, stats)?;
            "hist"
        }
        Command::TrainSeg { manifest, preset, epochs, limit } => {
            set(&mut cfg.seg.limit, limit);
            set_path(&mut i.manifest, manifest)?;
            set(&mut cfg.seg.preset, preset);
            set(&mut cfg.seg.epochs, epochs);
            "train-seg"
        }
        Command::Eval { manifest, model, pred } => {
            set_path(&mut i.manifest, manifest)?;
            set_path(&mut i.model, model)?;
            set_path(&mut i.pred, pred)?;
            "eval"
        }
        Command::Distill { teacher, synth, manifest, n_real, n_synth } => {
            set_path(&mut i.teacher, teacher)?;
            set_path(&mut i.synth, synth)?;
            set_path(&mut i.manifest, manifest)?;
            set(&mut cfg.distill.n_real, n_real);
            set(&mut cfg.distill.n_synth, n_synth);
            "distill"
        }
        Command::Experiment { kind, manifest, test, stats, ddpm, teacher, pool } => {
            set(&mut cfg.experiment.kind, kind);
            set_path(&mut i.manifest, manifest)?;
            set_path(&mut i.test, test)?;
            set_path(&mut i.stats, stats)?;
            set_path(&mut i.ddpm, ddpm)?;
            set_path(&mut i.teacher, teacher)?;
            set_path(&mut i.pool, pool)?;
            "experiment"
        }
        Command::Strip { manifest, n } => {
            set_path(&mut i.manifest, manifest)?;
            set(&mut cfg.strip.n, n);
            "strip"
        }
        Command::Prepare { manifest, rows } => {
            set_path(&mut i.manifest, manifest)?;
            set(&mut cfg.prepare.rows, rows);
            "prepare"
        }
        Command::Rerun { .. } => unreachable!("rerun is resolved before apply"),
    })
}

fn dispatch(name: &str, ctx: &mut Ctx) -> Result<()> {
    match name {
        "phantom" => commands::phantom(ctx),
        "fit-stats" => commands::fit_stats(ctx),
        "sketch" => commands::sketch(ctx),
        "train-ddpm" => commands::train_ddpm_cmd(ctx),
        "synth" => commands::synth(ctx),
        "hist" => commands::hist(ctx),
        "train-seg" => commands::train_seg_cmd(ctx),
        "eval" => commands::eval(ctx),
        "distill" => commands::distill(ctx),
        "experiment" => commands::experiment(ctx),
        "strip" => commands::strip(ctx),
        "prepare" => commands::prepare(ctx),
        other => bail!(ConfigError(format!("recorded command `{other}` is unknown"))),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(jobs) = g.jobs {
        if jobs == 0 {
            bail!(ConfigError("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let (mut cfg, name) = match cli.command {
        Command::Rerun { run_dir } => {
            if g.config.is_some() {
                bail!(ConfigError("rerun takes its config from the run directory".into()));
            }
            let cfg = RunConfig::load(&run_dir.join(run::CONFIG))?;
            let Some(name) = cfg.run.command.clone() else {
                bail!(ConfigError(format!("{} records no command", run_dir.display())));
            };
            (cfg, name)
        }
        cmd => {
            let mut cfg = match &g.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let name = apply(&mut cfg, cmd)?;
            (cfg, name.to_string())
        }
    };
    set(&mut cfg.run.seed, g.seed);
    cfg.run.command = Some(name.clone());
    let Some(out) = g.out else {
        bail!(ConfigError("--out DIR is required".into()));
    };
    let run = RunDir::open(&out, g.resume)?;
    run.write_config(&cfg)?;
    let mut ctx = Ctx { cfg, run };
    dispatch(&name, &mut ctx)?;
    ctx.run.write_seeds()?;
    log::info!("{name}: outputs in {}", out.display());
    Ok(())
}

/// Machine-parsable category and exit code of a failure.
fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    use octsynth::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return ("usage", 2);
        }
        if cause.is::<Locked>() {
            return ("locked", 1);
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::MissingArtifact(_) => ("missing-artifact", 3),
                E::Diverged { .. } | E::NonFiniteGradient(_) => ("numerical", 4),
                E::InvalidArgument(_) => ("invalid-argument", 1),
                E::Format { .. } => ("format", 1),
                E::Io { .. } => ("io", 1),
                _ => ("data", 1),
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return match e.kind() {
                std::io::ErrorKind::NotFound => ("missing-artifact", 3),
                _ => ("io", 1),
            };
        }
    }
    ("error", 1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = classify(&e);
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {category}: {msg}");
            ExitCode::from(code)
        }
    }
}
