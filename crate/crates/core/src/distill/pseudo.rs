//! Teacher predictions as training labels.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::pgm::{load_image, save_mask, write_atomic};
use crate::data::{DatasetManifest, ManifestEntry, Provenance};
use crate::error::{Error, Result};
use crate::segmentation::{predict_mask, Segmenter};

/// Name of the log listing entries skipped by [`pseudo_label`].
pub const SKIP_LOG: &str = "pseudo_label.log";

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// Entries with teacher masks, provenance pseudo-labeled.
    pub manifest: DatasetManifest,
    /// The original (sketch) mask of each kept entry, in manifest order.
    pub sketch_masks: Vec<PathBuf>,
    /// Entries whose image could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Predicts a mask for every image of `synth` and writes it to
/// `out_dir/{stem}_pseudo.pgm`. The input masks are left untouched.
/// Unreadable images are skipped with a warning and listed in
/// `out_dir/pseudo_label.log`.
pub fn pseudo_label(teacher: &(impl Segmenter + ?Sized), synth: &DatasetManifest, out_dir: &Path) -> Result<PseudoLabels> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut stems = HashSet::new();
    for e in synth.entries() {
        let stem = e.image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if !stems.insert(stem.clone()) {
            return Err(Error::Data(format!("two synthetic images share the file stem `{stem}`")));
        }
    }
    let outcomes = synth
        .entries()
        .par_iter()
        .map(|e| {
            let image = match load_image(&e.image) {
                Ok(img) => img,
                Err(err) => return Ok(Err((e.image.clone(), err.to_string()))),
            };
            let stem = e.image.file_stem().unwrap_or_default().to_string_lossy();
            let mask = out_dir.join(format!("{stem}_pseudo.pgm"));
            save_mask(&predict_mask(teacher, &image)?, &mask)?;
            Ok(Ok(ManifestEntry {
                mask,
                provenance: Provenance::PseudoLabeled,
                ..e.clone()
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    let mut sketch_masks = Vec::new();
    let mut skipped = Vec::new();
    for (outcome, original) in outcomes.into_iter().zip(synth.entries()) {
        match outcome {
            Ok(entry) => {
                entries.push(entry);
                sketch_masks.push(original.mask.clone());
            }
            Err((path, why)) => {
                log::warn!("skipping {}: {why}", path.display());
                skipped.push((path, why));
            }
        }
    }
    if !skipped.is_empty() {
        let mut text = String::new();
        for (path, why) in &skipped {
            writeln!(text, "skipped\t{}\t{why}", path.display()).unwrap();
        }
        write_atomic(&out_dir.join(SKIP_LOG), text.as_bytes())?;
    }
    Ok(PseudoLabels {
        manifest: DatasetManifest::new(entries)?,
        sketch_masks,
        skipped,
    })
}
