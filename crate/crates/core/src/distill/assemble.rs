//! Mixing real and synthetic training entries.

use rand::seq::{index, SliceRandom};

use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::seed::{derive_named, rng};

/// The first `n_real` entries of `real` plus a seed-determined sample of
/// `n_synth` entries of `synth`, shuffled by the same seed. All entries are
/// tagged as training data.
pub fn assemble_dataset(
    real: &DatasetManifest,
    synth: &DatasetManifest,
    n_real: usize,
    n_synth: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if n_real + n_synth == 0 {
        return Err(Error::InvalidArgument("a training set needs at least one entry".into()));
    }
    if real.len() < n_real || synth.len() < n_synth {
        return Err(Error::Data(format!(
            "requested {n_real} real + {n_synth} synthetic entries, available {} + {}",
            real.len(),
            synth.len()
        )));
    }
    let mut entries = real.entries()[..n_real].to_vec();
    let picks = index::sample(&mut rng(derive_named(seed, "pick")), synth.len(), n_synth);
    entries.extend(picks.into_iter().map(|i| synth.entries()[i].clone()));
    entries.shuffle(&mut rng(derive_named(seed, "shuffle")));
    for e in &mut entries {
        e.split = Split::Train;
    }
    DatasetManifest::new(entries)
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::data::{ManifestEntry, Provenance};

    fn manifest(prefix: &str, n: usize, provenance: Provenance) -> DatasetManifest {
        DatasetManifest::new(
            (0..n)
                .map(|i| ManifestEntry {
                    image: PathBuf::from(format!("{prefix}{i}.pgm")),
                    mask: PathBuf::from(format!("{prefix}{i}_mask.pgm")),
                    provenance,
                    seed: i as u64,
                    split: Split::Train,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn counts_and_determinism() {
        let real = manifest("r", 60, Provenance::Real);
        let synth = manifest("s", 1000, Provenance::Synthetic);
        let a = assemble_dataset(&real, &synth, 50, 0, 1).unwrap();
        assert_eq!(a.len(), 50);
        assert!(a.entries().iter().all(|e| e.provenance == Provenance::Real));
        let mut names: Vec<_> = a.entries().iter().map(|e| e.image.clone()).collect();
        names.sort();
        let mut first: Vec<_> = real.entries()[..50].iter().map(|e| e.image.clone()).collect();
        first.sort();
        assert_eq!(names, first);
        let b = assemble_dataset(&real, &synth, 50, 1000, 7).unwrap();
        assert_eq!(b.len(), 1050);
        assert_eq!(b, assemble_dataset(&real, &synth, 50, 1000, 7).unwrap());
        assert_ne!(b, assemble_dataset(&real, &synth, 50, 1000, 8).unwrap());
    }

    #[test]
    fn insufficient_entries_rejected() {
        let real = manifest("r", 10, Provenance::Real);
        let synth = manifest("s", 5, Provenance::Synthetic);
        let err = assemble_dataset(&real, &synth, 10, 6, 0).unwrap_err().to_string();
        assert!(err.contains("10 real + 6 synthetic") && err.contains("10 + 5"), "{err}");
        assert!(assemble_dataset(&real, &synth, 0, 0, 0).is_err());
    }
}
