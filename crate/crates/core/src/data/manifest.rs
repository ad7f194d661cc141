//! Dataset manifests: ordered `(image, mask, provenance, seed, split)`
//! records stored as tab-separated text.
//!
//! Paths are written relative to the manifest's directory when possible and
//! resolved against it on load.

use std::collections::HashSet;
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use super::image::{check_pair, Image, LabelMask};
use super::pgm::{load_image, load_mask, write_atomic};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Real,
    Synthetic,
    PseudoLabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

macro_rules! text_enum {
    ($ty:ty, $what:literal, $($variant:ident = $text:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(Error::Data(format!("unknown {} `{s}`", $what))),
                }
            }
        }
    };
}

text_enum!(Provenance, "provenance", Real = "real", Synthetic = "synthetic", PseudoLabeled = "pseudo-labeled");
text_enum!(Split, "split", Train = "train", Test = "test");

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub provenance: Provenance,
    pub seed: u64,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Rejects duplicate image references.
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.image) {
                return Err(Error::Data(format!(
                    "duplicate manifest entry {}",
                    e.image.display()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> DatasetManifest {
        DatasetManifest {
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == split)
                .cloned()
                .collect(),
        }
    }

    /// Concatenation; fails on duplicates.
    pub fn concat(&self, other: &DatasetManifest) -> Result<DatasetManifest> {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        Self::new(entries)
    }

    pub fn to_tsv(&self, base: &Path) -> String {
        let rel = |p: &Path| pathdiff::diff_paths(p, base).unwrap_or_else(|| p.to_path_buf()).display().to_string();
        self.entries
            .iter()
            .map(|e| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    rel(&e.image),
                    rel(&e.mask),
                    e.provenance,
                    e.seed,
                    e.split
                )
            })
            .collect()
    }

    pub fn from_tsv(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| Error::Data(format!("manifest line {}: {why}", i + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, mask, provenance, seed, split] = fields[..] else {
                return Err(bad(&format!("expected 5 fields, found {}", fields.len())));
            };
            entries.push(ManifestEntry {
                image: lexical_join(base, image),
                mask: lexical_join(base, mask),
                provenance: provenance.parse().map_err(|e: Error| bad(&e.to_string()))?,
                seed: seed.parse().map_err(|_| bad("seed is not an unsigned integer"))?,
                split: split.parse().map_err(|e: Error| bad(&e.to_string()))?,
            });
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        write_atomic(path, self.to_tsv(base).as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Loads every image/mask pair, checking that extents match.
    pub fn load_pairs(&self) -> Result<Vec<(Image, LabelMask)>> {
        self.entries.iter().map(load_pair).collect()
    }

    pub fn load_images(&self) -> Result<Vec<Image>> {
        self.entries.iter().map(|e| load_image(&e.image)).collect()
    }
}

/// `base.join(rel)` with `.` and `..` folded away without touching the disk.
fn lexical_join(base: &Path, rel: &str) -> PathBuf {
    let mut out = PathBuf::new();
    for c in base.join(rel).components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    out
}

pub fn load_pair(e: &ManifestEntry) -> Result<(Image, LabelMask)> {
    let image = load_image(&e.image)?;
    let mask = load_mask(&e.mask)?;
    check_pair(&image, &mask, "manifest entry")?;
    Ok((image, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            image: PathBuf::from(format!("/data/{name}.pgm")),
            mask: PathBuf::from(format!("/data/{name}_mask.pgm")),
            provenance: Provenance::PseudoLabeled,
            seed: 42,
            split,
        }
    }

    #[test]
    fn tsv_round_trip_relative() {
        let m = DatasetManifest::new(vec![entry("a", Split::Train), entry("b", Split::Test)]).unwrap();
        let text = m.to_tsv(Path::new("/data"));
        assert!(text.starts_with("a.pgm\ta_mask.pgm\tpseudo-labeled\t42\ttrain\n"));
        assert_eq!(DatasetManifest::from_tsv(&text, Path::new("/data")).unwrap(), m);
        assert_eq!(m.split(Split::Test).len(), 1);
    }

    #[test]
    fn tsv_paths_outside_base_stay_relative() {
        let m = DatasetManifest::new(vec![entry("a", Split::Train)]).unwrap();
        let text = m.to_tsv(Path::new("/data/pool/pseudo"));
        assert!(text.starts_with("../../a.pgm\t../../a_mask.pgm\t"));
        assert_eq!(DatasetManifest::from_tsv(&text, Path::new("/data/pool/pseudo")).unwrap(), m);
        assert_eq!(lexical_join(Path::new(""), "../x/./y.pgm"), PathBuf::from("../x/y.pgm"));
    }

    #[test]
    fn rejects_duplicates_and_bad_lines() {
        assert!(DatasetManifest::new(vec![entry("a", Split::Train), entry("a", Split::Test)]).is_err());
        let err = DatasetManifest::from_tsv("a\tb\treal\t1\n", Path::new("")).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(DatasetManifest::from_tsv("a\tb\tfake\t1\ttrain\n", Path::new("")).is_err());
    }
}
