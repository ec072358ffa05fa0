//! Dataset manifests: TSV records of `(source_id, path, pitch, family)`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source_id: String,
    pub path: PathBuf,
    pub pitch: u8,
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Option<Split>,
}

/// Parses an NSynth-style note name such as `guitar_acoustic_001-082-050`
/// into `(family, pitch)`.
pub fn parse_nsynth_name(stem: &str) -> Option<(String, u8)> {
    let family = stem.split('_').next().filter(|s| !s.is_empty())?;
    let mut dashed = stem.rsplit('-');
    let _velocity: u8 = dashed.next()?.parse().ok()?;
    let pitch: u8 = dashed.next()?.parse().ok()?;
    Some((family.to_string(), pitch))
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct pitches in ascending order.
    pub fn pitches(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.pitch).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn families(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.family.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Builds a manifest from the NSynth-named wave files in `dir`, sorted by
    /// file name.
    pub fn scan_nsynth_dir(dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let listing = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for item in listing {
            let path = item.map_err(|e| Error::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                continue;
            }
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            match parse_nsynth_name(&stem) {
                Some((family, pitch)) => entries.push(ManifestEntry {
                    source_id: stem,
                    path,
                    pitch,
                    family,
                }),
                None => log::warn!("skipping {}: not an NSynth-style note name", path.display()),
            }
        }
        entries.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        if entries.is_empty() {
            return Err(Error::EmptyDataset(format!("no NSynth-style wave files in {}", dir.display())));
        }
        Ok(DatasetManifest { entries, split: None })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(split) = self.split {
            out.push_str(&format!("# split: {split}\n"));
        }
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.source_id, e.path.display(), e.pitch, e.family));
        }
        out
    }

    pub fn parse_tsv(path: &Path, text: &str) -> Result<Self> {
        let mut manifest = DatasetManifest::default();
        for (i, line) in text.lines().enumerate() {
            if let Some(comment) = line.strip_prefix('#') {
                match comment.trim().strip_prefix("split:").map(str::trim) {
                    Some("train") => manifest.split = Some(Split::Train),
                    Some("test") => manifest.split = Some(Split::Test),
                    Some(other) => return Err(Error::format(path, format!("line {}: unknown split {other:?}", i + 1))),
                    None => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::format(path, format!("line {}: expected 4 tab-separated fields", i + 1)));
            }
            let pitch = fields[2]
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: bad pitch {:?}", i + 1, fields[2])))?;
            manifest.entries.push(ManifestEntry {
                source_id: fields[0].to_string(),
                path: PathBuf::from(fields[1]),
                pitch,
                family: fields[3].to_string(),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::format(path, "manifest is not UTF-8"))?;
        Self::parse_tsv(path, &text)
    }
}

/// Keeps entries with `pitch_min <= pitch <= pitch_max`.
pub fn filter_dataset(manifest: &DatasetManifest, pitch_min: u8, pitch_max: u8) -> Result<DatasetManifest> {
    if pitch_min > pitch_max {
        return Err(Error::invalid(format!("empty pitch range [{pitch_min}, {pitch_max}]")));
    }
    let entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| (pitch_min..=pitch_max).contains(&e.pitch))
        .cloned()
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyDataset(format!("no entries with pitch in [{pitch_min}, {pitch_max}]")));
    }
    Ok(DatasetManifest {
        entries,
        split: manifest.split,
    })
}

/// Seeded shuffle-and-cut into `(train, test)`; each side keeps the input
/// order.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if manifest.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty manifest".into()));
    }
    let n = manifest.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).min(n);
    let mut train_idx = order[..n_train].to_vec();
    let mut test_idx = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize], split| DatasetManifest {
        entries: idx.iter().map(|&i| manifest.entries[i].clone()).collect(),
        split: Some(split),
    };
    Ok((pick(&train_idx, Split::Train), pick(&test_idx, Split::Test)))
}
