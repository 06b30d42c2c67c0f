//! Moving subjects between phantoms, manifests and training cases.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry, Split, State};
use crate::phantom::Subject;
use crate::pipeline::mvol::{read_labels, read_mask, read_volume, write_mvol, MvolImage};
use crate::pipeline::{preprocess_case, MaskSource, PreprocessConfig};
use crate::training::TrainingCase;

/// Preprocesses a raw subject into a training case. With
/// `MaskSource::Provided` the subject's own global mask is used.
pub fn prepare_subject(s: &Subject, cfg: &PreprocessConfig) -> Result<TrainingCase> {
    let p = preprocess_case(&s.ct, Some(&s.labels), Some(&s.global_mask), cfg, false)
        .map_err(|e| with_subject(e, &s.id))?;
    Ok(TrainingCase {
        id: s.id.clone(),
        ct: p.ct,
        mask: p.mask,
        labels: p.labels.expect("labels were supplied"),
    })
}

fn with_subject(e: Error, id: &str) -> Error {
    match e {
        Error::EmptyMask(m) => Error::EmptyMask(format!("subject {id}: {m}")),
        Error::Contract(m) => Error::Contract(format!("subject {id}: {m}")),
        other => other,
    }
}

/// Resolves manifest-relative paths.
fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads one split of a processed manifest.
pub fn load_split(manifest_path: &Path, split: Split) -> Result<(Manifest, Vec<TrainingCase>)> {
    let m = Manifest::read(manifest_path)?;
    if m.state != State::Processed {
        return Err(Error::parse(
            "manifest",
            format!(
                "{} is not preprocessed; run `preprocess` first",
                manifest_path.display()
            ),
        ));
    }
    let dir = manifest_dir(manifest_path);
    let cases = m
        .split(split)
        .map(|e| {
            Ok(TrainingCase {
                id: e.id.clone(),
                ct: read_volume(&resolve(&dir, &e.ct))?,
                mask: read_mask(&resolve(&dir, &e.mask))?,
                labels: read_labels(&resolve(&dir, &e.labels))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((m, cases))
}

/// Applies the preprocessing chain to every subject of a manifest and writes
/// a processed manifest into `outdir`. Already processed inputs keep their
/// masks and intensities, so a second pass reproduces the first.
pub fn preprocess_manifest(
    manifest_path: &Path,
    cfg: &PreprocessConfig,
    outdir: &Path,
) -> Result<PathBuf> {
    let m = Manifest::read(manifest_path)?;
    let dir = manifest_dir(manifest_path);
    let normalized = m.state == State::Processed;
    let cfg = if normalized {
        PreprocessConfig {
            mask: MaskSource::Provided,
            ..cfg.clone()
        }
    } else {
        cfg.clone()
    };
    let mut out = Manifest::new(State::Processed, m.structures.clone());
    for e in &m.entries {
        let ct = read_volume(&resolve(&dir, &e.ct))?;
        let labels = read_labels(&resolve(&dir, &e.labels))?;
        let mask_path = resolve(&dir, &e.mask);
        let mask = if mask_path.exists() {
            Some(read_mask(&mask_path)?)
        } else {
            None
        };
        let p = preprocess_case(&ct, Some(&labels), mask.as_ref(), &cfg, normalized)
            .map_err(|err| with_subject(err, &e.id))?;
        let entry = ManifestEntry::for_subject(e.split, &e.id, e.seed);
        write_mvol(&outdir.join(&entry.ct), &MvolImage::Intensity(p.ct))?;
        write_mvol(
            &outdir.join(&entry.labels),
            &MvolImage::Label(p.labels.expect("labels supplied")),
        )?;
        write_mvol(&outdir.join(&entry.mask), &MvolImage::Binary(p.mask))?;
        out.entries.push(entry);
    }
    let path = outdir.join(crate::manifest::FILE_NAME);
    out.write(&path)?;
    Ok(path)
}
