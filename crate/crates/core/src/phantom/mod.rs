//! Deterministic synthetic subjects: structures at consistent positions
//! inside a body region, with per-subject pose, scale and intensity
//! variation.

mod spec;

use std::path::{Path, PathBuf};

pub use spec::{PhantomSpec, StructureSpec, PRESETS};

use crate::error::{Error, Result};
use crate::manifest::{Manifest, ManifestEntry, Split, State};
use crate::pipeline::mvol::{write_mvol, MvolImage};
use crate::pipeline::{BinaryMask, Geometry, Image3, LabelMap, Volume};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub seed: u64,
    /// Hounsfield units.
    pub ct: Volume,
    pub labels: LabelMap,
    pub global_mask: BinaryMask,
}

/// Per-subject random draws, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub translation_mm: [f64; 3],
    pub scale: [f64; 3],
    pub rotation_rad: f64,
    pub body_hu: f64,
    pub structure_offsets: Vec<[f64; 3]>,
    pub structure_hu: Vec<f64>,
}

impl Pose {
    fn draw(spec: &PhantomSpec, rng: &mut RngState) -> Self {
        let mut sym = |r: f64| {
            if r > 0.0 {
                rng.uniform_range(-r, r)
            } else {
                0.0
            }
        };
        let translation_mm = [0; 3].map(|_| sym(spec.translation_mm));
        let scale = [0; 3].map(|_| 1.0 + sym(spec.scale_range));
        let rotation_rad = sym(spec.rotation_deg).to_radians();
        let body_hu = spec.body_hu + sym(spec.body_hu_jitter);
        let mut structure_offsets = Vec::new();
        let mut structure_hu = Vec::new();
        for s in &spec.structures {
            let j = [0; 3].map(|_| sym(spec.structure_jitter_mm));
            structure_offsets.push(std::array::from_fn(|a| s.offset[a] + j[a]));
            structure_hu.push(s.hu_mean + sym(s.hu_jitter));
        }
        Self {
            translation_mm,
            scale,
            rotation_rad,
            body_hu,
            structure_offsets,
            structure_hu,
        }
    }

    /// The unjittered pose.
    pub fn canonical(spec: &PhantomSpec) -> Self {
        Self {
            translation_mm: [0.0; 3],
            scale: [1.0; 3],
            rotation_rad: 0.0,
            body_hu: spec.body_hu,
            structure_offsets: spec.structures.iter().map(|s| s.offset).collect(),
            structure_hu: spec.structures.iter().map(|s| s.hu_mean).collect(),
        }
    }
}

fn geometry(spec: &PhantomSpec) -> Result<Geometry> {
    Geometry::new(spec.dims, spec.spacing, [0.0; 3])
}

/// Body center in world millimetres for a pose.
pub fn body_center_mm(spec: &PhantomSpec, pose: &Pose) -> [f64; 3] {
    std::array::from_fn(|a| {
        spec.body_center[a] * spec.dims[a] as f64 * spec.spacing[a] as f64 + pose.translation_mm[a]
    })
}

/// Rasterizes labels and the body mask for a pose: a voxel center `p`
/// maps to body-frame `u = R(-θ)(p - c) / scale`, with θ acting on (y, x).
pub fn rasterize(spec: &PhantomSpec, pose: &Pose) -> Result<(LabelMap, BinaryMask)> {
    let geom = geometry(spec)?;
    let c = body_center_mm(spec, pose);
    let (sin, cos) = pose.rotation_rad.sin_cos();
    let a = spec.body_semi_axes;
    let mut labels = Image3::filled(geom, 0u8);
    let mut body = Image3::filled(geom, 0u8);
    for i in 0..geom.len() {
        let [_, h, w] = geom.dims;
        let idx = [i / (h * w), (i / w) % h, i % w];
        let p = geom.voxel_center(idx);
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        let r = [d[0], cos * d[1] + sin * d[2], -sin * d[1] + cos * d[2]];
        let u: [f64; 3] = std::array::from_fn(|k| r[k] / pose.scale[k]);
        let inside = |center: &[f64; 3], axes: &[f64; 3]| {
            (0..3)
                .map(|k| ((u[k] - center[k]) / axes[k]).powi(2))
                .sum::<f64>()
                <= 1.0
        };
        if inside(&[0.0; 3], &a) {
            body.data[i] = 1;
        }
        for (k, s) in spec.structures.iter().enumerate() {
            if inside(&pose.structure_offsets[k], &s.semi_axes) {
                labels.data[i] = k as u8 + 1;
            }
        }
    }
    if labels
        .data
        .iter()
        .zip(&body.data)
        .any(|(&l, &b)| l != 0 && b == 0)
    {
        return Err(Error::contract(format!(
            "phantom {}: a structure escapes the body",
            spec.name
        )));
    }
    Ok((labels, body))
}

/// HU volume: background outside the body, per-subject means inside, plus
/// Gaussian noise drawn in voxel order.
fn synthesize_ct(
    spec: &PhantomSpec,
    pose: &Pose,
    labels: &LabelMap,
    body: &BinaryMask,
    rng: &mut RngState,
) -> Volume {
    let mut ct = labels.map(|_| 0.0f32);
    for i in 0..ct.data.len() {
        let base = match (labels.data[i], body.data[i]) {
            (0, 0) => spec.background_hu,
            (0, _) => pose.body_hu,
            (l, _) => pose.structure_hu[l as usize - 1],
        };
        let noise = if spec.noise_sigma > 0.0 {
            spec.noise_sigma * rng.normal()
        } else {
            0.0
        };
        ct.data[i] = (base + noise) as f32;
    }
    ct
}

pub fn generate_subject_with_pose(spec: &PhantomSpec, seed: u64) -> Result<(Subject, Pose)> {
    spec.validate()?;
    let mut rng = RngState::new(seed);
    let pose = Pose::draw(spec, &mut rng);
    let (labels, global_mask) = rasterize(spec, &pose)?;
    let ct = synthesize_ct(spec, &pose, &labels, &global_mask, &mut rng);
    Ok((
        Subject {
            id: format!("seed-{seed}"),
            seed,
            ct,
            labels,
            global_mask,
        },
        pose,
    ))
}

/// One subject, fully determined by `(spec, seed)`.
pub fn generate_subject(spec: &PhantomSpec, seed: u64) -> Result<Subject> {
    generate_subject_with_pose(spec, seed).map(|(s, _)| s)
}

/// Seed of the `k`-th subject of a split; independent of split sizes.
pub fn subject_seed(master: u64, split: Split, k: usize) -> u64 {
    RngState::derive_seed(master, (split.tag() << 32) | k as u64)
}

pub fn subject_id(split: Split, k: usize) -> String {
    format!("{}-{k:03}", split.name())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: PhantomSpec,
    pub master_seed: u64,
    pub train: Vec<Subject>,
    pub val: Vec<Subject>,
    pub test: Vec<Subject>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Subject] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

pub fn generate_dataset(
    spec: &PhantomSpec,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    let make = |split: Split, n: usize| -> Result<Vec<Subject>> {
        (0..n)
            .map(|k| {
                let mut s = generate_subject(spec, subject_seed(seed, split, k))?;
                s.id = subject_id(split, k);
                Ok(s)
            })
            .collect()
    };
    Ok(Dataset {
        spec: spec.clone(),
        master_seed: seed,
        train: make(Split::Train, n_train)?,
        val: make(Split::Val, n_val)?,
        test: make(Split::Test, n_test)?,
    })
}

/// Writes `<id>_ct.mvol`, `<id>_labels.mvol`, `<id>_mask.mvol` per subject,
/// the spec as `phantom.spec`, and `manifest.txt`; returns the manifest path.
pub fn write_dataset(ds: &Dataset, outdir: &Path) -> Result<PathBuf> {
    let mut manifest = Manifest::new(State::Raw, ds.spec.structure_names());
    for split in Split::ALL {
        for s in ds.split(split) {
            let entry = ManifestEntry::for_subject(split, &s.id, s.seed);
            write_mvol(&outdir.join(&entry.ct), &MvolImage::Intensity(s.ct.clone()))?;
            write_mvol(
                &outdir.join(&entry.labels),
                &MvolImage::Label(s.labels.clone()),
            )?;
            write_mvol(
                &outdir.join(&entry.mask),
                &MvolImage::Binary(s.global_mask.clone()),
            )?;
            manifest.entries.push(entry);
        }
    }
    crate::fsutil::write_atomic(&outdir.join("phantom.spec"), ds.spec.to_text().as_bytes())?;
    let path = outdir.join(crate::manifest::FILE_NAME);
    manifest.write(&path)?;
    Ok(path)
}
