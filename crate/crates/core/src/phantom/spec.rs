use std::fmt::Write as _;

use crate::error::{ensure, Error, Result};
use crate::kv::{self, fmt_f64};

const WHAT: &str = "phantom spec";

#[derive(Debug, Clone, PartialEq)]
pub struct StructureSpec {
    pub name: String,
    /// `(z, y, x)` mm.
    pub semi_axes: [f64; 3],
    /// `(z, y, x)` mm from the body center, in the body frame.
    pub offset: [f64; 3],
    pub hu_mean: f64,
    /// Half-width of the uniform per-subject HU shift.
    pub hu_jitter: f64,
}

/// Synthetic subject family: a body ellipsoid holding `S` structure
/// ellipsoids at fixed offsets, with per-subject rigid, scale and
/// intensity variation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub name: String,
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
    pub body_semi_axes: [f64; 3],
    /// Body center as a fraction of the grid extent per axis.
    pub body_center: [f64; 3],
    pub body_hu: f64,
    pub body_hu_jitter: f64,
    pub background_hu: f64,
    pub noise_sigma: f64,
    /// Half-width of the uniform body translation per axis (mm).
    pub translation_mm: f64,
    /// Half-width of the uniform per-axis scale factor around 1.
    pub scale_range: f64,
    /// Half-width of the uniform rotation about the z axis (degrees).
    pub rotation_deg: f64,
    /// Half-width of the uniform per-structure offset jitter (mm).
    pub structure_jitter_mm: f64,
    /// Painted in order; later structures overwrite earlier ones.
    pub structures: Vec<StructureSpec>,
}

fn structure(
    name: &str,
    semi_axes: [f64; 3],
    offset: [f64; 3],
    hu_mean: f64,
    hu_jitter: f64,
) -> StructureSpec {
    StructureSpec {
        name: name.into(),
        semi_axes,
        offset,
        hu_mean,
        hu_jitter,
    }
}

pub const PRESETS: [&str; 2] = ["brain", "heart"];

impl PhantomSpec {
    /// Head-like phantom: brainstem and two eyes inside an air-surrounded head.
    pub fn brain() -> Self {
        Self {
            name: "brain".into(),
            dims: [48; 3],
            spacing: [1.5; 3],
            body_semi_axes: [19.0, 21.0, 18.0],
            body_center: [0.5; 3],
            body_hu: 30.0,
            body_hu_jitter: 5.0,
            background_hu: -1000.0,
            noise_sigma: 20.0,
            translation_mm: 3.0,
            scale_range: 0.08,
            rotation_deg: 10.0,
            structure_jitter_mm: 0.75,
            structures: vec![
                structure("stem", [9.0, 4.5, 4.5], [-4.0, 5.0, 0.0], 45.0, 5.0),
                structure("left_eye", [4.5, 4.5, 4.5], [2.0, -12.0, 7.0], 10.0, 5.0),
                structure("right_eye", [4.5, 4.5, 4.5], [2.0, -12.0, -7.0], 10.0, 5.0),
            ],
        }
    }

    /// Seven cardiac substructures inside a whole-heart region surrounded
    /// by soft tissue; the myocardium becomes a shell around the LV cavity.
    pub fn heart() -> Self {
        Self {
            name: "heart".into(),
            dims: [48; 3],
            spacing: [1.5; 3],
            body_semi_axes: [21.0, 22.0, 21.0],
            body_center: [0.5; 3],
            body_hu: 60.0,
            body_hu_jitter: 10.0,
            background_hu: 20.0,
            noise_sigma: 25.0,
            translation_mm: 4.0,
            scale_range: 0.08,
            rotation_deg: 12.0,
            structure_jitter_mm: 0.75,
            structures: vec![
                structure("myo", [10.0, 9.0, 9.0], [-4.0, 5.0, 5.0], 110.0, 10.0),
                structure("lv", [7.0, 6.0, 6.0], [-4.0, 5.0, 5.0], 320.0, 30.0),
                structure("rv", [8.0, 4.5, 6.0], [-4.0, -8.0, 1.0], 300.0, 30.0),
                structure("la", [4.5, 5.0, 5.0], [8.0, 6.0, 3.0], 300.0, 30.0),
                structure("ra", [5.0, 4.5, 4.5], [6.0, -6.0, -8.0], 290.0, 30.0),
                structure("ao", [6.0, 3.0, 3.0], [12.0, -1.0, -2.0], 330.0, 30.0),
                structure("pa", [3.0, 3.0, 5.0], [-12.0, -5.0, -5.0], 310.0, 30.0),
            ],
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "brain" => Some(Self::brain()),
            "heart" => Some(Self::heart()),
            _ => None,
        }
    }

    pub fn num_structures(&self) -> usize {
        self.structures.len()
    }

    pub fn structure_names(&self) -> Vec<String> {
        self.structures.iter().map(|s| s.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.structures.is_empty(),
            "phantom needs at least one structure"
        );
        ensure!(
            self.structures.len() < 255,
            "too many structures ({})",
            self.structures.len()
        );
        ensure!(
            valid_name(&self.name),
            "phantom name {:?} must be [A-Za-z0-9_-]+",
            self.name
        );
        ensure!(
            self.dims.iter().all(|&d| d > 0),
            "grid dims must be positive"
        );
        ensure!(
            self.spacing.iter().all(|&s| s > 0.0 && s.is_finite()),
            "spacing must be positive"
        );
        ensure!(
            self.body_semi_axes
                .iter()
                .all(|&a| a > 0.0 && a.is_finite()),
            "body semi-axes must be positive"
        );
        let scalars = [
            self.body_hu,
            self.body_hu_jitter,
            self.background_hu,
            self.noise_sigma,
            self.translation_mm,
            self.scale_range,
            self.rotation_deg,
            self.structure_jitter_mm,
        ];
        ensure!(
            scalars
                .iter()
                .chain(&self.body_center)
                .all(|x| x.is_finite()),
            "phantom parameters must be finite"
        );
        let ranges = [
            self.body_hu_jitter,
            self.noise_sigma,
            self.translation_mm,
            self.scale_range,
            self.rotation_deg,
            self.structure_jitter_mm,
        ];
        ensure!(
            ranges.iter().all(|&r| r >= 0.0),
            "jitter ranges must be non-negative"
        );
        ensure!(self.scale_range < 1.0, "scale range must stay below 1");
        let mut names = std::collections::HashSet::new();
        for s in &self.structures {
            ensure!(
                valid_name(&s.name),
                "structure name {:?} must be [A-Za-z0-9_-]+",
                s.name
            );
            ensure!(
                names.insert(&s.name),
                "duplicate structure name {:?}",
                s.name
            );
            ensure!(
                s.semi_axes.iter().all(|&a| a > 0.0 && a.is_finite()),
                "structure {} semi-axes must be positive",
                s.name
            );
            ensure!(
                s.offset.iter().all(|o| o.is_finite())
                    && s.hu_mean.is_finite()
                    && s.hu_jitter.is_finite(),
                "structure {} parameters must be finite",
                s.name
            );
            ensure!(
                s.hu_jitter >= 0.0,
                "structure {} HU jitter must be non-negative",
                s.name
            );
            ensure!(
                max_body_radius(self, s) < 1.0,
                "structure {} can leave the body under structure jitter {} mm",
                s.name,
                self.structure_jitter_mm
            );
        }
        Ok(())
    }

    /// Canonical text form; `parse(to_text())` returns an equal spec.
    pub fn to_text(&self) -> String {
        let f3 = |v: &[f64; 3]| v.map(fmt_f64).join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(
            s,
            "dims = {} {} {}",
            self.dims[0], self.dims[1], self.dims[2]
        );
        let _ = writeln!(
            s,
            "spacing = {}",
            self.spacing.map(|x| format!("{x:?}")).join(" ")
        );
        let _ = writeln!(s, "body.semi_axes = {}", f3(&self.body_semi_axes));
        let _ = writeln!(s, "body.center = {}", f3(&self.body_center));
        let _ = writeln!(s, "body.hu = {}", fmt_f64(self.body_hu));
        let _ = writeln!(s, "body.hu_jitter = {}", fmt_f64(self.body_hu_jitter));
        let _ = writeln!(s, "background.hu = {}", fmt_f64(self.background_hu));
        let _ = writeln!(s, "noise.sigma = {}", fmt_f64(self.noise_sigma));
        let _ = writeln!(
            s,
            "jitter.translation_mm = {}",
            fmt_f64(self.translation_mm)
        );
        let _ = writeln!(s, "jitter.scale = {}", fmt_f64(self.scale_range));
        let _ = writeln!(s, "jitter.rotation_deg = {}", fmt_f64(self.rotation_deg));
        let _ = writeln!(
            s,
            "jitter.structure_mm = {}",
            fmt_f64(self.structure_jitter_mm)
        );
        for st in &self.structures {
            let _ = writeln!(
                s,
                "structure = {} | {} | {} | {} | {}",
                st.name,
                f3(&st.semi_axes),
                f3(&st.offset),
                fmt_f64(st.hu_mean),
                fmt_f64(st.hu_jitter)
            );
        }
        s
    }

    /// Parses a spec file. Keys left out keep the brain preset's values,
    /// except `structure`: when any is given, the list is replaced.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text, WHAT)?;
        kv::reject_duplicates(&entries, WHAT, &["structure"])?;
        let mut spec = Self::brain();
        let mut structures = Vec::new();
        for e in &entries {
            match e.key.as_str() {
                "name" => spec.name = e.value.clone(),
                "dims" => spec.dims = e.triple(WHAT)?,
                "spacing" => spec.spacing = e.triple(WHAT)?,
                "body.semi_axes" => spec.body_semi_axes = e.triple(WHAT)?,
                "body.center" => spec.body_center = e.triple(WHAT)?,
                "body.hu" => spec.body_hu = e.num(WHAT)?,
                "body.hu_jitter" => spec.body_hu_jitter = e.num(WHAT)?,
                "background.hu" => spec.background_hu = e.num(WHAT)?,
                "noise.sigma" => spec.noise_sigma = e.num(WHAT)?,
                "jitter.translation_mm" => spec.translation_mm = e.num(WHAT)?,
                "jitter.scale" => spec.scale_range = e.num(WHAT)?,
                "jitter.rotation_deg" => spec.rotation_deg = e.num(WHAT)?,
                "jitter.structure_mm" => spec.structure_jitter_mm = e.num(WHAT)?,
                "structure" => structures.push(parse_structure(e)?),
                _ => return Err(e.err(WHAT, "unknown key")),
            }
        }
        if !structures.is_empty() {
            spec.structures = structures;
        }
        spec.validate()
            .map_err(|err| Error::parse(WHAT, err.to_string()))?;
        Ok(spec)
    }
}

fn parse_structure(e: &kv::Entry) -> Result<StructureSpec> {
    let fields: Vec<&str> = e.value.split('|').map(str::trim).collect();
    let [name, axes, offset, hu, jit] = fields[..] else {
        return Err(e.err(WHAT, "expected name | semi-axes | offset | hu | hu_jitter"));
    };
    let sub = |v: &str| kv::Entry {
        key: e.key.clone(),
        value: v.to_string(),
        line: e.line,
    };
    Ok(StructureSpec {
        name: name.to_string(),
        semi_axes: sub(axes).triple(WHAT)?,
        offset: sub(offset).triple(WHAT)?,
        hu_mean: sub(hu).num(WHAT)?,
        hu_jitter: sub(jit).num(WHAT)?,
    })
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Largest normalized body radius `Σ((|o + b·n| + J) / a)²` over the
/// structure surface, with every offset component pushed outward by the
/// structure jitter `J`. Scale and rotation act on the body frame as a
/// whole, so they cannot move a structure relative to the body. The surface
/// is sampled on a fine angular grid and the result padded by the worst
/// sampling gap.
fn max_body_radius(spec: &PhantomSpec, s: &StructureSpec) -> f64 {
    const STEPS: usize = 180;
    let a = spec.body_semi_axes;
    let j = spec.structure_jitter_mm;
    let mut worst: f64 = 0.0;
    for i in 0..=STEPS {
        let theta = std::f64::consts::PI * i as f64 / STEPS as f64;
        for k in 0..2 * STEPS {
            let phi = std::f64::consts::PI * k as f64 / STEPS as f64;
            let n = [
                theta.cos(),
                theta.sin() * phi.sin(),
                theta.sin() * phi.cos(),
            ];
            let r: f64 = (0..3)
                .map(|ax| ((s.offset[ax] + s.semi_axes[ax] * n[ax]).abs() + j) / a[ax])
                .map(|t| t * t)
                .sum();
            worst = worst.max(r);
        }
    }
    // Neighboring samples are at most π/STEPS apart on the unit sphere.
    let gap = std::f64::consts::PI / STEPS as f64 * s.semi_axes.iter().cloned().fold(0.0, f64::max);
    let amin = a.iter().cloned().fold(f64::INFINITY, f64::min);
    let r = worst.sqrt() + gap / amin;
    r * r
}
