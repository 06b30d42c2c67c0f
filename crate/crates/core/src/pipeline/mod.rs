//! Volume geometry, CT preprocessing and global binary mask generation.
//!
//! Physical coordinates follow the voxel-center convention: voxel `(z, y, x)`
//! is centered at `origin + (index + 0.5) · spacing` millimetres, so `origin`
//! marks the outer corner of voxel `(0, 0, 0)`.

mod crop;
mod morphology;
pub mod mvol;
mod preprocess;
mod resample;

pub use crop::{crop_or_pad, mask_center_voxel};
pub use morphology::{
    close_ball, dilate_ball, erode_ball, fill_holes, generate_global_mask_threshold,
    largest_component, mask_from_labels,
};
pub use preprocess::{
    hu_window_normalize, preprocess_case, MaskSource, PreprocessConfig, ProcessedCase,
};
pub use resample::{resample_nearest, resample_trilinear};

use crate::diffgrid::Grid;
use crate::error::{ensure, Result};

/// HU value of air, used as the pad fill before normalization.
pub const AIR_HU: f32 = -1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// `(D, H, W)` voxel counts.
    pub dims: [usize; 3],
    /// `(sz, sy, sx)` millimetres per voxel.
    pub spacing: [f32; 3],
    /// `(z, y, x)` millimetres.
    pub origin: [f32; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], origin: [f32; 3]) -> Result<Self> {
        let g = Self {
            dims,
            spacing,
            origin,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.spacing.iter().all(|&s| s > 0.0 && s.is_finite()),
            "spacing must be positive and finite, got {:?}",
            self.spacing
        );
        ensure!(
            self.origin.iter().all(|o| o.is_finite()),
            "origin must be finite, got {:?}",
            self.origin
        );
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    /// Physical center of voxel `(z, y, x)` in millimetres.
    pub fn voxel_center(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| {
            self.origin[a] as f64 + (idx[a] as f64 + 0.5) * self.spacing[a] as f64
        })
    }

    /// Continuous voxel index of physical point `p` (voxel centers are integers).
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (p[a] - self.origin[a] as f64) / self.spacing[a] as f64 - 0.5)
    }

    pub fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.dims[a] as f64 * self.spacing[a] as f64)
    }
}

/// Voxel grid with physical geometry; `f32` for intensities, `u8` for labels
/// and binary masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Image3<T> {
    pub geom: Geometry,
    pub data: Vec<T>,
}

pub type Volume = Image3<f32>;
/// Integer labels, 0 = background and 1..=S structures.
pub type LabelMap = Image3<u8>;
/// Voxels in {0, 1}.
pub type BinaryMask = Image3<u8>;

impl<T: Copy> Image3<T> {
    pub fn new(geom: Geometry, data: Vec<T>) -> Result<Self> {
        geom.validate()?;
        ensure!(
            data.len() == geom.len(),
            "voxel count {} does not match dims {:?}",
            data.len(),
            geom.dims
        );
        Ok(Self { geom, data })
    }

    pub fn filled(geom: Geometry, value: T) -> Self {
        Self {
            data: vec![value; geom.len()],
            geom,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.geom.index(z, y, x)]
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> Image3<U> {
        Image3 {
            geom: self.geom,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Iterator over `([z, y, x], value)`.
    pub fn indexed(&self) -> impl Iterator<Item = ([usize; 3], T)> + '_ {
        let [_, h, w] = self.geom.dims;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| ([i / (h * w), (i / w) % h, i % w], v))
    }
}

impl Image3<u8> {
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v <= 1)
    }

    /// Binary mask of voxels carrying `label`.
    pub fn select(&self, label: u8) -> BinaryMask {
        self.map(|v| (v == label) as u8)
    }
}

fn same_geometry(a: &Geometry, b: &Geometry) -> bool {
    a.dims == b.dims && a.spacing == b.spacing && a.origin == b.origin
}

/// `1×1×D×H×W` grid of a volume's values.
pub fn volume_to_grid(v: &Volume) -> Grid {
    let [d, h, w] = v.geom.dims;
    Grid::from_vec(&[1, 1, d, h, w], v.data.clone()).expect("volume length matches dims")
}

/// `1×1×D×H×W` grid of a mask as 0.0 / 1.0.
pub fn mask_to_grid(m: &BinaryMask) -> Grid {
    let [d, h, w] = m.geom.dims;
    Grid::from_vec(
        &[1, 1, d, h, w],
        m.data.iter().map(|&v| (v != 0) as u8 as f32).collect(),
    )
    .expect("mask length matches dims")
}

/// Two-channel network input: normalized CT in channel 0, mask in channel 1.
pub fn stack_channels(ct: &Volume, mask: &BinaryMask) -> Result<Grid> {
    ensure!(
        same_geometry(&ct.geom, &mask.geom),
        "stack_channels needs identical geometry: {:?} vs {:?}",
        ct.geom,
        mask.geom
    );
    ensure!(mask.is_binary(), "stack_channels mask must be binary");
    let [d, h, w] = ct.geom.dims;
    let mut data = Vec::with_capacity(2 * ct.data.len());
    data.extend_from_slice(&ct.data);
    data.extend(mask.data.iter().map(|&v| v as f32));
    Grid::from_vec(&[1, 2, d, h, w], data)
}

/// One binary target channel per structure label `1..=structures`.
pub fn labels_to_targets(labels: &LabelMap, structures: usize) -> Result<Grid> {
    ensure!(
        labels.data.iter().all(|&v| (v as usize) <= structures),
        "label map holds values beyond {} structures",
        structures
    );
    let [d, h, w] = labels.geom.dims;
    let vox = labels.data.len();
    let mut data = vec![0.0f32; structures * vox];
    for (i, &l) in labels.data.iter().enumerate() {
        if l > 0 {
            data[(l as usize - 1) * vox + i] = 1.0;
        }
    }
    Grid::from_vec(&[1, structures, d, h, w], data)
}
