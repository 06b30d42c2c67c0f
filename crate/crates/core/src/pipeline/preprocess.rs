use super::{
    crop_or_pad, generate_global_mask_threshold, mask_center_voxel, mask_from_labels,
    resample_nearest, resample_trilinear, same_geometry, BinaryMask, LabelMap, Volume, AIR_HU,
};
use crate::error::{ensure, Error, Result};

/// Linear map of the HU window `[lo, hi]` onto `[0, 1]`, clamped outside.
pub fn hu_window_normalize(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    ensure!(lo < hi, "HU window needs lo < hi, got [{lo}, {hi}]");
    let (lo, width) = (lo as f64, hi as f64 - lo as f64);
    Ok(v.map(|x| ((x as f64 - lo) / width).clamp(0.0, 1.0) as f32))
}

/// Where the global binary mask comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskSource {
    /// Threshold the resampled HU volume.
    Threshold {
        threshold_hu: f32,
        closing_radius: usize,
    },
    /// Dilated union of the structure labels.
    Labels { dilation_radius: usize },
    /// Use the mask supplied with the case.
    Provided,
}

impl Default for MaskSource {
    fn default() -> Self {
        MaskSource::Threshold {
            threshold_hu: -300.0,
            closing_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub target_spacing: [f64; 3],
    pub size: [usize; 3],
    pub window: (f32, f32),
    pub mask: MaskSource,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_spacing: [1.5; 3],
            size: [128; 3],
            window: (-200.0, 200.0),
            mask: MaskSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedCase {
    /// Intensities in `[0, 1]`.
    pub ct: Volume,
    pub labels: Option<LabelMap>,
    pub mask: BinaryMask,
}

/// Resample, build the global mask, crop around the mask's center of mass,
/// then normalize. With `normalized = true` the CT is already in `[0, 1]`:
/// padding uses 0 and the window step is skipped, which makes the chain
/// idempotent on its own output (together with `MaskSource::Provided`).
pub fn preprocess_case(
    ct: &Volume,
    labels: Option<&LabelMap>,
    mask: Option<&BinaryMask>,
    cfg: &PreprocessConfig,
    normalized: bool,
) -> Result<ProcessedCase> {
    for other in labels
        .map(|l| &l.geom)
        .into_iter()
        .chain(mask.map(|m| &m.geom))
    {
        ensure!(
            same_geometry(&ct.geom, other),
            "labels/mask geometry {:?} differs from CT {:?}",
            other,
            ct.geom
        );
    }
    let ct_r = resample_trilinear(ct, cfg.target_spacing)?;
    let labels_r = labels
        .map(|l| resample_nearest(l, cfg.target_spacing))
        .transpose()?;
    let mask_r = match cfg.mask {
        MaskSource::Threshold {
            threshold_hu,
            closing_radius,
        } => {
            ensure!(
                !normalized,
                "threshold masks need HU intensities, not normalized input"
            );
            generate_global_mask_threshold(&ct_r, threshold_hu, closing_radius)?
        }
        MaskSource::Labels { dilation_radius } => {
            let l = labels_r
                .as_ref()
                .ok_or_else(|| Error::contract("label-derived mask requested without labels"))?;
            mask_from_labels(l, dilation_radius)?
        }
        MaskSource::Provided => {
            let m =
                mask.ok_or_else(|| Error::contract("provided mask requested but none given"))?;
            ensure!(m.is_binary(), "provided mask is not binary");
            resample_nearest(m, cfg.target_spacing)?
        }
    };
    let center = mask_center_voxel(&mask_r)
        .ok_or_else(|| Error::EmptyMask("global mask is empty".into()))?;
    let fill = if normalized { 0.0 } else { AIR_HU };
    let ct_c = crop_or_pad(&ct_r, cfg.size, center, fill)?;
    let labels_c = labels_r
        .map(|l| crop_or_pad(&l, cfg.size, center, 0))
        .transpose()?;
    let mut mask_c = crop_or_pad(&mask_r, cfg.size, center, 0)?;
    // Keep geometry bit-identical across the three outputs.
    mask_c.geom = ct_c.geom;
    let labels_c = labels_c.map(|mut l| {
        l.geom = ct_c.geom;
        l
    });
    let ct_n = if normalized {
        ct_c
    } else {
        hu_window_normalize(&ct_c, cfg.window.0, cfg.window.1)?
    };
    Ok(ProcessedCase {
        ct: ct_n,
        labels: labels_c,
        mask: mask_c,
    })
}
