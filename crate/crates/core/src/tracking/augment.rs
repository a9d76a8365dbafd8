//! First-frame augmentation list.

use crate::config::Config;

/// How one augmented crop differs from the plain crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchSpec {
    /// Crop-center offset as a fraction of the crop side, `(x, y)`.
    pub shift: (f64, f64),
    pub flip: bool,
    pub rotation_deg: f64,
    /// Gaussian blur sigma in patch pixels; 0 disables.
    pub blur: f64,
    /// Apparent target magnification.
    pub zoom: f64,
    pub brightness: f64,
}

impl PatchSpec {
    pub fn identity() -> Self {
        PatchSpec {
            shift: (0.0, 0.0),
            flip: false,
            rotation_deg: 0.0,
            blur: 0.0,
            zoom: 1.0,
            brightness: 0.0,
        }
    }
}

/// Original, four shifts, flip, rotations, blurs, scale jitters and
/// brightness offsets, in that order. The default config gives 15.
pub fn augmentations(cfg: &Config) -> Vec<PatchSpec> {
    let id = PatchSpec::identity();
    let mut out = vec![id];
    let s = cfg.aug_shift;
    if s > 0.0 {
        for shift in [(s, 0.0), (-s, 0.0), (0.0, s), (0.0, -s)] {
            out.push(PatchSpec { shift, ..id });
        }
    }
    if cfg.aug_flip {
        out.push(PatchSpec { flip: true, ..id });
    }
    for &r in &cfg.aug_rotations {
        out.push(PatchSpec {
            rotation_deg: r,
            ..id
        });
    }
    for &b in &cfg.aug_blurs {
        out.push(PatchSpec { blur: b, ..id });
    }
    for &z in &cfg.aug_scales {
        out.push(PatchSpec { zoom: z, ..id });
    }
    for &b in &cfg.aug_brightness {
        out.push(PatchSpec {
            brightness: b,
            ..id
        });
    }
    out
}
