//! Patch feature extractors.

use std::f64::consts::PI;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::numerics::Tensor3;

/// Maps a square patch to a cell grid, `stride` pixels per cell.
/// Implementations must be deterministic.
pub trait FeatureExtractor {
    fn channels(&self) -> usize;
    fn stride(&self) -> usize;
    fn extract(&self, patch: &GrayImage) -> Result<Tensor3<f64>>;
}

const ORIENTATIONS: usize = 8;

/// Cell mean intensity plus an 8-bin signed gradient orientation
/// histogram, both averaged over the cell. Each channel is then centered
/// over the patch, so uniform background correlates to zero with any
/// filter.
#[derive(Clone, Debug, PartialEq)]
pub struct HandCrafted {
    pub stride: usize,
    /// Multiplies every channel.
    pub gain: f64,
    /// Extra factor on the orientation channels.
    pub gradient_gain: f64,
}

impl HandCrafted {
    pub fn from_config(cfg: &Config) -> Self {
        HandCrafted {
            stride: cfg.feature_stride,
            gain: cfg.feature_gain,
            gradient_gain: cfg.gradient_gain,
        }
    }
}

impl FeatureExtractor for HandCrafted {
    fn channels(&self) -> usize {
        1 + ORIENTATIONS
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn extract(&self, patch: &GrayImage) -> Result<Tensor3<f64>> {
        let (w, h, s) = (patch.width(), patch.height(), self.stride);
        if w % s != 0 || h % s != 0 {
            return Err(Error::shape(
                "HandCrafted::extract",
                format!("patch {w}x{h} is not a multiple of stride {s}"),
            ));
        }
        let (gh, gw) = (h / s, w / s);
        let mut acc = vec![0.0; gh * gw * (1 + ORIENTATIONS)];
        let px = patch.as_slice();
        let bin_width = 2.0 * PI / ORIENTATIONS as f64;
        for r in 0..h {
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            for c in 0..w {
                let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
                let gx = 0.5 * (px[r * w + cr] - px[r * w + cl]);
                let gy = 0.5 * (px[rd * w + c] - px[ru * w + c]);
                let base = ((r / s) * gw + c / s) * (1 + ORIENTATIONS);
                acc[base] += px[r * w + c] - 0.5;
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let t = gy.atan2(gx).rem_euclid(2.0 * PI) / bin_width;
                    let b0 = (t.floor() as usize) % ORIENTATIONS;
                    let frac = t - t.floor();
                    acc[base + 1 + b0] += mag * (1.0 - frac) * self.gradient_gain;
                    acc[base + 1 + (b0 + 1) % ORIENTATIONS] += mag * frac * self.gradient_gain;
                }
            }
        }
        let norm = self.gain / (s * s) as f64;
        let nc = 1 + ORIENTATIONS;
        let cells = (gh * gw) as f64;
        for k in 0..nc {
            let mean = acc.iter().skip(k).step_by(nc).sum::<f64>() / cells;
            for v in acc.iter_mut().skip(k).step_by(nc) {
                *v = (*v - mean) * norm;
            }
        }
        Tensor3::from_vec(gh, gw, 1 + ORIENTATIONS, acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extractor() -> HandCrafted {
        HandCrafted {
            stride: 4,
            gain: 1.0,
            gradient_gain: 1.0,
        }
    }

    #[test]
    fn flat_patch_is_zero() {
        let f = extractor().extract(&GrayImage::filled(16, 8, 0.75)).unwrap();
        assert_eq!(f.dims(), (2, 4, 9));
        assert!(f.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn channels_are_centered() {
        let img = GrayImage::from_fn(16, 16, |r, c| ((r * 5 + c * 11) % 7) as f64 / 7.0);
        let f = extractor().extract(&img).unwrap();
        for k in 0..9 {
            let mut sum = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    sum += f.get(i, j, k);
                }
            }
            assert!(sum.abs() < 1e-12, "channel {k}");
        }
    }

    #[test]
    fn intensity_step_shows_in_channel_zero() {
        let img = GrayImage::from_fn(8, 4, |_, c| if c < 4 { 0.2 } else { 0.6 });
        let f = extractor().extract(&img).unwrap();
        assert!((f.get(0, 0, 0) + 0.2).abs() < 1e-15);
        assert!((f.get(0, 1, 0) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn horizontal_ramp_fills_bin_zero() {
        let img = GrayImage::from_fn(8, 8, |_, c| c as f64 * 0.1);
        let f = extractor().extract(&img).unwrap();
        // every gradient points along +x, so only bin 0 varies
        assert!(f.get(0, 1, 1).abs() > 0.0);
        for k in 2..9 {
            for j in 0..2 {
                assert!(f.get(0, j, k).abs() < 1e-12, "bin {k}");
            }
        }
    }

    #[test]
    fn rejects_misaligned_patch() {
        assert!(extractor().extract(&GrayImage::filled(10, 8, 0.0)).is_err());
    }

    #[test]
    fn deterministic_and_linear_in_gain() {
        let img = GrayImage::from_fn(12, 12, |r, c| ((r * 7 + c * 3) % 5) as f64 / 5.0);
        let a = extractor().extract(&img).unwrap();
        let b = extractor().extract(&img).unwrap();
        assert_eq!(a, b);
        let mut e = extractor();
        e.gain = 3.0;
        let c = e.extract(&img).unwrap();
        for (x, y) in a.as_slice().iter().zip(c.as_slice()) {
            assert!((3.0 * x - y).abs() < 1e-12);
        }
    }
}
